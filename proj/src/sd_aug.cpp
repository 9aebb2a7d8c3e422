// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/sd_aug.hpp"

namespace ilora {

namespace {

void check_pipeline(const UNet& unet, const NoiseSchedule& schedule) {
  if (!unet.extended()) throw ConfigError("multi-step pipeline needs a channel-extended unet");
  if (schedule.parameterization != Parameterization::v || !schedule.zero_terminal_snr) {
    throw ConfigError("multi-step pipeline needs a zero-SNR v-prediction schedule");
  }
}

ag::Matrix gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TrainLog train_lora_multistep(UNet& unet, AdapterSet& adapters, const Dataset& dataset, const TrainConfig& cfg,
                              const NoiseSchedule& schedule, double null_probability) {
  cfg.validate();
  check_pipeline(unet, schedule);
  if (!unet.has_slots() || adapters.backbone_fingerprint != unet.fingerprint()) {
    throw ConfigError("multi-step training needs adapters attached to this unet");
  }
  if (adapters.kind != cfg.kind) throw ConfigError("adapter kind does not match the train config");
  if (null_probability < 0 || null_probability > 1) throw ConfigError("null probability outside [0, 1]");

  BatchSampler sampler(budget_subset(dataset, cfg.budget, cfg.seed), cfg.batch_size, mix_seed(cfg.seed, 11));
  Rng rng(mix_seed(cfg.seed, 31));
  ag::Adam opt(adapter_parameters(unet), {.lr = static_cast<float>(cfg.learning_rate)});
  StepLogger logger(cfg.log_every);
  logger.log().samples_per_step = cfg.batch_size;
  const int px = unet.resolution() * unet.resolution();
  for (int step = 1; step <= cfg.max_steps; ++step) {
    const auto idx = sampler.next();
    const auto rgb = image_batch(dataset, idx);
    const ag::Matrix y = target_batch(dataset, idx, cfg.kind);
    const ag::Matrix eps = gaussian(3, y.cols(), rng);
    ag::Matrix xt(3, y.cols()), v(3, y.cols());
    std::vector<int> ts(idx.size());
    std::vector<TaskToken> tokens(idx.size());
    int nulls = 0;
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const int t = rng.uniform_int(1, schedule.T);
      ts[b] = t;
      const bool drop = rng.bernoulli(null_probability);
      nulls += drop ? 1 : 0;
      tokens[b] = drop ? TaskToken::null : task_token(cfg.kind);
      const auto cols = Eigen::seqN(static_cast<Eigen::Index>(b) * px, px);
      xt(Eigen::all, cols) = add_noise(y(Eigen::all, cols), eps(Eigen::all, cols), t, schedule);
      v(Eigen::all, cols) = v_target(y(Eigen::all, cols), eps(Eigen::all, cols), t, schedule);
    }
    const auto pred = unet.forward(ag::Tensor::constant(xt, rgb.geom()), ts, tokens, &rgb);
    auto loss = distance_loss(DistanceMetric::mse, pred, v, mask_batch(dataset, idx));
    const auto bytes = loss.backward();
    logger.step(loss.value()(0, 0), bytes, opt.state_bytes());
    logger.log().null_samples.push_back(nulls);
    opt.step();
    opt.zero_grad();
  }
  sync_from(unet, adapters);
  return logger.finish();
}

ag::Matrix multi_step_encoded(const UNet& unet, const ag::Tensor& rgb, IntrinsicKind kind,
                              const NoiseSchedule& schedule, const CfgParams& cfg, std::uint64_t seed,
                              bool zero_condition) {
  check_pipeline(unet, schedule);
  ag::NoGradGuard guard;
  const auto b = static_cast<std::size_t>(rgb.geom().batch);
  const auto condition =
      zero_condition ? ag::Tensor::constant(ag::Matrix::Zero(rgb.rows(), rgb.cols()), rgb.geom()) : rgb;
  const std::vector<TaskToken> cond_tokens(b, task_token(kind)), null_tokens(b, TaskToken::null);
  const ModelFn model = [&](const ag::Matrix& x, int t, bool null) {
    return unet
        .forward(ag::Tensor::constant(x, rgb.geom()), std::vector<int>(b, t), null ? null_tokens : cond_tokens,
                 &condition)
        .value();
  };
  Rng rng(seed);
  const auto x0 = ddim_sample(schedule, model, gaussian(3, rgb.cols(), rng), cfg);
  return x0.cwiseMax(-1.0f).cwiseMin(1.0f);
}

IntrinsicMap multi_step_sample(const UNet& unet, const Image& image, IntrinsicKind kind, const CodecParams& codec,
                               const NoiseSchedule& schedule, const CfgParams& cfg, std::uint64_t seed) {
  const auto x = ag::Tensor::constant(image.data, ag::Geom{1, image.height, image.width});
  return decode_batch(multi_step_encoded(unet, x, kind, schedule, cfg, seed), kind, image.height, codec).front();
}

DensePredictor multi_step_predictor(const UNet& unet, IntrinsicKind kind, const NoiseSchedule& schedule,
                                    const CfgParams& cfg, std::uint64_t seed, bool zero_condition) {
  return [&unet, kind, schedule, cfg, seed, zero_condition](const ag::Tensor& rgb) {
    return multi_step_encoded(unet, rgb, kind, schedule, cfg, seed, zero_condition);
  };
}

}  // namespace ilora
