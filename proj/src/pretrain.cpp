// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace ilora {

nlohmann::json PretrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"seed", seed},
          {"checkpoint_steps", checkpoint_steps},
          {"parameterization", std::string(to_string(parameterization))},
          {"log_every", log_every},
          {"divergence_window", divergence_window}};
}

PretrainConfig PretrainConfig::from_json(const nlohmann::json& j) {
  PretrainConfig c;
  c.steps = j.value("steps", c.steps);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_steps = j.value("checkpoint_steps", c.checkpoint_steps);
  c.parameterization = parse_parameterization(j.value("parameterization", std::string("v")));
  c.log_every = j.value("log_every", c.log_every);
  c.divergence_window = j.value("divergence_window", c.divergence_window);
  return c;
}

namespace {

void check_config(const PretrainConfig& cfg, const Dataset& dataset, int min_images) {
  if (cfg.steps < 1) throw ConfigError("pretrain: steps must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("pretrain: batch_size must be >= 1");
  if (!(cfg.learning_rate > 0)) throw ConfigError("pretrain: learning_rate must be > 0");
  for (int s : cfg.checkpoint_steps) {
    if (s < 1 || s > cfg.steps) throw ConfigError("pretrain: checkpoint step " + std::to_string(s) + " out of range");
  }
  if (dataset.manifest.splits.train < min_images) {
    throw ConfigError("pretrain: needs >= " + std::to_string(min_images) + " train images, dataset has " +
                      std::to_string(dataset.manifest.splits.train));
  }
}

class Checkpoints {
 public:
  Checkpoints(const PretrainConfig& cfg, const CheckpointFn& fn)
      : steps_(cfg.checkpoint_steps.begin(), cfg.checkpoint_steps.end()), last_(cfg.steps), fn_(fn) {}
  void after_step(int step, const Backbone& b) {
    if (fn_ && (steps_.count(step) != 0 || step == last_)) fn_(step, b);
  }

 private:
  std::set<int> steps_;
  int last_;
  const CheckpointFn& fn_;
};

ag::Matrix standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

PretrainReport pretrain_diffusion(UNet& unet, const Dataset& dataset, const PretrainConfig& cfg,
                                  const CheckpointFn& on_checkpoint) {
  check_config(cfg, dataset, kMinPretrainImages);
  if (dataset.manifest.resolution != unet.resolution()) throw ConfigError("pretrain: resolution mismatch");
  const auto schedule = default_schedule(cfg.parameterization);
  unet.set_trainable(true);
  ag::Adam opt(unet.trainable_parameters(), {.lr = static_cast<float>(cfg.learning_rate)});
  BatchSampler sampler(dataset.split_indices("train"), cfg.batch_size, mix_seed(cfg.seed, 1));
  Rng rng(mix_seed(cfg.seed, 2));
  StepLogger logger(cfg.log_every);
  Checkpoints checkpoints(cfg, on_checkpoint);
  const std::vector<TaskToken> tokens(static_cast<std::size_t>(cfg.batch_size), TaskToken::image);
  const int px = unet.resolution() * unet.resolution();

  for (int step = 1; step <= cfg.steps; ++step) {
    const auto idx = sampler.next();
    const auto x0 = image_batch(dataset, idx);
    const ag::Matrix eps = standard_normal(3, x0.cols(), rng);
    std::vector<int> ts(idx.size());
    ag::Matrix xt(3, x0.cols()), target(3, x0.cols());
    for (std::size_t b = 0; b < idx.size(); ++b) {
      const int t = rng.uniform_int(1, schedule.T);
      ts[b] = t;
      const auto cols = Eigen::seqN(static_cast<Eigen::Index>(b) * px, px);
      xt(Eigen::all, cols) = add_noise(x0.value()(Eigen::all, cols), eps(Eigen::all, cols), t, schedule);
      target(Eigen::all, cols) = cfg.parameterization == Parameterization::v
                                     ? v_target(x0.value()(Eigen::all, cols), eps(Eigen::all, cols), t, schedule)
                                     : ag::Matrix(eps(Eigen::all, cols));
    }
    auto loss = ag::mse(unet.forward(ag::Tensor::constant(xt, x0.geom()), ts, tokens), target);
    const auto bytes = loss.backward();
    opt.step();
    opt.zero_grad();
    logger.step(loss.value()(0, 0), bytes, opt.state_bytes());
    checkpoints.after_step(step, unet);
  }
  unet.set_trainable(false);
  return {logger.finish(), {}};
}

PretrainReport pretrain_gan(StyleGenerator& generator, const Dataset& dataset, const PretrainConfig& cfg,
                            const CheckpointFn& on_checkpoint) {
  check_config(cfg, dataset, 200);
  if (dataset.manifest.resolution != generator.resolution()) throw ConfigError("pretrain: resolution mismatch");
  Discriminator disc(generator.resolution(), mix_seed(cfg.seed, 3));
  generator.set_trainable(true);
  disc.set_trainable(true);
  const ag::AdamOptions adam{.lr = static_cast<float>(cfg.learning_rate), .beta1 = 0.0f, .beta2 = 0.99f};
  ag::Adam opt_g(generator.trainable_parameters(), adam);
  ag::Adam opt_d(disc.trainable_parameters(), adam);
  BatchSampler sampler(dataset.split_indices("train"), cfg.batch_size, mix_seed(cfg.seed, 1));
  Rng rng(mix_seed(cfg.seed, 2));
  StepLogger logger(cfg.log_every);
  Checkpoints checkpoints(cfg, on_checkpoint);
  int lost_steps = 0;

  for (int step = 1; step <= cfg.steps; ++step) {
    // Discriminator: softplus(-D(x)) + softplus(D(G(z))).
    const auto real = image_batch(dataset, sampler.next());
    const auto z = ag::Tensor::constant(generator.sample_z(cfg.batch_size, rng));
    const auto fake = generator.forward(z);
    auto d_loss = ag::add(ag::mean(ag::softplus(ag::scale(disc.forward(real), -1.0f))),
                          ag::mean(ag::softplus(disc.forward(fake.detach()))));
    auto bytes = d_loss.backward();
    opt_d.step();
    opt_d.zero_grad();
    opt_g.zero_grad();

    // Generator: softplus(-D(G(z))).
    auto g_loss = ag::mean(ag::softplus(ag::scale(disc.forward(fake), -1.0f)));
    bytes = std::max(bytes, g_loss.backward());
    opt_g.step();
    opt_g.zero_grad();
    opt_d.zero_grad();

    const double dl = d_loss.value()(0, 0), gl = g_loss.value()(0, 0);
    logger.step(dl + gl, bytes, opt_g.state_bytes() + opt_d.state_bytes());
    lost_steps = (dl < 1e-3 && gl > 10.0) ? lost_steps + 1 : 0;
    if (lost_steps >= cfg.divergence_window) {
      throw DivergenceError("gan training diverged at step " + std::to_string(step) +
                            ": discriminator loss -> 0 and generator loss -> inf for " +
                            std::to_string(cfg.divergence_window) + " steps");
    }
    checkpoints.after_step(step, generator);
  }
  generator.set_trainable(false);
  return {logger.finish(), {}};
}

PretrainReport pretrain_vq(VQAutoencoder& vq, const Dataset& dataset, const PretrainConfig& cfg,
                           const CheckpointFn& on_checkpoint) {
  check_config(cfg, dataset, 200);
  if (dataset.manifest.resolution != vq.resolution()) throw ConfigError("pretrain: resolution mismatch");
  BatchSampler sampler(dataset.split_indices("train"), cfg.batch_size, mix_seed(cfg.seed, 1));
  Rng rng(mix_seed(cfg.seed, 2));
  {
    // Data-dependent codebook: random encoder outputs from a few batches.
    ag::NoGradGuard guard;
    const int k = vq.config().codebook_size;
    std::vector<int> idx;
    while (static_cast<int>(idx.size()) * vq.grid() * vq.grid() < k) {
      for (int i : sampler.next()) idx.push_back(i);
    }
    const auto z = vq.encode(image_batch(dataset, idx)).value();
    std::vector<Eigen::Index> cols(static_cast<std::size_t>(z.cols()));
    std::iota(cols.begin(), cols.end(), Eigen::Index{0});
    std::shuffle(cols.begin(), cols.end(), rng.engine());
    ag::Matrix codes(z.rows(), k);
    for (int j = 0; j < k; ++j) codes.col(j) = z.col(cols[static_cast<std::size_t>(j)]);
    vq.set_codebook(codes);
  }
  vq.set_trainable(true);
  ag::Adam opt(vq.trainable_parameters(), {.lr = static_cast<float>(cfg.learning_rate)});
  StepLogger logger(cfg.log_every);
  Checkpoints checkpoints(cfg, on_checkpoint);

  for (int step = 1; step <= cfg.steps; ++step) {
    const auto x = image_batch(dataset, sampler.next());
    const auto z = vq.encode(x);
    const auto q = vq.quantize(z);
    const auto recon = ag::mse(vq.decode(q.straight_through), x.value());
    const auto codebook = ag::mean(ag::square(ag::sub(q.codes, z.detach())));
    const auto commit = ag::mean(ag::square(ag::sub(z, q.codes.detach())));
    auto loss = ag::add(ag::add(recon, codebook), ag::scale(commit, 0.25f));
    const auto bytes = loss.backward();
    opt.step();
    opt.zero_grad();
    logger.step(loss.value()(0, 0), bytes, opt.state_bytes());
    checkpoints.after_step(step, vq);
  }
  vq.set_trainable(false);

  PretrainReport report{logger.finish(), {}};
  ag::NoGradGuard guard;
  const auto val = dataset.split_indices("val");
  const auto x = image_batch(dataset, val);
  const auto indices = vq.encode_indices(x);
  const auto recon = vq.decode_indices(indices, static_cast<int>(val.size())).value();
  report.val_psnr = psnr(recon, x.value());
  // Mean-image predictor: per-pixel mean of the train split.
  const auto train = image_batch(dataset, dataset.split_indices("train")).value();
  const int px = vq.resolution() * vq.resolution();
  ag::Matrix mean_img = ag::Matrix::Zero(3, px);
  for (int b = 0; b < dataset.manifest.splits.train; ++b) mean_img += train.middleCols(Eigen::Index(b) * px, px);
  mean_img /= float(dataset.manifest.splits.train);
  report.mean_image_psnr = psnr(mean_img.replicate(1, static_cast<Eigen::Index>(val.size())), x.value());
  const std::set<int> used(indices.begin(), indices.end());
  report.dead_codes = vq.config().codebook_size - static_cast<int>(used.size());
  if (report.dead_codes * 10 >= vq.config().codebook_size * 9) {
    report.warnings.push_back("codebook collapse: " + std::to_string(report.dead_codes) + " of " +
                              std::to_string(vq.config().codebook_size) + " codes unused on the val split");
  }
  return report;
}

std::vector<Image> split_images(const ag::Matrix& batch, int resolution) {
  const int px = resolution * resolution;
  std::vector<Image> out;
  for (Eigen::Index c = 0; c + px <= batch.cols(); c += px) {
    Image img;
    img.height = img.width = resolution;
    img.data = batch.middleCols(c, px);
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<Image> dataset_images(const Dataset& dataset, const std::vector<int>& indices) {
  std::vector<Image> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(dataset.samples.at(static_cast<std::size_t>(i)).rgb);
  return out;
}

std::vector<Image> generate_images(const UNet& unet, const NoiseSchedule& schedule, int n, int steps,
                                   std::uint64_t seed) {
  ag::NoGradGuard guard;
  Rng rng(seed);
  const int r = unet.resolution();
  std::vector<Image> out;
  for (int begin = 0; begin < n; begin += 16) {
    const int b = std::min(16, n - begin);
    const std::vector<TaskToken> tokens(static_cast<std::size_t>(b), TaskToken::image);
    const ag::Geom geom{b, r, r};
    const ModelFn model = [&](const ag::Matrix& x, int t, bool) {
      return unet.forward(ag::Tensor::constant(x, geom), std::vector<int>(static_cast<std::size_t>(b), t), tokens)
          .value();
    };
    const auto x0 = ddim_sample(schedule, model, standard_normal(3, geom.cols(), rng), {.scale = 1.0, .steps = steps});
    for (auto& img : split_images(x0.cwiseMax(-1.0f).cwiseMin(1.0f), r)) out.push_back(std::move(img));
  }
  return out;
}

std::vector<Image> generate_images(const StyleGenerator& generator, int n, std::uint64_t seed) {
  ag::NoGradGuard guard;
  Rng rng(seed);
  const auto z = ag::Tensor::constant(generator.sample_z(n, rng));
  return split_images(generator.forward(z).value().cwiseMax(-1.0f).cwiseMin(1.0f), generator.resolution());
}

double psnr(const ag::Matrix& pred, const ag::Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) throw ConfigError("psnr: shape mismatch");
  const double mse = (pred - target).cast<double>().array().square().mean();
  return 10.0 * std::log10(4.0 / std::max(mse, 1e-12));
}

}  // namespace ilora
