// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/oracle.hpp"

#include <cmath>

namespace ilora {

OraclePredictor::OraclePredictor(IntrinsicKind kind, std::uint64_t seed) : kind_(kind) {
  Rng rng(seed);
  add_conv("e.0", 32, 3, 3, rng);
  add_conv("e.1", 32, 32, 3, rng);
  add_conv("e.2", 64, 32, 3, rng);
  add_conv("e.3", 64, 64, 3, rng);
  add_conv("d.1", 64, 128, 3, rng);
  add_conv("d.0", 32, 96, 3, rng);
  add_conv("d.out", 3, 32, 3, rng);
}

ag::Tensor OraclePredictor::forward(const ag::Tensor& rgb) const {
  auto h0 = ag::silu(conv("e.1", ag::silu(conv("e.0", rgb, 3)), 3));
  auto h1 = ag::silu(conv("e.2", ag::avg_pool2(h0), 3));
  auto h2 = ag::silu(conv("e.3", ag::avg_pool2(h1), 3));
  auto u1 = ag::silu(conv("d.1", ag::concat_channels(ag::upsample2(h2), h1), 3));
  auto u0 = ag::silu(conv("d.0", ag::concat_channels(ag::upsample2(u1), h0), 3));
  return conv("d.out", u0, 3);
}

DensePredictor OraclePredictor::predictor() const {
  return [this](const ag::Tensor& rgb) { return forward(rgb).value(); };
}

DistanceMetric default_distance(IntrinsicKind kind) {
  return kind == IntrinsicKind::normal ? DistanceMetric::cos_plus_l1 : DistanceMetric::mse;
}

OracleRun train_oracle_predictor(const Dataset& dataset, IntrinsicKind kind, const OracleConfig& cfg) {
  if (dataset.manifest.splits.train < 200) throw ConfigError("oracle training needs >= 200 train samples");
  if (cfg.steps < 1 || cfg.batch_size < 1 || !(cfg.learning_rate > 0)) throw ConfigError("oracle: bad config");
  OracleRun run;
  run.oracle = std::make_unique<OraclePredictor>(kind, mix_seed(cfg.seed, 1));
  run.oracle->set_trainable(true);
  ag::Adam opt(run.oracle->trainable_parameters(), {.lr = static_cast<float>(cfg.learning_rate)});
  BatchSampler sampler(dataset.split_indices("train"), cfg.batch_size, mix_seed(cfg.seed, 2));
  StepLogger logger;
  const auto metric = default_distance(kind);
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto idx = sampler.next();
    auto loss = distance_loss(metric, run.oracle->forward(image_batch(dataset, idx)), target_batch(dataset, idx, kind),
                              mask_batch(dataset, idx));
    try {
      logger.step(loss.value()(0, 0), 0, 0);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string("oracle predictor for ") + std::string(to_string(kind)) + ": " + e.what());
    }
    const auto bytes = loss.backward();
    opt.step();
    opt.zero_grad();
    logger.log().peak_mem_bytes = std::max(logger.log().peak_mem_bytes, bytes + opt.state_bytes());
  }
  run.oracle->set_trainable(false);
  run.log = logger.finish();
  run.val = evaluate(run.oracle->predictor(), dataset, dataset.split_indices("val"), kind);
  return run;
}

double mean_inter_sample_angle(const Dataset& dataset, const std::vector<int>& indices) {
  double sum = 0;
  long n = 0;
  for (std::size_t a = 0; a < indices.size(); ++a) {
    for (std::size_t b = a + 1; b < indices.size(); ++b) {
      const auto& na = dataset.samples.at(static_cast<std::size_t>(indices[a])).normal;
      const auto& nb = dataset.samples.at(static_cast<std::size_t>(indices[b])).normal;
      const auto e = angular_errors(na.data.cast<double>(), nb.data.cast<double>(), Mask(na.mask && nb.mask));
      sum += e.mean_deg;
      ++n;
    }
  }
  if (n == 0) throw ConfigError("mean_inter_sample_angle: need two samples");
  return sum / double(n);
}

}  // namespace ilora
