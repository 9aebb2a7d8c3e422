// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Supervised RGB -> intrinsic network that labels generated images.
//
// Two-level conv encoder-decoder with skip connections; predicts the
// encoded target directly.

#pragma once

#include "ilora/backbone.hpp"
#include "ilora/distance.hpp"
#include "ilora/evaluation.hpp"

namespace ilora {

class OraclePredictor final : public Module {
 public:
  OraclePredictor(IntrinsicKind kind, std::uint64_t seed = 0);
  IntrinsicKind kind() const { return kind_; }
  /// rgb 3 x (B*R*R) -> encoded 3 x (B*R*R).
  ag::Tensor forward(const ag::Tensor& rgb) const;
  DensePredictor predictor() const;

 private:
  IntrinsicKind kind_;
};

struct OracleConfig {
  int steps = 1500;
  int batch_size = 8;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

/// cos_plus_l1 for normals, mse for the other kinds.
DistanceMetric default_distance(IntrinsicKind kind);

struct OracleRun {
  std::unique_ptr<OraclePredictor> oracle;
  TrainLog log;
  EvalResult val;
};

OracleRun train_oracle_predictor(const Dataset& dataset, IntrinsicKind kind, const OracleConfig& cfg);

/// Mean angle between per-pixel normals of sample pairs (i, j), i < j.
double mean_inter_sample_angle(const Dataset& dataset, const std::vector<int>& indices);

}  // namespace ilora
