// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset-level evaluation of intrinsic predictions. Statistics are pooled
// over every valid pixel of the evaluated set.

#pragma once

#include <functional>
#include <nlohmann/json.hpp>
#include <optional>

#include "ilora/metrics.hpp"
#include "ilora/training.hpp"

namespace ilora {

/// Encoded prediction (3 x (B*R*R)) for a batch of model-space RGB images.
using DensePredictor = std::function<ag::Matrix(const ag::Tensor& rgb)>;

struct EvalResult {
  IntrinsicKind kind = IntrinsicKind::normal;
  std::optional<double> mean_deg, median_deg, l1_x100;  // normals
  std::optional<double> rms, delta_125;                 // depth; rms also albedo / shading
  long n_pixels = 0;

  /// mean_deg for normals, rms otherwise.
  double headline() const;
};

/// Metrics of pred against gt (same kind, same shapes), pooled.
EvalResult evaluate_maps(const std::vector<IntrinsicMap>& pred, const std::vector<IntrinsicMap>& gt);

/// Decodes 3 x (B*R*R) encoded predictions into B maps.
std::vector<IntrinsicMap> decode_batch(const ag::Matrix& encoded, IntrinsicKind kind, int resolution,
                                       const CodecParams& codec);

/// align_affine fits a per-image scale and shift of each non-normal
/// prediction to its ground truth before scoring.
EvalResult evaluate(const DensePredictor& predictor, const Dataset& dataset, const std::vector<int>& indices,
                    IntrinsicKind kind, int batch_size = 16, bool align_affine = false);

/// Constant prediction: (0, 0, 1) normals, the train-split median depth, or
/// the train-split mean albedo / shading.
Eigen::Vector3f constant_encoding(const Dataset& dataset, IntrinsicKind kind);
DensePredictor constant_predictor(const Dataset& dataset, IntrinsicKind kind);

struct Provenance {
  std::string config_hash, adapters_hash, dataset_manifest_hash;
};

/// metrics.json: {kind, mean_deg, median_deg, l1_x100, rms, delta_125,
/// n_pixels, provenance{...}} with null for metrics that do not apply.
nlohmann::json metrics_json(const EvalResult& result, const Provenance& provenance);
EvalResult eval_from_json(const nlohmann::json& j);

}  // namespace ilora
