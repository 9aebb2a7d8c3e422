// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-run experiments: the pretraining-quality correlation study and
// one-axis ablation sweeps, plus the image panels both emit.

#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "ilora/recovery.hpp"
#include "ilora/sd_aug.hpp"

namespace ilora {

// --- image panels -----------------------------------------------------------

/// A tiled RGB picture, 3 x (height*width) in [-1, 1].
struct Panel {
  ag::Matrix data;
  int height = 0;
  int width = 0;
};

/// Tiles square R x R tiles (each 3 x R*R in [-1, 1]) row by row with a
/// `gap`-pixel white border. Short rows are padded with black tiles.
Panel tile_panel(const std::vector<std::vector<ag::Matrix>>& rows, int resolution, int gap = 1);
/// Binary P6, values mapped from [-1, 1] to 0..255.
void write_ppm(const Panel& panel, const std::filesystem::path& path);
Panel read_ppm(const std::filesystem::path& path);

/// Encoded predictions for the given samples, one 3 x R*R tile each.
std::vector<ag::Matrix> predict_tiles(const DensePredictor& predictor, const Dataset& dataset,
                                      const std::vector<int>& indices);
/// RGB or encoded ground-truth tiles.
std::vector<ag::Matrix> rgb_tiles(const Dataset& dataset, const std::vector<int>& indices);
std::vector<ag::Matrix> target_tiles(const Dataset& dataset, const std::vector<int>& indices, IntrinsicKind kind);

// --- correlation ------------------------------------------------------------

struct PretrainCheckpoint {
  std::string name;
  int pretrain_steps = 0;
  std::shared_ptr<const UNet> model;
};

struct CorrelationOptions {
  int proxy_images = 64;   // generated and reference images each
  int sample_steps = 10;   // DDIM steps for the generated set
  std::uint64_t proxy_seed = 0;
  std::string split = "test";
};

struct CorrelationRow {
  std::string checkpoint;
  int pretrain_steps = 0;
  double quality_proxy = 0;
  double mean_deg = 0;
  bool is_control = false;
};

struct CorrelationReport {
  std::vector<CorrelationRow> rows;  // checkpoints in input order, control last
  double spearman = 0;               // over every row, control included

  const CorrelationRow& control() const;
  const CorrelationRow& best_checkpoint() const;
  /// Header checkpoint,pretrain_steps,quality_proxy,mean_deg,is_control.
  std::string csv() const;
};

/// For each model: Frechet proxy of its unguided samples against renderer
/// images, then LoRA normals recovery under one shared TrainConfig. Needs at
/// least three checkpoints; the control is a random-init UNet.
CorrelationReport correlation_experiment(const std::vector<PretrainCheckpoint>& checkpoints, const UNet& control,
                                         const Dataset& dataset, const TrainConfig& cfg,
                                         const CorrelationOptions& options = {});

// --- ablation ---------------------------------------------------------------

enum class AblationAxis { rank, budget, selector, steps, cfg_scale };

std::string_view to_string(AblationAxis axis);
AblationAxis parse_axis(std::string_view text);

struct AblationOptions {
  std::string split = "val";
  int eval_limit = 0;          // 0 = whole split
  int panel_images = 4;
  CfgParams sampling;          // steps / cfg_scale sweeps vary one field
  std::uint64_t sample_seed = 0;
};

struct AblationCell {
  std::string value;
  std::optional<EvalResult> result;  // empty for DNF cells
  double param_fraction = 0;
  double final_loss = 0;
  double baseline_loss = 0;  // constant prediction under the same distance
  bool dnf = false;
  std::string note;
};

struct AblationTable {
  AblationAxis axis = AblationAxis::rank;
  IntrinsicKind kind = IntrinsicKind::normal;
  std::vector<AblationCell> cells;
  Panel panel;  // rgb, ground truth, then one row per cell

  /// Header value,error,mean_deg,delta_125,param_fraction,final_loss,baseline_loss,status.
  std::string csv() const;
  std::string text() const;
};

/// Rejects values outside the documented domain of the axis.
void validate_ablation_values(AblationAxis axis, const std::vector<std::string>& values);

/// One train + evaluate per value with the shared seed in `cfg`. The rank,
/// budget and selector axes train single-step adapters on a copy of `base`;
/// the steps and cfg_scale axes train one multi-step adapter set on an
/// input-extended copy and vary only sampling. A cell whose final loss is
/// non-finite or above twice the constant-prediction loss is DNF.
AblationTable ablate(AblationAxis axis, const std::vector<std::string>& values, const UNet& base,
                     const Dataset& dataset, const TrainConfig& cfg, const AblationOptions& options = {});

/// Distance of the constant prediction against the budget subset targets.
double constant_loss(const Dataset& dataset, const TrainConfig& cfg);

}  // namespace ilora
