// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Pretraining for the three generator families on renderer RGB images.

#pragma once

#include <functional>
#include <limits>
#include <vector>

#include "ilora/diffusion.hpp"
#include "ilora/style_gan.hpp"
#include "ilora/training.hpp"
#include "ilora/unet.hpp"
#include "ilora/vq.hpp"

namespace ilora {

struct PretrainConfig {
  int steps = 2000;
  int batch_size = 8;
  double learning_rate = 5e-4;
  std::uint64_t seed = 0;
  std::vector<int> checkpoint_steps;
  Parameterization parameterization = Parameterization::v;
  int log_every = 50;
  int divergence_window = 1000;  // GAN only

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

/// Called at every requested checkpoint step and once at the end.
using CheckpointFn = std::function<void(int step, const Backbone& backbone)>;

struct PretrainReport {
  TrainLog log;
  std::vector<std::string> warnings;
  double val_psnr = std::numeric_limits<double>::quiet_NaN();         // VQ only
  double mean_image_psnr = std::numeric_limits<double>::quiet_NaN();  // VQ only
  int dead_codes = -1;                                                // VQ only
};

inline constexpr int kMinPretrainImages = 500;

/// Denoising objective on train-split images under the "image" token.
PretrainReport pretrain_diffusion(UNet& unet, const Dataset& dataset, const PretrainConfig& cfg,
                                  const CheckpointFn& on_checkpoint = {});

/// Non-saturating GAN objective. Throws DivergenceError once the
/// discriminator wins outright for divergence_window consecutive steps.
PretrainReport pretrain_gan(StyleGenerator& generator, const Dataset& dataset, const PretrainConfig& cfg,
                            const CheckpointFn& on_checkpoint = {});

/// Reconstruction + codebook + 0.25 commitment. The codebook starts from
/// encoder outputs of the first batch.
PretrainReport pretrain_vq(VQAutoencoder& vq, const Dataset& dataset, const PretrainConfig& cfg,
                           const CheckpointFn& on_checkpoint = {});

/// Unguided samples under the "image" token, x_T ~ N(0, I) seeded.
std::vector<Image> generate_images(const UNet& unet, const NoiseSchedule& schedule, int n, int steps,
                                   std::uint64_t seed);
std::vector<Image> generate_images(const StyleGenerator& generator, int n, std::uint64_t seed);

/// Splits a 3 x (B*R*R) batch into images.
std::vector<Image> split_images(const ag::Matrix& batch, int resolution);
std::vector<Image> dataset_images(const Dataset& dataset, const std::vector<int>& indices);

/// 10 log10(4 / mse) for [-1, 1] images.
double psnr(const ag::Matrix& pred, const ag::Matrix& target);

}  // namespace ilora
