// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Multi-step intrinsic prediction with an input-augmented UNet: the noisy
// intrinsic (3 ch) is denoised while the clean RGB image (3 ch) enters
// through the frozen condition weights.

#pragma once

#include "ilora/diffusion.hpp"
#include "ilora/recovery.hpp"

namespace ilora {

inline constexpr double kGuidanceDropout = 0.1;

/// v-prediction training of the attached slots. Each sample's task token is
/// replaced by the null token with probability `null_probability`; the
/// per-step null counts land in TrainLog::null_samples.
TrainLog train_lora_multistep(UNet& unet, AdapterSet& adapters, const Dataset& dataset, const TrainConfig& cfg,
                              const NoiseSchedule& schedule, double null_probability = kGuidanceDropout);

/// Encoded prediction for a batch. zero_condition feeds a zero image through
/// the condition channels (ablation).
ag::Matrix multi_step_encoded(const UNet& unet, const ag::Tensor& rgb, IntrinsicKind kind,
                              const NoiseSchedule& schedule, const CfgParams& cfg, std::uint64_t seed,
                              bool zero_condition = false);

IntrinsicMap multi_step_sample(const UNet& unet, const Image& image, IntrinsicKind kind, const CodecParams& codec,
                               const NoiseSchedule& schedule, const CfgParams& cfg, std::uint64_t seed);

DensePredictor multi_step_predictor(const UNet& unet, IntrinsicKind kind, const NoiseSchedule& schedule,
                                    const CfgParams& cfg, std::uint64_t seed, bool zero_condition = false);

}  // namespace ilora
