// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Intrinsic recovery: LoRA training against intrinsic targets for all three
// generator families, plus the linear-probe and full fine-tuning baselines.
//
// Dense (UNet) runs regress the encoded renderer ground truth of a real
// image from a single forward pass at t = 1 under the kind's task token.
// Generative runs regress oracle labels of the frozen generator's own
// output for the same latent.

#pragma once

#include "ilora/lora.hpp"
#include "ilora/oracle.hpp"
#include "ilora/style_gan.hpp"
#include "ilora/unet.hpp"
#include "ilora/vq.hpp"

namespace ilora {

inline constexpr int kDenseTimestep = 1;

struct TrainConfig {
  int budget = 250;
  int rank = 8;
  TargetSelector selector = TargetSelector::all_attn;
  double learning_rate = 1e-4;
  int batch_size = 4;
  int max_steps = 2000;
  std::uint64_t seed = 0;
  DistanceMetric distance = DistanceMetric::mse;
  IntrinsicKind kind = IntrinsicKind::normal;
  bool train_task_token = false;
  int log_every = 50;

  /// UNet defaults (lr 1e-4, batch 4, 2000 steps).
  static TrainConfig dense_defaults();
  /// GAN / VQ defaults (lr 1e-3, batch 1, 4000 steps).
  static TrainConfig generative_defaults(TargetSelector selector);

  /// Every field, defaults included.
  nlohmann::json to_json() const;
  /// Missing keys keep `base` values; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
  static TrainConfig from_json(const nlohmann::json& j);
  void validate() const;
  Digest hash() const;
};

// --- dense (UNet) ---------------------------------------------------------

/// Encoded single-step prediction for a batch of RGB images.
ag::Tensor dense_forward(const UNet& unet, const ag::Tensor& rgb, IntrinsicKind kind);
DensePredictor dense_predictor(const UNet& unet, IntrinsicKind kind);

/// One forward pass, decoded. Rejects adapters trained for another kind.
IntrinsicMap single_step_predict(const UNet& unet, const AdapterSet& adapters, const Image& image, IntrinsicKind kind,
                                 const CodecParams& codec);

/// Trains the slots attached to `unet` (see inject / attach) and copies the
/// result back into `adapters`.
TrainLog train_lora_dense(UNet& unet, AdapterSet& adapters, const Dataset& dataset, const TrainConfig& cfg);

struct AdapterRun {
  AdapterSet adapters;
  TrainLog log;
};

/// inject + train_lora_dense. The slots stay attached on return.
AdapterRun run_lora_dense(UNet& unet, const Dataset& dataset, const TrainConfig& cfg);

// --- baselines --------------------------------------------------------------

/// Per-attention-block 1x1 heads on frozen UNet features, upsampled to the
/// output resolution and averaged.
class ProbeHead final : public Module {
 public:
  ProbeHead(const UNet& unet, std::uint64_t seed);
  ag::Tensor forward(const std::vector<ag::Tensor>& features, int resolution) const;
  int layers() const { return layers_; }

 private:
  int layers_ = 0;
};

/// Detached attention-block outputs of the dense forward pass.
std::vector<ag::Tensor> probe_features(const UNet& unet, const ag::Tensor& rgb, IntrinsicKind kind);

struct ProbeRun {
  std::unique_ptr<ProbeHead> head;
  TrainLog log;
};

ProbeRun train_linear_probe(const UNet& unet, const Dataset& dataset, const TrainConfig& cfg);
DensePredictor probe_predictor(const UNet& unet, const ProbeHead& head, IntrinsicKind kind);

struct FinetuneRun {
  std::unique_ptr<UNet> model;
  TrainLog log;
};

/// Trains a copy of `base` with every weight unfrozen (task tokens stay
/// fixed unless cfg.train_task_token).
FinetuneRun full_finetune(const UNet& base, const Dataset& dataset, const TrainConfig& cfg);

// --- generative (GAN / VQ) -------------------------------------------------

/// Per step: z ~ N(0, I); target = oracle(G_base(z)); prediction = G(z).
TrainLog train_lora_generative(StyleGenerator& generator, AdapterSet& adapters, const OraclePredictor& oracle,
                               const TrainConfig& cfg);

/// Per step: codes = quantize(encode(x)) for a budget image x;
/// target = oracle(decode_base(codes)); prediction = decode(codes).
TrainLog train_lora_generative(VQAutoencoder& vq, AdapterSet& adapters, const OraclePredictor& oracle,
                               const Dataset& dataset, const TrainConfig& cfg);

struct GenerativeEval {
  EvalResult adapted;
  EvalResult constant;  // constant prediction against the same targets
};

/// Adapted output against oracle labels of the base output on n held-out
/// latents (GAN) or val-split code grids (VQ).
GenerativeEval evaluate_generative(const StyleGenerator& generator, const OraclePredictor& oracle, IntrinsicKind kind,
                                   const CodecParams& codec, int n, std::uint64_t seed);
GenerativeEval evaluate_generative(const VQAutoencoder& vq, const OraclePredictor& oracle, IntrinsicKind kind,
                                   const Dataset& dataset);

}  // namespace ilora
