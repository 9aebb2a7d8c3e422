// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Toy vector-quantized autoencoder.
//
// Encoder: convs 32 -> 16 -> 8 px, then a 1x1 projection to code_dim.
// Quantizer: nearest of K codebook columns, straight-through gradients.
// Decoder: 1x1 in-projection, one attention block whose q/k/v/out are 1x1
// projections ("dec.attn.*"), then convs back up to 32 px and a 3-channel
// head.

#pragma once

#include <vector>

#include "ilora/backbone.hpp"

namespace ilora {

struct VQConfig {
  int resolution = 32;
  int c0 = 32;
  int c1 = 64;
  int code_dim = 32;
  int codebook_size = 64;
  int groups = 8;

  nlohmann::json to_json() const;
  static VQConfig from_json(const nlohmann::json& j);
};

class VQAutoencoder final : public Backbone {
 public:
  explicit VQAutoencoder(VQConfig config, std::uint64_t seed = 0);

  std::string_view family() const override { return "vq"; }
  nlohmann::json config_json() const override { return config_.to_json(); }
  std::vector<std::string> select_targets(TargetSelector selector) const override;
  std::unique_ptr<Backbone> clone() const override;

  const VQConfig& config() const { return config_; }
  int resolution() const { return config_.resolution; }
  int grid() const { return config_.resolution / 4; }

  /// Continuous encoder output, code_dim x (B*g*g).
  ag::Tensor encode(const ag::Tensor& image) const;
  ag::Quantized quantize(const ag::Tensor& z) const;
  /// Code indices for each latent cell, batch-major.
  std::vector<int> encode_indices(const ag::Tensor& image) const;
  /// Quantized latents -> image 3 x (B*R*R).
  ag::Tensor decode(const ag::Tensor& codes) const;
  ag::Tensor decode_indices(const std::vector<int>& indices, int batch) const;

  /// Overwrites the codebook (used for data-dependent initialization).
  void set_codebook(const ag::Matrix& codes);

 private:
  VQConfig config_;
};

}  // namespace ilora
