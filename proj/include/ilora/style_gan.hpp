// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Toy style-based generator and its discriminator.
//
// z -> mapping MLP -> w. A learned 4x4 constant is refined by modulated,
// demodulated 3x3 convolutions at 4, 8, 16 and 32 px, then a modulated 1x1
// toRGB layer. Every synthesis layer i owns an affine "synth.<i>.affine"
// mapping w to its per-channel style. No noise inputs: G(z) is a pure
// function of z.

#pragma once

#include <vector>

#include "ilora/backbone.hpp"

namespace ilora {

struct StyleConfig {
  int resolution = 32;
  int z_dim = 32;
  int w_dim = 64;
  std::vector<int> channels{64, 64, 48, 32};  // 4, 8, 16, 32 px

  nlohmann::json to_json() const;
  static StyleConfig from_json(const nlohmann::json& j);
};

class StyleGenerator final : public Backbone {
 public:
  explicit StyleGenerator(StyleConfig config, std::uint64_t seed = 0);

  std::string_view family() const override { return "style_gan"; }
  nlohmann::json config_json() const override { return config_.to_json(); }
  std::vector<std::string> select_targets(TargetSelector selector) const override;
  std::unique_ptr<Backbone> clone() const override;

  const StyleConfig& config() const { return config_; }
  int resolution() const { return config_.resolution; }
  int synthesis_layers() const { return static_cast<int>(config_.channels.size()) + 1; }

  /// z: z_dim x B  ->  image 3 x (B*R*R).
  ag::Tensor forward(const ag::Tensor& z) const;
  ag::Tensor mapping(const ag::Tensor& z) const;
  ag::Tensor synthesis(const ag::Tensor& w) const;

  /// Standard-normal latents, z_dim x n.
  ag::Matrix sample_z(int n, Rng& rng) const;

 private:
  ag::Tensor modulated_conv(int layer, const ag::Tensor& x, const ag::Tensor& w, int kernel, bool demodulate) const;

  StyleConfig config_;
};

class Discriminator final : public Module {
 public:
  explicit Discriminator(int resolution, std::uint64_t seed = 0);
  /// Image 3 x (B*R*R) -> logits 1 x B.
  ag::Tensor forward(const ag::Tensor& image) const;

 private:
  int resolution_;
};

}  // namespace ilora
