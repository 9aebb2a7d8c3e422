// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Toy pixel-space diffusion UNet.
//
//   in_conv            3 (or 3+3) -> c0                    at R
//   down.0             ResBlock c0 -> c0                    at R
//   down.1             ResBlock c0 -> c1, self-attention    at R/2
//   mid                ResBlock c1 -> c2, self-attn, cross-attn, ResBlock
//                                                           at R/4
//   up.1               ResBlock (c2 + c1) -> c1, cross-attn at R/2
//   up.0               ResBlock (c1 + c0) -> c0             at R
//   out                GroupNorm, SiLU, conv c0 -> 3
//
// Attention projections are named "<block>.<self|cross>.<q|k|v|out>".
// Conditioning is a short token sequence per task, looked up from a frozen
// table (the toy stand-in for fixed text-encoder outputs).

#pragma once

#include <array>
#include <optional>

#include "ilora/backbone.hpp"
#include "ilora/intrinsics.hpp"

namespace ilora {

enum class TaskToken : std::uint8_t { image, normal, depth, albedo, shading, null };
inline constexpr int kTaskTokenCount = 6;

TaskToken task_token(IntrinsicKind kind);

struct UNetConfig {
  int resolution = 48;
  std::array<int, 3> channels{32, 48, 64};
  int context_dim = 32;
  int context_tokens = 4;
  int time_dim = 64;
  int groups = 8;
  bool extended_input = false;

  nlohmann::json to_json() const;
  static UNetConfig from_json(const nlohmann::json& j);
};

class UNet final : public Backbone {
 public:
  explicit UNet(UNetConfig config, std::uint64_t seed = 0);

  std::string_view family() const override { return "unet"; }
  nlohmann::json config_json() const override { return config_.to_json(); }
  std::vector<std::string> select_targets(TargetSelector selector) const override;
  std::unique_ptr<Backbone> clone() const override;

  const UNetConfig& config() const { return config_; }
  int resolution() const { return config_.resolution; }

  /// x: 3 x (B*R*R). With an extended input, `condition` (same shape) feeds
  /// the frozen condition weights. One timestep and one token per batch item.
  ag::Tensor forward(const ag::Tensor& x, const std::vector<int>& timesteps, const std::vector<TaskToken>& tokens,
                     const ag::Tensor* condition = nullptr) const;

  /// Input-projection response (no nonlinearity) for the first layer.
  ag::Tensor input_projection(const ag::Tensor& x, const ag::Tensor* condition = nullptr) const;

  /// Outputs of every attention block from the last forward, if capture is on.
  void set_capture(bool on) const { capture_ = on; captured_.clear(); }
  const std::vector<ag::Tensor>& captured() const { return captured_; }

  /// Widens the input to 3 noisy + 3 condition channels. The condition
  /// weights are a copy of the image weights and stay frozen.
  void extend_input_channels();
  bool extended() const { return config_.extended_input; }

  /// Lets the task-token table train (ablation only).
  void unfreeze_task_tokens();

 private:
  ag::Tensor res_block(const std::string& name, const ag::Tensor& x, const ag::Tensor& temb) const;
  ag::Tensor attn_block(const std::string& name, const ag::Tensor& x, const ag::Tensor* context, int ctx_tokens) const;
  void build(std::uint64_t seed);
  void add_res_block(const std::string& name, int cin, int cout, Rng& rng);
  void add_attn_block(const std::string& name, int channels, int kv_dim, Rng& rng);

  UNetConfig config_;
  mutable bool capture_ = false;
  mutable std::vector<ag::Tensor> captured_;
};

}  // namespace ilora
