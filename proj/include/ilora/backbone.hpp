// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Named-parameter networks and the backbone interface that LoRA targets.

#pragma once

#include <nlohmann/json.hpp>

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ilora/autograd.hpp"
#include "ilora/common.hpp"

namespace ilora {

enum class TargetSelector : std::uint8_t {
  all_attn,
  cross_only,
  self_only,
  up_blocks,
  mid_block,
  down_blocks,
  gan_affine,
  vq_decoder_attn,
};

inline constexpr TargetSelector kAllSelectors[] = {
    TargetSelector::all_attn,  TargetSelector::cross_only,  TargetSelector::self_only,  TargetSelector::up_blocks,
    TargetSelector::mid_block, TargetSelector::down_blocks, TargetSelector::gan_affine, TargetSelector::vq_decoder_attn};

std::string_view to_string(TargetSelector selector);
TargetSelector parse_selector(std::string_view text);

/// A parameter tensor viewed as a d1 x d2 matrix.
struct WeightInfo {
  std::string name;
  int d1 = 0;
  int d2 = 0;

  std::size_t size() const { return static_cast<std::size_t>(d1) * static_cast<std::size_t>(d2); }
};

/// Ordered store of named parameters. Every network in the library is a Module.
class Module {
 public:
  virtual ~Module() = default;
  Module() = default;
  Module(const Module&) = delete;
  Module& operator=(const Module&) = delete;

  /// Every tensor, in registration order.
  std::vector<WeightInfo> named_weights() const;
  std::size_t parameter_count() const;
  bool has_param(std::string_view name) const;
  const ag::Tensor& param(std::string_view name) const;

  /// Bit-level digest over all parameter values.
  Digest weights_hash() const;
  Digest weights_hash(const std::vector<std::string>& names) const;

  /// Toggles gradient tracking on every parameter not pinned frozen.
  void set_trainable(bool on);
  std::vector<ag::Tensor> trainable_parameters() const;
  /// Pinned parameters never train, except when explicitly released.
  void release_pinned(std::string_view name);

  std::vector<std::pair<std::string, ag::Matrix>> state() const;
  /// Replaces parameter values; names and shapes must match exactly.
  void load_state(const std::vector<std::pair<std::string, ag::Matrix>>& values);
  void copy_state_from(const Module& other);

 protected:
  ag::Tensor add_param(std::string name, ag::Matrix init, bool pinned = false);
  ag::Tensor& mutable_param(std::string_view name);
  static ag::Matrix randn(int rows, int cols, double stddev, Rng& rng);

  /// Dense layer W x (+ b when "<name>.bias" exists).
  ag::Tensor dense(const std::string& name, const ag::Tensor& x) const;
  /// Same-padded conv with "<name>" weights (+ "<name>.bias" when present).
  ag::Tensor conv(const std::string& name, const ag::Tensor& x, int kernel) const;
  /// Group norm with "<name>.gamma" / "<name>.beta".
  ag::Tensor norm(const std::string& name, const ag::Tensor& x, int groups) const;

  void add_dense(const std::string& name, int out, int in, Rng& rng, bool bias = true, double gain = 1.0);
  void add_conv(const std::string& name, int out, int in, int kernel, Rng& rng, bool bias = true, double gain = 1.0);
  void add_norm(const std::string& name, int channels);

 private:
  struct Entry {
    std::string name;
    ag::Tensor tensor;
    bool pinned = false;
  };
  std::vector<Entry> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Trainable low-rank factors routed into one weight during forward passes.
struct LoraSlot {
  ag::Tensor up;    // d1 x r
  ag::Tensor down;  // r x d2
  float scale = 1.0f;
};

/// A generative network with named adaptable weights and a 3-channel head.
class Backbone : public Module {
 public:
  virtual std::string_view family() const = 0;
  /// Architecture description, sufficient to rebuild the network.
  virtual nlohmann::json config_json() const = 0;
  /// Weight names matched by a selector. Throws ConfigError for a selector
  /// that does not apply to this family.
  virtual std::vector<std::string> select_targets(TargetSelector selector) const = 0;
  /// Deep copy, including parameter values but not LoRA slots.
  virtual std::unique_ptr<Backbone> clone() const = 0;

  /// Structural digest: family, configuration, and every tensor name and shape.
  Digest fingerprint() const;

  /// In-place W += delta; used to fold adapters into their targets.
  void add_to_weight(const std::string& name, const ag::Matrix& delta);

  void set_slot(const std::string& name, LoraSlot slot);
  void clear_slots();
  const std::map<std::string, LoraSlot>& slots() const { return slots_; }
  bool has_slots() const { return !slots_.empty(); }

 protected:
  /// W x routed through the LoRA slot for `name`, if any. Never forms W_u W_l.
  ag::Tensor linear(const std::string& name, const ag::Tensor& x) const;

 private:
  std::map<std::string, LoraSlot> slots_;
};

/// Sinusoidal embedding of integer timesteps: dim x batch.
ag::Matrix timestep_embedding(const std::vector<int>& timesteps, int dim);

}  // namespace ilora
