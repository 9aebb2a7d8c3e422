// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/backbone.hpp"

#include <cmath>

namespace ilora {

std::string_view to_string(TargetSelector selector) {
  switch (selector) {
    case TargetSelector::all_attn: return "all_attn";
    case TargetSelector::cross_only: return "cross_only";
    case TargetSelector::self_only: return "self_only";
    case TargetSelector::up_blocks: return "up_blocks";
    case TargetSelector::mid_block: return "mid_block";
    case TargetSelector::down_blocks: return "down_blocks";
    case TargetSelector::gan_affine: return "gan_affine";
    case TargetSelector::vq_decoder_attn: return "vq_decoder_attn";
  }
  return "unknown";
}

TargetSelector parse_selector(std::string_view text) {
  for (auto s : kAllSelectors) {
    if (to_string(s) == text) return s;
  }
  throw ConfigError("unknown target selector: " + std::string(text));
}

// --- Module ------------------------------------------------------------------

std::vector<WeightInfo> Module::named_weights() const {
  std::vector<WeightInfo> out;
  out.reserve(params_.size());
  for (const auto& e : params_) {
    out.push_back({e.name, static_cast<int>(e.tensor.rows()), static_cast<int>(e.tensor.cols())});
  }
  return out;
}

std::size_t Module::parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : params_) n += static_cast<std::size_t>(e.tensor.value().size());
  return n;
}

bool Module::has_param(std::string_view name) const { return index_.contains(std::string(name)); }

const ag::Tensor& Module::param(std::string_view name) const {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no parameter named " + std::string(name));
  return params_[it->second].tensor;
}

ag::Tensor& Module::mutable_param(std::string_view name) {
  const auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ConfigError("no parameter named " + std::string(name));
  return params_[it->second].tensor;
}

namespace {
void hash_tensor(Hasher& h, const std::string& name, const ag::Matrix& m) {
  h.update(name);
  h.update_pod(static_cast<std::int64_t>(m.rows()));
  h.update_pod(static_cast<std::int64_t>(m.cols()));
  h.update(std::span(reinterpret_cast<const std::uint8_t*>(m.data()), sizeof(float) * static_cast<std::size_t>(m.size())));
}
}  // namespace

Digest Module::weights_hash() const {
  Hasher h;
  for (const auto& e : params_) hash_tensor(h, e.name, e.tensor.value());
  return h.finish();
}

Digest Module::weights_hash(const std::vector<std::string>& names) const {
  Hasher h;
  for (const auto& n : names) hash_tensor(h, n, param(n).value());
  return h.finish();
}

void Module::set_trainable(bool on) {
  for (auto& e : params_) e.tensor.set_requires_grad(on && !e.pinned);
}

std::vector<ag::Tensor> Module::trainable_parameters() const {
  std::vector<ag::Tensor> out;
  for (const auto& e : params_) {
    if (e.tensor.requires_grad()) out.push_back(e.tensor);
  }
  return out;
}

void Module::release_pinned(std::string_view name) {
  auto& e = params_[index_.at(std::string(name))];
  e.pinned = false;
  e.tensor.set_requires_grad(true);
}

std::vector<std::pair<std::string, ag::Matrix>> Module::state() const {
  std::vector<std::pair<std::string, ag::Matrix>> out;
  out.reserve(params_.size());
  for (const auto& e : params_) out.emplace_back(e.name, e.tensor.value());
  return out;
}

void Module::load_state(const std::vector<std::pair<std::string, ag::Matrix>>& values) {
  if (values.size() != params_.size()) throw FormatError("state has a different number of tensors");
  for (std::size_t i = 0; i < values.size(); ++i) {
    auto& e = params_[i];
    const auto& [name, m] = values[i];
    if (name != e.name) throw FormatError("state tensor " + name + " does not match " + e.name);
    if (m.rows() != e.tensor.rows() || m.cols() != e.tensor.cols()) {
      throw FormatError("state tensor " + name + " has the wrong shape");
    }
    e.tensor.mutable_value() = m;
  }
}

void Module::copy_state_from(const Module& other) { load_state(other.state()); }

ag::Tensor Module::add_param(std::string name, ag::Matrix init, bool pinned) {
  if (index_.contains(name)) throw ConfigError("duplicate parameter name " + name);
  auto t = ag::Tensor::leaf(std::move(init), false);
  index_.emplace(name, params_.size());
  params_.push_back({std::move(name), t, pinned});
  return t;
}

ag::Matrix Module::randn(int rows, int cols, double stddev, Rng& rng) {
  ag::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal(0.0, stddev));
  return m;
}

void Module::add_dense(const std::string& name, int out, int in, Rng& rng, bool bias, double gain) {
  add_param(name, randn(out, in, gain / std::sqrt(double(in)), rng));
  if (bias) add_param(name + ".bias", ag::Matrix::Zero(out, 1));
}

void Module::add_conv(const std::string& name, int out, int in, int kernel, Rng& rng, bool bias, double gain) {
  const int fan_in = kernel * kernel * in;
  add_param(name, randn(out, fan_in, gain / std::sqrt(double(fan_in)), rng));
  if (bias) add_param(name + ".bias", ag::Matrix::Zero(out, 1));
}

void Module::add_norm(const std::string& name, int channels) {
  add_param(name + ".gamma", ag::Matrix::Ones(channels, 1));
  add_param(name + ".beta", ag::Matrix::Zero(channels, 1));
}

ag::Tensor Module::dense(const std::string& name, const ag::Tensor& x) const {
  auto y = ag::matmul(param(name), x);
  const std::string b = name + ".bias";
  return has_param(b) ? ag::add_bias(y, param(b)) : y;
}

ag::Tensor Module::conv(const std::string& name, const ag::Tensor& x, int kernel) const {
  auto y = ag::conv2d(x, param(name), kernel);
  const std::string b = name + ".bias";
  return has_param(b) ? ag::add_bias(y, param(b)) : y;
}

ag::Tensor Module::norm(const std::string& name, const ag::Tensor& x, int groups) const {
  return ag::add_bias(ag::mul_channel(ag::group_norm(x, groups), param(name + ".gamma")), param(name + ".beta"));
}

// --- Backbone ----------------------------------------------------------------

Digest Backbone::fingerprint() const {
  Hasher h;
  h.update(family());
  h.update("\n");
  h.update(config_json().dump());
  for (const auto& w : named_weights()) {
    h.update("\n" + w.name);
    h.update_pod(static_cast<std::int32_t>(w.d1));
    h.update_pod(static_cast<std::int32_t>(w.d2));
  }
  return h.finish();
}

void Backbone::add_to_weight(const std::string& name, const ag::Matrix& delta) {
  auto& w = mutable_param(name);
  if (w.rows() != delta.rows() || w.cols() != delta.cols()) throw ConfigError("delta does not fit weight " + name);
  w.mutable_value() += delta;
}

void Backbone::set_slot(const std::string& name, LoraSlot slot) {
  const auto& w = param(name);
  if (slot.up.rows() != w.rows() || slot.down.cols() != w.cols() || slot.up.cols() != slot.down.rows()) {
    throw ConfigError("LoRA factors do not fit weight " + name);
  }
  slots_[name] = std::move(slot);
}

void Backbone::clear_slots() { slots_.clear(); }

ag::Tensor Backbone::linear(const std::string& name, const ag::Tensor& x) const {
  auto y = ag::matmul(param(name), x);
  const auto it = slots_.find(name);
  if (it != slots_.end()) {
    auto delta = ag::matmul(it->second.up, ag::matmul(it->second.down, x));
    y = ag::add(y, it->second.scale == 1.0f ? delta : ag::scale(delta, it->second.scale));
  }
  const std::string b = name + ".bias";
  return has_param(b) ? ag::add_bias(y, param(b)) : y;
}

ag::Matrix timestep_embedding(const std::vector<int>& timesteps, int dim) {
  const int half = dim / 2;
  ag::Matrix e(dim, static_cast<Eigen::Index>(timesteps.size()));
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double a = timesteps[b] * freq;
      e(i, static_cast<Eigen::Index>(b)) = static_cast<float>(std::cos(a));
      e(half + i, static_cast<Eigen::Index>(b)) = static_cast<float>(std::sin(a));
    }
  }
  return e;
}

}  // namespace ilora
