// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/unet.hpp"

namespace ilora {

namespace {
constexpr const char* kAttnBlocks[] = {"down.1.self", "mid.self", "mid.cross", "up.1.cross"};
constexpr const char* kProjections[] = {"q", "k", "v", "out"};
}  // namespace

TaskToken task_token(IntrinsicKind kind) {
  switch (kind) {
    case IntrinsicKind::normal: return TaskToken::normal;
    case IntrinsicKind::depth: return TaskToken::depth;
    case IntrinsicKind::albedo: return TaskToken::albedo;
    case IntrinsicKind::shading: return TaskToken::shading;
  }
  throw ConfigError("unknown intrinsic kind");
}

nlohmann::json UNetConfig::to_json() const {
  return {{"resolution", resolution},     {"channels", channels},         {"context_dim", context_dim},
          {"context_tokens", context_tokens}, {"time_dim", time_dim}, {"groups", groups},
          {"extended_input", extended_input}};
}

UNetConfig UNetConfig::from_json(const nlohmann::json& j) {
  UNetConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.channels = j.value("channels", c.channels);
  c.context_dim = j.value("context_dim", c.context_dim);
  c.context_tokens = j.value("context_tokens", c.context_tokens);
  c.time_dim = j.value("time_dim", c.time_dim);
  c.groups = j.value("groups", c.groups);
  c.extended_input = j.value("extended_input", c.extended_input);
  return c;
}

UNet::UNet(UNetConfig config, std::uint64_t seed) : config_(config) {
  if (config_.resolution % 4 != 0) throw ConfigError("unet resolution must be divisible by 4");
  for (int c : config_.channels) {
    if (c % config_.groups != 0) throw ConfigError("unet channels must be divisible by the group count");
  }
  build(seed);
}

void UNet::add_res_block(const std::string& name, int cin, int cout, Rng& rng) {
  add_norm(name + ".norm1", cin);
  add_conv(name + ".conv1", cout, cin, 3, rng);
  add_dense(name + ".temb", cout, config_.time_dim, rng);
  add_norm(name + ".norm2", cout);
  add_conv(name + ".conv2", cout, cout, 3, rng);
  if (cin != cout) add_conv(name + ".skip", cout, cin, 1, rng);
}

void UNet::add_attn_block(const std::string& name, int channels, int kv_dim, Rng& rng) {
  add_norm(name + ".norm", channels);
  add_dense(name + ".q", channels, channels, rng, false);
  add_dense(name + ".k", channels, kv_dim, rng, false);
  add_dense(name + ".v", channels, kv_dim, rng, false);
  add_dense(name + ".out", channels, channels, rng, false);
}

void UNet::build(std::uint64_t seed) {
  Rng rng(seed);
  const auto [c0, c1, c2] = config_.channels;
  const int td = config_.time_dim;
  add_param("task_tokens", randn(config_.context_dim, kTaskTokenCount * config_.context_tokens, 1.0, rng), true);
  add_dense("time.0", td, td, rng);
  add_dense("time.1", td, td, rng);
  add_conv("in_conv", c0, 3, 3, rng, false);
  add_param("in_conv.bias", ag::Matrix::Zero(c0, 1));
  add_res_block("down.0", c0, c0, rng);
  add_res_block("down.1", c0, c1, rng);
  add_attn_block("down.1.self", c1, c1, rng);
  add_res_block("mid.0", c1, c2, rng);
  add_attn_block("mid.self", c2, c2, rng);
  add_attn_block("mid.cross", c2, config_.context_dim, rng);
  add_res_block("mid.1", c2, c2, rng);
  add_res_block("up.1", c2 + c1, c1, rng);
  add_attn_block("up.1.cross", c1, config_.context_dim, rng);
  add_res_block("up.0", c1 + c0, c0, rng);
  add_norm("out.norm", c0);
  add_conv("out.conv", 3, c0, 3, rng);
  if (config_.extended_input) add_param("in_conv.cond", param("in_conv").value(), true);
}

std::unique_ptr<Backbone> UNet::clone() const {
  auto copy = std::make_unique<UNet>(config_);
  copy->copy_state_from(*this);
  return copy;
}

std::vector<std::string> UNet::select_targets(TargetSelector selector) const {
  std::vector<std::string> blocks;
  switch (selector) {
    case TargetSelector::all_attn: blocks = {kAttnBlocks[0], kAttnBlocks[1], kAttnBlocks[2], kAttnBlocks[3]}; break;
    case TargetSelector::cross_only: blocks = {"mid.cross", "up.1.cross"}; break;
    case TargetSelector::self_only: blocks = {"down.1.self", "mid.self"}; break;
    case TargetSelector::up_blocks: blocks = {"up.1.cross"}; break;
    case TargetSelector::mid_block: blocks = {"mid.self", "mid.cross"}; break;
    case TargetSelector::down_blocks: blocks = {"down.1.self"}; break;
    default: throw ConfigError("selector " + std::string(to_string(selector)) + " does not apply to the unet");
  }
  std::vector<std::string> names;
  for (const auto& b : blocks) {
    for (const char* p : kProjections) names.push_back(b + "." + p);
  }
  return names;
}

void UNet::extend_input_channels() {
  if (config_.extended_input) throw ConfigError("unet input is already extended");
  config_.extended_input = true;
  add_param("in_conv.cond", param("in_conv").value(), true);
}

void UNet::unfreeze_task_tokens() { release_pinned("task_tokens"); }

ag::Tensor UNet::input_projection(const ag::Tensor& x, const ag::Tensor* condition) const {
  auto h = ag::conv2d(x, param("in_conv"), 3);
  if (config_.extended_input) {
    if (condition == nullptr) throw ConfigError("extended unet needs a condition image");
    h = ag::add(h, ag::conv2d(*condition, param("in_conv.cond"), 3));
  } else if (condition != nullptr) {
    throw ConfigError("unet input is not extended; no condition accepted");
  }
  return h;
}

ag::Tensor UNet::res_block(const std::string& name, const ag::Tensor& x, const ag::Tensor& temb) const {
  auto h = conv(name + ".conv1", ag::silu(norm(name + ".norm1", x, config_.groups)), 3);
  h = ag::add_per_batch(h, dense(name + ".temb", temb));
  h = conv(name + ".conv2", ag::silu(norm(name + ".norm2", h, config_.groups)), 3);
  const auto skip = has_param(name + ".skip") ? conv(name + ".skip", x, 1) : x;
  return ag::add(skip, h);
}

ag::Tensor UNet::attn_block(const std::string& name, const ag::Tensor& x, const ag::Tensor* context,
                            int ctx_tokens) const {
  const auto h = norm(name + ".norm", x, config_.groups);
  const auto& kv = context ? *context : h;
  const int m = context ? ctx_tokens : x.geom().pixels();
  const auto q = linear(name + ".q", h);
  const auto k = linear(name + ".k", kv);
  const auto v = linear(name + ".v", kv);
  auto out = ag::add(x, linear(name + ".out", ag::attention(q, k, v, m)));
  if (capture_) captured_.push_back(out);
  return out;
}

ag::Tensor UNet::forward(const ag::Tensor& x, const std::vector<int>& timesteps, const std::vector<TaskToken>& tokens,
                         const ag::Tensor* condition) const {
  const ag::Geom g = x.geom();
  if (x.rows() != 3 || g.height != config_.resolution || g.width != config_.resolution) {
    throw ConfigError("unet input must be 3 x R x R with R = " + std::to_string(config_.resolution));
  }
  if (static_cast<int>(timesteps.size()) != g.batch || static_cast<int>(tokens.size()) != g.batch) {
    throw ConfigError("unet: one timestep and one token per batch item");
  }
  captured_.clear();

  const int nt = config_.context_tokens;
  std::vector<int> idx;
  idx.reserve(tokens.size() * static_cast<std::size_t>(nt));
  for (auto t : tokens) {
    for (int j = 0; j < nt; ++j) idx.push_back(static_cast<int>(t) * nt + j);
  }
  const auto context = ag::gather_codes(param("task_tokens"), idx, ag::Geom{g.batch, nt, 1});

  auto temb = ag::Tensor::constant(timestep_embedding(timesteps, config_.time_dim), ag::Geom{1, 1, g.batch});
  temb = dense("time.1", ag::silu(dense("time.0", temb)));
  temb = ag::silu(temb);

  auto h0 = ag::add_bias(input_projection(x, condition), param("in_conv.bias"));
  h0 = res_block("down.0", h0, temb);
  auto h1 = res_block("down.1", ag::avg_pool2(h0), temb);
  h1 = attn_block("down.1.self", h1, nullptr, 0);
  auto m = res_block("mid.0", ag::avg_pool2(h1), temb);
  m = attn_block("mid.self", m, nullptr, 0);
  m = attn_block("mid.cross", m, &context, nt);
  m = res_block("mid.1", m, temb);
  auto u1 = res_block("up.1", ag::concat_channels(ag::upsample2(m), h1), temb);
  u1 = attn_block("up.1.cross", u1, &context, nt);
  auto u0 = res_block("up.0", ag::concat_channels(ag::upsample2(u1), h0), temb);
  return conv("out.conv", ag::silu(norm("out.norm", u0, config_.groups)), 3);
}

}  // namespace ilora
