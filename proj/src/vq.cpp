// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/vq.hpp"

namespace ilora {

nlohmann::json VQConfig::to_json() const {
  return {{"resolution", resolution}, {"c0", c0},       {"c1", c1}, {"code_dim", code_dim},
          {"codebook_size", codebook_size}, {"groups", groups}};
}

VQConfig VQConfig::from_json(const nlohmann::json& j) {
  VQConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.c0 = j.value("c0", c.c0);
  c.c1 = j.value("c1", c.c1);
  c.code_dim = j.value("code_dim", c.code_dim);
  c.codebook_size = j.value("codebook_size", c.codebook_size);
  c.groups = j.value("groups", c.groups);
  return c;
}

VQAutoencoder::VQAutoencoder(VQConfig config, std::uint64_t seed) : config_(config) {
  if (config_.resolution % 4 != 0) throw ConfigError("vq resolution must be divisible by 4");
  Rng rng(seed);
  const int c0 = config_.c0, c1 = config_.c1, d = config_.code_dim;
  add_conv("enc.0", c0, 3, 3, rng);
  add_conv("enc.1", c1, c0, 3, rng);
  add_conv("enc.2", c1, c1, 3, rng);
  add_conv("enc.out", d, c1, 1, rng);
  add_param("codebook", randn(d, config_.codebook_size, 1.0, rng));
  add_conv("dec.in", c1, d, 1, rng);
  add_norm("dec.attn.norm", c1);
  add_dense("dec.attn.q", c1, c1, rng, false);
  add_dense("dec.attn.k", c1, c1, rng, false);
  add_dense("dec.attn.v", c1, c1, rng, false);
  add_dense("dec.attn.out", c1, c1, rng, false);
  add_conv("dec.0", c1, c1, 3, rng);
  add_conv("dec.1", c0, c1, 3, rng);
  add_conv("dec.2", c0, c0, 3, rng);
  add_conv("dec.out", 3, c0, 3, rng);
}

std::unique_ptr<Backbone> VQAutoencoder::clone() const {
  auto copy = std::make_unique<VQAutoencoder>(config_);
  copy->copy_state_from(*this);
  return copy;
}

std::vector<std::string> VQAutoencoder::select_targets(TargetSelector selector) const {
  if (selector != TargetSelector::vq_decoder_attn) {
    throw ConfigError("selector " + std::string(to_string(selector)) + " does not apply to the vq autoencoder");
  }
  return {"dec.attn.q", "dec.attn.k", "dec.attn.v", "dec.attn.out"};
}

ag::Tensor VQAutoencoder::encode(const ag::Tensor& image) const {
  auto h = ag::silu(conv("enc.0", image, 3));
  h = ag::silu(conv("enc.1", ag::avg_pool2(h), 3));
  h = ag::silu(conv("enc.2", ag::avg_pool2(h), 3));
  return conv("enc.out", h, 1);
}

ag::Quantized VQAutoencoder::quantize(const ag::Tensor& z) const { return ag::quantize(z, param("codebook")); }

std::vector<int> VQAutoencoder::encode_indices(const ag::Tensor& image) const {
  ag::NoGradGuard guard;
  return quantize(encode(image)).indices;
}

ag::Tensor VQAutoencoder::decode(const ag::Tensor& codes) const {
  auto h = ag::silu(conv("dec.in", codes, 1));
  const auto n = norm("dec.attn.norm", h, config_.groups);
  const auto q = linear("dec.attn.q", n);
  const auto k = linear("dec.attn.k", n);
  const auto v = linear("dec.attn.v", n);
  h = ag::add(h, linear("dec.attn.out", ag::attention(q, k, v, h.geom().pixels())));
  h = ag::silu(conv("dec.0", h, 3));
  h = ag::silu(conv("dec.1", ag::upsample2(h), 3));
  h = ag::silu(conv("dec.2", ag::upsample2(h), 3));
  return conv("dec.out", h, 3);
}

ag::Tensor VQAutoencoder::decode_indices(const std::vector<int>& indices, int batch) const {
  const int g = grid();
  if (static_cast<int>(indices.size()) != batch * g * g) throw ConfigError("decode_indices: wrong number of codes");
  return decode(ag::gather_codes(param("codebook"), indices, ag::Geom{batch, g, g}));
}

void VQAutoencoder::set_codebook(const ag::Matrix& codes) {
  const auto& cb = param("codebook");
  if (codes.rows() != cb.rows() || codes.cols() != cb.cols()) throw ConfigError("set_codebook: shape mismatch");
  mutable_param("codebook").mutable_value() = codes;
}

}  // namespace ilora
