// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/style_gan.hpp"

#include <cmath>

namespace ilora {

nlohmann::json StyleConfig::to_json() const {
  return {{"resolution", resolution}, {"z_dim", z_dim}, {"w_dim", w_dim}, {"channels", channels}};
}

StyleConfig StyleConfig::from_json(const nlohmann::json& j) {
  StyleConfig c;
  c.resolution = j.value("resolution", c.resolution);
  c.z_dim = j.value("z_dim", c.z_dim);
  c.w_dim = j.value("w_dim", c.w_dim);
  c.channels = j.value("channels", c.channels);
  return c;
}

StyleGenerator::StyleGenerator(StyleConfig config, std::uint64_t seed) : config_(std::move(config)) {
  const int layers = static_cast<int>(config_.channels.size());
  if (layers < 1 || (4 << (layers - 1)) != config_.resolution) {
    throw ConfigError("style generator: channel list must double 4 px up to the resolution");
  }
  Rng rng(seed);
  add_dense("map.0", config_.w_dim, config_.z_dim, rng, true, std::sqrt(2.0));
  add_dense("map.1", config_.w_dim, config_.w_dim, rng, true, std::sqrt(2.0));
  add_param("synth.const", randn(config_.channels[0], 16, 1.0, rng));
  int cin = config_.channels[0];
  for (int i = 0; i < layers; ++i) {
    const std::string name = "synth." + std::to_string(i);
    add_dense(name + ".affine", cin, config_.w_dim, rng, false);
    add_param(name + ".affine.bias", ag::Matrix::Ones(cin, 1));
    add_conv(name + ".conv", config_.channels[static_cast<std::size_t>(i)], cin, 3, rng, true);
    cin = config_.channels[static_cast<std::size_t>(i)];
  }
  const std::string rgb = "synth." + std::to_string(layers);
  add_dense(rgb + ".affine", cin, config_.w_dim, rng, false);
  add_param(rgb + ".affine.bias", ag::Matrix::Ones(cin, 1));
  add_conv(rgb + ".conv", 3, cin, 1, rng, true);
}

std::unique_ptr<Backbone> StyleGenerator::clone() const {
  auto copy = std::make_unique<StyleGenerator>(config_);
  copy->copy_state_from(*this);
  return copy;
}

std::vector<std::string> StyleGenerator::select_targets(TargetSelector selector) const {
  if (selector != TargetSelector::gan_affine) {
    throw ConfigError("selector " + std::string(to_string(selector)) + " does not apply to the style generator");
  }
  std::vector<std::string> names;
  for (int i = 0; i < synthesis_layers(); ++i) names.push_back("synth." + std::to_string(i) + ".affine");
  return names;
}

ag::Matrix StyleGenerator::sample_z(int n, Rng& rng) const { return randn(config_.z_dim, n, 1.0, rng); }

ag::Tensor StyleGenerator::mapping(const ag::Tensor& z) const {
  // Pixel-norm of z, then two leaky layers.
  auto x = ag::Tensor::constant(z.value().colwise().normalized() * std::sqrt(float(config_.z_dim)), z.geom());
  x = ag::leaky_relu(dense("map.0", x));
  return ag::leaky_relu(dense("map.1", x));
}

ag::Tensor StyleGenerator::modulated_conv(int layer, const ag::Tensor& x, const ag::Tensor& w, int kernel,
                                          bool demodulate) const {
  const std::string name = "synth." + std::to_string(layer);
  const auto style = linear(name + ".affine", w);  // cin x B
  const auto& weight = param(name + ".conv");
  auto y = ag::conv2d(ag::mul_per_batch(x, style), weight, kernel);
  if (demodulate) {
    // sigma_o = sqrt(sum_{i,k} W_oik^2 s_i^2)
    const auto energy = ag::matmul(ag::kernel_energy(weight, kernel), ag::square(style));
    y = ag::mul_per_batch(y, ag::pow(ag::add_scalar(energy, 1e-8f), -0.5f));
  }
  return ag::add_bias(y, param(name + ".conv.bias"));
}

ag::Tensor StyleGenerator::synthesis(const ag::Tensor& w) const {
  const int batch = static_cast<int>(w.cols());
  std::vector<int> idx;
  idx.reserve(static_cast<std::size_t>(batch) * 16);
  for (int b = 0; b < batch; ++b) {
    for (int p = 0; p < 16; ++p) idx.push_back(p);
  }
  auto x = ag::gather_codes(param("synth.const"), idx, ag::Geom{batch, 4, 4});
  const int layers = static_cast<int>(config_.channels.size());
  for (int i = 0; i < layers; ++i) {
    if (i > 0) x = ag::upsample2(x);
    x = ag::leaky_relu(modulated_conv(i, x, w, 3, true));
  }
  return modulated_conv(layers, x, w, 1, false);
}

ag::Tensor StyleGenerator::forward(const ag::Tensor& z) const { return synthesis(mapping(z)); }

Discriminator::Discriminator(int resolution, std::uint64_t seed) : resolution_(resolution) {
  Rng rng(seed);
  add_conv("d.0", 32, 3, 3, rng, true, std::sqrt(2.0));
  add_conv("d.1", 48, 32, 3, rng, true, std::sqrt(2.0));
  add_conv("d.2", 64, 48, 3, rng, true, std::sqrt(2.0));
  add_dense("d.out", 1, 64, rng);
}

ag::Tensor Discriminator::forward(const ag::Tensor& image) const {
  if (image.geom().height != resolution_) throw ConfigError("discriminator: wrong input resolution");
  auto h = ag::avg_pool2(ag::leaky_relu(conv("d.0", image, 3)));
  h = ag::avg_pool2(ag::leaky_relu(conv("d.1", h, 3)));
  h = ag::leaky_relu(conv("d.2", h, 3));
  return dense("d.out", ag::spatial_mean(h));
}

}  // namespace ilora
