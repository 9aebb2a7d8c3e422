// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <set>

#include "ilora/checkpoint.hpp"
#include "ilora/style_gan.hpp"
#include "ilora/unet.hpp"
#include "ilora/vq.hpp"

using namespace ilora;
namespace fs = std::filesystem;

namespace {

UNetConfig small_unet() {
  UNetConfig c;
  c.resolution = 16;
  c.channels = {16, 16, 24};
  c.context_dim = 8;
  c.context_tokens = 2;
  c.time_dim = 16;
  return c;
}

ag::Tensor random_images(int batch, int res, Rng& rng) {
  ag::Matrix m(3, batch * res * res);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.uniform(-1, 1));
  return ag::Tensor::constant(m, ag::Geom{batch, res, res});
}

}  // namespace

TEST_CASE("unet shapes, names and determinism") {
  UNet net(small_unet(), 1);
  Rng rng(1);
  const auto x = random_images(2, 16, rng);
  ag::NoGradGuard guard;
  const auto y = net.forward(x, {1, 500}, {TaskToken::normal, TaskToken::image});
  CHECK(y.rows() == 3);
  CHECK(y.geom() == x.geom());
  CHECK(y.value() == net.forward(x, {1, 500}, {TaskToken::normal, TaskToken::image}).value());

  const auto weights = net.named_weights();
  std::set<std::string> names;
  std::size_t total = 0;
  for (const auto& w : weights) {
    names.insert(w.name);
    total += w.size();
  }
  CHECK(names.size() == weights.size());
  CHECK(total == net.parameter_count());
  int projections = 0;
  for (const auto& w : weights) {
    if (w.name.find(".self.") != std::string::npos || w.name.find(".cross.") != std::string::npos) {
      if (w.name.find(".norm.") == std::string::npos) ++projections;
    }
  }
  CHECK(projections == 16);
  CHECK(UNet(small_unet(), 1).weights_hash() == net.weights_hash());
  CHECK_FALSE(UNet(small_unet(), 2).weights_hash() == net.weights_hash());
}

TEST_CASE("input extension") {
  UNet net(small_unet(), 1);
  Rng rng(2);
  const auto x = random_images(2, 16, rng);
  const auto before = net.weights_hash();
  const auto base = net.input_projection(x).value();
  net.extend_input_channels();
  CHECK_THROWS_AS(net.extend_input_channels(), ConfigError);
  CHECK(net.weights_hash({"in_conv"}) == UNet(small_unet(), 1).weights_hash({"in_conv"}));
  const auto doubled = net.input_projection(x, &x).value();
  CHECK((doubled - 2.0f * base).cwiseAbs().maxCoeff() <= 1e-5f);
  CHECK_FALSE(net.weights_hash() == before);
  ag::NoGradGuard guard;
  CHECK(net.forward(x, {1, 1}, {TaskToken::depth, TaskToken::depth}, &x).geom() == x.geom());
  CHECK_THROWS_AS(net.forward(x, {1, 1}, {TaskToken::depth, TaskToken::depth}), ConfigError);
  net.set_trainable(true);
  for (const auto& t : net.trainable_parameters()) CHECK(t.node() != net.param("in_conv.cond").node());
}

TEST_CASE("style generator") {
  StyleConfig sc;
  sc.resolution = 16;
  sc.channels = {16, 16, 16};
  StyleGenerator gen(sc, 1);
  CHECK(gen.select_targets(TargetSelector::gan_affine).size() == static_cast<std::size_t>(gen.synthesis_layers()));
  CHECK_THROWS_AS(gen.select_targets(TargetSelector::all_attn), ConfigError);
  Rng rng(3);
  const auto z = ag::Tensor::constant(gen.sample_z(3, rng));
  ag::NoGradGuard guard;
  const auto img = gen.forward(z);
  CHECK(img.geom() == (ag::Geom{3, 16, 16}));
  CHECK(img.value() == gen.forward(z).value());
  Discriminator d(16, 1);
  CHECK(d.forward(img).cols() == 3);
}

TEST_CASE("vq autoencoder") {
  VQConfig vc;
  vc.resolution = 16;
  VQAutoencoder vq(vc, 1);
  Rng rng(4);
  const auto x = random_images(2, 16, rng);
  const auto z = vq.encode(x);
  const auto q = vq.quantize(z);
  const auto& cb = vq.param("codebook").value();
  for (Eigen::Index n = 0; n < q.straight_through.cols(); ++n) {
    CHECK(q.straight_through.value().col(n) == cb.col(q.indices[static_cast<std::size_t>(n)]));
  }
  ag::NoGradGuard guard;
  CHECK(vq.decode_indices(q.indices, 2).geom() == x.geom());
  CHECK(vq.select_targets(TargetSelector::vq_decoder_attn).size() == 4);
}

TEST_CASE("checkpoints round trip") {
  const fs::path p = fs::temp_directory_path() / ("ilora_ck_" + std::to_string(::getpid()));
  UNet net(small_unet(), 5);
  net.extend_input_channels();
  save_checkpoint(net, p);
  const auto back = load_checkpoint_as<UNet>(p);
  CHECK(back->weights_hash() == net.weights_hash());
  CHECK(back->fingerprint() == net.fingerprint());
  CHECK(back->extended());
  CHECK_THROWS_AS(load_checkpoint_as<VQAutoencoder>(p), FormatError);

  StyleConfig sc;
  sc.resolution = 16;
  sc.channels = {16, 16, 16};
  StyleGenerator gen(sc, 2);
  save_checkpoint(gen, p);
  CHECK(load_checkpoint(p)->weights_hash() == gen.weights_hash());
  fs::resize_file(p, fs::file_size(p) - 1);
  CHECK_THROWS_AS(load_checkpoint(p), FormatError);
  fs::remove(p);
}
