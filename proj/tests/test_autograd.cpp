// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <functional>

#include "ilora/autograd.hpp"
#include "ilora/common.hpp"

using namespace ilora;
using ag::Geom;
using ag::Matrix;
using ag::Tensor;

namespace {

Matrix randn(int r, int c, Rng& rng, double s = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(rng.normal(0, s));
  return m;
}

// Projects the op output onto a fixed random direction and compares the
// gradient of that scalar against central differences.
void check_gradients(const std::function<Tensor(std::vector<Tensor>&)>& op, std::vector<Matrix> inputs,
                     std::vector<Geom> geoms, std::uint64_t seed = 1) {
  Rng rng(seed);
  std::vector<Tensor> leaves;
  for (std::size_t i = 0; i < inputs.size(); ++i) leaves.push_back(Tensor::leaf(inputs[i], true, geoms[i]));
  Tensor out = op(leaves);
  const Matrix dir = randn(static_cast<int>(out.rows()), static_cast<int>(out.cols()), rng);
  Tensor loss = ag::sum(ag::mul(out, Tensor::constant(dir, out.geom())));
  loss.backward();

  const auto eval = [&](std::vector<Matrix>& vals) {
    ag::NoGradGuard guard;
    std::vector<Tensor> ls;
    for (std::size_t i = 0; i < vals.size(); ++i) ls.push_back(Tensor::constant(vals[i], geoms[i]));
    return static_cast<double>(op(ls).value().cwiseProduct(dir).cast<double>().sum());
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Matrix analytic = leaves[i].grad();
    for (int k = 0; k < inputs[i].size(); ++k) {
      std::vector<Matrix> plus = inputs, minus = inputs;
      const float h = 1e-2f;
      plus[i].data()[k] += h;
      minus[i].data()[k] -= h;
      const double numeric = (eval(plus) - eval(minus)) / (2.0 * h);
      const double a = analytic.data()[k];
      CHECK_MESSAGE(std::abs(a - numeric) <= 2e-2 * std::max(1.0, std::abs(numeric)),
                    "input ", i, " entry ", k, " analytic ", a, " numeric ", numeric);
    }
  }
}

}  // namespace

TEST_CASE("elementwise and broadcasting gradients") {
  Rng rng(3);
  const Geom g{2, 2, 3};
  check_gradients([](auto& t) { return ag::silu(ag::mul(t[0], t[1])); }, {randn(4, 12, rng), randn(4, 12, rng)},
                  {g, g});
  check_gradients([](auto& t) { return ag::tanh(ag::sub(t[0], ag::scale(t[1], 0.5f))); },
                  {randn(3, 5, rng), randn(3, 5, rng)}, {Geom{1, 1, 5}, Geom{1, 1, 5}});
  check_gradients([](auto& t) { return ag::softplus(ag::add_scalar(t[0], 0.3f)); }, {randn(3, 4, rng)},
                  {Geom{1, 1, 4}});
  check_gradients([](auto& t) { return ag::mul_channel(ag::add_bias(t[0], t[1]), t[2]); },
                  {randn(4, 12, rng), randn(4, 1, rng), randn(4, 1, rng)}, {g, Geom{}, Geom{}});
  check_gradients([](auto& t) { return ag::mul_per_batch(ag::add_per_batch(t[0], t[1]), t[2]); },
                  {randn(4, 12, rng), randn(4, 2, rng), randn(4, 2, rng)}, {g, Geom{1, 1, 2}, Geom{1, 1, 2}});
  Matrix pos = randn(3, 4, rng).cwiseAbs();
  pos.array() += 0.5f;
  check_gradients([](auto& t) { return ag::pow(t[0], -0.5f); }, {pos}, {Geom{1, 1, 4}});
}

TEST_CASE("linear algebra gradients") {
  Rng rng(4);
  check_gradients([](auto& t) { return ag::matmul(t[0], t[1]); }, {randn(3, 4, rng), randn(4, 5, rng)},
                  {Geom{1, 1, 4}, Geom{1, 1, 5}});
  check_gradients([](auto& t) { return ag::slice_channels(ag::concat_channels(t[0], t[1]), 1, 4); },
                  {randn(2, 6, rng), randn(3, 6, rng)}, {Geom{1, 2, 3}, Geom{1, 2, 3}});
  check_gradients([](auto& t) { return ag::repeat_batch(t[0], 3); }, {randn(2, 4, rng)}, {Geom{1, 4, 1}});
}

TEST_CASE("spatial gradients") {
  Rng rng(5);
  const Geom g{2, 4, 4};
  check_gradients([](auto& t) { return ag::conv2d(t[0], t[1], 3); }, {randn(3, 32, rng), randn(2, 27, rng)},
                  {g, Geom{1, 1, 27}});
  check_gradients([](auto& t) { return ag::conv2d(t[0], t[1], 1); }, {randn(3, 32, rng), randn(2, 3, rng)},
                  {g, Geom{1, 1, 3}});
  check_gradients([](auto& t) { return ag::kernel_energy(t[0], 3); }, {randn(2, 27, rng)}, {Geom{1, 1, 27}});
  check_gradients([](auto& t) { return ag::upsample2(ag::avg_pool2(t[0])); }, {randn(3, 32, rng)}, {g});
  check_gradients([](auto& t) { return ag::group_norm(t[0], 2); }, {randn(4, 32, rng)}, {g});
  check_gradients([](auto& t) { return ag::spatial_mean(t[0]); }, {randn(4, 32, rng)}, {g});
}

TEST_CASE("conv2d matches a direct loop") {
  Rng rng(6);
  const Geom g{1, 3, 4};
  const Matrix x = randn(2, 12, rng), w = randn(3, 18, rng);
  const Matrix y = ag::conv2d(Tensor::constant(x, g), Tensor::constant(w), 3).value();
  for (int o = 0; o < 3; ++o) {
    for (int py = 0; py < 3; ++py) {
      for (int px = 0; px < 4; ++px) {
        double acc = 0;
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const int sy = py + ky - 1, sx = px + kx - 1;
            if (sy < 0 || sy >= 3 || sx < 0 || sx >= 4) continue;
            for (int c = 0; c < 2; ++c) acc += w(o, (ky * 3 + kx) * 2 + c) * x(c, sy * 4 + sx);
          }
        }
        CHECK(y(o, py * 4 + px) == doctest::Approx(acc).epsilon(1e-5));
      }
    }
  }
}

TEST_CASE("attention gradients and row-stochastic weights") {
  Rng rng(7);
  const Geom gq{2, 3, 1}, gk{2, 4, 1};
  check_gradients([](auto& t) { return ag::attention(t[0], t[1], t[2], 4); },
                  {randn(3, 6, rng), randn(3, 8, rng), randn(3, 8, rng)}, {gq, gk, gk});
  // With identical values every output equals that value.
  Matrix v = Matrix::Ones(3, 8);
  const Matrix o = ag::attention(Tensor::constant(randn(3, 6, rng), gq), Tensor::constant(randn(3, 8, rng), gk),
                                 Tensor::constant(v, gk), 4)
                       .value();
  CHECK((o.array() - 1.0f).abs().maxCoeff() < 1e-6f);
}

TEST_CASE("mse and quantizer") {
  Rng rng(8);
  const Matrix target = randn(3, 5, rng);
  check_gradients([&](auto& t) { return ag::mse(t[0], target); }, {randn(3, 5, rng)}, {Geom{1, 1, 5}});

  Matrix codebook(2, 3);
  codebook << 0, 1, -1, 0, 1, 1;
  Matrix z(2, 2);
  z << 0.9f, -0.8f, 0.8f, 1.2f;
  auto zt = Tensor::leaf(z);
  auto cb = Tensor::leaf(codebook);
  auto q = ag::quantize(zt, cb);
  CHECK(q.indices == std::vector<int>{1, 2});
  CHECK(q.straight_through.value().col(0) == codebook.col(1));
  auto loss = ag::sum(ag::add(q.straight_through, q.codes));
  loss.backward();
  CHECK(zt.grad().isApproxToConstant(1.0f));
  CHECK(cb.grad()(0, 1) == 1.0f);
  CHECK(cb.grad()(0, 0) == 0.0f);
}

TEST_CASE("no-grad mode records nothing") {
  auto w = Tensor::leaf(Matrix::Ones(2, 2));
  Tensor y;
  {
    ag::NoGradGuard guard;
    y = ag::matmul(w, Tensor::constant(Matrix::Ones(2, 1)));
  }
  CHECK_FALSE(y.requires_grad());
  CHECK(ag::grad_enabled());
}

TEST_CASE("adam moves a quadratic towards its minimum") {
  auto x = Tensor::leaf(Matrix::Constant(2, 1, 3.0f));
  ag::Adam opt({x}, {.lr = 0.1f});
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    auto loss = ag::sum(ag::square(x));
    loss.backward();
    opt.step();
  }
  CHECK(x.value().cwiseAbs().maxCoeff() < 0.05f);
}
