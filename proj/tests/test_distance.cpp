// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include "ilora/distance.hpp"

using namespace ilora;

namespace {

Eigen::MatrixXd random_field(int pixels, Rng& rng) {
  Eigen::MatrixXd m(3, pixels);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double reference_distance(DistanceMetric metric, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const Mask& mask) {
  double cos_sum = 0, abs_sum = 0, sq_sum = 0;
  int valid = 0;
  for (int p = 0; p < x.cols(); ++p) {
    if (!mask(p)) continue;
    ++valid;
    double dot = 0, nx = 0, ny = 0;
    for (int c = 0; c < 3; ++c) {
      dot += x(c, p) * y(c, p);
      nx += x(c, p) * x(c, p);
      ny += y(c, p) * y(c, p);
      abs_sum += std::abs(x(c, p) - y(c, p));
      sq_sum += (x(c, p) - y(c, p)) * (x(c, p) - y(c, p));
    }
    cos_sum += 1.0 - dot / std::sqrt(nx * ny);
  }
  if (metric == DistanceMetric::mse) return sq_sum / (3.0 * valid);
  return cos_sum / valid + abs_sum / (3.0 * valid);
}

}  // namespace

TEST_CASE("opposite normals give 8/3") {
  Eigen::MatrixXd x(3, 16), y(3, 16);
  x.colwise() = Eigen::Vector3d(0, 0, 1);
  y.colwise() = Eigen::Vector3d(0, 0, -1);
  const auto r = distance(DistanceMetric::cos_plus_l1, x, y, Mask::Constant(16, true));
  CHECK(r.value == doctest::Approx(8.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("identical unit fields are at distance zero") {
  Rng rng(1);
  Eigen::MatrixXd x = random_field(25, rng).colwise().normalized();
  CHECK(distance(DistanceMetric::cos_plus_l1, x, x, Mask::Constant(25, true)).value == doctest::Approx(0).epsilon(1e-15));
  CHECK(distance(DistanceMetric::mse, x, x, Mask::Constant(25, true)).value == 0.0);
}

TEST_CASE("distance matches a per-pixel reference") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = rng.uniform_int(1, 64);
    const auto x = random_field(n, rng), y = random_field(n, rng);
    Mask mask(n);
    for (int p = 0; p < n; ++p) mask(p) = rng.bernoulli(0.8);
    mask(0) = true;
    for (auto metric : {DistanceMetric::cos_plus_l1, DistanceMetric::mse}) {
      CHECK(std::abs(distance(metric, x, y, mask).value - reference_distance(metric, x, y, mask)) <= 1e-10);
    }
  }
}

TEST_CASE("masked pixels do not matter") {
  Rng rng(3);
  auto x = random_field(9, rng), y = random_field(9, rng);
  Mask mask = Mask::Constant(9, true);
  mask(4) = false;
  const double before = distance(DistanceMetric::cos_plus_l1, x, y, mask).value;
  x.col(4) *= 100.0;
  CHECK(distance(DistanceMetric::cos_plus_l1, x, y, mask).value == before);
}

TEST_CASE("analytic gradient matches central differences in double") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const auto x = random_field(16, rng), y = random_field(16, rng);
    const Mask mask = Mask::Constant(16, true);
    for (auto metric : {DistanceMetric::cos_plus_l1, DistanceMetric::mse}) {
      const auto r = distance(metric, x, y, mask);
      for (int k = 0; k < x.size(); ++k) {
        const double h = 1e-6;
        Eigen::MatrixXd xp = x, xm = x;
        xp.data()[k] += h;
        xm.data()[k] -= h;
        const double num = (distance(metric, xp, y, mask, false).value - distance(metric, xm, y, mask, false).value) /
                           (2 * h);
        CHECK(std::abs(r.grad.data()[k] - num) <= 1e-4 * std::max(std::abs(num), 1e-3));
      }
    }
  }
}

TEST_CASE("zero vectors use the orthogonal convention") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(3, 2), y(3, 2);
  y.colwise() = Eigen::Vector3d(1, 0, 0);
  x.col(1) = Eigen::Vector3d(1, 0, 0);
  const auto r = distance(DistanceMetric::cos_plus_l1, x, y, Mask::Constant(2, true));
  CHECK(r.degenerate_pixels == 1);
  CHECK(r.value == doctest::Approx(0.5 + 1.0 / 6.0));
}

TEST_CASE("rejections") {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Ones(3, 4);
  CHECK_THROWS_AS(distance(DistanceMetric::mse, x, x, Mask::Constant(4, false)), ConfigError);
  CHECK_THROWS_AS(distance(DistanceMetric::mse, x, Eigen::MatrixXd::Ones(3, 5), Mask::Constant(4, true)), ConfigError);
  CHECK_THROWS_AS(distance(DistanceMetric::cos_plus_l1, Eigen::MatrixXd::Ones(1, 4), Eigen::MatrixXd::Ones(1, 4),
                           Mask::Constant(4, true)),
                  ConfigError);
  CHECK(parse_distance(to_string(DistanceMetric::cos_plus_l1)) == DistanceMetric::cos_plus_l1);
  CHECK_THROWS_AS(parse_distance("huber"), ConfigError);
}

TEST_CASE("autograd wrapper propagates the analytic gradient") {
  Rng rng(5);
  const auto x = random_field(6, rng), y = random_field(6, rng);
  auto leaf = ag::Tensor::leaf(x.cast<float>());
  auto loss = distance_loss(DistanceMetric::cos_plus_l1, leaf, y.cast<float>(), Mask::Constant(6, true));
  loss.backward();
  const auto ref = distance(DistanceMetric::cos_plus_l1, Eigen::MatrixXd(x.cast<float>().cast<double>()),
                            Eigen::MatrixXd(y.cast<float>().cast<double>()), Mask::Constant(6, true));
  CHECK((leaf.grad().cast<double>() - ref.grad).cwiseAbs().maxCoeff() < 1e-6);
}
