// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <numbers>
#include <numeric>

#include "ilora/metrics.hpp"

using namespace ilora;

namespace {

struct Case {
  Eigen::MatrixXd pred, gt;
  Mask mask;
};

Case random_case(int channels, Rng& rng, bool positive = false) {
  const int h = rng.uniform_int(1, 8), w = rng.uniform_int(1, 8);
  Case c;
  c.pred.resize(channels, h * w);
  c.gt.resize(channels, h * w);
  for (int i = 0; i < c.pred.size(); ++i) {
    c.pred.data()[i] = positive ? rng.uniform(0.5, 10.0) : rng.normal();
    c.gt.data()[i] = positive ? rng.uniform(0.5, 10.0) : rng.normal();
  }
  c.mask.resize(h * w);
  for (int p = 0; p < h * w; ++p) c.mask(p) = rng.bernoulli(0.85);
  c.mask(0) = true;
  return c;
}

// Scalar reference loops.
std::pair<double, double> ref_angles(const Case& c) {
  std::vector<double> a;
  for (int p = 0; p < c.pred.cols(); ++p) {
    if (!c.mask(p)) continue;
    double dot = 0, np = 0, ng = 0;
    for (int k = 0; k < 3; ++k) {
      dot += c.pred(k, p) * c.gt(k, p);
      np += c.pred(k, p) * c.pred(k, p);
      ng += c.gt(k, p) * c.gt(k, p);
    }
    double cs = dot / std::sqrt(np * ng);
    cs = cs > 1 ? 1 : (cs < -1 ? -1 : cs);
    a.push_back(std::acos(cs) * 180.0 / std::numbers::pi);
  }
  double sum = 0;
  for (double v : a) sum += v;
  std::sort(a.begin(), a.end());
  const std::size_t n = a.size();
  const double med = n % 2 ? a[n / 2] : 0.5 * (a[n / 2 - 1] + a[n / 2]);
  return {sum / static_cast<double>(n), med};
}

}  // namespace

TEST_CASE("angular errors: anchors") {
  Eigen::MatrixXd n(3, 4);
  n.colwise() = Eigen::Vector3d(0, 0, 1);
  const Mask all = Mask::Constant(4, true);
  auto r = angular_errors(n, n, all);
  CHECK(r.mean_deg == 0.0);
  CHECK(r.median_deg == 0.0);
  Eigen::MatrixXd rot(3, 4);
  rot.colwise() = Eigen::Vector3d(0, 1, 0);
  r = angular_errors(rot, n, all);
  CHECK(r.mean_deg == doctest::Approx(90.0).epsilon(1e-12));
  CHECK(r.median_deg == doctest::Approx(90.0).epsilon(1e-12));
  rot.col(2).setZero();
  CHECK(angular_errors(rot, n, all).mean_deg == doctest::Approx(90.0));
  CHECK_THROWS_AS(angular_errors(n, n, Mask::Constant(4, false)), ConfigError);
}

TEST_CASE("metrics match scalar loops on random small maps") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const Case c = random_case(3, rng);
    const auto [mean, med] = ref_angles(c);
    const auto r = angular_errors(c.pred, c.gt, c.mask);
    CHECK(std::abs(r.mean_deg - mean) <= 1e-9);
    CHECK(std::abs(r.median_deg - med) <= 1e-9);
    const auto swapped = angular_errors(c.gt, c.pred, c.mask);
    CHECK(std::abs(swapped.mean_deg - r.mean_deg) <= 1e-9);

    double l1 = 0, sq = 0;
    int valid = 0;
    for (int p = 0; p < c.pred.cols(); ++p) {
      if (!c.mask(p)) continue;
      ++valid;
      for (int k = 0; k < 3; ++k) {
        l1 += std::abs(c.pred(k, p) - c.gt(k, p));
        sq += (c.pred(k, p) - c.gt(k, p)) * (c.pred(k, p) - c.gt(k, p));
      }
    }
    CHECK(std::abs(l1_error_x100(c.pred, c.gt, c.mask) - 100.0 * l1 / (3.0 * valid)) <= 1e-9);
    CHECK(std::abs(rms_error(c.pred, c.gt, c.mask) - std::sqrt(sq / (3.0 * valid))) <= 1e-9);

    const Case d = random_case(1, rng, true);
    double dsq = 0;
    int hits = 0, dvalid = 0;
    for (int p = 0; p < d.pred.cols(); ++p) {
      if (!d.mask(p)) continue;
      ++dvalid;
      dsq += (d.pred(0, p) - d.gt(0, p)) * (d.pred(0, p) - d.gt(0, p));
      const double ratio = std::max(d.pred(0, p) / d.gt(0, p), d.gt(0, p) / d.pred(0, p));
      if (ratio < 1.25) ++hits;
    }
    const auto dm = depth_metrics(d.pred, d.gt, d.mask);
    CHECK(std::abs(dm.rms - std::sqrt(dsq / dvalid)) <= 1e-9);
    CHECK(std::abs(dm.delta_125 - double(hits) / dvalid) <= 1e-9);
    CHECK(depth_metrics(d.gt, d.pred, d.mask).delta_125 == dm.delta_125);
  }
}

TEST_CASE("pixel metrics: anchors") {
  Rng rng(12);
  const Case c = random_case(3, rng);
  CHECK(l1_error_x100(c.gt, c.gt, c.mask) == 0.0);
  CHECK(rms_error(c.gt, c.gt, c.mask) == 0.0);
  const Eigen::MatrixXd off = c.gt.array() + 0.1;
  CHECK(l1_error_x100(off, c.gt, c.mask) == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(rms_error(off, c.gt, c.mask) == doctest::Approx(0.1).epsilon(1e-12));

  const Case d = random_case(1, rng, true);
  auto dm = depth_metrics(d.gt, d.gt, d.mask);
  CHECK(dm.rms == 0.0);
  CHECK(dm.delta_125 == 1.0);
  const Eigen::MatrixXd far = d.gt * 1.3;
  CHECK(depth_metrics(far, d.gt, d.mask).delta_125 == 0.0);
}

TEST_CASE("metrics ignore masked pixels and pixel order") {
  Rng rng(13);
  Case c = random_case(3, rng);
  const double before = l1_error_x100(c.pred, c.gt, c.mask);
  const auto angles = angular_errors(c.pred, c.gt, c.mask);
  for (int p = 0; p < c.pred.cols(); ++p) {
    if (!c.mask(p)) c.pred.col(p).setConstant(1e6);
  }
  CHECK(l1_error_x100(c.pred, c.gt, c.mask) == before);
  std::vector<int> order(static_cast<std::size_t>(c.pred.cols()));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  Eigen::MatrixXd pp(3, c.pred.cols()), gp(3, c.pred.cols());
  Mask mp(c.mask.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    pp.col(i) = c.pred.col(order[i]);
    gp.col(i) = c.gt.col(order[i]);
    mp(i) = c.mask(order[i]);
  }
  const auto permuted = angular_errors(pp, gp, mp);
  CHECK(permuted.median_deg == doctest::Approx(angles.median_deg).epsilon(1e-12));
  CHECK(permuted.mean_deg == doctest::Approx(angles.mean_deg).epsilon(1e-12));
}

TEST_CASE("affine alignment recovers scale and shift") {
  FieldMatrix<double> gt(1, 10), pred(1, 10);
  for (int i = 0; i < 10; ++i) {
    gt(0, i) = 1.0 + i;
    pred(0, i) = (gt(0, i) - 0.5) / 2.0;
  }
  const auto aligned = align_affine(pred, gt, Mask::Constant(10, true));
  CHECK((aligned - gt).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("frechet distance: identity, symmetry, shifted copies") {
  Rng rng(14);
  Eigen::MatrixXd a(6, 200), b(6, 200);
  for (int i = 0; i < a.size(); ++i) {
    a.data()[i] = rng.normal();
    b.data()[i] = rng.normal(0.3, 1.5);
  }
  CHECK(frechet_distance(a, a).value <= 1e-6);
  CHECK(std::abs(frechet_distance(a, b).value - frechet_distance(b, a).value) <= 1e-8);
  // Same covariance, means m apart: distance is exactly m^2.
  Eigen::VectorXd shift(6);
  shift << 1, -2, 0.5, 0, 3, -1;
  const Eigen::MatrixXd moved = a.colwise() + shift;
  CHECK(frechet_distance(a, moved).value == doctest::Approx(shift.squaredNorm()).epsilon(1e-8));
  // Rank-deficient features trigger the ridge.
  Eigen::MatrixXd flat = a;
  flat.row(5).setZero();
  CHECK(frechet_distance(flat, flat).ridge_added);
}

TEST_CASE("quality proxy on images") {
  Rng rng(15);
  const auto make = [&](double brightness) {
    std::vector<Image> set;
    for (int i = 0; i < 32; ++i) {
      Image img;
      img.height = img.width = 8;
      img.data.resize(3, 64);
      for (int k = 0; k < img.data.size(); ++k) img.data.data()[k] = static_cast<float>(brightness + 0.3 * rng.normal());
      set.push_back(img);
    }
    return set;
  };
  const auto a = make(0.0), b = make(0.6);
  CHECK(quality_proxy(a, a, 7).value <= 1e-6);
  CHECK(std::abs(quality_proxy(a, b, 7).value - quality_proxy(b, a, 7).value) <= 1e-8);
  CHECK(quality_proxy(a, b, 7).value > 0.0);
  CHECK_THROWS_AS(quality_proxy(std::vector<Image>(a.begin(), a.begin() + 31), b, 7), ConfigError);
}

TEST_CASE("spearman") {
  std::vector<double> xs = {3, 1, 4, 1.5, 9, 2.6};
  std::vector<double> neg;
  for (double x : xs) neg.push_back(-x);
  CHECK(spearman(xs, xs) == doctest::Approx(1.0));
  CHECK(spearman(xs, neg) == doctest::Approx(-1.0));
  CHECK(average_ranks({10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  CHECK_THROWS_AS(spearman({1, 2}, {1, 2}), ConfigError);

  Rng rng(16);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.uniform_int(3, 12);
    std::vector<double> a(n), b(n);
    for (int i = 0; i < n; ++i) {
      a[i] = rng.uniform_int(0, 5);
      b[i] = rng.uniform_int(0, 5);
    }
    // Brute-force ranks: 1 + #smaller + (#equal - 1) / 2.
    const auto brute = [&](const std::vector<double>& v) {
      std::vector<double> r(n);
      for (int i = 0; i < n; ++i) {
        int less = 0, eq = 0;
        for (int j = 0; j < n; ++j) {
          less += v[j] < v[i];
          eq += v[j] == v[i];
        }
        r[i] = 1 + less + (eq - 1) / 2.0;
      }
      return r;
    };
    CHECK(average_ranks(a) == brute(a));
  }
}
