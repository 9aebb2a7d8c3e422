// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/metrics.hpp"

#include <numeric>

#include "ilora/autograd.hpp"

namespace ilora {

namespace {

Eigen::MatrixXd covariance(const Eigen::MatrixXd& f, const Eigen::VectorXd& mu) {
  const Eigen::MatrixXd centered = f.colwise() - mu;
  return centered * centered.transpose() / static_cast<double>(f.cols() - 1);
}

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

FrechetResult frechet_distance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows()) throw ConfigError("frechet_distance: feature dimension mismatch");
  if (a.cols() < 2 || b.cols() < 2) throw ConfigError("frechet_distance: need at least two samples per set");
  const Eigen::VectorXd mu_a = a.rowwise().mean(), mu_b = b.rowwise().mean();
  Eigen::MatrixXd sa = covariance(a, mu_a), sb = covariance(b, mu_b);

  FrechetResult r;
  const auto degenerate = [](const Eigen::MatrixXd& s) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() < 1e-10;
  };
  if (degenerate(sa) || degenerate(sb)) {
    const Eigen::MatrixXd ridge = 1e-6 * Eigen::MatrixXd::Identity(sa.rows(), sa.cols());
    sa += ridge;
    sb += ridge;
    r.ridge_added = true;
  }
  // tr((Sa Sb)^1/2) = tr((Sa^1/2 Sb Sa^1/2)^1/2), which stays symmetric.
  const Eigen::MatrixXd ra = sqrt_psd(sa);
  const Eigen::MatrixXd inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  r.value = std::max(0.0, (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * tr_sqrt);
  return r;
}

FeatureEmbedder::FeatureEmbedder(std::uint64_t seed) {
  Rng rng(seed);
  conv1_.resize(16, 27);
  conv2_.resize(32, 144);
  for (int i = 0; i < conv1_.size(); ++i) conv1_.data()[i] = static_cast<float>(rng.normal(0, 1.0 / std::sqrt(27.0)));
  for (int i = 0; i < conv2_.size(); ++i) conv2_.data()[i] = static_cast<float>(rng.normal(0, 1.0 / std::sqrt(144.0)));
}

Eigen::MatrixXd FeatureEmbedder::embed(const std::vector<Image>& images) const {
  ag::NoGradGuard guard;
  const auto w1 = ag::Tensor::constant(conv1_);
  const auto w2 = ag::Tensor::constant(conv2_);
  Eigen::MatrixXd out(kDim, static_cast<Eigen::Index>(images.size()));
  for (std::size_t i = 0; i < images.size(); ++i) {
    const auto& img = images[i];
    auto x = ag::Tensor::constant(img.data, ag::Geom{1, img.height, img.width});
    auto h = ag::relu(ag::conv2d(x, w1, 3));
    h = ag::relu(ag::conv2d(ag::avg_pool2(h), w2, 3));
    const Eigen::MatrixXd v = h.value().cast<double>();
    const Eigen::VectorXd mu = v.rowwise().mean();
    const Eigen::VectorXd sd = ((v.colwise() - mu).array().square().rowwise().mean()).sqrt();
    out.col(static_cast<Eigen::Index>(i)) << mu, sd;
  }
  return out;
}

FrechetResult quality_proxy(const std::vector<Image>& a, const std::vector<Image>& b, std::uint64_t seed) {
  if (a.size() < 32 || b.size() < 32) throw ConfigError("quality_proxy: need at least 32 images per set");
  const FeatureEmbedder embedder(seed);
  return frechet_distance(embedder.embed(a), embedder.embed(b));
}

std::vector<double> average_ranks(const std::vector<double>& xs) {
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return xs[i] < xs[j]; });
  std::vector<double> ranks(xs.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && xs[order[j + 1]] == xs[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size()) throw ConfigError("spearman: length mismatch");
  if (xs.size() < 3) throw ConfigError("spearman: need at least 3 points");
  const auto rx = average_ranks(xs), ry = average_ranks(ys);
  const auto n = static_cast<double>(xs.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

}  // namespace ilora
