// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation metrics for recovered intrinsics, a Frechet quality proxy for
// generated image sets, and rank correlation.
//
// Pixel metrics take channels x pixels fields plus a validity mask. Fields
// from several images can be concatenated column-wise; statistics are then
// pooled over all valid pixels of the set.

#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "ilora/intrinsics.hpp"

namespace ilora {

template <typename Scalar>
struct AngularErrors {
  Scalar mean_deg = 0;
  Scalar median_deg = 0;
};

template <typename Scalar>
struct DepthMetrics {
  Scalar rms = 0;
  Scalar delta_125 = 0;
};

namespace detail {

inline void require_mask(const Mask& mask, Eigen::Index cols) {
  if (mask.size() != cols) throw ConfigError("metric: mask size mismatch");
  if (mask.count() == 0) throw ConfigError("metric: empty mask");
}

template <typename Scalar>
Scalar median_of(std::vector<Scalar> v) {
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const Scalar hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const Scalar lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return (lo + hi) / Scalar(2);
}

}  // namespace detail

/// Per-pixel angle between normal fields, in degrees. Zero-length vectors
/// score 90 degrees.
template <typename DerivedP, typename DerivedG>
AngularErrors<typename DerivedP::Scalar> angular_errors(const Eigen::MatrixBase<DerivedP>& pred,
                                                        const Eigen::MatrixBase<DerivedG>& gt, const Mask& mask) {
  using Scalar = typename DerivedP::Scalar;
  detail::require_mask(mask, pred.cols());
  if (pred.rows() != 3 || gt.rows() != 3 || gt.cols() != pred.cols()) throw ConfigError("angular_errors: shape mismatch");
  std::vector<Scalar> angles;
  angles.reserve(static_cast<std::size_t>(mask.count()));
  Scalar sum = 0;
  for (Eigen::Index p = 0; p < pred.cols(); ++p) {
    if (!mask(p)) continue;
    const Scalar np = pred.col(p).norm(), ng = gt.col(p).norm();
    Scalar deg = 90;
    if (np > Scalar(0) && ng > Scalar(0)) {
      const Scalar c = std::clamp(pred.col(p).dot(gt.col(p)) / (np * ng), Scalar(-1), Scalar(1));
      deg = std::acos(c) * Scalar(180) / std::numbers::pi_v<Scalar>;
    }
    angles.push_back(deg);
    sum += deg;
  }
  AngularErrors<Scalar> r;
  r.mean_deg = sum / Scalar(angles.size());
  r.median_deg = detail::median_of(std::move(angles));
  return r;
}

/// 100 x mean absolute difference over valid pixels and channels.
template <typename DerivedP, typename DerivedG>
typename DerivedP::Scalar l1_error_x100(const Eigen::MatrixBase<DerivedP>& pred, const Eigen::MatrixBase<DerivedG>& gt,
                                        const Mask& mask) {
  using Scalar = typename DerivedP::Scalar;
  detail::require_mask(mask, pred.cols());
  Scalar acc = 0;
  for (Eigen::Index p = 0; p < pred.cols(); ++p) {
    if (mask(p)) acc += (pred.col(p) - gt.col(p)).cwiseAbs().sum();
  }
  return Scalar(100) * acc / Scalar(mask.count() * pred.rows());
}

/// Root mean squared difference over valid pixels and channels.
template <typename DerivedP, typename DerivedG>
typename DerivedP::Scalar rms_error(const Eigen::MatrixBase<DerivedP>& pred, const Eigen::MatrixBase<DerivedG>& gt,
                                    const Mask& mask) {
  using Scalar = typename DerivedP::Scalar;
  detail::require_mask(mask, pred.cols());
  Scalar acc = 0;
  for (Eigen::Index p = 0; p < pred.cols(); ++p) {
    if (mask(p)) acc += (pred.col(p) - gt.col(p)).squaredNorm();
  }
  return std::sqrt(acc / Scalar(mask.count() * pred.rows()));
}

/// Metric depth: RMS and fraction of pixels with max(p/g, g/p) < 1.25.
/// Predictions are clamped to >= 1e-6; no scale alignment.
template <typename DerivedP, typename DerivedG>
DepthMetrics<typename DerivedP::Scalar> depth_metrics(const Eigen::MatrixBase<DerivedP>& pred,
                                                      const Eigen::MatrixBase<DerivedG>& gt, const Mask& mask) {
  using Scalar = typename DerivedP::Scalar;
  detail::require_mask(mask, pred.cols());
  Scalar sq = 0;
  Eigen::Index hits = 0;
  for (Eigen::Index p = 0; p < pred.cols(); ++p) {
    if (!mask(p)) continue;
    const Scalar g = gt(0, p);
    if (!(g > Scalar(0))) throw ConfigError("depth_metrics: non-positive ground truth");
    const Scalar d = std::max(pred(0, p), Scalar(1e-6));
    sq += (d - g) * (d - g);
    if (std::max(d / g, g / d) < Scalar(1.25)) ++hits;
  }
  DepthMetrics<Scalar> r;
  r.rms = std::sqrt(sq / Scalar(mask.count()));
  r.delta_125 = Scalar(hits) / Scalar(mask.count());
  return r;
}

/// Least-squares scale and shift of pred onto gt over valid pixels.
template <typename Scalar>
FieldMatrix<Scalar> align_affine(const FieldMatrix<Scalar>& pred, const FieldMatrix<Scalar>& gt, const Mask& mask) {
  detail::require_mask(mask, pred.cols());
  Eigen::Matrix2d ata = Eigen::Matrix2d::Zero();
  Eigen::Vector2d atb = Eigen::Vector2d::Zero();
  for (Eigen::Index p = 0; p < pred.cols(); ++p) {
    if (!mask(p)) continue;
    const Eigen::Vector2d a(double(pred(0, p)), 1.0);
    ata += a * a.transpose();
    atb += a * double(gt(0, p));
  }
  const Eigen::Vector2d st = ata.ldlt().solve(atb);
  return ((pred.template cast<double>().array() * st(0) + st(1)).matrix()).template cast<Scalar>();
}

struct FrechetResult {
  double value = 0;
  bool ridge_added = false;
};

/// Frechet distance between Gaussian fits of two feature sets (dim x n each).
FrechetResult frechet_distance(const Eigen::MatrixXd& features_a, const Eigen::MatrixXd& features_b);

/// Fixed random convolutional embedding to 64 dims, determined by seed.
class FeatureEmbedder {
 public:
  explicit FeatureEmbedder(std::uint64_t seed);
  static constexpr int kDim = 64;
  Eigen::MatrixXd embed(const std::vector<Image>& images) const;

 private:
  Eigen::MatrixXf conv1_, conv2_;
};

/// Frechet distance between embedded image sets; both need >= 32 images.
FrechetResult quality_proxy(const std::vector<Image>& a, const std::vector<Image>& b, std::uint64_t seed);

/// Ranks with ties sharing their average rank (1-based).
std::vector<double> average_ranks(const std::vector<double>& xs);

/// Spearman rank correlation; n >= 3.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

}  // namespace ilora
