// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Training distances between a predicted field and its target, with
// analytic gradients in the prediction.
//
//   cos_plus_l1:  mean_p [1 - cos(x_p, y_p)]  +  mean_{p,c} |x_pc - y_pc|
//   mse:          mean_{p,c} (x_pc - y_pc)^2
//
// Means run over valid (mask = true) pixels only.

#pragma once

#include <Eigen/Dense>

#include <cmath>

#include "ilora/autograd.hpp"
#include "ilora/intrinsics.hpp"

namespace ilora {

enum class DistanceMetric : std::uint8_t { cos_plus_l1, mse };

std::string_view to_string(DistanceMetric metric);
DistanceMetric parse_distance(std::string_view text);

template <typename Scalar>
struct DistanceResult {
  Scalar value = 0;
  FieldMatrix<Scalar> grad;     // d value / d x, same shape as x (empty if not requested)
  int degenerate_pixels = 0;    // zero-norm vectors under cos_plus_l1
};

template <typename DerivedX, typename DerivedY>
DistanceResult<typename DerivedX::Scalar> distance(DistanceMetric metric, const Eigen::MatrixBase<DerivedX>& x,
                                                   const Eigen::MatrixBase<DerivedY>& y, const Mask& mask,
                                                   bool with_grad = true) {
  using Scalar = typename DerivedX::Scalar;
  if (x.rows() != y.rows() || x.cols() != y.cols() || mask.size() != x.cols()) {
    throw ConfigError("distance: shape mismatch");
  }
  const Eigen::Index channels = x.rows();
  const Eigen::Index valid = mask.count();
  if (valid == 0) throw ConfigError("distance: empty mask");

  DistanceResult<Scalar> r;
  if (with_grad) r.grad = FieldMatrix<Scalar>::Zero(x.rows(), x.cols());
  const Scalar nv = Scalar(valid);
  const Scalar nvc = Scalar(valid * channels);

  if (metric == DistanceMetric::mse) {
    Scalar acc = 0;
    for (Eigen::Index p = 0; p < x.cols(); ++p) {
      if (!mask(p)) continue;
      for (Eigen::Index c = 0; c < channels; ++c) {
        const Scalar d = x(c, p) - y(c, p);
        acc += d * d;
        if (with_grad) r.grad(c, p) = Scalar(2) * d / nvc;
      }
    }
    r.value = acc / nvc;
    return r;
  }

  if (channels != 3) throw ConfigError("cos_plus_l1 needs 3-channel direction fields");
  Scalar cos_term = 0, l1_term = 0;
  for (Eigen::Index p = 0; p < x.cols(); ++p) {
    if (!mask(p)) continue;
    const auto xp = x.col(p);
    const auto yp = y.col(p);
    const Scalar nx = xp.norm(), ny = yp.norm();
    if (nx < Scalar(1e-12) || ny < Scalar(1e-12)) {
      cos_term += Scalar(1);  // orthogonal convention, zero gradient
      ++r.degenerate_pixels;
    } else {
      const Scalar dot = xp.dot(yp);
      cos_term += Scalar(1) - dot / (nx * ny);
      if (with_grad) {
        // d cos / d x = y / (|x||y|) - (x.y) x / (|x|^3 |y|)
        r.grad.col(p) -= (yp / (nx * ny) - xp * (dot / (nx * nx * nx * ny))) / nv;
      }
    }
    for (Eigen::Index c = 0; c < 3; ++c) {
      const Scalar d = xp(c) - yp(c);
      l1_term += std::abs(d);
      if (with_grad) r.grad(c, p) += (d > 0 ? Scalar(1) : (d < 0 ? Scalar(-1) : Scalar(0))) / nvc;
    }
  }
  r.value = cos_term / nv + l1_term / nvc;
  return r;
}

/// Autograd wrapper: scalar loss node whose gradient flows into pred.
ag::Tensor distance_loss(DistanceMetric metric, const ag::Tensor& pred, const ag::Matrix& target, const Mask& mask);

}  // namespace ilora
