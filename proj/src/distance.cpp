// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/distance.hpp"

namespace ilora {

std::string_view to_string(DistanceMetric metric) {
  return metric == DistanceMetric::mse ? "mse" : "cos_plus_l1";
}

DistanceMetric parse_distance(std::string_view text) {
  if (text == "mse") return DistanceMetric::mse;
  if (text == "cos_plus_l1") return DistanceMetric::cos_plus_l1;
  throw ConfigError("unknown distance metric: " + std::string(text));
}

ag::Tensor distance_loss(DistanceMetric metric, const ag::Tensor& pred, const ag::Matrix& target, const Mask& mask) {
  const Eigen::MatrixXd x = pred.value().cast<double>();
  const Eigen::MatrixXd y = target.cast<double>();
  auto r = distance(metric, x, y, mask, ag::grad_enabled() && pred.requires_grad());
  if (!std::isfinite(r.value)) throw DivergenceError("distance: non-finite loss");
  ag::Matrix out(1, 1);
  out(0, 0) = static_cast<float>(r.value);
  ag::Matrix grad = r.grad.cast<float>();
  return ag::make_op(std::move(out), ag::Geom{}, {pred}, [grad = std::move(grad)](ag::Node& s) {
    s.parents[0]->accumulate(grad * s.grad(0, 0));
  });
}

}  // namespace ilora
