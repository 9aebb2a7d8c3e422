// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

// Noise schedules, v-parameterization algebra and a deterministic
// first-order (DDIM) sampler with classifier-free guidance.
//
//   x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
//   v   = sqrt(ab_t) eps - sqrt(1 - ab_t) x0

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "ilora/autograd.hpp"
#include "ilora/common.hpp"

namespace ilora {

enum class Parameterization : std::uint8_t { epsilon, v };

std::string_view to_string(Parameterization p);
Parameterization parse_parameterization(std::string_view text);

struct NoiseSchedule {
  int T = 1000;
  std::vector<double> alpha_bar;  // T + 1 entries, alpha_bar[0] = 1
  Parameterization parameterization = Parameterization::v;
  bool zero_terminal_snr = false;

  double signal(int t) const { return std::sqrt(at(t)); }
  double noise(int t) const { return std::sqrt(1.0 - at(t)); }
  double at(int t) const;

  /// betas = linspace(sqrt(beta_start), sqrt(beta_end), T)^2.
  static NoiseSchedule scaled_linear(int steps = 1000, double beta_start = 0.00085, double beta_end = 0.012,
                                     Parameterization p = Parameterization::v);
};

/// Shifts and scales sqrt(alpha_bar[1..T]) so that alpha_bar[T] = 0 while
/// alpha_bar[1] keeps its value. Only valid for v-prediction.
NoiseSchedule zero_snr_rescale(const NoiseSchedule& schedule);

/// scaled_linear, zero-SNR rescaled when p = v.
NoiseSchedule default_schedule(Parameterization p = Parameterization::v);

template <typename D1, typename D2>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, Eigen::Dynamic> add_noise(const Eigen::MatrixBase<D1>& x0,
                                                                             const Eigen::MatrixBase<D2>& eps, int t,
                                                                             const NoiseSchedule& s) {
  using Scalar = typename D1::Scalar;
  return Scalar(s.signal(t)) * x0 + Scalar(s.noise(t)) * eps;
}

template <typename D1, typename D2>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, Eigen::Dynamic> v_target(const Eigen::MatrixBase<D1>& x0,
                                                                            const Eigen::MatrixBase<D2>& eps, int t,
                                                                            const NoiseSchedule& s) {
  using Scalar = typename D1::Scalar;
  return Scalar(s.signal(t)) * eps - Scalar(s.noise(t)) * x0;
}

template <typename D1, typename D2>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, Eigen::Dynamic> x0_from_v(const Eigen::MatrixBase<D1>& xt,
                                                                             const Eigen::MatrixBase<D2>& v, int t,
                                                                             const NoiseSchedule& s) {
  using Scalar = typename D1::Scalar;
  return Scalar(s.signal(t)) * xt - Scalar(s.noise(t)) * v;
}

template <typename D1, typename D2>
Eigen::Matrix<typename D1::Scalar, Eigen::Dynamic, Eigen::Dynamic> eps_from_v(const Eigen::MatrixBase<D1>& xt,
                                                                              const Eigen::MatrixBase<D2>& v, int t,
                                                                              const NoiseSchedule& s) {
  using Scalar = typename D1::Scalar;
  return Scalar(s.noise(t)) * xt + Scalar(s.signal(t)) * v;
}

struct CfgParams {
  double scale = 3.0;
  int steps = 10;
};

/// Descending "trailing" timesteps T, T - T/S, ..., each >= 1.
std::vector<int> sampling_timesteps(int T, int steps);

/// Model output (v or eps per the schedule) for state x at step t; null
/// selects the unconditional branch.
using ModelFn = std::function<ag::Matrix(const ag::Matrix& x, int t, bool null)>;

/// Deterministic first-order sampling from x_T. Guided output is
/// null + scale (cond - null); scale = 1 skips the null branch. Returns the
/// final x0 estimate.
ag::Matrix ddim_sample(const NoiseSchedule& schedule, const ModelFn& model, ag::Matrix x, const CfgParams& cfg);

}  // namespace ilora
