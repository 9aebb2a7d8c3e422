// Copyright 2026 The ilora Authors
// SPDX-License-Identifier: Apache-2.0

#include "ilora/diffusion.hpp"

#include <string>

namespace ilora {

std::string_view to_string(Parameterization p) { return p == Parameterization::v ? "v" : "epsilon"; }

Parameterization parse_parameterization(std::string_view text) {
  if (text == "v") return Parameterization::v;
  if (text == "epsilon") return Parameterization::epsilon;
  throw ConfigError("unknown parameterization '" + std::string(text) + "' (expected v or epsilon)");
}

double NoiseSchedule::at(int t) const {
  if (t < 0 || t > T) throw ConfigError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + "]");
  return alpha_bar[static_cast<std::size_t>(t)];
}

NoiseSchedule NoiseSchedule::scaled_linear(int steps, double beta_start, double beta_end, Parameterization p) {
  if (steps < 2) throw ConfigError("noise schedule needs at least 2 steps");
  if (!(0 < beta_start && beta_start < beta_end && beta_end < 1)) throw ConfigError("noise schedule: bad beta range");
  NoiseSchedule s;
  s.T = steps;
  s.parameterization = p;
  s.alpha_bar.resize(static_cast<std::size_t>(steps) + 1);
  s.alpha_bar[0] = 1.0;
  const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double r = a + (b - a) * double(i) / double(steps - 1);
    prod *= 1.0 - r * r;
    s.alpha_bar[static_cast<std::size_t>(i) + 1] = prod;
  }
  return s;
}

NoiseSchedule zero_snr_rescale(const NoiseSchedule& schedule) {
  if (schedule.parameterization != Parameterization::v) {
    throw ConfigError("zero terminal SNR requires a v-prediction schedule: with alpha_bar[T] = 0 an epsilon "
                      "model cannot recover x0 at the first sampling step");
  }
  NoiseSchedule out = schedule;
  const double s1 = std::sqrt(schedule.alpha_bar[1]);
  const double sT = std::sqrt(schedule.alpha_bar.back());
  for (int t = 1; t <= schedule.T; ++t) {
    const double s = std::sqrt(schedule.alpha_bar[static_cast<std::size_t>(t)]);
    const double r = (s - sT) * s1 / (s1 - sT);
    out.alpha_bar[static_cast<std::size_t>(t)] = r * r;
  }
  out.alpha_bar[1] = schedule.alpha_bar[1];
  out.alpha_bar.back() = 0.0;
  out.zero_terminal_snr = true;
  return out;
}

NoiseSchedule default_schedule(Parameterization p) {
  auto s = NoiseSchedule::scaled_linear(1000, 0.00085, 0.012, p);
  return p == Parameterization::v ? zero_snr_rescale(s) : s;
}

std::vector<int> sampling_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw ConfigError("sampling steps must lie in [1, " + std::to_string(T) + "]");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    ts.push_back(std::max(1, static_cast<int>(std::lround(T - double(i) * T / steps))));
  }
  return ts;
}

ag::Matrix ddim_sample(const NoiseSchedule& schedule, const ModelFn& model, ag::Matrix x, const CfgParams& cfg) {
  if (!(cfg.scale >= 1.0)) throw ConfigError("guidance scale must be >= 1");
  const auto ts = sampling_timesteps(schedule.T, cfg.steps);
  const auto scale = static_cast<float>(cfg.scale);
  ag::Matrix x0;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const int t = ts[i];
    const int prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    ag::Matrix out = model(x, t, false);
    if (cfg.scale != 1.0) {
      const ag::Matrix null = model(x, t, true);
      out = null + scale * (out - null);
    }
    ag::Matrix eps;
    if (schedule.parameterization == Parameterization::v) {
      x0 = x0_from_v(x, out, t, schedule);
      eps = eps_from_v(x, out, t, schedule);
    } else {
      eps = out;
      x0 = (x - float(schedule.noise(t)) * eps) / float(schedule.signal(t));
    }
    x = float(schedule.signal(prev)) * x0 + float(schedule.noise(prev)) * eps;
  }
  return x0;
}

}  // namespace ilora
