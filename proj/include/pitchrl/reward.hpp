#pragma once

#include <cmath>

#include "pitchrl/errors.hpp"
#include "pitchrl/flight_dynamics.hpp"

namespace pitchrl {

struct RewardConfig {
  double w1 = 1.0;   // tracking error
  double w2 = 10.0;  // actuation bound violation
  double w3 = 0.05;  // actuation slope
  double w4 = 2.0;   // smooth-tracking bonus
  double eta_max = 15.0 * kDegToRad;
  double e_u_max = 0.01;
  double bonus_error = 3.0;  // g
  double bonus_eta = 0.2;    // rad

  void validate() const {
    if (w1 < 0.0 || w2 < 0.0 || w3 < 0.0 || w4 < 0.0)
      throw InvalidArgument("reward weights must be >= 0");
    if (!(e_u_max > 0.0)) throw InvalidArgument("reward.e_u_max must be > 0");
    if (!(eta_max > 0.0)) throw InvalidArgument("reward.eta_max must be > 0");
  }
};

struct RewardTerms {
  double f1 = 0.0, f2 = 0.0, f3 = 0.0, f4 = 0.0;
  double total = 0.0;
};

/// Per-step reward. `e_u` is the commanded-action increment, `dt` the sample
/// time used for the actuation slope.
inline RewardTerms reward(double e_z, double eta, double eta_prev, double e_u,
                          const RewardConfig& cfg, double dt) {
  RewardTerms r;
  r.f1 = -cfg.w1 * std::abs(e_z);
  r.f2 = std::abs(eta) < cfg.eta_max ? 0.0 : -cfg.w2;
  r.f3 = -cfg.w3 * std::abs((eta - eta_prev) / dt);
  const bool bonus = std::abs(e_z) < cfg.bonus_error && std::abs(eta) < cfg.bonus_eta &&
                     std::abs(e_u) < cfg.e_u_max;
  r.f4 = bonus ? cfg.w4 * (cfg.e_u_max - std::abs(e_u)) / cfg.e_u_max : 0.0;
  r.total = r.f1 + r.f2 + r.f3 + r.f4;
  return r;
}

}  // namespace pitchrl
