#pragma once

// Pitch-plane surrogate of a tail-controlled missile: linear-in-(alpha, q, eta)
// aerodynamic coefficients with Prandtl-Glauert Mach scaling, exponential
// atmosphere, four-fin mixing and a saturated second-order fin actuator.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <deque>
#include <numbers>
#include <string>
#include <string_view>
#include <utility>

#include "pitchrl/errors.hpp"

namespace pitchrl {

inline constexpr double kStandardGravity = 9.80665;  // m/s^2
inline constexpr double kDegToRad = std::numbers::pi / 180.0;

struct AeroConfig {
  double mass = 150.0;            // kg
  double pitch_inertia = 110.0;   // kg m^2
  double ref_area = 0.0314159;    // m^2, 0.2 m body diameter
  double ref_length = 0.2;        // m
  double cz_alpha = 20.0;         // normal-force slope, 1/rad
  double cz_eta = 5.0;            // 1/rad
  double cm_alpha = -10.0;        // pitch-moment slope, 1/rad
  double cm_q = -200.0;           // pitch damping, per rad of q*l/(2V)
  double cm_eta = -20.0;          // 1/rad
  double mach_nominal = 2.0;
  double height_nominal = 5000.0;        // m
  double sea_level_density = 1.225;      // kg/m^3
  double density_scale_height = 8500.0;  // m
  double mach_singularity_floor = 0.1;   // lower clamp on |M^2 - 1|
  double alpha_limit = 40.0 * kDegToRad; // validity cone of the surrogate

  void validate() const {
    if (!(mass > 0.0)) throw InvalidArgument("aero.mass must be > 0");
    if (!(pitch_inertia > 0.0)) throw InvalidArgument("aero.pitch_inertia must be > 0");
    if (!(ref_area > 0.0)) throw InvalidArgument("aero.ref_area must be > 0");
    if (!(ref_length > 0.0)) throw InvalidArgument("aero.ref_length must be > 0");
    if (!(cm_q < 0.0)) throw InvalidArgument("aero.cm_q must be < 0 (pitch damping)");
    if (!(mach_nominal > 0.0)) throw InvalidArgument("aero.mach_nominal must be > 0");
    if (!(sea_level_density > 0.0) || !(density_scale_height > 0.0))
      throw InvalidArgument("aero density model parameters must be > 0");
    if (!(mach_singularity_floor > 0.0))
      throw InvalidArgument("aero.mach_singularity_floor must be > 0");
    if (!(alpha_limit > 0.0)) throw InvalidArgument("aero.alpha_limit must be > 0");
  }
};

struct ActuatorConfig {
  double natural_frequency = 150.0;  // rad/s
  double damping = 0.7;
  double deflection_limit = 30.0 * kDegToRad;

  void validate() const {
    if (!(natural_frequency > 0.0)) throw InvalidArgument("actuator.natural_frequency must be > 0");
    if (!(damping > 0.0 && damping < 1.0)) throw InvalidArgument("actuator.damping must be in (0, 1)");
    if (!(deflection_limit > 0.0)) throw InvalidArgument("actuator.deflection_limit must be > 0");
  }
};

struct PlantState {
  double alpha = 0.0;       // rad
  double pitch_rate = 0.0;  // rad/s
  double eta = 0.0;         // rad, actuator position
  double eta_rate = 0.0;    // rad/s
  double time = 0.0;        // s

  bool finite() const {
    return std::isfinite(alpha) && std::isfinite(pitch_rate) && std::isfinite(eta) &&
           std::isfinite(eta_rate) && std::isfinite(time);
  }
  friend bool operator==(const PlantState&, const PlantState&) = default;
};

enum class NonNominalKind { kNone, kLatency, kEstimation, kParametric };

inline std::string_view to_string(NonNominalKind kind) {
  switch (kind) {
    case NonNominalKind::kNone: return "none";
    case NonNominalKind::kLatency: return "latency";
    case NonNominalKind::kEstimation: return "estimation";
    case NonNominalKind::kParametric: return "parametric";
  }
  return "none";
}

inline NonNominalKind parse_non_nominal_kind(std::string_view name) {
  if (name == "none") return NonNominalKind::kNone;
  if (name == "latency") return NonNominalKind::kLatency;
  if (name == "estimation") return NonNominalKind::kEstimation;
  if (name == "parametric") return NonNominalKind::kParametric;
  throw InvalidArgument("unknown non-nominality kind '" + std::string(name) + "'");
}

/// Where Mach/height estimation errors act: only on what the agent observes,
/// or on the plant physics as well.
enum class EstimationPlacement { kObservation, kPlant };

/// One non-nominal environment. `bound` is l_max in ms for latency and the
/// 3-sigma fraction for the uncertainties; the sampled value stays fixed for a
/// whole episode.
struct NonNominality {
  NonNominalKind kind = NonNominalKind::kNone;
  double bound = 0.0;
  int latency_ms = 0;
  // (dMach, dHeight) for estimation, (dCz, dCm) for parametric.
  double delta_first = 0.0;
  double delta_second = 0.0;

  static NonNominality nominal() { return {}; }
  static NonNominality latency(int ms) {
    if (ms < 0) throw InvalidArgument("latency must be a non-negative integer of ms");
    return {NonNominalKind::kLatency, static_cast<double>(ms), ms, 0.0, 0.0};
  }
  static NonNominality estimation(double d_mach, double d_height) {
    return {NonNominalKind::kEstimation, std::max(std::abs(d_mach), std::abs(d_height)), 0,
            d_mach, d_height};
  }
  static NonNominality parametric(double d_cz, double d_cm) {
    return {NonNominalKind::kParametric, std::max(std::abs(d_cz), std::abs(d_cm)), 0, d_cz,
            d_cm};
  }

  double delta_mach() const { return kind == NonNominalKind::kEstimation ? delta_first : 0.0; }
  double delta_height() const { return kind == NonNominalKind::kEstimation ? delta_second : 0.0; }
  double delta_cz() const { return kind == NonNominalKind::kParametric ? delta_first : 0.0; }
  double delta_cm() const { return kind == NonNominalKind::kParametric ? delta_second : 0.0; }
  int latency_steps() const { return kind == NonNominalKind::kLatency ? latency_ms : 0; }
};

/// (1 + delta) * nominal.
inline double apply_uncertainty(double nominal, double delta) { return (1.0 + delta) * nominal; }

struct AeroControls {
  double xi = 0.0;
  double eta = 0.0;
  double zeta = 0.0;
  friend bool operator==(const AeroControls&, const AeroControls&) = default;
};

using FinDeflections = std::array<double, 4>;

inline AeroControls fins_to_aero(const FinDeflections& d) {
  for (double v : d)
    if (!std::isfinite(v)) throw InvalidArgument("fins_to_aero: non-finite fin deflection");
  return {0.25 * (d[0] + d[1] + d[2] + d[3]), 0.25 * (d[0] - d[1] - d[2] + d[3]),
          0.25 * (d[0] + d[1] - d[2] - d[3])};
}

/// Longitudinal fin allocation: xi and zeta are zero.
inline FinDeflections aero_to_fins(double eta) {
  if (!std::isfinite(eta)) throw InvalidArgument("aero_to_fins: non-finite eta");
  return {eta, -eta, -eta, eta};
}

// --- atmosphere --------------------------------------------------------------

/// Speed of sound from the standard-atmosphere temperature profile.
inline double speed_of_sound(double height) {
  constexpr double kGamma = 1.4;
  constexpr double kGasConstant = 287.05287;
  const double temperature = height < 11000.0 ? 288.15 - 0.0065 * height : 216.65;
  return std::sqrt(kGamma * kGasConstant * temperature);
}

inline double air_density(double height, const AeroConfig& cfg) {
  return cfg.sea_level_density * std::exp(-height / cfg.density_scale_height);
}

/// Flight condition and the derived quantities the pitch dynamics need.
struct FlightCondition {
  double mach = 2.0;
  double height = 5000.0;
  double airspeed = 0.0;          // m/s
  double dynamic_pressure = 0.0;  // Pa
  double mach_scale = 1.0;        // Prandtl-Glauert factor relative to mach_nominal

  static FlightCondition at(double mach, double height, const AeroConfig& cfg) {
    FlightCondition fc;
    fc.mach = mach;
    fc.height = height;
    fc.airspeed = mach * speed_of_sound(height);
    fc.dynamic_pressure = 0.5 * air_density(height, cfg) * fc.airspeed * fc.airspeed;
    const auto pg = [&](double m) {
      return 1.0 / std::sqrt(std::max(std::abs(m * m - 1.0), cfg.mach_singularity_floor));
    };
    fc.mach_scale = pg(mach) / pg(cfg.mach_nominal);
    return fc;
  }
};

/// Everything the right-hand side needs for one episode: flight condition and
/// multiplicative coefficient perturbations.
struct PlantModel {
  AeroConfig aero;
  ActuatorConfig actuator;
  FlightCondition physical;   // what the airframe flies
  FlightCondition estimated;  // what the sensors report
  double cz_scale = 1.0;      // 1 + dCz
  double cm_scale = 1.0;      // 1 + dCm

  static PlantModel make(const AeroConfig& aero, const ActuatorConfig& actuator,
                         const NonNominality& nonnom = {},
                         EstimationPlacement placement = EstimationPlacement::kObservation) {
    aero.validate();
    actuator.validate();
    PlantModel m;
    m.aero = aero;
    m.actuator = actuator;
    const double est_mach = apply_uncertainty(aero.mach_nominal, nonnom.delta_mach());
    const double est_height = apply_uncertainty(aero.height_nominal, nonnom.delta_height());
    m.estimated = FlightCondition::at(est_mach, est_height, aero);
    m.physical = placement == EstimationPlacement::kPlant
                     ? m.estimated
                     : FlightCondition::at(aero.mach_nominal, aero.height_nominal, aero);
    m.cz_scale = apply_uncertainty(1.0, nonnom.delta_cz());
    m.cm_scale = apply_uncertainty(1.0, nonnom.delta_cm());
    return m;
  }

  double cz(double alpha, double eta) const {
    return cz_scale * physical.mach_scale * (aero.cz_alpha * alpha + aero.cz_eta * eta);
  }

  double cm(double alpha, double q, double eta) const {
    const double q_hat = q * aero.ref_length / (2.0 * physical.airspeed);
    return cm_scale * physical.mach_scale *
           (aero.cm_alpha * alpha + aero.cm_q * q_hat + aero.cm_eta * eta);
  }

  /// Normal acceleration in g.
  double normal_acceleration(const PlantState& s) const {
    return physical.dynamic_pressure * aero.ref_area * cz(s.alpha, s.eta) /
           (aero.mass * kStandardGravity);
  }

  bool diverged(const PlantState& s) const {
    return !s.finite() || std::abs(s.alpha) > aero.alpha_limit;
  }
};

// --- integration ---------------------------------------------------------------

namespace detail {

struct Derivative {
  double alpha, q, eta, eta_rate;
};

inline Derivative airframe_rates(const PlantModel& m, double alpha, double q, double eta) {
  const double qs = m.physical.dynamic_pressure * m.aero.ref_area;
  const double alpha_dot = q - qs * m.cz(alpha, eta) / (m.aero.mass * m.physical.airspeed);
  const double q_dot = qs * m.aero.ref_length * m.cm(alpha, q, eta) / m.aero.pitch_inertia;
  return {alpha_dot, q_dot, 0.0, 0.0};
}

inline double actuator_accel(const ActuatorConfig& a, double eta, double eta_rate,
                             double eta_com) {
  const double wn = a.natural_frequency;
  return wn * wn * (eta_com - eta) - 2.0 * a.damping * wn * eta_rate;
}

inline void clamp_at_stop(PlantState& s, double limit) {
  if (s.eta >= limit) {
    s.eta = limit;
    s.eta_rate = 0.0;
  } else if (s.eta <= -limit) {
    s.eta = -limit;
    s.eta_rate = 0.0;
  }
}

template <class Rhs>
PlantState rk4(const PlantState& s, double dt, Rhs&& rhs) {
  const auto shifted = [&](const Derivative& k, double h) {
    PlantState out = s;
    out.alpha += h * k.alpha;
    out.pitch_rate += h * k.q;
    out.eta += h * k.eta;
    out.eta_rate += h * k.eta_rate;
    return out;
  };
  const Derivative k1 = rhs(s);
  const Derivative k2 = rhs(shifted(k1, 0.5 * dt));
  const Derivative k3 = rhs(shifted(k2, 0.5 * dt));
  const Derivative k4 = rhs(shifted(k3, dt));
  PlantState out = s;
  out.alpha += dt / 6.0 * (k1.alpha + 2.0 * k2.alpha + 2.0 * k3.alpha + k4.alpha);
  out.pitch_rate += dt / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q);
  out.eta += dt / 6.0 * (k1.eta + 2.0 * k2.eta + 2.0 * k3.eta + k4.eta);
  out.eta_rate += dt / 6.0 * (k1.eta_rate + 2.0 * k2.eta_rate + 2.0 * k3.eta_rate + k4.eta_rate);
  out.time = s.time + dt;
  return out;
}

inline void check_step(double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw InvalidArgument("integration step must be > 0");
}

}  // namespace detail

/// One RK4 step of the fin actuator alone; airframe states are carried over.
inline PlantState actuator_step(const PlantState& state, double eta_com,
                                const ActuatorConfig& cfg, double dt) {
  detail::check_step(dt);
  if (!std::isfinite(eta_com)) throw NumericalFault("actuator_step: non-finite command");
  PlantState next = detail::rk4(state, dt, [&](const PlantState& s) {
    return detail::Derivative{0.0, 0.0, s.eta_rate,
                              detail::actuator_accel(cfg, s.eta, s.eta_rate, eta_com)};
  });
  next.alpha = state.alpha;
  next.pitch_rate = state.pitch_rate;
  detail::clamp_at_stop(next, cfg.deflection_limit);
  return next;
}

struct PlantStepResult {
  PlantState state;
  double normal_acceleration = 0.0;  // g
  bool diverged = false;
};

/// Advances (alpha, q) one RK4 step with the fin position held at state.eta.
inline PlantStepResult plant_step(const PlantState& state, const PlantModel& model, double dt) {
  detail::check_step(dt);
  PlantState next = detail::rk4(state, dt, [&](const PlantState& s) {
    return detail::airframe_rates(model, s.alpha, s.pitch_rate, s.eta);
  });
  next.eta = state.eta;
  next.eta_rate = state.eta_rate;
  return {next, model.normal_acceleration(next), model.diverged(next)};
}

inline PlantStepResult plant_step(const PlantState& state, const AeroConfig& aero,
                                  const NonNominality& nonnom, double dt,
                                  EstimationPlacement placement = EstimationPlacement::kObservation) {
  return plant_step(state, PlantModel::make(aero, ActuatorConfig{}, nonnom, placement), dt);
}

/// Joint RK4 step of actuator and airframe driven by the commanded deflection;
/// the fin is clamped at its stop after the step.
inline PlantStepResult coupled_step(const PlantState& state, double eta_com,
                                    const PlantModel& model, double dt) {
  detail::check_step(dt);
  if (!std::isfinite(eta_com)) throw NumericalFault("coupled_step: non-finite command");
  const double limit = model.actuator.deflection_limit;
  PlantState next = detail::rk4(state, dt, [&](const PlantState& s) {
    const double eta = std::clamp(s.eta, -limit, limit);
    detail::Derivative d = detail::airframe_rates(model, s.alpha, s.pitch_rate, eta);
    d.eta = s.eta_rate;
    d.eta_rate = detail::actuator_accel(model.actuator, s.eta, s.eta_rate, eta_com);
    return d;
  });
  detail::clamp_at_stop(next, limit);
  return {next, model.normal_acceleration(next), model.diverged(next)};
}

/// Fixed-length FIFO delay of the actuator command, one slot per 1 ms step,
/// pre-filled with zeros.
class CommandDelay {
 public:
  explicit CommandDelay(int latency_steps = 0) {
    if (latency_steps < 0) throw InvalidArgument("latency must be non-negative");
    queue_.assign(static_cast<std::size_t>(latency_steps), 0.0);
  }

  double push(double eta_com) {
    if (queue_.empty()) return eta_com;
    queue_.push_back(eta_com);
    const double out = queue_.front();
    queue_.pop_front();
    return out;
  }

  std::size_t latency() const { return queue_.size(); }

 private:
  std::deque<double> queue_;
};

inline double delay_action(CommandDelay& queue, double eta_com) { return queue.push(eta_com); }

}  // namespace pitchrl
