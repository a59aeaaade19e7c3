#pragma once

// One agent/environment episode: command -> reference model -> agent ->
// latency -> actuator -> airframe -> reward, sampled at 1 kHz.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <vector>

#include "pitchrl/errors.hpp"
#include "pitchrl/flight_dynamics.hpp"
#include "pitchrl/normalizer.hpp"
#include "pitchrl/reward.hpp"
#include "pitchrl/rng.hpp"
#include "pitchrl/signal_shaping.hpp"

namespace pitchrl {

inline constexpr int kObservationSize = 10;
using Observation = std::array<double, kObservationSize>;

/// Feature layout of Observation.
enum ObservationIndex : int {
  kObsReference = 0,   // shaped a_z reference, g
  kObsAcceleration,    // measured a_z, g
  kObsError,           // e_z, g
  kObsErrorIntegral,   // clipped integral of e_z, g s
  kObsPitchRate,       // rad/s
  kObsAlpha,           // rad
  kObsEta,             // rad
  kObsEtaRate,         // rad/s
  kObsMach,            // estimated Mach
  kObsHeightKm,        // estimated height, km
};

struct EnvConfig {
  AeroConfig aero;
  ActuatorConfig actuator;
  ReferenceModelConfig reference;
  CommandConfig command;
  RewardConfig reward;
  EstimationPlacement placement = EstimationPlacement::kObservation;
  double error_integral_clip = 5.0;    // g s
  double divergence_penalty = 500.0;   // subtracted from the reward of the diverging step

  void validate() const {
    aero.validate();
    actuator.validate();
    reference.validate();
    command.validate();
    reward.validate();
    if (!(error_integral_clip > 0.0)) throw InvalidArgument("env.error_integral_clip must be > 0");
    if (divergence_penalty < 0.0) throw InvalidArgument("env.divergence_penalty must be >= 0");
  }
};

/// What an agent returns for one observation.
struct ActionSample {
  double eta_com = 0.0;   // sampled (or mean) command, before saturation
  double mean = 0.0;
  double std_dev = 0.0;
  double log_prob = 0.0;
};

template <class P>
concept EpisodePolicy = requires(P& p, const Observation& obs, double e_z, Rng& rng, bool explore) {
  { p.act(obs, e_z, rng, explore) } -> std::convertible_to<ActionSample>;
};

struct StepRecord {
  Observation obs{};       // raw, before the action
  Observation obs_norm{};  // as fed to the networks
  double action = 0.0;     // sampled command (log-prob refers to this)
  double command = 0.0;    // command after saturation, before latency
  double mean = 0.0;
  double std_dev = 0.0;
  double log_prob = 0.0;
  double reward = 0.0;
  double a_z = 0.0;        // measured after the step, g
  double e_z = 0.0;        // reference minus a_z after the step, g
  double e_u = 0.0;        // commanded-action increment, rad
  double eta = 0.0;        // actuator position after the step
  double eta_prev = 0.0;
  Period period = Period::kResting;
  double value = 0.0;
  double value_target = 0.0;
  double advantage = 0.0;
  double td_magnitude = 0.0;
  int level = 0;
  bool synthetic = false;
};

struct Trajectory {
  std::vector<StepRecord> steps;
  CommandSignal command;
  std::vector<double> shaped;
  PeriodMask mask;
  NonNominality nonnom;
  Observation final_obs{};       // raw observation after the last step (bootstrap)
  Observation final_obs_norm{};
  bool diverged = false;
  bool synthetic = false;
  std::uint64_t seed = 0;

  std::size_t size() const { return steps.size(); }

  double mean_abs_error() const {
    if (steps.empty()) return 0.0;
    double s = 0.0;
    for (const auto& st : steps) s += std::abs(st.e_z);
    return s / static_cast<double>(steps.size());
  }

  double total_reward() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.reward;
    return s;
  }
};

inline Observation normalize(const Observation& raw, const Normalizer& normalizer) {
  Observation out{};
  normalizer.normalize(raw, out);
  return out;
}

/// Folds an episode's raw observations into the running statistics.
inline void update_normalizer(Normalizer& normalizer, const Trajectory& episode) {
  std::vector<double> rows;
  rows.reserve(episode.steps.size() * kObservationSize);
  for (const auto& s : episode.steps) rows.insert(rows.end(), s.obs.begin(), s.obs.end());
  normalizer.update(rows);
}

/// Runs one episode. Deterministic in (policy, signal, nonnom, normalizer, seed).
/// A diverging plant ends the episode early with `diverged` set.
template <EpisodePolicy Policy>
Trajectory run_episode(Policy& policy, const EnvConfig& env, const CommandSignal& signal,
                       const NonNominality& nonnom, const Normalizer& normalizer, bool explore,
                       std::uint64_t seed) {
  const PlantModel model = PlantModel::make(env.aero, env.actuator, nonnom, env.placement);
  const double dt = env.command.dt;
  const double limit = env.actuator.deflection_limit;
  Trajectory traj;
  traj.command = signal;
  traj.shaped = shape(signal, env.reference, dt);
  traj.mask = classify_periods(signal, env.command.transition_window);
  traj.nonnom = nonnom;
  traj.seed = seed;
  traj.steps.reserve(signal.size());

  Rng rng(seed);
  CommandDelay delay(nonnom.latency_steps());
  PlantState state;
  double a_z = model.normal_acceleration(state);
  double integral = 0.0;
  double prev_command = 0.0;

  const auto observe = [&](double reference, double accel, const PlantState& s) {
    return Observation{reference,    accel,   reference - accel, integral,
                       s.pitch_rate, s.alpha, s.eta,             s.eta_rate,
                       model.estimated.mach, model.estimated.height / 1000.0};
  };

  const int n = static_cast<int>(signal.size());
  for (int t = 0; t < n; ++t) {
    StepRecord rec;
    rec.obs = observe(traj.shaped[t], a_z, state);
    rec.obs_norm = normalize(rec.obs, normalizer);
    const ActionSample a = policy.act(rec.obs_norm, rec.obs[kObsError], rng, explore);
    if (!std::isfinite(a.eta_com)) throw NumericalFault("run_episode: policy produced a non-finite action");
    rec.action = a.eta_com;
    rec.mean = a.mean;
    rec.std_dev = a.std_dev;
    rec.log_prob = a.log_prob;
    rec.command = std::clamp(a.eta_com, -limit, limit);
    rec.e_u = rec.command - prev_command;
    prev_command = rec.command;

    const double applied = delay.push(rec.command);
    const PlantStepResult res = coupled_step(state, applied, model, dt);
    rec.eta_prev = state.eta;
    state = res.state;
    a_z = res.normal_acceleration;
    rec.a_z = a_z;
    rec.e_z = traj.shaped[t] - a_z;
    rec.eta = state.eta;
    rec.period = traj.mask[t];
    rec.reward = reward(rec.e_z, rec.eta, rec.eta_prev, rec.e_u, env.reward, dt).total;
    integral = std::clamp(integral + rec.e_z * dt, -env.error_integral_clip, env.error_integral_clip);

    if (res.diverged) {
      rec.reward -= env.divergence_penalty;
      traj.steps.push_back(rec);
      traj.diverged = true;
      break;
    }
    traj.steps.push_back(rec);
  }
  const double next_ref = traj.shaped[std::min<std::size_t>(traj.steps.size(), signal.size() - 1)];
  traj.final_obs = observe(next_ref, a_z, state);
  traj.final_obs_norm = normalize(traj.final_obs, normalizer);
  return traj;
}

/// Re-derives every reference-dependent quantity of `traj` (shaped signal,
/// reference/error/integral features, normalized observations, e_z and
/// rewards) for a new command with the same transition times. Actions, plant
/// response and measured a_z are left untouched.
inline void retarget(Trajectory& traj, const CommandSignal& new_command, const EnvConfig& env,
                     const Normalizer& normalizer) {
  if (new_command.size() != traj.command.size())
    throw StructuralError("retarget: command length differs from the episode");
  const double dt = env.command.dt;
  traj.command = new_command;
  traj.shaped = shape(new_command, env.reference, dt);
  double integral = 0.0;
  for (std::size_t t = 0; t < traj.steps.size(); ++t) {
    StepRecord& s = traj.steps[t];
    s.obs[kObsReference] = traj.shaped[t];
    s.obs[kObsError] = traj.shaped[t] - s.obs[kObsAcceleration];
    s.obs[kObsErrorIntegral] = integral;
    s.obs_norm = normalize(s.obs, normalizer);
    s.e_z = traj.shaped[t] - s.a_z;
    s.reward = reward(s.e_z, s.eta, s.eta_prev, s.e_u, env.reward, dt).total;
    if (traj.diverged && t + 1 == traj.steps.size()) s.reward -= env.divergence_penalty;
    integral = std::clamp(integral + s.e_z * dt, -env.error_integral_clip, env.error_integral_clip);
  }
  const std::size_t k = std::min(traj.steps.size(), traj.shaped.size() - 1);
  traj.final_obs[kObsReference] = traj.shaped[k];
  traj.final_obs[kObsError] = traj.shaped[k] - traj.final_obs[kObsAcceleration];
  traj.final_obs[kObsErrorIntegral] = integral;
  traj.final_obs_norm = normalize(traj.final_obs, normalizer);
}

}  // namespace pitchrl
