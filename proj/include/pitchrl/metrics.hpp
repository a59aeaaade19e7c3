#pragma once

// Episode scoring against the five performance objectives.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string_view>
#include <utility>

#include "pitchrl/episode.hpp"
#include "pitchrl/errors.hpp"
#include "pitchrl/flight_dynamics.hpp"
#include "pitchrl/signal_shaping.hpp"

namespace pitchrl {

struct PerformanceThresholds {
  double max_resting_error = 0.5;        // g
  double overshoot = 20.0;               // %
  double max_actuation = 15.0 * kDegToRad;  // rad
  double noise_resting = 1.0;            // rad
  double noise_transition = 0.2;         // rad
};

inline constexpr int kMetricCount = 5;

/// Row labels of the five objectives, in report order.
inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "|e_z|_max,r", "Overshoot", "|eta|_max", "eta_noise,r", "eta_noise,t"};

struct PerformanceReport {
  double max_resting_error = 0.0;  // g
  double overshoot = 0.0;          // %
  double max_actuation = 0.0;      // rad
  double noise_resting = 0.0;      // rad
  double noise_transition = 0.0;   // rad
  double mean_abs_error = 0.0;     // g
  std::array<bool, kMetricCount> pass{};
  bool diverged = false;

  std::array<double, kMetricCount> values() const {
    return {max_resting_error, overshoot, max_actuation, noise_resting, noise_transition};
  }

  int passed() const {
    return static_cast<int>(std::count(pass.begin(), pass.end(), true));
  }
  bool all_pass() const { return passed() == kMetricCount; }

  friend bool operator==(const PerformanceReport&, const PerformanceReport&) = default;
};

/// Sets pass flags: each metric passes iff strictly below its threshold and
/// the episode did not diverge.
inline PerformanceReport assess(PerformanceReport report, const PerformanceThresholds& th = {}) {
  const std::array<double, kMetricCount> limits = {th.max_resting_error, th.overshoot,
                                                    th.max_actuation, th.noise_resting,
                                                    th.noise_transition};
  const auto v = report.values();
  for (int i = 0; i < kMetricCount; ++i)
    report.pass[i] = !report.diverged && std::isfinite(v[i]) && v[i] < limits[i];
  return report;
}

/// Total variation of eta inside each window, averaged over the windows.
inline double mean_window_variation(std::span<const double> eta,
                                    const std::vector<std::pair<int, int>>& windows) {
  if (windows.empty()) return 0.0;
  double acc = 0.0;
  for (auto [b, e] : windows) {
    double tv = 0.0;
    for (int t = b + 1; t < e; ++t) tv += std::abs(eta[t] - eta[t - 1]);
    acc += tv;
  }
  return acc / static_cast<double>(windows.size());
}

/// Largest overshoot over the four transitions, in % of each step's size,
/// measured against the level the shaped reference settles on.
inline double overshoot_percent(std::span<const double> a_z, const CommandSignal& command,
                                int window) {
  const int n = static_cast<int>(a_z.size());
  double worst = 0.0;
  for (int k = 0; k < 4; ++k) {
    const double before = command.level_before(k);
    const double after = command.level_after(k);
    const double step = after - before;
    if (std::abs(step) < 1e-9) continue;
    const int begin = command.rises[k];
    const int end = std::min({n, begin + window, k + 1 < 4 ? command.rises[k + 1] : n});
    const double sign = step > 0.0 ? 1.0 : -1.0;
    double exceed = 0.0;
    for (int t = begin; t < end; ++t) exceed = std::max(exceed, sign * (a_z[t] - after));
    worst = std::max(worst, 100.0 * exceed / std::abs(step));
  }
  return worst;
}

/// Raw metric computation over aligned per-step series.
inline PerformanceReport evaluate_metrics(std::span<const double> a_z, std::span<const double> e_z,
                                          std::span<const double> eta, const CommandSignal& command,
                                          const PeriodMask& mask,
                                          int window = kTransitionWindowSteps,
                                          const PerformanceThresholds& th = {}) {
  if (a_z.size() != mask.size() || e_z.size() != mask.size() || eta.size() != mask.size())
    throw StructuralError("evaluate_metrics: trajectory length " + std::to_string(e_z.size()) +
                          " does not match period mask length " + std::to_string(mask.size()));
  PerformanceReport r;
  double sum = 0.0;
  for (std::size_t t = 0; t < mask.size(); ++t) {
    const double err = std::abs(e_z[t]);
    sum += err;
    if (mask[t] == Period::kResting) r.max_resting_error = std::max(r.max_resting_error, err);
    r.max_actuation = std::max(r.max_actuation, std::abs(eta[t]));
  }
  r.mean_abs_error = mask.empty() ? 0.0 : sum / static_cast<double>(mask.size());
  r.overshoot = overshoot_percent(a_z, command, window);
  r.noise_resting = mean_window_variation(eta, period_windows(mask, Period::kResting));
  r.noise_transition = mean_window_variation(eta, period_windows(mask, Period::kTransition));
  return assess(r, th);
}

/// Scores a trajectory. A diverged (truncated) episode is scored over the
/// steps it has and reported as failing every objective.
inline PerformanceReport evaluate_metrics(const Trajectory& traj, const PeriodMask& mask,
                                          int window = kTransitionWindowSteps,
                                          const PerformanceThresholds& th = {}) {
  const std::size_t n = traj.steps.size();
  if (!traj.diverged && n != mask.size())
    throw StructuralError("evaluate_metrics: trajectory length " + std::to_string(n) +
                          " does not match period mask length " + std::to_string(mask.size()));
  if (n > mask.size()) throw StructuralError("evaluate_metrics: trajectory longer than mask");
  std::vector<double> a_z(n), e_z(n), eta(n);
  for (std::size_t t = 0; t < n; ++t) {
    a_z[t] = traj.steps[t].a_z;
    e_z[t] = traj.steps[t].e_z;
    eta[t] = traj.steps[t].eta;
  }
  PeriodMask used(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(n));
  PerformanceReport r = evaluate_metrics(a_z, e_z, eta, traj.command, used, window, th);
  if (traj.diverged) {
    r.diverged = true;
    r = assess(r, th);
  }
  return r;
}

/// Lexicographic ranking used to pick the best agent: more objectives passed,
/// then lower mean |e_z|.
inline bool better_than(const PerformanceReport& a, const PerformanceReport& b) {
  if (a.passed() != b.passed()) return a.passed() > b.passed();
  return a.mean_abs_error < b.mean_abs_error;
}

}  // namespace pitchrl
