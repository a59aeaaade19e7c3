#pragma once

// Double-step command generation, reference-model shaping and the
// transition/resting partition of an episode.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "pitchrl/errors.hpp"
#include "pitchrl/rng.hpp"

namespace pitchrl {

inline constexpr int kStandardEpisodeSteps = 5000;
inline constexpr double kSampleTime = 0.001;  // s
inline constexpr int kTransitionWindowSteps = 600;

struct ReferenceModelConfig {
  double natural_frequency = 10.0;  // rad/s
  double damping = 0.7;

  void validate() const {
    if (!(natural_frequency > 0.0))
      throw InvalidArgument("reference.natural_frequency must be > 0");
    if (!(damping > 0.0 && damping < 1.0))
      throw InvalidArgument("reference.damping must be in (0, 1)");
  }
};

/// Timing of the randomized double step 0 -> A1 -> 0 -> A2 -> 0. All times in
/// seconds; the defaults keep the four 0.6 s transition windows disjoint and
/// inside the 5 s episode.
struct CommandConfig {
  int episode_steps = kStandardEpisodeSteps;
  double dt = kSampleTime;
  double first_rise_min = 0.2, first_rise_max = 1.0;
  double second_rise_min = 2.6, second_rise_max = 3.0;
  double hold_min = 0.8, hold_max = 1.0;
  int transition_window = kTransitionWindowSteps;

  void validate() const {
    if (episode_steps <= 0) throw InvalidArgument("command.episode_steps must be > 0");
    if (!(dt > 0.0)) throw InvalidArgument("command.dt must be > 0");
    if (!(first_rise_min >= 0.0 && first_rise_min <= first_rise_max &&
          second_rise_min <= second_rise_max && hold_min > 0.0 && hold_min <= hold_max))
      throw InvalidArgument("command timing windows are inconsistent");
    if (transition_window <= 0) throw InvalidArgument("command.transition_window must be > 0");
  }

  std::array<int, 4> default_rises() const {
    const double t1 = 0.5 * (first_rise_min + first_rise_max);
    const double hold = 0.5 * (hold_min + hold_max);
    const double t3 = 0.5 * (second_rise_min + second_rise_max);
    return {to_index(t1), to_index(t1 + hold), to_index(t3), to_index(t3 + hold)};
  }

  int to_index(double t) const {
    return std::clamp(static_cast<int>(std::lround(t / dt)), 0, episode_steps - 1);
  }
};

struct CommandSignal {
  std::vector<double> samples;     // g
  std::array<int, 4> rises{};      // step indices of the four transitions
  std::array<double, 2> amplitudes{};  // g

  std::size_t size() const { return samples.size(); }

  /// Command level after transition k (0..3).
  double level_after(int k) const { return (k % 2 == 0) ? amplitudes[k / 2] : 0.0; }
  /// Command level before transition k.
  double level_before(int k) const { return (k % 2 == 0) ? 0.0 : amplitudes[k / 2]; }
};

/// Builds the piecewise-constant command for given rises and amplitudes.
inline CommandSignal make_command(std::array<int, 4> rises, std::array<double, 2> amplitudes,
                                  int length) {
  if (length <= 0) throw InvalidArgument("command length must be > 0");
  if (!std::is_sorted(rises.begin(), rises.end()))
    throw StructuralError("command rises must be non-decreasing");
  CommandSignal c;
  c.rises = rises;
  c.amplitudes = amplitudes;
  c.samples.assign(static_cast<std::size_t>(length), 0.0);
  for (int k = 0; k < 4; ++k) {
    const int begin = std::clamp(rises[k], 0, length);
    const int end = k + 1 < 4 ? std::clamp(rises[k + 1], 0, length) : length;
    std::fill(c.samples.begin() + begin, c.samples.begin() + end, c.level_after(k));
  }
  return c;
}

inline CommandSignal generate_command(std::uint64_t seed, double amplitude_cap,
                                      const CommandConfig& cfg = {}) {
  if (!(amplitude_cap >= 0.0)) throw InvalidArgument("amplitude cap must be >= 0");
  cfg.validate();
  if (amplitude_cap == 0.0) return make_command(cfg.default_rises(), {0.0, 0.0}, cfg.episode_steps);
  Rng rng(seed);
  const double a1 = rng.uniform(-amplitude_cap, amplitude_cap);
  const double a2 = rng.uniform(-amplitude_cap, amplitude_cap);
  const double t1 = rng.uniform(cfg.first_rise_min, cfg.first_rise_max);
  const double t2 = t1 + rng.uniform(cfg.hold_min, cfg.hold_max);
  const double t3 = rng.uniform(cfg.second_rise_min, cfg.second_rise_max);
  const double t4 = t3 + rng.uniform(cfg.hold_min, cfg.hold_max);
  return make_command({cfg.to_index(t1), cfg.to_index(t2), cfg.to_index(t3), cfg.to_index(t4)},
                      {a1, a2}, cfg.episode_steps);
}

/// The fixed evaluation signal: -10 g then +10 g at the default rise times.
inline CommandSignal test_command(const CommandConfig& cfg = {}, double amplitude = 10.0) {
  cfg.validate();
  return make_command(cfg.default_rises(), {-amplitude, amplitude}, cfg.episode_steps);
}

/// Second-order reference model y'' = wn^2 (u - y) - 2 zeta wn y', zero initial
/// conditions, input held over each sample, RK4 per sample. out[0] = 0.
inline std::vector<double> shape(std::span<const double> command, const ReferenceModelConfig& cfg,
                                 double dt = kSampleTime) {
  cfg.validate();
  if (!(dt > 0.0)) throw InvalidArgument("shape: dt must be > 0");
  const double wn2 = cfg.natural_frequency * cfg.natural_frequency;
  const double c = 2.0 * cfg.damping * cfg.natural_frequency;
  std::vector<double> out(command.size(), 0.0);
  double y = 0.0, v = 0.0;
  for (std::size_t t = 0; t < command.size(); ++t) {
    out[t] = y;
    const double u = command[t];
    const auto acc = [&](double yy, double vv) { return wn2 * (u - yy) - c * vv; };
    const double k1y = v, k1v = acc(y, v);
    const double k2y = v + 0.5 * dt * k1v, k2v = acc(y + 0.5 * dt * k1y, v + 0.5 * dt * k1v);
    const double k3y = v + 0.5 * dt * k2v, k3v = acc(y + 0.5 * dt * k2y, v + 0.5 * dt * k2v);
    const double k4y = v + dt * k3v, k4v = acc(y + dt * k3y, v + dt * k3v);
    y += dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y);
    v += dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
  }
  return out;
}

inline std::vector<double> shape(const CommandSignal& command, const ReferenceModelConfig& cfg,
                                 double dt = kSampleTime) {
  return shape(std::span<const double>(command.samples), cfg, dt);
}

enum class Period : std::uint8_t { kResting = 0, kTransition = 1 };

using PeriodMask = std::vector<Period>;

/// Tags `window` steps after each of the four rises as transition (merging
/// overlaps, truncating at the episode end); every other step is resting.
inline PeriodMask classify_periods(std::span<const int> rises, int length,
                                   int window = kTransitionWindowSteps) {
  if (rises.size() != 4)
    throw StructuralError("classify_periods: expected exactly four transitions, got " +
                          std::to_string(rises.size()));
  if (length < 0 || window < 0) throw InvalidArgument("classify_periods: negative length");
  PeriodMask mask(static_cast<std::size_t>(length), Period::kResting);
  for (int r : rises) {
    if (r < 0 || r >= length) throw StructuralError("classify_periods: rise outside episode");
    const int end = std::min(length, r + window);
    std::fill(mask.begin() + r, mask.begin() + end, Period::kTransition);
  }
  return mask;
}

inline PeriodMask classify_periods(const CommandSignal& command,
                                   int window = kTransitionWindowSteps) {
  return classify_periods(std::span<const int>(command.rises),
                          static_cast<int>(command.samples.size()), window);
}

/// Maximal runs [begin, end) of steps carrying `tag`, in time order.
inline std::vector<std::pair<int, int>> period_windows(const PeriodMask& mask, Period tag) {
  std::vector<std::pair<int, int>> runs;
  const int n = static_cast<int>(mask.size());
  for (int i = 0; i < n;) {
    if (mask[i] != tag) {
      ++i;
      continue;
    }
    int j = i;
    while (j < n && mask[j] == tag) ++j;
    runs.emplace_back(i, j);
    i = j;
  }
  return runs;
}

/// Resting runs during which the command sits on its first and second step
/// amplitude: the resting steps between rises 0-1 and rises 2-3.
inline std::array<std::pair<int, int>, 2> plateau_windows(const CommandSignal& command,
                                                          const PeriodMask& mask) {
  std::array<std::pair<int, int>, 2> out{};
  for (int k = 0; k < 2; ++k) {
    const int lo = command.rises[2 * k];
    const int hi = command.rises[2 * k + 1];
    int begin = lo;
    while (begin < hi && mask[begin] != Period::kResting) ++begin;
    out[k] = {begin, hi};
  }
  return out;
}

}  // namespace pitchrl
