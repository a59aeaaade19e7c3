#pragma once

// Replay machinery: hindsight relabeling of the reference signal, success
// levels, the FIFO batch buffer, balanced rank-prioritized sampling and the
// scheduling gate that switches both on.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "pitchrl/episode.hpp"
#include "pitchrl/errors.hpp"
#include "pitchrl/rng.hpp"
#include "pitchrl/signal_shaping.hpp"

namespace pitchrl {

enum class HerStrategy { kMean, kFinal };

/// Replays `source` as if its command had asked for what the airframe actually
/// did on each step plateau: the per-plateau mean (or last) measured a_z
/// becomes the new step amplitude; rise times are kept.
inline Trajectory her_relabel(const Trajectory& source, HerStrategy strategy, const EnvConfig& env,
                              const Normalizer& normalizer) {
  if (source.mask.size() != source.command.size() || source.mask.empty())
    throw StructuralError("her_relabel: trajectory has no period mask");
  if (source.steps.size() != source.command.size())
    throw StructuralError("her_relabel: trajectory is truncated");
  const auto plateaus = plateau_windows(source.command, source.mask);
  std::array<double, 2> amplitudes = source.command.amplitudes;
  for (int k = 0; k < 2; ++k) {
    const auto [b, e] = plateaus[k];
    if (b >= e) continue;
    if (strategy == HerStrategy::kFinal) {
      amplitudes[k] = source.steps[e - 1].a_z;
    } else {
      double s = 0.0;
      for (int t = b; t < e; ++t) s += source.steps[t].a_z;
      amplitudes[k] = s / static_cast<double>(e - b);
    }
  }
  Trajectory out = source;
  retarget(out, make_command(source.command.rises, amplitudes,
                             static_cast<int>(source.command.size())),
           env, normalizer);
  out.synthetic = true;
  for (auto& s : out.steps) s.synthetic = true;
  return out;
}

/// Success level of one step: 1 iff |e_z| < 0.5 g, |eta| < eta_max / 2 and
/// |e_u| < e_u,max (all strict).
inline int priority_level(const StepRecord& step, const RewardConfig& cfg,
                          double error_threshold = 0.5) {
  return std::abs(step.e_z) < error_threshold && std::abs(step.eta) < 0.5 * cfg.eta_max &&
                 std::abs(step.e_u) < cfg.e_u_max
             ? 1
             : 0;
}

/// Scheduling condition: open iff the previous episode's mean |e_z| <= threshold.
inline bool ser_gate(double previous_mean_error, double threshold = 2.0) {
  return previous_mean_error <= threshold;
}

using Batch = std::vector<Trajectory>;

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10) : capacity_(capacity) {
    if (capacity == 0) throw InvalidArgument("replay buffer capacity must be > 0");
  }

  /// Appends a batch, evicting the oldest one when full.
  void push_batch(Batch batch) {
    batches_.push_back(std::move(batch));
    while (batches_.size() > capacity_) batches_.pop_front();
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t batch_count() const { return batches_.size(); }
  const std::deque<Batch>& batches() const { return batches_; }
  bool empty() const { return step_count() == 0; }

  std::size_t step_count() const {
    std::size_t n = 0;
    for (const auto& b : batches_)
      for (const auto& t : b) n += t.steps.size();
    return n;
  }

  /// Every stored step in insertion order.
  std::vector<const StepRecord*> steps() const {
    std::vector<const StepRecord*> out;
    out.reserve(step_count());
    for (const auto& b : batches_)
      for (const auto& t : b)
        for (const auto& s : t.steps) out.push_back(&s);
    return out;
  }

  /// (N0, N1): steps at priority level 0 and 1.
  std::pair<std::size_t, std::size_t> level_counts() const {
    std::size_t n1 = 0, n = 0;
    for (const auto& b : batches_)
      for (const auto& t : b)
        for (const auto& s : t.steps) {
          ++n;
          n1 += s.level == 1 ? 1 : 0;
        }
    return {n - n1, n1};
  }

 private:
  std::size_t capacity_;
  std::deque<Batch> batches_;
};

inline void push_batch(ReplayBuffer& buffer, Batch batch) { buffer.push_batch(std::move(batch)); }

/// 1-based ranks by descending TD magnitude; ties keep insertion order.
inline std::vector<std::size_t> td_ranks(std::span<const StepRecord* const> steps) {
  std::vector<std::size_t> order(steps.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return steps[a]->td_magnitude > steps[b]->td_magnitude;
  });
  std::vector<std::size_t> rank(steps.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r + 1;
  return rank;
}

struct BperDiagnostics {
  std::size_t n0 = 0;
  std::size_t n1 = 0;
  bool balanced = false;     // rho_1 = 0.25 branch
  std::size_t drawn_success = 0;
  std::size_t reassigned = 0;  // quota moved because a pool was empty
};

struct BperSample {
  std::vector<const StepRecord*> steps;
  BperDiagnostics diag;
};

namespace detail {

/// Draws `count` indices from `pool` with probability proportional to weights.
inline void draw_weighted(std::span<const std::size_t> pool, std::span<const double> weight,
                          std::size_t count, Rng& rng, std::vector<std::size_t>& out) {
  if (count == 0 || pool.empty()) return;
  std::vector<double> cumulative(pool.size());
  double total = 0.0;
  for (std::size_t k = 0; k < pool.size(); ++k) {
    total += weight[pool[k]];
    cumulative[k] = total;
  }
  for (std::size_t d = 0; d < count; ++d) {
    const double u = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    out.push_back(pool[static_cast<std::size_t>(it - cumulative.begin())]);
  }
}

}  // namespace detail

/// Balanced prioritized sampling of `n` steps with replacement. p_i = 1/rank(i).
/// With fewer than 25% successful steps, 25% of the draws come from the
/// success pool and 75% from the rest, each proportional to p_i within its
/// pool; otherwise one draw proportional to p_i over everything.
inline BperSample bper_sample(std::span<const StepRecord* const> steps, std::size_t n, Rng& rng) {
  if (steps.empty()) throw InvalidArgument("bper_sample: empty buffer");
  BperSample out;
  const std::vector<std::size_t> rank = td_ranks(steps);
  std::vector<double> p(steps.size());
  std::vector<std::size_t> pool0, pool1;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    p[i] = 1.0 / static_cast<double>(rank[i]);
    (steps[i]->level == 1 ? pool1 : pool0).push_back(i);
  }
  out.diag.n0 = pool0.size();
  out.diag.n1 = pool1.size();
  std::vector<std::size_t> picked;
  picked.reserve(n);
  if (4 * pool1.size() < pool0.size() + pool1.size()) {
    out.diag.balanced = true;
    std::size_t quota1 = static_cast<std::size_t>(std::llround(0.25 * static_cast<double>(n)));
    std::size_t quota0 = n - quota1;
    if (pool1.empty() && quota1 > 0) {
      out.diag.reassigned = quota1;
      quota0 += quota1;
      quota1 = 0;
    }
    detail::draw_weighted(pool1, p, quota1, rng, picked);
    detail::draw_weighted(pool0, p, quota0, rng, picked);
  } else {
    std::vector<std::size_t> all(steps.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    detail::draw_weighted(all, p, n, rng, picked);
  }
  out.steps.reserve(picked.size());
  for (std::size_t i : picked) {
    out.steps.push_back(steps[i]);
    out.diag.drawn_success += steps[i]->level == 1 ? 1 : 0;
  }
  return out;
}

inline BperSample bper_sample(const ReplayBuffer& buffer, std::size_t n, Rng& rng) {
  const auto steps = buffer.steps();
  return bper_sample(std::span<const StepRecord* const>(steps), n, rng);
}

/// Training-set selection: BPER when the gate is open, the whole buffer otherwise.
inline BperSample select_training_steps(const ReplayBuffer& buffer, bool gate_open, std::size_t n,
                                        Rng& rng) {
  if (gate_open) return bper_sample(buffer, n, rng);
  BperSample out;
  out.steps = buffer.steps();
  const auto [n0, n1] = buffer.level_counts();
  out.diag.n0 = n0;
  out.diag.n1 = n1;
  out.diag.drawn_success = n1;
  return out;
}

}  // namespace pitchrl
