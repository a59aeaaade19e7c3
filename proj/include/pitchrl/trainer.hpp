#pragma once

// The training loop (collect, relabel, evaluate advantages, store, sample,
// update), the amplitude curriculum with periodic fixed-signal tests, resumed
// training under sampled non-nominal environments, and agent-vs-agent sweeps.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pitchrl/config.hpp"
#include "pitchrl/episode.hpp"
#include "pitchrl/errors.hpp"
#include "pitchrl/metrics.hpp"
#include "pitchrl/mlp.hpp"
#include "pitchrl/normalizer.hpp"
#include "pitchrl/replay.hpp"
#include "pitchrl/rng.hpp"
#include "pitchrl/signal_shaping.hpp"
#include "pitchrl/trpo.hpp"

namespace pitchrl {

// Stream tags for derive_seed; each (tag, index) pair is an independent stream.
namespace streams {
inline constexpr std::uint64_t kPolicyInit = 1;
inline constexpr std::uint64_t kValueInit = 2;
inline constexpr std::uint64_t kCommand = 0x100;
inline constexpr std::uint64_t kExploration = 0x200;
inline constexpr std::uint64_t kNonNominal = 0x300;
inline constexpr std::uint64_t kUpdate = 0x400;
inline constexpr std::uint64_t kRobustify = 0x500;
}  // namespace streams

inline std::uint64_t stream_seed(std::uint64_t run_seed, std::uint64_t tag, std::uint64_t index) {
  return derive_seed(derive_seed(run_seed, tag), index);
}

struct Agent {
  GaussianPolicy policy;
  Mlp value_net;
  Normalizer normalizer;
  TrpoState trpo;
  double amplitude_cap = 2.0;
  int episode = 0;  // episodes collected so far

  static Agent create(const WorkbenchConfig& cfg) {
    const auto dims = [](const std::vector<int>& hidden) {
      if (hidden.empty()) return Mlp::default_dims(kObservationSize, 1);
      std::vector<int> d{kObservationSize};
      d.insert(d.end(), hidden.begin(), hidden.end());
      d.push_back(1);
      return d;
    };
    Agent a{GaussianPolicy::create(dims(cfg.network.policy_hidden),
                                   derive_seed(cfg.seed, streams::kPolicyInit),
                                   cfg.network.initial_log_var, cfg.network.policy_output_gain,
                                   cfg.exploration),
            Mlp::xavier(dims(cfg.network.value_hidden), derive_seed(cfg.seed, streams::kValueInit)),
            Normalizer(kObservationSize),
            {},
            cfg.curriculum.start_cap,
            0};
    a.trpo = TrpoState::initial(a.policy, a.value_net, cfg.trpo);
    return a;
  }

  friend bool operator==(const Agent& a, const Agent& b) {
    return a.policy == b.policy && a.value_net == b.value_net && a.normalizer == b.normalizer &&
           a.trpo.alpha == b.trpo.alpha && a.trpo.policy_adam == b.trpo.policy_adam &&
           a.trpo.value_adam == b.trpo.value_adam && a.amplitude_cap == b.amplitude_cap &&
           a.episode == b.episode;
  }
};

/// Fills value, GAE advantage, value target, TD magnitude |V' - V| and
/// priority level of every step. A diverged episode bootstraps with 0.
inline void annotate(Trajectory& traj, const Mlp& value_net, const TrpoConfig& trpo,
                     const RewardConfig& reward_cfg, double success_error) {
  const std::size_t n = traj.steps.size();
  if (n == 0) return;
  Eigen::MatrixXd obs(kObservationSize, static_cast<Eigen::Index>(n));
  std::vector<double> rewards(n);
  for (std::size_t t = 0; t < n; ++t) {
    for (int i = 0; i < kObservationSize; ++i)
      obs(i, static_cast<Eigen::Index>(t)) = traj.steps[t].obs_norm[i];
    rewards[t] = traj.steps[t].reward;
  }
  const Eigen::RowVectorXd v = detail::forward_scalar_chunked(value_net, obs);
  std::vector<double> values(v.data(), v.data() + n);
  const double bootstrap = traj.diverged ? 0.0 : value_net.forward(traj.final_obs_norm)(0);
  const GaeResult g = gae(rewards, values, bootstrap, trpo.gamma, trpo.gae_lambda);
  for (std::size_t t = 0; t < n; ++t) {
    StepRecord& s = traj.steps[t];
    s.value = values[t];
    s.advantage = g.advantages[t];
    s.value_target = g.value_targets[t];
    s.td_magnitude = std::abs(s.value_target - s.value);
    s.level = priority_level(s, reward_cfg, success_error);
  }
}

/// Per-episode draws of one kind of non-nominality, uniform over
/// [0, l_max] ms (integers) or [-bound, bound] for each of the two deltas.
class NonNominalSampler {
 public:
  NonNominalSampler() = default;
  NonNominalSampler(NonNominalKind kind, double bound, std::uint64_t seed)
      : kind_(kind), bound_(bound), seed_(seed) {
    if (!(bound >= 0.0)) throw InvalidArgument("non-nominal bound must be >= 0");
    if (kind == NonNominalKind::kLatency && bound != std::floor(bound))
      throw InvalidArgument("latency bound must be a whole number of ms");
  }

  NonNominalKind kind() const { return kind_; }
  double bound() const { return bound_; }

  NonNominality draw(int episode) const {
    if (kind_ == NonNominalKind::kNone) return NonNominality::nominal();
    Rng rng(derive_seed(seed_, static_cast<std::uint64_t>(episode)));
    NonNominality s;
    if (kind_ == NonNominalKind::kLatency) {
      s = NonNominality::latency(static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(bound_))));
    } else {
      const double a = rng.uniform(-bound_, bound_);
      const double b = rng.uniform(-bound_, bound_);
      s = kind_ == NonNominalKind::kEstimation ? NonNominality::estimation(a, b)
                                                : NonNominality::parametric(a, b);
    }
    s.bound = bound_;
    return s;
  }

 private:
  NonNominalKind kind_ = NonNominalKind::kNone;
  double bound_ = 0.0;
  std::uint64_t seed_ = 0;
};

/// Deterministic fixed-signal test: -A/+A double step, no exploration.
inline Trajectory test_episode(const Agent& agent, const EnvConfig& env, double amplitude,
                               const NonNominality& nonnom = {}) {
  const CommandSignal signal = test_command(env.command, amplitude);
  GaussianPolicy policy = agent.policy;
  return run_episode(policy, env, signal, nonnom, agent.normalizer, false, 0);
}

inline PerformanceReport intermediate_test(const Agent& agent, const EnvConfig& env,
                                           double amplitude = 10.0,
                                           const NonNominality& nonnom = {}) {
  const Trajectory traj = test_episode(agent, env, amplitude, nonnom);
  return evaluate_metrics(traj, traj.mask, env.command.transition_window);
}

/// Promotion when the test's worst resting error, rescaled from the test
/// amplitude to the current cap, is below the resting-error threshold.
inline bool curriculum_promotes(const PerformanceReport& report, double cap,
                                const CurriculumConfig& cfg,
                                const PerformanceThresholds& th = {}) {
  if (report.diverged) return false;
  return report.max_resting_error * (cap / cfg.test_amplitude) < th.max_resting_error;
}

inline double next_cap(double cap, const CurriculumConfig& cfg) {
  return std::min(cap + cfg.increment, cfg.max_cap);
}

struct EpisodeRow {
  int episode = 0;
  int update = 0;
  double amplitude_cap = 0.0;
  NonNominality nonnom;
  double mean_abs_error = 0.0;
  double total_reward = 0.0;
  bool diverged = false;
  bool gate_open = false;
  int synthetic = 0;
  BperDiagnostics replay;
  std::size_t samples = 0;
  UpdateDiagnostics update_diag;
  double log_var_train = 0.0;
  bool fault = false;
};

struct TestRow {
  int episode = 0;
  double amplitude_cap = 0.0;
  PerformanceReport report;
  bool best = false;
  bool promoted = false;
};

struct TrainHooks {
  std::function<void(const EpisodeRow&)> on_episode;
  std::function<void(const TestRow&, const Trajectory&)> on_test;
  std::function<void(const Agent&, const PerformanceReport&)> on_best;
  std::function<void(const Agent&)> on_checkpoint;
};

class Trainer {
 public:
  Trainer(WorkbenchConfig cfg, Agent agent, NonNominalSampler sampler = {}, TrainHooks hooks = {},
          std::uint64_t run_seed = 0)
      : cfg_(std::move(cfg)),
        agent_(std::move(agent)),
        restore_point_(agent_),
        sampler_(sampler),
        hooks_(std::move(hooks)),
        buffer_(static_cast<std::size_t>(cfg_.replay.capacity)),
        run_seed_(run_seed ? run_seed : cfg_.seed) {
    cfg_.validate();
  }

  /// Collects `episodes` more episodes (in batches), updating after each batch.
  void run(int episodes) {
    if (episodes < 0) throw InvalidArgument("Trainer::run: negative episode budget");
    const int target = agent_.episode + episodes;
    while (agent_.episode < target) {
      const int batch = std::min(cfg_.replay.episodes_per_batch, target - agent_.episode);
      iterate(batch);
    }
  }

  const Agent& agent() const { return agent_; }
  const std::optional<Agent>& best() const { return best_; }
  const std::optional<PerformanceReport>& best_report() const { return best_report_; }
  const std::vector<double>& error_history() const { return errors_; }
  const std::vector<TestRow>& tests() const { return tests_; }
  int faults() const { return faults_; }
  const ReplayBuffer& buffer() const { return buffer_; }

 private:
  void iterate(int batch_size) {
    const EnvConfig& env = cfg_.env;
    const int first = agent_.episode;
    std::vector<EpisodeRow> rows;
    Batch batch;
    bool fault = false;

    // 1. collect
    for (int k = 0; k < batch_size; ++k) {
      const int ep = first + k;
      const auto e = static_cast<std::uint64_t>(ep);
      EpisodeRow row;
      row.episode = ep;
      row.amplitude_cap = agent_.amplitude_cap;
      row.nonnom = sampler_.draw(ep);
      const CommandSignal signal =
          generate_command(stream_seed(run_seed_, streams::kCommand, e), agent_.amplitude_cap, env.command);
      try {
        Trajectory traj = run_episode(agent_.policy, env, signal, row.nonnom, agent_.normalizer, true,
                                      stream_seed(run_seed_, streams::kExploration, e));
        update_normalizer(agent_.normalizer, traj);
        row.mean_abs_error = traj.mean_abs_error();
        row.total_reward = traj.total_reward();
        row.diverged = traj.diverged;
        previous_error_ = row.mean_abs_error;
        batch.push_back(std::move(traj));
      } catch (const NumericalFault&) {
        fault = true;
        row.fault = true;
        row.mean_abs_error = std::numeric_limits<double>::quiet_NaN();
      }
      errors_.push_back(row.mean_abs_error);
      rows.push_back(row);
    }
    agent_.episode = first + batch_size;

    UpdateDiagnostics diag;
    BperDiagnostics replay_diag;
    std::size_t samples = 0;
    int synthetic = 0;
    const bool gate = ser_gate(previous_error_, cfg_.replay.ser_threshold);
    if (!fault) {
      // 2. hindsight relabeling
      if (gate) {
        const std::size_t real = batch.size();
        for (std::size_t i = 0; i < real; ++i) {
          if (batch[i].diverged) continue;
          if (cfg_.replay.her_mean)
            batch.push_back(her_relabel(batch[i], HerStrategy::kMean, env, agent_.normalizer));
          if (cfg_.replay.her_final)
            batch.push_back(her_relabel(batch[i], HerStrategy::kFinal, env, agent_.normalizer));
        }
        synthetic = static_cast<int>(batch.size() - real);
      }
      // 3. advantages and targets
      for (auto& t : batch)
        annotate(t, agent_.value_net, cfg_.trpo, env.reward, cfg_.replay.success_error);
      // 4. store
      buffer_.push_batch(std::move(batch));
      // 5. training set
      Rng rng(stream_seed(run_seed_, streams::kUpdate, static_cast<std::uint64_t>(update_)));
      const BperSample sample = select_training_steps(
          buffer_, gate, static_cast<std::size_t>(cfg_.replay.sample_size), rng);
      replay_diag = sample.diag;
      samples = sample.steps.size();
      TrainingSet set = make_training_set(sample.steps);
      // 6-7. update and trust-region bookkeeping
      diag = trpo_update(agent_.policy, agent_.value_net, set, cfg_.trpo, agent_.trpo, rng);
      fault = diag.aborted;
    }
    if (fault) handle_fault();

    for (auto& row : rows) {
      row.update = update_;
      row.gate_open = gate;
      row.synthetic = synthetic;
      row.replay = replay_diag;
      row.samples = samples;
      row.update_diag = diag;
      row.log_var_train = agent_.policy.log_var_train;
      row.fault = row.fault || fault;
      if (hooks_.on_episode) hooks_.on_episode(row);
    }
    ++update_;

    const int interval = cfg_.curriculum.test_interval;
    if (agent_.episode / interval > first / interval) test();
  }

  void test() {
    TestRow row;
    row.episode = agent_.episode;
    row.amplitude_cap = agent_.amplitude_cap;
    const Trajectory traj = test_episode(agent_, cfg_.env, cfg_.curriculum.test_amplitude);
    row.report = evaluate_metrics(traj, traj.mask, cfg_.env.command.transition_window);
    if (!best_report_ || better_than(row.report, *best_report_)) {
      row.best = true;
      best_ = agent_;
      best_report_ = row.report;
    }
    if (agent_.amplitude_cap < cfg_.curriculum.max_cap &&
        curriculum_promotes(row.report, agent_.amplitude_cap, cfg_.curriculum)) {
      row.promoted = true;
      agent_.amplitude_cap = next_cap(agent_.amplitude_cap, cfg_.curriculum);
    }
    restore_point_ = agent_;
    tests_.push_back(row);
    if (hooks_.on_test) hooks_.on_test(row, traj);
    if (row.best && hooks_.on_best) hooks_.on_best(*best_, *best_report_);
    if (hooks_.on_checkpoint) hooks_.on_checkpoint(agent_);
  }

  void handle_fault() {
    ++faults_;
    const int episode = agent_.episode;
    agent_ = restore_point_;
    agent_.episode = episode;
    if (faults_ > cfg_.max_faults)
      throw NumericalFault("training aborted after " + std::to_string(faults_) + " numerical faults");
  }

  WorkbenchConfig cfg_;
  Agent agent_;
  Agent restore_point_;
  NonNominalSampler sampler_;
  TrainHooks hooks_;
  ReplayBuffer buffer_;
  std::uint64_t run_seed_;
  std::optional<Agent> best_;
  std::optional<PerformanceReport> best_report_;
  std::vector<double> errors_;
  std::vector<TestRow> tests_;
  double previous_error_ = std::numeric_limits<double>::infinity();
  int update_ = 0;
  int faults_ = 0;
};

struct TrainResult {
  Agent agent;
  std::optional<Agent> best;
  std::optional<PerformanceReport> best_report;
  std::vector<double> error_history;
  std::vector<TestRow> tests;
  int faults = 0;
};

/// Nominal training from a fresh agent for cfg.episodes episodes.
inline TrainResult train(const WorkbenchConfig& cfg, TrainHooks hooks = {}) {
  Trainer trainer(cfg, Agent::create(cfg), {}, std::move(hooks));
  trainer.run(cfg.episodes);
  return {trainer.agent(), trainer.best(), trainer.best_report(), trainer.error_history(),
          trainer.tests(), trainer.faults()};
}

/// True iff the mean |e_z| of the last `window` episodes exceeds
/// max(floor, factor * baseline). Shorter histories never diverge.
inline bool divergence_screen(const std::vector<double>& errors, double baseline,
                              const RobustifyConfig& cfg) {
  const auto w = static_cast<std::size_t>(cfg.screen_window);
  if (errors.size() < w) return false;
  double s = 0.0;
  for (std::size_t i = errors.size() - w; i < errors.size(); ++i)
    s += std::isfinite(errors[i]) ? errors[i] : std::numeric_limits<double>::infinity();
  return s / static_cast<double>(w) > std::max(cfg.screen_floor, cfg.screen_factor * baseline);
}

inline const std::vector<double>& default_bounds(NonNominalKind kind, const RobustifyConfig& cfg) {
  switch (kind) {
    case NonNominalKind::kLatency: return cfg.latency_bounds;
    case NonNominalKind::kEstimation: return cfg.estimation_bounds;
    case NonNominalKind::kParametric: return cfg.parametric_bounds;
    default: throw InvalidArgument("robustify: kind must be latency, estimation or parametric");
  }
}

struct RobustifyOutcome {
  double bound = 0.0;
  bool survived = false;
  double baseline = 0.0;       // mean |e_z| over the first screen window
  double screen_error = 0.0;   // rolling mean at the screen
  int episodes = 0;
  std::optional<Agent> best;
  std::optional<PerformanceReport> best_report;
};

/// Resumes training of `nominal` once per bound with per-episode draws of the
/// non-nominality; bounds failing the screen are dropped at screen_episode,
/// the rest continue to total_episodes.
inline std::vector<RobustifyOutcome> robustify(
    const Agent& nominal, const WorkbenchConfig& cfg, NonNominalKind kind,
    std::vector<double> bounds, const std::function<TrainHooks(double)>& hooks_for = {}) {
  if (bounds.empty()) bounds = default_bounds(kind, cfg.robustify);
  std::vector<RobustifyOutcome> out;
  for (std::size_t i = 0; i < bounds.size(); ++i) {
    const std::uint64_t seed = stream_seed(cfg.seed, streams::kRobustify, i);
    NonNominalSampler sampler(kind, bounds[i], derive_seed(seed, streams::kNonNominal));
    Trainer trainer(cfg, nominal, sampler, hooks_for ? hooks_for(bounds[i]) : TrainHooks{}, seed);
    RobustifyOutcome r;
    r.bound = bounds[i];
    const int window = cfg.robustify.screen_window;
    const int screen = cfg.robustify.screen_episode;
    trainer.run(std::min(window, screen));
    const auto& hist = trainer.error_history();
    double base = 0.0;
    for (double e : hist) base += e;
    r.baseline = hist.empty() ? 0.0 : base / static_cast<double>(hist.size());
    trainer.run(screen - std::min(window, screen));
    const bool diverged = divergence_screen(trainer.error_history(), r.baseline, cfg.robustify);
    {
      const auto& h = trainer.error_history();
      const std::size_t w = std::min<std::size_t>(h.size(), static_cast<std::size_t>(window));
      double s = 0.0;
      for (std::size_t k = h.size() - w; k < h.size(); ++k) s += h[k];
      r.screen_error = w ? s / static_cast<double>(w) : 0.0;
    }
    if (!diverged) {
      trainer.run(cfg.robustify.total_episodes - screen);
      r.survived = true;
      r.best = trainer.best();
      r.best_report = trainer.best_report();
    }
    r.episodes = trainer.agent().episode - nominal.episode;
    out.push_back(std::move(r));
  }
  return out;
}

// --- sweeps ----------------------------------------------------------------------

/// Latency 0..40 ms step 1; estimation -10%..10% step 0.5 pp; parametric
/// -40%..40% step 2 pp (the last two applied to both deltas at once).
inline std::vector<double> default_grid(NonNominalKind kind) {
  std::vector<double> g;
  switch (kind) {
    case NonNominalKind::kLatency:
      for (int i = 0; i <= 40; ++i) g.push_back(i);
      break;
    case NonNominalKind::kEstimation:
      for (int i = -20; i <= 20; ++i) g.push_back(i * 0.005);
      break;
    case NonNominalKind::kParametric:
      for (int i = -20; i <= 20; ++i) g.push_back(i * 0.02);
      break;
    default: throw InvalidArgument("sweep: kind must be latency, estimation or parametric");
  }
  return g;
}

inline NonNominality grid_point(NonNominalKind kind, double value) {
  switch (kind) {
    case NonNominalKind::kLatency:
      if (value < 0.0 || value != std::floor(value))
        throw InvalidArgument("latency grid values must be whole non-negative ms");
      return NonNominality::latency(static_cast<int>(value));
    case NonNominalKind::kEstimation: return NonNominality::estimation(value, value);
    case NonNominalKind::kParametric: return NonNominality::parametric(value, value);
    default: return NonNominality::nominal();
  }
}

struct SweepPoint {
  double value = 0.0;
  PerformanceReport a;
  PerformanceReport b;
};

struct SweepResult {
  NonNominalKind kind = NonNominalKind::kNone;
  std::vector<SweepPoint> points;
  std::array<double, kMetricCount> success_rate{};  // % of grid points where b < a
};

/// Metric value used for comparisons; a diverged run counts as +inf.
inline double comparable(const PerformanceReport& r, int metric) {
  return r.diverged ? std::numeric_limits<double>::infinity() : r.values()[metric];
}

inline SweepResult sweep(NonNominalKind kind, const std::vector<double>& grid,
                         const std::function<PerformanceReport(const NonNominality&)>& eval_a,
                         const std::function<PerformanceReport(const NonNominality&)>& eval_b) {
  if (grid.empty()) throw InvalidArgument("sweep: empty grid");
  SweepResult out;
  out.kind = kind;
  std::array<int, kMetricCount> wins{};
  for (double v : grid) {
    const NonNominality nonnom = grid_point(kind, v);
    SweepPoint p{v, eval_a(nonnom), eval_b(nonnom)};
    for (int m = 0; m < kMetricCount; ++m) wins[m] += comparable(p.b, m) < comparable(p.a, m) ? 1 : 0;
    out.points.push_back(p);
  }
  for (int m = 0; m < kMetricCount; ++m)
    out.success_rate[m] = 100.0 * wins[m] / static_cast<double>(grid.size());
  return out;
}

inline SweepResult sweep(const Agent& a, const Agent& b, const EnvConfig& env, NonNominalKind kind,
                         const std::vector<double>& grid, double amplitude = 10.0) {
  return sweep(
      kind, grid, [&](const NonNominality& s) { return intermediate_test(a, env, amplitude, s); },
      [&](const NonNominality& s) { return intermediate_test(b, env, amplitude, s); });
}

}  // namespace pitchrl
