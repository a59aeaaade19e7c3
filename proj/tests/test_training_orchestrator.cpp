#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "oracles.hpp"
#include "pitchrl/trainer.hpp"

using namespace pitchrl;

namespace {

WorkbenchConfig quick_config() {
  WorkbenchConfig cfg;
  cfg.seed = 42;
  cfg.trpo.epochs = 1;
  cfg.trpo.minibatch = 2048;
  cfg.replay.capacity = 2;
  cfg.curriculum.test_interval = 2;
  return cfg;
}

Agent zero_policy_agent(const WorkbenchConfig& cfg) {
  Agent a = Agent::create(cfg);
  for (double& p : a.policy.mean_net.parameters()) p = 0.0;
  return a;
}

PerformanceReport constant_report(std::array<double, kMetricCount> v, bool diverged = false) {
  PerformanceReport r;
  r.max_resting_error = v[0];
  r.overshoot = v[1];
  r.max_actuation = v[2];
  r.noise_resting = v[3];
  r.noise_transition = v[4];
  r.diverged = diverged;
  return assess(r);
}

}  // namespace

TEST(Train, ZeroBudgetReturnsInitialAgent) {
  WorkbenchConfig cfg = quick_config();
  cfg.episodes = 0;
  int rows = 0;
  TrainHooks hooks;
  hooks.on_episode = [&](const EpisodeRow&) { ++rows; };
  const TrainResult r = train(cfg, hooks);
  EXPECT_EQ(r.agent, Agent::create(cfg));
  EXPECT_TRUE(r.error_history.empty());
  EXPECT_TRUE(r.tests.empty());
  EXPECT_FALSE(r.best.has_value());
  EXPECT_EQ(rows, 0);
}

TEST(Train, AgentCreationIsSeeded) {
  WorkbenchConfig cfg = quick_config();
  EXPECT_EQ(Agent::create(cfg), Agent::create(cfg));
  const Agent a = Agent::create(cfg);
  cfg.seed = 43;
  EXPECT_FALSE(a == Agent::create(cfg));
  EXPECT_EQ(a.policy.mean_net.dims(), (std::vector<int>{10, 100, 32, 10, 1}));
  EXPECT_EQ(a.amplitude_cap, 2.0);
}

TEST(Train, ShortRunIsDeterministicAndConsistent) {
  const WorkbenchConfig cfg = quick_config();
  const auto run = [&] {
    std::vector<EpisodeRow> rows;
    std::vector<TestRow> tests;
    TrainHooks hooks;
    hooks.on_episode = [&](const EpisodeRow& r) { rows.push_back(r); };
    hooks.on_test = [&](const TestRow& t, const Trajectory&) { tests.push_back(t); };
    Trainer t(cfg, Agent::create(cfg), {}, hooks);
    t.run(6);
    return std::make_tuple(rows, tests, t.agent(), t.best_report());
  };
  const auto [rows_a, tests_a, agent_a, best_a] = run();
  const auto [rows_b, tests_b, agent_b, best_b] = run();
  ASSERT_EQ(rows_a.size(), 6u);
  ASSERT_EQ(tests_a.size(), 3u);
  EXPECT_EQ(agent_a, agent_b);
  for (std::size_t i = 0; i < rows_a.size(); ++i) {
    EXPECT_EQ(rows_a[i].episode, static_cast<int>(i));
    EXPECT_EQ(rows_a[i].update, static_cast<int>(i / 2));
    EXPECT_EQ(rows_a[i].mean_abs_error, rows_b[i].mean_abs_error);
    EXPECT_EQ(rows_a[i].total_reward, rows_b[i].total_reward);
    EXPECT_EQ(rows_a[i].update_diag.l2, rows_b[i].update_diag.l2);
    EXPECT_FALSE(rows_a[i].fault);
  }
  EXPECT_EQ(agent_a.episode, 6);
  EXPECT_GT(agent_a.normalizer.count(), 0u);
  // best-agent dominance and cap monotonicity
  ASSERT_TRUE(best_a.has_value());
  double cap = 0.0;
  for (const TestRow& t : tests_a) {
    EXPECT_FALSE(better_than(t.report, *best_a));
    EXPECT_GE(t.amplitude_cap, cap);
    cap = t.amplitude_cap;
  }
}

TEST(Train, GateFollowsPreviousEpisodeError) {
  WorkbenchConfig cfg = quick_config();
  std::vector<EpisodeRow> rows;
  TrainHooks hooks;
  hooks.on_episode = [&](const EpisodeRow& r) { rows.push_back(r); };
  Trainer t(cfg, Agent::create(cfg), {}, hooks);
  t.run(4);
  for (std::size_t i = 1; i < rows.size(); i += 2) {
    const bool expected = rows[i].mean_abs_error <= cfg.replay.ser_threshold;
    EXPECT_EQ(rows[i].gate_open, expected);
    if (expected) {
      EXPECT_EQ(rows[i].synthetic, 4);
      EXPECT_EQ(rows[i].samples, static_cast<std::size_t>(cfg.replay.sample_size));
    } else {
      EXPECT_EQ(rows[i].synthetic, 0);
    }
  }
  EXPECT_LE(t.buffer().batch_count(), 2u);
}

TEST(Train, ResumingInTwoLegsMatchesOneRun) {
  const WorkbenchConfig cfg = quick_config();
  Trainer whole(cfg, Agent::create(cfg));
  whole.run(4);
  Trainer split(cfg, Agent::create(cfg));
  split.run(2);
  split.run(2);
  EXPECT_EQ(whole.agent(), split.agent());
  EXPECT_EQ(whole.error_history(), split.error_history());
}

TEST(IntermediateTest, ZeroPolicyCannotTrackButStaysQuiet) {
  const WorkbenchConfig cfg = quick_config();
  const Agent a = zero_policy_agent(cfg);
  const PerformanceReport r = intermediate_test(a, cfg.env);
  EXPECT_FALSE(r.pass[0]);
  // a_z stays 0, so the worst resting error is the reference itself just
  // after a transition window closes, still overshooting
  EXPECT_NEAR(r.max_resting_error, 10.0 * oracle::second_order_step(0.6, 10.0, 0.7), 2e-3);
  EXPECT_EQ(r.max_actuation, 0.0);
  EXPECT_EQ(r.noise_resting, 0.0);
  EXPECT_EQ(r.noise_transition, 0.0);
  EXPECT_EQ(r, intermediate_test(a, cfg.env));
}

TEST(IntermediateTest, ReportIsIndependentOfCap) {
  const WorkbenchConfig cfg = quick_config();
  Agent a = Agent::create(cfg);
  const PerformanceReport r1 = intermediate_test(a, cfg.env);
  a.amplitude_cap = 9.0;
  EXPECT_EQ(intermediate_test(a, cfg.env), r1);
}

TEST(Curriculum, PromotionRule) {
  const CurriculumConfig cfg;
  PerformanceReport r;
  r.max_resting_error = 2.4;  // rescaled to cap 2: 0.48 g
  EXPECT_TRUE(curriculum_promotes(r, 2.0, cfg));
  r.max_resting_error = 2.5;  // exactly 0.5 g: strict
  EXPECT_FALSE(curriculum_promotes(r, 2.0, cfg));
  r.max_resting_error = 0.1;
  r.diverged = true;
  EXPECT_FALSE(curriculum_promotes(r, 2.0, cfg));
  EXPECT_EQ(next_cap(2.0, cfg), 3.0);
  EXPECT_EQ(next_cap(9.5, cfg), 10.0);
  EXPECT_EQ(next_cap(10.0, cfg), 10.0);
}

TEST(DivergenceScreen, Rule) {
  RobustifyConfig cfg;
  EXPECT_FALSE(divergence_screen(std::vector<double>(100, 1.0), 1.0, cfg));
  EXPECT_FALSE(divergence_screen(std::vector<double>(50, 100.0), 1.0, cfg));
  std::vector<double> ramp;
  for (int i = 0; i < 300; ++i) ramp.push_back(1.0 + 7.0 * i / 299.0);
  EXPECT_TRUE(divergence_screen(ramp, 1.0, cfg));
  EXPECT_FALSE(divergence_screen(std::vector<double>(100, 5.0), 1.0, cfg));
  EXPECT_TRUE(divergence_screen(std::vector<double>(100, std::nextafter(5.0, 6.0)), 1.0, cfg));
  EXPECT_FALSE(divergence_screen(std::vector<double>(100, 8.0), 4.0, cfg));
  std::vector<double> with_fault(100, 1.0);
  with_fault[50] = NAN;
  EXPECT_TRUE(divergence_screen(with_fault, 1.0, cfg));
}

TEST(Sampler, LatencyIsUniformOverIntegers) {
  const NonNominalSampler s(NonNominalKind::kLatency, 5, 99);
  std::array<int, 6> counts{};
  for (int e = 0; e < 10000; ++e) {
    const NonNominality nonnom = s.draw(e);
    ASSERT_GE(nonnom.latency_ms, 0);
    ASSERT_LE(nonnom.latency_ms, 5);
    ++counts[nonnom.latency_ms];
  }
  for (int c : counts) EXPECT_NEAR(c / 1e4, 1.0 / 6.0, 0.02);
}

TEST(Sampler, DrawsAreFixedPerEpisodeAndBounded) {
  const NonNominalSampler s(NonNominalKind::kParametric, 0.1, 7);
  for (int e = 0; e < 1000; ++e) {
    const NonNominality a = s.draw(e), b = s.draw(e);
    ASSERT_EQ(a.delta_first, b.delta_first);
    ASSERT_EQ(a.delta_second, b.delta_second);
    ASSERT_LE(std::abs(a.delta_cz()), 0.1);
    ASSERT_LE(std::abs(a.delta_cm()), 0.1);
  }
  EXPECT_NE(s.draw(1).delta_first, s.draw(2).delta_first);
  EXPECT_THROW(NonNominalSampler(NonNominalKind::kLatency, 2.5, 1), InvalidArgument);
  EXPECT_THROW(NonNominalSampler(NonNominalKind::kEstimation, -0.1, 1), InvalidArgument);
}

TEST(Robustify, ZeroBoundMatchesNominalResumption) {
  WorkbenchConfig cfg = quick_config();
  cfg.robustify.screen_window = 2;
  cfg.robustify.screen_episode = 2;
  cfg.robustify.total_episodes = 4;
  const Agent nominal = Agent::create(cfg);
  std::vector<double> robust_errors;
  const auto hooks_for = [&](double) {
    TrainHooks h;
    h.on_episode = [&](const EpisodeRow& r) { robust_errors.push_back(r.mean_abs_error); };
    return h;
  };
  const auto out = robustify(nominal, cfg, NonNominalKind::kParametric, {0.0}, hooks_for);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].episodes, 4);

  Trainer plain(cfg, nominal, {}, {}, stream_seed(cfg.seed, streams::kRobustify, 0));
  plain.run(4);
  EXPECT_EQ(plain.error_history(), robust_errors);
}

TEST(Robustify, ScreenDropsDivergingBounds) {
  WorkbenchConfig cfg = quick_config();
  cfg.robustify.screen_window = 2;
  cfg.robustify.screen_episode = 2;
  cfg.robustify.total_episodes = 4;
  cfg.robustify.screen_floor = 0.0;
  cfg.robustify.screen_factor = 0.0;  // any error counts as divergence
  const auto out = robustify(Agent::create(cfg), cfg, NonNominalKind::kLatency, {1, 3});
  ASSERT_EQ(out.size(), 2u);
  for (const auto& r : out) {
    EXPECT_FALSE(r.survived);
    EXPECT_EQ(r.episodes, 2);
    EXPECT_FALSE(r.best.has_value());
  }
  EXPECT_THROW(robustify(Agent::create(cfg), cfg, NonNominalKind::kNone, {}), InvalidArgument);
}

TEST(Robustify, DefaultBoundsAreTheCandidateLists) {
  const RobustifyConfig cfg;
  EXPECT_EQ(default_bounds(NonNominalKind::kLatency, cfg), (std::vector<double>{1, 3, 5, 10}));
  EXPECT_EQ(default_bounds(NonNominalKind::kEstimation, cfg), (std::vector<double>{0.01, 0.02, 0.03, 0.05}));
  EXPECT_EQ(default_bounds(NonNominalKind::kParametric, cfg), (std::vector<double>{0.05, 0.07, 0.10, 0.15}));
}

TEST(Sweep, GridShapes) {
  const auto lat = default_grid(NonNominalKind::kLatency);
  const auto est = default_grid(NonNominalKind::kEstimation);
  const auto par = default_grid(NonNominalKind::kParametric);
  EXPECT_EQ(lat.size(), 41u);
  EXPECT_EQ(est.size(), 41u);
  EXPECT_EQ(par.size(), 41u);
  EXPECT_EQ(lat.back(), 40.0);
  EXPECT_DOUBLE_EQ(est.front(), -0.10);
  EXPECT_DOUBLE_EQ(est.back(), 0.10);
  EXPECT_DOUBLE_EQ(par.front(), -0.40);
  EXPECT_DOUBLE_EQ(par.back(), 0.40);
  EXPECT_EQ(grid_point(NonNominalKind::kEstimation, 0.03).delta_mach(), 0.03);
  EXPECT_EQ(grid_point(NonNominalKind::kEstimation, 0.03).delta_height(), 0.03);
  EXPECT_EQ(grid_point(NonNominalKind::kParametric, -0.2).delta_cm(), -0.2);
  EXPECT_THROW(grid_point(NonNominalKind::kLatency, 1.5), InvalidArgument);
}

TEST(Sweep, SelfSweepIsZeroPercent) {
  const WorkbenchConfig cfg = quick_config();
  const Agent a = Agent::create(cfg);
  const SweepResult s = sweep(a, a, cfg.env, NonNominalKind::kLatency, {0, 20, 40});
  ASSERT_EQ(s.points.size(), 3u);
  for (double r : s.success_rate) EXPECT_EQ(r, 0.0);
}

TEST(Sweep, HandCountedSuccessRates) {
  // a is fixed; b beats a on metric m at grid points where b's value is lower
  const auto eval_a = [](const NonNominality&) { return constant_report({0.5, 10, 0.1, 0.05, 0.01}); };
  const auto eval_b = [](const NonNominality& s) {
    const int l = s.latency_ms;
    if (l == 3) return constant_report({0.1, 1, 0.01, 0.01, 0.001}, true);  // diverged never wins
    return constant_report({l < 2 ? 0.4 : 0.6, 10, 0.05, 0.06, 0.01});
  };
  const SweepResult s = sweep(NonNominalKind::kLatency, {0, 1, 2, 3}, eval_a, eval_b);
  EXPECT_EQ(s.success_rate[0], 50.0);
  EXPECT_EQ(s.success_rate[1], 0.0);
  EXPECT_EQ(s.success_rate[2], 75.0);
  EXPECT_EQ(s.success_rate[3], 0.0);
  EXPECT_EQ(s.success_rate[4], 0.0);
  EXPECT_THROW(sweep(NonNominalKind::kLatency, {}, eval_a, eval_b), InvalidArgument);
}

// One-step bandit: reward -(eta - 0.3)^2 for a constant observation; the
// update machinery must move the policy toward the optimum. Each sample is its
// own minibatch so the batch likelihood-ratio term carries per-sample credit.
TEST(Bandit, MeanRewardImprovesOverTwoHundredEpisodes) {
  GaussianPolicy policy = GaussianPolicy::create({kObservationSize, 8, 1}, 3, std::log(0.04), 1.0);
  Mlp value = Mlp::xavier({kObservationSize, 8, 1}, 4);
  TrpoConfig cfg;
  cfg.minibatch = 1;
  cfg.epochs = 2;
  cfg.lr_policy = 3e-3;
  cfg.trust_radius = 0.05;
  cfg.alpha0 = 1.0;
  cfg.beta = 0.0;
  TrpoState state = TrpoState::initial(policy, value, cfg);
  Observation obs{};
  obs[0] = 1.0;
  std::vector<double> episode_reward;
  for (int ep = 0; ep < 200; ++ep) {
    Rng rng(1000 + ep);
    std::vector<StepRecord> steps(32);
    double total = 0.0;
    for (auto& s : steps) {
      s.obs_norm = obs;
      const ActionSample a = policy.act(obs, 0.0, rng, true);
      s.action = a.eta_com;
      s.reward = -(a.eta_com - 0.3) * (a.eta_com - 0.3);
      total += s.reward;
    }
    episode_reward.push_back(total / 32.0);
    const double v = value.forward(obs)(0);
    std::vector<const StepRecord*> ptrs;
    for (auto& s : steps) {
      s.advantage = s.reward - v;
      s.value_target = s.reward;
      ptrs.push_back(&s);
    }
    TrainingSet set = make_training_set(ptrs);
    trpo_update(policy, value, set, cfg, state, rng);
  }
  const double first = std::accumulate(episode_reward.begin(), episode_reward.begin() + 20, 0.0) / 20;
  const double last = std::accumulate(episode_reward.end() - 20, episode_reward.end(), 0.0) / 20;
  EXPECT_GT(last, first);
  EXPECT_NEAR(policy.mean(obs), 0.3, 0.1);
}
