#include <gtest/gtest.h>

#include <cmath>
#include <deque>
#include <map>
#include <memory>
#include <vector>

#include "pitchrl/episode.hpp"
#include "pitchrl/replay.hpp"
#include "pitchrl/rng.hpp"

using namespace pitchrl;

namespace {

struct WobblyPolicy {
  ActionSample act(const Observation& obs, double, Rng& rng, bool explore) const {
    const double m = 0.004 * std::tanh(obs[kObsError]);
    return {explore ? m + 0.001 * rng.normal() : m, m, 0.001, 0.0};
  }
};

Trajectory sample_episode(std::uint64_t seed, double cap = 6.0) {
  static const EnvConfig env;
  WobblyPolicy p;
  return run_episode(p, env, generate_command(seed, cap), NonNominality::nominal(), Normalizer(kObservationSize),
                     true, seed);
}

// Owns records and hands out pointers in insertion order.
struct StepPool {
  std::deque<StepRecord> records;
  std::vector<const StepRecord*> ptrs;
  void add(double td, int level) {
    StepRecord s;
    s.td_magnitude = td;
    s.level = level;
    records.push_back(s);
    ptrs.push_back(&records.back());
  }
};

Trajectory with_steps(int n, int id) {
  Trajectory t;
  t.steps.resize(static_cast<std::size_t>(n));
  for (auto& s : t.steps) s.td_magnitude = id;
  return t;
}

}  // namespace

TEST(PriorityLevel, Examples) {
  const RewardConfig cfg;
  StepRecord s;
  s.e_z = 0.3;
  s.eta = 0.05;
  s.e_u = 0.005;
  EXPECT_EQ(priority_level(s, cfg), 1);
  s.e_z = 0.5;
  EXPECT_EQ(priority_level(s, cfg), 0);
  s.e_z = -0.3;
  s.e_u = 0.01;
  EXPECT_EQ(priority_level(s, cfg), 0);
  s.e_u = -0.005;
  s.eta = 0.5 * cfg.eta_max;
  EXPECT_EQ(priority_level(s, cfg), 0);
  s.eta = -0.13;
  EXPECT_EQ(priority_level(s, cfg), 1);
}

TEST(SerGate, Boundary) {
  EXPECT_TRUE(ser_gate(2.0));
  EXPECT_FALSE(ser_gate(std::nextafter(2.0, 3.0)));
  EXPECT_FALSE(ser_gate(3.0));
  EXPECT_TRUE(ser_gate(0.0));
  EXPECT_FALSE(ser_gate(NAN));
}

TEST(SerGate, ClosedPathReturnsWholeBufferVerbatim) {
  ReplayBuffer buf(3);
  for (int b = 0; b < 4; ++b) buf.push_batch({with_steps(5 + b, b), with_steps(2, 10 + b)});
  Rng rng(1);
  const BperSample s = select_training_steps(buf, false, 3, rng);
  EXPECT_EQ(s.steps, buf.steps());
  EXPECT_EQ(s.steps.size(), buf.step_count());
  const BperSample open = select_training_steps(buf, true, 3, rng);
  EXPECT_EQ(open.steps.size(), 3u);
}

TEST(ReplayBuffer, FifoEviction) {
  ReplayBuffer buf(2);
  buf.push_batch({with_steps(3, 1)});
  buf.push_batch({with_steps(4, 2)});
  buf.push_batch({with_steps(5, 3)});
  ASSERT_EQ(buf.batch_count(), 2u);
  EXPECT_EQ(buf.batches().front()[0].steps[0].td_magnitude, 2.0);
  EXPECT_EQ(buf.step_count(), 9u);
  const auto [n0, n1] = buf.level_counts();
  EXPECT_EQ(n0 + n1, buf.step_count());
  EXPECT_THROW(ReplayBuffer(0), InvalidArgument);
}

TEST(ReplayBuffer, MatchesQueueModel) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t cap = 1 + static_cast<std::size_t>(rng.uniform_int(0, 5));
    ReplayBuffer buf(cap);
    std::deque<int> model;
    for (int id = 0; id < 30; ++id) {
      buf.push_batch({with_steps(1 + static_cast<int>(rng.uniform_int(0, 3)), id)});
      model.push_back(id);
      if (model.size() > cap) model.pop_front();
      ASSERT_EQ(buf.batch_count(), model.size());
      for (std::size_t k = 0; k < model.size(); ++k)
        ASSERT_EQ(buf.batches()[k][0].steps[0].td_magnitude, model[k]);
    }
  }
}

TEST(Ranks, DescendingTdWithStableTies) {
  StepPool pool;
  for (double td : {0.5, 3.0, 0.5, 7.0, 0.5}) pool.add(td, 0);
  EXPECT_EQ(td_ranks(pool.ptrs), (std::vector<std::size_t>{3, 2, 4, 1, 5}));
  const auto r = td_ranks(pool.ptrs);
  EXPECT_EQ(r[0], 3u);
  EXPECT_EQ(r[2], 4u);
  EXPECT_EQ(r[4], 5u);
}

TEST(Bper, QuotaHitsTwentyFivePercent) {
  StepPool pool;
  Rng rng(3);
  for (int i = 0; i < 100; ++i) pool.add(rng.uniform(0, 10), i % 10 == 0 ? 1 : 0);
  const BperSample s = bper_sample(pool.ptrs, 100000, rng);
  EXPECT_TRUE(s.diag.balanced);
  EXPECT_EQ(s.diag.n1, 10u);
  EXPECT_EQ(s.diag.n0, 90u);
  EXPECT_NEAR(static_cast<double>(s.diag.drawn_success) / 1e5, 0.25, 0.02);
}

TEST(Bper, TwoToOneOdds) {
  StepPool pool;
  pool.add(10.0, 0);
  pool.add(1.0, 0);
  Rng rng(4);
  const int n = 90000;
  const BperSample s = bper_sample(pool.ptrs, n, rng);
  int first = 0;
  for (const StepRecord* p : s.steps) first += p == pool.ptrs[0];
  // binomial(n, 2/3): 4 standard deviations
  const double sd = std::sqrt(n * (2.0 / 3.0) * (1.0 / 3.0));
  EXPECT_NEAR(first, n * 2.0 / 3.0, 4 * sd);
}

TEST(Bper, MoltenDrawMatchesAnalyticShare) {
  StepPool pool;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) pool.add(rng.uniform(0, 1), i % 2);
  const auto rank = td_ranks(pool.ptrs);
  double total = 0.0, success = 0.0;
  for (std::size_t i = 0; i < rank.size(); ++i) {
    total += 1.0 / rank[i];
    if (pool.ptrs[i]->level == 1) success += 1.0 / rank[i];
  }
  const int n = 100000;
  const BperSample s = bper_sample(pool.ptrs, n, rng);
  EXPECT_FALSE(s.diag.balanced);
  const double expected = success / total;
  EXPECT_NEAR(static_cast<double>(s.diag.drawn_success) / n, expected, 4 * std::sqrt(expected * (1 - expected) / n));
}

TEST(Bper, ProbabilityNonIncreasingInRankWithinPool) {
  StepPool pool;
  for (int i = 0; i < 8; ++i) pool.add(8.0 - i, i < 2 ? 1 : 0);
  Rng rng(6);
  const BperSample s = bper_sample(pool.ptrs, 200000, rng);
  std::map<const StepRecord*, int> hits;
  for (const StepRecord* p : s.steps) ++hits[p];
  for (int i = 3; i < 8; ++i) EXPECT_GE(hits[pool.ptrs[i - 1]] * 1.02, hits[pool.ptrs[i]]) << i;
  EXPECT_GT(hits[pool.ptrs[0]], hits[pool.ptrs[1]]);
}

TEST(Bper, EmptySuccessPoolReassignsQuota) {
  StepPool pool;
  for (int i = 0; i < 20; ++i) pool.add(i, 0);
  Rng rng(7);
  const BperSample s = bper_sample(pool.ptrs, 100, rng);
  EXPECT_EQ(s.steps.size(), 100u);
  EXPECT_EQ(s.diag.reassigned, 25u);
  EXPECT_EQ(s.diag.drawn_success, 0u);
  StepPool empty;
  EXPECT_THROW(bper_sample(empty.ptrs, 1, rng), InvalidArgument);
}

TEST(Her, ConstantResponseGivesThatAmplitude) {
  Trajectory t = sample_episode(1);
  for (auto& s : t.steps) s.a_z = 1.75;
  const EnvConfig env;
  const Normalizer n(kObservationSize);
  for (HerStrategy h : {HerStrategy::kMean, HerStrategy::kFinal}) {
    const Trajectory r = her_relabel(t, h, env, n);
    EXPECT_DOUBLE_EQ(r.command.amplitudes[0], 1.75);
    EXPECT_DOUBLE_EQ(r.command.amplitudes[1], 1.75);
    EXPECT_EQ(r.command.rises, t.command.rises);
  }
}

TEST(Her, PerfectTrackingIsAFixedPoint) {
  Trajectory t = sample_episode(2);
  for (std::size_t i = 0; i < t.steps.size(); ++i) t.steps[i].a_z = t.command.samples[i];
  const Trajectory r = her_relabel(t, HerStrategy::kMean, EnvConfig{}, Normalizer(kObservationSize));
  EXPECT_NEAR(r.command.amplitudes[0], t.command.amplitudes[0], 1e-12);
  EXPECT_NEAR(r.command.amplitudes[1], t.command.amplitudes[1], 1e-12);
}

TEST(Her, MeanStrategyCentersRestingError) {
  const EnvConfig env;
  Normalizer n(kObservationSize);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Trajectory t = sample_episode(seed);
    update_normalizer(n, t);
    const Trajectory r = her_relabel(t, HerStrategy::kMean, env, n);
    const auto plateaus = plateau_windows(r.command, r.mask);
    for (auto [b, e] : plateaus) {
      if (b >= e) continue;
      double s = 0.0;
      for (int i = b; i < e; ++i) s += r.command.samples[i] - r.steps[i].a_z;
      ASSERT_LT(std::abs(s / (e - b)), 1e-9);
    }
  }
}

TEST(Her, KeepsActionsAndPlantButRecomputesRewards) {
  const EnvConfig env;
  const Normalizer n(kObservationSize);
  const Trajectory t = sample_episode(4);
  const Trajectory copy = t;
  const Trajectory r = her_relabel(t, HerStrategy::kFinal, env, n);
  ASSERT_EQ(r.size(), t.size());
  EXPECT_TRUE(r.synthetic);
  for (std::size_t i = 0; i < t.size(); ++i) {
    ASSERT_EQ(r.steps[i].action, t.steps[i].action);
    ASSERT_EQ(r.steps[i].a_z, t.steps[i].a_z);
    ASSERT_EQ(r.steps[i].eta, t.steps[i].eta);
    ASSERT_EQ(r.steps[i].obs[kObsPitchRate], t.steps[i].obs[kObsPitchRate]);
    ASSERT_TRUE(r.steps[i].synthetic);
    ASSERT_DOUBLE_EQ(r.steps[i].e_z, r.shaped[i] - r.steps[i].a_z);
    ASSERT_EQ(r.steps[i].reward,
              reward(r.steps[i].e_z, r.steps[i].eta, r.steps[i].eta_prev, r.steps[i].e_u, env.reward, 1e-3).total);
  }
  // the source is untouched
  for (std::size_t i = 0; i < t.size(); ++i) ASSERT_EQ(t.steps[i].reward, copy.steps[i].reward);
  EXPECT_FALSE(t.synthetic);
}

TEST(Her, RequiresMaskAndFullEpisode) {
  Trajectory t = sample_episode(5);
  Trajectory truncated = t;
  truncated.steps.resize(100);
  EXPECT_THROW(her_relabel(truncated, HerStrategy::kMean, EnvConfig{}, Normalizer(kObservationSize)),
               StructuralError);
  t.mask.clear();
  EXPECT_THROW(her_relabel(t, HerStrategy::kMean, EnvConfig{}, Normalizer(kObservationSize)), StructuralError);
}
