#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "pitchrl/adam.hpp"
#include "pitchrl/mlp.hpp"
#include "pitchrl/rng.hpp"

using namespace pitchrl;

namespace {

Eigen::MatrixXd random_batch(int rows, int cols, Rng& rng) {
  Eigen::MatrixXd x(rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) x(r, c) = rng.uniform(-2, 2);
  return x;
}

Mlp random_net(const std::vector<int>& dims, Rng& rng) {
  Mlp net(dims);
  for (double& p : net.parameters()) p = rng.uniform(-1, 1);
  return net;
}

// Scalar objective sum_j <g_j, f(x_j)>.
double objective(const Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  return (net.forward(x).array() * g.array()).sum();
}

double max_fd_relative_error(Mlp& net, const Eigen::MatrixXd& x, const Eigen::MatrixXd& g) {
  Mlp::Cache cache;
  net.forward(x, &cache);
  const std::vector<double> grad = net.backward(g, cache);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const double p = net.parameters()[i];
    net.parameters()[i] = p + h;
    const double up = objective(net, x, g);
    net.parameters()[i] = p - h;
    const double down = objective(net, x, g);
    net.parameters()[i] = p;
    const double fd = (up - down) / (2 * h);
    const double err = std::abs(fd - grad[i]) / std::max(1e-6, std::abs(fd) + std::abs(grad[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace

TEST(Mlp, DefaultDims) {
  EXPECT_EQ(Mlp::default_dims(10, 1), (std::vector<int>{10, 100, 32, 10, 1}));
  EXPECT_EQ(Mlp::default_dims(10, 1).size(), 5u);
  EXPECT_THROW(Mlp(std::vector<int>{3}), InvalidArgument);
  EXPECT_THROW(Mlp(std::vector<int>{3, 0, 1}), InvalidArgument);
}

TEST(Mlp, ZeroWeightsGiveFinalBias) {
  Mlp net({4, 6, 2});
  net.bias(1)(0) = 0.25;
  net.bias(1)(1) = -3.0;
  const Eigen::VectorXd y = net.forward(std::vector<double>{1, 2, 3, 4});
  EXPECT_EQ(y(0), 0.25);
  EXPECT_EQ(y(1), -3.0);
}

TEST(Mlp, IdentityLayerReproducesInput) {
  Mlp net({3, 3});
  net.weight(0) = RowMatrix::Identity(3, 3);
  const std::vector<double> x{0.5, -7.0, 1e3};
  const Eigen::VectorXd y = net.forward(x);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(y(i), x[i]);
}

TEST(Mlp, MatchesNaiveLoops) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<int> dims{10, 100, 32, 10, 1};
    const Mlp net = Mlp::xavier(dims, 100 + trial);
    std::vector<double> x(10);
    for (double& v : x) v = rng.uniform(-3, 3);
    const auto expected = oracle::mlp_forward(dims, {net.parameters().begin(), net.parameters().end()}, x);
    const Eigen::VectorXd single = net.forward(x);
    Eigen::MatrixXd batch(10, 2);
    batch.col(0) = Eigen::Map<const Eigen::VectorXd>(x.data(), 10);
    batch.col(1).setZero();
    const Eigen::MatrixXd batched = net.forward(batch);
    ASSERT_NEAR(single(0), expected[0], 1e-12);
    ASSERT_NEAR(batched(0, 0), expected[0], 1e-12);
  }
}

TEST(Mlp, ForwardIsPureAndChecksShape) {
  const Mlp net = Mlp::xavier({3, 5, 2}, 1);
  const std::vector<double> x{0.1, 0.2, 0.3};
  EXPECT_EQ(net.forward(x), net.forward(x));
  EXPECT_THROW(net.forward(std::vector<double>{1, 2}), InvalidArgument);
  EXPECT_THROW(net.forward(Eigen::MatrixXd::Zero(2, 4)), InvalidArgument);
}

TEST(Mlp, XavierIsSeededAndBounded) {
  const Mlp a = Mlp::xavier({10, 100, 32, 10, 1}, 5);
  const Mlp b = Mlp::xavier({10, 100, 32, 10, 1}, 5);
  EXPECT_EQ(a, b);
  EXPECT_FALSE(a == Mlp::xavier({10, 100, 32, 10, 1}, 6));
  const double limit = std::sqrt(6.0 / 110.0);
  EXPECT_LE(a.weight(0).cwiseAbs().maxCoeff(), limit);
  EXPECT_EQ(a.bias(0).cwiseAbs().maxCoeff(), 0.0);
  const Mlp small = Mlp::xavier({10, 100, 32, 10, 1}, 5, 0.01);
  EXPECT_LE(small.weight(3).cwiseAbs().maxCoeff(), 0.01 * std::sqrt(6.0 / 11.0));
}

TEST(Mlp, ZeroOutputGradientGivesZeroGradients) {
  const Mlp net = Mlp::xavier({4, 8, 3}, 2);
  Rng rng(1);
  Mlp::Cache cache;
  const Eigen::MatrixXd x = random_batch(4, 5, rng);
  net.forward(x, &cache);
  const auto g = net.backward(Eigen::MatrixXd::Zero(3, 5), cache);
  EXPECT_TRUE(std::all_of(g.begin(), g.end(), [](double v) { return v == 0.0; }));
}

TEST(Mlp, LinearNetGradientIsOuterProduct) {
  Mlp net({3, 2});
  Rng rng(4);
  for (double& p : net.parameters()) p = rng.uniform(-1, 1);
  Eigen::MatrixXd x(3, 1);
  x << 1.5, -2.0, 0.25;
  Eigen::MatrixXd g(2, 1);
  g << 0.7, -1.1;
  Mlp::Cache cache;
  net.forward(x, &cache);
  const auto grad = net.backward(g, cache);
  for (int r = 0; r < 2; ++r) {
    for (int c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(grad[r * 3 + c], g(r, 0) * x(c, 0));
    EXPECT_DOUBLE_EQ(grad[6 + r], g(r, 0));
  }
}

TEST(Mlp, StaleCacheIsRejected) {
  Mlp net = Mlp::xavier({2, 3, 1}, 1);
  Mlp::Cache cache;
  net.forward(Eigen::MatrixXd::Ones(2, 1), &cache);
  net.parameters()[0] += 1.0;
  EXPECT_THROW(net.backward(Eigen::MatrixXd::Ones(1, 1), cache), InvalidArgument);
  const Mlp other = Mlp::xavier({2, 3, 1}, 1);
  EXPECT_THROW(other.backward(Eigen::MatrixXd::Ones(1, 1), cache), InvalidArgument);
  Mlp::Cache fresh;
  net.forward(Eigen::MatrixXd::Ones(2, 1), &fresh);
  EXPECT_THROW(net.backward(Eigen::MatrixXd::Ones(1, 2), fresh), InvalidArgument);
}

TEST(Mlp, GradientMatchesFiniteDifferences) {
  Rng rng(77);
  int cases = 0;
  for (int seed = 0; seed < 100; ++seed) {
    const int layers = 1 + seed % 4;
    std::vector<int> dims;
    for (int l = 0; l <= layers; ++l) dims.push_back(static_cast<int>(rng.uniform_int(1, l == 0 || l == layers ? 8 : 32)));
    Mlp net = random_net(dims, rng);
    for (double& p : net.parameters()) p *= 0.5;
    const Eigen::MatrixXd x = random_batch(dims.front(), 3, rng);
    const Eigen::MatrixXd g = random_batch(dims.back(), 3, rng);
    ASSERT_LT(max_fd_relative_error(net, x, g), 1e-4) << "seed " << seed;
    ++cases;
  }
  EXPECT_EQ(cases, 100);
}

TEST(Mlp, GradientCheckAtExtremeWidths) {
  Rng rng(9);
  for (std::vector<int> dims : {std::vector<int>{1, 1}, std::vector<int>{1, 32, 1}, std::vector<int>{32, 1, 32},
                                std::vector<int>{5, 32, 32, 32, 2}}) {
    Mlp net = random_net(dims, rng);
    for (double& p : net.parameters()) p *= 0.3;
    ASSERT_LT(max_fd_relative_error(net, random_batch(dims.front(), 2, rng), random_batch(dims.back(), 2, rng)), 1e-4);
  }
}

// Copies land at unrelated heap addresses; seeded runs rely on every copy
// computing bit-identical outputs and gradients.
TEST(Mlp, ResultsDoNotDependOnWhereTheNetLives) {
  Rng rng(21);
  const Mlp net = random_net(Mlp::default_dims(10, 1), rng);
  const Eigen::MatrixXd x = random_batch(net.input_size(), 517, rng);
  const Eigen::MatrixXd g = random_batch(1, 517, rng);
  Mlp::Cache cache;
  const Eigen::MatrixXd y = net.forward(x, &cache);
  const std::vector<double> grad = net.backward(g, cache);
  std::vector<std::vector<char>> spacers;
  for (int k = 1; k <= 12; ++k) {
    spacers.emplace_back(static_cast<std::size_t>(8 * k));
    const Mlp copy = net;
    Mlp::Cache c;
    ASSERT_TRUE(copy.forward(x, &c) == y) << "copy " << k;
    ASSERT_EQ(copy.backward(g, c), grad) << "copy " << k;
  }
  for (int j = 0; j < 517; j += 47) {
    const Eigen::VectorXd col = x.col(j);
    const Eigen::VectorXd single = net.forward(std::span<const double>(col.data(), col.size()));
    EXPECT_NEAR(single(0), y(0, j), 1e-12);
  }
}

TEST(Mlp, TanhMatchesTheLibrary) {
  Rng rng(8);
  Eigen::MatrixXd z(7, 33);
  for (Eigen::Index i = 0; i < z.size(); ++i) z(i) = rng.uniform(-20, 20);
  z(0) = 0.0;
  z(1) = -1e-12;
  z(2) = 800.0;
  z(3) = 0.00999;
  z(4) = -0.01001;
  Eigen::MatrixXd t = z;
  detail::tanh_in_place(t);
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    EXPECT_NEAR(t(i), std::tanh(z(i)), 1e-15) << z(i);
    EXPECT_LE(std::abs(t(i) - std::tanh(z(i))), 1e-13 * std::abs(std::tanh(z(i)))) << z(i);
  }
}

TEST(Adam, ZeroGradientLeavesParamsButAdvancesStep) {
  std::vector<double> p{1.0, -2.0};
  AdamState s(2, 0.1);
  adam_update(p, std::vector<double>{0.0, 0.0}, s);
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(s.step, 1u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  for (double g : {1e-3, 0.5, -4.0, 1e4}) {
    std::vector<double> p{0.0};
    AdamState s(1, 0.01);
    adam_update(p, std::vector<double>{g}, s);
    EXPECT_NEAR(p[0], -0.01 * (g > 0 ? 1.0 : -1.0), 1e-7);
  }
}

TEST(Adam, MinimizesQuadratic) {
  std::vector<double> x{1.0};
  AdamState s(1, 0.1);
  int steps = 0;
  while (std::abs(x[0]) >= 0.01 && steps < 200) {
    adam_update(x, std::vector<double>{2.0 * x[0]}, s);
    ++steps;
  }
  EXPECT_LT(std::abs(x[0]), 0.01);
  EXPECT_LE(steps, 200);
}

TEST(Adam, RejectsNonFiniteGradientWithoutSideEffects) {
  std::vector<double> p{1.0, 2.0};
  AdamState s(2, 0.1);
  adam_update(p, std::vector<double>{0.3, 0.1}, s);
  const auto p0 = p;
  const AdamState s0 = s;
  EXPECT_THROW(adam_update(p, std::vector<double>{NAN, 0.1}, s), NumericalFault);
  EXPECT_THROW(adam_update(p, std::vector<double>{0.1, INFINITY}, s), NumericalFault);
  EXPECT_EQ(p, p0);
  EXPECT_EQ(s, s0);
  EXPECT_THROW(adam_update(p, std::vector<double>{0.1}, s), InvalidArgument);
}
