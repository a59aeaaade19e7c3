#pragma once

// Trust-region policy optimization with a Gaussian policy whose variance is
// modulated by the tracking error, a batch likelihood-ratio objective and a
// linear-plus-quadratic KL penalty, optimized with ADAM.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "pitchrl/adam.hpp"
#include "pitchrl/episode.hpp"
#include "pitchrl/errors.hpp"
#include "pitchrl/mlp.hpp"
#include "pitchrl/rng.hpp"

namespace pitchrl {

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // ln(2 pi)
inline constexpr double kLogRatioClamp = 30.0;

// --- generalized advantage estimation ----------------------------------------

struct GaeResult {
  std::vector<double> advantages;
  std::vector<double> value_targets;  // advantage + value
};

/// delta_t = r_t + gamma V_{t+1} - V_t with V_T = bootstrap;
/// A_t = sum_l (gamma lambda)^l delta_{t+l}.
inline GaeResult gae(std::span<const double> rewards, std::span<const double> values,
                     double bootstrap_value, double gamma, double lambda) {
  if (rewards.size() != values.size())
    throw InvalidArgument("gae: rewards and values must have the same length");
  const std::size_t n = rewards.size();
  GaeResult out;
  out.advantages.assign(n, 0.0);
  out.value_targets.assign(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : bootstrap_value;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    out.advantages[i] = running;
    out.value_targets[i] = running + values[i];
  }
  return out;
}

/// Overload taking T+1 values, the last being the bootstrap.
inline GaeResult gae(std::span<const double> rewards, std::span<const double> values_with_bootstrap,
                     double gamma, double lambda) {
  if (values_with_bootstrap.size() != rewards.size() + 1)
    throw InvalidArgument("gae: expected one more value than rewards");
  return gae(rewards, values_with_bootstrap.first(rewards.size()), values_with_bootstrap.back(),
             gamma, lambda);
}

// --- Gaussian policy ----------------------------------------------------------

struct ExplorationConfig {
  double gain = 1.0;         // k: log-variance added at saturation
  double error_scale = 5.0;  // g at which the error term saturates

  void validate() const {
    if (!(gain >= 0.0)) throw InvalidArgument("exploration gain must be >= 0");
    if (!(error_scale > 0.0)) throw InvalidArgument("exploration error_scale must be > 0");
  }
};

/// Error-dependent part of the log-variance: k * min(|e_z| / e_scale, 1).
inline double tune_log_variance(double e_z, const ExplorationConfig& cfg) {
  return cfg.gain * std::min(std::abs(e_z) / cfg.error_scale, 1.0);
}

inline double exploration_variance(double e_z, double log_var_train, const ExplorationConfig& cfg) {
  return std::exp(log_var_train + tune_log_variance(e_z, cfg));
}

inline double gaussian_log_density(double x, double mean, double log_var) {
  const double d = x - mean;
  return -0.5 * (kLogTwoPi + log_var) - d * d / (2.0 * std::exp(log_var));
}

/// KL(p || q) for univariate Gaussians given as (mean, variance).
inline double gaussian_kl(double mean_p, double var_p, double mean_q, double var_q) {
  if (!(var_p > 0.0) || !(var_q > 0.0)) throw InvalidArgument("gaussian_kl: variances must be > 0");
  const double d = mean_p - mean_q;
  return 0.5 * (std::log(var_q / var_p) + (var_p + d * d) / var_q - 1.0);
}

struct GaussianPolicy {
  Mlp mean_net;
  double log_var_train = -10.0;
  ExplorationConfig exploration;

  static GaussianPolicy create(std::vector<int> dims, std::uint64_t seed, double initial_log_var,
                               double output_gain, ExplorationConfig exploration = {}) {
    exploration.validate();
    return {Mlp::xavier(std::move(dims), seed, output_gain), initial_log_var, exploration};
  }

  double log_variance(double e_z) const { return log_var_train + tune_log_variance(e_z, exploration); }

  double mean(std::span<const double> obs_norm) const { return mean_net.forward(obs_norm)(0); }

  ActionSample act(const Observation& obs_norm, double e_z, Rng& rng, bool explore) const {
    ActionSample a;
    a.mean = mean(obs_norm);
    const double lv = log_variance(e_z);
    a.std_dev = std::exp(0.5 * lv);
    a.eta_com = explore ? a.mean + a.std_dev * rng.normal() : a.mean;
    a.log_prob = gaussian_log_density(a.eta_com, a.mean, lv);
    return a;
  }

  std::size_t parameter_count() const { return mean_net.parameter_count() + 1; }

  std::vector<double> flat_parameters() const {
    std::vector<double> p(mean_net.parameters().begin(), mean_net.parameters().end());
    p.push_back(log_var_train);
    return p;
  }

  void set_flat_parameters(std::span<const double> p) {
    if (p.size() != parameter_count()) throw InvalidArgument("GaussianPolicy: parameter count mismatch");
    auto dst = mean_net.parameters();
    std::copy(p.begin(), p.end() - 1, dst.begin());
    log_var_train = p.back();
  }

  bool finite() const { return mean_net.finite() && std::isfinite(log_var_train); }

  friend bool operator==(const GaussianPolicy& a, const GaussianPolicy& b) {
    return a.mean_net == b.mean_net && a.log_var_train == b.log_var_train &&
           a.exploration.gain == b.exploration.gain &&
           a.exploration.error_scale == b.exploration.error_scale;
  }
};

// --- training data --------------------------------------------------------------

/// Column-oriented training samples. `old_mean`/`old_log_var` describe the
/// frozen previous policy at each sample and are filled by attach_old_policy.
struct TrainingSet {
  Eigen::MatrixXd obs;  // features x N, normalized
  std::vector<double> action;
  std::vector<double> error;  // e_z driving the exploration variance
  std::vector<double> advantage;
  std::vector<double> value_target;
  std::vector<double> old_mean;
  std::vector<double> old_log_var;

  std::size_t size() const { return action.size(); }

  void reserve(std::size_t n, int features) {
    obs.resize(features, static_cast<Eigen::Index>(n));
    action.reserve(n);
    error.reserve(n);
    advantage.reserve(n);
    value_target.reserve(n);
  }

  void push(const StepRecord& s) {
    const auto j = static_cast<Eigen::Index>(action.size());
    if (j >= obs.cols()) obs.conservativeResize(kObservationSize, std::max<Eigen::Index>(16, 2 * obs.cols()));
    for (int i = 0; i < kObservationSize; ++i) obs(i, j) = s.obs_norm[i];
    action.push_back(s.action);
    error.push_back(s.obs[kObsError]);
    advantage.push_back(s.advantage);
    value_target.push_back(s.value_target);
  }

  /// Drops spare capacity columns left by push().
  void shrink() { obs.conservativeResize(obs.rows(), static_cast<Eigen::Index>(action.size())); }

  TrainingSet gather(std::span<const std::size_t> idx) const {
    TrainingSet out;
    out.obs.resize(obs.rows(), static_cast<Eigen::Index>(idx.size()));
    const bool has_old = old_mean.size() == size();
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const std::size_t i = idx[k];
      out.obs.col(static_cast<Eigen::Index>(k)) = obs.col(static_cast<Eigen::Index>(i));
      out.action.push_back(action[i]);
      out.error.push_back(error[i]);
      out.advantage.push_back(advantage[i]);
      out.value_target.push_back(value_target[i]);
      if (has_old) {
        out.old_mean.push_back(old_mean[i]);
        out.old_log_var.push_back(old_log_var[i]);
      }
    }
    return out;
  }
};

inline TrainingSet make_training_set(std::span<const StepRecord* const> steps) {
  TrainingSet set;
  set.reserve(steps.size(), kObservationSize);
  for (const StepRecord* s : steps) set.push(*s);
  set.shrink();
  return set;
}

namespace detail {

/// Forward pass over columns in chunks to bound activation memory.
inline Eigen::RowVectorXd forward_scalar_chunked(const Mlp& net, const Eigen::MatrixXd& obs,
                                                 Eigen::Index chunk = 4096) {
  Eigen::RowVectorXd out(obs.cols());
  for (Eigen::Index b = 0; b < obs.cols(); b += chunk) {
    const Eigen::Index n = std::min(chunk, obs.cols() - b);
    out.segment(b, n) = net.forward(Eigen::MatrixXd(obs.middleCols(b, n))).row(0);
  }
  return out;
}

}  // namespace detail

inline void attach_old_policy(TrainingSet& set, const GaussianPolicy& old_policy) {
  const Eigen::RowVectorXd mu = detail::forward_scalar_chunked(old_policy.mean_net, set.obs);
  set.old_mean.resize(set.size());
  set.old_log_var.resize(set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    set.old_mean[i] = mu(static_cast<Eigen::Index>(i));
    set.old_log_var[i] = old_policy.log_variance(set.error[i]);
  }
}

// --- losses ---------------------------------------------------------------------

struct TrpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double trust_radius = 0.01;  // delta_TR
  double alpha0 = 50.0;        // initial quadratic-penalty coefficient
  double beta = 1.0;           // linear KL penalty
  int epochs = 10;
  int minibatch = 512;
  double lr_policy = 3e-4;
  double lr_value = 1e-3;
  double alpha_factor = 1.5;
  double alpha_range = 100.0;  // alpha stays within [alpha0/range, alpha0*range]

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidArgument("trpo.gamma must be in (0, 1]");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw InvalidArgument("trpo.gae_lambda must be in [0, 1]");
    if (!(trust_radius > 0.0)) throw InvalidArgument("trpo.trust_radius must be > 0");
    if (!(alpha0 >= 0.0) || !(beta >= 0.0)) throw InvalidArgument("trpo.alpha0/beta must be >= 0");
    if (epochs < 0) throw InvalidArgument("trpo.epochs must be >= 0");
    if (minibatch <= 0) throw InvalidArgument("trpo.minibatch must be > 0");
    if (!(lr_policy > 0.0) || !(lr_value > 0.0)) throw InvalidArgument("trpo learning rates must be > 0");
    if (!(alpha_factor > 1.0) || !(alpha_range >= 1.0)) throw InvalidArgument("trpo alpha adaptation parameters invalid");
  }
};

struct PolicyLossTerms {
  double loss = 0.0;  // L_P
  double l1 = 0.0;    // mean advantage times product of likelihood ratios
  double l2 = 0.0;    // mean KL(old || new)
  double log_ratio_sum = 0.0;  // unclamped
};

/// L_P = -L1 + alpha max(0, L2 - delta)^2 + beta L2 over `batch`, whose old-policy
/// columns must be attached. If `grad` is given it receives dL_P/dtheta laid
/// out like GaussianPolicy::flat_parameters().
inline PolicyLossTerms policy_loss(const TrainingSet& batch, const GaussianPolicy& policy,
                                   const TrpoConfig& cfg, double alpha,
                                   std::vector<double>* grad = nullptr) {
  const std::size_t n = batch.size();
  if (batch.old_mean.size() != n || batch.old_log_var.size() != n)
    throw StructuralError("policy_loss: batch lacks old-policy statistics");
  PolicyLossTerms out;
  if (n == 0) {
    if (grad) grad->assign(policy.parameter_count(), 0.0);
    return out;
  }
  Mlp::Cache cache;
  const Eigen::MatrixXd mu = policy.mean_net.forward(batch.obs, grad ? &cache : nullptr);

  double adv_sum = 0.0, log_ratio = 0.0, kl_sum = 0.0;
  std::vector<double> lv(n), var(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    lv[i] = policy.log_variance(batch.error[i]);
    var[i] = std::exp(lv[i]);
    adv_sum += batch.advantage[i];
    log_ratio += gaussian_log_density(batch.action[i], mu(0, j), lv[i]) -
                 gaussian_log_density(batch.action[i], batch.old_mean[i], batch.old_log_var[i]);
    const double d = batch.old_mean[i] - mu(0, j);
    kl_sum += 0.5 * ((lv[i] - batch.old_log_var[i]) +
                     (std::exp(batch.old_log_var[i]) + d * d) / var[i] - 1.0);
  }
  const double nd = static_cast<double>(n);
  const double mean_adv = adv_sum / nd;
  const double clamped = std::clamp(log_ratio, -kLogRatioClamp, kLogRatioClamp);
  out.log_ratio_sum = log_ratio;
  out.l1 = mean_adv * std::exp(clamped);
  out.l2 = kl_sum / nd;
  const double excess = std::max(0.0, out.l2 - cfg.trust_radius);
  out.loss = -out.l1 + alpha * excess * excess + cfg.beta * out.l2;

  if (grad) {
    const double d_loss_d_log_ratio = std::abs(log_ratio) < kLogRatioClamp ? -out.l1 : 0.0;
    const double d_loss_d_l2 = 2.0 * alpha * excess + cfg.beta;
    Eigen::MatrixXd d_mu(1, static_cast<Eigen::Index>(n));
    double d_log_var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto j = static_cast<Eigen::Index>(i);
      const double r = batch.action[i] - mu(0, j);
      const double d_old = batch.old_mean[i] - mu(0, j);
      const double old_var = std::exp(batch.old_log_var[i]);
      d_mu(0, j) = d_loss_d_log_ratio * r / var[i] + d_loss_d_l2 * (-d_old) / (nd * var[i]);
      d_log_var += d_loss_d_log_ratio * (-0.5 + r * r / (2.0 * var[i])) +
                   d_loss_d_l2 * 0.5 * (1.0 - (old_var + d_old * d_old) / var[i]) / nd;
    }
    *grad = policy.mean_net.backward(d_mu, cache);
    grad->push_back(d_log_var);
  }
  return out;
}

/// Same loss with the old-policy statistics taken from `old_policy`.
inline PolicyLossTerms policy_loss(TrainingSet batch, const GaussianPolicy& old_policy,
                                   const GaussianPolicy& new_policy, const TrpoConfig& cfg,
                                   double alpha) {
  attach_old_policy(batch, old_policy);
  return policy_loss(batch, new_policy, cfg, alpha);
}

/// Mean squared error between the value network and the stored targets.
inline double value_loss(const TrainingSet& batch, const Mlp& value_net,
                         std::vector<double>* grad = nullptr) {
  const std::size_t n = batch.size();
  if (n == 0) {
    if (grad) grad->assign(value_net.parameter_count(), 0.0);
    return 0.0;
  }
  Mlp::Cache cache;
  const Eigen::MatrixXd v = value_net.forward(batch.obs, grad ? &cache : nullptr);
  Eigen::MatrixXd d(1, static_cast<Eigen::Index>(n));
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = static_cast<Eigen::Index>(i);
    const double e = v(0, j) - batch.value_target[i];
    sum += e * e;
    d(0, j) = 2.0 * e / static_cast<double>(n);
  }
  if (grad) *grad = value_net.backward(d, cache);
  return sum / static_cast<double>(n);
}

// --- update ---------------------------------------------------------------------

struct TrpoState {
  double alpha = 50.0;
  AdamState policy_adam;
  AdamState value_adam;
  std::optional<GaussianPolicy> snapshot;  // pi_old of the latest update

  static TrpoState initial(const GaussianPolicy& policy, const Mlp& value_net, const TrpoConfig& cfg) {
    TrpoState s;
    s.alpha = cfg.alpha0;
    s.policy_adam = AdamState(policy.parameter_count(), cfg.lr_policy);
    s.value_adam = AdamState(value_net.parameter_count(), cfg.lr_value);
    return s;
  }
};

struct UpdateDiagnostics {
  double l1 = 0.0;           // mean over the last epoch's minibatches
  double l2 = 0.0;           // realized KL over the whole training set
  double policy_loss = 0.0;  // mean over the last epoch's minibatches
  double value_loss = 0.0;   // mean over the last epoch's minibatches
  double alpha = 0.0;        // after adaptation
  std::size_t samples = 0;
  bool aborted = false;
};

/// alpha grows when the realized KL overshoots the trust radius and shrinks
/// when it stays below half of it.
inline double adapt_alpha(double alpha, double realized_kl, const TrpoConfig& cfg) {
  if (realized_kl > cfg.trust_radius)
    alpha *= cfg.alpha_factor;
  else if (realized_kl < 0.5 * cfg.trust_radius)
    alpha /= cfg.alpha_factor;
  return std::clamp(alpha, cfg.alpha0 / cfg.alpha_range, cfg.alpha0 * cfg.alpha_range);
}

inline double realized_kl(const TrainingSet& set, const GaussianPolicy& policy) {
  if (set.size() == 0) return 0.0;
  const Eigen::RowVectorXd mu = detail::forward_scalar_chunked(policy.mean_net, set.obs);
  double kl = 0.0;
  for (std::size_t i = 0; i < set.size(); ++i)
    kl += gaussian_kl(set.old_mean[i], std::exp(set.old_log_var[i]), mu(static_cast<Eigen::Index>(i)),
                      std::exp(policy.log_variance(set.error[i])));
  return kl / static_cast<double>(set.size());
}

/// Snapshots pi_old, runs `epochs` passes of shuffled minibatch ADAM on both
/// losses and adapts alpha. A non-finite loss or gradient restores every
/// parameter and optimizer state and reports `aborted`.
inline UpdateDiagnostics trpo_update(GaussianPolicy& policy, Mlp& value_net, TrainingSet& set,
                                     const TrpoConfig& cfg, TrpoState& state, Rng& rng) {
  UpdateDiagnostics diag;
  diag.samples = set.size();
  state.snapshot = policy;
  attach_old_policy(set, *state.snapshot);

  const GaussianPolicy policy_backup = policy;
  const Mlp value_backup = value_net;
  const AdamState policy_adam_backup = state.policy_adam;
  const AdamState value_adam_backup = state.value_adam;
  const auto restore = [&] {
    policy = policy_backup;
    value_net = value_backup;
    state.policy_adam = policy_adam_backup;
    state.value_adam = value_adam_backup;
  };

  const std::size_t n = set.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<double> grad;
  try {
    for (int epoch = 0; epoch < cfg.epochs && n > 0; ++epoch) {
      for (std::size_t i = n; i-- > 1;)
        std::swap(order[i], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)))]);
      double l1 = 0.0, lp = 0.0, lv = 0.0;
      int batches = 0;
      for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.minibatch)) {
        const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.minibatch));
        const TrainingSet mb = set.gather(std::span<const std::size_t>(order).subspan(b, e - b));

        const PolicyLossTerms terms = policy_loss(mb, policy, cfg, state.alpha, &grad);
        if (!std::isfinite(terms.loss)) throw NumericalFault("policy loss is not finite");
        std::vector<double> params = policy.flat_parameters();
        adam_update(params, grad, state.policy_adam);
        policy.set_flat_parameters(params);

        const double vloss = value_loss(mb, value_net, &grad);
        if (!std::isfinite(vloss)) throw NumericalFault("value loss is not finite");
        adam_update(value_net.parameters(), grad, state.value_adam);

        l1 += terms.l1;
        lp += terms.loss;
        lv += vloss;
        ++batches;
      }
      diag.l1 = l1 / batches;
      diag.policy_loss = lp / batches;
      diag.value_loss = lv / batches;
    }
    if (!policy.finite() || !value_net.finite()) throw NumericalFault("parameters became non-finite");
  } catch (const NumericalFault&) {
    restore();
    diag.aborted = true;
    diag.alpha = state.alpha;
    return diag;
  }
  diag.l2 = realized_kl(set, policy);
  state.alpha = adapt_alpha(state.alpha, diag.l2, cfg);
  diag.alpha = state.alpha;
  return diag;
}

}  // namespace pitchrl
