#pragma once

// Proximal Policy Optimization with a clipped surrogate and Generalized
// Advantage Estimation. Shared by the student (robot task) and the teacher
// (weight adaptation); both are diagonal-Gaussian policies over MLPs.

#include <Eigen/Dense>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "rtw/nn.hpp"
#include "rtw/rng.hpp"

namespace rtw {

struct PpoConfig {
  double clip_epsilon = 0.2;
  double gamma = 0.99;
  double gae_lambda = 0.95;
  int epochs = 10;
  int minibatch_size = 64;
  double value_coef = 0.5;
  double entropy_coef = 0.01;
  double learning_rate = 3e-4;

  void validate() const {
    if (clip_epsilon <= 0.0) throw std::invalid_argument("PpoConfig: clip_epsilon must be > 0");
    if (gamma < 0.0 || gamma > 1.0) throw std::invalid_argument("PpoConfig: gamma out of [0,1]");
    if (gae_lambda < 0.0 || gae_lambda > 1.0)
      throw std::invalid_argument("PpoConfig: gae_lambda out of [0,1]");
    if (epochs < 0) throw std::invalid_argument("PpoConfig: epochs must be >= 0");
    if (minibatch_size <= 0) throw std::invalid_argument("PpoConfig: minibatch_size must be > 0");
  }
};

// One rollout's worth of experience. Steps from the same environment are
// contiguous (env_ids labels the segments) and each segment carries its own
// bootstrap value for the truncated tail; `bootstrap_value` covers the
// single-stream case.
struct RolloutBatch {
  MatrixXd observations;            // T x obs_dim
  MatrixXd actions;                 // T x act_dim
  VectorXd log_probs;               // T
  VectorXd rewards;                 // T
  VectorXd values;                  // T
  double bootstrap_value = 0.0;
  VectorXd bootstrap_values;        // one per env segment; empty -> use scalar
  std::vector<std::uint8_t> done_flags;
  std::vector<int> env_ids;

  int size() const { return static_cast<int>(rewards.size()); }

  void validate() const {
    const int t = size();
    if (t <= 0) throw std::invalid_argument("RolloutBatch: empty batch");
    if (observations.rows() != t || actions.rows() != t || log_probs.size() != t ||
        values.size() != t || static_cast<int>(done_flags.size()) != t ||
        static_cast<int>(env_ids.size()) != t)
      throw std::invalid_argument("RolloutBatch: field lengths disagree");
    if (!log_probs.allFinite()) throw std::invalid_argument("RolloutBatch: non-finite log_probs");
  }
};

// Recursive GAE over a single trajectory stream. done_flags[t] means the
// episode terminated at step t: no value bootstrap across it and the
// exponential accumulation restarts. The stream tail bootstraps with
// `bootstrap_value` when still running.
inline void compute_gae(const VectorXd& rewards, const VectorXd& values,
                        const std::vector<std::uint8_t>& done_flags, double bootstrap_value,
                        double gamma, double gae_lambda, VectorXd& advantages,
                        VectorXd& returns) {
  const int t_max = static_cast<int>(rewards.size());
  if (values.size() != t_max || static_cast<int>(done_flags.size()) != t_max)
    throw std::invalid_argument("compute_gae: length mismatch");
  advantages.resize(t_max);
  returns.resize(t_max);
  double acc = 0.0;
  for (int t = t_max - 1; t >= 0; --t) {
    const double not_done = done_flags[t] ? 0.0 : 1.0;
    const double next_value = (t + 1 < t_max) ? values[t + 1] : bootstrap_value;
    const double delta = rewards[t] + gamma * next_value * not_done - values[t];
    acc = delta + gamma * gae_lambda * not_done * acc;
    advantages[t] = acc;
  }
  returns = advantages + values;
}

inline std::pair<VectorXd, VectorXd> compute_gae(const VectorXd& rewards, const VectorXd& values,
                                                 const std::vector<std::uint8_t>& done_flags,
                                                 double bootstrap_value, double gamma,
                                                 double gae_lambda) {
  VectorXd adv, ret;
  compute_gae(rewards, values, done_flags, bootstrap_value, gamma, gae_lambda, adv, ret);
  return {adv, ret};
}

// GAE over a multi-env batch: applied independently to each contiguous env
// segment with that segment's bootstrap value.
inline void compute_gae_batch(const RolloutBatch& batch, double gamma, double gae_lambda,
                              VectorXd& advantages, VectorXd& returns) {
  const int t_max = batch.size();
  advantages.resize(t_max);
  returns.resize(t_max);
  int start = 0;
  int segment = 0;
  while (start < t_max) {
    int end = start + 1;
    while (end < t_max && batch.env_ids[end] == batch.env_ids[start]) ++end;
    const int len = end - start;
    const double bootstrap = batch.bootstrap_values.size() > 0
                                 ? batch.bootstrap_values[segment]
                                 : batch.bootstrap_value;
    VectorXd adv, ret;
    std::vector<std::uint8_t> dones(batch.done_flags.begin() + start,
                                    batch.done_flags.begin() + end);
    compute_gae(batch.rewards.segment(start, len), batch.values.segment(start, len), dones,
                bootstrap, gamma, gae_lambda, adv, ret);
    advantages.segment(start, len) = adv;
    returns.segment(start, len) = ret;
    start = end;
    ++segment;
  }
}

struct PpoLossResult {
  double loss = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double clip_fraction = 0.0;
  double value_error = 0.0;  // mean squared value-return error
  MlpGrads policy_grads;
  MlpGrads value_grads;
};

// Clipped-surrogate PPO loss over one minibatch, with analytic gradients for
// both networks:
//   loss = -mean(min(ratio*A, clip(ratio, 1-eps, 1+eps)*A))
//          + value_coef * mean((V - returns)^2) - entropy_coef * entropy.
// Advantages are expected already normalized for the update.
inline PpoLossResult ppo_loss(const MlpParams& policy, const MlpParams& value_fn,
                              const MatrixXd& observations, const MatrixXd& actions,
                              const VectorXd& old_log_probs, const VectorXd& advantages,
                              const VectorXd& returns, const PpoConfig& config) {
  const int n = static_cast<int>(observations.rows());
  if (actions.rows() != n || old_log_probs.size() != n || advantages.size() != n ||
      returns.size() != n)
    throw std::invalid_argument("ppo_loss: minibatch field lengths disagree");
  const int act_dim = static_cast<int>(actions.cols());
  if (policy.log_std.size() != act_dim)
    throw std::invalid_argument("ppo_loss: policy log_std size mismatch");

  PpoLossResult out;
  out.policy_grads = policy.zero_grads();
  out.value_grads = value_fn.zero_grads();

  const VectorXd log_std = policy.log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
  const VectorXd inv_var = (-2.0 * log_std).array().exp();

  // -- policy head -- //
  ForwardCache policy_cache = mlp_forward_cached(policy, observations);
  const MatrixXd& means = policy_cache.output();

  MatrixXd z2(n, act_dim);  // squared standardized residuals
  VectorXd new_log_probs(n);
  const double log_norm = 0.5 * std::log(2.0 * M_PI);
  for (int i = 0; i < n; ++i) {
    double lp = 0.0;
    for (int k = 0; k < act_dim; ++k) {
      const double d = actions(i, k) - means(i, k);
      z2(i, k) = d * d * inv_var[k];
      lp += -0.5 * z2(i, k) - log_std[k] - log_norm;
    }
    new_log_probs[i] = lp;
  }

  int clipped = 0;
  MatrixXd mean_grads = MatrixXd::Zero(n, act_dim);  // d loss / d policy output
  VectorXd log_std_grad = VectorXd::Zero(act_dim);
  double policy_loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const double ratio = std::exp(new_log_probs[i] - old_log_probs[i]);
    const double a = advantages[i];
    const double unclipped = -ratio * a;
    const double clipped_term =
        -std::clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon) * a;
    policy_loss += std::max(unclipped, clipped_term);
    if (std::abs(ratio - 1.0) > config.clip_epsilon) ++clipped;
    if (unclipped >= clipped_term) {
      // Gradient flows through the unclipped branch:
      //   d(-ratio*A)/d new_logp = -ratio*A, then through the Gaussian logp.
      const double dl_dlogp = -ratio * a / n;
      for (int k = 0; k < act_dim; ++k) {
        mean_grads(i, k) = dl_dlogp * (actions(i, k) - means(i, k)) * inv_var[k];
        log_std_grad[k] += dl_dlogp * (z2(i, k) - 1.0);
      }
    }
  }
  policy_loss /= n;

  // Entropy bonus; with a state-independent log_std the per-sample entropy
  // is constant across the minibatch.
  const double entropy = gaussian_entropy(log_std);
  for (int k = 0; k < act_dim; ++k) log_std_grad[k] -= config.entropy_coef;

  // -- value head -- //
  ForwardCache value_cache = mlp_forward_cached(value_fn, observations);
  const VectorXd values = value_cache.output().col(0);
  const VectorXd value_residual = values - returns;
  const double value_mse = value_residual.squaredNorm() / n;
  const double value_loss = config.value_coef * value_mse;

  out.loss = policy_loss + value_loss - config.entropy_coef * entropy;
  if (!std::isfinite(out.loss))
    throw std::runtime_error("ppo_loss: non-finite loss (policy=" + std::to_string(policy_loss) +
                             ", value=" + std::to_string(value_loss) + ")");
  out.policy_loss = policy_loss;
  out.value_loss = value_loss;
  out.entropy = entropy;
  out.clip_fraction = static_cast<double>(clipped) / n;
  out.value_error = value_mse;

  mlp_backward_batch(policy, policy_cache, mean_grads, out.policy_grads);
  if (policy.log_std.size() > 0) out.policy_grads.log_std = log_std_grad;
  MatrixXd value_out_grads = (2.0 * config.value_coef / n) * value_residual;
  mlp_backward_batch(value_fn, value_cache, value_out_grads, out.value_grads);
  return out;
}

struct UpdateStats {
  int minibatches = 0;
  double loss = 0.0;
  double clip_fraction = 0.0;
  double entropy = 0.0;
  double value_error = 0.0;
};

// Policy + value networks with their optimizer state.
struct ActorCritic {
  MlpParams policy;
  MlpParams value;
  AdamState policy_adam;
  AdamState value_adam;
};

inline ActorCritic make_actor_critic(int obs_dim, int act_dim, const std::vector<int>& hidden,
                                     double learning_rate, Rng& rng) {
  std::vector<int> policy_sizes{obs_dim};
  policy_sizes.insert(policy_sizes.end(), hidden.begin(), hidden.end());
  policy_sizes.push_back(act_dim);
  std::vector<int> value_sizes{obs_dim};
  value_sizes.insert(value_sizes.end(), hidden.begin(), hidden.end());
  value_sizes.push_back(1);
  ActorCritic ac;
  ac.policy = make_mlp(policy_sizes, Activation::kTanh, rng, 0.01, true);
  ac.value = make_mlp(value_sizes, Activation::kTanh, rng, 1.0, false);
  ac.policy_adam = make_adam(ac.policy, learning_rate);
  ac.value_adam = make_adam(ac.value, learning_rate);
  return ac;
}

// One PPO update: GAE over the batch, advantages normalized per update
// (guarded for std < 1e-8), then config.epochs passes over shuffled
// minibatches with Adam steps on both networks.
inline UpdateStats ppo_update(ActorCritic& ac, const RolloutBatch& batch,
                              const PpoConfig& config, Rng& rng) {
  batch.validate();
  config.validate();
  const int t_max = batch.size();

  VectorXd advantages, returns;
  compute_gae_batch(batch, config.gamma, config.gae_lambda, advantages, returns);

  const double mean = advantages.mean();
  const double var = (advantages.array() - mean).square().sum() / t_max;
  const double std = std::sqrt(var);
  advantages = (advantages.array() - mean) / std::max(std, 1e-8);

  UpdateStats stats;
  std::vector<int> indices(t_max);
  std::iota(indices.begin(), indices.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(indices);
    for (int start = 0; start < t_max; start += config.minibatch_size) {
      const int len = std::min(config.minibatch_size, t_max - start);
      MatrixXd obs_mb(len, batch.observations.cols());
      MatrixXd act_mb(len, batch.actions.cols());
      VectorXd old_lp_mb(len), adv_mb(len), ret_mb(len);
      for (int i = 0; i < len; ++i) {
        const int idx = indices[start + i];
        obs_mb.row(i) = batch.observations.row(idx);
        act_mb.row(i) = batch.actions.row(idx);
        old_lp_mb[i] = batch.log_probs[idx];
        adv_mb[i] = advantages[idx];
        ret_mb[i] = returns[idx];
      }
      PpoLossResult result =
          ppo_loss(ac.policy, ac.value, obs_mb, act_mb, old_lp_mb, adv_mb, ret_mb, config);
      adam_step(ac.policy_adam, ac.policy, result.policy_grads);
      adam_step(ac.value_adam, ac.value, result.value_grads);
      stats.minibatches += 1;
      stats.loss += result.loss;
      stats.clip_fraction += result.clip_fraction;
      stats.entropy += result.entropy;
      stats.value_error += result.value_error;
    }
  }
  if (stats.minibatches > 0) {
    stats.loss /= stats.minibatches;
    stats.clip_fraction /= stats.minibatches;
    stats.entropy /= stats.minibatches;
    stats.value_error /= stats.minibatches;
  }
  return stats;
}

}  // namespace rtw
