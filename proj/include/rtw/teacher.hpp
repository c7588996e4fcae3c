#pragma once

// Teacher MDP: state is a ring buffer of the last H (weights, mean primary,
// mean auxiliary) records, actions are auxiliary weight vectors in [0,1]^K,
// reward is the student's primary-reward performance. Learning goes through
// the shared PPO module. The teacher runs strictly sequentially with respect
// to student iterations.

#include <Eigen/Dense>
#include <cstdio>
#include <deque>
#include <stdexcept>
#include <vector>

#include "rtw/nn.hpp"
#include "rtw/ppo.hpp"
#include "rtw/reward.hpp"
#include "rtw/rng.hpp"

namespace rtw {

// One completed student iteration as the teacher sees it: the weights that
// were active, the mean per-episode primary reward, and the mean per-episode
// unweighted auxiliary sums.
struct TeacherRecord {
  WeightVector weights;
  double mean_primary = 0.0;
  VectorXd mean_aux;
};

// Ring buffer of exactly H records, zero-padded before H iterations elapse.
// Flattened length is H * (2K + 1); the oldest record is evicted first.
class TeacherState {
 public:
  TeacherState() = default;
  TeacherState(int horizon, int k) : horizon_(horizon), k_(k) {
    if (horizon <= 0) throw std::invalid_argument("TeacherState: horizon must be positive");
    TeacherRecord zero;
    zero.weights = WeightVector::constant(k, 0.0);
    zero.mean_aux = VectorXd::Zero(k);
    records_.assign(horizon, zero);
  }

  int horizon() const { return horizon_; }
  int k() const { return k_; }
  // Oldest first.
  const std::vector<TeacherRecord>& records() const { return records_; }
  int flat_size() const { return horizon_ * (2 * k_ + 1); }

  friend TeacherState push_record(const TeacherState& state, const TeacherRecord& record);

 private:
  int horizon_ = 0;
  int k_ = 0;
  std::vector<TeacherRecord> records_;
};

// Functional update: newest record appended, oldest evicted.
inline TeacherState push_record(const TeacherState& state, const TeacherRecord& record) {
  if (record.weights.size() != state.k() || record.mean_aux.size() != state.k())
    throw std::invalid_argument("push_record: K mismatch: state K " + std::to_string(state.k()) +
                                ", record K " + std::to_string(record.weights.size()));
  TeacherState next = state;
  next.records_.erase(next.records_.begin());
  next.records_.push_back(record);
  return next;
}

// Feature normalizers for the flattened state: primary rewards divided by a
// fixed per-task scale, auxiliary means by their per-episode bounds.
struct TeacherScaling {
  double primary_norm = 1.0;
  VectorXd aux_norms;
};

inline TeacherScaling teacher_scaling(Task task, int max_episode_steps) {
  TeacherScaling s;
  s.primary_norm = primary_scale(task);
  s.aux_norms = aux_step_bounds(task) * static_cast<double>(max_episode_steps);
  return s;
}

// Concatenation per record of [w (K), p (1), r (K)], oldest first.
inline VectorXd flatten_state(const TeacherState& state, const TeacherScaling& scaling) {
  const int k = state.k();
  if (scaling.aux_norms.size() != k)
    throw std::invalid_argument("flatten_state: scaling K mismatch");
  VectorXd flat(state.flat_size());
  int at = 0;
  for (const TeacherRecord& rec : state.records()) {
    flat.segment(at, k) = rec.weights.values();
    at += k;
    flat[at++] = rec.mean_primary / scaling.primary_norm;
    for (int i = 0; i < k; ++i) flat[at + i] = rec.mean_aux[i] / scaling.aux_norms[i];
    at += k;
  }
  return flat;
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Teacher action: a Gaussian sample in pre-squash space mapped through the
// logistic function into (0,1)^K. The Gaussian log-prob is what PPO consumes
// (the squash is a fixed bijection applied after sampling, used consistently
// on both sides of the surrogate ratio).
struct TeacherAction {
  GaussianAction gaussian;
  WeightVector weights;
};

inline TeacherAction teacher_act(const MlpParams& policy, const TeacherState& state,
                                 const TeacherScaling& scaling, Rng& rng,
                                 bool deterministic = false) {
  const VectorXd obs = flatten_state(state, scaling);
  const VectorXd mean = mlp_forward(policy, obs);
  TeacherAction action;
  if (deterministic) {
    action.gaussian.mean = mean;
    action.gaussian.log_std = policy.log_std.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    action.gaussian.sample = mean;
    action.gaussian.log_prob = gaussian_log_prob(mean, action.gaussian.log_std, mean);
  } else {
    action.gaussian = gaussian_sample(mean, policy.log_std, rng);
  }
  VectorXd w(action.gaussian.sample.size());
  for (int i = 0; i < w.size(); ++i) w[i] = logistic(action.gaussian.sample[i]);
  action.weights = WeightVector(w);
  return action;
}

inline WeightVector generate_weights(const MlpParams& policy, const TeacherState& state,
                                     const TeacherScaling& scaling, Rng& rng,
                                     bool deterministic = false) {
  return teacher_act(policy, state, scaling, rng, deterministic).weights;
}

// Mean per-episode primary reward of the just-finished student iteration.
// Weight-independent by construction: it reads only primary totals.
inline double teacher_reward(const std::vector<double>& episode_primaries) {
  if (episode_primaries.empty()) {
    std::fprintf(stderr, "warning: teacher_reward with zero completed episodes, returning 0\n");
    return 0.0;
  }
  double sum = 0.0;
  for (double p : episode_primaries) sum += p;
  return sum / static_cast<double>(episode_primaries.size());
}

// One PPO update over the teacher's accumulated transitions.
inline UpdateStats teacher_update(ActorCritic& teacher, const RolloutBatch& episode_batch,
                                  const PpoConfig& config, Rng& rng) {
  if (episode_batch.actions.cols() != teacher.policy.output_dim())
    throw std::invalid_argument("teacher_update: action dim mismatch");
  return ppo_update(teacher, episode_batch, config, rng);
}

struct TeacherConfig {
  int horizon = 5;             // H
  int episodes_per_update = 10;  // teacher transitions per PPO update
  std::vector<int> hidden = {64, 64};
  PpoConfig ppo;
};

inline TeacherConfig default_teacher_config(Task task) {
  TeacherConfig cfg;
  cfg.episodes_per_update = task == Task::kNav ? 10 : 2;
  cfg.ppo.learning_rate = 3e-4;
  cfg.ppo.epochs = 10;
  cfg.ppo.minibatch_size = 64;
  return cfg;
}

// Orchestrates one teacher step per student iteration: emit weights at the
// start (iteration 0 uses the fixed midpoint of the box, before any teacher
// action), push the iteration record at the end, and run a PPO update every
// `episodes_per_update` accumulated transitions.
class TeacherAgent {
 public:
  TeacherAgent(Task task, const TeacherConfig& config, const TeacherScaling& scaling, Rng& init_rng)
      : task_(task),
        config_(config),
        scaling_(scaling),
        state_(config.horizon, aux_count(task)),
        ac_(make_actor_critic(state_.flat_size(), aux_count(task), config.hidden,
                              config.ppo.learning_rate, init_rng)) {}

  const TeacherState& state() const { return state_; }
  const ActorCritic& actor_critic() const { return ac_; }
  ActorCritic& actor_critic() { return ac_; }
  const TeacherScaling& scaling() const { return scaling_; }
  Task task() const { return task_; }
  const TeacherConfig& config() const { return config_; }

  // Algorithm line 5. Iteration 0 returns the midpoint weights without
  // consuming randomness or logging a transition.
  WeightVector begin_iteration(Rng& rng) {
    if (first_iteration_) {
      first_iteration_ = false;
      has_pending_ = false;
      return WeightVector::constant(aux_count(task_), 0.5);
    }
    const VectorXd obs = flatten_state(state_, scaling_);
    TeacherAction action = teacher_act(ac_.policy, state_, scaling_, rng, false);
    pending_obs_ = obs;
    pending_action_ = action.gaussian.sample;
    pending_log_prob_ = action.gaussian.log_prob;
    pending_value_ = mlp_forward(ac_.value, obs)[0];
    has_pending_ = true;
    return action.weights;
  }

  WeightVector deterministic_weights(Rng& rng) {
    return teacher_act(ac_.policy, state_, scaling_, rng, true).weights;
  }

  // Algorithm lines 10-11: push the record, credit the pending action with
  // the iteration's mean primary reward, update on cadence.
  UpdateStats end_iteration(const TeacherRecord& record, Rng& update_rng) {
    state_ = push_record(state_, record);
    if (has_pending_) {
      buffer_obs_.push_back(pending_obs_);
      buffer_actions_.push_back(pending_action_);
      buffer_log_probs_.push_back(pending_log_prob_);
      buffer_values_.push_back(pending_value_);
      buffer_rewards_.push_back(record.mean_primary / scaling_.primary_norm);
      has_pending_ = false;
    }
    UpdateStats stats;
    if (static_cast<int>(buffer_obs_.size()) >= config_.episodes_per_update) {
      stats = flush_update(update_rng);
    }
    return stats;
  }

  int buffered_transitions() const { return static_cast<int>(buffer_obs_.size()); }

 private:
  UpdateStats flush_update(Rng& update_rng) {
    const int t_max = static_cast<int>(buffer_obs_.size());
    RolloutBatch batch;
    batch.observations.resize(t_max, state_.flat_size());
    batch.actions.resize(t_max, aux_count(task_));
    batch.log_probs.resize(t_max);
    batch.rewards.resize(t_max);
    batch.values.resize(t_max);
    batch.done_flags.assign(t_max, 0);
    batch.env_ids.assign(t_max, 0);
    for (int t = 0; t < t_max; ++t) {
      batch.observations.row(t) = buffer_obs_[t].transpose();
      batch.actions.row(t) = buffer_actions_[t].transpose();
      batch.log_probs[t] = buffer_log_probs_[t];
      batch.rewards[t] = buffer_rewards_[t];
      batch.values[t] = buffer_values_[t];
    }
    // The teacher's episode continues across updates; bootstrap with the
    // value of the current state.
    batch.bootstrap_value = mlp_forward(ac_.value, flatten_state(state_, scaling_))[0];
    UpdateStats stats = teacher_update(ac_, batch, config_.ppo, update_rng);
    buffer_obs_.clear();
    buffer_actions_.clear();
    buffer_log_probs_.clear();
    buffer_values_.clear();
    buffer_rewards_.clear();
    return stats;
  }

  Task task_;
  TeacherConfig config_;
  TeacherScaling scaling_;
  TeacherState state_;
  ActorCritic ac_;

  bool first_iteration_ = true;
  bool has_pending_ = false;
  VectorXd pending_obs_;
  VectorXd pending_action_;
  double pending_log_prob_ = 0.0;
  double pending_value_ = 0.0;

  std::vector<VectorXd> buffer_obs_;
  std::vector<VectorXd> buffer_actions_;
  std::vector<double> buffer_log_probs_;
  std::vector<double> buffer_values_;
  std::vector<double> buffer_rewards_;
};

}  // namespace rtw
