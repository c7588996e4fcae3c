#pragma once

// Decomposed reward: a primary task-success term plus K auxiliary components
// weighted by the teacher. Holds the concrete component definitions for both
// tasks. All functions here are pure.

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

namespace rtw {

using Eigen::VectorXd;

enum class Task { kNav, kOffroad };

inline std::string task_name(Task t) { return t == Task::kNav ? "nav" : "offroad"; }

inline Task task_from_name(const std::string& name) {
  if (name == "nav") return Task::kNav;
  if (name == "offroad") return Task::kOffroad;
  throw std::invalid_argument("unknown task: " + name);
}

// Number of auxiliary components K per task.
inline int aux_count(Task t) { return t == Task::kNav ? 3 : 4; }

// Primary reward magnitude, used to normalize teacher-state features.
inline double primary_scale(Task t) { return t == Task::kNav ? 20.0 : 1000.0; }

// K auxiliary weights in [0, 1], the teacher's action. Clamped into the box
// at construction.
class WeightVector {
 public:
  WeightVector() = default;
  explicit WeightVector(VectorXd w) : w_(std::move(w)) {
    for (int k = 0; k < w_.size(); ++k) w_[k] = std::clamp(w_[k], 0.0, 1.0);
  }
  static WeightVector constant(int k, double value) {
    return WeightVector(VectorXd::Constant(k, value));
  }
  int size() const { return static_cast<int>(w_.size()); }
  double operator[](int k) const { return w_[k]; }
  const VectorXd& values() const { return w_; }

 private:
  VectorXd w_;
};

// Primary scalar plus K unweighted auxiliary scalars for one transition.
struct RewardBreakdown {
  double primary = 0.0;
  VectorXd aux;
};

// Composed reward: primary + sum_k w_k * aux_k.
inline double compose_reward(const RewardBreakdown& breakdown, const WeightVector& weights) {
  if (breakdown.aux.size() != weights.size())
    throw std::invalid_argument("compose_reward: aux length " +
                                std::to_string(breakdown.aux.size()) + " != weight length " +
                                std::to_string(weights.size()));
  return breakdown.primary + weights.values().dot(breakdown.aux);
}

// -- Confined-Space Navigation components -- //

struct NavRewardParams {
  double goal_bonus = 20.0;
  double collision_penalty = -2.0;
  double progress_scale = 2.0;   // per meter of progress toward the goal
  double safe_bonus = 1.0;       // per step with clearance >= safety_radius
  double safety_radius = 0.3;    // meters from the robot boundary
};

// Reward-relevant view of one navigation transition, filled by the env.
struct NavTransition {
  double prev_dist_to_goal = 0.0;
  double next_dist_to_goal = 0.0;
  bool reached_goal = false;
  bool collision = false;
  double min_clearance = 0.0;  // robot boundary to nearest obstacle, meters
};

inline RewardBreakdown nav_reward_components(const NavTransition& t,
                                             const NavRewardParams& params = {}) {
  RewardBreakdown b;
  b.primary = t.reached_goal ? params.goal_bonus : 0.0;
  b.aux.resize(3);
  b.aux[0] = t.collision ? params.collision_penalty : 0.0;
  b.aux[1] = params.progress_scale * (t.prev_dist_to_goal - t.next_dist_to_goal);
  b.aux[2] = t.min_clearance >= params.safety_radius ? params.safe_bonus : 0.0;
  return b;
}

// Per-step bound of |aux_k| for the navigation task, given the largest
// distance the robot can cover in one step.
inline VectorXd nav_aux_bounds(double max_step_progress, const NavRewardParams& params = {}) {
  VectorXd b(3);
  b << -params.collision_penalty, params.progress_scale * max_step_progress, params.safe_bonus;
  return b;
}

// -- Off-Road Vehicle Mobility components -- //

struct OffroadRewardParams {
  double goal_bonus = 1000.0;
  double progress_scale = 5.0;       // per meter of progress toward the goal
  double speed_scale = 1.0;          // at max speed
  double max_speed = 4.0;            // m/s
  double stall_penalty = -0.5;
  double attitude_penalty = -0.5;
  double attitude_threshold = 15.0 * M_PI / 180.0;  // radians
  double stall_speed = 0.1;          // m/s
  int stall_window = 10;             // consecutive steps
};

struct OffroadTransition {
  double progress = 0.0;  // meters of distance-to-goal decrease
  double speed = 0.0;     // m/s after the step
  bool reached_goal = false;
  bool stalled = false;   // stall condition held for >= stall_window steps
  double roll = 0.0;      // radians
  double pitch = 0.0;     // radians
};

inline RewardBreakdown offroad_reward_components(const OffroadTransition& t,
                                                 const OffroadRewardParams& params = {}) {
  RewardBreakdown b;
  b.primary = t.reached_goal ? params.goal_bonus : 0.0;
  b.aux.resize(4);
  b.aux[0] = params.progress_scale * t.progress;
  b.aux[1] = params.speed_scale * std::min(t.speed, params.max_speed) / params.max_speed;
  b.aux[2] = t.stalled ? params.stall_penalty : 0.0;
  b.aux[3] = (std::abs(t.roll) > params.attitude_threshold ||
              std::abs(t.pitch) > params.attitude_threshold)
                 ? params.attitude_penalty
                 : 0.0;
  return b;
}

inline VectorXd offroad_aux_bounds(double max_step_progress,
                                   const OffroadRewardParams& params = {}) {
  VectorXd b(4);
  b << params.progress_scale * max_step_progress, params.speed_scale, -params.stall_penalty,
      -params.attitude_penalty;
  return b;
}

// Per-step |aux_k| bounds with the default kinematic step limits
// (nav: 2 m/s * 0.1 s, off-road: 4 m/s * 0.1 s).
inline VectorXd aux_step_bounds(Task t) {
  return t == Task::kNav ? nav_aux_bounds(0.2) : offroad_aux_bounds(0.4);
}

}  // namespace rtw
