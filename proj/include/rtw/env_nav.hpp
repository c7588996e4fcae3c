#pragma once

// Confined-Space Navigation simulator: procedurally generated occupancy-grid
// maps (rooms joined by narrow corridors, scattered obstacles) and a
// differential-drive point robot with range-sensor observations. Each env
// instance is independently owned; there is no shared mutable state.

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "json.hpp"
#include "rtw/reward.hpp"
#include "rtw/rng.hpp"

namespace rtw {

using Eigen::Vector2d;

struct NavConfig {
  double width = 8.0;    // meters
  double height = 8.0;
  double resolution = 0.05;  // meters per cell
  double robot_radius = 0.2;
  double goal_radius = 0.3;
  double max_speed = 2.0;     // m/s
  double max_yaw_rate = 2.0;  // rad/s
  double dt = 0.1;
  int max_steps = 500;
  int n_beams = 24;
  double beam_range = 5.0;
  double goal_dist_norm = 10.0;  // observation normalizer
  double safety_radius = 0.3;    // clearance threshold for the safe bonus
  double corridor_width_min = 0.5;
  double corridor_width_max = 1.0;
  int n_rooms = 3;
  int n_obstacles = 4;
  double room_size_min = 1.6;
  double room_size_max = 3.0;
  double obstacle_size_min = 0.2;
  double obstacle_size_max = 0.6;
  int max_generation_retries = 50;

  int obs_dim() const { return n_beams + 4; }
};

namespace detail {

// 1D squared Euclidean distance transform (lower envelope of parabolas).
inline void squared_dt_1d(std::vector<double>& f) {
  const int n = static_cast<int>(f.size());
  if (n == 0) return;
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1), d(n);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
  f = std::move(d);
}

}  // namespace detail

// Occupancy-grid map. Cells outside the bounds count as occupied. The
// clearance field holds, per cell, the Euclidean distance (meters) from the
// cell center to the nearest occupied cell center.
struct NavMap {
  double width = 0.0;
  double height = 0.0;
  double resolution = 0.05;
  int cols = 0;
  int rows = 0;
  std::vector<std::uint8_t> grid;  // row-major, 1 = occupied
  std::vector<double> clearance;   // meters, same layout
  Vector2d start{0, 0};
  Vector2d goal{0, 0};
  double corridor_width_min = 0.0;
  double corridor_width_max = 0.0;

  int cell_x(double x) const { return static_cast<int>(std::floor(x / resolution)); }
  int cell_y(double y) const { return static_cast<int>(std::floor(y / resolution)); }

  bool in_bounds(int ix, int iy) const { return ix >= 0 && ix < cols && iy >= 0 && iy < rows; }

  bool occupied(int ix, int iy) const {
    if (!in_bounds(ix, iy)) return true;
    return grid[iy * cols + ix] != 0;
  }

  double clearance_at(double x, double y) const {
    const int ix = cell_x(x), iy = cell_y(y);
    if (!in_bounds(ix, iy)) return 0.0;
    return clearance[iy * cols + ix];
  }

  void compute_clearance() {
    const double kInf = std::numeric_limits<double>::infinity();
    std::vector<double> field(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) field[i] = grid[i] ? 0.0 : kInf;
    // Border counts as occupied: seed a virtual wall one cell outside by
    // clamping distances afterwards against the border distance.
    std::vector<double> col_buf(rows);
    for (int x = 0; x < cols; ++x) {
      for (int y = 0; y < rows; ++y) col_buf[y] = field[y * cols + x];
      detail::squared_dt_1d(col_buf);
      for (int y = 0; y < rows; ++y) field[y * cols + x] = col_buf[y];
    }
    std::vector<double> row_buf(cols);
    for (int y = 0; y < rows; ++y) {
      for (int x = 0; x < cols; ++x) row_buf[x] = field[y * cols + x];
      detail::squared_dt_1d(row_buf);
      for (int x = 0; x < cols; ++x) field[y * cols + x] = row_buf[x];
    }
    clearance.resize(grid.size());
    for (int y = 0; y < rows; ++y)
      for (int x = 0; x < cols; ++x) {
        double d = std::sqrt(field[y * cols + x]) * resolution;
        const double border = resolution * (1.0 + std::min(std::min(x, cols - 1 - x),
                                                           std::min(y, rows - 1 - y)));
        clearance[y * cols + x] = std::min(d, border);
      }
  }

  // Robot disc against occupied cell rectangles, exact at grid resolution.
  bool disc_collides(const Vector2d& center, double radius) const {
    const int x0 = cell_x(center.x() - radius), x1 = cell_x(center.x() + radius);
    const int y0 = cell_y(center.y() - radius), y1 = cell_y(center.y() + radius);
    for (int iy = y0; iy <= y1; ++iy)
      for (int ix = x0; ix <= x1; ++ix) {
        if (!occupied(ix, iy)) continue;
        const double cx = std::clamp(center.x(), ix * resolution, (ix + 1) * resolution);
        const double cy = std::clamp(center.y(), iy * resolution, (iy + 1) * resolution);
        const double dx = center.x() - cx, dy = center.y() - cy;
        if (dx * dx + dy * dy < radius * radius) return true;
      }
    return false;
  }

  // Distance along the ray to the first occupied cell (entry boundary),
  // capped at max_range. Amanatides-Woo grid traversal.
  double raycast(const Vector2d& origin, double angle, double max_range) const {
    int ix = cell_x(origin.x()), iy = cell_y(origin.y());
    if (occupied(ix, iy)) return 0.0;
    const double dx = std::cos(angle), dy = std::sin(angle);
    const int step_x = dx > 0 ? 1 : -1, step_y = dy > 0 ? 1 : -1;
    const double inv_dx = std::abs(dx) > 1e-12 ? 1.0 / std::abs(dx) : 1e18;
    const double inv_dy = std::abs(dy) > 1e-12 ? 1.0 / std::abs(dy) : 1e18;
    double next_x = dx > 0 ? ((ix + 1) * resolution - origin.x()) : (origin.x() - ix * resolution);
    double next_y = dy > 0 ? ((iy + 1) * resolution - origin.y()) : (origin.y() - iy * resolution);
    double t_max_x = next_x * inv_dx, t_max_y = next_y * inv_dy;
    const double t_delta_x = resolution * inv_dx, t_delta_y = resolution * inv_dy;
    double t = 0.0;
    while (t <= max_range) {
      if (t_max_x < t_max_y) {
        t = t_max_x;
        t_max_x += t_delta_x;
        ix += step_x;
      } else {
        t = t_max_y;
        t_max_y += t_delta_y;
        iy += step_y;
      }
      if (t > max_range) break;
      if (occupied(ix, iy)) return t;
    }
    return max_range;
  }

  // Breadth-first search over cells with clearance >= radius.
  bool path_exists(const Vector2d& from, const Vector2d& to, double radius) const {
    const int sx = cell_x(from.x()), sy = cell_y(from.y());
    const int gx = cell_x(to.x()), gy = cell_y(to.y());
    if (!in_bounds(sx, sy) || !in_bounds(gx, gy)) return false;
    auto passable = [&](int x, int y) {
      return in_bounds(x, y) && clearance[y * cols + x] >= radius;
    };
    if (!passable(sx, sy) || !passable(gx, gy)) return false;
    std::vector<std::uint8_t> visited(grid.size(), 0);
    std::vector<int> queue;
    queue.push_back(sy * cols + sx);
    visited[sy * cols + sx] = 1;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const int cur = queue[head];
      const int cx = cur % cols, cy = cur / cols;
      if (cx == gx && cy == gy) return true;
      const int nx[4] = {cx + 1, cx - 1, cx, cx};
      const int ny[4] = {cy, cy, cy + 1, cy - 1};
      for (int i = 0; i < 4; ++i) {
        if (!passable(nx[i], ny[i])) continue;
        const int idx = ny[i] * cols + nx[i];
        if (!visited[idx]) {
          visited[idx] = 1;
          queue.push_back(idx);
        }
      }
    }
    return false;
  }
};

namespace detail {

inline void carve_rect(NavMap& map, double x0, double y0, double x1, double y1) {
  const int ix0 = std::max(0, map.cell_x(std::min(x0, x1)));
  const int ix1 = std::min(map.cols - 1, map.cell_x(std::max(x0, x1)));
  const int iy0 = std::max(0, map.cell_y(std::min(y0, y1)));
  const int iy1 = std::min(map.rows - 1, map.cell_y(std::max(y0, y1)));
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix) map.grid[iy * map.cols + ix] = 0;
}

inline void fill_rect(NavMap& map, double x0, double y0, double x1, double y1) {
  const int ix0 = std::max(0, map.cell_x(std::min(x0, x1)));
  const int ix1 = std::min(map.cols - 1, map.cell_x(std::max(x0, x1)));
  const int iy0 = std::max(0, map.cell_y(std::min(y0, y1)));
  const int iy1 = std::min(map.rows - 1, map.cell_y(std::max(y0, y1)));
  for (int iy = iy0; iy <= iy1; ++iy)
    for (int ix = ix0; ix <= ix1; ++ix) map.grid[iy * map.cols + ix] = 1;
}

inline NavMap generate_map_attempt(std::uint64_t seed, const NavConfig& config) {
  Rng rng(seed);
  NavMap map;
  map.width = config.width;
  map.height = config.height;
  map.resolution = config.resolution;
  map.cols = static_cast<int>(std::round(config.width / config.resolution));
  map.rows = static_cast<int>(std::round(config.height / config.resolution));
  map.grid.assign(static_cast<std::size_t>(map.cols) * map.rows, 1);
  map.corridor_width_min = config.corridor_width_min;
  map.corridor_width_max = config.corridor_width_max;

  // Rooms.
  const double margin = 0.3;
  std::vector<Vector2d> centers;
  std::vector<Vector2d> half_sizes;
  for (int r = 0; r < config.n_rooms; ++r) {
    const double w = rng.uniform(config.room_size_min, config.room_size_max);
    const double h = rng.uniform(config.room_size_min, config.room_size_max);
    const double cx = rng.uniform(margin + w / 2, config.width - margin - w / 2);
    const double cy = rng.uniform(margin + h / 2, config.height - margin - h / 2);
    centers.emplace_back(cx, cy);
    half_sizes.emplace_back(w / 2, h / 2);
    carve_rect(map, cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2);
  }

  // L-shaped corridors between consecutive rooms.
  for (int r = 0; r + 1 < config.n_rooms; ++r) {
    const double cw = rng.uniform(config.corridor_width_min, config.corridor_width_max);
    const Vector2d a = centers[r], b = centers[r + 1];
    if (rng.uniform() < 0.5) {
      carve_rect(map, a.x(), a.y() - cw / 2, b.x(), a.y() + cw / 2);
      carve_rect(map, b.x() - cw / 2, a.y(), b.x() + cw / 2, b.y());
    } else {
      carve_rect(map, a.x() - cw / 2, a.y(), a.x() + cw / 2, b.y());
      carve_rect(map, a.x(), b.y() - cw / 2, b.x(), b.y() + cw / 2);
    }
  }

  map.start = centers.front();
  map.goal = centers.back();

  // Convex obstacles, kept clear of the start and goal discs.
  const double keepout = config.robot_radius + config.goal_radius + 0.2;
  for (int o = 0; o < config.n_obstacles; ++o) {
    const double s = rng.uniform(config.obstacle_size_min, config.obstacle_size_max);
    const double ox = rng.uniform(margin, config.width - margin);
    const double oy = rng.uniform(margin, config.height - margin);
    const Vector2d c(ox, oy);
    if ((c - map.start).norm() < keepout + s || (c - map.goal).norm() < keepout + s) continue;
    fill_rect(map, ox - s / 2, oy - s / 2, ox + s / 2, oy + s / 2);
  }

  map.compute_clearance();
  return map;
}

}  // namespace detail

// Deterministic map generation with a free-space connectivity guarantee:
// regenerates (bounded retries) until a robot-radius path start->goal exists.
inline NavMap generate_map(std::uint64_t seed, const NavConfig& config) {
  if (config.corridor_width_min <= 2.0 * config.robot_radius)
    throw std::invalid_argument("generate_map: corridor min width must exceed robot diameter");
  // The clearance field measures cell center to occupied cell center; a
  // half-diagonal margin makes the connectivity check conservative with
  // respect to exact disc-vs-cell collision.
  const double margin = config.resolution * M_SQRT2 / 2.0;
  for (int attempt = 0; attempt < config.max_generation_retries; ++attempt) {
    NavMap map = detail::generate_map_attempt(derive_seed(seed, "nav-map", attempt), config);
    if (!map.disc_collides(map.start, config.robot_radius) &&
        !map.disc_collides(map.goal, config.robot_radius) &&
        map.path_exists(map.start, map.goal, config.robot_radius + margin))
      return map;
  }
  throw std::runtime_error("generate_map: retry budget exhausted for seed " +
                           std::to_string(seed));
}

struct NavState {
  Vector2d position{0, 0};
  double heading = 0.0;
  double linear_vel = 0.0;
  double angular_vel = 0.0;
  int steps_elapsed = 0;
};

enum class NavOutcome { kRunning, kSuccess, kCollision, kTimeout };

inline std::string nav_outcome_name(NavOutcome o) {
  switch (o) {
    case NavOutcome::kRunning: return "running";
    case NavOutcome::kSuccess: return "success";
    case NavOutcome::kCollision: return "collision";
    default: return "timeout";
  }
}

// Range-beam observation: n_beams raycast ranges (normalized by beam_range),
// goal distance (normalized, clamped), goal bearing (sin, cos), speed
// (normalized). Beam 0 points forward; beams sweep counter-clockwise.
inline VectorXd nav_observe(const NavState& state, const NavMap& map, const NavConfig& config) {
  VectorXd obs(config.obs_dim());
  for (int b = 0; b < config.n_beams; ++b) {
    const double angle = state.heading + 2.0 * M_PI * b / config.n_beams;
    obs[b] = map.raycast(state.position, angle, config.beam_range) / config.beam_range;
  }
  const Vector2d to_goal = map.goal - state.position;
  const double dist = to_goal.norm();
  const double bearing = std::atan2(to_goal.y(), to_goal.x()) - state.heading;
  obs[config.n_beams + 0] = std::min(dist / config.goal_dist_norm, 1.0);
  obs[config.n_beams + 1] = std::sin(bearing);
  obs[config.n_beams + 2] = std::cos(bearing);
  obs[config.n_beams + 3] = state.linear_vel / config.max_speed;
  return obs;
}

class NavEnv {
 public:
  explicit NavEnv(const NavConfig& config = {}) : config_(config) {}

  const NavConfig& config() const { return config_; }
  const NavMap& map() const { return map_; }
  const NavState& state() const { return state_; }
  bool done() const { return outcome_ != NavOutcome::kRunning; }
  NavOutcome outcome() const { return outcome_; }
  int obs_dim() const { return config_.obs_dim(); }
  static constexpr int kActDim = 2;

  // Fresh map for the given seed, robot at start with zero velocity.
  VectorXd reset(std::uint64_t seed) { return reset_with_map(generate_map(seed, config_)); }

  // Fixed-map reset (evaluation suites).
  VectorXd reset_with_map(NavMap map) {
    map_ = std::move(map);
    state_ = NavState{};
    state_.position = map_.start;
    const Vector2d to_goal = map_.goal - map_.start;
    state_.heading = std::atan2(to_goal.y(), to_goal.x());
    outcome_ = NavOutcome::kRunning;
    return nav_observe(state_, map_, config_);
  }

  struct StepResult {
    VectorXd observation;
    NavTransition transition;
    NavOutcome outcome = NavOutcome::kRunning;
  };

  // Advances a state copy through the unicycle model. Shared by the env step
  // and by planners that use the simulator as their dynamics model.
  static NavState integrate(const NavState& state, double v_cmd, double omega_cmd,
                            const NavConfig& config) {
    NavState next = state;
    next.linear_vel = std::clamp(v_cmd, 0.0, config.max_speed);
    next.angular_vel = std::clamp(omega_cmd, -config.max_yaw_rate, config.max_yaw_rate);
    next.heading = state.heading + next.angular_vel * config.dt;
    if (next.heading > M_PI) next.heading -= 2.0 * M_PI;
    if (next.heading < -M_PI) next.heading += 2.0 * M_PI;
    next.position.x() = state.position.x() + next.linear_vel * std::cos(next.heading) * config.dt;
    next.position.y() = state.position.y() + next.linear_vel * std::sin(next.heading) * config.dt;
    next.steps_elapsed = state.steps_elapsed + 1;
    return next;
  }

  struct SimStep {
    NavState state;
    bool collision = false;
    bool reached = false;
  };

  static SimStep simulate_step(const NavMap& map, const NavState& state, double v_cmd,
                               double omega_cmd, const NavConfig& config) {
    SimStep out;
    out.state = integrate(state, v_cmd, omega_cmd, config);
    out.collision = map.disc_collides(out.state.position, config.robot_radius);
    out.reached =
        !out.collision && (out.state.position - map.goal).norm() <= config.goal_radius;
    return out;
  }

  StepResult step(double v_cmd, double omega_cmd) {
    if (done()) throw std::logic_error("NavEnv::step called after episode end");
    const double prev_dist = (state_.position - map_.goal).norm();
    SimStep sim = simulate_step(map_, state_, v_cmd, omega_cmd, config_);
    state_ = sim.state;

    StepResult result;
    result.transition.prev_dist_to_goal = prev_dist;
    result.transition.next_dist_to_goal = (state_.position - map_.goal).norm();
    result.transition.collision = sim.collision;
    result.transition.reached_goal = sim.reached;
    result.transition.min_clearance =
        sim.collision ? 0.0
                      : std::max(0.0, map_.clearance_at(state_.position.x(),
                                                        state_.position.y()) -
                                          config_.robot_radius);
    if (sim.collision)
      outcome_ = NavOutcome::kCollision;
    else if (sim.reached)
      outcome_ = NavOutcome::kSuccess;
    else if (state_.steps_elapsed >= config_.max_steps)
      outcome_ = NavOutcome::kTimeout;
    result.outcome = outcome_;
    result.observation = nav_observe(state_, map_, config_);
    return result;
  }

 private:
  NavConfig config_;
  NavMap map_;
  NavState state_;
  NavOutcome outcome_ = NavOutcome::kRunning;
};

// -- map JSON (run-length encoded grid) -- //

inline nlohmann::json nav_map_to_json(const NavMap& map) {
  nlohmann::json j;
  j["width"] = map.width;
  j["height"] = map.height;
  j["resolution"] = map.resolution;
  j["cols"] = map.cols;
  j["rows"] = map.rows;
  j["start"] = {map.start.x(), map.start.y()};
  j["goal"] = {map.goal.x(), map.goal.y()};
  j["corridor_width_range"] = {map.corridor_width_min, map.corridor_width_max};
  // Run lengths alternate starting with the value of cell (0,0).
  nlohmann::json runs = nlohmann::json::array();
  j["first_value"] = static_cast<int>(map.grid.empty() ? 0 : map.grid[0]);
  std::size_t i = 0;
  while (i < map.grid.size()) {
    std::size_t run = 1;
    while (i + run < map.grid.size() && map.grid[i + run] == map.grid[i]) ++run;
    runs.push_back(run);
    i += run;
  }
  j["grid_rle"] = std::move(runs);
  return j;
}

inline NavMap nav_map_from_json(const nlohmann::json& j) {
  NavMap map;
  map.width = j.at("width").get<double>();
  map.height = j.at("height").get<double>();
  map.resolution = j.at("resolution").get<double>();
  map.cols = j.at("cols").get<int>();
  map.rows = j.at("rows").get<int>();
  map.start = Vector2d(j.at("start")[0].get<double>(), j.at("start")[1].get<double>());
  map.goal = Vector2d(j.at("goal")[0].get<double>(), j.at("goal")[1].get<double>());
  map.corridor_width_min = j.at("corridor_width_range")[0].get<double>();
  map.corridor_width_max = j.at("corridor_width_range")[1].get<double>();
  map.grid.reserve(static_cast<std::size_t>(map.cols) * map.rows);
  std::uint8_t value = static_cast<std::uint8_t>(j.at("first_value").get<int>());
  for (const auto& run : j.at("grid_rle")) {
    map.grid.insert(map.grid.end(), run.get<std::size_t>(), value);
    value = value ? 0 : 1;
  }
  if (map.grid.size() != static_cast<std::size_t>(map.cols) * map.rows)
    throw std::invalid_argument("nav_map_from_json: grid size mismatch");
  map.compute_clearance();
  return map;
}

}  // namespace rtw
