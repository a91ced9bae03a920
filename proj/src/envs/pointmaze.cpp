#include <algorithm>
#include <cmath>

#include "projiql/envs.hpp"
#include "projiql/errors.hpp"

namespace projiql::envs {

namespace {

constexpr double kMargin = 1e-9;

Vec2 cell_center(Cell c) { return {c.col + 0.5, c.row + 0.5}; }

// Indices of the cells whose closed extent along one axis contains `v`.
std::pair<int, int> touched(double v) {
  const double f = std::floor(v);
  const int i = static_cast<int>(f);
  if (v == f) return {i - 1, i};
  return {i, i};
}

// Moves `pos` along one axis by `delta`, stopping at the first wall cell in the way.
// `moving` is the coordinate being changed and `fixed` the other one.
double move_axis(const Layout& layout, double moving, double fixed, double delta, bool along_x) {
  if (delta == 0.0) return moving;
  const auto [lo, hi] = touched(fixed);
  auto blocked = [&](int idx) {
    for (int other = lo; other <= hi; ++other) {
      if (along_x ? layout.is_wall(other, idx) : layout.is_wall(idx, other)) return true;
    }
    return false;
  };
  const double target = moving + delta;
  if (delta > 0.0) {
    const int first = static_cast<int>(std::floor(moving)) + 1;
    const int last = static_cast<int>(std::ceil(target)) - 1;
    for (int idx = first; idx <= last; ++idx) {
      if (blocked(idx)) return std::max(moving, idx - kMargin);
    }
  } else {
    const int first = static_cast<int>(std::ceil(moving)) - 1;
    const int last = static_cast<int>(std::floor(target));
    for (int idx = first; idx >= last; --idx) {
      if (idx == static_cast<int>(std::floor(moving)) && moving > idx) continue;  // current cell
      if (blocked(idx)) return std::min(moving, idx + 1 + kMargin);
    }
  }
  return target;
}

}  // namespace

Vec2 PointMazeEnv::start_position() const { return cell_center(layout.start); }
Vec2 PointMazeEnv::goal_position() const { return cell_center(layout.goal); }

bool PointMazeEnv::inside_wall(Vec2 p) const {
  const double fx = std::floor(p.x);
  const double fy = std::floor(p.y);
  if (p.x == fx || p.y == fy) {
    // On a cell boundary: only "strictly inside" if the boundary is interior to a wall block.
    const auto [c0, c1] = touched(p.x);
    const auto [r0, r1] = touched(p.y);
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        if (!layout.is_wall(r, c)) return false;
    return true;
  }
  return layout.is_wall(static_cast<int>(fy), static_cast<int>(fx));
}

void PointMazeEnv::validate() const {
  if (layout.is_wall(layout.start) || layout.is_wall(layout.goal))
    throw ValidationError("point maze start and goal must be free cells");
  if (!(goal_radius > 0.0)) throw ValidationError("point maze goal radius must be positive");
  if (!(action_bound > 0.0) || !std::isfinite(action_bound))
    throw ValidationError("point maze action bound must be positive and finite");
  if (max_steps < 1) throw ValidationError("point maze max_steps must be positive");
}

PointStep step_pointmaze(const PointMazeEnv& env, Vec2 position, Vec2 action, int elapsed) {
  const double b = env.action_bound;
  const double ax = std::isfinite(action.x) ? std::clamp(action.x, -b, b) : 0.0;
  const double ay = std::isfinite(action.y) ? std::clamp(action.y, -b, b) : 0.0;

  PointStep out;
  out.next = position;
  out.next.x = move_axis(env.layout, position.x, position.y, ax, true);
  out.next.y = move_axis(env.layout, position.y, out.next.x, ay, false);

  const Vec2 goal = env.goal_position();
  const double dist = std::hypot(out.next.x - goal.x, out.next.y - goal.y);
  if (dist <= env.goal_radius) {
    out.reward = 1.0;
    out.terminal = true;
  }
  out.truncated = !out.terminal && elapsed + 1 >= env.max_steps;
  return out;
}

}  // namespace projiql::envs
