#include <algorithm>
#include <cmath>

#include "projiql/envs.hpp"
#include "projiql/errors.hpp"

namespace projiql::envs {

BehaviorPolicySpec::Kind BehaviorPolicySpec::parse_kind(const std::string& name) {
  if (name == "uniform-random") return Kind::uniform_random;
  if (name == "epsilon-greedy-on-oracle") return Kind::epsilon_greedy_oracle;
  if (name == "waypoint-noisy") return Kind::waypoint_noisy;
  throw ValidationError("unknown behavior policy kind '" + name + "'");
}

std::string BehaviorPolicySpec::kind_name(Kind kind) {
  switch (kind) {
    case Kind::uniform_random: return "uniform-random";
    case Kind::epsilon_greedy_oracle: return "epsilon-greedy-on-oracle";
    case Kind::waypoint_noisy: return "waypoint-noisy";
  }
  return "unknown";
}

void BehaviorPolicySpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("behavior epsilon must lie in [0,1]");
  if (!(noise >= 0.0) || !std::isfinite(noise)) throw ValidationError("behavior noise scale must be >= 0");
}

Vec2 step_towards(Vec2 from, Vec2 target, double bound) {
  const double dx = target.x - from.x;
  const double dy = target.y - from.y;
  const double m = std::max(std::abs(dx), std::abs(dy));
  if (m <= bound) return {dx, dy};
  return {dx * bound / m, dy * bound / m};
}

namespace {

constexpr int kRowStep[4] = {-1, 0, 1, 0};
constexpr int kColStep[4] = {0, 1, 0, -1};

int dist_at(const Layout& layout, const std::vector<int>& dist, Cell c) {
  if (layout.is_wall(c)) return -1;
  return dist[static_cast<std::size_t>(c.row * layout.cols + c.col)];
}

// The free cell touching p that is closest to the target.
Cell locate(const Layout& layout, const std::vector<int>& dist, Vec2 p) {
  const int fx = static_cast<int>(std::floor(p.x));
  const int fy = static_cast<int>(std::floor(p.y));
  Cell best{fy, fx};
  int best_d = -1;
  for (int r = fy - (p.y == fy ? 1 : 0); r <= fy; ++r) {
    for (int c = fx - (p.x == fx ? 1 : 0); c <= fx; ++c) {
      const int d = dist_at(layout, dist, {r, c});
      if (d >= 0 && (best_d < 0 || d < best_d)) {
        best = {r, c};
        best_d = d;
      }
    }
  }
  return best;
}

// Next cell on a shortest path from `from` (ties: up, right, down, left).
Cell next_cell(const Layout& layout, const std::vector<int>& dist, Cell from) {
  const int d = dist_at(layout, dist, from);
  if (d <= 0) return from;
  for (int k = 0; k < 4; ++k) {
    const Cell n{from.row + kRowStep[k], from.col + kColStep[k]};
    if (dist_at(layout, dist, n) == d - 1) return n;
  }
  return from;
}

// BFS tables towards every free cell, shared between clones.
struct DistanceTables {
  Layout layout;
  std::vector<Cell> cells;
  std::vector<std::vector<int>> to;  // indexed like `cells`

  explicit DistanceTables(const Layout& l) : layout(l), cells(l.free_cells()) {
    for (const Cell& c : cells) to.push_back(bfs_distances(layout, c));
  }
  const std::vector<int>& towards(Cell c) const {
    const auto it = std::find(cells.begin(), cells.end(), c);
    return to[static_cast<std::size_t>(it - cells.begin())];
  }
};

std::vector<double> random_action(const Environment& env, StreamRng& rng) {
  if (env.is_grid()) return {static_cast<double>(rng.index(env.action_dim()))};
  const double b = env.point().action_bound;
  return {rng.uniform(-b, b), rng.uniform(-b, b)};
}

class UniformRandom final : public RolloutPolicy {
 public:
  explicit UniformRandom(const Environment& env) : env_(env) {}
  ActionKind action_kind() const override { return env_.action_kind(); }
  std::size_t action_dim() const override { return env_.action_dim(); }
  std::vector<double> act(const std::vector<double>&, StreamRng& rng) override { return random_action(env_, rng); }
  std::unique_ptr<RolloutPolicy> clone() const override { return std::make_unique<UniformRandom>(*this); }

 private:
  Environment env_;
};

// Shared logic for goal-directed and waypoint-chaining behaviour.
class Navigator : public RolloutPolicy {
 public:
  Navigator(const Environment& env, const BehaviorPolicySpec& spec)
      : env_(env), spec_(spec), tables_(std::make_shared<DistanceTables>(layout())) {
    if (env_.is_grid()) greedy_ = value_iteration(env_.grid().mdp).greedy;
  }
  ActionKind action_kind() const override { return env_.action_kind(); }
  std::size_t action_dim() const override { return env_.action_dim(); }

 protected:
  const Layout& layout() const { return env_.is_grid() ? env_.grid().layout : env_.point().layout; }

  std::vector<double> head_to(const std::vector<double>& state, Cell target, StreamRng& rng) const {
    if (spec_.epsilon > 0.0 && rng.bernoulli(spec_.epsilon)) return random_action(env_, rng);
    const auto& dist = tables_->towards(target);
    if (env_.is_grid()) {
      const GridMaze& maze = env_.grid();
      const Cell from = maze.cells[static_cast<std::size_t>(state[0])];
      const Cell to = next_cell(maze.layout, dist, from);
      for (int k = 0; k < 4; ++k)
        if (to.row - from.row == kRowStep[k] && to.col - from.col == kColStep[k]) return {static_cast<double>(k)};
      return {static_cast<double>(rng.index(4))};
    }
    const PointMazeEnv& env = env_.point();
    const Vec2 p{state[0], state[1]};
    const Vec2 w = next_waypoint(env.layout, dist, p, target);
    Vec2 a = step_towards(p, w, env.action_bound);
    if (spec_.noise > 0.0) {
      a.x += spec_.noise * rng.normal();
      a.y += spec_.noise * rng.normal();
    }
    const double b = env.action_bound;
    return {std::clamp(a.x, -b, b), std::clamp(a.y, -b, b)};
  }

  Cell cell_of(const std::vector<double>& state) const {
    if (env_.is_grid()) return env_.grid().cells[static_cast<std::size_t>(state[0])];
    return {static_cast<int>(std::floor(state[1])), static_cast<int>(std::floor(state[0]))};
  }

  Environment env_;
  BehaviorPolicySpec spec_;
  std::shared_ptr<const DistanceTables> tables_;
  std::vector<std::size_t> greedy_;
};

class OracleGreedy final : public Navigator {
 public:
  using Navigator::Navigator;
  std::vector<double> act(const std::vector<double>& state, StreamRng& rng) override {
    if (env_.is_grid()) {
      if (spec_.epsilon > 0.0 && rng.bernoulli(spec_.epsilon)) return random_action(env_, rng);
      return {static_cast<double>(greedy_[static_cast<std::size_t>(state[0])])};
    }
    return head_to(state, layout().goal, rng);
  }
  std::unique_ptr<RolloutPolicy> clone() const override { return std::make_unique<OracleGreedy>(*this); }
};

class WaypointNoisy final : public Navigator {
 public:
  using Navigator::Navigator;
  void reset(const std::vector<double>& state, StreamRng& rng) override { pick(state, rng); }
  std::vector<double> act(const std::vector<double>& state, StreamRng& rng) override {
    if (reached(state)) pick(state, rng);
    return head_to(state, waypoint_, rng);
  }
  std::unique_ptr<RolloutPolicy> clone() const override { return std::make_unique<WaypointNoisy>(*this); }

 private:
  bool reached(const std::vector<double>& state) const {
    if (env_.is_grid()) return cell_of(state) == waypoint_;
    const double dx = state[0] - (waypoint_.col + 0.5);
    const double dy = state[1] - (waypoint_.row + 0.5);
    return std::hypot(dx, dy) <= 0.25;
  }
  void pick(const std::vector<double>& state, StreamRng& rng) {
    const auto& cells = tables_->cells;
    const Cell here = cell_of(state);
    if (cells.size() == 1) {
      waypoint_ = cells.front();
      return;
    }
    do {
      waypoint_ = cells[rng.index(cells.size())];
    } while (waypoint_ == here);
  }

  Cell waypoint_;
};

}  // namespace

Vec2 next_waypoint(const Layout& layout, const std::vector<int>& distances_to_target, Vec2 p, Cell target) {
  const Cell here = locate(layout, distances_to_target, p);
  if (here == target) return {target.col + 0.5, target.row + 0.5};
  const Cell n = next_cell(layout, distances_to_target, here);
  return {n.col + 0.5, n.row + 0.5};
}

std::unique_ptr<RolloutPolicy> make_behavior_policy(const Environment& env, const BehaviorPolicySpec& spec) {
  spec.validate();
  switch (spec.kind) {
    case BehaviorPolicySpec::Kind::uniform_random: return std::make_unique<UniformRandom>(env);
    case BehaviorPolicySpec::Kind::epsilon_greedy_oracle: return std::make_unique<OracleGreedy>(env, spec);
    case BehaviorPolicySpec::Kind::waypoint_noisy: return std::make_unique<WaypointNoisy>(env, spec);
  }
  throw ValidationError("unknown behavior policy kind");
}

}  // namespace projiql::envs
