#pragma once

// Desk-scale environments: text maze layouts, a tabular grid maze, a continuous
// point maze, behavior policies for data generation, and seeded rollouts.

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "projiql/rng.hpp"
#include "projiql/tabular.hpp"

namespace projiql::envs {

struct Cell {
  int row = 0;
  int col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

/// '#' wall, '.' free, 'S' start, 'G' goal; one row per line.
struct Layout {
  int rows = 0;
  int cols = 0;
  std::vector<bool> walls;  // row-major
  Cell start;
  Cell goal;

  /// Throws ParseError with the offending line/column.
  static Layout parse(std::string_view text);
  static Layout load(const std::string& path);

  /// Out-of-range cells count as walls.
  bool is_wall(int row, int col) const;
  bool is_wall(Cell c) const { return is_wall(c.row, c.col); }
  std::vector<Cell> free_cells() const;
  std::string to_string() const;
};

/// Shortest 4-connected path lengths from `from` to every cell (-1 if unreachable), row-major.
std::vector<int> bfs_distances(const Layout& layout, Cell from);

// ---------------------------------------------------------------------------
// Grid maze (tabular)

enum class GridAction { up = 0, right = 1, down = 2, left = 3 };

struct GridMazeOptions {
  double gamma = 0.95;
  /// Probability that the intended move is replaced by a uniformly random one.
  double slip = 0.0;
  /// Added to every non-absorbing reward.
  double reward_shift = 0.0;
  int max_steps = 50;
};

struct GridMaze {
  Layout layout;
  TabularMDP mdp;
  std::vector<Cell> cells;     // state -> cell
  std::vector<int> state_of;   // row-major cell -> state, -1 for walls
  std::size_t start_state = 0;
  std::size_t goal_state = 0;
  double reward_shift = 0.0;
  int max_steps = 50;
};

/// 4 actions; blocked moves stay put; entering the goal pays 1; the goal is absorbing with reward 0.
GridMaze build_gridmaze(std::string_view layout, const GridMazeOptions& options = {});
GridMaze build_gridmaze(const Layout& layout, const GridMazeOptions& options = {});

// ---------------------------------------------------------------------------
// Point maze (continuous)

struct Vec2 {
  double x = 0.0;  // column axis
  double y = 0.0;  // row axis
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

struct PointMazeEnv {
  Layout layout;
  double goal_radius = 0.5;
  int max_steps = 100;
  double action_bound = 0.5;
  /// Episodes start at a random free-cell centre (never the start or goal cell) instead of the start cell.
  bool random_start = false;

  Vec2 start_position() const;
  Vec2 goal_position() const;
  /// True if the point lies strictly inside a wall cell (or outside the grid).
  bool inside_wall(Vec2 p) const;
  void validate() const;
};

struct PointStep {
  Vec2 next;
  double reward = 0.0;
  bool terminal = false;   // entered the goal radius
  bool truncated = false;  // hit max_steps
  bool done() const { return terminal || truncated; }
};

/// `elapsed` is the number of steps already taken in the episode.
PointStep step_pointmaze(const PointMazeEnv& env, Vec2 position, Vec2 action, int elapsed = 0);

// ---------------------------------------------------------------------------
// Generic environment view used by rollouts and evaluation

enum class ActionKind { discrete, continuous };

struct StepOutcome {
  std::vector<double> next_state;
  double reward = 0.0;
  bool terminal = false;
  bool truncated = false;
};

class Environment {
 public:
  Environment(GridMaze maze);        // NOLINT(google-explicit-constructor)
  Environment(PointMazeEnv maze);    // NOLINT(google-explicit-constructor)

  std::string name() const;
  bool is_grid() const { return std::holds_alternative<GridMaze>(env_); }
  const GridMaze& grid() const { return std::get<GridMaze>(env_); }
  const PointMazeEnv& point() const { return std::get<PointMazeEnv>(env_); }

  ActionKind action_kind() const;
  /// Number of actions (discrete) or action components (continuous).
  std::size_t action_dim() const;
  /// Length of the raw state vector: 1 (state index) for grids, 2 for the point maze.
  std::size_t state_dim() const;
  /// Size of the encoded network input (number of states for grids).
  std::size_t observation_dim() const;
  int max_steps() const;
  double gamma_hint() const;

  std::vector<double> reset(StreamRng& rng) const;
  StepOutcome step(const std::vector<double>& state, const std::vector<double>& action, int elapsed,
                   StreamRng& rng) const;

 private:
  std::variant<GridMaze, PointMazeEnv> env_;
};

// ---------------------------------------------------------------------------
// Policies used to drive rollouts

class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;
  virtual ActionKind action_kind() const = 0;
  virtual std::size_t action_dim() const = 0;
  /// Called at the start of every episode with that episode's stream.
  virtual void reset(const std::vector<double>& /*state*/, StreamRng& /*rng*/) {}
  virtual std::vector<double> act(const std::vector<double>& state, StreamRng& rng) = 0;
  virtual std::unique_ptr<RolloutPolicy> clone() const = 0;
};

struct BehaviorPolicySpec {
  enum class Kind { uniform_random, epsilon_greedy_oracle, waypoint_noisy };
  Kind kind = Kind::uniform_random;
  double epsilon = 0.0;
  double noise = 0.0;

  static Kind parse_kind(const std::string& name);
  static std::string kind_name(Kind kind);
  void validate() const;
};

std::unique_ptr<RolloutPolicy> make_behavior_policy(const Environment& env, const BehaviorPolicySpec& spec);

/// Action of the largest admissible step from `from` towards `target` in the point maze.
Vec2 step_towards(Vec2 from, Vec2 target, double bound);
/// Centre of the next cell on a shortest path from the cell containing `p` to `target`.
Vec2 next_waypoint(const Layout& layout, const std::vector<int>& distances_to_target, Vec2 p, Cell target);

struct TrajectoryStep {
  std::vector<double> state;
  std::vector<double> action;
  double reward = 0.0;
  std::vector<double> next_state;
  bool done = false;  // true only on terminal transitions (goal reached)
};

struct Trajectory {
  std::vector<TrajectoryStep> steps;
  bool success = false;
  double total_return = 0.0;
};

bool operator==(const TrajectoryStep& a, const TrajectoryStep& b);
bool operator==(const Trajectory& a, const Trajectory& b);

/// Episode i uses the stream (seed, i) for both the environment and the policy, so results do not
/// depend on `threads`.
std::vector<Trajectory> rollout(const Environment& env, const RolloutPolicy& policy, std::uint64_t seed,
                                std::size_t episodes, std::size_t threads = 1);

}  // namespace projiql::envs
