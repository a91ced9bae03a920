#include "projiql/envs.hpp"
#include "projiql/errors.hpp"

namespace projiql::envs {

namespace {

constexpr int kRowStep[4] = {-1, 0, 1, 0};
constexpr int kColStep[4] = {0, 1, 0, -1};

}  // namespace

GridMaze build_gridmaze(std::string_view layout, const GridMazeOptions& options) {
  return build_gridmaze(Layout::parse(layout), options);
}

GridMaze build_gridmaze(const Layout& layout, const GridMazeOptions& options) {
  if (!(options.gamma > 0.0 && options.gamma < 1.0)) throw ValidationError("gridmaze gamma must lie in (0,1)");
  if (!(options.slip >= 0.0 && options.slip <= 1.0)) throw ValidationError("gridmaze slip must lie in [0,1]");
  if (options.max_steps < 1) throw ValidationError("gridmaze max_steps must be positive");

  GridMaze maze;
  maze.layout = layout;
  maze.max_steps = options.max_steps;
  maze.reward_shift = options.reward_shift;
  maze.state_of.assign(static_cast<std::size_t>(layout.rows * layout.cols), -1);
  maze.cells = layout.free_cells();
  for (std::size_t s = 0; s < maze.cells.size(); ++s) {
    const Cell c = maze.cells[s];
    maze.state_of[static_cast<std::size_t>(c.row * layout.cols + c.col)] = static_cast<int>(s);
  }
  auto state_at = [&](Cell c) { return static_cast<std::size_t>(maze.state_of[static_cast<std::size_t>(c.row * layout.cols + c.col)]); };
  maze.start_state = state_at(layout.start);
  maze.goal_state = state_at(layout.goal);

  const std::size_t n = maze.cells.size();
  TabularMDP mdp(n, 4, options.gamma);
  std::fill(mdp.initial_distribution.begin(), mdp.initial_distribution.end(), 0.0);
  mdp.initial_distribution[maze.start_state] = 1.0;

  for (std::size_t s = 0; s < n; ++s) {
    if (s == maze.goal_state) {
      for (std::size_t a = 0; a < 4; ++a) mdp.p(s, a, s) = 1.0;
      continue;
    }
    const Cell c = maze.cells[s];
    std::size_t moved[4];
    for (int k = 0; k < 4; ++k) {
      const Cell next{c.row + kRowStep[k], c.col + kColStep[k]};
      moved[k] = layout.is_wall(next) ? s : state_at(next);
    }
    for (std::size_t a = 0; a < 4; ++a) {
      mdp.p(s, a, moved[a]) += 1.0 - options.slip;
      for (int k = 0; k < 4; ++k) mdp.p(s, a, moved[k]) += options.slip / 4.0;
      mdp.r(s, a) = mdp.p(s, a, maze.goal_state) + options.reward_shift;
    }
  }
  mdp.validate();
  maze.mdp = std::move(mdp);
  return maze;
}

}  // namespace projiql::envs
