#include <atomic>
#include <cmath>
#include <thread>

#include "projiql/envs.hpp"
#include "projiql/errors.hpp"

namespace projiql::envs {

Environment::Environment(GridMaze maze) : env_(std::move(maze)) {}

Environment::Environment(PointMazeEnv maze) : env_(std::move(maze)) { point().validate(); }

std::string Environment::name() const { return is_grid() ? "gridmaze" : "pointmaze"; }

ActionKind Environment::action_kind() const { return is_grid() ? ActionKind::discrete : ActionKind::continuous; }

std::size_t Environment::action_dim() const { return is_grid() ? grid().mdp.n_actions : 2; }

std::size_t Environment::state_dim() const { return is_grid() ? 1 : 2; }

std::size_t Environment::observation_dim() const { return is_grid() ? grid().mdp.n_states : 2; }

int Environment::max_steps() const { return is_grid() ? grid().max_steps : point().max_steps; }

double Environment::gamma_hint() const { return is_grid() ? grid().mdp.gamma : 0.99; }

std::vector<double> Environment::reset(StreamRng& rng) const {
  if (is_grid()) return {static_cast<double>(grid().mdp.sample_initial(rng))};
  const PointMazeEnv& env = point();
  if (!env.random_start) {
    const Vec2 p = env.start_position();
    return {p.x, p.y};
  }
  // Segments start anywhere except the start and goal cells, so no episode is a full start-to-goal run.
  std::vector<Cell> cells;
  for (const Cell& c : env.layout.free_cells())
    if (c != env.layout.start && c != env.layout.goal) cells.push_back(c);
  if (cells.empty()) {
    const Vec2 p = env.start_position();
    return {p.x, p.y};
  }
  const Cell c = cells[rng.index(cells.size())];
  return {c.col + 0.5, c.row + 0.5};
}

StepOutcome Environment::step(const std::vector<double>& state, const std::vector<double>& action, int elapsed,
                              StreamRng& rng) const {
  StepOutcome out;
  if (is_grid()) {
    const GridMaze& maze = grid();
    if (state.size() != 1 || action.size() != 1) throw ContractError("gridmaze expects scalar state and action indices");
    const double sd = state[0];
    const double ad = action[0];
    if (!(sd >= 0 && sd < static_cast<double>(maze.mdp.n_states)) || sd != std::floor(sd))
      throw ContractError("gridmaze state index out of range");
    if (!(ad >= 0 && ad < static_cast<double>(maze.mdp.n_actions)) || ad != std::floor(ad))
      throw ContractError("gridmaze action index out of range");
    const auto s = static_cast<std::size_t>(sd);
    const auto a = static_cast<std::size_t>(ad);
    const std::size_t next = maze.mdp.sample_next(s, a, rng);
    const bool entered = next == maze.goal_state && s != maze.goal_state;
    out.next_state = {static_cast<double>(next)};
    out.reward = (entered ? 1.0 : 0.0) + (s == maze.goal_state ? 0.0 : maze.reward_shift);
    out.terminal = next == maze.goal_state;
    out.truncated = !out.terminal && elapsed + 1 >= maze.max_steps;
    return out;
  }
  if (state.size() != 2 || action.size() != 2) throw ContractError("point maze expects 2-D state and action");
  const PointStep st = step_pointmaze(point(), {state[0], state[1]}, {action[0], action[1]}, elapsed);
  out.next_state = {st.next.x, st.next.y};
  out.reward = st.reward;
  out.terminal = st.terminal;
  out.truncated = st.truncated;
  return out;
}

bool operator==(const TrajectoryStep& a, const TrajectoryStep& b) {
  return a.state == b.state && a.action == b.action && a.reward == b.reward && a.next_state == b.next_state &&
         a.done == b.done;
}

bool operator==(const Trajectory& a, const Trajectory& b) {
  return a.steps == b.steps && a.success == b.success && a.total_return == b.total_return;
}

namespace {

Trajectory run_episode(const Environment& env, const RolloutPolicy& policy, std::uint64_t seed, std::size_t episode) {
  StreamRng rng(seed, episode);
  std::vector<double> state = env.reset(rng);
  auto pol = policy.clone();
  pol->reset(state, rng);
  Trajectory traj;
  for (int t = 0; t < env.max_steps(); ++t) {
    std::vector<double> action = pol->act(state, rng);
    StepOutcome out = env.step(state, action, t, rng);
    traj.total_return += out.reward;
    traj.steps.push_back({state, std::move(action), out.reward, out.next_state, out.terminal});
    state = std::move(out.next_state);
    if (out.terminal) {
      traj.success = true;
      break;
    }
    if (out.truncated) break;
  }
  return traj;
}

}  // namespace

std::vector<Trajectory> rollout(const Environment& env, const RolloutPolicy& policy, std::uint64_t seed,
                                std::size_t episodes, std::size_t threads) {
  if (policy.action_kind() != env.action_kind() || policy.action_dim() != env.action_dim())
    throw ContractError("policy action space does not match the " + env.name() + " action space");
  std::vector<Trajectory> out(episodes);
  threads = std::max<std::size_t>(1, std::min(threads, episodes));
  if (threads == 1) {
    for (std::size_t i = 0; i < episodes; ++i) out[i] = run_episode(env, policy, seed, i);
    return out;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(threads);
  std::vector<std::thread> workers;
  for (std::size_t w = 0; w < threads; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next++; i < episodes; i = next++) out[i] = run_episode(env, policy, seed, i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  return out;
}

}  // namespace projiql::envs
