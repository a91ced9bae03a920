#include <cmath>

#include "projiql/datasets.hpp"
#include "projiql/errors.hpp"

namespace projiql::data {

std::string to_string(ColumnKind kind) { return kind == ColumnKind::index ? "index" : "vector"; }

ColumnKind column_kind_from_string(const std::string& name) {
  if (name == "index") return ColumnKind::index;
  if (name == "vector") return ColumnKind::vector;
  throw ValidationError("unknown column kind '" + name + "'");
}

DatasetMetadata describe(const envs::Environment& env) {
  DatasetMetadata m;
  m.env_name = env.name();
  m.state_kind = env.is_grid() ? ColumnKind::index : ColumnKind::vector;
  m.state_dim = env.state_dim();
  m.observation_dim = env.observation_dim();
  m.action_kind = env.action_kind() == envs::ActionKind::discrete ? ColumnKind::index : ColumnKind::vector;
  m.action_dim = env.action_dim();
  if (env.is_grid()) {
    m.extra["layout"] = env.grid().layout.to_string();
    m.extra["gamma"] = std::to_string(env.grid().mdp.gamma);
    m.extra["max_steps"] = std::to_string(env.grid().max_steps);
  } else {
    const auto& p = env.point();
    m.extra["layout"] = p.layout.to_string();
    m.extra["goal_radius"] = std::to_string(p.goal_radius);
    m.extra["action_bound"] = std::to_string(p.action_bound);
    m.extra["max_steps"] = std::to_string(p.max_steps);
  }
  m.extra["score"] = "success rate and discounted return (no normalized score for desk environments)";
  return m;
}

void OfflineDataset::validate() const {
  const std::size_t n = rewards.size();
  if (meta.state_dim == 0 || meta.action_dim == 0) throw ValidationError("dataset metadata has zero dimension");
  if (meta.state_kind == ColumnKind::index && meta.state_dim != 1)
    throw ValidationError("index states must have state_dim 1");
  if (states.size() != n * meta.state_dim || next_states.size() != n * meta.state_dim)
    throw ValidationError("state columns do not match state_dim");
  if (actions.size() != n * meta.action_cols()) throw ValidationError("action column does not match action_dim");
  if (dones.size() != n) throw ValidationError("done column length mismatch");
  if (meta.state_kind == ColumnKind::index) {
    for (double s : states)
      if (s < 0 || s >= static_cast<double>(meta.observation_dim) || s != std::floor(s))
        throw ValidationError("state index out of range");
  }
  if (meta.action_kind == ColumnKind::index) {
    for (double a : actions)
      if (a < 0 || a >= static_cast<double>(meta.action_dim) || a != std::floor(a))
        throw ValidationError("action index out of range");
  }
}

OfflineDataset from_trajectories(const std::vector<envs::Trajectory>& trajectories, DatasetMetadata meta) {
  OfflineDataset out;
  out.meta = std::move(meta);
  const std::size_t sd = out.meta.state_dim;
  const std::size_t ad = out.meta.action_cols();
  for (const auto& traj : trajectories) {
    for (const auto& step : traj.steps) {
      if (step.state.size() != sd || step.next_state.size() != sd)
        throw ValidationError("trajectory state dimension " + std::to_string(step.state.size()) +
                              " does not match " + std::to_string(sd));
      if (step.action.size() != ad)
        throw ValidationError("trajectory action dimension " + std::to_string(step.action.size()) +
                              " does not match " + std::to_string(ad));
      out.states.insert(out.states.end(), step.state.begin(), step.state.end());
      out.actions.insert(out.actions.end(), step.action.begin(), step.action.end());
      out.rewards.push_back(step.reward);
      out.next_states.insert(out.next_states.end(), step.next_state.begin(), step.next_state.end());
      out.dones.push_back(step.done ? 1.0 : 0.0);
    }
  }
  if (out.empty()) throw ValidationError("no transitions in trajectories");
  out.validate();
  return out;
}

OfflineDataset generate(const envs::Environment& env, const envs::BehaviorPolicySpec& behavior, std::uint64_t seed,
                        std::size_t episodes, std::size_t threads) {
  const auto policy = envs::make_behavior_policy(env, behavior);
  const auto trajectories = envs::rollout(env, *policy, seed, episodes, threads);
  DatasetMetadata meta = describe(env);
  meta.seed = seed;
  meta.behavior = envs::BehaviorPolicySpec::kind_name(behavior.kind) + " epsilon=" + std::to_string(behavior.epsilon) +
                  " noise=" + std::to_string(behavior.noise);
  meta.extra["episodes"] = std::to_string(episodes);
  std::size_t successes = 0;
  for (const auto& t : trajectories) successes += t.success ? 1 : 0;
  meta.extra["behavior_success_rate"] = std::to_string(static_cast<double>(successes) / static_cast<double>(episodes));
  return from_trajectories(trajectories, std::move(meta));
}

std::vector<std::size_t> sample_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                        std::uint64_t step_index) {
  if (dataset_size == 0) throw ValidationError("cannot sample from an empty dataset");
  if (batch_size == 0) throw ValidationError("batch size must be at least 1");
  StreamRng rng(mix64(seed ^ 0x62617463685f7331ULL), step_index);
  std::vector<std::size_t> rows(batch_size);
  for (auto& r : rows) r = rng.index(dataset_size);
  return rows;
}

Batch gather(const OfflineDataset& d, const std::vector<std::size_t>& rows) {
  Batch b;
  b.rows = rows;
  const std::size_t sd = d.meta.state_dim;
  const std::size_t ad = d.meta.action_cols();
  b.states.reserve(rows.size() * sd);
  b.next_states.reserve(rows.size() * sd);
  b.actions.reserve(rows.size() * ad);
  for (std::size_t r : rows) {
    if (r >= d.size()) throw ValidationError("row index out of range");
    b.states.insert(b.states.end(), d.states.begin() + static_cast<std::ptrdiff_t>(r * sd),
                    d.states.begin() + static_cast<std::ptrdiff_t>((r + 1) * sd));
    b.next_states.insert(b.next_states.end(), d.next_states.begin() + static_cast<std::ptrdiff_t>(r * sd),
                         d.next_states.begin() + static_cast<std::ptrdiff_t>((r + 1) * sd));
    b.actions.insert(b.actions.end(), d.actions.begin() + static_cast<std::ptrdiff_t>(r * ad),
                     d.actions.begin() + static_cast<std::ptrdiff_t>((r + 1) * ad));
    b.rewards.push_back(d.rewards[r]);
    b.dones.push_back(d.dones[r]);
  }
  return b;
}

Batch sample_batch(const OfflineDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                   std::uint64_t step_index) {
  return gather(dataset, sample_indices(dataset.size(), batch_size, seed, step_index));
}

OfflineDataset reward_shift(OfflineDataset dataset, double delta) {
  if (delta == 0.0) return dataset;
  for (double& r : dataset.rewards) r += delta;
  dataset.meta.reward_shift += delta;
  return dataset;
}

std::vector<double> state_frequencies(const OfflineDataset& dataset) {
  if (dataset.meta.state_kind != ColumnKind::index) throw ContractError("state frequencies need index states");
  if (dataset.empty()) throw ValidationError("empty dataset");
  std::vector<double> freq(dataset.meta.observation_dim, 0.0);
  for (double s : dataset.states) freq[static_cast<std::size_t>(s)] += 1.0;
  for (double& f : freq) f /= static_cast<double>(dataset.size());
  return freq;
}

}  // namespace projiql::data
