#pragma once

// Offline dataset container: columnar transitions, seeded minibatches, reward shaping,
// and a checksummed binary file format.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "projiql/envs.hpp"

namespace projiql::data {

/// Index columns hold a single integer-valued entry (tabular state or discrete action).
enum class ColumnKind { index, vector };

std::string to_string(ColumnKind kind);
ColumnKind column_kind_from_string(const std::string& name);

struct DatasetMetadata {
  std::string env_name;
  ColumnKind state_kind = ColumnKind::vector;
  /// Raw columns per state (1 for index states).
  std::size_t state_dim = 0;
  /// Width of the network encoding (number of states for index states).
  std::size_t observation_dim = 0;
  ColumnKind action_kind = ColumnKind::vector;
  /// Number of actions (index) or action components (vector).
  std::size_t action_dim = 0;
  std::uint64_t seed = 0;
  std::string behavior;
  double reward_shift = 0.0;
  /// Free-form provenance (layout, gamma, episode count, ...).
  std::map<std::string, std::string> extra;

  std::size_t action_cols() const { return action_kind == ColumnKind::index ? 1 : action_dim; }

  friend bool operator==(const DatasetMetadata&, const DatasetMetadata&) = default;
};

/// Metadata describing transitions produced in `env`.
DatasetMetadata describe(const envs::Environment& env);

struct OfflineDataset {
  DatasetMetadata meta;
  std::vector<double> states;       // size() x state_dim
  std::vector<double> actions;      // size() x action_cols()
  std::vector<double> rewards;
  std::vector<double> next_states;  // size() x state_dim
  std::vector<double> dones;        // 0 or 1

  std::size_t size() const { return rewards.size(); }
  bool empty() const { return rewards.empty(); }
  /// Throws ValidationError if column lengths disagree with each other or with the metadata.
  void validate() const;

  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;
};

/// Rows gathered for one update step; same column layout as the dataset.
struct Batch {
  std::vector<std::size_t> rows;
  std::vector<double> states;
  std::vector<double> actions;
  std::vector<double> rewards;
  std::vector<double> next_states;
  std::vector<double> dones;

  std::size_t size() const { return rows.size(); }
};

/// Flattens trajectories in order. Dimensions are taken from `meta` and every step must match.
OfflineDataset from_trajectories(const std::vector<envs::Trajectory>& trajectories, DatasetMetadata meta);

/// Rollout of a behavior policy followed by from_trajectories, with provenance filled in.
OfflineDataset generate(const envs::Environment& env, const envs::BehaviorPolicySpec& behavior, std::uint64_t seed,
                        std::size_t episodes, std::size_t threads = 1);

/// Uniform draws with replacement from the stream keyed by (seed, step_index).
std::vector<std::size_t> sample_indices(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed,
                                        std::uint64_t step_index);
Batch sample_batch(const OfflineDataset& dataset, std::size_t batch_size, std::uint64_t seed,
                   std::uint64_t step_index);
Batch gather(const OfflineDataset& dataset, const std::vector<std::size_t>& rows);

OfflineDataset reward_shift(OfflineDataset dataset, double delta);

/// Generic checksummed container of string metadata and named float64 columns.
struct Container {
  std::vector<std::pair<std::string, std::string>> metadata;
  std::vector<std::pair<std::string, std::vector<double>>> columns;

  const std::string& get(const std::string& key) const;
  const std::vector<double>& column(const std::string& name) const;
};

inline constexpr std::uint32_t kFormatVersion = 1;

void write_container(const Container& c, const std::string& path);
/// Throws VersionError, TruncatedError or ChecksumError on the corresponding failure.
Container read_container(const std::string& path);

void save(const OfflineDataset& dataset, const std::string& path);
OfflineDataset load(const std::string& path);
/// One transition per row: s*, a*, reward, s'*, done.
void export_csv(const OfflineDataset& dataset, const std::string& path);

/// Per-state visit frequencies of an index-state dataset (the empirical state distribution).
std::vector<double> state_frequencies(const OfflineDataset& dataset);

}  // namespace projiql::data
