#pragma once

// Configuration and command implementations behind the `projiql` executable.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "projiql/datasets.hpp"
#include "projiql/envs.hpp"
#include "projiql/learner.hpp"
#include "projiql/theory.hpp"

namespace projiql::cli {

namespace fs = std::filesystem;

/// `key = value` lines under `[section]` headers. Every key must be in the schema; all keys
/// carry a default, so a resolved config is always complete.
class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig load(const fs::path& path);
  static RunConfig parse(const std::string& text, const std::string& origin = "<string>");

  /// "section.key=value"; unknown keys and malformed values throw ConfigError.
  void set(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  double number(const std::string& key) const;
  std::size_t count(const std::string& key) const;
  std::uint64_t seed(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<std::uint64_t> seeds() const;

  /// Canonical text: sections and keys in schema order.
  std::string to_string() const;
  void save(const fs::path& path) const;

  /// Directory relative paths in the config resolve against (the config file's directory, or cwd).
  fs::path base_dir;

  friend bool operator==(const RunConfig& a, const RunConfig& b) { return a.values_ == b.values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Every "section.key" the schema knows, in canonical order.
const std::vector<std::string>& known_keys();

// ---------------------------------------------------------------------------
// Resolution

/// $PROJIQL_OUT if set, otherwise run.out (relative to base_dir).
fs::path output_root(const RunConfig& config);
fs::path dataset_path(const RunConfig& config);
fs::path resolve(const RunConfig& config, const std::string& path);

/// Environment used to generate data (segment length and random starts from [data]).
envs::Environment data_environment(const RunConfig& config);
/// Environment used for evaluation: starts at the start cell with the [env] horizon.
envs::Environment eval_environment(const RunConfig& config);
envs::BehaviorPolicySpec behavior_spec(const RunConfig& config);
learn::LearnerConfig learner_config(const RunConfig& config);

// ---------------------------------------------------------------------------
// Commands

struct CommandOptions {
  bool force = false;
  std::ostream* log = nullptr;  // progress lines; nullptr is silent
};

/// Writes the dataset and returns its path. Deterministic per config.
fs::path cmd_gen_data(const RunConfig& config, const CommandOptions& options = {});

struct SeedRun {
  std::uint64_t seed = 0;
  fs::path dir;
  learn::EvalResult final_eval;
  std::vector<learn::MetricsRow> metrics;
};

/// Trains one run per seed under <root>/<run.name>/seed_<k>, writing config.ini first.
std::vector<SeedRun> cmd_train(const RunConfig& config, const CommandOptions& options = {});

struct TauSweepRow {
  double tau = 0.0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
};
/// Requires learner.mode = iql. Writes sweep_tau.csv.
std::vector<TauSweepRow> cmd_sweep_tau(const RunConfig& config, const CommandOptions& options = {});

struct BatchAblationRow {
  std::size_t batch_size = 0;
  std::uint64_t seed = 0;
  double mean_return = 0.0;
  double success_rate = 0.0;
  double tau_window_std = 0.0;
  bool high_variance = false;
  std::string bc_checksum;
};
/// Requires learner.mode = proj-iql. Writes ablate_batch.csv.
std::vector<BatchAblationRow> cmd_ablate_batch(const RunConfig& config, const CommandOptions& options = {});

enum class Band { std, minmax };
/// Seed-mean line with a shaded band per metric column. Pure function of the CSV contents.
std::string render_svg(const std::vector<std::vector<learn::MetricsRow>>& runs, const std::vector<std::string>& labels,
                       Band band = Band::std);
void cmd_plot(const std::vector<fs::path>& inputs, const fs::path& output, Band band = Band::std);

struct VerifyOptions {
  /// Check names whose tolerance is negated, as a harness self-test.
  std::vector<std::string> inject_faults;
  std::uint64_t seed = 20240601;
};
/// Runs the theory suite, writes one JSON object per line, returns 0 iff every gating check passes.
int cmd_verify(std::ostream& out, const VerifyOptions& options = {});
std::vector<theory::BoundReport> verify_suite(const VerifyOptions& options = {});
std::string to_json_line(const theory::BoundReport& report);

// ---------------------------------------------------------------------------
// Statistics shared by commands and the acceptance harness

/// Mean of each consecutive `window`-row block of tau_proj (a trailing partial block is dropped).
std::vector<double> window_means(const std::vector<double>& series, std::size_t window);
/// Mean over blocks of the within-block population standard deviation.
double window_std(const std::vector<double>& series, std::size_t window);
/// Rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace projiql::cli
