#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"

namespace projiql::cli {

namespace {

std::mutex log_mutex;

void note(const CommandOptions& options, const std::string& line) {
  if (options.log == nullptr) return;
  const std::lock_guard lock(log_mutex);
  *options.log << line << std::endl;
}

std::string fmt(double v) {
  std::ostringstream s;
  s << std::setprecision(17) << v;
  return s.str();
}

// Claims `dir` for a new run. An existing config snapshot means a previous run lives there.
void claim_directory(const fs::path& dir, const CommandOptions& options) {
  if (fs::exists(dir / "config.ini") && !options.force)
    throw ConfigError(dir.string() + " already holds a run; pass --force to overwrite");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
}

data::OfflineDataset load_dataset(const RunConfig& config) {
  const fs::path path = dataset_path(config);
  if (!fs::exists(path)) throw ConfigError("dataset " + path.string() + " does not exist; run gen-data first");
  return data::load(path.string());
}

std::string file_checksum(const fs::path& path) {
  // The container stores its own checksum in the trailing 8 bytes.
  std::ifstream in(path, std::ios::binary);
  in.seekg(-8, std::ios::end);
  unsigned char bytes[8] = {};
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw FormatError("cannot read checksum of " + path.string());
  std::ostringstream s;
  for (int i = 7; i >= 0; --i) s << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(bytes[i]);
  return s.str();
}

struct Job {
  learn::LearnerConfig learner;
  std::uint64_t seed = 0;
  fs::path dir;
  std::string label;
};

struct JobResult {
  SeedRun run;
  std::string bc_checksum;
};

JobResult run_job(const Job& job, const data::OfflineDataset& dataset, const envs::Environment& eval_env,
                  const CommandOptions& options) {
  fs::create_directories(job.dir);
  std::size_t last_logged = 0;
  learn::TrainResult r = learn::train(dataset, job.learner, job.seed, &eval_env, [&](const learn::MetricsRow& m) {
    if (m.eval_success && m.step != last_logged) {
      last_logged = m.step;
      std::ostringstream line;
      line << job.label << " step " << m.step << " tau_proj " << std::fixed << std::setprecision(4) << m.tau_proj
           << " return " << *m.eval_return << " success " << *m.eval_success;
      note(options, line.str());
    }
  });
  learn::write_metrics_csv(r.metrics, (job.dir / "metrics.csv").string());
  learn::save_state(r.state, job.learner, (job.dir / "checkpoint.pqc").string());
  const fs::path bc_path = job.dir / "behavior.pqc";
  data::write_container(pol::policy_container(r.state.behavior, "behavior."), bc_path.string());

  JobResult out;
  out.run.seed = job.seed;
  out.run.dir = job.dir;
  out.run.final_eval = r.final_eval.value_or(learn::EvalResult{});
  out.run.metrics = std::move(r.metrics);
  out.bc_checksum = file_checksum(bc_path);

  nlohmann::ordered_json j;
  j["seed"] = job.seed;
  j["steps"] = job.learner.steps;
  j["success_rate"] = out.run.final_eval.success_rate;
  j["mean_return"] = out.run.final_eval.mean_return;
  j["std_return"] = out.run.final_eval.std_return;
  j["mean_discounted_return"] = out.run.final_eval.mean_discounted_return;
  j["behavior_checksum"] = out.bc_checksum;
  std::ofstream(job.dir / "eval.json") << j.dump(2) << "\n";
  return out;
}

// Members run on `threads` workers; results keep job order, so output never depends on scheduling.
std::vector<JobResult> run_jobs(const std::vector<Job>& jobs, const data::OfflineDataset& dataset,
                                const envs::Environment& eval_env, std::size_t threads,
                                const CommandOptions& options) {
  std::vector<JobResult> results(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        results[i] = run_job(jobs[i], dataset, eval_env, options);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return results;
}

std::string seed_dir(std::uint64_t seed) { return "seed_" + std::to_string(seed); }

std::string tau_dir(double tau) {
  std::ostringstream s;
  s << "tau_" << tau;
  return s.str();
}

}  // namespace

// ---------------------------------------------------------------------------

fs::path cmd_gen_data(const RunConfig& config, const CommandOptions& options) {
  const envs::Environment env = data_environment(config);
  const envs::BehaviorPolicySpec spec = behavior_spec(config);
  const fs::path path = dataset_path(config);
  if (fs::exists(path) && !options.force)
    throw ConfigError(path.string() + " exists; pass --force to overwrite");
  fs::create_directories(path.parent_path());

  data::OfflineDataset ds =
      data::generate(env, spec, config.seed("data.seed"), config.count("data.episodes"), config.count("run.threads"));
  ds = data::reward_shift(std::move(ds), config.number("data.reward_shift"));
  data::save(ds, path.string());
  note(options, "wrote " + std::to_string(ds.size()) + " transitions to " + path.string() +
                    " (behavior success " + ds.meta.extra.at("behavior_success_rate") + ")");
  return path;
}

std::vector<SeedRun> cmd_train(const RunConfig& config, const CommandOptions& options) {
  const learn::LearnerConfig learner = learner_config(config);
  const data::OfflineDataset dataset = load_dataset(config);
  const envs::Environment eval_env = eval_environment(config);
  const fs::path dir = output_root(config) / config.get("run.name");
  claim_directory(dir, options);
  config.save(dir / "config.ini");

  std::vector<Job> jobs;
  for (std::uint64_t seed : config.seeds())
    jobs.push_back({learner, seed, dir / seed_dir(seed), config.get("run.name") + "/" + seed_dir(seed)});
  std::vector<SeedRun> runs;
  for (auto& r : run_jobs(jobs, dataset, eval_env, config.count("run.threads"), options)) runs.push_back(std::move(r.run));
  return runs;
}

std::vector<TauSweepRow> cmd_sweep_tau(const RunConfig& config, const CommandOptions& options) {
  const learn::LearnerConfig base = learner_config(config);
  if (base.mode != learn::Mode::iql) throw ConfigError("sweep-tau needs learner.mode = iql");
  const data::OfflineDataset dataset = load_dataset(config);
  const envs::Environment eval_env = eval_environment(config);
  const fs::path dir = output_root(config) / config.get("run.name");
  claim_directory(dir, options);
  config.save(dir / "config.ini");

  std::vector<Job> jobs;
  for (double tau : config.numbers("sweep.taus")) {
    learn::LearnerConfig c = base;
    c.expectile_tau = tau;
    try {
      c.validate();
    } catch (const ValidationError& e) {
      throw ConfigError(std::string("sweep.taus: ") + e.what());
    }
    for (std::uint64_t seed : config.seeds())
      jobs.push_back({c, seed, dir / tau_dir(tau) / seed_dir(seed), tau_dir(tau) + "/" + seed_dir(seed)});
  }
  const auto results = run_jobs(jobs, dataset, eval_env, config.count("run.threads"), options);

  std::vector<TauSweepRow> rows;
  std::ofstream csv(dir / "sweep_tau.csv");
  csv << "tau,seed,return,success\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    const auto& e = results[i].run.final_eval;
    rows.push_back({jobs[i].learner.expectile_tau, jobs[i].seed, e.mean_return, e.success_rate});
    csv << fmt(jobs[i].learner.expectile_tau) << "," << jobs[i].seed << "," << fmt(e.mean_return) << ","
        << fmt(e.success_rate) << "\n";
  }
  return rows;
}

std::vector<BatchAblationRow> cmd_ablate_batch(const RunConfig& config, const CommandOptions& options) {
  const learn::LearnerConfig base = learner_config(config);
  if (base.mode != learn::Mode::proj_iql) throw ConfigError("ablate-batch needs learner.mode = proj-iql");
  const std::size_t window = config.count("sweep.window");
  if (window == 0) throw ConfigError("sweep.window must be positive");
  const data::OfflineDataset dataset = load_dataset(config);
  const envs::Environment eval_env = eval_environment(config);
  const fs::path dir = output_root(config) / config.get("run.name");
  claim_directory(dir, options);
  config.save(dir / "config.ini");

  std::vector<Job> jobs;
  for (double b : config.numbers("sweep.batches")) {
    learn::LearnerConfig c = base;
    c.batch_size = static_cast<std::size_t>(b);
    if (c.batch_size == 0) throw ConfigError("sweep.batches entries must be positive");
    const std::string name = "batch_" + std::to_string(c.batch_size);
    for (std::uint64_t seed : config.seeds()) jobs.push_back({c, seed, dir / name / seed_dir(seed), name + "/" + seed_dir(seed)});
  }
  const auto results = run_jobs(jobs, dataset, eval_env, config.count("run.threads"), options);

  std::vector<BatchAblationRow> rows;
  std::ofstream csv(dir / "ablate_batch.csv");
  csv << "batch,seed,return,success,tau_window_std,high_variance,bc_checksum\n";
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    std::vector<double> tau;
    for (const auto& m : results[i].run.metrics) tau.push_back(m.tau_proj);
    BatchAblationRow row;
    row.batch_size = jobs[i].learner.batch_size;
    row.seed = jobs[i].seed;
    row.mean_return = results[i].run.final_eval.mean_return;
    row.success_rate = results[i].run.final_eval.success_rate;
    row.tau_window_std = window_std(tau, std::min(window, std::max<std::size_t>(tau.size(), 1)));
    // Below the smallest studied batch the per-batch projection is dominated by sampling noise.
    row.high_variance = row.batch_size < 16;
    row.bc_checksum = results[i].bc_checksum;
    csv << row.batch_size << "," << row.seed << "," << fmt(row.mean_return) << "," << fmt(row.success_rate) << ","
        << fmt(row.tau_window_std) << "," << (row.high_variance ? 1 : 0) << "," << row.bc_checksum << "\n";
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------

std::vector<double> window_means(const std::vector<double>& series, std::size_t window) {
  if (window == 0) throw ValidationError("window must be positive");
  std::vector<double> out;
  for (std::size_t start = 0; start + window <= series.size(); start += window) {
    const auto b = series.begin() + static_cast<std::ptrdiff_t>(start);
    out.push_back(std::accumulate(b, b + static_cast<std::ptrdiff_t>(window), 0.0) / static_cast<double>(window));
  }
  return out;
}

double window_std(const std::vector<double>& series, std::size_t window) {
  if (window == 0) throw ValidationError("window must be positive");
  double total = 0.0;
  std::size_t blocks = 0;
  for (std::size_t start = 0; start + window <= series.size(); start += window, ++blocks) {
    double mean = 0.0;
    for (std::size_t i = start; i < start + window; ++i) mean += series[i];
    mean /= static_cast<double>(window);
    double ss = 0.0;
    for (std::size_t i = start; i < start + window; ++i) ss += (series[i] - mean) * (series[i] - mean);
    total += std::sqrt(ss / static_cast<double>(window));
  }
  if (blocks == 0) throw ValidationError("series shorter than one window");
  return total / static_cast<double>(blocks);
}

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> order(x.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && x[order[j + 1]] == x[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j);
    for (std::size_t k = i; k <= j; ++k) r[order[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeError("spearman: length mismatch");
  if (x.size() < 2) throw ValidationError("spearman needs at least two points");
  const auto rx = ranks(x);
  const auto ry = ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace projiql::cli
