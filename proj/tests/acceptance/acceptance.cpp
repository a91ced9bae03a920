// Acceptance harness: one PASS/FAIL line per criterion, exit status 0 iff all pass.
//
// Criteria 9-12 share one point-maze dataset and the batch-256 runs; the shared training time is
// charged to every criterion that uses it.

#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"
#include "projiql/theory.hpp"

using namespace projiql;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Line {
  int id;
  std::string title;
  Outcome outcome;
  double seconds;
  double limit;
};

std::vector<Line> lines;
nlohmann::ordered_json summary = nlohmann::ordered_json::object();

void report(int id, const std::string& title, Outcome outcome, double seconds, double limit) {
  const bool ok = outcome.pass && seconds < limit;
  std::printf("[%s] criterion %2d  %-34s %s  (%.1fs, limit %.0fs)\n", ok ? "PASS" : "FAIL", id, title.c_str(),
              outcome.detail.c_str(), seconds, limit);
  std::fflush(stdout);
  lines.push_back({id, title, {ok, outcome.detail}, seconds, limit});
  summary[std::to_string(id)] = {{"title", title}, {"pass", ok}, {"detail", outcome.detail}, {"seconds", seconds},
                                 {"limit", limit}};
}

// Runs `body` and reports it; an exception is a failure carrying the message.
void criterion(int id, const std::string& title, double limit, const std::function<Outcome()>& body) {
  const auto t0 = Clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  report(id, title, o, seconds_since(t0), limit);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Outcome from_report(const theory::BoundReport& r) {
  std::ostringstream s;
  s << r.name << " trials=" << r.trials << " failures=" << r.failures << " worst_slack=" << r.slack;
  return {r.pass, s.str()};
}

// ---------------------------------------------------------------------------
// Point-maze runs shared by criteria 9-12

struct PointRuns {
  cli::RunConfig config;
  data::OfflineDataset dataset;
  std::map<std::size_t, std::vector<learn::TrainResult>> by_batch;  // batch -> one per seed
  std::map<std::size_t, double> train_seconds;                      // batch -> total seconds
  double data_seconds = 0.0;
};

PointRuns point_runs;

void train_batch(std::size_t batch) {
  if (point_runs.by_batch.count(batch)) return;
  learn::LearnerConfig lc = cli::learner_config(point_runs.config);
  lc.batch_size = batch;
  const envs::Environment eval_env = cli::eval_environment(point_runs.config);
  const auto t0 = Clock::now();
  const fs::path dir = cli::output_root(point_runs.config) / ("batch_" + std::to_string(batch));
  fs::create_directories(dir);
  for (std::uint64_t seed : point_runs.config.seeds()) {
    const auto ts = Clock::now();
    auto r = learn::train(point_runs.dataset, lc, seed, &eval_env);
    learn::write_metrics_csv(r.metrics, (dir / ("seed_" + std::to_string(seed) + ".csv")).string());
    std::printf("    batch %zu seed %llu: %.1fs, final success %.2f\n", batch, static_cast<unsigned long long>(seed),
                seconds_since(ts), r.final_eval ? r.final_eval->success_rate : -1.0);
    std::fflush(stdout);
    point_runs.by_batch[batch].push_back(std::move(r));
  }
  point_runs.train_seconds[batch] = seconds_since(t0);
}

std::vector<double> tau_series(const learn::TrainResult& r) {
  std::vector<double> out;
  out.reserve(r.metrics.size());
  for (const auto& m : r.metrics) out.push_back(m.tau_proj);
  return out;
}

}  // namespace

int main() {
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 128 << 20);

  const fs::path out_root = [] {
    if (const char* e = std::getenv("PROJIQL_ACCEPTANCE_OUT")) return fs::path(e);
    return fs::path(PROJIQL_BINARY_DIR) / "acceptance_out";
  }();
  fs::create_directories(out_root);
  const std::uint64_t seed = 20240601;

  // 1 -----------------------------------------------------------------------
  criterion(1, "expectile oracle", 1.0, [] {
    double worst = 0.0;
    for (double tau : {0.6, 0.75, 0.9})
      worst = std::max(worst, std::abs(expectile(WeightedSamples::uniform({0.0, 1.0}), ExpectileParam(tau)) - tau));
    return Outcome{worst <= 1e-9, fmt("max |E^tau{0,1} - tau| = %.3g (tol 1e-9)", worst)};
  });

  // 2 -----------------------------------------------------------------------
  criterion(2, "lemma 1 sweep", 30.0, [&] { return from_report(theory::sweep_lemma1(200, stream_key(seed, 1))); });

  // 3 -----------------------------------------------------------------------
  criterion(3, "lemma 3 sweep", 10.0, [&] {
    const auto r = theory::sweep_lemma3(200, stream_key(seed, 3));
    Outcome o = from_report(r);
    if (auto it = r.detail.find("identity_residual"); it != r.detail.end())
      o.detail += " identity_residual(worst)=" + fmt("%.3g", it->second);
    return o;
  });

  // 4 -----------------------------------------------------------------------
  criterion(4, "theorem 2 on 5x5 gridmaze", 60.0, [] {
    envs::GridMazeOptions o;
    o.gamma = 0.9;
    o.slip = 0.1;
    const auto maze = envs::build_gridmaze("S.#..\n.....\n#.###\n..#..\n....G\n", o);
    const auto traj = theory::run_tabular_projiql(maze.mdp, 20, 1.0, CategoricalPolicy::uniform(maze.mdp.n_states, 4),
                                                  theory::tau_ramp(0.5, 0.9, 20));
    Outcome out = from_report(theory::check_theorem2(traj));
    out.pass = out.pass && traj.size() == 21;
    return out;
  });

  // 5 -----------------------------------------------------------------------
  criterion(5, "theorems 3 and 4 sweeps", 120.0, [&] {
    const auto t3 = theory::sweep_theorem3(100, stream_key(seed, 9));
    const auto t4 = theory::sweep_theorem4(100, stream_key(seed, 10));
    const auto t4mc = theory::sweep_theorem4(100, stream_key(seed, 11), 2000);
    Outcome o;
    o.pass = t3.pass && t4.pass && t4mc.pass;
    o.detail = "t3 " + std::to_string(t3.trials - t3.failures) + "/" + std::to_string(t3.trials) + ", t4 exact " +
               std::to_string(t4.trials - t4.failures) + "/" + std::to_string(t4.trials) + ", t4 mc(N=2000) " +
               std::to_string(t4mc.trials - t4mc.failures) + "/" + std::to_string(t4mc.trials);
    return o;
  });

  // 6 -----------------------------------------------------------------------
  criterion(6, "theorem 1 equivalence", 10.0, [&] {
    const CategoricalPolicy beta = random_policy(6, 3, stream_key(seed, 41));
    const TabularMDP mdp = random_mdp(6, 3, 0.9, stream_key(seed, 42));
    const auto values = expectile_value_iteration(mdp, beta, TauSchedule(0.7));
    const auto same = theory::value_loss_forms(beta, beta, values.q, values.v);
    const double same_gap = std::abs(same.dataset_form - same.policy_form);
    const CategoricalPolicy phi = theory::perturb_policy(beta, 1e-4, stream_key(seed, 43));
    const auto near = theory::check_theorem1_equivalence(beta, phi, values.q, values.v);
    std::ostringstream s;
    s << "identical gap=" << same_gap << " (tol 1e-12); KL=" << near.detail.at("max_kl") << " gap=" << near.lhs
      << " budget=" << near.rhs;
    return Outcome{same_gap <= 1e-12 && near.pass, s.str()};
  });

  // 7 -----------------------------------------------------------------------
  criterion(7, "lemma 2 KL ball", 30.0, [&] {
    const TabularMDP mdp = random_mdp(6, 3, 0.9, stream_key(seed, 5));
    return from_report(theory::check_lemma2(mdp, random_policy(6, 3, stream_key(seed, 6)), 0.01, 100, stream_key(seed, 7)));
  });

  // 8 -----------------------------------------------------------------------
  criterion(8, "gradient suite", 30.0, [] {
    // 4-sample batches through real networks; every loss is differentiated w.r.t. its trainable leaves.
    const std::size_t n = 4;
    StreamRng rng(8, 8);
    nn::Tensor obs({n, 2});
    for (double& v : obs.data()) v = rng.uniform(-1, 1);
    nn::Tensor act({n, 2});
    for (double& v : act.data()) v = rng.uniform(-0.9, 0.9);
    nn::Tensor qin({n, 4});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        qin.data()[i * 4 + j] = obs.data()[i * 2 + j];
        qin.data()[i * 4 + 2 + j] = act.data()[i * 2 + j];
      }
    auto column = [&](double lo, double hi) {
      std::vector<double> v(n);
      for (double& x : v) x = rng.uniform(lo, hi);
      return nn::Tensor({n, 1}, v);
    };
    const nn::Tensor q_hat = column(-1, 1), rewards = column(-1, 0), dones({n, 1}, {0, 1, 0, 0});
    const nn::Tensor v_next = column(-1, 1), log_pi_bar = column(-2, 0.5), log_beta = column(-2, 0.5);
    const nn::Tensor q_adv = column(-1, 1), v_adv = column(-1, 1);
    const std::vector<double> beta_d = {0.3, 0.8, 1.4, 0.6}, phi_d = {0.5, 0.7, 1.1, 0.9};
    const double tau = learn::tau_proj(beta_d, phi_d).batch_value;

    const auto value_net = nn::make_mlp(std::vector<std::size_t>{2, 6, 1}, nn::Activation::relu, 81);
    const auto q_net = nn::make_mlp(std::vector<std::size_t>{4, 6, 1}, nn::Activation::relu, 82);
    pol::PolicyConfig pc;
    pc.observation_dim = 2;
    pc.action_dim = 2;
    pc.hidden = {6};
    pc.activation = nn::Activation::tanh;
    const pol::Policy policy(pc, 83);
    learn::LearnerConfig lc;

    auto params_of = [](const nn::MlpParams& p) {
      std::vector<nn::Tensor> out;
      for (const nn::Tensor* t : p.tensors()) out.push_back(*t);
      return out;
    };
    auto bind_mlp = [](std::span<const nn::Var> v) {
      nn::MlpBinding b;
      for (std::size_t i = 0; i + 1 < v.size(); i += 2) {
        b.weights.push_back(v[i]);
        b.biases.push_back(v[i + 1]);
      }
      return b;
    };
    auto bind_policy = [&](std::span<const nn::Var> v) {
      pol::PolicyBinding b;
      b.net = bind_mlp(v);
      return b;
    };
    std::vector<nn::Tensor> policy_params;
    for (const auto* t : policy.parameters()) policy_params.push_back(*t);

    std::map<std::string, nn::GradCheckReport> reports;
    reports["value (tau_proj)"] = nn::grad_check(
        [&](nn::Tape& t, std::span<const nn::Var> v) {
          return learn::value_loss(t.constant(q_hat), nn::forward(value_net, bind_mlp(v), t.constant(obs)), tau);
        },
        params_of(value_net));
    reports["q (bellman)"] = nn::grad_check(
        [&](nn::Tape& t, std::span<const nn::Var> v) {
          return learn::q_loss(nn::forward(q_net, bind_mlp(v), t.constant(qin)), rewards, dones, t.constant(v_next),
                               0.99);
        },
        params_of(q_net));
    for (auto mode : {learn::Mode::proj_iql, learn::Mode::iql}) {
      learn::LearnerConfig c = lc;
      c.mode = mode;
      reports[std::string("policy ") + learn::to_string(mode)] = nn::grad_check(
          [&](nn::Tape& t, std::span<const nn::Var> v) {
            const nn::Var lp = pol::log_density(policy, bind_policy(v), t.constant(obs), act);
            return learn::policy_loss(lp, t.constant(log_pi_bar), t.constant(log_beta), t.constant(q_adv),
                                      t.constant(v_adv), c);
          },
          policy_params);
    }
    reports["behavior cloning"] = nn::grad_check(
        [&](nn::Tape& t, std::span<const nn::Var> v) {
          return nn::scale(nn::mean(pol::log_density(policy, bind_policy(v), t.constant(obs), act)), -1.0);
        },
        policy_params);

    Outcome o{true, ""};
    for (const auto& [name, r] : reports) {
      o.pass = o.pass && r.pass && r.max_rel_err < 1e-4;
      o.detail += name + "=" + fmt("%.1e", r.max_rel_err) + " ";
    }
    return o;
  });

  // Shared point-maze setup ---------------------------------------------------
  bool point_ready = false;
  try {
    point_runs.config = cli::RunConfig::load(fs::path(PROJIQL_SOURCE_DIR) / "configs" / "pointmaze.ini");
    point_runs.config.set("run.out", (out_root / "pointmaze").string());
    unsetenv("PROJIQL_OUT");
    const auto t0 = Clock::now();
    fs::create_directories(cli::output_root(point_runs.config));
    data::OfflineDataset ds = data::generate(cli::data_environment(point_runs.config), cli::behavior_spec(point_runs.config),
                                             point_runs.config.seed("data.seed"), point_runs.config.count("data.episodes"));
    point_runs.dataset = data::reward_shift(std::move(ds), point_runs.config.number("data.reward_shift"));
    point_runs.data_seconds = seconds_since(t0);
    std::printf("    point-maze dataset: %zu transitions, segment success %s\n", point_runs.dataset.size(),
                point_runs.dataset.meta.extra.at("behavior_success_rate").c_str());
    train_batch(point_runs.config.count("learner.batch_size"));
    point_ready = true;
  } catch (const std::exception& e) {
    std::printf("    point-maze setup failed: %s\n", e.what());
  }
  const std::size_t main_batch = point_runs.config.count("learner.batch_size");
  const auto shared = [&] { return point_runs.data_seconds + point_runs.train_seconds[main_batch]; };

  // 9 -----------------------------------------------------------------------
  {
    const auto t0 = Clock::now();
    Outcome o{false, "point-maze setup failed"};
    double run_seconds = 0.0;
    if (point_ready) {
      try {
        // One full desk-scale run: seed 0 of the shared set, charged at its own share of the time.
        const auto& runs = point_runs.by_batch.at(main_batch);
        run_seconds = point_runs.train_seconds[main_batch] / static_cast<double>(runs.size());
        double lo = 1.0, hi = 0.0;
        std::size_t rows = 0;
        for (const auto& m : runs.front().metrics) {
          lo = std::min(lo, m.tau_proj);
          hi = std::max(hi, m.tau_proj);
          ++rows;
        }
        // Identical policies on a real batch: coefficient exactly 1, per-sample values are clipped densities.
        const auto& behavior = runs.front().state.behavior;
        const auto batch = data::sample_batch(point_runs.dataset, 256, 7, 0);
        const auto lb = pol::log_density(behavior, pol::encode_states(point_runs.dataset.meta, batch.states),
                                         pol::action_tensor(point_runs.dataset.meta, batch.actions));
        const auto tp = learn::tau_proj_from_log(lb, lb);
        bool clipped = true;
        for (std::size_t i = 0; i < lb.size(); ++i)
          clipped = clipped && std::abs(tp.per_sample[i] - std::clamp(std::exp(lb[i]), 0.5, 1.0)) <= 1e-12;
        std::ostringstream s;
        s << rows << " logged tau_proj in [" << lo << ", " << hi << "]; identical-policy coefficient "
          << std::setprecision(17) << tp.coefficient;
        o = {rows == point_runs.config.count("learner.steps") && lo >= 0.5 && hi <= 1.0 && tp.coefficient == 1.0 &&
                 clipped,
             s.str()};
      } catch (const std::exception& e) {
        o = {false, std::string("threw: ") + e.what()};
      }
    }
    report(9, "tau_proj contract", o, seconds_since(t0) + run_seconds, 300.0);
  }

  // 10 ----------------------------------------------------------------------
  {
    const auto t0 = Clock::now();
    Outcome o{false, "point-maze setup failed"};
    if (point_ready) {
      const auto& runs = point_runs.by_batch.at(main_batch);
      const std::size_t window = point_runs.config.count("sweep.window");
      std::vector<double> mean_curve;
      for (const auto& r : runs) {
        const auto w = cli::window_means(tau_series(r), window);
        if (mean_curve.empty()) mean_curve.assign(w.size(), 0.0);
        for (std::size_t i = 0; i < w.size(); ++i) mean_curve[i] += w[i] / static_cast<double>(runs.size());
      }
      std::vector<double> index(mean_curve.size());
      for (std::size_t i = 0; i < index.size(); ++i) index[i] = static_cast<double>(i);
      const double rho = cli::spearman(index, mean_curve);
      std::ostringstream s;
      s << "spearman=" << std::setprecision(3) << rho << " (>0.5) over " << mean_curve.size()
        << " windows; first " << mean_curve.front() << " last " << mean_curve.back();
      o = {rho > 0.5, s.str()};
      summary["tau_window_curve"] = mean_curve;
    }
    report(10, "tau_proj upward trend", o, seconds_since(t0) + shared(), 900.0);
  }

  // 11 ----------------------------------------------------------------------
  {
    const auto t0 = Clock::now();
    Outcome o{false, "point-maze setup failed"};
    if (point_ready) {
      const envs::Environment eval_env = cli::eval_environment(point_runs.config);
      const auto behavior = envs::make_behavior_policy(eval_env, cli::behavior_spec(point_runs.config));
      const double behavior_success = learn::evaluate(*behavior, eval_env, 1000, 4242).success_rate;
      double learned = 0.0;
      const auto& runs = point_runs.by_batch.at(main_batch);
      for (const auto& r : runs)
        learned += learn::evaluate(r.state.policy, point_runs.dataset.meta, eval_env, 100, 4343).success_rate /
                   static_cast<double>(runs.size());
      std::ostringstream s;
      s << "behavior success=" << std::setprecision(3) << behavior_success << " (<=0.2), proj-iql success=" << learned
        << " (gap " << learned - behavior_success << " >= 0.2)";
      o = {behavior_success <= 0.2 && learned - behavior_success >= 0.2, s.str()};
    }
    report(11, "end-to-end stitching", o, seconds_since(t0) + shared(), 1800.0);
  }

  // 12 ----------------------------------------------------------------------
  {
    const auto t0 = Clock::now();
    Outcome o{false, "point-maze setup failed"};
    if (point_ready) {
      try {
        const auto batches = point_runs.config.numbers("sweep.batches");
        const std::size_t window = point_runs.config.count("sweep.window");
        std::vector<double> stds;
        std::ostringstream s;
        for (double b : batches) {
          const auto batch = static_cast<std::size_t>(b);
          train_batch(batch);
          double mean_std = 0.0;
          for (const auto& r : point_runs.by_batch.at(batch))
            mean_std += cli::window_std(tau_series(r), window) / static_cast<double>(point_runs.by_batch.at(batch).size());
          stds.push_back(mean_std);
          s << "b" << batch << "=" << std::setprecision(3) << mean_std << " ";
        }
        bool monotone = true;
        for (std::size_t i = 1; i < stds.size(); ++i) monotone = monotone && stds[i] <= stds[i - 1];
        o = {monotone && stds.size() == 4, "windowed std " + s.str()};
        summary["batch_window_std"] = stds;
      } catch (const std::exception& e) {
        o = {false, std::string("threw: ") + e.what()};
      }
    }
    // Every batch setting's training counts, including the shared batch-256 runs.
    report(12, "batch-size stability", o, seconds_since(t0) + shared(), 2700.0);
  }

  std::size_t passed = 0;
  for (const auto& l : lines) passed += l.outcome.pass ? 1 : 0;
  std::printf("acceptance: %zu/%zu criteria passed\n", passed, lines.size());
  std::ofstream(out_root / "acceptance.json") << summary.dump(2) << "\n";
  return passed == lines.size() ? 0 : 1;
}
