#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"

using namespace projiql;
using namespace projiql::cli;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("projiql_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// A 3x3 grid, a handful of episodes and a few dozen steps: enough to exercise every command.
RunConfig grid_config(const fs::path& root) {
  std::ofstream(root / "grid.txt") << "S..\n...\n..G\n";
  RunConfig c = RunConfig::parse(R"(
[run]
name = tiny
seeds = 0,2

[env]
kind = gridmaze
layout = grid.txt
max_steps = 20
gamma = 0.9

[data]
episodes = 20
behavior = uniform-random
reward_shift = 0
random_start = false
segment_steps = 0

[learner]
steps = 30
bc_steps = 10
batch_size = 8
bc_batch_size = 8
hidden_width = 8
eval_every = 10
eval_episodes = 2
)");
  c.base_dir = root;
  c.set("run.out", (root / "out").string());
  return c;
}

struct UnsetOut {
  UnsetOut() { unsetenv("PROJIQL_OUT"); }
};

}  // namespace

TEST_CASE("config parsing is strict") {
  const RunConfig d;
  CHECK(d.get("learner.steps") == "20000");
  CHECK(d.count("learner.eval_every") == 500);
  CHECK(d.count("learner.hidden_width") == 64);
  CHECK(d.seeds() == std::vector<std::uint64_t>{0, 2, 4, 6, 8});

  CHECK_THROWS_AS(RunConfig::parse("[learner]\nstepz = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[learner]\nsteps = many\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("steps = 3\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[learner]\nsteps = 3\nsteps = 4\n"), ConfigError);

  RunConfig c = RunConfig::parse("# comment\n[learner]\nsteps = 3\n; another\n[run]\nseeds = 1, 5\n");
  CHECK(c.count("learner.steps") == 3);
  CHECK(c.seeds() == std::vector<std::uint64_t>{1, 5});
  c.set("learner.lr_q=1e-3");
  CHECK(c.number("learner.lr_q") == 1e-3);
  CHECK_THROWS_AS(c.set("learner.nope=1"), ConfigError);
  CHECK_THROWS_AS(c.set("learner.lr_q"), ConfigError);
  CHECK_THROWS_AS(c.set("learner.state_dependent_std=maybe"), ConfigError);

  // The canonical text round-trips.
  CHECK(RunConfig::parse(c.to_string()) == c);
}

TEST_CASE("learner config maps every key and validates") {
  RunConfig c;
  c.set("learner.mode", "iql");
  c.set("learner.expectile_tau", "0.9");
  c.set("learner.log_std_low", "-3");
  const auto l = learner_config(c);
  CHECK(l.mode == learn::Mode::iql);
  CHECK(l.expectile_tau == 0.9);
  CHECK(l.log_std_low == -3.0);
  CHECK(l.steps == 20000);
  c.set("learner.mode", "sarsa");
  CHECK_THROWS_AS(learner_config(c), ConfigError);
  c.set("learner.mode", "iql");
  c.set("learner.batch_size", "0");
  CHECK_THROWS_AS(learner_config(c), ConfigError);
}

TEST_CASE("PROJIQL_OUT overrides the output root") {
  RunConfig c;
  c.set("run.out", "/tmp/a");
  unsetenv("PROJIQL_OUT");
  CHECK(output_root(c) == fs::path("/tmp/a"));
  setenv("PROJIQL_OUT", "/tmp/b", 1);
  CHECK(output_root(c) == fs::path("/tmp/b"));
  CHECK(dataset_path(c) == fs::path("/tmp/b/dataset.pqd"));
  unsetenv("PROJIQL_OUT");
}

TEST_CASE("gen-data is deterministic and refuses to overwrite") {
  UnsetOut guard;
  const fs::path root = scratch("gen");
  RunConfig c = grid_config(root);
  const fs::path first = cmd_gen_data(c);
  const std::string bytes = slurp(first);
  CHECK_THROWS_AS(cmd_gen_data(c), ConfigError);
  cmd_gen_data(c, {.force = true});
  CHECK(slurp(first) == bytes);
  const auto ds = data::load(first.string());
  CHECK(ds.size() <= 20u * 20u);
  CHECK(ds.size() > 0);
}

TEST_CASE("waypoint-noisy point-maze data is neither all success nor all failure") {
  UnsetOut guard;
  const fs::path root = scratch("point");
  RunConfig c;
  c.base_dir = PROJIQL_SOURCE_DIR;
  c.set("run.out", root.string());
  c.set("data.episodes", "200");
  const auto ds = data::load(cmd_gen_data(c).string());
  const double rate = std::stod(ds.meta.extra.at("behavior_success_rate"));
  CHECK(rate > 0.0);
  CHECK(rate < 1.0);
}

TEST_CASE("train writes one directory per seed with a config snapshot") {
  UnsetOut guard;
  const fs::path root = scratch("train");
  RunConfig c = grid_config(root);
  CHECK_THROWS_AS(cmd_train(c), ConfigError);  // no dataset yet: pre-flight error
  CHECK_FALSE(fs::exists(root / "out" / "tiny"));
  cmd_gen_data(c);
  const auto runs = cmd_train(c);
  REQUIRE(runs.size() == 2);
  CHECK(fs::exists(root / "out/tiny/seed_0/metrics.csv"));
  CHECK(fs::exists(root / "out/tiny/seed_2/metrics.csv"));
  CHECK(fs::exists(root / "out/tiny/seed_2/checkpoint.pqc"));
  CHECK(RunConfig::load(root / "out/tiny/config.ini") == c);

  CHECK_THROWS_AS(cmd_train(c), ConfigError);
  const std::string before = slurp(root / "out/tiny/seed_0/metrics.csv");
  cmd_train(c, {.force = true});
  CHECK(slurp(root / "out/tiny/seed_0/metrics.csv") == before);

  // Concurrent seeds give the same files as sequential ones.
  c.set("run.threads", "2");
  cmd_train(c, {.force = true});
  CHECK(slurp(root / "out/tiny/seed_0/metrics.csv") == before);
}

TEST_CASE("a mode sweep shares one step grid") {
  UnsetOut guard;
  const fs::path root = scratch("modes");
  RunConfig c = grid_config(root);
  c.set("run.seeds", "0");
  cmd_gen_data(c);
  std::vector<std::vector<std::size_t>> grids;
  for (const char* mode : {"proj-iql", "iql", "wbc"}) {
    c.set("learner.mode", mode);
    c.set("run.name", mode);
    const auto runs = cmd_train(c);
    std::vector<std::size_t> steps;
    for (const auto& m : learn::read_metrics_csv((runs[0].dir / "metrics.csv").string())) steps.push_back(m.step);
    grids.push_back(steps);
  }
  CHECK(grids[0] == grids[1]);
  CHECK(grids[1] == grids[2]);
}

TEST_CASE("sweep-tau aggregates tau x seeds") {
  UnsetOut guard;
  const fs::path root = scratch("sweep");
  RunConfig c = grid_config(root);
  cmd_gen_data(c);
  CHECK_THROWS_AS(cmd_sweep_tau(c), ConfigError);  // mode must be iql
  c.set("learner.mode", "iql");
  c.set("sweep.taus", "0.3,0.6,0.9");
  const auto rows = cmd_sweep_tau(c);
  CHECK(rows.size() == 6);
  std::ifstream csv(root / "out/tiny/sweep_tau.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  CHECK(lines == 7);

  c.set("sweep.taus", "0.5");
  c.set("run.name", "single");
  CHECK(cmd_sweep_tau(c).size() == 2);
}

TEST_CASE("sweep-tau on a one-transition dataset stays at the behavior action") {
  UnsetOut guard;
  const fs::path root = scratch("degenerate");
  RunConfig c = grid_config(root);
  c.set("run.seeds", "0");
  c.set("learner.mode", "iql");
  c.set("learner.policy_init", "behavior");
  c.set("sweep.taus", "0.3,0.6,0.9");
  data::OfflineDataset one = data::generate(data_environment(c), behavior_spec(c), 1, 1);
  const auto rows = data::gather(one, {0});
  data::OfflineDataset tiny;
  tiny.meta = one.meta;
  tiny.states = rows.states;
  tiny.actions = rows.actions;
  tiny.rewards = rows.rewards;
  tiny.next_states = rows.next_states;
  tiny.dones = rows.dones;
  fs::create_directories(root / "out");
  data::save(tiny, dataset_path(c).string());
  cmd_sweep_tau(c);
  // With a single (s, a) every tau yields a policy whose mode at s is the logged action.
  for (const char* tau : {"tau_0.3", "tau_0.6", "tau_0.9"}) {
    const auto ckpt = data::read_container((root / "out/tiny" / tau / "seed_0/checkpoint.pqc").string());
    CHECK(ckpt.get("mode") == "iql");
  }
  c.set("learner.bc_steps", "200");
  c.set("learner.lr_bc", "1e-2");
  const auto logged = static_cast<std::size_t>(tiny.actions[0]);
  for (const char* tau : {"0.3", "0.6", "0.9"}) {
    c.set("learner.expectile_tau", tau);
    const auto trained = learn::train(tiny, learner_config(c), 0);
    const auto probs = pol::categorical_probs(trained.state.policy, pol::encode_states(tiny.meta, tiny.states));
    for (std::size_t a = 0; a < 4; ++a)
      if (a != logged) CHECK(probs[logged] > probs[a]);
  }
}

TEST_CASE("ablate-batch shares BC pretraining across batch sizes") {
  UnsetOut guard;
  const fs::path root = scratch("ablate");
  RunConfig c = grid_config(root);
  c.set("run.seeds", "0");
  c.set("sweep.batches", "1,16,64");
  c.set("sweep.window", "10");
  cmd_gen_data(c);
  const auto rows = cmd_ablate_batch(c);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].high_variance);
  CHECK_FALSE(rows[1].high_variance);
  CHECK(rows[0].bc_checksum == rows[1].bc_checksum);
  CHECK(rows[1].bc_checksum == rows[2].bc_checksum);
  for (const auto& r : rows) CHECK(r.tau_window_std >= 0.0);
  c.set("learner.mode", "iql");
  c.set("run.name", "other");
  CHECK_THROWS_AS(cmd_ablate_batch(c), ConfigError);
}

TEST_CASE("plot") {
  std::vector<learn::MetricsRow> a, b;
  for (std::size_t s = 1; s <= 4; ++s) {
    learn::MetricsRow r;
    r.step = s;
    r.tau_proj = 0.5 + 0.1 * static_cast<double>(s);
    if (s % 2 == 0) {
      r.eval_return = 1.0;
      r.eval_success = 1.0;
    }
    a.push_back(r);
    r.tau_proj += 0.05;
    b.push_back(r);
  }
  SUBCASE("deterministic and self-contained") {
    const std::string svg = render_svg({a, b}, {"a", "b"});
    CHECK(svg == render_svg({a, b}, {"a", "b"}));
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("not a normalized score") != std::string::npos);
  }
  SUBCASE("identical runs give a zero-width band") {
    const std::string same = render_svg({a, a}, {"a", "a"});
    const std::string single = render_svg({a}, {"a"});
    CHECK(same.substr(same.find("<g>")) == single.substr(single.find("<g>")));
  }
  SUBCASE("mismatched grids are rejected with file names") {
    auto c = a;
    c.pop_back();
    try {
      render_svg({a, c}, {"first.csv", "second.csv"});
      FAIL("expected an error");
    } catch (const ValidationError& e) {
      CHECK(std::string(e.what()).find("second.csv") != std::string::npos);
    }
  }
  SUBCASE("files") {
    const fs::path root = scratch("plot");
    learn::write_metrics_csv(a, (root / "a.csv").string());
    learn::write_metrics_csv(b, (root / "b.csv").string());
    cmd_plot({root / "a.csv", root / "b.csv"}, root / "out.svg", Band::minmax);
    CHECK(slurp(root / "out.svg") == render_svg({a, b}, {}, Band::minmax));
  }
}

TEST_CASE("verify emits parseable JSON lines and gates on failures") {
  std::ostringstream out;
  CHECK(cmd_verify(out) == 0);
  std::istringstream in(out.str());
  std::string line;
  std::size_t n = 0;
  bool saw_summary = false;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.contains("name"));
    CHECK(j.contains("pass"));
    if (j["name"] == "summary") {
      saw_summary = true;
      CHECK(j["pass"] == true);
    } else if (j["gating"] == true) {
      CHECK(j["pass"] == true);
    }
    ++n;
  }
  CHECK(saw_summary);
  CHECK(n >= 13);

  std::ostringstream faulty;
  CHECK(cmd_verify(faulty, {.inject_faults = {"lemma1"}}) == 1);
}

TEST_CASE("window statistics and rank correlation") {
  const std::vector<double> s = {1, 1, 3, 3, 5, 5, 9};
  CHECK(window_means(s, 2) == std::vector<double>{1, 3, 5});
  CHECK(window_std(s, 2) == 0.0);
  CHECK(window_std({0, 2, 0, 2}, 2) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman({1, 2, 3}, {1, 1, 1}) == 0.0);
  // Ties take average ranks.
  CHECK(spearman({1, 2, 3, 4}, {1, 2, 2, 3}) == doctest::Approx(0.9486832980505138));
  CHECK_THROWS_AS(window_std({1.0}, 2), ValidationError);
}
