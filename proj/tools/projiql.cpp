// projiql: gen-data, train, sweep-tau, ablate-batch, plot, verify.

#include <malloc.h>

#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"

namespace cli = projiql::cli;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  bool force = false;
  bool quiet = false;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "key = value config file with [section] headers");
  app->add_option("--set", c.overrides, "override, e.g. --set learner.steps=5000")->take_all();
  app->add_flag("--force", c.force, "overwrite existing outputs");
  app->add_flag("-q,--quiet", c.quiet, "no progress lines");
}

cli::RunConfig resolve(const Common& c) {
  cli::RunConfig config = c.config.empty() ? cli::RunConfig() : cli::RunConfig::load(c.config);
  for (const auto& o : c.overrides) config.set(o);
  return config;
}

cli::CommandOptions options(const Common& c) { return {c.force, c.quiet ? nullptr : &std::cerr}; }

}  // namespace

int main(int argc, char** argv) {
  // Training allocates many short-lived tensors; keeping them off mmap avoids page-fault churn.
  mallopt(M_MMAP_THRESHOLD, 64 << 20);
  mallopt(M_TRIM_THRESHOLD, 128 << 20);

  CLI::App app{"Proj-IQL offline RL experiments at desk scale"};
  app.require_subcommand(1);

  Common gen, train, sweep, ablate;
  auto* gen_cmd = app.add_subcommand("gen-data", "roll out the behavior policy and write a dataset");
  add_common(gen_cmd, gen);
  auto* train_cmd = app.add_subcommand("train", "train one run per seed");
  add_common(train_cmd, train);
  auto* sweep_cmd = app.add_subcommand("sweep-tau", "IQL over sweep.taus x seeds");
  add_common(sweep_cmd, sweep);
  auto* ablate_cmd = app.add_subcommand("ablate-batch", "Proj-IQL over sweep.batches x seeds");
  add_common(ablate_cmd, ablate);

  std::vector<std::string> plot_inputs;
  std::string plot_output = "plot.svg";
  std::string band = "std";
  auto* plot_cmd = app.add_subcommand("plot", "SVG chart of seed-mean metrics with a band");
  plot_cmd->add_option("inputs", plot_inputs, "metrics.csv files sharing a step grid")->required();
  plot_cmd->add_option("-o,--output", plot_output, "output SVG path");
  plot_cmd->add_option("--band", band, "std or minmax")->check(CLI::IsMember({"std", "minmax"}));

  cli::VerifyOptions verify;
  std::string verify_output;
  auto* verify_cmd = app.add_subcommand("verify", "exact checks of the lemmas and theorems; JSON lines");
  verify_cmd->add_option("--inject-fault", verify.inject_faults, "negate the tolerance of checks with this prefix");
  verify_cmd->add_option("--seed", verify.seed, "base seed");
  verify_cmd->add_option("-o,--output", verify_output, "also write the report here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) {
      cli::cmd_gen_data(resolve(gen), options(gen));
    } else if (*train_cmd) {
      for (const auto& r : cli::cmd_train(resolve(train), options(train)))
        std::cout << r.dir.string() << " success " << r.final_eval.success_rate << " return "
                  << r.final_eval.mean_return << "\n";
    } else if (*sweep_cmd) {
      std::cout << "tau,seed,return,success\n";
      for (const auto& r : cli::cmd_sweep_tau(resolve(sweep), options(sweep)))
        std::cout << r.tau << "," << r.seed << "," << r.mean_return << "," << r.success_rate << "\n";
    } else if (*ablate_cmd) {
      std::cout << "batch,seed,return,success,tau_window_std,high_variance\n";
      for (const auto& r : cli::cmd_ablate_batch(resolve(ablate), options(ablate)))
        std::cout << r.batch_size << "," << r.seed << "," << r.mean_return << "," << r.success_rate << ","
                  << r.tau_window_std << "," << (r.high_variance ? 1 : 0) << "\n";
    } else if (*plot_cmd) {
      std::vector<cli::fs::path> inputs(plot_inputs.begin(), plot_inputs.end());
      cli::cmd_plot(inputs, plot_output, band == "std" ? cli::Band::std : cli::Band::minmax);
    } else if (*verify_cmd) {
      if (verify_output.empty()) return cli::cmd_verify(std::cout, verify);
      std::ofstream file(verify_output);
      if (!file) throw projiql::ConfigError("cannot write " + verify_output);
      const int code = cli::cmd_verify(file, verify);
      file.close();
      std::ifstream back(verify_output);
      std::cout << back.rdbuf();
      return code;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
