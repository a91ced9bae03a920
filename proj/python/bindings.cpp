#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"
#include "projiql/expectile.hpp"
#include "projiql/learner.hpp"
#include "projiql/theory.hpp"

namespace py = pybind11;
using namespace projiql;

namespace {

WeightedSamples samples_of(std::vector<double> values, std::optional<std::vector<double>> weights) {
  if (!weights) return WeightedSamples::uniform(std::move(values));
  WeightedSamples s{std::move(values), std::move(*weights)};
  s.validate();
  return s;
}

py::dict metrics_row(const learn::MetricsRow& m) {
  py::dict d;
  d["step"] = m.step;
  d["tau_proj"] = m.tau_proj;
  d["loss_v"] = m.loss_v;
  d["loss_q"] = m.loss_q;
  d["loss_pi"] = m.loss_pi;
  d["eval_return"] = m.eval_return ? py::cast(*m.eval_return) : py::none();
  d["eval_success"] = m.eval_success ? py::cast(*m.eval_success) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Proj-IQL core: expectiles, projected tau, exact tabular checks and the experiment commands.";

  // Translators run newest first, so the base class goes first.
  auto base = py::register_exception<Error>(m, "Error", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

  m.def(
      "expectile",
      [](std::vector<double> values, double tau, std::optional<std::vector<double>> weights) {
        return expectile(samples_of(std::move(values), std::move(weights)), ExpectileParam(tau));
      },
      py::arg("values"), py::arg("tau"), py::arg("weights") = py::none());
  m.def(
      "expectile_variance",
      [](std::vector<double> values, double tau, std::optional<std::vector<double>> weights) {
        return expectile_variance(samples_of(std::move(values), std::move(weights)), ExpectileParam(tau));
      },
      py::arg("values"), py::arg("tau"), py::arg("weights") = py::none());
  m.def("l2_tau", &l2_tau, py::arg("u"), py::arg("tau"));

  py::class_<learn::TauProj>(m, "TauProj")
      .def_readonly("per_sample", &learn::TauProj::per_sample)
      .def_readonly("batch_value", &learn::TauProj::batch_value)
      .def_readonly("coefficient", &learn::TauProj::coefficient);
  m.def(
      "tau_proj",
      [](const std::vector<double>& beta, const std::vector<double>& phi, double low, double high,
         const std::string& reduction) {
        return learn::tau_proj(beta, phi, low, high, learn::tau_reduction_from_string(reduction));
      },
      py::arg("beta"), py::arg("phi"), py::arg("low") = 0.5, py::arg("high") = 1.0,
      py::arg("reduction") = "clip-then-mean");
  m.def(
      "tau_proj_from_log",
      [](const std::vector<double>& log_beta, const std::vector<double>& log_phi, double low, double high,
         const std::string& reduction) {
        return learn::tau_proj_from_log(log_beta, log_phi, low, high, learn::tau_reduction_from_string(reduction));
      },
      py::arg("log_beta"), py::arg("log_phi"), py::arg("low") = 0.5, py::arg("high") = 1.0,
      py::arg("reduction") = "clip-then-mean");

  py::class_<theory::BoundReport>(m, "BoundReport")
      .def_readonly("name", &theory::BoundReport::name)
      .def_readonly("lhs", &theory::BoundReport::lhs)
      .def_readonly("rhs", &theory::BoundReport::rhs)
      .def_readonly("slack", &theory::BoundReport::slack)
      .def_readonly("tolerance", &theory::BoundReport::tolerance)
      .def_readonly("passed", &theory::BoundReport::pass)
      .def_readonly("trials", &theory::BoundReport::trials)
      .def_readonly("failures", &theory::BoundReport::failures)
      .def_readonly("gating", &theory::BoundReport::gating)
      .def_readonly("detail", &theory::BoundReport::detail)
      .def("to_json", &cli::to_json_line)
      .def("__repr__", [](const theory::BoundReport& r) {
        std::ostringstream s;
        s << "<BoundReport " << r.name << " pass=" << r.pass << " trials=" << r.trials << " failures=" << r.failures
          << ">";
        return s.str();
      });

  m.def("sweep_lemma1", &theory::sweep_lemma1, py::arg("instances"), py::arg("seed"));
  m.def("sweep_lemma3", &theory::sweep_lemma3, py::arg("instances"), py::arg("seed"));
  m.def("sweep_theorem2", &theory::sweep_theorem2, py::arg("instances"), py::arg("seed"), py::arg("iterations") = 5);
  m.def("sweep_theorem3", &theory::sweep_theorem3, py::arg("instances"), py::arg("seed"),
        py::arg("lambda_low") = 0.002, py::arg("lambda_high") = 0.02);
  m.def("sweep_theorem4", &theory::sweep_theorem4, py::arg("instances"), py::arg("seed"), py::arg("mc_samples") = 0);
  m.def(
      "verify_suite",
      [](std::uint64_t seed, std::vector<std::string> faults) {
        cli::VerifyOptions o;
        o.seed = seed;
        o.inject_faults = std::move(faults);
        return cli::verify_suite(o);
      },
      py::arg("seed") = 20240601, py::arg("inject_faults") = std::vector<std::string>{});

  py::class_<cli::RunConfig>(m, "RunConfig")
      .def(py::init<>())
      .def_static("load", &cli::RunConfig::load, py::arg("path"))
      .def_static("parse", &cli::RunConfig::parse, py::arg("text"), py::arg("origin") = "<string>")
      .def("set", py::overload_cast<const std::string&, const std::string&>(&cli::RunConfig::set), py::arg("key"),
           py::arg("value"))
      .def("get", &cli::RunConfig::get, py::arg("key"))
      .def("seeds", &cli::RunConfig::seeds)
      .def("to_string", &cli::RunConfig::to_string)
      .def("save", &cli::RunConfig::save, py::arg("path"))
      .def_readwrite("base_dir", &cli::RunConfig::base_dir)
      .def("__eq__", [](const cli::RunConfig& a, const cli::RunConfig& b) { return a == b; });
  m.def("known_keys", &cli::known_keys);

  // The commands release the GIL; training a desk-scale run takes minutes.
  m.def(
      "gen_data",
      [](const cli::RunConfig& config, bool force) {
        py::gil_scoped_release release;
        return cli::cmd_gen_data(config, {force, nullptr});
      },
      py::arg("config"), py::arg("force") = false);
  m.def(
      "train",
      [](const cli::RunConfig& config, bool force) {
        std::vector<cli::SeedRun> runs;
        {
          py::gil_scoped_release release;
          runs = cli::cmd_train(config, {force, nullptr});
        }
        py::list out;
        for (const auto& r : runs) {
          py::dict d;
          d["seed"] = r.seed;
          d["dir"] = r.dir;
          d["success_rate"] = r.final_eval.success_rate;
          d["mean_return"] = r.final_eval.mean_return;
          py::list rows;
          for (const auto& row : r.metrics) rows.append(metrics_row(row));
          d["metrics"] = rows;
          out.append(d);
        }
        return out;
      },
      py::arg("config"), py::arg("force") = false);

  m.def("window_means", &cli::window_means, py::arg("series"), py::arg("window"));
  m.def("window_std", &cli::window_std, py::arg("series"), py::arg("window"));
  m.def("spearman", &cli::spearman, py::arg("x"), py::arg("y"));
}
