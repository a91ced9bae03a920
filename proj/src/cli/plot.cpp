#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>

#include "projiql/cli.hpp"
#include "projiql/errors.hpp"

namespace projiql::cli {

namespace {

using Getter = std::function<std::optional<double>(const learn::MetricsRow&)>;

struct Metric {
  const char* name;
  const char* label;
  Getter get;
};

const std::vector<Metric>& metrics() {
  static const std::vector<Metric> m = {
      {"tau_proj", "tau_proj", [](const learn::MetricsRow& r) -> std::optional<double> { return r.tau_proj; }},
      {"loss_v", "value loss", [](const learn::MetricsRow& r) -> std::optional<double> { return r.loss_v; }},
      {"loss_q", "Q loss", [](const learn::MetricsRow& r) -> std::optional<double> { return r.loss_q; }},
      {"loss_pi", "policy loss", [](const learn::MetricsRow& r) -> std::optional<double> { return r.loss_pi; }},
      // Toy analogues of the normalized score: raw return and success rate.
      {"eval_return", "eval return (not a normalized score)", [](const learn::MetricsRow& r) { return r.eval_return; }},
      {"eval_success", "eval success rate", [](const learn::MetricsRow& r) { return r.eval_success; }},
  };
  return m;
}

constexpr double kWidth = 640;
constexpr double kHeight = 200;
constexpr double kLeft = 60;
constexpr double kRight = 20;
constexpr double kTop = 28;
constexpr double kBottom = 30;
constexpr std::size_t kMaxPoints = 400;

std::string num(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

std::string tick(double v) {
  std::ostringstream s;
  s << std::setprecision(4) << v;
  return s.str();
}

struct Series {
  std::vector<double> steps;
  std::vector<double> mean;
  std::vector<double> low;
  std::vector<double> high;
};

std::optional<Series> aggregate(const std::vector<std::vector<learn::MetricsRow>>& runs, const Metric& metric,
                                Band band) {
  Series s;
  const auto& first = runs.front();
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (!metric.get(first[i])) continue;
    std::vector<double> v;
    for (const auto& run : runs) {
      const auto x = metric.get(run[i]);
      if (!x) throw ValidationError(std::string("runs disagree on where ") + metric.name + " is present");
      v.push_back(*x);
    }
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double lo = mean, hi = mean;
    if (band == Band::std) {
      double ss = 0.0;
      for (double x : v) ss += (x - mean) * (x - mean);
      const double sd = std::sqrt(ss / static_cast<double>(v.size()));
      lo = mean - sd;
      hi = mean + sd;
    } else {
      lo = *std::min_element(v.begin(), v.end());
      hi = *std::max_element(v.begin(), v.end());
    }
    s.steps.push_back(static_cast<double>(first[i].step));
    s.mean.push_back(mean);
    s.low.push_back(lo);
    s.high.push_back(hi);
  }
  if (s.steps.empty()) return std::nullopt;
  return s;
}

void panel(std::ostringstream& out, const Series& s, const Metric& metric, double y0) {
  // Thin long series to at most kMaxPoints, always keeping the last point.
  std::vector<std::size_t> idx;
  const std::size_t stride = (s.steps.size() + kMaxPoints - 1) / kMaxPoints;
  for (std::size_t i = 0; i < s.steps.size(); i += std::max<std::size_t>(stride, 1)) idx.push_back(i);
  if (idx.back() != s.steps.size() - 1) idx.push_back(s.steps.size() - 1);

  double xmin = s.steps.front(), xmax = s.steps.back();
  if (xmax == xmin) xmax = xmin + 1;
  double ymin = *std::min_element(s.low.begin(), s.low.end());
  double ymax = *std::max_element(s.high.begin(), s.high.end());
  if (ymax - ymin < 1e-12) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - xmin) / (xmax - xmin) * pw; };
  auto py = [&](double y) { return y0 + kTop + (ymax - y) / (ymax - ymin) * ph; };

  out << "<g>\n";
  out << "<text x=\"" << num(kLeft) << "\" y=\"" << num(y0 + 18) << "\" font-size=\"13\">" << metric.label
      << "</text>\n";
  out << "<rect x=\"" << num(kLeft) << "\" y=\"" << num(y0 + kTop) << "\" width=\"" << num(pw) << "\" height=\""
      << num(ph) << "\" fill=\"none\" stroke=\"#888\"/>\n";
  out << "<text x=\"" << num(kLeft - 4) << "\" y=\"" << num(y0 + kTop + 10) << "\" font-size=\"10\" text-anchor=\"end\">"
      << tick(ymax) << "</text>\n";
  out << "<text x=\"" << num(kLeft - 4) << "\" y=\"" << num(y0 + kTop + ph) << "\" font-size=\"10\" text-anchor=\"end\">"
      << tick(ymin) << "</text>\n";
  out << "<text x=\"" << num(kLeft) << "\" y=\"" << num(y0 + kHeight - 12) << "\" font-size=\"10\">step "
      << tick(xmin) << "</text>\n";
  out << "<text x=\"" << num(kLeft + pw) << "\" y=\"" << num(y0 + kHeight - 12)
      << "\" font-size=\"10\" text-anchor=\"end\">" << tick(xmax) << "</text>\n";

  out << "<polygon class=\"band\" fill=\"#4c72b0\" fill-opacity=\"0.25\" stroke=\"none\" points=\"";
  for (std::size_t i : idx) out << num(px(s.steps[i])) << "," << num(py(s.high[i])) << " ";
  for (auto it = idx.rbegin(); it != idx.rend(); ++it) out << num(px(s.steps[*it])) << "," << num(py(s.low[*it])) << " ";
  out << "\"/>\n";
  out << "<polyline class=\"mean\" fill=\"none\" stroke=\"#1f3d7a\" stroke-width=\"1.5\" points=\"";
  for (std::size_t i : idx) out << num(px(s.steps[i])) << "," << num(py(s.mean[i])) << " ";
  out << "\"/>\n</g>\n";
}

}  // namespace

std::string render_svg(const std::vector<std::vector<learn::MetricsRow>>& runs, const std::vector<std::string>& labels,
                       Band band) {
  if (runs.empty()) throw ValidationError("plot needs at least one metrics file");
  for (std::size_t r = 1; r < runs.size(); ++r) {
    bool same = runs[r].size() == runs[0].size();
    for (std::size_t i = 0; same && i < runs[0].size(); ++i) same = runs[r][i].step == runs[0][i].step;
    if (!same) {
      std::string names;
      for (const auto& l : labels) names += (names.empty() ? "" : ", ") + l;
      throw ValidationError("metrics files do not share a step grid: " + names);
    }
  }
  std::vector<std::pair<const Metric*, Series>> panels;
  for (const Metric& m : metrics())
    if (auto s = aggregate(runs, m, band)) panels.emplace_back(&m, std::move(*s));

  std::ostringstream out;
  const double height = kHeight * static_cast<double>(panels.size()) + 24;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << num(kWidth) << "\" height=\"" << num(height)
      << "\" font-family=\"sans-serif\">\n";
  out << "<text x=\"" << num(kLeft) << "\" y=\"16\" font-size=\"12\">mean over " << runs.size() << " run(s), band "
      << (band == Band::std ? "+/- 1 std" : "min/max") << "</text>\n";
  double y = 24;
  for (const auto& [m, s] : panels) {
    panel(out, s, *m, y);
    y += kHeight;
  }
  out << "</svg>\n";
  return out.str();
}

void cmd_plot(const std::vector<fs::path>& inputs, const fs::path& output, Band band) {
  std::vector<std::vector<learn::MetricsRow>> runs;
  std::vector<std::string> labels;
  for (const auto& p : inputs) {
    runs.push_back(learn::read_metrics_csv(p.string()));
    labels.push_back(p.string());
  }
  const std::string svg = render_svg(runs, labels, band);
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  std::ofstream out(output, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + output.string());
  out << svg;
}

}  // namespace projiql::cli
