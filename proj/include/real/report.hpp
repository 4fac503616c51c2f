#pragma once

// JSON / CSV run reports and SVG accuracy plots.
//
// Reports are deterministic given the configuration and seeds; wall-clock
// measurements live only under the top-level "timing" key.

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "real/config.hpp"
#include "real/protocol.hpp"

namespace real {

using Json = nlohmann::json;

inline constexpr int kReportSchema = 1;

inline Json config_json(const PipelineConfig& c) {
  Json j = Json::object();
  for (const auto& [k, v] : config_entries(c)) j[k] = v;
  return j;
}

inline Json seeds_json(const PipelineConfig& c) {
  return {{"data", c.seeds.data.value},       {"plan", c.seeds.plan.value},
          {"init", c.seeds.init.value},       {"shuffle", c.seeds.shuffle.value},
          {"augment", c.seeds.augment.value}, {"buffer", c.seeds.buffer.value}};
}

inline Json plan_json(const PhasePlan& p) {
  return {{"classes", p.total_classes}, {"phases", p.phases}, {"class_order", p.class_order},
          {"groups", p.groups}};
}

inline Json report_json(const CilRunReport& r) {
  Json j;
  j["schema"] = kReportSchema;
  j["kind"] = "cil-run";
  j["arm"] = arm_name(r.config.arm);
  j["config"] = config_json(r.config);
  j["seeds"] = seeds_json(r.config);
  j["plan"] = plan_json(r.plan);
  j["accuracies"] = r.accuracies;
  j["average_accuracy"] = r.summary.average;
  j["last_accuracy"] = r.summary.last;
  j["split"] = {{"base", r.split.base},
                {"incremental", r.split.incremental},
                {"base_rows", r.split.base_rows},
                {"incremental_rows", r.split.incremental_rows},
                {"base_correct", r.split.base_correct},
                {"incremental_correct", r.split.incremental_correct}};
  j["losses"] = {{"sl", r.base.sl_loss},
                 {"sscl", r.base.sscl_loss},
                 {"sscl_embedding_std", r.base.sscl_embedding_std},
                 {"red_feature", r.base.red_feature_loss},
                 {"red_label", r.base.red_label_loss},
                 {"red_total", r.base.red_total_loss}};
  Json reads = Json::array();
  for (const auto& a : r.access_log)
    reads.push_back({{"stage", a.stage}, {"active_phase", a.active_phase}, {"phase_read", a.phase_read},
                     {"rows", a.rows}});
  j["audit"] = {{"reads", reads}, {"earlier_phase_reads", r.earlier_phase_reads}};
  j["timing"] = r.seconds;
  return j;
}

/// Report without the wall-clock field, for reproducibility comparisons.
inline Json strip_timing(Json j) {
  j.erase("timing");
  return j;
}

inline std::string report_csv(const CilRunReport& r) {
  std::ostringstream out;
  out.precision(17);
  out << "phase,accuracy\n";
  for (std::size_t k = 0; k < r.accuracies.size(); ++k) out << k << "," << r.accuracies[k] << "\n";
  out << "average," << r.summary.average << "\n";
  out << "last," << r.summary.last << "\n";
  out << "base_split," << r.split.base << "\n";
  out << "incremental_split," << r.split.incremental << "\n";
  return out.str();
}

inline Json grid_json(const GridSearchResult& g, const PipelineConfig& cfg) {
  Json j;
  j["schema"] = kReportSchema;
  j["kind"] = "grid-search";
  j["config"] = config_json(cfg);
  j["seeds"] = seeds_json(cfg);
  j["plan"] = plan_json(g.plan);
  j["selection"] = "validation average_accuracy";
  Json cells = Json::array();
  for (const auto& c : g.cells) {
    cells.push_back({{"lambda", c.lambda},
                     {"epochs", c.epochs},
                     {"validation", {{"accuracies", c.validation_accuracies},
                                     {"average_accuracy", c.validation.average},
                                     {"last_accuracy", c.validation.last}}},
                     {"test", {{"accuracies", c.test_accuracies},
                               {"average_accuracy", c.test.average},
                               {"last_accuracy", c.test.last}}}});
  }
  j["cells"] = cells;
  j["best"] = cells.at(g.best);
  return j;
}

// ---------------------------------------------------------------------------
// SVG

struct Series {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
};

namespace detail {
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}
inline std::string escape_xml(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '&': o += "&amp;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}
}  // namespace detail

/// Line chart with one polyline per series; y axis fixed to [0, 1].
inline std::string render_svg(const std::string& title, const std::string& x_label,
                              const std::string& y_label, const std::vector<Series>& series) {
  constexpr double W = 640, H = 420, L = 60, R = 160, T = 40, B = 50;
  double xmin = 0, xmax = 1;
  bool first = true;
  for (const auto& s : series)
    for (double x : s.x) {
      if (first) { xmin = xmax = x; first = false; }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
  if (xmax == xmin) xmax = xmin + 1;
  auto px = [&](double x) { return L + (x - xmin) / (xmax - xmin) * (W - L - R); };
  auto py = [&](double y) { return H - B - std::clamp(y, 0.0, 1.0) * (H - T - B); };
  static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  std::ostringstream o;
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
    << "\" viewBox=\"0 0 " << W << " " << H << "\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
    << detail::escape_xml(title) << "</text>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  o << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double y = t / 4.0;
    o << "<text x=\"" << L - 8 << "\" y=\"" << detail::num(py(y) + 4)
      << "\" text-anchor=\"end\" font-size=\"11\">" << detail::num(y) << "</text>\n";
  }
  o << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12
    << "\" text-anchor=\"middle\" font-size=\"12\">" << detail::escape_xml(x_label) << "</text>\n";
  o << "<text x=\"16\" y=\"" << (T + H - B) / 2 << "\" font-size=\"12\" transform=\"rotate(-90 16 "
    << (T + H - B) / 2 << ")\" text-anchor=\"middle\">" << detail::escape_xml(y_label) << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const char* color = palette[i % 10];
    o << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (std::size_t p = 0; p < s.x.size(); ++p)
      o << (p ? " " : "") << detail::num(px(s.x[p])) << "," << detail::num(py(s.y[p]));
    o << "\"/>\n";
    o << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (i + 1) << "\" font-size=\"11\" fill=\""
      << color << "\">" << detail::escape_xml(s.label) << "</text>\n";
  }
  o << "</svg>\n";
  return o.str();
}

/// Accuracy-vs-phase chart from one or more cil-run reports.
inline std::string plot_phase_curves(const std::vector<Json>& reports) {
  std::vector<Series> series;
  for (const auto& r : reports) {
    Series s;
    s.label = r.value("arm", std::string("run"));
    const auto acc = r.at("accuracies").get<std::vector<double>>();
    for (std::size_t k = 0; k < acc.size(); ++k) {
      s.x.push_back(static_cast<double>(k));
      s.y.push_back(acc[k]);
    }
    series.push_back(std::move(s));
  }
  return render_svg("Accuracy per phase", "phase", "accuracy", series);
}

/// Last-phase test accuracy against λ, one curve per distillation epoch count.
inline std::string plot_lambda_sweep(const Json& grid) {
  std::map<std::size_t, Series> by_epochs;
  for (const auto& c : grid.at("cells")) {
    const auto e = c.at("epochs").get<std::size_t>();
    auto& s = by_epochs[e];
    s.label = "e=" + std::to_string(e);
    s.x.push_back(c.at("lambda").get<double>());
    s.y.push_back(c.at("test").at("last_accuracy").get<double>());
  }
  std::vector<Series> series;
  for (auto& [e, s] : by_epochs) series.push_back(std::move(s));
  return render_svg("Last-phase accuracy vs lambda", "lambda", "last-phase accuracy", series);
}

}  // namespace real
