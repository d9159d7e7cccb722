#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dflnet/train.hpp"

namespace dflnet {

enum class TableMode { no_defense, adversarial, ablation };

inline const char* to_string(TableMode m) {
  switch (m) {
    case TableMode::no_defense: return "no-defense";
    case TableMode::adversarial: return "adversarial";
    case TableMode::ablation: return "ablation";
  }
  return "?";
}

inline TableMode parse_table_mode(const std::string& s) {
  if (s == "no-defense") return TableMode::no_defense;
  if (s == "adversarial") return TableMode::adversarial;
  if (s == "ablation") return TableMode::ablation;
  throw ConfigError("unknown table mode '" + s + "' (expected no-defense, adversarial, ablation)");
}

enum class RowSelection { final_epoch, best_robust };

struct LabeledRun {
  std::string label;
  std::filesystem::path metrics;
};

struct ReportSpec {
  std::vector<LabeledRun> runs;
  TableMode mode = TableMode::no_defense;
  RowSelection selection = RowSelection::final_epoch;
  bool csv = true;
  bool svg = true;
  std::filesystem::path output_dir = "report";

  void validate() const {
    if (runs.empty()) throw ConfigError("report needs at least one labeled run");
    std::set<std::string> seen;
    for (const auto& r : runs) {
      if (r.label.empty()) throw ConfigError("report run labels must be non-empty");
      if (r.label.find(',') != std::string::npos) throw ConfigError("report label '" + r.label + "' contains a comma");
      if (!seen.insert(r.label).second) throw ConfigError("duplicate report label '" + r.label + "'");
    }
    if (mode == TableMode::ablation) {
      for (const char* need : {"DFL", "PCL", "DFL+PCL"})
        if (!seen.count(need)) throw ConfigError(std::string("ablation tables need a run labeled ") + need);
    }
  }
};

struct TableRow {
  std::string label;
  std::size_t epoch = 0;
  std::string split;
  double clean = 0.0;
  std::optional<double> fgsm;
  std::optional<double> pgd;
  std::optional<double> cw;
};

// Final epoch: the test row of the last epoch, else its validation row.
// Best robust: the validation row with the highest robust accuracy (ties keep the earlier epoch).
inline MetricsRow select_row(const std::vector<MetricsRow>& rows, RowSelection sel, const std::string& source) {
  if (rows.empty()) throw FormatError(source + ": no metrics rows");
  if (sel == RowSelection::best_robust) {
    const MetricsRow* best = nullptr;
    for (const auto& r : rows) {
      if (r.split != "val" || !r.selection_accuracy()) continue;
      if (!best || *r.selection_accuracy() > *best->selection_accuracy()) best = &r;
    }
    if (best) return *best;
  }
  std::size_t last = 0;
  for (const auto& r : rows) last = std::max(last, r.epoch);
  const MetricsRow* pick = nullptr;
  for (const char* split : {"test", "val", "train"}) {
    for (const auto& r : rows)
      if (r.epoch == last && r.split == split) {
        pick = &r;
        break;
      }
    if (pick) break;
  }
  if (!pick) throw FormatError(source + ": no row for final epoch " + std::to_string(last));
  return *pick;
}

inline std::vector<TableRow> table_rows(const ReportSpec& spec) {
  spec.validate();
  std::vector<LabeledRun> ordered = spec.runs;
  if (spec.mode == TableMode::ablation) {
    const std::vector<std::string> order{"DFL", "PCL", "DFL+PCL"};
    std::stable_sort(ordered.begin(), ordered.end(), [&order](const LabeledRun& a, const LabeledRun& b) {
      auto rank = [&order](const std::string& l) {
        return static_cast<std::size_t>(std::find(order.begin(), order.end(), l) - order.begin());
      };
      return rank(a.label) < rank(b.label);
    });
  }
  std::vector<TableRow> out;
  for (const auto& run : ordered) {
    const auto rows = read_metrics_csv(run.metrics);
    const auto r = select_row(rows, spec.selection, run.metrics.string());
    out.push_back({run.label, r.epoch, r.split, r.acc_clean, r.acc_fgsm, r.acc_pgd, r.acc_cw});
  }
  return out;
}

inline std::string format_table(const std::vector<TableRow>& rows, TableMode mode) {
  using detail::fmt_metric;
  std::string s = "setting,run,epoch,split,clean,fgsm,pgd_10,cw\n";
  for (const auto& r : rows) {
    s += std::string(to_string(mode)) + "," + r.label + "," + std::to_string(r.epoch) + "," + r.split + "," +
         fmt_metric(r.clean) + "," + fmt_metric(r.fgsm) + "," + fmt_metric(r.pgd) + "," + fmt_metric(r.cw) + "\n";
  }
  return s;
}

// Writes <output_dir>/table_<mode>.csv and returns its path.
inline std::filesystem::path render_tables(const ReportSpec& spec) {
  const auto path = spec.output_dir / ("table_" + std::string(to_string(spec.mode)) + ".csv");
  write_text(path, format_table(table_rows(spec), spec.mode));
  return path;
}

// Plot geometry. A value v at epoch e maps to
//   x = left + (e - e_min) / (e_max - e_min) * plot_w   (centre when e_min == e_max)
//   y = top + plot_h - (v - v_min) / (v_max - v_min) * plot_h
// where [v_min, v_max] is the data range, widened by 0.5 on each side when flat.
struct CurveAxis {
  static constexpr double width = 640, height = 400;
  static constexpr double left = 70, right = 150, top = 30, bottom = 50;
  static constexpr double plot_w = width - left - right;
  static constexpr double plot_h = height - top - bottom;

  double e_min = 0, e_max = 0, v_min = 0, v_max = 0;

  void fit(double e_lo, double e_hi, double v_lo, double v_hi) {
    e_min = e_lo;
    e_max = e_hi;
    v_min = v_lo;
    v_max = v_hi;
    if (v_max == v_min) {
      v_min -= 0.5;
      v_max += 0.5;
    }
  }
  double x(double e) const { return e_max == e_min ? left + plot_w / 2 : left + (e - e_min) / (e_max - e_min) * plot_w; }
  double y(double v) const { return top + plot_h - (v - v_min) / (v_max - v_min) * plot_h; }
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '&': o += "&amp;"; break;
      case '<': o += "&lt;"; break;
      case '>': o += "&gt;"; break;
      case '"': o += "&quot;"; break;
      default: o += c;
    }
  }
  return o;
}

inline std::string fmt_coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

inline std::optional<double> metric_value(const MetricsRow& r, const std::string& metric) {
  if (metric == "loss_total") return r.loss_total;
  if (metric == "loss_ce") return r.loss_ce;
  if (metric == "loss_intra") return r.loss_intra;
  if (metric == "loss_inter") return r.loss_inter;
  if (metric == "acc_clean") return r.acc_clean;
  if (metric == "acc_fgsm") return r.acc_fgsm;
  if (metric == "acc_pgd") return r.acc_pgd;
  if (metric == "acc_cw") return r.acc_cw;
  throw ConfigError("unknown curve metric '" + metric + "'");
}

}  // namespace detail

inline const std::vector<std::string>& curve_metrics() {
  static const std::vector<std::string> m{"loss_total", "loss_ce", "loss_intra", "loss_inter",
                                          "acc_clean",  "acc_fgsm", "acc_pgd",  "acc_cw"};
  return m;
}

struct CurveSeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (epoch, value)
};

inline std::vector<CurveSeries> curve_series(const std::vector<std::pair<std::string, std::vector<MetricsRow>>>& runs,
                                             const std::string& metric, const std::string& split) {
  if (std::find(curve_metrics().begin(), curve_metrics().end(), metric) == curve_metrics().end()) {
    throw ConfigError("unknown curve metric '" + metric + "'");
  }
  std::vector<CurveSeries> out;
  for (const auto& [label, rows] : runs) {
    CurveSeries s{label, {}};
    for (const auto& r : rows) {
      if (r.split != split) continue;
      if (auto v = detail::metric_value(r, metric)) s.points.emplace_back(static_cast<double>(r.epoch), *v);
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline CurveAxis fit_axis(const std::vector<CurveSeries>& series) {
  double e_lo = std::numeric_limits<double>::infinity(), e_hi = -e_lo, v_lo = e_lo, v_hi = -e_lo;
  for (const auto& s : series)
    for (const auto& [e, v] : s.points) {
      e_lo = std::min(e_lo, e);
      e_hi = std::max(e_hi, e);
      v_lo = std::min(v_lo, v);
      v_hi = std::max(v_hi, v);
    }
  CurveAxis a;
  a.fit(e_lo, e_hi, v_lo, v_hi);
  return a;
}

inline std::string render_svg(const std::vector<CurveSeries>& series, const std::string& title,
                              const std::string& y_label) {
  using detail::fmt_coord;
  using detail::xml_escape;
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
  const CurveAxis a = fit_axis(series);
  const double x0 = CurveAxis::left, x1 = CurveAxis::left + CurveAxis::plot_w;
  const double y0 = CurveAxis::top, y1 = CurveAxis::top + CurveAxis::plot_h;
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt_coord(CurveAxis::width) + "\" height=\"" +
       fmt_coord(CurveAxis::height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt_coord(CurveAxis::width / 2) + "\" y=\"18\" text-anchor=\"middle\">" + xml_escape(title) +
       "</text>\n";
  s += "<g id=\"axes\" stroke=\"black\" fill=\"none\">\n";
  s += "<line x1=\"" + fmt_coord(x0) + "\" y1=\"" + fmt_coord(y1) + "\" x2=\"" + fmt_coord(x1) + "\" y2=\"" +
       fmt_coord(y1) + "\"/>\n";
  s += "<line x1=\"" + fmt_coord(x0) + "\" y1=\"" + fmt_coord(y0) + "\" x2=\"" + fmt_coord(x0) + "\" y2=\"" +
       fmt_coord(y1) + "\"/>\n";
  s += "</g>\n";
  s += "<text x=\"" + fmt_coord((x0 + x1) / 2) + "\" y=\"" + fmt_coord(CurveAxis::height - 10) +
       "\" text-anchor=\"middle\">epoch</text>\n";
  s += "<text x=\"15\" y=\"" + fmt_coord((y0 + y1) / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 15 " +
       fmt_coord((y0 + y1) / 2) + ")\">" + xml_escape(y_label) + "</text>\n";
  // Tick labels at the axis extremes.
  s += "<text x=\"" + fmt_coord(x0 - 5) + "\" y=\"" + fmt_coord(y1) + "\" text-anchor=\"end\">" +
       detail::fmt_metric(a.v_min) + "</text>\n";
  s += "<text x=\"" + fmt_coord(x0 - 5) + "\" y=\"" + fmt_coord(y0 + 10) + "\" text-anchor=\"end\">" +
       detail::fmt_metric(a.v_max) + "</text>\n";
  s += "<text x=\"" + fmt_coord(x0) + "\" y=\"" + fmt_coord(y1 + 16) + "\" text-anchor=\"middle\">" +
       detail::fmt_metric(a.e_min) + "</text>\n";
  s += "<text x=\"" + fmt_coord(x1) + "\" y=\"" + fmt_coord(y1 + 16) + "\" text-anchor=\"middle\">" +
       detail::fmt_metric(a.e_max) + "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const char* color = colors[i % (sizeof colors / sizeof colors[0])];
    std::string pts;
    for (const auto& [e, v] : series[i].points) pts += (pts.empty() ? "" : " ") + fmt_coord(a.x(e)) + "," + fmt_coord(a.y(v));
    s += "<polyline data-run=\"" + xml_escape(series[i].label) + "\" fill=\"none\" stroke=\"" + color +
         "\" stroke-width=\"2\" points=\"" + pts + "\"/>\n";
    if (series[i].points.size() == 1) {
      const auto& [e, v] = series[i].points.front();
      s += "<circle cx=\"" + fmt_coord(a.x(e)) + "\" cy=\"" + fmt_coord(a.y(v)) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    const double ly = y0 + 10 + 18 * static_cast<double>(i);
    s += "<line x1=\"" + fmt_coord(x1 + 15) + "\" y1=\"" + fmt_coord(ly) + "\" x2=\"" + fmt_coord(x1 + 35) + "\" y2=\"" +
         fmt_coord(ly) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    s += "<text x=\"" + fmt_coord(x1 + 40) + "\" y=\"" + fmt_coord(ly + 4) + "\">" + xml_escape(series[i].label) +
         "</text>\n";
  }
  s += "</svg>\n";
  return s;
}

// One SVG per (metric, split) that has data in at least one run, named
// <metric>_<split>.svg. Returns the written paths.
inline std::vector<std::filesystem::path> render_curves(const ReportSpec& spec) {
  spec.validate();
  std::vector<std::pair<std::string, std::vector<MetricsRow>>> runs;
  for (const auto& r : spec.runs) runs.emplace_back(r.label, read_metrics_csv(r.metrics));
  std::vector<std::filesystem::path> written;
  for (const char* split : {"train", "val"}) {
    for (const auto& metric : curve_metrics()) {
      const auto series = curve_series(runs, metric, split);
      const bool any = std::any_of(series.begin(), series.end(), [](const CurveSeries& s) { return !s.points.empty(); });
      if (!any) continue;
      const auto path = spec.output_dir / (metric + "_" + split + ".svg");
      write_text(path, render_svg(series, metric + " (" + split + ")", metric));
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace dflnet
