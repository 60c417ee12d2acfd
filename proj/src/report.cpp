#include "mtsparse/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mtsparse/experiment.hpp"

namespace mtsparse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, const fs::path& file, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size() || !std::isfinite(v)) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError(file.string() + ":" + std::to_string(line) + ": bad number '" + s + "'");
  }
}

const std::vector<std::string> kTailColumns{
    "sparsity_global", "sparsity_actor", "sparsity_critic", "sparsity_trunk", "fisher_trace",
    "effective_rank", "dormant_actor_pct", "dormant_critic_pct", "policy_loss", "value_loss",
    "train_return", "episodes", "prune_events", "set_events", "redo_reinitialized", "resets_performed"};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

struct Panel {
  double x0, y0, w, h;
  std::string title;
  std::string xlabel;
};

/// Draws axes plus one band and line per series into `svg`.
void draw_panel(std::ostringstream& svg, const Panel& p, const std::vector<std::pair<std::string, const std::vector<SeriesPoint>*>>& series,
                std::optional<std::pair<double, double>> fixed_y) {
  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool any = false;
  for (const auto& [name, pts] : series) {
    for (const auto& pt : *pts) {
      const auto x = static_cast<double>(pt.timestep);
      if (!any) {
        xmin = xmax = x;
        ymin = pt.low;
        ymax = pt.high;
        any = true;
      }
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
      ymin = std::min(ymin, pt.low);
      ymax = std::max(ymax, pt.high);
    }
  }
  if (fixed_y) std::tie(ymin, ymax) = *fixed_y;
  if (xmax <= xmin) xmax = xmin + 1;
  if (ymax <= ymin) {
    ymin -= 0.5;
    ymax += 0.5;
  }
  const double left = p.x0 + 55, right = p.x0 + p.w - 10, top = p.y0 + 30, bottom = p.y0 + p.h - 40;
  auto sx = [&](double x) { return left + (x - xmin) / (xmax - xmin) * (right - left); };
  auto sy = [&](double y) { return bottom - (y - ymin) / (ymax - ymin) * (bottom - top); };

  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << p.y0 + 18
      << "\" text-anchor=\"middle\" font-size=\"14\">" << p.title << "</text>\n";
  svg << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << right - left << "\" height=\"" << bottom - top
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double yv = ymin + (ymax - ymin) * i / 4.0;
    const double xv = xmin + (xmax - xmin) * i / 4.0;
    svg << "<text x=\"" << left - 5 << "\" y=\"" << sy(yv) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << fmt(yv)
        << "</text>\n";
    svg << "<text x=\"" << sx(xv) << "\" y=\"" << bottom + 14 << "\" text-anchor=\"middle\" font-size=\"10\">"
        << fmt(xv) << "</text>\n";
  }
  svg << "<text x=\"" << (left + right) / 2 << "\" y=\"" << bottom + 30 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << p.xlabel << "</text>\n";

  std::size_t color = 0;
  for (const auto& [name, pts] : series) {
    const char* c = kPalette[color++ % std::size(kPalette)];
    if (pts->empty()) continue;
    const bool band = std::any_of(pts->begin(), pts->end(), [](const SeriesPoint& q) { return q.runs > 1; });
    if (band) {
      svg << "<polygon fill=\"" << c << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
      for (const auto& q : *pts) svg << sx(static_cast<double>(q.timestep)) << ',' << sy(q.high) << ' ';
      for (auto it = pts->rbegin(); it != pts->rend(); ++it) svg << sx(static_cast<double>(it->timestep)) << ',' << sy(it->low) << ' ';
      svg << "\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"2\" points=\"";
    for (const auto& q : *pts) svg << sx(static_cast<double>(q.timestep)) << ',' << sy(q.point) << ' ';
    svg << "\"/>\n";
  }
}

std::string legend(const std::vector<std::string>& names, double x, double y) {
  std::ostringstream out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    const double yy = y + 16.0 * static_cast<double>(i);
    out << "<rect x=\"" << x << "\" y=\"" << yy - 9 << "\" width=\"12\" height=\"4\" fill=\""
        << kPalette[i % std::size(kPalette)] << "\"/>\n";
    out << "<text x=\"" << x + 18 << "\" y=\"" << yy - 4 << "\" font-size=\"11\">" << names[i] << "</text>\n";
  }
  return out.str();
}

json points_json(const std::vector<SeriesPoint>& pts) {
  json arr = json::array();
  for (const auto& p : pts) {
    arr.push_back({{"epoch", p.epoch}, {"timestep", p.timestep}, {"runs", p.runs},
                   {"point", p.point}, {"low", p.low}, {"high", p.high}});
  }
  return arr;
}

}  // namespace

RunCsv read_run_csv(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError(file.string() + ": cannot read");
  RunCsv run;
  run.file = file;
  std::string line;
  if (!std::getline(in, line) || line != kRunLogSchema) {
    throw DataError(file.string() + ": missing or unsupported schema comment (expected '" + kRunLogSchema + "')");
  }
  if (!std::getline(in, line)) throw DataError(file.string() + ": missing header row");
  const std::vector<std::string> header = split(line);
  const std::vector<std::string> lead{"run_id", "seed", "treatment", "epoch", "timestep"};
  if (header.size() < lead.size() + kTailColumns.size() || !std::equal(lead.begin(), lead.end(), header.begin()) ||
      !std::equal(kTailColumns.rbegin(), kTailColumns.rend(), header.rbegin())) {
    throw DataError(file.string() + ": header does not match the run log schema");
  }
  const std::size_t task_count = header.size() - lead.size() - kTailColumns.size();
  for (std::size_t i = 0; i < task_count; ++i) {
    const std::string& col = header[lead.size() + i];
    if (col.rfind("eval_", 0) != 0) throw DataError(file.string() + ": unexpected column '" + col + "'");
    run.tasks.push_back(col.substr(5));
  }
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::vector<std::string> cells = split(line);
    if (cells.size() != header.size()) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                      " columns, found " + std::to_string(cells.size()));
    }
    if (run.rows.empty()) {
      run.run_id = cells[0];
      run.seed = static_cast<std::uint64_t>(parse_number(cells[1], file, line_no));
      run.treatment = cells[2];
    } else if (cells[0] != run.run_id) {
      throw DataError(file.string() + ":" + std::to_string(line_no) + ": run id changes within one file");
    }
    RunCsv::Row row;
    row.epoch = static_cast<int>(parse_number(cells[3], file, line_no));
    row.timestep = static_cast<Index>(parse_number(cells[4], file, line_no));
    for (std::size_t i = 0; i < task_count; ++i) {
      const std::string& cell = cells[lead.size() + i];
      row.eval.push_back(cell.empty() ? std::nullopt : std::optional<double>(parse_number(cell, file, line_no)));
    }
    for (std::size_t i = 0; i < kTailColumns.size(); ++i) {
      const std::string& cell = cells[lead.size() + task_count + i];
      if (!cell.empty()) row.metrics[kTailColumns[i]] = parse_number(cell, file, line_no);
    }
    run.rows.push_back(std::move(row));
  }
  const std::string suffix = "-seed" + std::to_string(run.seed);
  run.series = run.run_id.size() > suffix.size() && run.run_id.ends_with(suffix)
                   ? run.run_id.substr(0, run.run_id.size() - suffix.size())
                   : run.run_id;
  return run;
}

AggregateReport aggregate_runs(std::span<const RunCsv> runs, int replicates, std::uint64_t seed) {
  AggregateReport report;
  std::map<std::string, std::vector<const RunCsv*>> groups;
  for (const RunCsv& r : runs) {
    if (r.rows.empty()) {
      report.warnings.push_back(r.file.filename().string() + ": no rows");
      continue;
    }
    groups[r.series].push_back(&r);
  }
  std::mt19937_64 rng(seed);
  for (auto& [name, members] : groups) {
    std::sort(members.begin(), members.end(), [](const RunCsv* a, const RunCsv* b) { return a->seed < b->seed; });
    SeriesAggregate s;
    s.name = name;
    s.treatment = members.front()->treatment;
    s.tasks = members.front()->tasks;
    s.runs = static_cast<int>(members.size());
    for (const RunCsv* m : members) {
      if (m->tasks != s.tasks || m->treatment != s.treatment) {
        throw DataError(m->file.string() + ": task list or treatment differs from the rest of series " + name);
      }
    }
    if (s.runs == 1) report.warnings.push_back(name + ": single run, intervals are degenerate");

    std::map<int, std::pair<Index, ScoreMatrix>> eval_by_epoch;
    std::map<std::string, std::map<int, std::pair<Index, ScoreMatrix>>> metric_by_epoch;
    for (const RunCsv* m : members) {
      for (const auto& row : m->rows) {
        if (std::all_of(row.eval.begin(), row.eval.end(), [](const auto& v) { return v.has_value(); }) &&
            !row.eval.empty()) {
          std::vector<double> scores;
          for (const auto& v : row.eval) scores.push_back(*v);
          auto& slot = eval_by_epoch[row.epoch];
          slot.first = row.timestep;
          slot.second.push_back(std::move(scores));
        }
        for (const std::string& metric : plasticity_metric_names()) {
          const auto it = row.metrics.find(metric);
          if (it == row.metrics.end()) continue;
          auto& slot = metric_by_epoch[metric][row.epoch];
          slot.first = row.timestep;
          slot.second.push_back({it->second});
        }
      }
    }
    auto summarize = [&](int epoch, Index timestep, const ScoreMatrix& m) {
      const AggregateResult a = stratified_bootstrap_ci(m, rng, replicates);
      return SeriesPoint{epoch, timestep, static_cast<int>(m.size()), a.point, a.low, a.high};
    };
    for (const auto& [epoch, slot] : eval_by_epoch) s.curve.push_back(summarize(epoch, slot.first, slot.second));
    if (!s.curve.empty()) {
      // Final score: each run's last evaluation.
      ScoreMatrix last;
      Index timestep = 0;
      int epoch = 0;
      for (const RunCsv* m : members) {
        for (auto it = m->rows.rbegin(); it != m->rows.rend(); ++it) {
          if (!it->eval.empty() && it->eval.front()) {
            std::vector<double> scores;
            for (const auto& v : it->eval) scores.push_back(v.value_or(0.0));
            last.push_back(std::move(scores));
            timestep = std::max(timestep, it->timestep);
            epoch = std::max(epoch, it->epoch);
            break;
          }
        }
      }
      s.final_score = summarize(epoch, timestep, last);
    }
    for (const auto& [metric, epochs] : metric_by_epoch) {
      for (const auto& [epoch, slot] : epochs) s.metrics[metric].push_back(summarize(epoch, slot.first, slot.second));
    }
    report.series.push_back(std::move(s));
  }
  return report;
}

std::string aggregate_json(const AggregateReport& report) {
  json doc;
  doc["schema"] = "mtsparse-aggregate v1";
  doc["series"] = json::object();
  for (const auto& s : report.series) {
    json j;
    j["treatment"] = s.treatment;
    j["tasks"] = s.tasks;
    j["runs"] = s.runs;
    j["curve"] = points_json(s.curve);
    if (s.final_score) j["final"] = points_json({*s.final_score}).at(0);
    j["metrics"] = json::object();
    for (const auto& [metric, pts] : s.metrics) j["metrics"][metric] = points_json(pts);
    doc["series"][s.name] = std::move(j);
  }
  doc["warnings"] = report.warnings;
  return doc.dump(2) + "\n";
}

std::string learning_curve_svg(const AggregateReport& report) {
  std::ostringstream svg;
  const double w = 760, h = 440;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::vector<std::pair<std::string, const std::vector<SeriesPoint>*>> series;
  std::vector<std::string> names;
  for (const auto& s : report.series) {
    series.emplace_back(s.name, &s.curve);
    names.push_back(s.name);
  }
  draw_panel(svg, {0, 0, w - 170, h, "Normalized IQM return", "timestep"}, series, std::pair{0.0, 1.0});
  svg << legend(names, w - 160, 50);
  svg << "</svg>\n";
  return svg.str();
}

std::string plasticity_svg(const AggregateReport& report) {
  const std::vector<std::pair<std::string, std::string>> panels{{"fisher_trace", "Fisher trace"},
                                                                {"effective_rank", "Effective rank"},
                                                                {"dormant_actor_pct", "Actor dormant %"},
                                                                {"dormant_critic_pct", "Critic dormant %"}};
  const double pw = 300, h = 320;
  const double w = pw * static_cast<double>(panels.size()) + 170;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  static const std::vector<SeriesPoint> none;
  std::vector<std::string> names;
  for (const auto& s : report.series) names.push_back(s.name);
  for (std::size_t i = 0; i < panels.size(); ++i) {
    std::vector<std::pair<std::string, const std::vector<SeriesPoint>*>> series;
    for (const auto& s : report.series) {
      const auto it = s.metrics.find(panels[i].first);
      series.emplace_back(s.name, it == s.metrics.end() ? &none : &it->second);
    }
    draw_panel(svg, {pw * static_cast<double>(i), 0, pw, h, panels[i].second, "timestep"}, series, std::nullopt);
  }
  svg << legend(names, w - 160, 50);
  svg << "</svg>\n";
  return svg.str();
}

int aggregate_directory(const fs::path& runs_dir, const fs::path& out_dir, std::ostream& err) {
  if (!fs::is_directory(runs_dir)) {
    err << "error: " << runs_dir.string() << " is not a directory\n";
    return 4;
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(runs_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    err << "error: no run logs under " << runs_dir.string() << '\n';
    return 4;
  }
  std::vector<RunCsv> runs;
  try {
    for (const auto& f : files) runs.push_back(read_run_csv(f));
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  AggregateReport report;
  try {
    report = aggregate_runs(runs);
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return 3;
  }
  for (const auto& w : report.warnings) err << "warning: " << w << '\n';
  fs::create_directories(out_dir);
  std::ofstream(out_dir / "aggregate.json", std::ios::binary) << aggregate_json(report);
  std::ofstream(out_dir / "learning_curve.svg", std::ios::binary) << learning_curve_svg(report);
  std::ofstream(out_dir / "plasticity.svg", std::ios::binary) << plasticity_svg(report);
  return 0;
}

}  // namespace mtsparse
