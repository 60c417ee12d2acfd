#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtsparse/evalstats.hpp"

namespace mtsparse {

/// One parsed run log.
struct RunCsv {
  struct Row {
    int epoch = 0;
    Index timestep = 0;
    std::vector<std::optional<double>> eval;
    /// Metric name -> value for the non-empty metric columns.
    std::map<std::string, double> metrics;
  };

  std::filesystem::path file;
  std::string run_id;
  std::string series;  // run id without its seed suffix
  std::string treatment;
  std::uint64_t seed = 0;
  std::vector<std::string> tasks;
  std::vector<Row> rows;
};

/// Throws DataError naming the file on schema or value mismatches.
RunCsv read_run_csv(const std::filesystem::path& file);

struct SeriesPoint {
  int epoch = 0;
  Index timestep = 0;
  int runs = 0;
  double point = 0.0;
  double low = 0.0;
  double high = 0.0;
};

struct SeriesAggregate {
  std::string name;
  std::string treatment;
  std::vector<std::string> tasks;
  int runs = 0;
  std::optional<SeriesPoint> final_score;
  std::vector<SeriesPoint> curve;
  std::map<std::string, std::vector<SeriesPoint>> metrics;
};

struct AggregateReport {
  std::vector<SeriesAggregate> series;
  std::vector<std::string> warnings;
};

inline const std::vector<std::string>& plasticity_metric_names() {
  static const std::vector<std::string> names{"fisher_trace", "effective_rank", "dormant_actor_pct",
                                              "dormant_critic_pct"};
  return names;
}

/// Groups runs by series and computes IQM curves with stratified bootstrap CIs.
AggregateReport aggregate_runs(std::span<const RunCsv> runs, int replicates = 2000, std::uint64_t seed = 0);

std::string aggregate_json(const AggregateReport& report);
std::string learning_curve_svg(const AggregateReport& report);
std::string plasticity_svg(const AggregateReport& report);

/// Reads every run CSV under `runs_dir` and writes aggregate.json,
/// learning_curve.svg and plasticity.svg into `out_dir`. Returns the exit code:
/// 0 on success, 3 on a schema mismatch, 4 when no run logs exist.
int aggregate_directory(const std::filesystem::path& runs_dir, const std::filesystem::path& out_dir, std::ostream& err);

}  // namespace mtsparse
