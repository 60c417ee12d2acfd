#include "mtsparse/evalstats.hpp"

#include <algorithm>
#include <cmath>

namespace mtsparse {

double normalize_return(double raw, const env::TaskContext& task) {
  const double achievable = task.achievable_reward();
  if (!(achievable > 0.0)) throw ConfigError("task " + task.name + " has no positive achievable reward");
  if (raw > achievable + 1e-9) {
    throw DataError("return " + std::to_string(raw) + " exceeds achievable reward " + std::to_string(achievable) +
                    " for " + task.name);
  }
  if (raw < 0.0) throw DataError("negative return for " + task.name);
  return raw / achievable;
}

double iqm(std::span<const double> samples) {
  if (samples.empty()) throw ContractViolation("iqm of an empty sample");
  std::vector<double> v(samples.begin(), samples.end());
  std::sort(v.begin(), v.end());
  const std::size_t trim = v.size() / 4;
  double s = 0.0;
  for (std::size_t i = trim; i < v.size() - trim; ++i) s += v[i];
  return s / static_cast<double>(v.size() - 2 * trim);
}

double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw ContractViolation("quantile of an empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

AggregateResult stratified_bootstrap_ci(const ScoreMatrix& scores, std::mt19937_64& rng, int replicates,
                                        double level) {
  if (scores.empty() || scores.front().empty()) throw ContractViolation("score matrix needs at least one run and task");
  if (replicates < 1) throw ConfigError("bootstrap needs at least one replicate");
  if (!(level > 0.0 && level < 1.0)) throw ConfigError("confidence level must lie in (0, 1)");
  const std::size_t runs = scores.size();
  const std::size_t tasks = scores.front().size();
  std::vector<double> pooled;
  for (const auto& row : scores) {
    if (row.size() != tasks) throw DataError("score matrix rows differ in task count");
    for (double v : row) {
      if (!std::isfinite(v)) throw DataError("non-finite score");
      pooled.push_back(v);
    }
  }
  AggregateResult out;
  out.point = iqm(pooled);
  out.replicates = replicates;
  if (runs == 1) {
    out.low = out.high = out.point;
    out.warning = "single run: degenerate interval";
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, runs - 1);
  std::vector<double> stats(static_cast<std::size_t>(replicates));
  std::vector<double> sample(runs * tasks);
  for (auto& stat : stats) {
    for (std::size_t t = 0; t < tasks; ++t) {
      for (std::size_t r = 0; r < runs; ++r) sample[t * runs + r] = scores[pick(rng)][t];
    }
    stat = iqm(sample);
  }
  std::sort(stats.begin(), stats.end());
  const double alpha = 0.5 * (1.0 - level);
  out.low = quantile_sorted(stats, alpha);
  out.high = quantile_sorted(stats, 1.0 - alpha);
  return out;
}

double bootstrap_coverage(int trials, int runs, int tasks, std::uint64_t seed, int replicates, double level) {
  std::mt19937_64 data_rng(seed);
  std::mt19937_64 boot_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal(0.5, 0.1);
  int covered = 0;
  for (int trial = 0; trial < trials; ++trial) {
    ScoreMatrix m(static_cast<std::size_t>(runs), std::vector<double>(static_cast<std::size_t>(tasks)));
    for (auto& row : m) {
      for (double& v : row) v = normal(data_rng);
    }
    const AggregateResult r = stratified_bootstrap_ci(m, boot_rng, replicates, level);
    if (r.low <= 0.5 && 0.5 <= r.high) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(trials);
}

}  // namespace mtsparse
