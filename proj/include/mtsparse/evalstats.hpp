#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtsparse/envs.hpp"

namespace mtsparse {

/// scores[run][task] of normalized evaluation returns.
using ScoreMatrix = std::vector<std::vector<double>>;

struct AggregateResult {
  double point = 0.0;
  double low = 0.0;
  double high = 0.0;
  int replicates = 0;
  std::string warning;
};

/// raw / achievable_reward. Throws DataError if raw exceeds the achievable reward.
double normalize_return(double raw, const env::TaskContext& task);

/// Mean after dropping floor(n/4) samples from each end. Throws ContractViolation when empty.
double iqm(std::span<const double> samples);

/// Percentile interval of pooled-entry IQMs over replicates that resample runs
/// with replacement independently within each task column.
AggregateResult stratified_bootstrap_ci(const ScoreMatrix& scores, std::mt19937_64& rng, int replicates = 2000,
                                        double level = 0.95);

/// Linear-interpolated quantile of sorted data, q in [0, 1].
double quantile_sorted(std::span<const double> sorted, double q);

/// Fraction of `trials` synthetic N(mu, sd) score matrices of size runs x tasks
/// whose bootstrap interval contains the population IQM (which equals mu).
double bootstrap_coverage(int trials, int runs, int tasks, std::uint64_t seed, int replicates = 2000,
                          double level = 0.95);

}  // namespace mtsparse
