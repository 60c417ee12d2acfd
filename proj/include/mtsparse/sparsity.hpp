#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse {

struct GMPConfig {
  double final_sparsity = 0.95;
  Index frequency = 500;
  double start_fraction = 0.05;
  double end_fraction = 0.80;
  Index total_steps = 120000;
  bool prune_bias = false;
  bool include_heads = true;

  double t_start() const { return start_fraction * static_cast<double>(total_steps); }
  double t_end() const { return end_fraction * static_cast<double>(total_steps); }
  void validate() const;
};

struct SETConfig {
  double sparsity = 0.95;
  double rewire_fraction = 0.3;
  /// Kept for config compatibility; the global sparsity target decides ERK scaling.
  double erk_density = 11.0;
  Index frequency = 2000;
  bool include_heads = true;

  void validate() const;
};

struct LayerSparsity {
  std::string name;
  Index nonzero = 0;
  Index total = 0;
  double density = 1.0;
};

struct SparsityReport {
  std::vector<LayerSparsity> layers;
  double global_sparsity = 0.0;
  Index pruned = 0;
  Index regrown = 0;
  /// Set when an operation was skipped or capped.
  std::string warning;

  Index nonzero() const;
  Index total() const;
};

/// Cubic schedule: 0 before t_start, rho_F after t_end and
/// rho_F * (1 - (1 - (t - t_start)/(t_end - t_start))^3) in between.
double gmp_target_sparsity(double t, const GMPConfig& cfg);

/// Mask counts over the sparsifiable parameters in `params`.
SparsityReport measure_sparsity(std::span<MaskedParam* const> params);

/// Global magnitude pruning: masks the smallest-|w| unmasked weights across all
/// sparsifiable parameters jointly until floor(target * N) are masked. Ties
/// break by ascending flat index over the concatenated parameters. Never
/// unmasks; a target below the current sparsity yields a warning and no change.
SparsityReport prune_to_sparsity(std::span<MaskedParam* const> params, double target);

/// Number of weights of a layer described by `spec`.
Index layer_numel(const LayerSpec& spec);

/// ERK densities d_l = min(1, c (fan_in + fan_out) / (fan_in fan_out)) with c
/// found by bisection so the kept mass equals (1 - s) of the total.
std::vector<double> erk_densities(std::span<const LayerSpec> layers, double sparsity);
/// Integer kept counts from erk_densities, rounded by largest remainder so the
/// total equals round((1 - s) N). Throws ConfigError if a layer would keep nothing.
std::vector<Index> erk_kept_counts(std::span<const LayerSpec> layers, double sparsity);
/// Masks with the ERK kept counts at uniformly random positions.
std::vector<Tensor> erk_init_masks(std::span<const LayerSpec> layers, double sparsity, std::mt19937_64& rng);
/// Applies ERK masks to sparsifiable parameters (values zeroed under the mask).
SparsityReport apply_erk_masks(std::span<MaskedParam* const> params, double sparsity, std::mt19937_64& rng);

/// One SET evolution: per layer, prune floor(fraction * active) smallest-|w|
/// active weights and regrow as many at previously masked positions, drawn
/// uniformly and initialized from the layer's init distribution.
SparsityReport set_evolve(std::span<MaskedParam* const> params, const SETConfig& cfg, std::mt19937_64& rng);

/// Number of multiples of `frequency` in (from, to].
Index events_crossed(Index from, Index to, Index frequency);

}  // namespace mtsparse
