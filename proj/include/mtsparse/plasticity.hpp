#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtsparse/adam.hpp"
#include "mtsparse/arch.hpp"

namespace mtsparse {

/// Ring buffer of (observation, task id) pairs. Observations are small
/// integer grids and are stored as bytes.
class PlasticityBuffer {
 public:
  struct Batch {
    RowMatrix obs;
    std::vector<int> tasks;
  };

  PlasticityBuffer(Index capacity, Index obs_size);

  /// Throws DataError if an entry is not an integer in [0, 255].
  void add(const Eigen::Ref<const Eigen::RowVectorXd>& obs, int task);
  Index size() const { return size_; }
  Index capacity() const { return capacity_; }
  Index obs_size() const { return obs_size_; }
  /// i-th stored item, oldest first.
  Batch at(Index i) const;
  /// Up to `n` distinct items drawn without replacement (all items if n >= size).
  /// Throws StateError on an empty buffer.
  Batch sample(Index n, std::mt19937_64& rng) const;

 private:
  Index physical(Index i) const;

  Index capacity_;
  Index obs_size_;
  Index size_ = 0;
  Index head_ = 0;
  std::vector<std::uint8_t> obs_;
  std::vector<int> tasks_;
};

struct ReDoConfig {
  double tau = 0.001;
  Index frequency = 5000;
  Index batch = 1024;
  void validate() const;
};

struct ResetConfig {
  Index frequency = 100000;
  int max_resets = 2;
  void validate() const;
};

struct MetricsConfig {
  Index buffer_capacity = 100000;
  Index dormancy_batch = 1024;
  Index fisher_batch = 1024;
  Index rank_batch = 1024;
  double tau = 0.001;
  double rank_delta = 0.01;
  void validate() const;
};

struct PlasticitySnapshot {
  int epoch = 0;
  double dormant_actor = 0.0;
  double dormant_critic = 0.0;
  int effective_rank = 0;
  double fisher_trace = 0.0;
};

/// Mean |h| per unit over batch (and spatial positions for conv layers laid
/// out as [B, units*positions]).
Vector unit_mean_abs(const RowMatrix& activations, Index units, Index positions = 1);
/// s_i = m_i / mean_k m_k; all zeros when the layer mean is 0.
Vector scores_from_mean_abs(const Vector& mean_abs);
/// scores_from_mean_abs(unit_mean_abs(activations)) for a dense [B,H] layer.
Vector normalized_activation_scores(const RowMatrix& activations);

struct LayerDormancy {
  std::string name;
  Side side = Side::Shared;
  Index units = 0;
  Index dormant = 0;
  std::vector<Index> flagged;
};

struct DormancyResult {
  std::vector<LayerDormancy> layers;
  /// Shared layers count on both sides.
  double actor = 0.0;
  double critic = 0.0;
};

/// Scores every hidden layer of `net` on the batch. A unit is dormant iff s_i <= tau.
/// Head layers see only rows of their own task; heads without rows are skipped.
DormancyResult dormancy(ActorCritic& net, const PlasticityBuffer::Batch& batch, double tau);

struct FisherResult {
  double trace = 0.0;
  Index used = 0;
  Index skipped = 0;
  /// Set when more than 1% of samples were skipped.
  std::string warning;
};

/// Mean over the batch of ||grad log pi(a|s)||^2 with a ~ pi(.|s), over all
/// trainable parameters upstream of the logits.
FisherResult fisher_trace(ActorCritic& net, const PlasticityBuffer::Batch& batch, std::mt19937_64& rng);

/// min k with (sum_{i<=k} sigma_i) / (sum sigma) >= 1 - delta; 0 when all sigma are 0.
int effective_rank_from_singular_values(const Vector& sigma_descending, double delta);
int effective_rank(const RowMatrix& features, double delta);

struct ReDoResult {
  Index count = 0;
  DormancyResult flagged;
};

/// Re-draws incoming weights and bias of every dormant unit (mask kept),
/// zeroes its outgoing weights and clears the optimizer moments of every
/// touched slot.
ReDoResult redo_reinit(ActorCritic& net, const PlasticityBuffer::Batch& batch, double tau, std::mt19937_64& rng,
                       std::span<Adam* const> optimizers);

/// Re-draws every task head (actor and critic) and clears their moments.
void reset_heads(ActorCritic& net, std::mt19937_64& rng, std::span<Adam* const> optimizers);

/// Number of resets to perform when the step counter moves from `from` to `to`.
int resets_due(Index from, Index to, const ResetConfig& cfg, int performed);

/// Slots of the incoming weights of unit `u` in `layer`.
std::vector<Index> incoming_slots(const NeuronLayer& layer, Index u);
/// Slots of `consumer` reading unit `u`.
std::vector<Index> outgoing_slots(const NeuronLayer::Consumer& consumer, Index u);

}  // namespace mtsparse
