#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse {

struct PPOConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double actor_lr = 1e-3;
  double critic_lr = 1e-3;
  int policy_epochs = 8;
  int critic_epochs = 1;
  Index policy_minibatch = 256;
  Index critic_batch = 2000;
  Index steps_per_epoch = 2000;
  int epochs = 60;
  int eval_episodes = 10;
  Index eval_frequency = 10000;
  /// Argmax actions during evaluation instead of sampling from the policy.
  bool eval_greedy = false;

  void validate() const;
  Index total_timesteps() const { return steps_per_epoch * epochs; }
};

struct GaeResult {
  Vector advantages;
  Vector returns;
};

/// delta_t = r_t + gamma v_{t+1} (1 - done_t) - v_t,
/// A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}. v_T is `bootstrap_value`.
GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                      double bootstrap_value, double gamma, double lambda);

/// In-place standardization to mean 0 and (population) std 1. Single elements become 0.
void normalize_advantages(Eigen::Ref<Vector> adv);

/// -mean(min(r A, clip(r, 1-e, 1+e) A)) - coef * mean(H), r = exp(logp_new - logp_old).
/// Throws NumericError when a ratio is not finite.
double ppo_policy_loss(std::span<const double> logp_new, std::span<const double> logp_old,
                       std::span<const double> advantages, double clip, std::span<const double> entropy,
                       double entropy_coef);

double critic_loss(std::span<const double> predicted, std::span<const double> returns);

/// Gradient surgery. Each g_i is projected off every other task's original
/// gradient it conflicts with (negative dot), visiting the others in a random
/// order drawn from `rng`. Zero-norm gradients are never projected against.
std::vector<Vector> pcgrad_surgery(std::span<const Vector> grads, std::mt19937_64& rng);
/// Sum of pcgrad_surgery.
Vector pcgrad_project(std::span<const Vector> grads, std::mt19937_64& rng);

}  // namespace mtsparse
