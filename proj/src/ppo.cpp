#include "mtsparse/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mtsparse {

void PPOConfig::validate() const {
  auto positive = [](double v, const char* field) {
    if (!(v > 0.0)) throw ConfigError(std::string("ppo.") + field + " must be positive");
  };
  positive(gamma, "gamma");
  positive(gae_lambda, "gae_lambda");
  positive(entropy_coef, "entropy_coef");
  positive(actor_lr, "actor_lr");
  positive(critic_lr, "critic_lr");
  positive(policy_epochs, "policy_epochs");
  positive(critic_epochs, "critic_epochs");
  positive(static_cast<double>(policy_minibatch), "policy_minibatch");
  positive(static_cast<double>(critic_batch), "critic_batch");
  positive(static_cast<double>(steps_per_epoch), "steps_per_epoch");
  positive(epochs, "epochs");
  positive(eval_episodes, "eval_episodes");
  positive(static_cast<double>(eval_frequency), "eval_frequency");
  if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("ppo.clip must lie in (0, 1)");
  if (gamma > 1.0 || gae_lambda > 1.0) throw ConfigError("ppo.gamma and ppo.gae_lambda must not exceed 1");
}

GaeResult compute_gae(std::span<const double> rewards, std::span<const double> values, std::span<const std::uint8_t> dones,
                      double bootstrap_value, double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || dones.size() != n) throw ConfigError("compute_gae: arrays must be aligned");
  GaeResult out{Vector(static_cast<Index>(n)), Vector(static_cast<Index>(n))};
  double next_value = bootstrap_value;
  double next_adv = 0.0;
  for (std::size_t k = n; k-- > 0;) {
    const double live = dones[k] ? 0.0 : 1.0;
    const double delta = rewards[k] + gamma * next_value * live - values[k];
    next_adv = delta + gamma * lambda * live * next_adv;
    out.advantages(static_cast<Index>(k)) = next_adv;
    out.returns(static_cast<Index>(k)) = next_adv + values[k];
    next_value = values[k];
  }
  return out;
}

void normalize_advantages(Eigen::Ref<Vector> adv) {
  if (adv.size() == 0) return;
  const double mu = adv.mean();
  adv.array() -= mu;
  if (adv.size() == 1) return;
  const double sd = std::sqrt(adv.squaredNorm() / static_cast<double>(adv.size()));
  if (sd > 0.0) adv /= sd;
  // Remove the rounding residue of the centring step.
  adv.array() -= adv.mean();
}

double ppo_policy_loss(std::span<const double> logp_new, std::span<const double> logp_old,
                       std::span<const double> advantages, double clip, std::span<const double> entropy,
                       double entropy_coef) {
  const std::size_t n = logp_new.size();
  if (n == 0 || logp_old.size() != n || advantages.size() != n || entropy.size() != n) {
    throw ConfigError("ppo_policy_loss: arrays must be aligned and non-empty");
  }
  double surrogate = 0.0;
  double ent = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ratio = std::exp(logp_new[i] - logp_old[i]);
    if (!std::isfinite(ratio)) throw NumericError("non-finite importance ratio");
    const double clipped = std::clamp(ratio, 1.0 - clip, 1.0 + clip);
    surrogate += std::min(ratio * advantages[i], clipped * advantages[i]);
    ent += entropy[i];
  }
  const double dn = static_cast<double>(n);
  return -surrogate / dn - entropy_coef * ent / dn;
}

double critic_loss(std::span<const double> predicted, std::span<const double> returns) {
  if (predicted.size() != returns.size() || predicted.empty()) {
    throw ConfigError("critic_loss: arrays must be aligned and non-empty");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) s += (predicted[i] - returns[i]) * (predicted[i] - returns[i]);
  return s / static_cast<double>(predicted.size());
}

std::vector<Vector> pcgrad_surgery(std::span<const Vector> grads, std::mt19937_64& rng) {
  if (grads.empty()) throw ConfigError("pcgrad needs at least one task gradient");
  for (const Vector& g : grads) {
    if (g.size() != grads[0].size()) throw ConfigError("pcgrad gradients differ in length");
  }
  std::vector<Vector> out(grads.begin(), grads.end());
  std::vector<std::size_t> order(grads.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t j : order) {
      if (j == i) continue;
      const double norm2 = grads[j].squaredNorm();
      if (norm2 == 0.0) continue;
      const double dot = out[i].dot(grads[j]);
      if (dot < 0.0) out[i] -= (dot / norm2) * grads[j];
    }
  }
  return out;
}

Vector pcgrad_project(std::span<const Vector> grads, std::mt19937_64& rng) {
  std::vector<Vector> surgered = pcgrad_surgery(grads, rng);
  Vector total = Vector::Zero(surgered[0].size());
  for (const Vector& g : surgered) total += g;
  return total;
}

}  // namespace mtsparse
