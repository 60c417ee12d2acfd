#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mtsparse/adam.hpp"
#include "mtsparse/arch.hpp"
#include "mtsparse/envs.hpp"
#include "mtsparse/plasticity.hpp"
#include "mtsparse/ppo.hpp"
#include "mtsparse/sparsity.hpp"

namespace mtsparse {

enum class Treatment { Dense, Gmp, Set, Redo, Reset, WeightDecay, LayerNorm, GmpWd, GmpPcgrad, Pcgrad };

Treatment treatment_from_name(const std::string& name);
std::string treatment_name(Treatment t);
std::vector<std::string> treatment_names();

struct TreatmentFlags {
  bool gmp = false;
  bool set = false;
  bool redo = false;
  bool reset = false;
  bool weight_decay = false;
  bool layer_norm = false;
  bool pcgrad = false;
};
TreatmentFlags flags_of(Treatment t);

struct TrainerConfig {
  std::vector<env::TaskContext> tasks;
  ArchitectureSpec arch;
  PPOConfig ppo;
  GMPConfig gmp;
  SETConfig set;
  ReDoConfig redo;
  ResetConfig reset;
  MetricsConfig metrics;
  Treatment treatment = Treatment::Dense;
  double weight_decay = 1e-6;
  std::uint64_t seed = 0;
  bool measure = true;

  /// Fills derived fields (task count, LayerNorm flag, GMP horizon) and validates.
  void finalize();
};

struct EvalResult {
  std::vector<double> raw;         // mean raw return per task
  std::vector<double> normalized;  // mean normalized return per task
};

struct EpochLog {
  int epoch = 0;
  Index timestep = 0;
  std::optional<EvalResult> eval;
  SparsityReport sparsity;
  double sparsity_actor = 0.0;
  double sparsity_critic = 0.0;
  double sparsity_trunk = 0.0;
  std::optional<PlasticitySnapshot> metrics;
  int prune_events = 0;
  int set_events = 0;
  Index redo_reinitialized = 0;
  int resets_performed = 0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  int episodes = 0;
  double train_return = 0.0;
  std::vector<std::string> warnings;
};

/// Uniform task draw made at every episode boundary.
int sample_task(std::mt19937_64& rng, int num_tasks);

/// Independent seeded streams derived from the run seed.
struct RngStreams {
  explicit RngStreams(std::uint64_t seed);
  std::mt19937_64 init, env, policy, shuffle, sparsity, buffer, eval, intervention, metrics, surgery;
};

class Trainer;

/// Per-epoch callback fired after the PPO update. Hooks run in phase order
/// (sparsity, intervention, measurement), then in registration order.
struct Hook {
  enum class Phase { Sparsity = 0, Intervention = 1, Measurement = 2 };
  std::string name;
  Phase phase = Phase::Measurement;
  /// Called with the timestep interval (from, to] covered by the epoch.
  std::function<void(Trainer&, Index from, Index to, EpochLog&)> fn;
};

class Trainer {
 public:
  /// Installs the hooks implied by the treatment.
  explicit Trainer(TrainerConfig cfg);
  /// Skips treatment hooks when `builtin_hooks` is false.
  Trainer(TrainerConfig cfg, bool builtin_hooks);

  void add_hook(Hook hook);
  EpochLog train_epoch();
  EvalResult evaluate() { return evaluate(cfg_.ppo.eval_greedy); }
  EvalResult evaluate(bool greedy);

  ActorCritic& net() { return *net_; }
  const TrainerConfig& config() const { return cfg_; }
  Adam& actor_optimizer() { return *actor_opt_; }
  Adam& critic_optimizer() { return *critic_opt_; }
  PlasticityBuffer& buffer() { return buffer_; }
  RngStreams& rng() { return rng_; }
  Index timestep() const { return timestep_; }
  int epoch() const { return epoch_; }
  int resets_performed() const { return resets_performed_; }
  /// Task of every episode started so far, in order.
  const std::vector<int>& episode_tasks() const { return episode_tasks_; }

  std::vector<MaskedParam*> sparsifiable_params();
  /// Global sparsity over the sparsifiable parameters of a parameter group.
  static double group_sparsity(const std::vector<MaskedParam*>& params);

 private:
  struct Rollout {
    RowMatrix obs;
    std::vector<int> tasks;
    std::vector<int> actions;
    std::vector<double> logp;
    std::vector<double> rewards;
    std::vector<double> values;
    std::vector<std::uint8_t> dones;
    Vector advantages;
    Vector returns;
  };

  void install_builtin_hooks();
  void start_episode();
  Rollout collect(EpochLog& log);
  void update_policy(const Rollout& r, EpochLog& log);
  void update_critic(const Rollout& r, EpochLog& log);
  /// Replaces the shared-parameter gradient by its PCGrad surgery over per-task parts.
  void apply_pcgrad(const std::vector<Vector>& per_task, const std::vector<MaskedParam*>& shared);
  void measure(EpochLog& log);

  TrainerConfig cfg_;
  RngStreams rng_;
  std::unique_ptr<ActorCritic> net_;
  std::unique_ptr<Adam> actor_opt_;
  std::unique_ptr<Adam> critic_opt_;
  PlasticityBuffer buffer_;
  std::vector<Hook> hooks_;
  std::vector<env::GridWorld> worlds_;
  int current_task_ = 0;
  Tensor current_obs_;
  int episode_steps_ = 0;
  Index timestep_ = 0;
  int epoch_ = 0;
  int resets_performed_ = 0;
  std::vector<int> episode_tasks_;
};

}  // namespace mtsparse
