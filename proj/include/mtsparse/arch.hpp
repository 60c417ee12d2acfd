#pragma once

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mtsparse/tape.hpp"

namespace mtsparse {

enum class ArchKind { Mtppo, Moe, Moore };

ArchKind arch_kind_from_name(const std::string& name);
std::string arch_kind_name(ArchKind kind);

struct ArchitectureSpec {
  ArchKind kind = ArchKind::Mtppo;
  int experts = 2;
  int hidden = 128;
  int num_tasks = 1;
  int action_count = 7;
  int channels = 3;
  int view = 5;
  std::vector<int> conv_channels{16, 32, 64};
  int kernel = 2;
  std::vector<Activation> conv_activations{Activation::Relu, Activation::Relu, Activation::Tanh};
  /// LayerNorm after every hidden dense layer, before its activation.
  bool layer_norm = false;

  void validate() const;
  /// Flattened extractor width: last channel count times remaining spatial extent.
  Index feature_size() const;
  /// Width of the representation consumed by the task heads.
  Index mixed_size() const;
};

/// Weight, bias and optional LayerNorm affine of one dense layer.
struct DenseBlock {
  MaskedParam weight;
  MaskedParam bias;
  std::optional<MaskedParam> ln_gain;
  std::optional<MaskedParam> ln_shift;
  Activation activation = Activation::Linear;
};

struct ConvBlock {
  MaskedParam weight;
  MaskedParam bias;
  Activation activation = Activation::Relu;
};

struct HeadBlock {
  DenseBlock hidden;
  DenseBlock output;
};

enum class Side { Shared, Actor, Critic };

/// A layer of hidden units as seen by dormancy measurement and ReDo.
struct NeuronLayer {
  /// A parameter reading this layer's units. Unit i owns `stride` consecutive
  /// input rows of a dense consumer, or input channel i of a conv consumer.
  struct Consumer {
    MaskedParam* weight = nullptr;
    bool conv = false;
    Index stride = 1;
  };

  std::string name;
  Side side = Side::Shared;
  int task = -1;  // heads only
  bool conv = false;
  Index units = 0;
  Index positions = 1;  // spatial positions per unit (conv)
  MaskedParam* weight = nullptr;
  MaskedParam* bias = nullptr;
  std::vector<Consumer> consumers;
};

/// Output of one batched forward pass. Heads are evaluated per task group.
struct ForwardResult {
  struct Group {
    int task = 0;
    std::vector<Index> rows;
    ad::Var logits;
    ad::Var value;
  };
  ad::Var features;
  ad::Var mixed;
  std::vector<Group> groups;
  /// Post-activation outputs keyed by index into ActorCritic::neuron_layers().
  /// Head activations cover only their group's rows.
  std::vector<std::pair<std::size_t, ad::Var>> activations;
};

struct HeadSelection {
  bool actor = true;
  bool critic = true;
  bool capture = false;
};

/// Values produced by act_and_value.
struct PolicyOutput {
  RowMatrix logits;
  RowMatrix value;
  RowMatrix features;
};

/// Conv feature extractor, optional expert mixture and per-task actor/critic heads.
/// Holds parameters by value; not copyable or movable so optimizer pointers stay valid.
class ActorCritic {
 public:
  ActorCritic(ArchitectureSpec spec, std::mt19937_64& rng);
  ActorCritic(const ActorCritic&) = delete;
  ActorCritic& operator=(const ActorCritic&) = delete;

  const ArchitectureSpec& spec() const { return spec_; }

  /// obs is [B, C*V*V]; result [B, F] after the final tanh.
  ad::Var extract_features(ad::Tape& tape, const RowMatrix& obs);
  /// Full pass; `tasks` holds one context id per row.
  ForwardResult forward(ad::Tape& tape, const RowMatrix& obs, std::span<const int> tasks, HeadSelection heads = {});

  PolicyOutput act_and_value(const RowMatrix& obs, int task);
  /// Encoder row of task `task` (mixture architectures only).
  Vector task_coefficients(int task) const;

  std::vector<MaskedParam*> all_params();
  std::vector<MaskedParam*> trunk_params();
  std::vector<MaskedParam*> mixture_params();
  std::vector<MaskedParam*> actor_head_params();
  std::vector<MaskedParam*> critic_head_params();
  /// Parameters upstream of the logits: trunk, mixture and actor heads.
  std::vector<MaskedParam*> actor_params();
  /// Trunk, mixture and critic heads.
  std::vector<MaskedParam*> critic_params();
  /// Parameters shared across tasks (trunk and mixture); PCGrad operates here.
  std::vector<MaskedParam*> shared_params() { return concat(trunk_params(), mixture_params()); }

  const std::vector<NeuronLayer>& neuron_layers() const { return neurons_; }
  Index trainable_parameter_count();

  std::vector<ConvBlock>& trunk() { return trunk_; }
  std::vector<HeadBlock>& actor_heads() { return actor_; }
  std::vector<HeadBlock>& critic_heads() { return critic_; }
  MaskedParam* encoder() { return encoder_ ? &*encoder_ : nullptr; }
  std::vector<std::vector<DenseBlock>>& experts() { return experts_; }

 private:
  static std::vector<MaskedParam*> concat(std::vector<MaskedParam*> a, const std::vector<MaskedParam*>& b);
  ad::Var dense_block(ad::Tape& tape, ad::Var x, DenseBlock& block);
  ad::Var mix(ad::Tape& tape, ad::Var features, std::span<const int> tasks, ForwardResult* capture);
  void build_neuron_layers();

  ArchitectureSpec spec_;
  std::vector<ConvBlock> trunk_;
  std::optional<MaskedParam> encoder_;
  std::vector<std::vector<DenseBlock>> experts_;
  std::vector<HeadBlock> actor_;
  std::vector<HeadBlock> critic_;
  std::vector<NeuronLayer> neurons_;
  std::vector<std::size_t> trunk_neuron_index_;
};

/// Re-draws the listed slots of `p` from its init distribution.
void reinitialize(MaskedParam& p, std::mt19937_64& rng, std::span<const Index> slots);
void reinitialize(MaskedParam& p, std::mt19937_64& rng);

/// One-hot task vector -> encoder row. Throws ContractViolation unless `onehot`
/// has exactly one entry equal to 1 and the rest 0.
Vector encode_task(const Eigen::Ref<const Vector>& onehot, const Eigen::Ref<const RowMatrix>& encoder);

/// sum_e w(e) * experts[e].
RowMatrix moe_combine(std::span<const RowMatrix> experts, const Eigen::Ref<const Vector>& weights);

/// Per-sample Gram-Schmidt across experts. Residuals with norm below 1e-8 become zero.
std::vector<RowMatrix> orthogonalize_experts(std::span<const RowMatrix> experts);

/// Tape version of orthogonalize_experts.
std::vector<ad::Var> orthogonalize_experts(ad::Tape& tape, std::span<const ad::Var> experts);

inline constexpr double kOrthogonalResidualFloor = 1e-8;

}  // namespace mtsparse
