#include "mtsparse/plasticity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mtsparse/categorical.hpp"

namespace mtsparse {

PlasticityBuffer::PlasticityBuffer(Index capacity, Index obs_size) : capacity_(capacity), obs_size_(obs_size) {
  if (capacity <= 0 || obs_size <= 0) throw ConfigError("plasticity buffer needs positive capacity and width");
  tasks_.resize(static_cast<std::size_t>(capacity));
}

void PlasticityBuffer::add(const Eigen::Ref<const Eigen::RowVectorXd>& obs, int task) {
  if (obs.size() != obs_size_) throw DataError("plasticity buffer: observation width mismatch");
  if (obs_.empty()) obs_.resize(static_cast<std::size_t>(capacity_ * obs_size_));
  std::uint8_t* dst = obs_.data() + head_ * obs_size_;
  for (Index i = 0; i < obs_size_; ++i) {
    const double v = obs(i);
    if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) throw DataError("plasticity buffer stores byte-valued observations");
    dst[i] = static_cast<std::uint8_t>(v);
  }
  tasks_[static_cast<std::size_t>(head_)] = task;
  head_ = (head_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

Index PlasticityBuffer::physical(Index i) const {
  const Index oldest = size_ < capacity_ ? 0 : head_;
  return (oldest + i) % capacity_;
}

PlasticityBuffer::Batch PlasticityBuffer::at(Index i) const {
  if (i < 0 || i >= size_) throw ContractViolation("plasticity buffer index out of range");
  Batch b{RowMatrix(1, obs_size_), {tasks_[static_cast<std::size_t>(physical(i))]}};
  const std::uint8_t* src = obs_.data() + physical(i) * obs_size_;
  for (Index k = 0; k < obs_size_; ++k) b.obs(0, k) = src[k];
  return b;
}

PlasticityBuffer::Batch PlasticityBuffer::sample(Index n, std::mt19937_64& rng) const {
  if (size_ == 0) throw StateError("plasticity buffer is empty");
  const Index take = std::min(n, size_);
  std::vector<Index> idx(static_cast<std::size_t>(size_));
  std::iota(idx.begin(), idx.end(), Index{0});
  for (Index i = 0; i < take; ++i) {
    std::uniform_int_distribution<Index> pick(i, size_ - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(pick(rng))]);
  }
  Batch b{RowMatrix(take, obs_size_), std::vector<int>(static_cast<std::size_t>(take))};
  for (Index r = 0; r < take; ++r) {
    const Index p = idx[static_cast<std::size_t>(r)];
    const std::uint8_t* src = obs_.data() + p * obs_size_;
    for (Index k = 0; k < obs_size_; ++k) b.obs(r, k) = src[k];
    b.tasks[static_cast<std::size_t>(r)] = tasks_[static_cast<std::size_t>(p)];
  }
  return b;
}

void ReDoConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("redo.tau must be positive");
  if (frequency <= 0) throw ConfigError("redo.frequency must be positive");
  if (batch <= 0) throw ConfigError("redo.batch must be positive");
}

void ResetConfig::validate() const {
  if (frequency <= 0) throw ConfigError("reset.frequency must be positive");
  if (max_resets < 0) throw ConfigError("reset.max_resets must be non-negative");
}

void MetricsConfig::validate() const {
  if (buffer_capacity <= 0 || dormancy_batch <= 0 || fisher_batch <= 0 || rank_batch <= 0) {
    throw ConfigError("metrics batch sizes and buffer capacity must be positive");
  }
  if (!(tau > 0.0)) throw ConfigError("metrics.tau must be positive");
  if (!(rank_delta > 0.0 && rank_delta < 1.0)) throw ConfigError("metrics.rank_delta must lie in (0, 1)");
}

Vector unit_mean_abs(const RowMatrix& activations, Index units, Index positions) {
  if (activations.rows() < 1) throw ContractViolation("activation batch is empty");
  if (activations.cols() != units * positions) throw ConfigError("activation width does not match unit layout");
  const Eigen::RowVectorXd col = activations.cwiseAbs().colwise().mean();
  Vector m(units);
  for (Index u = 0; u < units; ++u) m(u) = col.segment(u * positions, positions).mean();
  return m;
}

Vector scores_from_mean_abs(const Vector& mean_abs) {
  const double denom = mean_abs.mean();
  if (denom == 0.0) return Vector::Zero(mean_abs.size());
  return mean_abs / denom;
}

Vector normalized_activation_scores(const RowMatrix& activations) {
  return scores_from_mean_abs(unit_mean_abs(activations, activations.cols()));
}

DormancyResult dormancy(ActorCritic& net, const PlasticityBuffer::Batch& batch, double tau) {
  if (batch.obs.rows() == 0) throw StateError("dormancy needs a non-empty batch");
  ad::Tape tape;
  ForwardResult f = net.forward(tape, batch.obs, batch.tasks, {true, true, true});
  const auto& layers = net.neuron_layers();
  DormancyResult out;
  Index actor_units = 0, actor_dormant = 0, critic_units = 0, critic_dormant = 0;
  for (const auto& [index, var] : f.activations) {
    const NeuronLayer& layer = layers[index];
    LayerDormancy d{layer.name, layer.side, layer.units, 0, {}};
    const Vector s = scores_from_mean_abs(unit_mean_abs(var.value(), layer.units, layer.positions));
    for (Index u = 0; u < s.size(); ++u) {
      if (s(u) <= tau) d.flagged.push_back(u);
    }
    d.dormant = static_cast<Index>(d.flagged.size());
    if (layer.side != Side::Critic) {
      actor_units += d.units;
      actor_dormant += d.dormant;
    }
    if (layer.side != Side::Actor) {
      critic_units += d.units;
      critic_dormant += d.dormant;
    }
    out.layers.push_back(std::move(d));
  }
  out.actor = actor_units ? static_cast<double>(actor_dormant) / static_cast<double>(actor_units) : 0.0;
  out.critic = critic_units ? static_cast<double>(critic_dormant) / static_cast<double>(critic_units) : 0.0;
  return out;
}

FisherResult fisher_trace(ActorCritic& net, const PlasticityBuffer::Batch& batch, std::mt19937_64& rng) {
  if (batch.obs.rows() == 0) throw StateError("fisher trace needs a non-empty batch");
  std::vector<MaskedParam*> params;
  for (MaskedParam* p : net.actor_params()) {
    if (p->trainable) params.push_back(p);
  }
  FisherResult out;
  double total = 0.0;
  for (Index r = 0; r < batch.obs.rows(); ++r) {
    for (MaskedParam* p : params) p->zero_grad();
    ad::Tape tape;
    const int task = batch.tasks[static_cast<std::size_t>(r)];
    ForwardResult f = net.forward(tape, batch.obs.row(r), std::span<const int>(&task, 1), {true, false, false});
    ad::Var logits = f.groups.at(0).logits;
    const int action = Categorical(logits.value()).sample(rng).front();
    tape.backward(ad::pick(ad::log_softmax(logits), std::span<const int>(&action, 1)));
    double norm2 = 0.0;
    for (MaskedParam* p : params) norm2 += p->value.grad().squaredNorm();
    if (std::isfinite(norm2)) {
      total += norm2;
      ++out.used;
    } else {
      ++out.skipped;
    }
  }
  for (MaskedParam* p : params) p->zero_grad();
  if (out.used == 0) throw NumericError("fisher trace: every sample produced a non-finite gradient");
  out.trace = total / static_cast<double>(out.used);
  if (static_cast<double>(out.skipped) > 0.01 * static_cast<double>(batch.obs.rows())) {
    out.warning = "fisher trace skipped " + std::to_string(out.skipped) + " non-finite samples";
  }
  return out;
}

int effective_rank_from_singular_values(const Vector& sigma, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("effective rank delta must lie in (0, 1)");
  const double total = sigma.sum();
  if (total == 0.0) return 0;
  double cumulative = 0.0;
  for (Index k = 0; k < sigma.size(); ++k) {
    cumulative += sigma(k);
    if (cumulative / total >= 1.0 - delta) return static_cast<int>(k + 1);
  }
  return static_cast<int>(sigma.size());
}

int effective_rank(const RowMatrix& features, double delta) {
  if (features.rows() < 1) throw ContractViolation("effective rank needs at least one row");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(features);
  if (svd.info() != Eigen::Success) throw NumericError("SVD did not converge");
  return effective_rank_from_singular_values(svd.singularValues(), delta);
}

std::vector<Index> incoming_slots(const NeuronLayer& layer, Index u) {
  std::vector<Index> slots;
  if (layer.conv) {
    const Index per = layer.weight->value.size() / layer.units;
    for (Index k = 0; k < per; ++k) slots.push_back(u * per + k);
  } else {
    const Index in = layer.weight->value.extent(0);
    for (Index i = 0; i < in; ++i) slots.push_back(i * layer.units + u);
  }
  return slots;
}

std::vector<Index> outgoing_slots(const NeuronLayer::Consumer& c, Index u) {
  std::vector<Index> slots;
  const Tensor& w = c.weight->value;
  if (c.conv) {
    const Index kernels = w.extent(0);
    const Index channels = w.extent(1);
    const Index area = w.extent(2) * w.extent(3);
    for (Index k = 0; k < kernels; ++k) {
      for (Index a = 0; a < area; ++a) slots.push_back((k * channels + u) * area + a);
    }
  } else {
    const Index out = w.extent(1);
    for (Index r = u * c.stride; r < (u + 1) * c.stride; ++r) {
      for (Index o = 0; o < out; ++o) slots.push_back(r * out + o);
    }
  }
  return slots;
}

namespace {

void clear_moments(std::span<Adam* const> optimizers, const MaskedParam& p, std::span<const Index> slots) {
  for (Adam* opt : optimizers) {
    if (opt->owns(p)) opt->reset_moments(p, slots);
  }
}

}  // namespace

ReDoResult redo_reinit(ActorCritic& net, const PlasticityBuffer::Batch& batch, double tau, std::mt19937_64& rng,
                       std::span<Adam* const> optimizers) {
  ReDoResult out;
  out.flagged = dormancy(net, batch, tau);
  const auto& layers = net.neuron_layers();
  for (const LayerDormancy& d : out.flagged.layers) {
    if (d.flagged.empty()) continue;
    const auto it = std::find_if(layers.begin(), layers.end(), [&](const NeuronLayer& l) { return l.name == d.name; });
    const NeuronLayer& layer = *it;
    std::vector<Index> in_slots;
    for (Index u : d.flagged) {
      const std::vector<Index> s = incoming_slots(layer, u);
      in_slots.insert(in_slots.end(), s.begin(), s.end());
    }
    reinitialize(*layer.weight, rng, in_slots);
    reinitialize(*layer.bias, rng, d.flagged);
    clear_moments(optimizers, *layer.weight, in_slots);
    clear_moments(optimizers, *layer.bias, d.flagged);
    for (const auto& consumer : layer.consumers) {
      std::vector<Index> out_slots;
      for (Index u : d.flagged) {
        const std::vector<Index> s = outgoing_slots(consumer, u);
        out_slots.insert(out_slots.end(), s.begin(), s.end());
      }
      for (Index s : out_slots) consumer.weight->value.data()(s) = 0.0;
      clear_moments(optimizers, *consumer.weight, out_slots);
    }
    out.count += d.dormant;
  }
  return out;
}

void reset_heads(ActorCritic& net, std::mt19937_64& rng, std::span<Adam* const> optimizers) {
  std::vector<MaskedParam*> heads = net.actor_head_params();
  for (MaskedParam* p : net.critic_head_params()) heads.push_back(p);
  for (MaskedParam* p : heads) {
    reinitialize(*p, rng);
    for (Adam* opt : optimizers) {
      if (opt->owns(*p)) opt->reset_moments(*p);
    }
  }
}

int resets_due(Index from, Index to, const ResetConfig& cfg, int performed) {
  if (to <= from || cfg.max_resets <= performed) return 0;
  const Index crossed = to / cfg.frequency - from / cfg.frequency;
  return static_cast<int>(std::min<Index>(crossed, cfg.max_resets - performed));
}

}  // namespace mtsparse
