#include "mtsparse/arch.hpp"

#include <cmath>
#include <map>

namespace mtsparse {

ArchKind arch_kind_from_name(const std::string& name) {
  if (name == "mtppo") return ArchKind::Mtppo;
  if (name == "moe") return ArchKind::Moe;
  if (name == "moore") return ArchKind::Moore;
  throw ConfigError("unknown architecture '" + name + "' (expected mtppo, moe or moore)");
}

std::string arch_kind_name(ArchKind kind) {
  switch (kind) {
    case ArchKind::Mtppo:
      return "mtppo";
    case ArchKind::Moe:
      return "moe";
    case ArchKind::Moore:
      break;
  }
  return "moore";
}

void ArchitectureSpec::validate() const {
  if (num_tasks < 1) throw ConfigError("architecture needs at least one task");
  if (hidden < 1) throw ConfigError("hidden size must be positive");
  if (action_count < 2) throw ConfigError("action set needs at least two actions");
  if (kind != ArchKind::Mtppo && experts < 1) throw ConfigError("mixture architectures need k >= 1 experts");
  if (conv_channels.empty() || conv_channels.size() != conv_activations.size()) {
    throw ConfigError("conv channel and activation lists must be non-empty and of equal length");
  }
  if (kernel < 1) throw ConfigError("conv kernel extents must be positive");
  if (view - static_cast<int>(conv_channels.size()) * (kernel - 1) < 1) {
    throw ConfigError("observation view too small for the conv stack");
  }
  if (kind == ArchKind::Moore && experts > hidden) throw ConfigError("MOORE needs k <= expert width");
}

Index ArchitectureSpec::feature_size() const {
  const Index spatial = view - static_cast<Index>(conv_channels.size()) * (kernel - 1);
  return static_cast<Index>(conv_channels.back()) * spatial * spatial;
}

Index ArchitectureSpec::mixed_size() const { return kind == ArchKind::Mtppo ? feature_size() : hidden; }

namespace {

MaskedParam make_weight(std::string name, Shape shape, Index fan_in, Index fan_out) {
  MaskedParam p(std::move(name), std::move(shape));
  p.sparsifiable = true;
  p.fan_in = fan_in;
  p.fan_out = fan_out;
  p.init_bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  return p;
}

MaskedParam make_filled(std::string name, Index n, double fill) {
  MaskedParam p(std::move(name), {n});
  p.init_fill = fill;
  p.value.data().setConstant(fill);
  return p;
}

DenseBlock make_dense(const std::string& prefix, Index in, Index out, Activation act, bool ln) {
  DenseBlock b;
  b.weight = make_weight(prefix + ".weight", {in, out}, in, out);
  b.bias = make_filled(prefix + ".bias", out, 0.0);
  if (ln) {
    b.ln_gain = make_filled(prefix + ".ln.gain", out, 1.0);
    b.ln_shift = make_filled(prefix + ".ln.shift", out, 0.0);
  }
  b.activation = act;
  return b;
}

void push_dense(std::vector<MaskedParam*>& out, DenseBlock& b) {
  out.push_back(&b.weight);
  out.push_back(&b.bias);
  if (b.ln_gain) out.push_back(&*b.ln_gain);
  if (b.ln_shift) out.push_back(&*b.ln_shift);
}

}  // namespace

void reinitialize(MaskedParam& p, std::mt19937_64& rng, std::span<const Index> slots) {
  std::uniform_real_distribution<double> unif(-p.init_bound, p.init_bound);
  auto& v = p.value.data();
  for (Index s : slots) v(s) = p.init_bound > 0.0 ? unif(rng) : p.init_fill;
  p.apply_mask();
}

void reinitialize(MaskedParam& p, std::mt19937_64& rng) {
  std::vector<Index> all(static_cast<std::size_t>(p.numel()));
  for (Index i = 0; i < p.numel(); ++i) all[static_cast<std::size_t>(i)] = i;
  reinitialize(p, rng, all);
}

ActorCritic::ActorCritic(ArchitectureSpec spec, std::mt19937_64& rng) : spec_(std::move(spec)) {
  spec_.validate();
  const Index k = spec_.kernel;
  Index in = spec_.channels;
  for (std::size_t i = 0; i < spec_.conv_channels.size(); ++i) {
    const Index out = spec_.conv_channels[i];
    const std::string prefix = "trunk.conv" + std::to_string(i);
    ConvBlock c;
    c.weight = make_weight(prefix + ".weight", {out, in, k, k}, in * k * k, out * k * k);
    c.bias = make_filled(prefix + ".bias", out, 0.0);
    c.activation = spec_.conv_activations[i];
    trunk_.push_back(std::move(c));
    in = out;
  }
  const Index f = spec_.feature_size();
  const Index h = spec_.hidden;
  const Index tasks = spec_.num_tasks;
  if (spec_.kind != ArchKind::Mtppo) {
    MaskedParam enc = make_weight("encoder.weight", {tasks, spec_.experts}, tasks, spec_.experts);
    encoder_ = std::move(enc);
    for (int e = 0; e < spec_.experts; ++e) {
      const std::string prefix = "expert" + std::to_string(e);
      std::vector<DenseBlock> blocks;
      blocks.push_back(make_dense(prefix + ".fc0", f, h, Activation::Tanh, spec_.layer_norm));
      blocks.push_back(make_dense(prefix + ".fc1", h, h, Activation::Tanh, spec_.layer_norm));
      experts_.push_back(std::move(blocks));
    }
  }
  const Index m = spec_.mixed_size();
  for (Index t = 0; t < tasks; ++t) {
    const std::string a = "actor.task" + std::to_string(t);
    actor_.push_back({make_dense(a + ".hidden", m, h, Activation::Tanh, spec_.layer_norm),
                      make_dense(a + ".out", h, spec_.action_count, Activation::Linear, false)});
    const std::string c = "critic.task" + std::to_string(t);
    critic_.push_back({make_dense(c + ".hidden", m, h, Activation::Tanh, spec_.layer_norm),
                       make_dense(c + ".out", h, 1, Activation::Linear, false)});
  }
  for (MaskedParam* p : all_params()) reinitialize(*p, rng);
  build_neuron_layers();
}

std::vector<MaskedParam*> ActorCritic::concat(std::vector<MaskedParam*> a, const std::vector<MaskedParam*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<MaskedParam*> ActorCritic::trunk_params() {
  std::vector<MaskedParam*> out;
  for (auto& c : trunk_) {
    out.push_back(&c.weight);
    out.push_back(&c.bias);
  }
  return out;
}

std::vector<MaskedParam*> ActorCritic::mixture_params() {
  std::vector<MaskedParam*> out;
  if (encoder_) out.push_back(&*encoder_);
  for (auto& expert : experts_) {
    for (auto& b : expert) push_dense(out, b);
  }
  return out;
}

std::vector<MaskedParam*> ActorCritic::actor_head_params() {
  std::vector<MaskedParam*> out;
  for (auto& head : actor_) {
    push_dense(out, head.hidden);
    push_dense(out, head.output);
  }
  return out;
}

std::vector<MaskedParam*> ActorCritic::critic_head_params() {
  std::vector<MaskedParam*> out;
  for (auto& head : critic_) {
    push_dense(out, head.hidden);
    push_dense(out, head.output);
  }
  return out;
}

std::vector<MaskedParam*> ActorCritic::actor_params() { return concat(shared_params(), actor_head_params()); }
std::vector<MaskedParam*> ActorCritic::critic_params() { return concat(shared_params(), critic_head_params()); }

std::vector<MaskedParam*> ActorCritic::all_params() {
  return concat(concat(shared_params(), actor_head_params()), critic_head_params());
}

Index ActorCritic::trainable_parameter_count() {
  Index n = 0;
  for (MaskedParam* p : all_params()) {
    if (p->trainable) n += p->numel();
  }
  return n;
}

void ActorCritic::build_neuron_layers() {
  neurons_.clear();
  Index spatial = spec_.view;
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    spatial -= spec_.kernel - 1;
    NeuronLayer l;
    l.name = "trunk.conv" + std::to_string(i);
    l.side = Side::Shared;
    l.conv = true;
    l.units = spec_.conv_channels[i];
    l.positions = spatial * spatial;
    l.weight = &trunk_[i].weight;
    l.bias = &trunk_[i].bias;
    if (i + 1 < trunk_.size()) {
      l.consumers.push_back({&trunk_[i + 1].weight, true, 1});
    } else if (spec_.kind == ArchKind::Mtppo) {
      for (auto& head : actor_) l.consumers.push_back({&head.hidden.weight, false, l.positions});
      for (auto& head : critic_) l.consumers.push_back({&head.hidden.weight, false, l.positions});
    } else {
      for (auto& expert : experts_) l.consumers.push_back({&expert[0].weight, false, l.positions});
    }
    neurons_.push_back(std::move(l));
  }
  for (std::size_t e = 0; e < experts_.size(); ++e) {
    for (std::size_t j = 0; j < experts_[e].size(); ++j) {
      NeuronLayer l;
      l.name = "expert" + std::to_string(e) + ".fc" + std::to_string(j);
      l.side = Side::Shared;
      l.units = spec_.hidden;
      l.weight = &experts_[e][j].weight;
      l.bias = &experts_[e][j].bias;
      // Expert outputs feed a mixture shared by all experts; their units have
      // no privately owned outgoing weights.
      if (j + 1 < experts_[e].size()) l.consumers.push_back({&experts_[e][j + 1].weight, false, 1});
      neurons_.push_back(std::move(l));
    }
  }
  for (std::size_t t = 0; t < actor_.size(); ++t) {
    NeuronLayer l;
    l.name = "actor.task" + std::to_string(t) + ".hidden";
    l.side = Side::Actor;
    l.task = static_cast<int>(t);
    l.units = spec_.hidden;
    l.weight = &actor_[t].hidden.weight;
    l.bias = &actor_[t].hidden.bias;
    l.consumers.push_back({&actor_[t].output.weight, false, 1});
    neurons_.push_back(std::move(l));
  }
  for (std::size_t t = 0; t < critic_.size(); ++t) {
    NeuronLayer l;
    l.name = "critic.task" + std::to_string(t) + ".hidden";
    l.side = Side::Critic;
    l.task = static_cast<int>(t);
    l.units = spec_.hidden;
    l.weight = &critic_[t].hidden.weight;
    l.bias = &critic_[t].hidden.bias;
    l.consumers.push_back({&critic_[t].output.weight, false, 1});
    neurons_.push_back(std::move(l));
  }
}

ad::Var ActorCritic::dense_block(ad::Tape& tape, ad::Var x, DenseBlock& block) {
  ad::Var y = ad::dense(x, tape.param(block.weight), tape.param(block.bias));
  if (block.ln_gain) y = ad::layer_norm(y, tape.param(*block.ln_gain), tape.param(*block.ln_shift));
  return ad::activate(y, block.activation);
}

ad::Var ActorCritic::extract_features(ad::Tape& tape, const RowMatrix& obs) {
  const Index expected = static_cast<Index>(spec_.channels) * spec_.view * spec_.view;
  if (obs.cols() != expected) {
    throw ConfigError("observation has " + std::to_string(obs.cols()) + " entries, expected " +
                      std::to_string(expected));
  }
  ad::Var x = tape.constant(obs, {obs.rows(), spec_.channels, spec_.view, spec_.view});
  for (auto& c : trunk_) x = ad::activate(ad::conv2d(x, tape.param(c.weight), tape.param(c.bias)), c.activation);
  return x;
}

ad::Var ActorCritic::mix(ad::Tape& tape, ad::Var features, std::span<const int> tasks, ForwardResult* capture) {
  if (spec_.kind == ArchKind::Mtppo) return features;
  const Index b = features.rows();
  RowMatrix onehot = RowMatrix::Zero(b, spec_.num_tasks);
  for (Index r = 0; r < b; ++r) onehot(r, tasks[static_cast<std::size_t>(r)]) = 1.0;
  ad::Var coeffs = ad::matmul(tape.constant(std::move(onehot)), tape.param(*encoder_));

  const std::size_t expert_base = trunk_.size();
  std::vector<ad::Var> outs;
  for (std::size_t e = 0; e < experts_.size(); ++e) {
    ad::Var h = features;
    for (std::size_t j = 0; j < experts_[e].size(); ++j) {
      h = dense_block(tape, h, experts_[e][j]);
      if (capture) capture->activations.emplace_back(expert_base + e * experts_[e].size() + j, h);
    }
    outs.push_back(h);
  }
  if (spec_.kind == ArchKind::Moore) outs = orthogonalize_experts(tape, outs);
  ad::Var z = ad::scale_rows(outs[0], ad::column(coeffs, 0));
  for (std::size_t e = 1; e < outs.size(); ++e) {
    z = ad::add(z, ad::scale_rows(outs[e], ad::column(coeffs, static_cast<Index>(e))));
  }
  return z;
}

ForwardResult ActorCritic::forward(ad::Tape& tape, const RowMatrix& obs, std::span<const int> tasks,
                                   HeadSelection heads) {
  if (static_cast<Index>(tasks.size()) != obs.rows()) throw ConfigError("forward: one task id per observation");
  for (int t : tasks) {
    if (t < 0 || t >= spec_.num_tasks) throw ConfigError("unknown task id " + std::to_string(t));
  }
  ForwardResult out;
  ForwardResult* capture = heads.capture ? &out : nullptr;

  const Index expected = static_cast<Index>(spec_.channels) * spec_.view * spec_.view;
  if (obs.cols() != expected) {
    throw ConfigError("observation has " + std::to_string(obs.cols()) + " entries, expected " +
                      std::to_string(expected));
  }
  ad::Var x = tape.constant(obs, {obs.rows(), spec_.channels, spec_.view, spec_.view});
  for (std::size_t i = 0; i < trunk_.size(); ++i) {
    x = ad::activate(ad::conv2d(x, tape.param(trunk_[i].weight), tape.param(trunk_[i].bias)), trunk_[i].activation);
    if (capture) out.activations.emplace_back(i, x);
  }
  out.features = x;
  out.mixed = mix(tape, x, tasks, capture);

  std::map<int, std::vector<Index>> by_task;
  for (std::size_t r = 0; r < tasks.size(); ++r) by_task[tasks[r]].push_back(static_cast<Index>(r));
  const std::size_t actor_base = trunk_.size() + experts_.size() * (experts_.empty() ? 0 : experts_[0].size());
  const std::size_t critic_base = actor_base + actor_.size();
  for (auto& [task, rows] : by_task) {
    ForwardResult::Group g;
    g.task = task;
    g.rows = rows;
    ad::Var z = static_cast<Index>(rows.size()) == obs.rows() ? out.mixed : ad::gather_rows(out.mixed, rows);
    const auto ti = static_cast<std::size_t>(task);
    if (heads.actor) {
      ad::Var h = dense_block(tape, z, actor_[ti].hidden);
      if (capture) out.activations.emplace_back(actor_base + ti, h);
      g.logits = dense_block(tape, h, actor_[ti].output);
    }
    if (heads.critic) {
      ad::Var h = dense_block(tape, z, critic_[ti].hidden);
      if (capture) out.activations.emplace_back(critic_base + ti, h);
      g.value = dense_block(tape, h, critic_[ti].output);
    }
    out.groups.push_back(std::move(g));
  }
  return out;
}

PolicyOutput ActorCritic::act_and_value(const RowMatrix& obs, int task) {
  if (task < 0 || task >= spec_.num_tasks) throw ConfigError("unknown task id " + std::to_string(task));
  ad::Tape tape;
  std::vector<int> tasks(static_cast<std::size_t>(obs.rows()), task);
  ForwardResult f = forward(tape, obs, tasks);
  return {f.groups.at(0).logits.value(), f.groups.at(0).value.value(), f.features.value()};
}

Vector ActorCritic::task_coefficients(int task) const {
  if (!encoder_) throw ConfigError("architecture has no task encoder");
  if (task < 0 || task >= spec_.num_tasks) throw ConfigError("unknown task id " + std::to_string(task));
  return encoder_->value.matrix().row(task).transpose().cwiseProduct(encoder_->mask.matrix().row(task).transpose());
}

Vector encode_task(const Eigen::Ref<const Vector>& onehot, const Eigen::Ref<const RowMatrix>& encoder) {
  if (onehot.size() != encoder.rows()) throw ContractViolation("task vector length differs from task count");
  Index hot = -1;
  for (Index i = 0; i < onehot.size(); ++i) {
    if (onehot(i) == 1.0 && hot < 0) {
      hot = i;
    } else if (onehot(i) != 0.0) {
      throw ContractViolation("task encoding input is not one-hot");
    }
  }
  if (hot < 0) throw ContractViolation("task encoding input is not one-hot");
  return encoder.row(hot).transpose();
}

RowMatrix moe_combine(std::span<const RowMatrix> experts, const Eigen::Ref<const Vector>& weights) {
  if (experts.empty() || static_cast<Index>(experts.size()) != weights.size()) {
    throw ConfigError("moe_combine: one weight per expert required");
  }
  RowMatrix z = weights(0) * experts[0];
  for (std::size_t e = 1; e < experts.size(); ++e) {
    if (experts[e].rows() != z.rows() || experts[e].cols() != z.cols()) {
      throw ConfigError("moe_combine: expert output extents differ");
    }
    z += weights(static_cast<Index>(e)) * experts[e];
  }
  return z;
}

std::vector<RowMatrix> orthogonalize_experts(std::span<const RowMatrix> experts) {
  std::vector<RowMatrix> out;
  for (const RowMatrix& v : experts) {
    RowMatrix r = v;
    for (const RowMatrix& u : out) {
      for (Index b = 0; b < r.rows(); ++b) {
        const double uu = u.row(b).squaredNorm();
        if (uu == 0.0) continue;
        r.row(b) -= (r.row(b).dot(u.row(b)) / uu) * u.row(b);
      }
    }
    for (Index b = 0; b < r.rows(); ++b) {
      if (r.row(b).norm() < kOrthogonalResidualFloor) r.row(b).setZero();
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<ad::Var> orthogonalize_experts(ad::Tape& tape, std::span<const ad::Var> experts) {
  std::vector<ad::Var> out;
  std::vector<RowMatrix> keeps;
  for (const ad::Var& v : experts) {
    ad::Var r = v;
    for (std::size_t j = 0; j < out.size(); ++j) {
      const ad::Var& u = out[j];
      ad::Var denom = ad::add(ad::row_dot(u, u), tape.constant(RowMatrix(1.0 - keeps[j].array())));
      ad::Var coef = ad::mul(ad::div(ad::row_dot(r, u), denom), tape.constant(keeps[j]));
      r = ad::sub(r, ad::scale_rows(u, coef));
    }
    RowMatrix keep(r.rows(), 1);
    for (Index b = 0; b < r.rows(); ++b) keep(b, 0) = r.value().row(b).norm() < kOrthogonalResidualFloor ? 0.0 : 1.0;
    out.push_back(ad::scale_rows(r, tape.constant(keep)));
    keeps.push_back(std::move(keep));
  }
  return out;
}

}  // namespace mtsparse
