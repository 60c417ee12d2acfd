#include "mtsparse/trainer.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <numeric>

#include "mtsparse/categorical.hpp"
#include "mtsparse/evalstats.hpp"

namespace mtsparse {

namespace {

struct TreatmentEntry {
  const char* name;
  Treatment treatment;
};

constexpr std::array<TreatmentEntry, 10> kTreatments{{
    {"dense", Treatment::Dense},
    {"gmp", Treatment::Gmp},
    {"set", Treatment::Set},
    {"redo", Treatment::Redo},
    {"reset", Treatment::Reset},
    {"weight_decay", Treatment::WeightDecay},
    {"layernorm", Treatment::LayerNorm},
    {"gmp+wd", Treatment::GmpWd},
    {"gmp+pcgrad", Treatment::GmpPcgrad},
    {"pcgrad", Treatment::Pcgrad},
}};

bool is_head(const MaskedParam& p) { return p.name.rfind("actor.", 0) == 0 || p.name.rfind("critic.", 0) == 0; }

std::vector<double> take(const std::vector<double>& v, const std::vector<Index>& rows) {
  std::vector<double> out;
  out.reserve(rows.size());
  for (Index r : rows) out.push_back(v[static_cast<std::size_t>(r)]);
  return out;
}

Vector flatten_grads(const std::vector<MaskedParam*>& params) {
  Index n = 0;
  for (const MaskedParam* p : params) n += p->numel();
  Vector g(n);
  Index at = 0;
  for (MaskedParam* p : params) {
    g.segment(at, p->numel()) = p->value.grad();
    at += p->numel();
  }
  return g;
}

}  // namespace

Treatment treatment_from_name(const std::string& name) {
  for (const auto& e : kTreatments) {
    if (name == e.name) return e.treatment;
  }
  throw ConfigError("unknown treatment '" + name + "'");
}

std::string treatment_name(Treatment t) {
  for (const auto& e : kTreatments) {
    if (t == e.treatment) return e.name;
  }
  throw ConfigError("unregistered treatment");
}

std::vector<std::string> treatment_names() {
  std::vector<std::string> out;
  for (const auto& e : kTreatments) out.emplace_back(e.name);
  return out;
}

TreatmentFlags flags_of(Treatment t) {
  TreatmentFlags f;
  switch (t) {
    case Treatment::Dense: break;
    case Treatment::Gmp: f.gmp = true; break;
    case Treatment::Set: f.set = true; break;
    case Treatment::Redo: f.redo = true; break;
    case Treatment::Reset: f.reset = true; break;
    case Treatment::WeightDecay: f.weight_decay = true; break;
    case Treatment::LayerNorm: f.layer_norm = true; break;
    case Treatment::GmpWd: f.gmp = f.weight_decay = true; break;
    case Treatment::GmpPcgrad: f.gmp = f.pcgrad = true; break;
    case Treatment::Pcgrad: f.pcgrad = true; break;
  }
  return f;
}

void TrainerConfig::finalize() {
  if (tasks.empty()) throw ConfigError("at least one task is required");
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (tasks[i].id != static_cast<int>(i)) throw ConfigError("task context ids must be 0..M-1 in order");
  }
  arch.num_tasks = static_cast<int>(tasks.size());
  arch.action_count = tasks.front().action_count;
  arch.channels = tasks.front().channels;
  arch.view = tasks.front().view;
  if (flags_of(treatment).layer_norm) arch.layer_norm = true;
  gmp.total_steps = ppo.total_timesteps();
  arch.validate();
  ppo.validate();
  metrics.validate();
  const TreatmentFlags f = flags_of(treatment);
  if (f.gmp) gmp.validate();
  if (f.set) set.validate();
  if (f.redo) redo.validate();
  if (f.reset) reset.validate();
  if (f.weight_decay && !(weight_decay > 0.0)) throw ConfigError("weight_decay must be positive");
}

int sample_task(std::mt19937_64& rng, int num_tasks) {
  std::uniform_int_distribution<int> pick(0, num_tasks - 1);
  return pick(rng);
}

RngStreams::RngStreams(std::uint64_t seed) {
  std::mt19937_64* streams[] = {&init, &env, &policy, &shuffle, &sparsity, &buffer, &eval, &intervention, &metrics, &surgery};
  std::uint32_t k = 0;
  for (std::mt19937_64* s : streams) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), k++};
    s->seed(seq);
  }
}

Trainer::Trainer(TrainerConfig cfg) : Trainer(std::move(cfg), true) {}

Trainer::Trainer(TrainerConfig cfg, bool builtin_hooks)
    : cfg_((cfg.finalize(), std::move(cfg))),
      rng_(cfg_.seed),
      net_(std::make_unique<ActorCritic>(cfg_.arch, rng_.init)),
      buffer_(cfg_.metrics.buffer_capacity, static_cast<Index>(cfg_.arch.channels) * cfg_.arch.view * cfg_.arch.view) {
  const TreatmentFlags flags = flags_of(cfg_.treatment);
  if (flags.set) {
    std::vector<MaskedParam*> dense;
    for (MaskedParam* p : net_->all_params()) {
      if (p->sparsifiable && p->value.rank() == 2 && (cfg_.set.include_heads || !is_head(*p))) dense.push_back(p);
    }
    apply_erk_masks(dense, cfg_.set.sparsity, rng_.sparsity);
  }
  AdamOptions actor{cfg_.ppo.actor_lr};
  AdamOptions critic{cfg_.ppo.critic_lr};
  if (flags.weight_decay) actor.weight_decay = critic.weight_decay = cfg_.weight_decay;
  actor_opt_ = std::make_unique<Adam>(net_->actor_params(), actor);
  critic_opt_ = std::make_unique<Adam>(net_->critic_params(), critic);
  for (const auto& t : cfg_.tasks) worlds_.emplace_back(t);
  if (builtin_hooks) install_builtin_hooks();
  start_episode();
}

void Trainer::add_hook(Hook hook) {
  hooks_.push_back(std::move(hook));
  std::stable_sort(hooks_.begin(), hooks_.end(), [](const Hook& a, const Hook& b) { return a.phase < b.phase; });
}

std::vector<MaskedParam*> Trainer::sparsifiable_params() {
  const TreatmentFlags flags = flags_of(cfg_.treatment);
  std::vector<MaskedParam*> out;
  for (MaskedParam* p : net_->all_params()) {
    if (!p->sparsifiable) continue;
    if (flags.set) {
      if (p->value.rank() != 2 || (!cfg_.set.include_heads && is_head(*p))) continue;
    } else if (!cfg_.gmp.include_heads && is_head(*p)) {
      continue;
    }
    out.push_back(p);
  }
  return out;
}

double Trainer::group_sparsity(const std::vector<MaskedParam*>& params) {
  return measure_sparsity(params).global_sparsity;
}

void Trainer::install_builtin_hooks() {
  const TreatmentFlags flags = flags_of(cfg_.treatment);
  if (flags.gmp) {
    add_hook({"gmp", Hook::Phase::Sparsity, [](Trainer& t, Index from, Index to, EpochLog& log) {
                const Index f = t.cfg_.gmp.frequency;
                for (Index step = (from / f + 1) * f; step <= to; step += f) {
                  const double target = gmp_target_sparsity(static_cast<double>(step), t.cfg_.gmp);
                  SparsityReport r = prune_to_sparsity(t.sparsifiable_params(), target);
                  if (!r.warning.empty()) log.warnings.push_back(r.warning);
                  ++log.prune_events;
                }
              }});
  }
  if (flags.set) {
    add_hook({"set", Hook::Phase::Sparsity, [](Trainer& t, Index from, Index to, EpochLog& log) {
                for (Index n = events_crossed(from, to, t.cfg_.set.frequency); n > 0; --n) {
                  SparsityReport r = set_evolve(t.sparsifiable_params(), t.cfg_.set, t.rng_.sparsity);
                  if (!r.warning.empty()) log.warnings.push_back(r.warning);
                  ++log.set_events;
                }
              }});
  }
  if (flags.redo) {
    add_hook({"redo", Hook::Phase::Intervention, [](Trainer& t, Index from, Index to, EpochLog& log) {
                for (Index n = events_crossed(from, to, t.cfg_.redo.frequency); n > 0; --n) {
                  const auto batch = t.buffer_.sample(t.cfg_.redo.batch, t.rng_.buffer);
                  Adam* opts[] = {t.actor_opt_.get(), t.critic_opt_.get()};
                  log.redo_reinitialized += redo_reinit(*t.net_, batch, t.cfg_.redo.tau, t.rng_.intervention, opts).count;
                }
              }});
  }
  if (flags.reset) {
    add_hook({"reset", Hook::Phase::Intervention, [](Trainer& t, Index from, Index to, EpochLog&) {
                for (int n = resets_due(from, to, t.cfg_.reset, t.resets_performed_); n > 0; --n) {
                  Adam* opts[] = {t.actor_opt_.get(), t.critic_opt_.get()};
                  reset_heads(*t.net_, t.rng_.intervention, opts);
                  ++t.resets_performed_;
                }
              }});
  }
  if (cfg_.measure) {
    add_hook({"metrics", Hook::Phase::Measurement, [](Trainer& t, Index, Index, EpochLog& log) { t.measure(log); }});
  }
}

void Trainer::start_episode() {
  current_task_ = sample_task(rng_.env, static_cast<int>(worlds_.size()));
  current_obs_ = worlds_[static_cast<std::size_t>(current_task_)].reset(rng_.env);
  episode_tasks_.push_back(current_task_);
}

Trainer::Rollout Trainer::collect(EpochLog& log) {
  const Index n = cfg_.ppo.steps_per_epoch;
  Rollout r;
  r.obs.resize(n, buffer_.obs_size());
  r.tasks.resize(static_cast<std::size_t>(n));
  r.actions.resize(static_cast<std::size_t>(n));
  r.logp.resize(static_cast<std::size_t>(n));
  r.rewards.resize(static_cast<std::size_t>(n));
  r.values.resize(static_cast<std::size_t>(n));
  r.dones.resize(static_cast<std::size_t>(n));
  double returns = 0.0;
  for (Index k = 0; k < n; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    const RowMatrix obs = current_obs_.data().transpose();
    buffer_.add(obs.row(0), current_task_);
    const PolicyOutput out = net_->act_and_value(obs, current_task_);
    const Categorical dist(out.logits);
    const int action = dist.sample(rng_.policy).front();
    r.obs.row(k) = obs.row(0);
    r.tasks[ks] = current_task_;
    r.actions[ks] = action;
    r.logp[ks] = dist.log_prob(std::span<const int>(&action, 1))(0);
    r.values[ks] = out.value(0, 0);
    env::StepResult step = worlds_[static_cast<std::size_t>(current_task_)].step(action);
    r.rewards[ks] = step.reward;
    r.dones[ks] = step.terminated || step.truncated ? 1 : 0;
    ++timestep_;
    if (r.dones[ks]) {
      ++log.episodes;
      returns += step.reward;
      start_episode();
    } else {
      current_obs_ = std::move(step.observation);
    }
  }
  log.train_return = log.episodes ? returns / log.episodes : 0.0;
  double bootstrap = 0.0;
  if (!r.dones.back()) {
    const RowMatrix obs = current_obs_.data().transpose();
    bootstrap = net_->act_and_value(obs, current_task_).value(0, 0);
  }
  GaeResult gae = compute_gae(r.rewards, r.values, r.dones, bootstrap, cfg_.ppo.gamma, cfg_.ppo.gae_lambda);
  r.advantages = std::move(gae.advantages);
  r.returns = std::move(gae.returns);
  return r;
}

void Trainer::apply_pcgrad(const std::vector<Vector>& per_task, const std::vector<MaskedParam*>& shared) {
  const Vector g = pcgrad_project(per_task, rng_.surgery);
  Index at = 0;
  for (MaskedParam* p : shared) {
    p->value.grad() = g.segment(at, p->numel());
    at += p->numel();
  }
}

void Trainer::update_policy(const Rollout& r, EpochLog& log) {
  const auto n = static_cast<Index>(r.tasks.size());
  const Index mb = std::min(cfg_.ppo.policy_minibatch, n);
  const bool pcgrad = flags_of(cfg_.treatment).pcgrad;
  const std::vector<MaskedParam*> shared = net_->shared_params();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double loss_sum = 0.0;
  int updates = 0;
  for (int epoch = 0; epoch < cfg_.ppo.policy_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_.shuffle);
    for (Index start = 0; start < n; start += mb) {
      const Index len = std::min(mb, n - start);
      std::vector<Index> rows(order.begin() + start, order.begin() + start + len);
      Vector adv(len);
      for (Index i = 0; i < len; ++i) adv(i) = r.advantages(rows[static_cast<std::size_t>(i)]);
      normalize_advantages(adv);

      std::map<int, std::vector<Index>> by_task;  // positions within the minibatch
      for (Index i = 0; i < len; ++i) by_task[r.tasks[static_cast<std::size_t>(rows[static_cast<std::size_t>(i)])]].push_back(i);

      auto task_loss = [&](ad::Tape& tape, const std::vector<Index>& pos) {
        RowMatrix obs(static_cast<Index>(pos.size()), r.obs.cols());
        std::vector<int> tasks, actions;
        std::vector<double> logp, a;
        for (std::size_t j = 0; j < pos.size(); ++j) {
          const Index row = rows[static_cast<std::size_t>(pos[j])];
          obs.row(static_cast<Index>(j)) = r.obs.row(row);
          tasks.push_back(r.tasks[static_cast<std::size_t>(row)]);
          actions.push_back(r.actions[static_cast<std::size_t>(row)]);
          logp.push_back(r.logp[static_cast<std::size_t>(row)]);
          a.push_back(adv(pos[j]));
        }
        ForwardResult f = net_->forward(tape, obs, tasks, {true, false, false});
        ad::Var total;
        for (const auto& g : f.groups) {
          const std::vector<double> glogp = take(logp, g.rows);
          const std::vector<double> gadv = take(a, g.rows);
          std::vector<int> gact;
          for (Index i : g.rows) gact.push_back(actions[static_cast<std::size_t>(i)]);
          ad::Var l = ad::clipped_surrogate(g.logits, gact, glogp, gadv, cfg_.ppo.clip, cfg_.ppo.entropy_coef);
          l = ad::scale(l, static_cast<double>(g.rows.size()) / static_cast<double>(len));
          total = total.valid() ? ad::add(total, l) : l;
        }
        return total;
      };

      actor_opt_->zero_grad();
      if (!pcgrad || by_task.size() < 2) {
        std::vector<Index> all(static_cast<std::size_t>(len));
        std::iota(all.begin(), all.end(), Index{0});
        ad::Tape tape;
        ad::Var loss = task_loss(tape, all);
        loss_sum += loss.value()(0, 0);
        tape.backward(loss);
      } else {
        std::vector<Vector> per_task;
        for (const auto& [task, pos] : by_task) {
          for (MaskedParam* p : shared) p->zero_grad();
          ad::Tape tape;
          ad::Var loss = task_loss(tape, pos);
          loss_sum += loss.value()(0, 0);
          tape.backward(loss);
          per_task.push_back(flatten_grads(shared));
        }
        apply_pcgrad(per_task, shared);
      }
      actor_opt_->step();
      ++updates;
    }
  }
  log.policy_loss = updates ? loss_sum / updates : 0.0;
}

void Trainer::update_critic(const Rollout& r, EpochLog& log) {
  const auto n = static_cast<Index>(r.tasks.size());
  const Index batch = std::min(cfg_.ppo.critic_batch, n);
  const bool pcgrad = flags_of(cfg_.treatment).pcgrad;
  const std::vector<MaskedParam*> shared = net_->shared_params();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  double loss_sum = 0.0;
  int updates = 0;
  for (int epoch = 0; epoch < cfg_.ppo.critic_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng_.shuffle);
    for (Index start = 0; start < n; start += batch) {
      const Index len = std::min(batch, n - start);
      std::map<int, std::vector<Index>> by_task;
      for (Index i = start; i < start + len; ++i) {
        const Index row = order[static_cast<std::size_t>(i)];
        by_task[r.tasks[static_cast<std::size_t>(row)]].push_back(row);
      }
      auto task_loss = [&](ad::Tape& tape, const std::vector<Index>& rows) {
        RowMatrix obs(static_cast<Index>(rows.size()), r.obs.cols());
        std::vector<int> tasks;
        for (std::size_t j = 0; j < rows.size(); ++j) {
          obs.row(static_cast<Index>(j)) = r.obs.row(rows[j]);
          tasks.push_back(r.tasks[static_cast<std::size_t>(rows[j])]);
        }
        ForwardResult f = net_->forward(tape, obs, tasks, {false, true, false});
        ad::Var total;
        for (const auto& g : f.groups) {
          RowMatrix target(static_cast<Index>(g.rows.size()), 1);
          for (std::size_t j = 0; j < g.rows.size(); ++j) target(static_cast<Index>(j), 0) = r.returns(rows[static_cast<std::size_t>(g.rows[j])]);
          ad::Var l = ad::scale(ad::mse(g.value, target), static_cast<double>(g.rows.size()) / static_cast<double>(len));
          total = total.valid() ? ad::add(total, l) : l;
        }
        return total;
      };

      critic_opt_->zero_grad();
      if (!pcgrad || by_task.size() < 2) {
        std::vector<Index> rows(order.begin() + start, order.begin() + start + len);
        ad::Tape tape;
        ad::Var loss = task_loss(tape, rows);
        loss_sum += loss.value()(0, 0);
        tape.backward(loss);
      } else {
        std::vector<Vector> per_task;
        for (const auto& [task, rows] : by_task) {
          for (MaskedParam* p : shared) p->zero_grad();
          ad::Tape tape;
          ad::Var loss = task_loss(tape, rows);
          loss_sum += loss.value()(0, 0);
          tape.backward(loss);
          per_task.push_back(flatten_grads(shared));
        }
        apply_pcgrad(per_task, shared);
      }
      critic_opt_->step();
      ++updates;
    }
  }
  log.value_loss = updates ? loss_sum / updates : 0.0;
}

void Trainer::measure(EpochLog& log) {
  PlasticitySnapshot snap;
  snap.epoch = log.epoch;
  const DormancyResult d = dormancy(*net_, buffer_.sample(cfg_.metrics.dormancy_batch, rng_.buffer), cfg_.metrics.tau);
  snap.dormant_actor = d.actor;
  snap.dormant_critic = d.critic;
  const FisherResult f = fisher_trace(*net_, buffer_.sample(cfg_.metrics.fisher_batch, rng_.buffer), rng_.metrics);
  if (!f.warning.empty()) log.warnings.push_back(f.warning);
  snap.fisher_trace = f.trace;
  ad::Tape tape;
  const auto batch = buffer_.sample(cfg_.metrics.rank_batch, rng_.buffer);
  snap.effective_rank = effective_rank(net_->extract_features(tape, batch.obs).value(), cfg_.metrics.rank_delta);
  log.metrics = snap;
}

EvalResult Trainer::evaluate(bool greedy) {
  EvalResult out;
  for (const auto& task : cfg_.tasks) {
    env::GridWorld world(task);
    double raw = 0.0;
    double norm = 0.0;
    for (int e = 0; e < cfg_.ppo.eval_episodes; ++e) {
      Tensor obs = world.reset(rng_.eval);
      double reward = 0.0;
      while (true) {
        const RowMatrix row = obs.data().transpose();
        const Categorical dist(net_->act_and_value(row, task.id).logits);
        const int action = greedy ? dist.mode().front() : dist.sample(rng_.eval).front();
        env::StepResult s = world.step(action);
        if (s.terminated || s.truncated) {
          reward = s.reward;
          break;
        }
        obs = std::move(s.observation);
      }
      raw += reward;
      norm += normalize_return(reward, task);
    }
    out.raw.push_back(raw / cfg_.ppo.eval_episodes);
    out.normalized.push_back(norm / cfg_.ppo.eval_episodes);
  }
  return out;
}

EpochLog Trainer::train_epoch() {
  EpochLog log;
  log.epoch = epoch_ + 1;
  const Index from = timestep_;
  Rollout r = collect(log);
  update_policy(r, log);
  update_critic(r, log);
  const Index to = timestep_;
  for (const Hook& h : hooks_) {
    try {
      h.fn(*this, from, to, log);
    } catch (const std::exception& e) {
      throw HookError(h.name, e.what());
    }
  }
  if (events_crossed(from, to, cfg_.ppo.eval_frequency) > 0) log.eval = evaluate();
  std::vector<MaskedParam*> all;
  for (MaskedParam* p : net_->all_params()) {
    if (p->sparsifiable) all.push_back(p);
  }
  log.sparsity = measure_sparsity(all);
  log.sparsity_actor = group_sparsity(net_->actor_params());
  log.sparsity_critic = group_sparsity(net_->critic_params());
  log.sparsity_trunk = group_sparsity(net_->trunk_params());
  log.resets_performed = resets_performed_;
  log.timestep = timestep_;
  ++epoch_;
  return log;
}

}  // namespace mtsparse
