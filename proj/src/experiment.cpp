#include "mtsparse/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "mtsparse/checkpoint.hpp"

namespace mtsparse {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

/// Typed access to one JSON object that rejects unknown keys.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) throw ConfigFieldError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return node_.contains(key);
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(node_.at(key), field(key));
  }

  template <typename T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigFieldError(field(key), "is required");
    return convert<T>(node_.at(key), field(key));
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(node_.contains(key) ? node_.at(key) : empty, field(key));
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return node_.at(key);
  }

  void finish() const {
    for (const auto& item : node_.items()) {
      if (!seen_.count(item.key())) throw ConfigFieldError(field(item.key()), "unknown field");
    }
  }

 private:
  template <typename T>
  static T convert(const json& v, const std::string& where) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigFieldError(where, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigFieldError(where, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) throw ConfigFieldError(where, "must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigFieldError(where, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigFieldError(where, "expected a string");
    }
    return v.get<T>();
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Fn>
void check(const std::string& field, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigFieldError&) {
    throw;
  } catch (const ConfigError& e) {
    throw ConfigFieldError(field, e.what());
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigFieldError("<root>", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  TrainerConfig& t = cfg.trainer;
  Section root(doc, "");
  cfg.name = root.require<std::string>("name");
  if (cfg.name.empty() || cfg.name.find_first_of("/\\ ,\"") != std::string::npos) {
    throw ConfigFieldError("name", "must be a non-empty token without spaces, commas, quotes or slashes");
  }

  const bool has_benchmark = root.has("benchmark");
  const bool has_tasks = root.has("tasks");
  if (has_benchmark == has_tasks) throw ConfigFieldError("benchmark", "give exactly one of 'benchmark' or 'tasks'");
  if (has_benchmark) {
    cfg.benchmark = root.require<std::string>("benchmark");
    check("benchmark", [&] { t.tasks = env::make_benchmark(cfg.benchmark); });
    for (const auto& task : t.tasks) cfg.task_names.push_back(task.name);
  } else {
    const json& list = root.raw("tasks");
    if (!list.is_array() || list.empty()) throw ConfigFieldError("tasks", "expected a non-empty array of task names");
    for (std::size_t i = 0; i < list.size(); ++i) {
      const std::string where = "tasks[" + std::to_string(i) + "]";
      if (!list[i].is_string()) throw ConfigFieldError(where, "expected a string");
      check(where, [&] { t.tasks.push_back(env::make_task(list[i].get<std::string>(), static_cast<int>(i))); });
      cfg.task_names.push_back(list[i].get<std::string>());
    }
    if (std::set<std::string>(cfg.task_names.begin(), cfg.task_names.end()).size() != cfg.task_names.size()) {
      throw ConfigFieldError("tasks", "task names must be distinct");
    }
  }

  check("treatment", [&] { t.treatment = treatment_from_name(root.require<std::string>("treatment")); });

  const json& seeds = root.has("seeds") ? root.raw("seeds") : throw ConfigFieldError("seeds", "is required");
  if (!seeds.is_array() || seeds.empty()) throw ConfigFieldError("seeds", "expected a non-empty array");
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    if (!seeds[i].is_number_integer() || seeds[i].get<std::int64_t>() < 0) {
      throw ConfigFieldError("seeds[" + std::to_string(i) + "]", "expected a non-negative integer");
    }
    cfg.seeds.push_back(seeds[i].get<std::uint64_t>());
  }
  if (std::set<std::uint64_t>(cfg.seeds.begin(), cfg.seeds.end()).size() != cfg.seeds.size()) {
    throw ConfigFieldError("seeds", "seeds must be distinct");
  }

  {
    Section a = root.child("architecture");
    check("architecture.kind", [&] { t.arch.kind = arch_kind_from_name(a.get<std::string>("kind", "mtppo")); });
    t.arch.experts = a.get<int>("experts", t.arch.experts);
    t.arch.hidden = a.get<int>("hidden", t.arch.hidden);
    t.arch.layer_norm = a.get<bool>("layer_norm", t.arch.layer_norm);
    a.finish();
  }
  {
    Section p = root.child("ppo");
    PPOConfig& c = t.ppo;
    c.gamma = p.get("gamma", c.gamma);
    c.gae_lambda = p.get("gae_lambda", c.gae_lambda);
    c.clip = p.get("clip", c.clip);
    c.entropy_coef = p.get("entropy_coef", c.entropy_coef);
    c.actor_lr = p.get("actor_lr", c.actor_lr);
    c.critic_lr = p.get("critic_lr", c.critic_lr);
    c.policy_epochs = p.get("policy_epochs", c.policy_epochs);
    c.critic_epochs = p.get("critic_epochs", c.critic_epochs);
    c.policy_minibatch = p.get<Index>("policy_minibatch", c.policy_minibatch);
    c.critic_batch = p.get<Index>("critic_batch", c.critic_batch);
    c.steps_per_epoch = p.get<Index>("steps_per_epoch", c.steps_per_epoch);
    c.eval_episodes = p.get("eval_episodes", c.eval_episodes);
    c.eval_frequency = p.get<Index>("eval_frequency", c.eval_frequency);
    c.eval_greedy = p.get("eval_greedy", c.eval_greedy);
    p.finish();
  }
  const auto total = root.get<Index>("total_timesteps", t.ppo.total_timesteps());
  if (total <= 0 || t.ppo.steps_per_epoch <= 0 || total % t.ppo.steps_per_epoch != 0) {
    throw ConfigFieldError("total_timesteps", "must be a positive multiple of ppo.steps_per_epoch");
  }
  t.ppo.epochs = static_cast<int>(total / t.ppo.steps_per_epoch);
  {
    Section g = root.child("gmp");
    t.gmp.final_sparsity = g.get("final_sparsity", t.gmp.final_sparsity);
    t.gmp.frequency = g.get<Index>("frequency", t.gmp.frequency);
    t.gmp.start_fraction = g.get("start_fraction", t.gmp.start_fraction);
    t.gmp.end_fraction = g.get("end_fraction", t.gmp.end_fraction);
    t.gmp.include_heads = g.get("include_heads", t.gmp.include_heads);
    g.finish();
  }
  {
    Section s = root.child("set");
    t.set.sparsity = s.get("sparsity", t.set.sparsity);
    t.set.rewire_fraction = s.get("rewire_fraction", t.set.rewire_fraction);
    t.set.erk_density = s.get("erk_density", t.set.erk_density);
    t.set.frequency = s.get<Index>("frequency", t.set.frequency);
    t.set.include_heads = s.get("include_heads", t.set.include_heads);
    s.finish();
  }
  {
    Section r = root.child("redo");
    t.redo.tau = r.get("tau", t.redo.tau);
    t.redo.frequency = r.get<Index>("frequency", t.redo.frequency);
    t.redo.batch = r.get<Index>("batch", t.redo.batch);
    r.finish();
  }
  {
    Section r = root.child("reset");
    t.reset.frequency = r.get<Index>("frequency", t.reset.frequency);
    t.reset.max_resets = r.get("max_resets", t.reset.max_resets);
    r.finish();
  }
  {
    Section m = root.child("metrics");
    t.measure = m.get("enabled", t.measure);
    t.metrics.buffer_capacity = m.get<Index>("buffer_capacity", t.metrics.buffer_capacity);
    t.metrics.dormancy_batch = m.get<Index>("dormancy_batch", t.metrics.dormancy_batch);
    t.metrics.fisher_batch = m.get<Index>("fisher_batch", t.metrics.fisher_batch);
    t.metrics.rank_batch = m.get<Index>("rank_batch", t.metrics.rank_batch);
    t.metrics.tau = m.get("tau", t.metrics.tau);
    t.metrics.rank_delta = m.get("rank_delta", t.metrics.rank_delta);
    m.finish();
  }
  t.weight_decay = root.get("weight_decay", t.weight_decay);
  cfg.output_dir = root.get<std::string>("output_dir", "runs/" + cfg.name);
  root.finish();

  t.gmp.total_steps = t.ppo.total_timesteps();
  check("ppo", [&] { t.ppo.validate(); });
  check("gmp", [&] { t.gmp.validate(); });
  check("set", [&] { t.set.validate(); });
  check("redo", [&] { t.redo.validate(); });
  check("reset", [&] { t.reset.validate(); });
  check("metrics", [&] { t.metrics.validate(); });
  check("architecture", [&] { t.finalize(); });
  return cfg;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigFieldError("<file>", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

fs::path resolve_output_dir(const fs::path& dir) {
  if (dir.is_absolute()) return dir;
  const char* root = std::getenv("MTSPARSE_OUTPUT_ROOT");
  return (root && *root ? fs::path(root) : fs::current_path()) / dir;
}

std::string run_id(const ExperimentConfig& cfg, std::uint64_t seed) {
  return cfg.name + "-seed" + std::to_string(seed);
}

void write_csv_header(std::ostream& out, const std::vector<env::TaskContext>& tasks) {
  out << kRunLogSchema << '\n';
  out << "run_id,seed,treatment,epoch,timestep";
  for (const auto& t : tasks) out << ",eval_" << t.name;
  out << ",sparsity_global,sparsity_actor,sparsity_critic,sparsity_trunk"
         ",fisher_trace,effective_rank,dormant_actor_pct,dormant_critic_pct"
         ",policy_loss,value_loss,train_return,episodes,prune_events,set_events,redo_reinitialized,resets_performed\n";
}

void write_csv_row(std::ostream& out, const std::string& run, std::uint64_t seed, Treatment treatment,
                   const EpochLog& log, std::size_t task_count) {
  out << run << ',' << seed << ',' << treatment_name(treatment) << ',' << log.epoch << ',' << log.timestep;
  for (std::size_t i = 0; i < task_count; ++i) {
    out << ',';
    if (log.eval) out << format_number(log.eval->normalized.at(i));
  }
  out << ',' << format_number(log.sparsity.global_sparsity) << ',' << format_number(log.sparsity_actor) << ','
      << format_number(log.sparsity_critic) << ',' << format_number(log.sparsity_trunk);
  if (log.metrics) {
    out << ',' << format_number(log.metrics->fisher_trace) << ',' << log.metrics->effective_rank << ','
        << format_number(100.0 * log.metrics->dormant_actor) << ',' << format_number(100.0 * log.metrics->dormant_critic);
  } else {
    out << ",,,,";
  }
  out << ',' << format_number(log.policy_loss) << ',' << format_number(log.value_loss) << ','
      << format_number(log.train_return) << ',' << log.episodes << ',' << log.prune_events << ',' << log.set_events
      << ',' << log.redo_reinitialized << ',' << log.resets_performed << '\n';
}

RunOutcome run_single(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  RunOutcome outcome;
  outcome.run_id = run_id(cfg, seed);
  outcome.seed = seed;
  outcome.csv = out_dir / (outcome.run_id + ".csv");
  outcome.checkpoint = out_dir / (outcome.run_id + ".ckpt");
  fs::create_directories(out_dir);
  std::ofstream csv(outcome.csv, std::ios::binary | std::ios::trunc);
  if (!csv) {
    outcome.error = "cannot write " + outcome.csv.string();
    return outcome;
  }
  write_csv_header(csv, cfg.trainer.tasks);
  csv.flush();
  try {
    TrainerConfig tc = cfg.trainer;
    tc.seed = seed;
    Trainer trainer(tc);
    for (int e = 0; e < tc.ppo.epochs; ++e) {
      const EpochLog log = trainer.train_epoch();
      write_csv_row(csv, outcome.run_id, seed, tc.treatment, log, tc.tasks.size());
      csv.flush();
      outcome.epochs = log.epoch;
    }
    std::vector<const MaskedParam*> params;
    for (MaskedParam* p : trainer.net().all_params()) params.push_back(p);
    save_checkpoint(outcome.checkpoint, params);
    outcome.completed = true;
  } catch (const std::exception& e) {
    outcome.error = e.what();
  }
  return outcome;
}

std::vector<RunOutcome> run_all(const ExperimentConfig& cfg, int jobs, std::uint64_t seed_offset) {
  if (jobs < 1) throw ConfigError("--jobs must be at least 1");
  const fs::path out_dir = resolve_output_dir(cfg.output_dir);
  fs::create_directories(out_dir);
  std::vector<RunOutcome> outcomes(cfg.seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.seeds.size(); i = next++) {
      outcomes[i] = run_single(cfg, cfg.seeds[i] + seed_offset, out_dir);
    }
  };
  std::vector<std::thread> pool;
  const auto n = std::min<std::size_t>(static_cast<std::size_t>(jobs), cfg.seeds.size());
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  json manifest;
  manifest["schema"] = "mtsparse-manifest v1";
  manifest["name"] = cfg.name;
  manifest["treatment"] = treatment_name(cfg.trainer.treatment);
  manifest["architecture"] = arch_kind_name(cfg.trainer.arch.kind);
  manifest["benchmark"] = cfg.benchmark;
  manifest["tasks"] = cfg.task_names;
  manifest["total_timesteps"] = cfg.trainer.ppo.total_timesteps();
  manifest["runs"] = json::array();
  for (const auto& o : outcomes) {
    json r{{"run_id", o.run_id},
           {"seed", o.seed},
           {"status", o.completed ? "completed" : "failed"},
           {"epochs", o.epochs},
           {"csv", o.csv.filename().string()}};
    if (o.completed) r["checkpoint"] = o.checkpoint.filename().string();
    if (!o.error.empty()) r["error"] = o.error;
    manifest["runs"].push_back(std::move(r));
  }
  std::ofstream(out_dir / "manifest.json") << manifest.dump(2) << '\n';
  return outcomes;
}

}  // namespace mtsparse
