// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "mtsparse/categorical.hpp"
#include "mtsparse/evalstats.hpp"
#include "mtsparse/experiment.hpp"
#include "mtsparse/report.hpp"
#include "mtsparse/trainer.hpp"
#include "support.hpp"

using namespace mtsparse;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string title;
  double budget_seconds;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void progress(const std::string& msg) { std::cerr << "  .. " << msg << std::endl; }

fs::path scratch_dir() {
  static const fs::path dir = [] {
    std::random_device rd;
    fs::path p = fs::temp_directory_path() / ("mtsparse-acceptance-" + std::to_string(rd()));
    fs::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PlasticityBuffer::Batch random_batch(Index n, int tasks, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> code(0, 6), task(0, tasks - 1);
  PlasticityBuffer::Batch b;
  b.obs.resize(n, 75);
  for (Index i = 0; i < b.obs.size(); ++i) b.obs.data()[i] = code(rng);
  for (Index i = 0; i < n; ++i) b.tasks.push_back(task(rng));
  return b;
}

// ---------------------------------------------------------------------------
// 1. GMP schedule against a directly evaluated cubic.

Outcome schedule_exactness() {
  GMPConfig cfg;
  cfg.total_steps = 120000;
  const double ts = 0.05 * 120000, te = 0.80 * 120000;
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const double t = 120000.0 * i / 999.0;
    double expected;
    if (t < ts) {
      expected = 0.0;
    } else if (t > te) {
      expected = 0.95;
    } else {
      const double r = 1.0 - (t - ts) / (te - ts);
      expected = 0.95 * (1.0 - r * r * r);
    }
    worst = std::max(worst, std::abs(gmp_target_sparsity(t, cfg) - expected));
  }
  const double at_start = gmp_target_sparsity(ts, cfg), at_end = gmp_target_sparsity(te, cfg);
  const bool ok = worst <= 1e-12 && at_start == 0.0 && at_end == 0.95;
  return {ok, "max abs err " + fmt("%.2e", worst) + ", s(t_start)=" + fmt("%.17g", at_start) +
                  ", s(t_end)=" + fmt("%.17g", at_end)};
}

// ---------------------------------------------------------------------------
// 2 and 6 share the MT2 runs.

TrainerConfig mt2_config(const std::string& treatment, std::uint64_t seed) {
  const std::string text = R"({"name": "accept", "benchmark": "MT2", "treatment": ")" + treatment +
                           R"(", "seeds": [0], "total_timesteps": 120000, "metrics": {"enabled": false}})";
  TrainerConfig cfg = parse_config(text).trainer;
  cfg.seed = seed;
  return cfg;
}

double final_actor_dormancy(Trainer& t) {
  const auto batch = t.buffer().sample(t.config().metrics.dormancy_batch, t.rng().buffer);
  return dormancy(t.net(), batch, t.config().metrics.tau).actor;
}

struct SetRun {
  bool constant = true;
  double seconds = 0.0;
  Index initial_nonzero = 0;
  double initial_sparsity = 0.0;
  double dormant = 0.0;
  std::string note;
};

SetRun run_set(std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Trainer t(mt2_config("set", seed));
  SetRun out;
  const SparsityReport init = measure_sparsity(t.sparsifiable_params());
  out.initial_nonzero = init.nonzero();
  out.initial_sparsity = init.global_sparsity;
  const Index all_nonzero = measure_sparsity(t.net().all_params()).nonzero();
  int events = 0;
  for (int e = 0; e < t.config().ppo.epochs; ++e) {
    const EpochLog log = t.train_epoch();
    events += log.set_events;
    const SparsityReport r = measure_sparsity(t.sparsifiable_params());
    if (r.nonzero() != out.initial_nonzero || log.sparsity.nonzero() != all_nonzero) {
      out.constant = false;
      out.note = "nonzero count drifted at epoch " + std::to_string(log.epoch);
    }
  }
  out.dormant = final_actor_dormancy(t);
  if (out.note.empty()) out.note = std::to_string(events) + " evolutions";
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::map<std::uint64_t, double> g_set_dormancy;

Outcome sparsity_attainment() {
  const auto t0 = std::chrono::steady_clock::now();
  TrainerConfig cfg = mt2_config("gmp", 0);
  Trainer gmp(cfg);
  EpochLog last;
  for (int e = 0; e < cfg.ppo.epochs; ++e) {
    last = gmp.train_epoch();
    if (last.epoch % 10 == 0) progress("gmp epoch " + std::to_string(last.epoch));
  }
  const double n = static_cast<double>(last.sparsity.total());
  const double s = last.sparsity.global_sparsity;
  const bool gmp_ok = s >= 0.95 - 1.0 / n && s <= 0.95;
  const double gmp_secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const SetRun set = run_set(0);
  g_set_dormancy[0] = set.dormant;
  const bool ok = gmp_ok && set.constant && gmp_secs <= 20 * 60.0 && set.seconds <= 20 * 60.0;
  return {ok, "GMP final sparsity " + fmt("%.6f", s) + " over N=" + std::to_string(last.sparsity.total()) +
                  " (window [" + fmt("%.6f", 0.95 - 1.0 / n) + ", 0.95]); SET held " +
                  std::to_string(set.initial_nonzero) + " nonzero (sparsity " + fmt("%.4f", set.initial_sparsity) +
                  " of its dense layers) every epoch: " + (set.constant ? "yes" : "no") + ", " + set.note +
                  "; run times " + fmt("%.0f", gmp_secs) + " s and " + fmt("%.0f", set.seconds) + " s (limit 1200 s each)"};
}

// ---------------------------------------------------------------------------
// 3. Metric oracles.

Outcome metric_oracles() {
  std::mt19937_64 rng(303);
  int dormancy_mismatch = 0, rank_mismatch = 0, rank_cases = 0;
  double iqm_err = 0.0;
  std::uniform_int_distribution<int> hidden(3, 10), tasks_d(1, 3), kill(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    // Dormancy: brute-force scoring on captured activations.
    ArchitectureSpec spec;
    spec.hidden = hidden(rng);
    spec.num_tasks = tasks_d(rng);
    spec.kind = trial % 3 == 0 ? ArchKind::Mtppo : (trial % 3 == 1 ? ArchKind::Moe : ArchKind::Moore);
    ActorCritic net(spec, rng);
    for (auto& head : net.actor_heads()) {
      for (int k = kill(rng); k > 0; --k) {
        const Index u = std::uniform_int_distribution<Index>(0, spec.hidden - 1)(rng);
        head.hidden.weight.value.matrix().col(u).setZero();
        head.hidden.bias.value.data()(u) = 0.0;
      }
    }
    const auto batch = random_batch(24, spec.num_tasks, rng);
    const double tau = trial % 2 ? 0.001 : 0.1;
    const DormancyResult got = dormancy(net, batch, tau);
    ad::Tape tape;
    const ForwardResult f = net.forward(tape, batch.obs, batch.tasks, {true, true, true});
    const auto& layers = net.neuron_layers();
    Index units[3] = {0, 0, 0}, dead[3] = {0, 0, 0};
    std::map<std::string, Index> per_layer;
    for (const auto& [li, var] : f.activations) {
      const NeuronLayer& l = layers[li];
      const RowMatrix& a = var.value();
      std::vector<double> m(static_cast<std::size_t>(l.units), 0.0);
      for (Index u = 0; u < l.units; ++u) {
        for (Index r = 0; r < a.rows(); ++r)
          for (Index p = 0; p < l.positions; ++p) m[static_cast<std::size_t>(u)] += std::abs(a(r, u * l.positions + p));
        m[static_cast<std::size_t>(u)] /= static_cast<double>(a.rows() * l.positions);
      }
      double avg = 0.0;
      for (double v : m) avg += v;
      avg /= static_cast<double>(m.size());
      Index d = 0;
      for (double v : m) d += (avg == 0.0 ? 0.0 : v / avg) <= tau;
      per_layer[l.name] = d;
      const int side = static_cast<int>(l.side);
      units[side] += l.units;
      dead[side] += d;
    }
    for (const auto& l : got.layers) {
      if (!per_layer.count(l.name) || per_layer[l.name] != l.dormant) ++dormancy_mismatch;
    }
    if (got.layers.size() != per_layer.size()) ++dormancy_mismatch;
    const double actor = static_cast<double>(dead[0] + dead[1]) / static_cast<double>(units[0] + units[1]);
    const double critic = static_cast<double>(dead[0] + dead[2]) / static_cast<double>(units[0] + units[2]);
    if (actor != got.actor || critic != got.critic) ++dormancy_mismatch;

    // Effective rank: planted spectrum, brute-force cumulative scan.
    const Index rows = 6 + trial % 5, cols = 4 + trial % 4, k = std::min(rows, cols);
    const RowMatrix uq = Eigen::HouseholderQR<RowMatrix>(testing::random_matrix(rows, rows, rng)).householderQ();
    const RowMatrix vq = Eigen::HouseholderQR<RowMatrix>(testing::random_matrix(cols, cols, rng)).householderQ();
    std::vector<double> sigma(static_cast<std::size_t>(k));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (double& s : sigma) s = std::pow(u01(rng), 2.0) * (u01(rng) < 0.2 ? 0.0 : 1.0);
    std::sort(sigma.rbegin(), sigma.rend());
    const double delta = 0.01 + 0.2 * u01(rng);
    double total = 0.0;
    for (double s : sigma) total += s;
    int expected = 0;
    bool ambiguous = false;
    if (total > 0.0) {
      double run = 0.0;
      for (std::size_t i = 0; i < sigma.size(); ++i) {
        run += sigma[i];
        if (std::abs(run / total - (1.0 - delta)) < 1e-9) ambiguous = true;
        if (run / total >= 1.0 - delta) {
          expected = static_cast<int>(i) + 1;
          break;
        }
      }
    }
    if (!ambiguous) {
      RowMatrix diag = RowMatrix::Zero(rows, cols);
      for (Index i = 0; i < k; ++i) diag(i, i) = sigma[static_cast<std::size_t>(i)];
      ++rank_cases;
      if (effective_rank(uq * diag * vq.transpose(), delta) != expected) ++rank_mismatch;
    }

    // IQM: sort and trim by hand.
    std::vector<double> x(static_cast<std::size_t>(1 + trial % 37));
    for (double& v : x) v = std::normal_distribution<double>(0.0, 3.0)(rng);
    std::vector<double> s = x;
    for (std::size_t i = 0; i < s.size(); ++i)
      for (std::size_t j = i + 1; j < s.size(); ++j)
        if (s[j] < s[i]) std::swap(s[i], s[j]);
    const std::size_t cut = s.size() / 4;
    double acc = 0.0;
    for (std::size_t i = cut; i < s.size() - cut; ++i) acc += s[i];
    iqm_err = std::max(iqm_err, std::abs(iqm(x) - acc / static_cast<double>(s.size() - 2 * cut)));
  }

  // Fisher trace on the bias-only softmax family.
  std::string fisher_detail;
  bool fisher_ok = true;
  for (int n : {2, 3, 4}) {
    ArchitectureSpec spec;
    spec.hidden = 8;
    spec.action_count = n;
    ActorCritic net(spec, rng);
    for (MaskedParam* p : net.all_params()) p->trainable = false;
    DenseBlock& out = net.actor_heads()[0].output;
    out.weight.mask.data().setZero();
    out.weight.apply_mask();
    out.bias.trainable = true;
    out.bias.value.data().setZero();
    const FisherResult r = fisher_trace(net, random_batch(1024, 1, rng), rng);
    // Per-sample values are constant for a uniform policy, so the MC standard error is 0.
    const double expected = 1.0 - 1.0 / n;
    const bool ok = std::abs(r.trace - expected) <= 1e-12;
    fisher_ok = fisher_ok && ok && r.skipped == 0;
    fisher_detail += " n=" + std::to_string(n) + ":" + fmt("%.6f", r.trace);
  }
  const bool ok = dormancy_mismatch == 0 && rank_mismatch == 0 && iqm_err <= 1e-12 && fisher_ok;
  return {ok, "dormancy mismatches " + std::to_string(dormancy_mismatch) + "/200, srank mismatches " +
                  std::to_string(rank_mismatch) + "/" + std::to_string(rank_cases) + ", IQM max err " +
                  fmt("%.1e", iqm_err) + ", Fisher" + fisher_detail};
}

// ---------------------------------------------------------------------------
// 4. Finite-difference checks for every layer kind.

Outcome gradient_correctness() {
  using testing::gradient_error;
  using testing::random_matrix;
  std::mt19937_64 rng(404);
  std::map<std::string, double> worst;
  auto weighted = [](ad::Tape& t, ad::Var x, const RowMatrix& w) { return ad::sum(ad::mul(x, t.constant(w))); };
  for (int trial = 0; trial < 50; ++trial) {
    const Index b = 1 + trial % 4, in = 2 + trial % 5, out = 1 + trial % 6;
    const RowMatrix x = random_matrix(b, in, rng), w = random_matrix(in, out, rng), bias = random_matrix(1, out, rng);
    const RowMatrix probe = random_matrix(b, out, rng);
    auto record = [&](const std::string& name, double err) { worst[name] = std::max(worst[name], err); };
    record("dense", gradient_error({{x, {}}, {w, {}}, {bias, {out}}},
                                   [&](ad::Tape& t, const auto& v) { return weighted(t, ad::dense(v[0], v[1], v[2]), probe); }));
    record("matmul", gradient_error({{x, {}}, {w, {}}},
                                    [&](ad::Tape& t, const auto& v) { return weighted(t, ad::matmul(v[0], v[1]), probe); }));
    // Keep inputs away from the relu kink so central differences are valid.
    RowMatrix xr = random_matrix(b, out, rng);
    for (Index i = 0; i < xr.size(); ++i) xr.data()[i] += xr.data()[i] >= 0 ? 0.05 : -0.05;
    record("relu", gradient_error({{xr, {}}}, [&](ad::Tape& t, const auto& v) { return weighted(t, ad::relu(v[0]), probe); }));
    record("tanh", gradient_error({{xr, {}}}, [&](ad::Tape& t, const auto& v) { return weighted(t, ad::tanh(v[0]), probe); }));
    const Index h = 3 + trial % 3;
    const RowMatrix xl = random_matrix(b, h, rng), g = random_matrix(1, h, rng), s = random_matrix(1, h, rng);
    const RowMatrix pl = random_matrix(b, h, rng);
    record("layer_norm", gradient_error({{xl, {}}, {g, {h}}, {s, {h}}}, [&](ad::Tape& t, const auto& v) {
             return weighted(t, ad::layer_norm(v[0], v[1], v[2]), pl);
           }));
    const Index c = 1 + trial % 3, sp = 3 + trial % 3, k = 1 + trial % 4, kh = 1 + trial % 2, kw = 2;
    const RowMatrix xc = random_matrix(b, c * sp * sp, rng), wc = random_matrix(k, c * kh * kw, rng);
    const RowMatrix bc = random_matrix(1, k, rng);
    const RowMatrix pc = random_matrix(b, k * (sp - kh + 1) * (sp - kw + 1), rng);
    record("conv2d", gradient_error({{xc, {b, c, sp, sp}}, {wc, {k, c, kh, kw}}, {bc, {k}}}, [&](ad::Tape& t, const auto& v) {
             return weighted(t, ad::conv2d(v[0], v[1], v[2]), pc);
           }));
    const Index a = 2 + trial % 6;
    const RowMatrix logits = random_matrix(b, a, rng);
    std::vector<int> acts;
    std::vector<double> old_lp, adv;
    for (Index r = 0; r < b; ++r) {
      acts.push_back(static_cast<int>(std::uniform_int_distribution<Index>(0, a - 1)(rng)));
      old_lp.push_back(-std::log(static_cast<double>(a)) + 0.3 * std::normal_distribution<double>()(rng));
      adv.push_back(std::normal_distribution<double>()(rng));
    }
    const RowMatrix pa = random_matrix(b, a, rng);
    record("log_softmax", gradient_error({{logits, {}}}, [&](ad::Tape& t, const auto& v) {
             return weighted(t, ad::log_softmax(v[0]), pa);
           }));
    record("clipped_surrogate", gradient_error({{logits, {}}}, [&](ad::Tape&, const auto& v) {
             return ad::clipped_surrogate(v[0], acts, old_lp, adv, 0.2, 0.01);
           }));
    const RowMatrix target = random_matrix(b, out, rng);
    record("mse", gradient_error({{probe, {}}}, [&](ad::Tape&, const auto& v) { return ad::mse(v[0], target); }));
  }
  bool ok = true;
  std::string detail;
  for (const auto& [name, err] : worst) {
    ok = ok && err <= 1e-4;
    detail += (detail.empty() ? "" : ", ") + name + " " + fmt("%.1e", err);
  }
  return {ok, "worst rel err over 50 instances: " + detail};
}

// ---------------------------------------------------------------------------
// 5 and 10: nav-goal learning runs through the production run path.

ExperimentConfig navgoal_config() {
  return parse_config(R"({"name": "navgoal", "tasks": ["nav-goal"], "treatment": "dense", "seeds": [0, 1, 2, 3, 4],
                          "total_timesteps": 80000, "metrics": {"enabled": false}})");
}

double g_navgoal_seconds = 0.0;
std::map<std::uint64_t, fs::path> g_navgoal_csv;

Outcome learning_sanity() {
  const ExperimentConfig cfg = navgoal_config();
  int reached = 0;
  std::string detail;
  for (std::uint64_t seed : cfg.seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    const RunOutcome run = run_single(cfg, seed, scratch_dir() / "navgoal");
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    g_navgoal_seconds = std::max(g_navgoal_seconds, secs);
    g_navgoal_csv[seed] = run.csv;
    std::optional<int> first;
    double best = 0.0;
    if (run.completed) {
      for (const auto& row : read_run_csv(run.csv).rows) {
        if (row.epoch > 40 || !row.eval[0]) continue;
        best = std::max(best, *row.eval[0]);
        if (*row.eval[0] >= 0.9 && !first) first = row.epoch;
      }
    }
    if (first) ++reached;
    detail += " seed" + std::to_string(seed) + "=" + (first ? "epoch " + std::to_string(*first) : "best " + fmt("%.3f", best));
    progress("nav-goal seed " + std::to_string(seed) + (first ? " reached 0.9" : " did not reach 0.9"));
  }
  return {reached >= 4, std::to_string(reached) + "/5 seeds reached normalized score >= 0.9 by epoch 40:" + detail};
}

Outcome determinism() {
  const ExperimentConfig cfg = navgoal_config();
  if (!g_navgoal_csv.count(0)) return {false, "criterion 5 run unavailable"};
  const auto t0 = std::chrono::steady_clock::now();
  const RunOutcome again = run_single(cfg, 0, scratch_dir() / "navgoal-repeat");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string a = slurp(g_navgoal_csv[0]), b = slurp(again.csv);
  const bool same = again.completed && !a.empty() && a == b;
  const bool fast = secs <= 2.0 * g_navgoal_seconds;
  return {same && fast, std::string("seed 0 CSV ") + (same ? "byte-identical" : "differs") + " (" +
                            std::to_string(a.size()) + " bytes); rerun " + fmt("%.0f", secs) + " s vs limit " +
                            fmt("%.0f", 2.0 * g_navgoal_seconds) + " s"};
}

// ---------------------------------------------------------------------------
// 6. Dormancy trend, dense vs SET on MT2.

Outcome dormancy_trend() {
  ScoreMatrix dense, set;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    TrainerConfig cfg = mt2_config("dense", seed);
    Trainer t(cfg);
    for (int e = 0; e < cfg.ppo.epochs; ++e) t.train_epoch();
    dense.push_back({final_actor_dormancy(t)});
    if (!g_set_dormancy.count(seed)) g_set_dormancy[seed] = run_set(seed).dormant;
    set.push_back({g_set_dormancy[seed]});
    progress("MT2 seed " + std::to_string(seed) + ": dense " + fmt("%.4f", dense.back()[0]) + ", set " +
             fmt("%.4f", set.back()[0]));
  }
  std::mt19937_64 rng(606);
  const AggregateResult d = stratified_bootstrap_ci(dense, rng), s = stratified_bootstrap_ci(set, rng);
  const bool separated = s.high < d.low;
  const bool overlap_lower = !separated && s.point < d.point;
  const bool ok = separated || overlap_lower;
  const std::string outcome = separated ? "strict (non-overlapping CIs)" : overlap_lower ? "weak (overlapping CIs, lower point)"
                                                                                  : "not met";
  return {ok, "final actor dormancy IQM dense " + fmt("%.4f", d.point) + " [" + fmt("%.4f", d.low) + ", " +
                  fmt("%.4f", d.high) + "], SET " + fmt("%.4f", s.point) + " [" + fmt("%.4f", s.low) + ", " +
                  fmt("%.4f", s.high) + "]; outcome " + outcome};
}

// ---------------------------------------------------------------------------
// 7. ReDo and Reset structure inside short runs.

TrainerConfig short_config(const std::string& treatment, Index total, const std::string& extra) {
  const std::string text = R"({"name": "short", "benchmark": "MT2", "treatment": ")" + treatment +
                           R"(", "seeds": [0], "total_timesteps": )" + std::to_string(total) +
                           R"(, "ppo": {"steps_per_epoch": 500, "policy_minibatch": 250, "critic_batch": 500},
                               "metrics": {"enabled": false})" + extra + "}";
  return parse_config(text).trainer;
}

Outcome intervention_structure() {
  std::vector<std::string> problems;
  // ReDo: after some training, force a few dead units and compare the changed
  // parameter slots with the flagged set.
  Index reinitialized = 0, flagged_total = 0;
  {
    Trainer t(short_config("redo", 5000, R"(, "redo": {"frequency": 1000, "batch": 512})"));
    for (int e = 0; e < 10; ++e) reinitialized += t.train_epoch().redo_reinitialized;
    std::mt19937_64 rng(707);
    for (auto* heads : {&t.net().actor_heads(), &t.net().critic_heads()}) {
      for (auto& head : *heads) {
        for (Index u : {Index{1}, Index{5}}) {
          head.hidden.weight.value.matrix().col(u).setZero();
          head.hidden.bias.value.data()(u) = 0.0;
        }
      }
    }
    const auto batch = t.buffer().sample(512, rng);
    const DormancyResult pre = dormancy(t.net(), batch, t.config().redo.tau);
    std::vector<Vector> before;
    for (MaskedParam* p : t.net().all_params()) before.push_back(p->value.data());
    Adam* opts[] = {&t.actor_optimizer(), &t.critic_optimizer()};
    const ReDoResult r = redo_reinit(t.net(), batch, t.config().redo.tau, rng, opts);
    std::map<const MaskedParam*, std::set<Index>> allowed;
    std::map<const NeuronLayer*, std::set<Index>> changed_units;
    const auto& layers = t.net().neuron_layers();
    for (const auto& l : layers) {
      for (const auto& d : pre.layers) {
        if (d.name != l.name) continue;
        flagged_total += d.dormant;
        for (Index u : d.flagged) {
          for (Index s : incoming_slots(l, u)) allowed[l.weight].insert(s);
          allowed[l.bias].insert(u);
          for (const auto& c : l.consumers)
            for (Index s : outgoing_slots(c, u)) allowed[c.weight].insert(s);
        }
      }
    }
    if (r.count != flagged_total) problems.push_back("count " + std::to_string(r.count) + " != flagged " +
                                                     std::to_string(flagged_total));
    const auto params = t.net().all_params();
    Index stray = 0, unchanged_flagged = 0;
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (Index s = 0; s < params[i]->numel(); ++s) {
        if (params[i]->value.data()(s) != before[i](s) && !allowed[params[i]].count(s)) ++stray;
      }
    }
    // Every flagged unit's incoming weights moved (unless all its slots are masked).
    for (const auto& l : layers) {
      for (const auto& d : pre.layers) {
        if (d.name != l.name) continue;
        for (Index u : d.flagged) {
          bool moved = false, any_active = false;
          const std::size_t pi = static_cast<std::size_t>(std::find(params.begin(), params.end(), l.weight) - params.begin());
          for (Index s : incoming_slots(l, u)) {
            any_active = any_active || l.weight->mask.data()(s) != 0.0;
            moved = moved || l.weight->value.data()(s) != before[pi](s);
          }
          if (any_active && !moved) ++unchanged_flagged;
        }
      }
    }
    if (stray) problems.push_back(std::to_string(stray) + " slots changed outside the flagged set");
    if (unchanged_flagged) problems.push_back(std::to_string(unchanged_flagged) + " flagged units not reinitialized");
  }

  // Reset: count events over a short horizon and watch the trunk across each event.
  std::string reset_detail;
  for (int m : {2, 6}) {
    TrainerConfig cfg = short_config("reset", 5000, R"(, "reset": {"frequency": 1000, "max_resets": )" +
                                                        std::to_string(m) + "}");
    Trainer t(cfg);
    std::vector<Vector> trunk;
    std::vector<Vector> heads;
    int trunk_changes = 0, head_misses = 0;
    t.add_hook({"snapshot", Hook::Phase::Sparsity, [&](Trainer& tr, Index, Index, EpochLog&) {
                  trunk.clear();
                  heads.clear();
                  for (MaskedParam* p : tr.net().shared_params()) trunk.push_back(p->value.data());
                  for (MaskedParam* p : tr.net().actor_head_params()) heads.push_back(p->value.data());
                }});
    int seen = 0;
    t.add_hook({"compare", Hook::Phase::Measurement, [&](Trainer& tr, Index, Index, EpochLog&) {
                  const auto shared = tr.net().shared_params();
                  for (std::size_t i = 0; i < shared.size(); ++i) trunk_changes += shared[i]->value.data() != trunk[i];
                  if (tr.resets_performed() > seen) {
                    const auto hp = tr.net().actor_head_params();
                    bool moved = false;
                    for (std::size_t i = 0; i < hp.size(); ++i) moved = moved || hp[i]->value.data() != heads[i];
                    head_misses += !moved;
                    seen = tr.resets_performed();
                  }
                }});
    for (int e = 0; e < cfg.ppo.epochs; ++e) t.train_epoch();
    const int expected = std::min<int>(static_cast<int>(5000 / 1000), m);
    if (t.resets_performed() != expected)
      problems.push_back("m=" + std::to_string(m) + ": " + std::to_string(t.resets_performed()) + " resets, expected " +
                         std::to_string(expected));
    if (trunk_changes) problems.push_back("trunk changed across a reset event");
    if (head_misses) problems.push_back("reset left heads unchanged");
    reset_detail += " m=" + std::to_string(m) + ":" + std::to_string(t.resets_performed());
  }
  return {problems.empty(), "ReDo reinitialized " + std::to_string(flagged_total) + " flagged units exactly (" +
                                std::to_string(reinitialized) + " during training); resets over T=5000, f_r=1000:" +
                                reset_detail + (problems.empty() ? "" : "; problems: " + problems.front())};
}

// ---------------------------------------------------------------------------
// 8. PCGrad on random pairs.

Outcome pcgrad_pairs() {
  std::mt19937_64 rng(808);
  std::normal_distribution<double> n(0.0, 1.0);
  int conflicting = 0, bad_sum = 0, bad_dot = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const Index d = 2 + trial % 9;
    Vector a(d), b(d);
    for (Index i = 0; i < d; ++i) {
      a(i) = n(rng);
      b(i) = n(rng);
    }
    const std::vector<Vector> grads{a, b};
    const auto out = pcgrad_surgery(grads, rng);
    if (a.dot(b) >= 0) {
      if ((pcgrad_project(grads, rng) - (a + b)).norm() != 0.0) ++bad_sum;
    } else {
      ++conflicting;
      if (out[0].dot(b) < -1e-12 || out[1].dot(a) < -1e-12) ++bad_dot;
    }
  }
  return {bad_sum == 0 && bad_dot == 0, std::to_string(1000 - conflicting) + " non-conflicting pairs summed exactly (" +
                                            std::to_string(bad_sum) + " mismatches); " + std::to_string(conflicting) +
                                            " conflicting pairs, " + std::to_string(bad_dot) + " residual conflicts"};
}

// ---------------------------------------------------------------------------
// 9. Bootstrap determinism and coverage.

Outcome statistics() {
  std::mt19937_64 gen(909);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ScoreMatrix m(7, std::vector<double>(3));
  for (auto& row : m)
    for (double& v : row) v = u(gen);
  std::mt19937_64 a(5), b(5);
  const AggregateResult x = stratified_bootstrap_ci(m, a), y = stratified_bootstrap_ci(m, b);
  const bool deterministic = x.point == y.point && x.low == y.low && x.high == y.high;
  const double coverage = bootstrap_coverage(500, 20, 3, 9090);
  return {deterministic && coverage >= 0.90 && coverage <= 0.99,
          std::string("repeat with same seed ") + (deterministic ? "identical" : "differs") + "; coverage " +
              fmt("%.3f", coverage) + " over 500 trials (R=20, M=3)"};
}

}  // namespace

int main() {
  std::cout.setf(std::ios::unitbuf);
  const std::vector<Criterion> criteria{
      {1, "GMP schedule exactness", 1.0, schedule_exactness},
      {2, "sparsity attainment (GMP and SET on MT2)", 2 * 20 * 60.0, sparsity_attainment},
      {3, "metric oracles", 60.0, metric_oracles},
      {4, "gradient correctness", 60.0, gradient_correctness},
      {5, "learning sanity (nav-goal)", 10 * 60.0, learning_sanity},
      {6, "dormancy trend (SET vs dense, MT2)", 40 * 60.0, dormancy_trend},
      {7, "intervention structure", 5 * 60.0, intervention_structure},
      {8, "PCGrad conflicts", 1.0, pcgrad_pairs},
      {9, "bootstrap statistics", 120.0, statistics},
      {10, "determinism", 1e9, determinism},
  };
  std::map<int, std::string> lines;
  bool all = true;
  for (const auto& c : criteria) {
    std::cerr << "criterion " << c.id << ": " << c.title << std::endl;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) {
      o.pass = false;
      o.detail += "; over time budget";
    }
    all = all && o.pass;
    lines[c.id] = std::string(o.pass ? "PASS" : "FAIL") + " criterion " + std::to_string(c.id) + " (" + c.title +
                  "): " + o.detail + " [" + fmt("%.1f", secs) + " s]";
    std::cerr << "  " << lines[c.id] << std::endl;
  }
  for (const auto& [id, line] : lines) std::cout << line << '\n';
  fs::remove_all(scratch_dir());
  return all ? 0 : 1;
}
