#include <doctest.h>

#include <cmath>
#include <random>

#include "mtsparse/ppo.hpp"
#include "mtsparse/trainer.hpp"

using namespace mtsparse;

namespace {

// Discounted return-to-go, truncated at the first episode end.
std::vector<double> monte_carlo_returns(const std::vector<double>& r, const std::vector<std::uint8_t>& done,
                                        double bootstrap, double gamma) {
  std::vector<double> out(r.size());
  for (std::size_t t = 0; t < r.size(); ++t) {
    double g = 0.0, disc = 1.0;
    std::size_t k = t;
    for (; k < r.size(); ++k) {
      g += disc * r[k];
      disc *= gamma;
      if (done[k]) break;
    }
    if (k == r.size()) g += disc * bootstrap;
    out[t] = g;
  }
  return out;
}

TrainerConfig small_config(Treatment treatment, Index steps = 200) {
  TrainerConfig cfg;
  cfg.tasks = env::make_benchmark("MT2");
  cfg.treatment = treatment;
  cfg.arch.hidden = 16;
  cfg.ppo.steps_per_epoch = steps;
  cfg.ppo.epochs = 5;
  cfg.ppo.policy_epochs = 2;
  cfg.ppo.policy_minibatch = 64;
  cfg.ppo.critic_batch = steps;
  cfg.ppo.eval_episodes = 1;
  cfg.ppo.eval_frequency = 1000000;
  cfg.measure = false;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_CASE("GAE examples") {
  const std::vector<double> r1{1.0}, v1{0.0};
  const std::vector<std::uint8_t> d1{1};
  GaeResult g = compute_gae(r1, v1, d1, 5.0, 0.99, 0.95);
  CHECK(g.advantages(0) == doctest::Approx(1.0));
  CHECK(g.returns(0) == doctest::Approx(1.0));

  const std::vector<double> r2{0.0, 1.0}, v2{0.0, 0.0};
  const std::vector<std::uint8_t> d2{0, 1};
  g = compute_gae(r2, v2, d2, 0.0, 1.0, 1.0);
  CHECK(g.advantages(0) == doctest::Approx(1.0));
  CHECK(g.advantages(1) == doctest::Approx(1.0));
}

TEST_CASE("GAE limits against independent oracles") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 30;
    std::vector<double> r(n), v(n);
    std::vector<std::uint8_t> d(n);
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = u(rng) < 0.2 ? u(rng) : 0.0;
      v[i] = u(rng);
      d[i] = u(rng) < 0.15 ? 1 : 0;
    }
    const double boot = u(rng);
    const double gamma = 0.9;

    // lambda = 1: returns equal the Monte-Carlo discounted returns.
    const GaeResult mc = compute_gae(r, v, d, boot, gamma, 1.0);
    const auto oracle = monte_carlo_returns(r, d, boot, gamma);
    for (std::size_t i = 0; i < n; ++i) CHECK(mc.returns(static_cast<Index>(i)) == doctest::Approx(oracle[i]));

    // lambda = 0: advantages equal one-step TD residuals.
    const GaeResult td = compute_gae(r, v, d, boot, gamma, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double next = i + 1 < n ? v[i + 1] : boot;
      const double delta = r[i] + gamma * next * (1 - d[i]) - v[i];
      CHECK(td.advantages(static_cast<Index>(i)) == doctest::Approx(delta));
    }
  }
}

TEST_CASE("advantage normalization") {
  Vector a(4);
  a << 1, 2, 3, 4;
  normalize_advantages(a);
  CHECK(a.mean() == doctest::Approx(0.0).scale(1.0));
  CHECK(std::sqrt(a.squaredNorm() / 4) == doctest::Approx(1.0));
  Vector one(1);
  one << 3.0;
  normalize_advantages(one);
  CHECK(one(0) == 0.0);
}

TEST_CASE("clipped surrogate loss") {
  const std::vector<double> same{-1.0, -2.0}, adv{0.5, 1.5}, ent{0.7, 0.9};
  CHECK(ppo_policy_loss(same, same, adv, 0.2, ent, 0.01) == doctest::Approx(-1.0 - 0.01 * 0.8));

  const std::vector<double> lo{0.0}, hi{std::log(1.5)}, one{1.0}, none{0.0};
  CHECK(ppo_policy_loss(hi, lo, one, 0.2, none, 0.01) == doctest::Approx(-1.2));
  const std::vector<double> neg{-1.0};
  CHECK(ppo_policy_loss(hi, lo, neg, 0.2, none, 0.01) == doctest::Approx(1.5));

  const std::vector<double> zeros{0.0, 0.0};
  CHECK(ppo_policy_loss(same, zeros, zeros, 0.2, ent, 0.01) == doctest::Approx(-0.01 * 0.8));

  const std::vector<double> huge{1000.0};
  CHECK_THROWS_AS(ppo_policy_loss(huge, lo, one, 0.2, none, 0.01), NumericError);
}

TEST_CASE("critic loss") {
  const std::vector<double> a{1.0, 3.0}, z{0.0, 0.0};
  CHECK(critic_loss(a, a) == 0.0);
  CHECK(critic_loss(a, z) == doctest::Approx(5.0));
  const std::vector<double> p{0.0}, t{2.0};
  CHECK(critic_loss(p, t) == doctest::Approx(4.0));
}

TEST_CASE("PCGrad projection") {
  std::mt19937_64 rng(1);
  Vector g1(2), g2(2);
  g1 << 1, 0;
  g2 << -1, 1;
  const std::vector<Vector> grads{g1, g2};
  const auto out = pcgrad_surgery(grads, rng);
  CHECK(out[0](0) == doctest::Approx(0.5));
  CHECK(out[0](1) == doctest::Approx(0.5));
  CHECK(out[1](0) == doctest::Approx(0.0).scale(1.0));
  CHECK(out[1](1) == doctest::Approx(1.0));

  Vector a(2), b(2);
  a << 1, 2;
  b << 3, 0;
  const std::vector<Vector> agree{a, b};
  CHECK((pcgrad_project(agree, rng) - (a + b)).norm() == 0.0);
  const std::vector<Vector> single{g2};
  CHECK((pcgrad_project(single, rng) - g2).norm() == 0.0);
  const std::vector<Vector> with_zero{g1, Vector::Zero(2)};
  CHECK((pcgrad_project(with_zero, rng) - g1).norm() == 0.0);
}

TEST_CASE("PCGrad removes conflicts against the original gradients") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Vector> grads(3, Vector(6));
    for (auto& g : grads) {
      for (Index i = 0; i < 6; ++i) g(i) = n(rng);
    }
    const auto out = pcgrad_surgery(grads, rng);
    // With two tasks the last projection leaves no conflict with the partner.
    const std::vector<Vector> pair{grads[0], grads[1]};
    const auto two = pcgrad_surgery(pair, rng);
    CHECK(two[0].dot(grads[1]) >= -1e-12);
    CHECK(two[1].dot(grads[0]) >= -1e-12);
    for (const auto& g : out) CHECK(g.allFinite());
  }
}

TEST_CASE("tasks are drawn uniformly") {
  std::mt19937_64 rng(2024);
  const int k = 5, n = 50000;
  std::vector<int> counts(k, 0);
  for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(sample_task(rng, k))];
  double chi2 = 0.0;
  const double expected = static_cast<double>(n) / k;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 18.47);  // 99.9th percentile, 4 degrees of freedom
}

TEST_CASE("config validation") {
  PPOConfig p;
  CHECK_NOTHROW(p.validate());
  p.clip = 1.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = PPOConfig{};
  p.actor_lr = 0.0;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  CHECK(PPOConfig{}.total_timesteps() == 120000);

  TrainerConfig cfg = small_config(Treatment::Dense);
  cfg.tasks[1].id = 5;
  CHECK_THROWS_AS(Trainer{cfg}, ConfigError);
  CHECK(treatment_from_name("gmp+pcgrad") == Treatment::GmpPcgrad);
  CHECK_THROWS_AS(treatment_from_name("dropout"), ConfigError);
  for (const auto& name : treatment_names()) CHECK(treatment_name(treatment_from_name(name)) == name);
}

TEST_CASE("an epoch collects the configured steps and resamples tasks") {
  Trainer t(small_config(Treatment::Dense, 300));
  const EpochLog log = t.train_epoch();
  CHECK(log.epoch == 1);
  CHECK(log.timestep == 300);
  CHECK(t.timestep() == 300);
  CHECK(std::isfinite(log.policy_loss));
  CHECK(std::isfinite(log.value_loss));
  CHECK(t.buffer().size() == 300);
  CHECK(static_cast<int>(t.episode_tasks().size()) == log.episodes + 1);
  CHECK(log.sparsity.global_sparsity == 0.0);
  CHECK_FALSE(log.eval.has_value());
}

TEST_CASE("hooks fire in phase order and failures name the hook") {
  Trainer t(small_config(Treatment::Dense), false);
  std::vector<std::string> order;
  auto record = [&order](std::string name, Hook::Phase phase) {
    return Hook{name, phase, [&order, name](Trainer&, Index from, Index to, EpochLog&) {
                  CHECK(to - from == 200);
                  order.push_back(name);
                }};
  };
  t.add_hook(record("measure", Hook::Phase::Measurement));
  t.add_hook(record("intervene", Hook::Phase::Intervention));
  t.add_hook(record("sparsify", Hook::Phase::Sparsity));
  t.add_hook(record("measure2", Hook::Phase::Measurement));
  t.train_epoch();
  CHECK(order == std::vector<std::string>{"sparsify", "intervene", "measure", "measure2"});

  t.add_hook({"broken", Hook::Phase::Measurement,
              [](Trainer&, Index, Index, EpochLog&) { throw NumericError("nan in probe"); }});
  try {
    t.train_epoch();
    FAIL("expected a hook error");
  } catch (const HookError& e) {
    CHECK(e.hook() == "broken");
    CHECK(std::string(e.what()).find("nan in probe") != std::string::npos);
  }
}

TEST_CASE("pruning fires once per crossed frequency multiple") {
  TrainerConfig cfg = small_config(Treatment::Gmp, 2000);
  cfg.ppo.policy_epochs = 1;
  cfg.ppo.policy_minibatch = 500;
  cfg.gmp.frequency = 500;
  Trainer t(cfg);
  EpochLog first = t.train_epoch();
  CHECK(first.prune_events == 4);
  EpochLog second = t.train_epoch();
  CHECK(second.prune_events == 4);
  CHECK(second.sparsity.global_sparsity > first.sparsity.global_sparsity);
  CHECK(second.sparsity.global_sparsity ==
        doctest::Approx(gmp_target_sparsity(4000.0, t.config().gmp)).epsilon(1e-3));
}

TEST_CASE("evaluation runs at every multiple of the eval frequency") {
  TrainerConfig cfg = small_config(Treatment::Dense, 200);
  cfg.ppo.policy_epochs = 1;
  cfg.ppo.eval_frequency = 1000;
  Trainer t(cfg);
  for (int e = 1; e <= 10; ++e) {
    const EpochLog log = t.train_epoch();
    CHECK(log.eval.has_value() == (e % 5 == 0));
    if (log.eval) {
      REQUIRE(log.eval->normalized.size() == 2);
      for (double s : log.eval->normalized) CHECK((s >= 0.0 && s <= 1.0));
    }
  }
}

TEST_CASE("training is deterministic for a seed") {
  for (Treatment tr : {Treatment::Dense, Treatment::GmpPcgrad}) {
    TrainerConfig cfg = small_config(tr, 256);
    cfg.ppo.policy_epochs = 1;
    Trainer a(cfg), b(cfg);
    for (int e = 0; e < 2; ++e) {
      const EpochLog la = a.train_epoch(), lb = b.train_epoch();
      CHECK(la.policy_loss == lb.policy_loss);
      CHECK(la.value_loss == lb.value_loss);
      CHECK(la.train_return == lb.train_return);
    }
    for (std::size_t i = 0; i < a.net().all_params().size(); ++i) {
      CHECK(a.net().all_params()[i]->value.data() == b.net().all_params()[i]->value.data());
    }
  }
}
