#include <doctest.h>

#include <random>

#include "mtsparse/envs.hpp"

using namespace mtsparse;
using namespace mtsparse::env;

TEST_CASE("benchmark registry order") {
  auto names = [](const std::vector<TaskContext>& ts) {
    std::vector<std::string> out;
    for (const auto& t : ts) out.push_back(t.name);
    return out;
  };
  CHECK(names(make_benchmark("MT2")) == std::vector<std::string>{"nav-goal", "lava-gap"});
  CHECK(names(make_benchmark("MT3")) == std::vector<std::string>{"nav-goal", "lava-gap", "door-key"});
  CHECK(names(make_benchmark("MT5")) ==
        std::vector<std::string>{"nav-goal", "lava-gap", "door-key", "memory-cue", "dist-shift"});
  const auto mt5 = make_benchmark("MT5");
  for (std::size_t i = 0; i < mt5.size(); ++i) {
    CHECK(mt5[i].id == static_cast<int>(i));
    CHECK(mt5[i].action_count == 7);
    CHECK(mt5[i].max_episode_steps == 4 * kGridSize * kGridSize);
    CHECK(mt5[i].optimal_steps > 0);
    CHECK(mt5[i].optimal_steps <= mt5[i].max_episode_steps);
  }
  CHECK_THROWS_AS(make_benchmark("MT7"), ConfigError);
  CHECK_THROWS_AS(make_task("maze"), ConfigError);
}

TEST_CASE("success reward formula") {
  CHECK(success_reward(196, 196) == doctest::Approx(0.1));
  CHECK(success_reward(11, 360) == doctest::Approx(0.9725));
  TaskContext doorkey{0, "door-key", TaskKind::DoorKey, 360, 11};
  CHECK(doorkey.achievable_reward() == doctest::Approx(0.9725));
}

TEST_CASE("registered optimal steps equal the search oracle on the canonical layout") {
  for (const auto& name : task_names()) {
    CAPTURE(name);
    const TaskContext task = make_task(name);
    const auto plan = shortest_solution(task.kind, canonical_layout(task.kind), task.max_episode_steps);
    REQUIRE(plan.has_value());
    CHECK(static_cast<int>(plan->size()) == task.optimal_steps);

    GridWorld world(task);
    world.reset_to(canonical_layout(task.kind));
    StepResult last;
    for (int a : *plan) last = world.step(a);
    CHECK(last.terminated);
    CHECK(last.reward == doctest::Approx(task.achievable_reward()));

    for (const auto& layout : layouts(task.kind)) {
      const auto p = shortest_solution(task.kind, layout, task.max_episode_steps);
      REQUIRE(p.has_value());
      CHECK(static_cast<int>(p->size()) >= task.optimal_steps);
    }
  }
}

TEST_CASE("reset is deterministic given the seed") {
  GridWorld a(make_task("nav-goal")), b(make_task("nav-goal"));
  std::mt19937_64 r1(42), r2(42);
  CHECK(a.reset(r1).data() == b.reset(r2).data());
  CHECK(a.steps_taken() == 0);
}

TEST_CASE("generators place their objects") {
  for (const auto& s : layouts(TaskKind::DoorKey)) {
    int keys = 0, doors = 0;
    for (Cell c : s.cells) {
      keys += c == Cell::Key;
      doors += c == Cell::Door;
    }
    CHECK(keys == 1);
    CHECK(doors == 1);
  }
  for (const auto& s : layouts(TaskKind::LavaGap)) {
    int gaps = 0;
    for (int y = 1; y < kGridSize - 1; ++y) gaps += s.at(3, y) != Cell::Lava;
    CHECK(gaps == 1);
  }
}

TEST_CASE("lava ends the episode without reward") {
  GridState s = canonical_layout(TaskKind::LavaGap);
  int lava_y = 1;
  while (s.at(3, lava_y) != Cell::Lava) ++lava_y;
  s.agent_x = 2;
  s.agent_y = lava_y;
  s.heading = 0;
  GridWorld world(make_task("lava-gap"));
  world.reset_to(s);
  const StepResult r = world.step(static_cast<int>(Action::Forward));
  CHECK(r.terminated);
  CHECK_FALSE(r.truncated);
  CHECK(r.reward == 0.0);
  CHECK_THROWS_AS(world.step(0), ContractViolation);
}

TEST_CASE("episodes truncate at the step limit") {
  const TaskContext task = make_task("nav-goal");
  GridWorld world(task);
  world.reset_to(canonical_layout(task.kind));
  CHECK_THROWS_AS(world.step(7), ContractViolation);
  CHECK_THROWS_AS(world.step(-1), ContractViolation);
  StepResult r;
  for (int i = 0; i < task.max_episode_steps; ++i) {
    r = world.step(static_cast<int>(Action::Done));
    CHECK(r.reward == 0.0);
    if (i + 1 < task.max_episode_steps) CHECK_FALSE(r.truncated);
  }
  CHECK(r.truncated);
  CHECK(world.steps_taken() == task.max_episode_steps);
}

TEST_CASE("observations stay inside their channel code ranges") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> act(0, kActionCount - 1);
  for (const auto& name : task_names()) {
    GridWorld world(make_task(name));
    Tensor obs = world.reset(rng);
    for (int step = 0; step < 300; ++step) {
      REQUIRE(obs.shape() == Shape{3, 5, 5});
      const auto m = obs.matrix();
      CHECK(m.row(0).maxCoeff() <= kMaxCellCode);
      CHECK(m.row(1).maxCoeff() <= kMaxStateCode);
      CHECK(m.row(2).maxCoeff() <= kMaxHeadingCode);
      CHECK(m.minCoeff() >= 0.0);
      CHECK(m(2, 12) == world.state().heading + 1);
      StepResult r = world.step(act(rng));
      CHECK(r.reward >= 0.0);
      CHECK(r.reward < 1.0);
      obs = (r.terminated || r.truncated) ? world.reset(rng) : r.observation;
    }
  }
}
