#include "mtsparse/envs.hpp"

#include <algorithm>
#include <deque>
#include <map>

namespace mtsparse::env {

namespace {

constexpr int kMaxSteps = 4 * kGridSize * kGridSize;

struct RegistryEntry {
  const char* name;
  TaskKind kind;
  int optimal_steps;
};

// optimal_steps = shortest_solution() length on canonical_layout(kind).
constexpr RegistryEntry kRegistry[] = {
    {"nav-goal", TaskKind::NavGoal, 9},    {"lava-gap", TaskKind::LavaGap, 9},
    {"door-key", TaskKind::DoorKey, 13},   {"memory-cue", TaskKind::MemoryCue, 7},
    {"dist-shift", TaskKind::DistShift, 13},
};

constexpr int kDx[4] = {1, 0, -1, 0};
constexpr int kDy[4] = {0, 1, 0, -1};

GridState walled_room() {
  GridState s;
  s.cells.fill(Cell::Empty);
  s.codes.fill(0);
  for (int i = 0; i < kGridSize; ++i) {
    s.at(i, 0) = Cell::Wall;
    s.at(i, kGridSize - 1) = Cell::Wall;
    s.at(0, i) = Cell::Wall;
    s.at(kGridSize - 1, i) = Cell::Wall;
  }
  s.agent_x = 1;
  s.agent_y = 1;
  s.heading = 0;
  return s;
}

std::vector<GridState> nav_goal_layouts() {
  // Wall across row 3 with a single crossing.
  std::vector<GridState> out;
  for (int gap = 1; gap <= 5; ++gap) {
    GridState s = walled_room();
    for (int x = 1; x <= 5; ++x) {
      if (x != gap) s.at(x, 3) = Cell::Wall;
    }
    s.at(5, 5) = Cell::Goal;
    out.push_back(s);
  }
  return out;
}

std::vector<GridState> lava_gap_layouts() {
  // Lava down column 3 with exactly one safe cell.
  std::vector<GridState> out;
  for (int gap = 1; gap <= 5; ++gap) {
    GridState s = walled_room();
    for (int y = 1; y <= 5; ++y) {
      if (y != gap) s.at(3, y) = Cell::Lava;
    }
    s.at(5, 5) = Cell::Goal;
    out.push_back(s);
  }
  return out;
}

std::vector<GridState> door_key_layouts() {
  std::vector<GridState> out;
  const std::pair<int, int> keys[] = {{1, 3}, {2, 5}, {1, 5}};
  for (int door_y : {2, 4}) {
    for (auto [kx, ky] : keys) {
      GridState s = walled_room();
      for (int y = 1; y <= 5; ++y) s.at(3, y) = Cell::Wall;
      s.at(3, door_y) = Cell::Door;
      s.code(3, door_y) = kDoorLocked;
      s.at(kx, ky) = Cell::Key;
      s.at(5, 5) = Cell::Goal;
      out.push_back(s);
    }
  }
  return out;
}

std::vector<GridState> memory_cue_layouts() {
  // Start room (column 1), corridor along row 3, split at column 5 with one
  // object at each end. The cue sits above the start.
  std::vector<GridState> out;
  for (Cell cue : {Cell::Ball, Cell::Key}) {
    for (Cell top : {Cell::Ball, Cell::Key}) {
      GridState s = walled_room();
      for (int y = 1; y <= 5; ++y) {
        for (int x = 1; x <= 5; ++x) s.at(x, y) = Cell::Wall;
      }
      for (int y = 2; y <= 4; ++y) {
        s.at(1, y) = Cell::Empty;
        s.at(5, y) = Cell::Empty;
      }
      for (int x = 2; x <= 4; ++x) s.at(x, 3) = Cell::Empty;
      s.at(1, 2) = cue;
      s.at(5, 1) = top;
      s.at(5, 5) = top == Cell::Ball ? Cell::Key : Cell::Ball;
      s.cue = cue;
      s.agent_x = 1;
      s.agent_y = 3;
      s.heading = 0;
      out.push_back(s);
    }
  }
  return out;
}

std::vector<GridState> dist_shift_layouts() {
  GridState s = walled_room();
  for (int y = 1; y <= 3; ++y) s.at(3, y) = Cell::Lava;
  s.at(5, 1) = Cell::Goal;
  return {s};
}

bool is_memory_target(int x, int y) {
  return x == 5 && (y == 1 || y == 5);
}

std::string state_key(const GridState& s) {
  std::string key(s.cells.size() * 2 + 4, '\0');
  for (std::size_t i = 0; i < s.cells.size(); ++i) {
    key[2 * i] = static_cast<char>(s.cells[i]);
    key[2 * i + 1] = static_cast<char>(s.codes[i]);
  }
  const std::size_t o = s.cells.size() * 2;
  key[o] = static_cast<char>(s.agent_x);
  key[o + 1] = static_cast<char>(s.agent_y);
  key[o + 2] = static_cast<char>(s.heading);
  key[o + 3] = static_cast<char>(s.carrying);
  return key;
}

}  // namespace

double success_reward(int steps_taken, int max_episode_steps) {
  return 1.0 - 0.9 * (static_cast<double>(steps_taken) / static_cast<double>(max_episode_steps));
}

double TaskContext::achievable_reward() const { return success_reward(optimal_steps, max_episode_steps); }

std::vector<std::string> task_names() {
  std::vector<std::string> out;
  for (const auto& e : kRegistry) out.emplace_back(e.name);
  return out;
}

TaskContext make_task(const std::string& name, int id) {
  for (const auto& e : kRegistry) {
    if (name == e.name) {
      TaskContext t;
      t.id = id;
      t.name = e.name;
      t.kind = e.kind;
      t.max_episode_steps = kMaxSteps;
      t.optimal_steps = e.optimal_steps;
      return t;
    }
  }
  throw ConfigError("unknown task '" + name + "'");
}

std::vector<TaskContext> make_benchmark(const std::string& name) {
  std::vector<std::string> names;
  if (name == "MT2") {
    names = {"nav-goal", "lava-gap"};
  } else if (name == "MT3") {
    names = {"nav-goal", "lava-gap", "door-key"};
  } else if (name == "MT5") {
    names = {"nav-goal", "lava-gap", "door-key", "memory-cue", "dist-shift"};
  } else {
    throw ConfigError("unknown benchmark '" + name + "' (expected MT2, MT3 or MT5)");
  }
  std::vector<TaskContext> out;
  for (std::size_t i = 0; i < names.size(); ++i) out.push_back(make_task(names[i], static_cast<int>(i)));
  return out;
}

std::vector<GridState> layouts(TaskKind kind) {
  switch (kind) {
    case TaskKind::NavGoal:
      return nav_goal_layouts();
    case TaskKind::LavaGap:
      return lava_gap_layouts();
    case TaskKind::DoorKey:
      return door_key_layouts();
    case TaskKind::MemoryCue:
      return memory_cue_layouts();
    case TaskKind::DistShift:
      break;
  }
  return dist_shift_layouts();
}

GridState canonical_layout(TaskKind kind) {
  const auto all = layouts(kind);
  std::size_t best = 0;
  std::size_t best_len = static_cast<std::size_t>(-1);
  for (std::size_t i = 0; i < all.size(); ++i) {
    auto path = shortest_solution(kind, all[i], kMaxSteps);
    if (path && path->size() < best_len) {
      best_len = path->size();
      best = i;
    }
  }
  return all[best];
}

Transition transition(TaskKind kind, const GridState& s, Action action) {
  Transition t{s, false, false};
  GridState& n = t.next;
  const int fx = s.agent_x + kDx[s.heading];
  const int fy = s.agent_y + kDy[s.heading];
  const bool in_grid = fx >= 0 && fy >= 0 && fx < kGridSize && fy < kGridSize;
  const Cell front = in_grid ? s.at(fx, fy) : Cell::Wall;
  switch (action) {
    case Action::Left:
      n.heading = (s.heading + 3) % 4;
      break;
    case Action::Right:
      n.heading = (s.heading + 1) % 4;
      break;
    case Action::Forward:
      if (kind == TaskKind::MemoryCue && is_memory_target(fx, fy)) {
        (front == s.cue ? t.success : t.failure) = true;
        break;
      }
      if (front == Cell::Empty || front == Cell::Goal || front == Cell::Lava ||
          (front == Cell::Door && s.code(fx, fy) == kDoorOpen)) {
        n.agent_x = fx;
        n.agent_y = fy;
        if (front == Cell::Goal) t.success = true;
        if (front == Cell::Lava) t.failure = true;
      }
      break;
    case Action::Pickup:
      if (kind == TaskKind::DoorKey && front == Cell::Key && !s.carrying) {
        n.carrying = true;
        n.at(fx, fy) = Cell::Empty;
      }
      break;
    case Action::Drop:
      if (kind == TaskKind::DoorKey && s.carrying && front == Cell::Empty) {
        n.carrying = false;
        n.at(fx, fy) = Cell::Key;
      }
      break;
    case Action::Toggle:
      if (front == Cell::Door && s.code(fx, fy) == kDoorLocked && s.carrying) n.code(fx, fy) = kDoorOpen;
      break;
    case Action::Done:
      break;
  }
  return t;
}

std::optional<std::vector<int>> shortest_solution(TaskKind kind, const GridState& start, int max_depth) {
  struct Entry {
    GridState state;
    std::vector<int> path;
  };
  std::map<std::string, bool> seen;
  std::deque<Entry> frontier;
  frontier.push_back({start, {}});
  seen[state_key(start)] = true;
  while (!frontier.empty()) {
    Entry e = std::move(frontier.front());
    frontier.pop_front();
    if (static_cast<int>(e.path.size()) >= max_depth) continue;
    for (int a = 0; a < kActionCount; ++a) {
      Transition t = transition(kind, e.state, static_cast<Action>(a));
      if (t.failure) continue;
      std::vector<int> path = e.path;
      path.push_back(a);
      if (t.success) return path;
      const std::string key = state_key(t.next);
      if (seen.emplace(key, true).second) frontier.push_back({std::move(t.next), std::move(path)});
    }
  }
  return std::nullopt;
}

GridWorld::GridWorld(TaskContext task) : task_(std::move(task)) {}

Tensor GridWorld::reset(std::mt19937_64& rng) {
  const auto all = layouts(task_.kind);
  std::uniform_int_distribution<std::size_t> pick(0, all.size() - 1);
  return reset_to(all[pick(rng)]);
}

Tensor GridWorld::reset_to(const GridState& layout) {
  state_ = layout;
  steps_ = 0;
  active_ = true;
  return observe(state_);
}

StepResult GridWorld::step(int action) {
  if (!active_) throw ContractViolation("step() on an inactive episode; call reset() first");
  if (action < 0 || action >= kActionCount) {
    throw ContractViolation("action " + std::to_string(action) + " outside [0, 7)");
  }
  Transition t = transition(task_.kind, state_, static_cast<Action>(action));
  state_ = std::move(t.next);
  ++steps_;
  StepResult r;
  if (t.success) {
    r.reward = success_reward(steps_, task_.max_episode_steps);
    r.terminated = true;
  } else if (t.failure) {
    r.terminated = true;
  } else if (steps_ >= task_.max_episode_steps) {
    r.truncated = true;
  }
  active_ = !(r.terminated || r.truncated);
  r.observation = observe(state_);
  return r;
}

Tensor GridWorld::observe(const GridState& s) {
  Tensor obs({kChannels, kViewSize, kViewSize});
  auto& d = obs.data();
  const int half = kViewSize / 2;
  constexpr int plane = kViewSize * kViewSize;
  for (int vy = 0; vy < kViewSize; ++vy) {
    for (int vx = 0; vx < kViewSize; ++vx) {
      const int x = s.agent_x + vx - half;
      const int y = s.agent_y + vy - half;
      const int i = vy * kViewSize + vx;
      if (x < 0 || y < 0 || x >= kGridSize || y >= kGridSize) {
        d(i) = static_cast<double>(Cell::Wall);
        continue;
      }
      d(i) = static_cast<double>(s.at(x, y));
      d(plane + i) = static_cast<double>(s.code(x, y));
    }
  }
  const int centre = half * kViewSize + half;
  d(plane + centre) = s.carrying ? 1.0 : 0.0;
  d(2 * plane + centre) = static_cast<double>(s.heading + 1);
  return obs;
}

}  // namespace mtsparse::env
