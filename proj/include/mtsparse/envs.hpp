#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mtsparse/tensor.hpp"

namespace mtsparse::env {

inline constexpr int kGridSize = 7;
inline constexpr int kViewSize = 5;
inline constexpr int kChannels = 3;
inline constexpr int kActionCount = 7;

enum class Action : int { Left = 0, Right = 1, Forward = 2, Pickup = 3, Drop = 4, Toggle = 5, Done = 6 };

/// Channel-0 object codes.
enum class Cell : std::uint8_t { Empty = 0, Wall = 1, Goal = 2, Lava = 3, Key = 4, Door = 5, Ball = 6 };
inline constexpr int kMaxCellCode = 6;
/// Channel-1 codes: door state (0 open, 2 locked) or, at the agent cell, 1 when carrying.
inline constexpr int kMaxStateCode = 2;
inline constexpr std::uint8_t kDoorOpen = 0;
inline constexpr std::uint8_t kDoorLocked = 2;
/// Channel-2 codes: heading + 1 at the agent cell, 0 elsewhere.
inline constexpr int kMaxHeadingCode = 4;

enum class TaskKind { NavGoal, LavaGap, DoorKey, MemoryCue, DistShift };

/// Block-contextual task handle: context id plus the task's POMDP constants.
struct TaskContext {
  int id = 0;
  std::string name;
  TaskKind kind = TaskKind::NavGoal;
  int max_episode_steps = 0;
  int optimal_steps = 0;
  int action_count = kActionCount;
  int channels = kChannels;
  int view = kViewSize;

  /// 1 - 0.9 * optimal / max: the raw return of a shortest-path episode.
  double achievable_reward() const;
};

/// Success reward for an episode finishing after `steps_taken` steps.
double success_reward(int steps_taken, int max_episode_steps);

std::vector<std::string> task_names();
/// Registry lookup; `id` becomes the context id. Throws ConfigError on unknown names.
TaskContext make_task(const std::string& name, int id = 0);
/// MT2, MT3 or MT5 in their fixed order. Throws ConfigError otherwise.
std::vector<TaskContext> make_benchmark(const std::string& name);

/// Full world state: cell classes, per-cell state codes and the agent pose.
struct GridState {
  std::array<Cell, kGridSize * kGridSize> cells{};
  std::array<std::uint8_t, kGridSize * kGridSize> codes{};
  int agent_x = 1;
  int agent_y = 1;
  int heading = 0;  // 0 east, 1 south, 2 west, 3 north
  bool carrying = false;
  Cell cue = Cell::Empty;  // memory-cue target class

  Cell& at(int x, int y) { return cells[static_cast<std::size_t>(y * kGridSize + x)]; }
  Cell at(int x, int y) const { return cells[static_cast<std::size_t>(y * kGridSize + x)]; }
  std::uint8_t& code(int x, int y) { return codes[static_cast<std::size_t>(y * kGridSize + x)]; }
  std::uint8_t code(int x, int y) const { return codes[static_cast<std::size_t>(y * kGridSize + x)]; }

  bool operator==(const GridState&) const = default;
};

/// Every layout the task's generator can emit; reset() draws uniformly from it.
std::vector<GridState> layouts(TaskKind kind);
/// The layout with the shortest solution; its length is the registry's optimal_steps.
GridState canonical_layout(TaskKind kind);

struct StepResult {
  Tensor observation;
  double reward = 0.0;
  bool terminated = false;
  bool truncated = false;
};

/// One episode-stepping environment for a single task.
class GridWorld {
 public:
  explicit GridWorld(TaskContext task);

  Tensor reset(std::mt19937_64& rng);
  Tensor reset_to(const GridState& layout);
  StepResult step(int action);

  const TaskContext& task() const { return task_; }
  const GridState& state() const { return state_; }
  int steps_taken() const { return steps_; }
  bool active() const { return active_; }

  /// Agent-centred [3,5,5] window in world orientation; off-grid cells read as walls.
  static Tensor observe(const GridState& s);

 private:
  TaskContext task_;
  GridState state_;
  int steps_ = 0;
  bool active_ = false;
};

/// Outcome of applying one action to a state, shared by the environment and
/// the search oracle.
struct Transition {
  GridState next;
  bool success = false;
  bool failure = false;
};
Transition transition(TaskKind kind, const GridState& s, Action action);

/// Breadth-first shortest action sequence to success, or nullopt if unreachable
/// within `max_depth` actions.
std::optional<std::vector<int>> shortest_solution(TaskKind kind, const GridState& start, int max_depth);

}  // namespace mtsparse::env
