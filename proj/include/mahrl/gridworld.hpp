#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mahrl {

struct Cell {
  int x = 0;
  int y = 0;

  auto operator<=>(const Cell&) const = default;
};

inline int manhattan(Cell a, Cell b) {
  return (a.x > b.x ? a.x - b.x : b.x - a.x) + (a.y > b.y ? a.y - b.y : b.y - a.y);
}

struct GridDims {
  int width = 0;
  int height = 0;

  bool contains(Cell c) const { return c.x >= 0 && c.x < width && c.y >= 0 && c.y < height; }
  Cell clamp(Cell c) const;
  int cells() const { return width * height; }
  int index(Cell c) const { return c.y * width + c.x; }
  Cell cell(int index) const { return {index % width, index / width}; }

  auto operator<=>(const GridDims&) const = default;
};

enum class Action : std::uint8_t { N, S, E, W, Stay };

inline constexpr std::array<Action, 5> kAllActions{Action::N, Action::S, Action::E, Action::W,
                                                   Action::Stay};

/// N=(0,+1), S=(0,-1), E=(+1,0), W=(-1,0), Stay=(0,0).
Cell displacement(Action a);
const char* to_string(Action a);

enum class TaskKind : std::uint8_t { Taxi, Pursuit };

const char* to_string(TaskKind k);
TaskKind parse_task_kind(const std::string& s);

struct Target {
  Cell cell;
  bool alive = true;

  auto operator<=>(const Target&) const = default;
};

struct GlobalState {
  std::vector<Cell> agents;
  std::vector<Target> targets;
  int t = 0;
  TaskKind task = TaskKind::Taxi;
  /// Per-episode seed; only consumed by the optional prey walk.
  std::uint64_t seed = 0;

  bool operator==(const GlobalState&) const = default;

  int alive_targets() const;
};

/// Rewarded consumption of one target and the agents credited for it.
struct TargetEvent {
  int target = 0;
  std::vector<int> agents;

  bool operator==(const TargetEvent&) const = default;
};

struct StepOutcome {
  GlobalState next_state;
  std::vector<double> rewards;
  std::vector<TargetEvent> events;
  /// All targets consumed, or the step budget is exhausted.
  bool done = false;
  /// All targets consumed. A time-limit stop sets `done` but not `terminal`.
  bool terminal = false;
};

struct EnvConfig {
  TaskKind task = TaskKind::Taxi;
  int width = 8;
  int height = 8;
  int n_agents = 1;
  int n_targets = 1;
  int k_capture = 1;
  int capture_range = 1;
  double step_cost = -0.01;
  int max_steps = 50;
  bool prey_walk = false;

  GridDims dims() const { return {width, height}; }
};

/// 4-channel binary image, channel-major then row-major: at(c, x, y).
/// Channel 0: observing agent; 1: alive targets; 2: other agents;
/// 3: destinations of the other agents' last broadcast options.
struct ObservationGrid {
  static constexpr int kChannels = 4;

  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;

  std::uint8_t at(int channel, int x, int y) const {
    return data[static_cast<std::size_t>((channel * height + y) * width + x)];
  }
  int channel_sum(int channel) const;
};

class Env {
 public:
  /// Validates the configuration; throws std::invalid_argument.
  explicit Env(EnvConfig config);

  const EnvConfig& config() const { return config_; }
  GridDims dims() const { return config_.dims(); }
  int n_agents() const { return config_.n_agents; }

  /// Uniform placement of agents and targets on distinct cells (partial
  /// Fisher-Yates over cell indices driven by mt19937_64 seeded with `seed`).
  GlobalState reset(std::uint64_t seed) const;

  /// Pure transition. Throws std::logic_error when `state` is already done.
  StepOutcome step(const GlobalState& state, std::span<const Action> joint_actions) const;

  bool is_done(const GlobalState& state) const;

  /// `broadcast_destinations` is the delayed view rendered as destination
  /// cells; pass an empty span when broadcasting is disabled.
  ObservationGrid observation(const GlobalState& state, int agent_id,
                              std::span<const Cell> broadcast_destinations) const;

 private:
  EnvConfig config_;
};

}  // namespace mahrl
