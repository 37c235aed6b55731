#include "mahrl/gridworld.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "mahrl/rng.hpp"

namespace mahrl {

Cell GridDims::clamp(Cell c) const {
  return {std::clamp(c.x, 0, width - 1), std::clamp(c.y, 0, height - 1)};
}

Cell displacement(Action a) {
  switch (a) {
    case Action::N: return {0, 1};
    case Action::S: return {0, -1};
    case Action::E: return {1, 0};
    case Action::W: return {-1, 0};
    case Action::Stay: return {0, 0};
  }
  return {0, 0};
}

const char* to_string(Action a) {
  switch (a) {
    case Action::N: return "N";
    case Action::S: return "S";
    case Action::E: return "E";
    case Action::W: return "W";
    case Action::Stay: return "Stay";
  }
  return "?";
}

const char* to_string(TaskKind k) { return k == TaskKind::Taxi ? "taxi" : "pursuit"; }

TaskKind parse_task_kind(const std::string& s) {
  if (s == "taxi") return TaskKind::Taxi;
  if (s == "pursuit") return TaskKind::Pursuit;
  throw std::invalid_argument("unknown task kind '" + s + "'");
}

int GlobalState::alive_targets() const {
  return static_cast<int>(
      std::count_if(targets.begin(), targets.end(), [](const Target& t) { return t.alive; }));
}

int ObservationGrid::channel_sum(int channel) const {
  const auto plane = static_cast<std::ptrdiff_t>(width * height);
  const auto first = data.begin() + channel * plane;
  return std::accumulate(first, first + plane, 0);
}

Env::Env(EnvConfig config) : config_(config) {
  if (config_.width < 3 || config_.height < 3)
    throw std::invalid_argument("grid width and height must be at least 3");
  if (config_.n_agents < 1) throw std::invalid_argument("n_agents must be at least 1");
  if (config_.n_targets < 1) throw std::invalid_argument("n_targets must be at least 1");
  if (config_.max_steps < 1) throw std::invalid_argument("max_steps must be at least 1");
  if (config_.task == TaskKind::Pursuit) {
    if (config_.k_capture < 1 || config_.k_capture > config_.n_agents)
      throw std::invalid_argument("k_capture must lie in [1, n_agents]");
    if (config_.capture_range < 0) throw std::invalid_argument("capture_range must be >= 0");
  }
}

GlobalState Env::reset(std::uint64_t seed) const {
  const GridDims d = dims();
  const int needed = config_.n_agents + config_.n_targets;
  if (needed > d.cells())
    throw std::invalid_argument("agents plus targets exceed the number of grid cells");

  Rng rng(seed);
  std::vector<int> cells(static_cast<std::size_t>(d.cells()));
  std::iota(cells.begin(), cells.end(), 0);
  for (int i = 0; i < needed; ++i) {
    const int j = i + rng.below(d.cells() - i);
    std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
  }

  GlobalState s;
  s.task = config_.task;
  s.seed = seed;
  for (int i = 0; i < config_.n_agents; ++i) s.agents.push_back(d.cell(cells[static_cast<std::size_t>(i)]));
  for (int i = config_.n_agents; i < needed; ++i)
    s.targets.push_back({d.cell(cells[static_cast<std::size_t>(i)]), true});
  return s;
}

bool Env::is_done(const GlobalState& state) const {
  return state.alive_targets() == 0 || state.t >= config_.max_steps;
}

StepOutcome Env::step(const GlobalState& state, std::span<const Action> joint_actions) const {
  if (joint_actions.size() != state.agents.size())
    throw std::invalid_argument("one action per agent required");
  if (is_done(state)) throw std::logic_error("step called on a finished episode");

  const GridDims d = dims();
  StepOutcome out;
  out.next_state = state;
  GlobalState& next = out.next_state;
  out.rewards.assign(state.agents.size(), config_.step_cost);

  for (std::size_t j = 0; j < next.agents.size(); ++j) {
    const Cell delta = displacement(joint_actions[j]);
    next.agents[j] = d.clamp({next.agents[j].x + delta.x, next.agents[j].y + delta.y});
  }

  if (config_.prey_walk) {
    Rng rng(mix_seed(state.seed, static_cast<std::uint64_t>(state.t) + 1));
    for (auto& target : next.targets) {
      if (!target.alive) continue;
      const Cell delta = displacement(kAllActions[static_cast<std::size_t>(rng.below(5))]);
      target.cell = d.clamp({target.cell.x + delta.x, target.cell.y + delta.y});
    }
  }

  const auto n = static_cast<int>(next.agents.size());
  if (config_.task == TaskKind::Taxi) {
    for (int p = 0; p < static_cast<int>(next.targets.size()); ++p) {
      Target& target = next.targets[static_cast<std::size_t>(p)];
      if (!target.alive) continue;
      for (int j = 0; j < n; ++j) {
        if (next.agents[static_cast<std::size_t>(j)] == target.cell) {
          target.alive = false;
          out.rewards[static_cast<std::size_t>(j)] += 1.0;
          out.events.push_back({p, {j}});
          break;
        }
      }
    }
  } else {
    // An agent is credited for at most one capture per step; prey are
    // resolved in index order.
    std::vector<bool> claimed(static_cast<std::size_t>(n), false);
    for (int p = 0; p < static_cast<int>(next.targets.size()); ++p) {
      Target& target = next.targets[static_cast<std::size_t>(p)];
      if (!target.alive) continue;
      std::vector<int> in_range;
      std::vector<Cell> occupied;
      for (int j = 0; j < n; ++j) {
        const Cell c = next.agents[static_cast<std::size_t>(j)];
        if (claimed[static_cast<std::size_t>(j)] || manhattan(c, target.cell) > config_.capture_range)
          continue;
        in_range.push_back(j);
        if (std::find(occupied.begin(), occupied.end(), c) == occupied.end()) occupied.push_back(c);
      }
      if (static_cast<int>(occupied.size()) < config_.k_capture) continue;
      target.alive = false;
      for (int j : in_range) {
        claimed[static_cast<std::size_t>(j)] = true;
        out.rewards[static_cast<std::size_t>(j)] += 1.0;
      }
      out.events.push_back({p, std::move(in_range)});
    }
  }

  next.t = state.t + 1;
  out.terminal = next.alive_targets() == 0;
  out.done = out.terminal || next.t >= config_.max_steps;
  return out;
}

ObservationGrid Env::observation(const GlobalState& state, int agent_id,
                                 std::span<const Cell> broadcast_destinations) const {
  if (agent_id < 0 || agent_id >= static_cast<int>(state.agents.size()))
    throw std::out_of_range("agent_id out of range");
  const GridDims d = dims();
  ObservationGrid g;
  g.width = d.width;
  g.height = d.height;
  g.data.assign(static_cast<std::size_t>(ObservationGrid::kChannels * d.cells()), 0);
  auto set = [&](int channel, Cell c) {
    g.data[static_cast<std::size_t>(channel * d.cells() + d.index(c))] = 1;
  };
  set(0, state.agents[static_cast<std::size_t>(agent_id)]);
  for (const auto& t : state.targets)
    if (t.alive) set(1, t.cell);
  for (std::size_t j = 0; j < state.agents.size(); ++j)
    if (static_cast<int>(j) != agent_id) set(2, state.agents[j]);
  for (const Cell c : broadcast_destinations) set(3, c);
  return g;
}

}  // namespace mahrl
