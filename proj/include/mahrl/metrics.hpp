#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mahrl/learning.hpp"
#include "mahrl/qfunc.hpp"

namespace mahrl {

struct ProbeReport {
  std::string agent;
  double delta = 0.0;
  int episodes = 0;
  /// Flexibility probe fields.
  int insert_step = 0;
  double switch_rate_at_T_plus_1 = 0.0;
  /// Censored at the end of the episode when the agent never switches.
  double mean_steps_to_switch = 0.0;
  int resampled = 0;
  /// Predictability probe fields.
  double p_change_near = 0.0;
  double p_change_far = 0.0;
  long near_steps = 0;
  long far_steps = 0;
  double terminations_per_episode = 0.0;

  nlohmann::json to_json() const;
  static ProbeReport from_json(const nlohmann::json& j);
};

inline constexpr int kFlexInsertRadius = 2;
inline constexpr int kNearDistance = 4;

/// Greedy evaluation episodes in which one extra passenger appears within
/// Manhattan distance 2 of the agent right after step T, so that it is
/// visible from step T+1 on. Episodes that end before step T+1, or have no
/// free insertion cell, are replaced by the next seed.
ProbeReport flexibility_probe(const TrainConfig& config, const QFunction& q, int T, int episodes,
                              std::uint64_t seed);

/// P(option change | nearest alive target within distance 4) and the same
/// for farther targets, over every agent-step of greedy evaluation episodes.
ProbeReport predictability_probe(const TrainConfig& config, const QFunction& q, int episodes,
                                 std::uint64_t seed);

struct InterruptPoint {
  /// 0 stands for never interrupting.
  int T = 0;
  double mean_reward = 0.0;
  /// Across the supplied Q functions.
  double std_reward = 0.0;
  double mean_terminations = 0.0;
};

/// Evaluates option-termination agents whose running option is re-selected
/// (incumbent kept on ties) every T steps, for every T and every supplied Q
/// function (one per seed).
std::vector<InterruptPoint> interrupt_sweep(const TrainConfig& config,
                                            std::span<const QFunction* const> qs,
                                            std::span<const int> T_values, int episodes,
                                            std::uint64_t seed);

}  // namespace mahrl
