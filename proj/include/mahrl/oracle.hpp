#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mahrl/gridworld.hpp"
#include "mahrl/qfunc.hpp"

namespace mahrl::oracle {

inline constexpr const char* kSolverVersion = "mahrl-oracle-1";

/// Every non-terminal configuration of a tiny environment (agent cells times
/// alive-target layouts, step counter ignored) together with, for single-agent
/// instances, the deterministic one-step outcome of every option.
class EnumeratedMDP {
 public:
  struct Edge {
    /// Successor state index; -1 when the step is terminal.
    int next = -1;
    double reward = 0.0;
    /// Head of the same destination seen from the successor; -1 on arrival.
    int continuation = -1;
    bool terminal = false;
  };

  /// Throws std::invalid_argument above `max_states` states.
  EnumeratedMDP(const EnvConfig& env, int radius, double gamma, std::size_t max_states = 200000);

  const EnvConfig& env_config() const { return config_; }
  const Env& env() const { return env_; }
  int radius() const { return radius_; }
  double gamma() const { return gamma_; }
  int n_options() const { return n_options_; }
  int n_agents() const { return config_.n_agents; }
  std::size_t size() const { return states_.size(); }

  const GlobalState& state(std::size_t i) const { return states_[i]; }
  /// -1 for terminal or unknown configurations.
  int index_of(const GlobalState& s) const;
  /// Observer-0 Q input without broadcasts.
  QInput input(std::size_t i, int observer = 0) const;

  /// Single-agent instances only.
  const Edge& edge(std::size_t s, int option) const;

  /// Deterministic joint step from state `s`. Returns the successor index
  /// (-1 if terminal) and the summed team reward.
  std::pair<int, double> joint_step(std::size_t s, std::span<const Action> actions) const;

 private:
  static std::string key(const GlobalState& s, GridDims dims);

  EnvConfig config_;
  Env env_;
  int radius_;
  double gamma_;
  int n_options_;
  std::vector<GlobalState> states_;
  std::unordered_map<std::string, int> index_;
  std::vector<Edge> edges_;
};

/// Q over (state, option) rows; `with_termination` tables carry a trailing T
/// column.
struct QTable {
  std::size_t states = 0;
  int columns = 0;
  std::vector<double> values;
  int sweeps = 0;
  double residual = 0.0;
  /// Sup-norm change of every sweep.
  std::vector<double> residual_history;

  double at(std::size_t s, int c) const { return values[s * static_cast<std::size_t>(columns) + static_cast<std::size_t>(c)]; }
  double& at(std::size_t s, int c) { return values[s * static_cast<std::size_t>(columns) + static_cast<std::size_t>(c)]; }
  /// Max over the first `n` columns of row `s`.
  double row_max(std::size_t s, int n) const;
};

struct SolveOptions {
  double tol = 1e-10;
  int max_sweeps = 10000;
  bool force_reselect_at_subgoal = true;
};

/// Fixed point of the dynamic-termination equation: option rows are backed
/// up through max(continue, T); the T column is max over options minus delta,
/// recomputed from the option rows each sweep. Throws std::runtime_error
/// when the sweep cap is hit.
QTable vi_dynamic(const EnumeratedMDP& mdp, double delta, const SolveOptions& opts = {});

/// SMDP option values: each option runs to its destination (k steps), then
/// the best option is chosen.
QTable vi_smdp(const EnumeratedMDP& mdp, const SolveOptions& opts = {});

/// Centralized joint-option values with every agent re-selecting every step
/// and the team reward summed. Columns index joint options as
/// o_0 * |O| + o_1. At most 2 agents on grids of at most 4x4.
QTable vi_joint(const EnumeratedMDP& mdp, const SolveOptions& opts = {});

/// Sup norm of (B Q - Q) for the dynamic-termination operator B, evaluated
/// with the supplied Q function on every enumerated state (T rows included).
double dynamic_residual(const EnumeratedMDP& mdp, const QFunction& q, double delta,
                        bool force_reselect_at_subgoal = true);

/// Installs a solved single-agent table (option columns plus T) in a
/// tabular backend.
TabularQ to_tabular(const EnumeratedMDP& mdp, const QTable& table, double alpha = 1.0);

/// Discounted team return of decentralized greedy agents that each read the
/// joint table with the other agent's previously broadcast option (or the
/// best response to it before any broadcast).
double delayed_policy_return(const EnumeratedMDP& mdp, const QTable& joint, std::size_t start,
                             int max_steps = 200);

/// Discounted return of the greedy rollout under vi_dynamic's fixed point and
/// the dynamic decision rule, counting how often T was chosen after step 0.
struct Rollout {
  double discounted_return = 0.0;
  int steps = 0;
  int termination_choices = 0;
};
Rollout rollout_dynamic(const EnumeratedMDP& mdp, const QTable& table, std::size_t start,
                        int max_steps = 200);

nlohmann::json fixture_json(const EnumeratedMDP& mdp, const QTable& table, double delta);
void write_fixture(const std::filesystem::path& path, const EnumeratedMDP& mdp, const QTable& table,
                   double delta);
QTable read_fixture(const std::filesystem::path& path);

}  // namespace mahrl::oracle
