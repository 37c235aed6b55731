#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mahrl/agents.hpp"
#include "mahrl/comms.hpp"
#include "mahrl/gridworld.hpp"
#include "mahrl/options.hpp"
#include "mahrl/qfunc.hpp"
#include "mahrl/rng.hpp"

namespace mahrl {

/// One agent-step of experience.
struct Transition {
  int agent = 0;
  /// s_t with the view of options announced up to t-1.
  QInput input;
  /// Head of the executed option at s_t.
  int option = 0;
  /// Destination the executed option was bound to.
  Cell subgoal;
  Action action = Action::Stay;
  double reward = 0.0;
  /// s_{t+1} with the view of options announced up to t.
  QInput next_input;
  /// beta of the executed option at s_{t+1}.
  bool natural_term_next = false;
  /// All targets consumed. Time-limit stops are not terminal and bootstrap.
  bool done = false;
};

/// Fixed-capacity ring buffer with a seeded uniform sampler.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, std::uint64_t seed);

  void push(Transition t);
  /// Uniform with replacement. Throws std::logic_error when empty.
  std::vector<const Transition*> sample(std::size_t m);

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> items_;
  Rng rng_;
};

struct TrainConfig {
  EnvConfig env;
  int option_radius = 3;
  AgentFamily family;
  BackendConfig backend;
  double gamma = 0.99;
  /// Behaviour-policy termination probability during training.
  double rho = 0.5;
  /// epsilon decays linearly from eps_start to eps_end over the first
  /// eps_decay_fraction of the training episodes.
  double eps_start = 1.0;
  double eps_end = 0.05;
  double eps_decay_fraction = 0.5;
  int batch_size = 32;
  int episodes = 1000;
  /// Environment steps between batch updates.
  int update_every = 1;
  std::size_t replay_capacity = 100000;
  /// Batch updates between target-network syncs; 0 disables the target network.
  int target_period = 0;
  int eval_interval = 100;
  int eval_episodes = 100;
  std::uint64_t seed = 1;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
  double epsilon(int episode) const;
};

// --- TD targets -----------------------------------------------------------

/// r + gamma * [(1 - beta) * q_continue + beta * q_max]; r when done.
double intra_option_target(double reward, double gamma, bool beta, double q_next_continue,
                           double q_next_max, bool done);

/// r + gamma * max(q_continue, q_term); r when done.
double dynamic_option_target(double reward, double gamma, double q_next_continue,
                             double q_next_term, bool done);

/// max over option heads of `qoutput` (T excluded) minus delta.
double termination_target(std::span<const double> qoutput, double delta);

/// Where option `option` (bound at the transition's start cell) stands at
/// s_{t+1}: arrived at its destination, or still travelling, in which case
/// `head` is the option that reproduces the same destination from the new
/// cell.
struct Continuation {
  bool arrived = false;
  int head = -1;
};

Continuation continuation(const Transition& tr, int option, int radius);

/// Multi-agent intra-option target U for `option`, read from the Q output at
/// s_{t+1} (with view o_t).
double target_intra_option(std::span<const double> next_output, const Transition& tr, int option,
                           double gamma, int radius);
double target_intra_option(const QFunction& q, const Transition& tr, int option, double gamma,
                           int radius);

/// Dynamic-termination target for an option head. A travelling option
/// continues or terminates, whichever is worth more; an arrived option is
/// re-selected (force_reselect) or compared against T on its own head.
double target_dynamic_option(std::span<const double> next_output, const Transition& tr, int option,
                             double gamma, int radius, bool force_reselect = true);
double target_dynamic_option(const QFunction& q, const Transition& tr, int option, double gamma,
                             int radius, bool force_reselect = true);

/// T-head target, evaluated at the current step's input.
double target_termination(const QFunction& q, const QInput& input_t, double delta);

/// Builds L^T for every transition and L^o for every option consistent with
/// (start cell, executed action), applies one update normalized by the
/// number of transitions and returns the loss. `targets_q` supplies the TD
/// targets (the live network when no target network is used). When `trace`
/// is set it receives the TdTargets that were applied.
double batch_update(QFunction& q, const QFunction& targets_q,
                    std::span<const Transition* const> batch, const TrainConfig& config,
                    const options::ConsistencyTable& consistency,
                    std::vector<TdTarget>* trace = nullptr);

/// Samples `config.batch_size` transitions and calls the overload above.
double batch_update(QFunction& q, const QFunction& targets_q, ReplayBuffer& buffer,
                    const TrainConfig& config, const options::ConsistencyTable& consistency);

// --- Episodes -------------------------------------------------------------

enum class Mode { Train, Eval };

struct StepRecord {
  int t = 0;
  int agent = 0;
  Cell cell;
  Cell subgoal;
  bool changed = false;
  bool natural_terminated = false;
  Action action = Action::Stay;
  double reward = 0.0;
  /// Manhattan distance to the closest alive target at decision time.
  int nearest_target = 0;

  bool operator==(const StepRecord&) const = default;
};

struct ViewAudit {
  int t = 0;
  int agent = 0;
  /// Latest announcement step visible in the view served at t; -1 if none.
  int latest_announcement = -1;

  bool operator==(const ViewAudit&) const = default;
};

struct EpisodeRecord {
  std::uint64_t seed = 0;
  int steps = 0;
  std::vector<double> returns;
  /// Options abandoned before reaching their subgoal, per agent.
  std::vector<int> terminations;
  /// Every change of subgoal after the initial selection (terminations plus
  /// re-selections on arrival), per agent.
  std::vector<int> option_changes;
  std::vector<Announcement> broadcasts;
  std::vector<ViewAudit> view_audit;
  std::vector<StepRecord> step_log;

  double team_return() const;
  double mean_terminations() const;
  double mean_option_changes() const;
  bool operator==(const EpisodeRecord& o) const;
};

struct EpisodeHooks {
  /// Train mode: every stored agent-step.
  std::function<void(Transition&&)> on_transition;
  /// After each environment step (and after on_transition calls).
  std::function<void()> after_env_step;
  /// May edit s_{t+1} right after the environment step of step t.
  std::function<void(int t, GlobalState& next)> edit_state;
  bool record_steps = false;
};

struct EpisodeContext {
  const Env& env;
  const TrainConfig& config;
  const QFunction& q;
};

/// Runs one episode under the step protocol: every agent decides against the
/// view frozen at the end of the previous step, announces a new option, and
/// emits its option's primitive action; then the environment steps and the
/// board freezes. Train mode follows the current option, terminates it with
/// probability rho (and at its subgoal) and re-selects epsilon-greedily;
/// eval mode applies the family's decision rule greedily.
EpisodeRecord run_episode(const EpisodeContext& ctx, Mode mode, std::uint64_t episode_seed,
                          Rng* explore, double epsilon, const EpisodeHooks& hooks = {});

// --- Training -------------------------------------------------------------

struct CurveRow {
  int episode = 0;
  std::uint64_t seed = 0;
  std::string agent;
  double delta = 0.0;
  double mean_reward = 0.0;
  /// Across evaluation episodes.
  double std_reward = 0.0;
  double mean_terminations = 0.0;

  bool operator==(const CurveRow&) const = default;
};

struct EvalSummary {
  double mean_reward = 0.0;
  double std_reward = 0.0;
  double mean_terminations = 0.0;
  std::vector<EpisodeRecord> episodes;
};

std::uint64_t eval_episode_seed(std::uint64_t seed, int i);
std::uint64_t train_episode_seed(std::uint64_t seed, int episode);

EvalSummary evaluate(const Env& env, const TrainConfig& config, const QFunction& q, int episodes,
                     std::uint64_t seed, bool keep_records = false);

struct TrainResult {
  std::vector<CurveRow> curve;
  std::unique_ptr<QFunction> q;
  std::size_t updates = 0;
};

/// Interleaves episode collection and batch updates; evaluates at episode 0
/// and every eval_interval episodes (plus the final episode).
TrainResult train(const TrainConfig& config);

}  // namespace mahrl
