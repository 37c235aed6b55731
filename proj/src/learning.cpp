#include "mahrl/learning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mahrl {

// --- ReplayBuffer ---------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  items_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[next_] = std::move(t);
  }
  next_ = (next_ + 1) % capacity_;
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t m) {
  if (items_.empty()) throw std::logic_error("cannot sample from an empty replay buffer");
  std::vector<const Transition*> out;
  out.reserve(m);
  for (std::size_t i = 0; i < m; ++i)
    out.push_back(&items_[static_cast<std::size_t>(rng_.below(static_cast<int>(items_.size())))]);
  return out;
}

// --- TrainConfig ----------------------------------------------------------

void TrainConfig::validate() const {
  if (!(gamma >= 0.0 && gamma < 1.0)) throw std::invalid_argument("gamma must lie in [0, 1)");
  if (!(rho >= 0.0 && rho <= 1.0)) throw std::invalid_argument("rho must lie in [0, 1]");
  if (!(family.delta >= 0.0)) throw std::invalid_argument("delta must be non-negative");
  if (option_radius < 1) throw std::invalid_argument("option radius must be at least 1");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (episodes < 0) throw std::invalid_argument("episodes must be non-negative");
  if (update_every < 1) throw std::invalid_argument("update_every must be positive");
  if (eval_interval < 1) throw std::invalid_argument("eval_interval must be positive");
  if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be positive");
  if (target_period < 0) throw std::invalid_argument("target_period must be non-negative");
  if (eps_start < 0.0 || eps_start > 1.0 || eps_end < 0.0 || eps_end > 1.0)
    throw std::invalid_argument("epsilon must lie in [0, 1]");
  Env{env};
}

double TrainConfig::epsilon(int episode) const {
  const double horizon = eps_decay_fraction * static_cast<double>(episodes);
  if (horizon <= 0.0 || episode >= horizon) return eps_end;
  return eps_start + (eps_end - eps_start) * (static_cast<double>(episode) / horizon);
}

// --- Targets --------------------------------------------------------------

double intra_option_target(double reward, double gamma, bool beta, double q_next_continue,
                           double q_next_max, bool done) {
  if (done) return reward;
  return reward + gamma * (beta ? q_next_max : q_next_continue);
}

double dynamic_option_target(double reward, double gamma, double q_next_continue,
                             double q_next_term, bool done) {
  if (done) return reward;
  return reward + gamma * std::max(q_next_continue, q_next_term);
}

double termination_target(std::span<const double> qoutput, double delta) {
  return qoutput[static_cast<std::size_t>(argmax_option(qoutput))] - delta;
}

Continuation continuation(const Transition& tr, int option, int radius) {
  const GridDims dims = tr.input.dims;
  const Cell start = tr.input.self();
  const Cell next = tr.next_input.self();
  const Cell subgoal = options::bind(options::option_at(option, radius), start, dims).subgoal;
  const auto head = options::relative_index(subgoal, next, radius);
  if (!head) return {true, -1};
  return {false, *head};
}

double target_intra_option(std::span<const double> next_output, const Transition& tr, int option,
                           double gamma, int radius) {
  if (tr.done) return tr.reward;
  const Continuation c = continuation(tr, option, radius);
  const double q_max = next_output[static_cast<std::size_t>(argmax_option(next_output))];
  const double q_cont = c.arrived ? q_max : next_output[static_cast<std::size_t>(c.head)];
  return intra_option_target(tr.reward, gamma, c.arrived, q_cont, q_max, false);
}

double target_intra_option(const QFunction& q, const Transition& tr, int option, double gamma,
                           int radius) {
  if (tr.done) return tr.reward;
  return target_intra_option(q.evaluate(tr.next_input), tr, option, gamma, radius);
}

double target_dynamic_option(std::span<const double> next_output, const Transition& tr, int option,
                             double gamma, int radius, bool force_reselect) {
  if (tr.done) return tr.reward;
  const Continuation c = continuation(tr, option, radius);
  const double q_term = next_output.back();
  if (c.arrived) {
    if (force_reselect)
      return tr.reward + gamma * next_output[static_cast<std::size_t>(argmax_option(next_output))];
    return dynamic_option_target(tr.reward, gamma, next_output[static_cast<std::size_t>(option)],
                                 q_term, false);
  }
  return dynamic_option_target(tr.reward, gamma, next_output[static_cast<std::size_t>(c.head)], q_term,
                               false);
}

double target_dynamic_option(const QFunction& q, const Transition& tr, int option, double gamma,
                             int radius, bool force_reselect) {
  if (tr.done) return tr.reward;
  return target_dynamic_option(q.evaluate(tr.next_input), tr, option, gamma, radius, force_reselect);
}

double target_termination(const QFunction& q, const QInput& input_t, double delta) {
  return termination_target(q.evaluate(input_t), delta);
}

double batch_update(QFunction& q, const QFunction& targets_q,
                    std::span<const Transition* const> batch, const TrainConfig& config,
                    const options::ConsistencyTable& consistency, std::vector<TdTarget>* trace) {
  if (batch.empty()) throw std::logic_error("batch_update on an empty batch");
  const bool dynamic = config.family.is_dynamic();
  const int term_head = q.termination_head();
  std::vector<TdTarget> targets;
  targets.reserve(batch.size() * 16);
  for (const Transition* tr : batch) {
    const QOutput out_t = targets_q.evaluate(tr->input);
    QOutput out_next;
    if (!tr->done) out_next = targets_q.evaluate(tr->next_input);
    for (int o : consistency.at(tr->input.self(), tr->action)) {
      const double y =
          dynamic ? target_dynamic_option(out_next, *tr, o, config.gamma, config.option_radius,
                                          config.family.force_reselect_at_subgoal)
                  : target_intra_option(out_next, *tr, o, config.gamma, config.option_radius);
      targets.push_back({&tr->input, o, y});
    }
    targets.push_back({&tr->input, term_head, termination_target(out_t, config.family.delta)});
  }
  const double loss = q.apply_td_updates(targets, static_cast<double>(batch.size()));
  if (trace) *trace = std::move(targets);
  return loss;
}

double batch_update(QFunction& q, const QFunction& targets_q, ReplayBuffer& buffer,
                    const TrainConfig& config, const options::ConsistencyTable& consistency) {
  if (buffer.size() == 0) throw std::logic_error("batch_update on an empty replay buffer");
  const auto batch = buffer.sample(static_cast<std::size_t>(config.batch_size));
  return batch_update(q, targets_q, batch, config, consistency);
}

// --- Episodes -------------------------------------------------------------

double EpisodeRecord::team_return() const { return std::accumulate(returns.begin(), returns.end(), 0.0); }

double EpisodeRecord::mean_terminations() const {
  if (terminations.empty()) return 0.0;
  return static_cast<double>(std::accumulate(terminations.begin(), terminations.end(), 0)) /
         static_cast<double>(terminations.size());
}

double EpisodeRecord::mean_option_changes() const {
  if (option_changes.empty()) return 0.0;
  return static_cast<double>(std::accumulate(option_changes.begin(), option_changes.end(), 0)) /
         static_cast<double>(option_changes.size());
}

bool EpisodeRecord::operator==(const EpisodeRecord& o) const {
  if (seed != o.seed || steps != o.steps || returns != o.returns || terminations != o.terminations ||
      option_changes != o.option_changes ||
      view_audit != o.view_audit || step_log != o.step_log || broadcasts.size() != o.broadcasts.size())
    return false;
  for (std::size_t i = 0; i < broadcasts.size(); ++i) {
    const auto& a = broadcasts[i];
    const auto& b = o.broadcasts[i];
    if (a.t != b.t || a.agent != b.agent || !(a.option == b.option)) return false;
  }
  return true;
}

namespace {

struct AgentSlot {
  std::optional<OptionInstance> option;
  /// Head of the option at the previous step; kept for an option that sits on
  /// its subgoal without being re-selected.
  int last_head = -1;
  int since_selection = 0;
};

int select_epsilon_greedy(const QOutput& q, double epsilon, Rng& rng) {
  const int n = static_cast<int>(q.size()) - 1;
  if (epsilon > 0.0 && rng.bernoulli(epsilon)) return rng.below(n);
  return argmax_option(q);
}

int nearest_target_distance(const GlobalState& s, Cell c) {
  int best = std::numeric_limits<int>::max();
  for (const auto& t : s.targets)
    if (t.alive) best = std::min(best, manhattan(c, t.cell));
  return best;
}

}  // namespace

EpisodeRecord run_episode(const EpisodeContext& ctx, Mode mode, std::uint64_t episode_seed,
                          Rng* explore, double epsilon, const EpisodeHooks& hooks) {
  const Env& env = ctx.env;
  const TrainConfig& cfg = ctx.config;
  const AgentFamily& family = cfg.family;
  const int radius = cfg.option_radius;
  const GridDims dims = env.dims();
  const int n = env.n_agents();
  if (mode == Mode::Train && explore == nullptr)
    throw std::invalid_argument("train mode needs an exploration generator");

  EpisodeRecord rec;
  rec.seed = episode_seed;
  rec.returns.assign(static_cast<std::size_t>(n), 0.0);
  rec.terminations.assign(static_cast<std::size_t>(n), 0);
  rec.option_changes.assign(static_cast<std::size_t>(n), 0);

  GlobalState state = env.reset(episode_seed);
  BroadcastBoard board(n);
  std::vector<AgentSlot> slots(static_cast<std::size_t>(n));
  std::vector<QInput> inputs(static_cast<std::size_t>(n));
  std::vector<Action> actions(static_cast<std::size_t>(n));
  std::vector<int> heads(static_cast<std::size_t>(n));

  bool done = env.is_done(state);
  while (!done) {
    const int t = state.t;
    for (int j = 0; j < n; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      AgentSlot& slot = slots[ju];
      const Cell cell = state.agents[ju];
      const DelayedView view = board.view(j);
      int latest = -1;
      for (const auto& e : view) latest = std::max(latest, e.announced_at);
      rec.view_audit.push_back({t, j, latest});
      inputs[ju] = make_qinput(state, dims, j, view, family.broadcast_enabled());

      const bool natural = slot.option && options::natural_termination(*slot.option, cell);
      std::optional<int> current;
      if (slot.option) {
        current = options::relative_index(slot.option->subgoal, cell, radius);
        if (!current && family.is_dynamic() && !family.force_reselect_at_subgoal)
          current = slot.last_head;
      }

      std::optional<int> pick;
      if (mode == Mode::Train) {
        const bool forced = !slot.option || !current ||
                            (natural && (!family.is_dynamic() || family.force_reselect_at_subgoal));
        if (forced || explore->bernoulli(cfg.rho))
          pick = select_epsilon_greedy(ctx.q.evaluate(inputs[ju]), epsilon, *explore);
      } else if (family.kind == AgentKind::OptionTerm && family.interrupt_every > 0 && current &&
                 slot.since_selection >= family.interrupt_every) {
        const QOutput q = ctx.q.evaluate(inputs[ju]);
        pick = argmax_option_incumbent(q, *current);
      } else if (family.kind == AgentKind::OptionTerm && current && !natural) {
        // Committed: no evaluation needed.
      } else {
        const QOutput q = ctx.q.evaluate(inputs[ju]);
        const Decision d = decide(family, q, current, natural);
        if (d.switch_option) pick = d.option;
      }

      bool changed = false;
      if (pick) {
        OptionInstance inst = options::bind(options::option_at(*pick, radius), cell, dims, t);
        if (!slot.option || inst.subgoal != slot.option->subgoal) {
          if (slot.option) {
            ++rec.option_changes[ju];
            if (!natural) ++rec.terminations[ju];
            changed = true;
          }
          slot.option = inst;
          slot.since_selection = 0;
          if (family.broadcast_enabled()) board.announce(j, inst, t);
        } else if (family.kind == AgentKind::OptionTerm && family.interrupt_every > 0) {
          slot.since_selection = 0;
        }
      }

      const auto head = options::relative_index(slot.option->subgoal, cell, radius);
      heads[ju] = head ? *head : (slot.last_head >= 0 ? slot.last_head : *pick);
      slot.last_head = heads[ju];
      actions[ju] = options::policy_action(*slot.option, cell);
      if (hooks.record_steps)
        rec.step_log.push_back({t, j, cell, slot.option->subgoal, changed, natural, actions[ju], 0.0,
                                nearest_target_distance(state, cell)});
    }

    StepOutcome outcome = env.step(state, actions);
    board.end_of_step(t);
    if (hooks.edit_state) hooks.edit_state(t, outcome.next_state);
    const bool terminal = outcome.next_state.alive_targets() == 0;
    done = env.is_done(outcome.next_state);

    for (int j = 0; j < n; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      rec.returns[ju] += outcome.rewards[ju];
      if (hooks.record_steps) rec.step_log[rec.step_log.size() - static_cast<std::size_t>(n - j)].reward = outcome.rewards[ju];
      if (mode == Mode::Train && hooks.on_transition) {
        Transition tr;
        tr.agent = j;
        tr.input = std::move(inputs[ju]);
        tr.option = heads[ju];
        tr.subgoal = slots[ju].option->subgoal;
        tr.action = actions[ju];
        tr.reward = outcome.rewards[ju];
        tr.next_input = make_qinput(outcome.next_state, dims, j, board.view(j), family.broadcast_enabled());
        tr.natural_term_next = tr.subgoal == outcome.next_state.agents[ju];
        tr.done = terminal;
        hooks.on_transition(std::move(tr));
      }
      ++slots[ju].since_selection;
    }
    if (hooks.after_env_step) hooks.after_env_step();
    state = std::move(outcome.next_state);
    ++rec.steps;
  }
  rec.broadcasts = board.log();
  return rec;
}

// --- Training -------------------------------------------------------------

std::uint64_t eval_episode_seed(std::uint64_t seed, int i) {
  return mix_seed(mix_seed(seed, 0xe7a1), static_cast<std::uint64_t>(i));
}

std::uint64_t train_episode_seed(std::uint64_t seed, int episode) {
  return mix_seed(mix_seed(seed, 0x7a1b), static_cast<std::uint64_t>(episode));
}

EvalSummary evaluate(const Env& env, const TrainConfig& config, const QFunction& q, int episodes,
                     std::uint64_t seed, bool keep_records) {
  if (episodes < 1) throw std::invalid_argument("evaluation needs at least one episode");
  EvalSummary s;
  std::vector<double> returns;
  double terms = 0.0;
  const EpisodeContext ctx{env, config, q};
  for (int i = 0; i < episodes; ++i) {
    EpisodeRecord rec = run_episode(ctx, Mode::Eval, eval_episode_seed(seed, i), nullptr, 0.0);
    returns.push_back(rec.team_return());
    terms += rec.mean_terminations();
    if (keep_records) s.episodes.push_back(std::move(rec));
  }
  const double n = static_cast<double>(episodes);
  s.mean_reward = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  double var = 0.0;
  for (double r : returns) var += (r - s.mean_reward) * (r - s.mean_reward);
  s.std_reward = std::sqrt(var / n);
  s.mean_terminations = terms / n;
  return s;
}

TrainResult train(const TrainConfig& config) {
  config.validate();
  const Env env(config.env);
  const int n_options = options::option_count(config.option_radius);
  const options::ConsistencyTable consistency(config.option_radius, env.dims());

  TrainResult result;
  result.q = make_backend(config.backend, env.dims(), n_options, mix_seed(config.seed, 4));
  QFunction& q = *result.q;
  std::shared_ptr<const QFunction> frozen;
  if (config.target_period > 0) frozen = sync_target(q);

  ReplayBuffer buffer(config.replay_capacity, mix_seed(config.seed, 3));
  Rng explore(mix_seed(config.seed, 2));

  auto eval_row = [&](int episode) {
    const EvalSummary s = evaluate(env, config, q, config.eval_episodes, config.seed);
    result.curve.push_back({episode, config.seed, to_string(config.family.kind), config.family.delta,
                            s.mean_reward, s.std_reward, s.mean_terminations});
  };
  eval_row(0);

  long env_steps = 0;
  EpisodeHooks hooks;
  hooks.on_transition = [&](Transition&& tr) { buffer.push(std::move(tr)); };
  hooks.after_env_step = [&] {
    ++env_steps;
    if (env_steps % config.update_every != 0) return;
    if (buffer.size() < static_cast<std::size_t>(config.batch_size)) return;
    batch_update(q, frozen ? *frozen : q, buffer, config, consistency);
    ++result.updates;
    if (frozen && result.updates % static_cast<std::size_t>(config.target_period) == 0)
      frozen = sync_target(q);
  };

  const EpisodeContext ctx{env, config, q};
  for (int ep = 0; ep < config.episodes; ++ep) {
    run_episode(ctx, Mode::Train, train_episode_seed(config.seed, ep), &explore, config.epsilon(ep), hooks);
    if ((ep + 1) % config.eval_interval == 0 || ep + 1 == config.episodes) eval_row(ep + 1);
  }
  return result;
}

}  // namespace mahrl
