#include "mahrl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mahrl {

nlohmann::json ProbeReport::to_json() const {
  return {{"agent", agent},
          {"delta", delta},
          {"episodes", episodes},
          {"insert_step", insert_step},
          {"switch_rate_at_T_plus_1", switch_rate_at_T_plus_1},
          {"mean_steps_to_switch", mean_steps_to_switch},
          {"resampled", resampled},
          {"p_change_near", p_change_near},
          {"p_change_far", p_change_far},
          {"near_steps", near_steps},
          {"far_steps", far_steps},
          {"terminations_per_episode", terminations_per_episode}};
}

ProbeReport ProbeReport::from_json(const nlohmann::json& j) {
  ProbeReport r;
  r.agent = j.at("agent").get<std::string>();
  r.delta = j.at("delta").get<double>();
  r.episodes = j.at("episodes").get<int>();
  r.insert_step = j.at("insert_step").get<int>();
  r.switch_rate_at_T_plus_1 = j.at("switch_rate_at_T_plus_1").get<double>();
  r.mean_steps_to_switch = j.at("mean_steps_to_switch").get<double>();
  r.resampled = j.at("resampled").get<int>();
  r.p_change_near = j.at("p_change_near").get<double>();
  r.p_change_far = j.at("p_change_far").get<double>();
  r.near_steps = j.at("near_steps").get<long>();
  r.far_steps = j.at("far_steps").get<long>();
  r.terminations_per_episode = j.at("terminations_per_episode").get<double>();
  return r;
}

ProbeReport flexibility_probe(const TrainConfig& config, const QFunction& q, int T, int episodes,
                              std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("probe needs at least one episode");
  if (config.env.task != TaskKind::Taxi || config.env.n_agents != 1)
    throw std::invalid_argument("flexibility probe needs a single-agent taxi config");
  if (T < 0 || T + 1 >= config.env.max_steps)
    throw std::invalid_argument("insertion step must leave room for step T+1");

  const Env env(config.env);
  const GridDims dims = env.dims();
  const EpisodeContext ctx{env, config, q};

  ProbeReport r;
  r.agent = to_string(config.family.kind);
  r.delta = config.family.delta;
  r.insert_step = T;

  int switched = 0;
  double steps_sum = 0.0;
  double terms = 0.0;
  int attempt = 0;
  while (r.episodes < episodes) {
    if (attempt > 100 * episodes) throw std::runtime_error("flexibility probe cannot place passengers");
    const std::uint64_t ep_seed = eval_episode_seed(mix_seed(seed, 0xf1e8), attempt++);
    bool inserted = false;
    EpisodeHooks hooks;
    hooks.record_steps = true;
    hooks.edit_state = [&](int t, GlobalState& next) {
      if (t != T) return;
      const Cell agent = next.agents[0];
      std::vector<Cell> free;
      for (int y = agent.y - kFlexInsertRadius; y <= agent.y + kFlexInsertRadius; ++y) {
        for (int x = agent.x - kFlexInsertRadius; x <= agent.x + kFlexInsertRadius; ++x) {
          const Cell c{x, y};
          if (!dims.contains(c) || c == agent || manhattan(c, agent) > kFlexInsertRadius) continue;
          const bool taken = std::any_of(next.targets.begin(), next.targets.end(),
                                         [&](const Target& tg) { return tg.alive && tg.cell == c; });
          if (!taken) free.push_back(c);
        }
      }
      if (free.empty()) return;
      Rng rng(mix_seed(ep_seed, 0x1a5e));
      next.targets.push_back({free[static_cast<std::size_t>(rng.below(static_cast<int>(free.size())))], true});
      inserted = true;
    };
    const EpisodeRecord rec = run_episode(ctx, Mode::Eval, ep_seed, nullptr, 0.0, hooks);
    if (!inserted || rec.steps < T + 2) {
      ++r.resampled;
      continue;
    }
    ++r.episodes;
    terms += rec.mean_terminations();
    int first = -1;
    for (const auto& s : rec.step_log) {
      if (s.t > T && s.changed) {
        first = s.t;
        break;
      }
    }
    if (first == T + 1) ++switched;
    steps_sum += first >= 0 ? first - T : rec.steps - T;
  }
  r.switch_rate_at_T_plus_1 = static_cast<double>(switched) / r.episodes;
  r.mean_steps_to_switch = steps_sum / r.episodes;
  r.terminations_per_episode = terms / r.episodes;
  return r;
}

ProbeReport predictability_probe(const TrainConfig& config, const QFunction& q, int episodes,
                                 std::uint64_t seed) {
  if (episodes < 1) throw std::invalid_argument("probe needs at least one episode");
  const Env env(config.env);
  const EpisodeContext ctx{env, config, q};
  EpisodeHooks hooks;
  hooks.record_steps = true;

  ProbeReport r;
  r.agent = to_string(config.family.kind);
  r.delta = config.family.delta;
  r.episodes = episodes;
  long near_changes = 0;
  long far_changes = 0;
  double terms = 0.0;
  for (int i = 0; i < episodes; ++i) {
    const EpisodeRecord rec = run_episode(ctx, Mode::Eval, eval_episode_seed(seed, i), nullptr, 0.0, hooks);
    terms += rec.mean_terminations();
    for (const auto& s : rec.step_log) {
      if (s.nearest_target <= kNearDistance) {
        ++r.near_steps;
        near_changes += s.changed;
      } else {
        ++r.far_steps;
        far_changes += s.changed;
      }
    }
  }
  if (r.near_steps > 0) r.p_change_near = static_cast<double>(near_changes) / r.near_steps;
  if (r.far_steps > 0) r.p_change_far = static_cast<double>(far_changes) / r.far_steps;
  r.terminations_per_episode = terms / episodes;
  return r;
}

std::vector<InterruptPoint> interrupt_sweep(const TrainConfig& config,
                                            std::span<const QFunction* const> qs,
                                            std::span<const int> T_values, int episodes,
                                            std::uint64_t seed) {
  if (T_values.empty()) throw std::invalid_argument("interrupt sweep needs at least one T");
  if (qs.empty()) throw std::invalid_argument("interrupt sweep needs at least one Q function");
  const Env env(config.env);
  std::vector<InterruptPoint> out;
  for (const int T : T_values) {
    if (T < 0) throw std::invalid_argument("interrupt period must be >= 0");
    TrainConfig c = config;
    c.family.kind = AgentKind::OptionTerm;
    c.family.interrupt_every = T;
    InterruptPoint p;
    p.T = T;
    std::vector<double> means;
    for (const QFunction* q : qs) {
      const EvalSummary s = evaluate(env, c, *q, episodes, seed);
      means.push_back(s.mean_reward);
      p.mean_terminations += s.mean_terminations;
    }
    const double n = static_cast<double>(qs.size());
    p.mean_reward = std::accumulate(means.begin(), means.end(), 0.0) / n;
    double var = 0.0;
    for (double m : means) var += (m - p.mean_reward) * (m - p.mean_reward);
    p.std_reward = std::sqrt(var / n);
    p.mean_terminations /= n;
    out.push_back(p);
  }
  return out;
}

}  // namespace mahrl
