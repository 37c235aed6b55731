#include <doctest.h>

#include <stdexcept>
#include <vector>

#include "mahrl/metrics.hpp"

using namespace mahrl;

namespace {

TrainConfig small_taxi(AgentKind kind, double delta, int agents = 1) {
  TrainConfig c;
  c.env.task = TaskKind::Taxi;
  c.env.width = 5;
  c.env.height = 5;
  c.env.n_agents = agents;
  c.env.n_targets = 3;
  c.env.max_steps = 30;
  c.option_radius = 2;
  c.family.kind = kind;
  c.family.delta = delta;
  c.backend.kind = "tabular";
  c.backend.alpha = 0.5;
  c.gamma = 0.9;
  c.batch_size = 8;
  c.episodes = 300;
  c.eval_interval = 300;
  c.eval_episodes = 5;
  return c;
}

}  // namespace

TEST_CASE("probe report json round trip") {
  ProbeReport r;
  r.agent = "dynamic";
  r.delta = 0.1;
  r.episodes = 7;
  r.insert_step = 3;
  r.switch_rate_at_T_plus_1 = 0.25;
  r.mean_steps_to_switch = 2.5;
  r.resampled = 1;
  r.p_change_near = 0.125;
  r.p_change_far = 0.0625;
  r.near_steps = 11;
  r.far_steps = 13;
  r.terminations_per_episode = 1.5;
  const ProbeReport back = ProbeReport::from_json(nlohmann::json::parse(r.to_json().dump()));
  CHECK(back.to_json() == r.to_json());
}

TEST_CASE("predictability probe partitions every agent-step") {
  const TrainConfig cfg = small_taxi(AgentKind::GreedyTerm, 0.0, 2);
  const TrainResult tr = train(cfg);
  const ProbeReport r = predictability_probe(cfg, *tr.q, 20, 3);
  const EvalSummary s = evaluate(Env(cfg.env), cfg, *tr.q, 20, 3, true);
  long steps = 0;
  for (const auto& e : s.episodes) steps += static_cast<long>(e.steps) * cfg.env.n_agents;
  CHECK(r.near_steps + r.far_steps == steps);
  CHECK(r.p_change_near >= 0.0);
  CHECK(r.p_change_near <= 1.0);
  CHECK(r.p_change_far >= 0.0);
  CHECK(r.p_change_far <= 1.0);
  CHECK(r.terminations_per_episode == doctest::Approx(s.mean_terminations));
}

TEST_CASE("flexibility probe") {
  const TrainConfig cfg = small_taxi(AgentKind::DynamicTerm, 0.1);
  const TrainResult tr = train(cfg);
  const ProbeReport a = flexibility_probe(cfg, *tr.q, 3, 40, 9);
  const ProbeReport b = flexibility_probe(cfg, *tr.q, 3, 40, 9);
  CHECK(a.to_json() == b.to_json());
  CHECK(a.episodes == 40);
  CHECK(a.insert_step == 3);
  CHECK(a.switch_rate_at_T_plus_1 >= 0.0);
  CHECK(a.switch_rate_at_T_plus_1 <= 1.0);
  CHECK(a.mean_steps_to_switch >= 1.0);

  CHECK_THROWS_AS(flexibility_probe(cfg, *tr.q, 29, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(flexibility_probe(cfg, *tr.q, 3, 0, 1), std::invalid_argument);
  const TrainConfig two = small_taxi(AgentKind::DynamicTerm, 0.1, 2);
  CHECK_THROWS_AS(flexibility_probe(two, *tr.q, 3, 5, 1), std::invalid_argument);
}

TEST_CASE("interrupt sweep endpoints match the greedy and option rules") {
  const TrainConfig cfg = small_taxi(AgentKind::GreedyTerm, 0.0, 2);
  const TrainResult tr = train(cfg);
  const std::vector<const QFunction*> qs{tr.q.get()};
  const std::vector<int> Ts{1, 0, 4};
  const auto pts = interrupt_sweep(cfg, qs, Ts, 30, 5);
  REQUIRE(pts.size() == 3);
  const Env env(cfg.env);
  TrainConfig greedy = cfg;
  greedy.family.kind = AgentKind::GreedyTerm;
  TrainConfig option = cfg;
  option.family.kind = AgentKind::OptionTerm;
  const EvalSummary g = evaluate(env, greedy, *tr.q, 30, 5);
  const EvalSummary o = evaluate(env, option, *tr.q, 30, 5);
  CHECK(pts[0].mean_reward == doctest::Approx(g.mean_reward).epsilon(1e-12));
  CHECK(pts[0].mean_terminations == doctest::Approx(g.mean_terminations).epsilon(1e-12));
  CHECK(pts[1].mean_reward == doctest::Approx(o.mean_reward).epsilon(1e-12));
  CHECK(pts[1].std_reward == 0.0);
  CHECK(pts[2].T == 4);

  CHECK_THROWS_AS(interrupt_sweep(cfg, qs, std::vector<int>{}, 5, 1), std::invalid_argument);
  CHECK_THROWS_AS(interrupt_sweep(cfg, qs, std::vector<int>{-1}, 5, 1), std::invalid_argument);
}
