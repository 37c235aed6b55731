#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>

#include "mahrl/options.hpp"
#include "mahrl/qfunc.hpp"
#include "mahrl/rng.hpp"

using namespace mahrl;

namespace {

QInput sample_input(std::uint64_t seed, int n_agents = 2, bool broadcast = true) {
  EnvConfig c;
  c.width = 6;
  c.height = 5;
  c.n_agents = n_agents;
  c.n_targets = 3;
  const Env env(c);
  const GlobalState s = env.reset(seed);
  DelayedView view;
  for (int j = 1; j < n_agents; ++j) {
    OptionInstance o;
    o.subgoal = {static_cast<int>(seed % 6), 2};
    view.push_back({j, o, 0});
  }
  return make_qinput(s, env.dims(), 0, view, broadcast);
}

}  // namespace

TEST_CASE("encoding matches the environment observation") {
  EnvConfig c;
  c.width = 7;
  c.height = 4;
  c.n_agents = 3;
  c.n_targets = 4;
  const Env env(c);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    GlobalState s = env.reset(seed);
    s.targets[1].alive = false;
    BroadcastBoard board(3);
    OptionInstance o;
    o.subgoal = {6, 3};
    board.announce(2, o, 0);
    board.end_of_step(0);
    for (int j = 0; j < 3; ++j) {
      const DelayedView v = board.view(j);
      const auto dests = destinations(v);
      CHECK(to_observation(make_qinput(s, env.dims(), j, v, true)).data == env.observation(s, j, dests).data);
      const QInput iql = make_qinput(s, env.dims(), j, v, false);
      CHECK(to_observation(iql).data == env.observation(s, j, {}).data);
      CHECK(to_observation(iql).channel_sum(3) == 0);
    }
  }
}

TEST_CASE("egocentric encoding is translation invariant") {
  const GridDims g{8, 8};
  QInput a;
  a.dims = g;
  a.agents = {{2, 2}, {3, 4}};
  a.targets = {{4, 2}};
  a.view = {Cell{1, 1}};
  QInput b = a;
  b.agents = {{4, 3}, {5, 5}};
  b.targets = {{6, 3}};
  b.view = {Cell{3, 2}};
  auto drop_self = [&](std::vector<int> v) {
    v.erase(v.begin());
    return v;
  };
  CHECK(drop_self(active_inputs(a, InputFrame::Egocentric)) == drop_self(active_inputs(b, InputFrame::Egocentric)));
  CHECK(active_inputs(a, InputFrame::Egocentric).size() == 4);
  for (int i : active_inputs(a, InputFrame::Egocentric)) CHECK(i < input_size(InputFrame::Egocentric, g));
  CHECK(input_size(InputFrame::Absolute, g) == 4 * 64);
  CHECK(parse_input_frame(to_string(InputFrame::Egocentric)) == InputFrame::Egocentric);
  CHECK_THROWS_AS(parse_input_frame("polar"), std::invalid_argument);
}

TEST_CASE("tabular backend basics") {
  TabularQ q(4, 1.0);
  const QInput in = sample_input(1);
  CHECK(q.evaluate(in) == QOutput(5, 0.0));
  CHECK(q.output_size() == 5);
  CHECK(q.termination_head() == 4);

  std::vector<TdTarget> batch{{&in, 2, 3.5}};
  q.apply_td_updates(batch);
  CHECK(q.evaluate(in)[2] == 3.5);

  TabularQ half(4, 0.5);
  std::vector<TdTarget> one{{&in, 0, 1.0}};
  const double loss = half.apply_td_updates(one);
  CHECK(half.evaluate(in)[0] == 0.5);
  CHECK(loss == 1.0);

  std::vector<TdTarget> bad{{&in, 0, std::nan("")}};
  CHECK_THROWS_AS(half.apply_td_updates(bad), std::invalid_argument);
  std::vector<TdTarget> out_of_range{{&in, 5, 0.0}};
  CHECK_THROWS(half.apply_td_updates(out_of_range));
}

TEST_CASE("tabular key separates observers, views and targets") {
  const QInput a = sample_input(3);
  QInput b = a;
  b.observer = 1;
  CHECK(TabularQ::key(a) != TabularQ::key(b));
  QInput c = a;
  c.view = {std::nullopt};
  CHECK(TabularQ::key(a) != TabularQ::key(c));
  QInput d = a;
  d.targets.pop_back();
  CHECK(TabularQ::key(a) != TabularQ::key(d));
  QInput e = a;
  std::reverse(e.targets.begin(), e.targets.end());
  CHECK(TabularQ::key(a) == TabularQ::key(e));
}

TEST_CASE("tabular exactness under repeated sweeps") {
  TabularQ q(3, 1.0);
  std::vector<QInput> inputs;
  for (std::uint64_t s = 0; s < 10; ++s) inputs.push_back(sample_input(s));
  std::vector<TdTarget> batch;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    batch.push_back({&inputs[i], static_cast<int>(i % 4), static_cast<double>(i) - 4.5});
  for (int sweep = 0; sweep < 3; ++sweep) q.apply_td_updates(batch);
  for (const auto& t : batch) CHECK(q.evaluate(*t.input)[static_cast<std::size_t>(t.head)] == t.target);
}

TEST_CASE("dense backend determinism and zero network") {
  const GridDims g{6, 5};
  DenseQ a(g, 8, {16, 8}, 5, 1e-3), b(g, 8, {16, 8}, 5, 1e-3);
  const QInput in = sample_input(2);
  CHECK(a.evaluate(in) == a.evaluate(in));
  CHECK(a.evaluate(in) == b.evaluate(in));
  CHECK(a.evaluate(in).size() == 9);
  CHECK(a.parameter_count() == static_cast<std::size_t>(120 * 16 + 16 + 16 * 8 + 8 + 8 * 9 + 9));

  for (std::size_t i = 0; i < a.parameter_count(); ++i) a.parameter(i) = 0.0;
  CHECK(a.evaluate(in) == QOutput(9, 0.0));
  QInput wrong = in;
  wrong.dims = {5, 5};
  CHECK_THROWS_AS(a.evaluate(wrong), std::invalid_argument);
}

TEST_CASE("dense gradients match finite differences") {
  const GridDims g{6, 5};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    DenseQ net(g, 8, {16, 8}, seed, 1e-3);
    const QInput in = sample_input(seed);
    CHECK(gradient_check(net, in, static_cast<int>(seed % 9), 0.7, 20, seed) < 1e-4);
  }
  DenseQ zero(g, 8, {16, 8}, 9, 1e-3);
  for (std::size_t i = 0; i < zero.parameter_count(); ++i) zero.parameter(i) = 0.0;
  CHECK(gradient_check(zero, sample_input(4), 3, 1.5, 50, 1) < 1e-6);
}

TEST_CASE("bias-only gradient is 2 (value - target)") {
  const GridDims g{6, 5};
  DenseQ net(g, 4, {}, 1, 1e-3);
  for (std::size_t i = 0; i < net.parameter_count(); ++i) net.parameter(i) = 0.0;
  auto& out = net.layers().back();
  out.b[2] = 0.25;
  const QInput in = sample_input(0);
  const auto grad = net.gradient(in, 2, 1.0);
  const std::size_t bias = out.w.size() + 2;
  CHECK(grad[bias] == doctest::Approx(2.0 * (0.25 - 1.0)));
}

TEST_CASE("dense step reduces the loss on a fixed batch") {
  const GridDims g{6, 5};
  DenseQ net(g, 8, {16}, 3, 1e-2);
  std::vector<QInput> inputs;
  for (std::uint64_t s = 0; s < 8; ++s) inputs.push_back(sample_input(s));
  std::vector<TdTarget> batch;
  for (std::size_t i = 0; i < inputs.size(); ++i) batch.push_back({&inputs[i], static_cast<int>(i), 1.0});
  const double before = net.apply_td_updates(batch);
  const double after = net.apply_td_updates(batch);
  CHECK(after < before);
  CHECK(after >= 0.0);
}

TEST_CASE("head isolation in the output layer") {
  const GridDims g{6, 5};
  DenseQ net(g, 8, {16}, 3, 1e-2);
  const DenseQ before = net;
  const QInput in = sample_input(1);
  std::vector<TdTarget> batch{{&in, 3, 2.0}};
  net.apply_td_updates(batch);
  const auto& l0 = before.layers().back();
  const auto& l1 = net.layers().back();
  for (int i = 0; i < l1.in; ++i)
    for (int o = 0; o < l1.out; ++o) {
      const auto k = static_cast<std::size_t>(i * l1.out + o);
      if (o != 3) CHECK(l1.w[k] == l0.w[k]);
    }
  for (int o = 0; o < l1.out; ++o)
    if (o != 3) CHECK(l1.b[static_cast<std::size_t>(o)] == l0.b[static_cast<std::size_t>(o)]);
  CHECK(l1.b[3] != l0.b[3]);
}

TEST_CASE("shared parameters: one agent's update moves the other's values") {
  const GridDims g{6, 5};
  DenseQ net(g, 8, {16}, 3, 1e-2);
  EnvConfig c;
  c.width = 6;
  c.height = 5;
  c.n_agents = 2;
  c.n_targets = 2;
  const GlobalState s = Env(c).reset(4);
  const QInput a0 = make_qinput(s, g, 0, {}, false);
  const QInput a1 = make_qinput(s, g, 1, {}, false);
  const QOutput before = net.evaluate(a1);
  std::vector<TdTarget> batch{{&a0, 0, 5.0}};
  net.apply_td_updates(batch);
  CHECK(net.evaluate(a1) != before);
}

TEST_CASE("target copies are frozen") {
  const GridDims g{6, 5};
  DenseQ net(g, 8, {16}, 3, 1e-2);
  const QInput in = sample_input(1);
  const auto frozen = sync_target(net);
  CHECK(frozen->evaluate(in) == net.evaluate(in));
  std::vector<TdTarget> batch{{&in, 0, 5.0}};
  const QOutput snap = frozen->evaluate(in);
  net.apply_td_updates(batch);
  CHECK(frozen->evaluate(in) == snap);
  CHECK(net.evaluate(in) != snap);
}

TEST_CASE("checkpoints restore identical evaluations") {
  const auto dir = std::filesystem::temp_directory_path() / "mahrl_qfunc_test";
  std::filesystem::create_directories(dir);
  const GridDims g{6, 5};
  for (InputFrame f : {InputFrame::Absolute, InputFrame::Egocentric}) {
    DenseQ net(g, 8, {16, 4}, 11, 1e-2, f);
    const QInput in = sample_input(6);
    std::vector<TdTarget> batch{{&in, 1, 0.3}};
    net.apply_td_updates(batch);
    save_checkpoint(net, dir / "dense.ckpt");
    const auto loaded = load_checkpoint(dir / "dense.ckpt");
    CHECK(loaded->kind() == "dense");
    for (std::uint64_t s = 0; s < 10; ++s) CHECK(loaded->evaluate(sample_input(s)) == net.evaluate(sample_input(s)));
  }

  TabularQ tab(4, 0.5);
  const QInput in = sample_input(2);
  tab.set(in, {0.1, 0.2, 1.0 / 3.0, -4.0, 7.0});
  save_checkpoint(tab, dir / "tab.ckpt");
  const auto t2 = load_checkpoint(dir / "tab.ckpt");
  CHECK(t2->evaluate(in) == tab.evaluate(in));
  CHECK(t2->evaluate(sample_input(9)) == QOutput(5, 0.0));
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("backend factory") {
  BackendConfig c;
  CHECK(make_backend(c, {5, 5}, 8, 1)->kind() == "tabular");
  c.kind = "dense";
  c.hidden = {8};
  CHECK(make_backend(c, {5, 5}, 8, 1)->kind() == "dense");
  c.kind = "conv";
  CHECK_THROWS_AS(make_backend(c, {5, 5}, 8, 1), std::invalid_argument);
}
