#include "mahrl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include "mahrl/agents.hpp"
#include "mahrl/options.hpp"

namespace mahrl::oracle {

namespace {

EnvConfig untimed(EnvConfig c) {
  c.max_steps = std::numeric_limits<int>::max();
  c.prey_walk = false;
  return c;
}

void for_each_subset(int n, int max_size, const std::function<void(const std::vector<int>&)>& fn) {
  std::vector<int> chosen;
  std::function<void(int)> rec = [&](int start) {
    if (!chosen.empty()) fn(chosen);
    if (static_cast<int>(chosen.size()) == max_size) return;
    for (int i = start; i < n; ++i) {
      chosen.push_back(i);
      rec(i + 1);
      chosen.pop_back();
    }
  };
  rec(0);
}

}  // namespace

double QTable::row_max(std::size_t s, int n) const {
  double best = at(s, 0);
  for (int c = 1; c < n; ++c) best = std::max(best, at(s, c));
  return best;
}

std::string EnumeratedMDP::key(const GlobalState& s, GridDims dims) {
  std::string k;
  for (const Cell c : s.agents) k.push_back(static_cast<char>(dims.index(c)));
  k.push_back('|');
  std::vector<int> alive;
  for (const auto& t : s.targets)
    if (t.alive) alive.push_back(dims.index(t.cell));
  std::sort(alive.begin(), alive.end());
  for (int a : alive) k.push_back(static_cast<char>(a));
  return k;
}

EnumeratedMDP::EnumeratedMDP(const EnvConfig& env, int radius, double gamma, std::size_t max_states)
    : config_(env), env_(untimed(env)), radius_(radius), gamma_(gamma),
      n_options_(options::option_count(radius)) {
  const GridDims dims = env.dims();
  if (dims.cells() > 255) throw std::invalid_argument("instance too large to enumerate");
  const int cells = dims.cells();

  // Agent tuples times target layouts; count first so oversized instances
  // fail before allocating.
  double agent_tuples = std::pow(static_cast<double>(cells), env.n_agents);
  double layouts = 0.0;
  {
    double c = 1.0;
    for (int k = 1; k <= env.n_targets; ++k) {
      c = c * static_cast<double>(cells - k + 1) / static_cast<double>(k);
      layouts += c;
    }
  }
  if (agent_tuples * layouts > static_cast<double>(max_states))
    throw std::invalid_argument("enumerated state count exceeds the limit");

  std::vector<Cell> agents(static_cast<std::size_t>(env.n_agents));
  for_each_subset(cells, env.n_targets, [&](const std::vector<int>& layout) {
    for (long a = 0; a < static_cast<long>(agent_tuples); ++a) {
      long rest = a;
      for (auto& c : agents) {
        c = dims.cell(static_cast<int>(rest % cells));
        rest /= cells;
      }
      GlobalState s;
      s.task = env.task;
      s.agents = agents;
      bool covered = false;
      for (int l : layout) {
        const Cell tc = dims.cell(l);
        s.targets.push_back({tc, true});
        if (env.task == TaskKind::Taxi && std::find(agents.begin(), agents.end(), tc) != agents.end())
          covered = true;
      }
      if (covered) continue;
      index_.emplace(key(s, dims), static_cast<int>(states_.size()));
      states_.push_back(std::move(s));
    }
  });

  if (env.n_agents != 1) return;
  edges_.resize(states_.size() * static_cast<std::size_t>(n_options_));
  for (std::size_t s = 0; s < states_.size(); ++s) {
    const Cell cell = states_[s].agents[0];
    for (int o = 0; o < n_options_; ++o) {
      const OptionInstance inst = options::bind(options::option_at(o, radius_), cell, dims);
      const Action a = options::policy_action(inst, cell);
      const StepOutcome out = env_.step(states_[s], std::span<const Action>(&a, 1));
      Edge& e = edges_[s * static_cast<std::size_t>(n_options_) + static_cast<std::size_t>(o)];
      e.reward = out.rewards[0];
      e.terminal = out.terminal;
      e.next = out.terminal ? -1 : index_of(out.next_state);
      const auto cont = options::relative_index(inst.subgoal, out.next_state.agents[0], radius_);
      e.continuation = cont ? *cont : -1;
      if (!out.terminal && e.next < 0) throw std::logic_error("enumeration missed a successor state");
    }
  }
}

int EnumeratedMDP::index_of(const GlobalState& s) const {
  if (s.alive_targets() == 0) return -1;
  const auto it = index_.find(key(s, config_.dims()));
  return it == index_.end() ? -1 : it->second;
}

QInput EnumeratedMDP::input(std::size_t i, int observer) const {
  return make_qinput(states_.at(i), config_.dims(), observer, {}, false);
}

const EnumeratedMDP::Edge& EnumeratedMDP::edge(std::size_t s, int option) const {
  if (edges_.empty()) throw std::logic_error("option edges exist only for single-agent instances");
  return edges_.at(s * static_cast<std::size_t>(n_options_) + static_cast<std::size_t>(option));
}

std::pair<int, double> EnumeratedMDP::joint_step(std::size_t s, std::span<const Action> actions) const {
  const StepOutcome out = env_.step(states_.at(s), actions);
  double r = 0.0;
  for (double x : out.rewards) r += x;
  return {out.terminal ? -1 : index_of(out.next_state), r};
}

namespace {

void require_single_agent(const EnumeratedMDP& mdp) {
  if (mdp.n_agents() != 1) throw std::invalid_argument("solver requires a single-agent instance");
}

template <typename Sweep>
void iterate(QTable& q, const SolveOptions& opts, Sweep&& sweep) {
  for (int k = 0; k < opts.max_sweeps; ++k) {
    const double change = sweep();
    q.residual_history.push_back(change);
    q.sweeps = k + 1;
    q.residual = change;
    if (change < opts.tol) return;
  }
  throw std::runtime_error("value iteration did not converge within the sweep cap");
}

}  // namespace

QTable vi_dynamic(const EnumeratedMDP& mdp, double delta, const SolveOptions& opts) {
  require_single_agent(mdp);
  const int n_o = mdp.n_options();
  const double gamma = mdp.gamma();
  QTable q;
  q.states = mdp.size();
  q.columns = n_o + 1;
  q.values.assign(q.states * static_cast<std::size_t>(q.columns), 0.0);
  for (std::size_t s = 0; s < q.states; ++s) q.at(s, n_o) = -delta;

  QTable next = q;
  iterate(q, opts, [&] {
    double change = 0.0;
    for (std::size_t s = 0; s < q.states; ++s) {
      for (int o = 0; o < n_o; ++o) {
        const auto& e = mdp.edge(s, o);
        double v = e.reward;
        if (!e.terminal) {
          const auto sn = static_cast<std::size_t>(e.next);
          const double best = q.row_max(sn, n_o);
          const double term = q.at(sn, n_o);
          double cont;
          if (e.continuation >= 0)
            cont = std::max(q.at(sn, e.continuation), term);
          else
            cont = opts.force_reselect_at_subgoal ? best : std::max(q.at(sn, o), term);
          v += gamma * cont;
        }
        change = std::max(change, std::abs(v - q.at(s, o)));
        next.at(s, o) = v;
      }
    }
    for (std::size_t s = 0; s < q.states; ++s) {
      const double term = next.row_max(s, n_o) - delta;
      change = std::max(change, std::abs(term - q.at(s, n_o)));
      next.at(s, n_o) = term;
    }
    std::swap(q.values, next.values);
    return change;
  });
  return q;
}

QTable vi_smdp(const EnumeratedMDP& mdp, const SolveOptions& opts) {
  require_single_agent(mdp);
  const int n_o = mdp.n_options();
  const double gamma = mdp.gamma();

  // Multi-step model of every option: discounted reward until arrival or a
  // terminal step, the discount gamma^k, and the state it ends in.
  struct Model {
    double reward = 0.0;
    double discount = 0.0;
    int end = -1;
  };
  std::vector<Model> models(mdp.size() * static_cast<std::size_t>(n_o));
  for (std::size_t s = 0; s < mdp.size(); ++s) {
    for (int o = 0; o < n_o; ++o) {
      Model m;
      double g = 1.0;
      std::size_t cur = s;
      int head = o;
      while (true) {
        const auto& e = mdp.edge(cur, head);
        m.reward += g * e.reward;
        g *= gamma;
        if (e.terminal) break;
        if (e.continuation < 0) {
          m.discount = g;
          m.end = e.next;
          break;
        }
        cur = static_cast<std::size_t>(e.next);
        head = e.continuation;
      }
      models[s * static_cast<std::size_t>(n_o) + static_cast<std::size_t>(o)] = m;
    }
  }

  QTable q;
  q.states = mdp.size();
  q.columns = n_o;
  q.values.assign(q.states * static_cast<std::size_t>(n_o), 0.0);
  QTable next = q;
  iterate(q, opts, [&] {
    double change = 0.0;
    for (std::size_t s = 0; s < q.states; ++s) {
      for (int o = 0; o < n_o; ++o) {
        const Model& m = models[s * static_cast<std::size_t>(n_o) + static_cast<std::size_t>(o)];
        double v = m.reward;
        if (m.end >= 0) v += m.discount * q.row_max(static_cast<std::size_t>(m.end), n_o);
        change = std::max(change, std::abs(v - q.at(s, o)));
        next.at(s, o) = v;
      }
    }
    std::swap(q.values, next.values);
    return change;
  });
  return q;
}

QTable vi_joint(const EnumeratedMDP& mdp, const SolveOptions& opts) {
  const int n = mdp.n_agents();
  const GridDims dims = mdp.env_config().dims();
  if (n > 2 || dims.width > 4 || dims.height > 4)
    throw std::invalid_argument("joint solver supports at most 2 agents on a 4x4 grid");
  const int n_o = mdp.n_options();
  const int joint = n == 1 ? n_o : n_o * n_o;

  struct JointEdge {
    int next = -1;
    double reward = 0.0;
  };
  std::vector<JointEdge> edges(mdp.size() * static_cast<std::size_t>(joint));
  std::vector<Action> actions(static_cast<std::size_t>(n));
  for (std::size_t s = 0; s < mdp.size(); ++s) {
    const GlobalState& st = mdp.state(s);
    for (int jo = 0; jo < joint; ++jo) {
      int rest = jo;
      for (int j = n - 1; j >= 0; --j) {
        const int o = rest % n_o;
        rest /= n_o;
        const Cell cell = st.agents[static_cast<std::size_t>(j)];
        actions[static_cast<std::size_t>(j)] = options::policy_action(
            options::bind(options::option_at(o, mdp.radius()), cell, dims), cell);
      }
      const auto [next, r] = mdp.joint_step(s, actions);
      edges[s * static_cast<std::size_t>(joint) + static_cast<std::size_t>(jo)] = {next, r};
    }
  }

  QTable q;
  q.states = mdp.size();
  q.columns = joint;
  q.values.assign(q.states * static_cast<std::size_t>(joint), 0.0);
  std::vector<double> best(q.states, 0.0);
  iterate(q, opts, [&] {
    for (std::size_t s = 0; s < q.states; ++s) best[s] = q.row_max(s, joint);
    double change = 0.0;
    for (std::size_t s = 0; s < q.states; ++s) {
      for (int jo = 0; jo < joint; ++jo) {
        const auto& e = edges[s * static_cast<std::size_t>(joint) + static_cast<std::size_t>(jo)];
        double v = e.reward;
        if (e.next >= 0) v += mdp.gamma() * best[static_cast<std::size_t>(e.next)];
        change = std::max(change, std::abs(v - q.at(s, jo)));
        q.at(s, jo) = v;
      }
    }
    return change;
  });
  return q;
}

double dynamic_residual(const EnumeratedMDP& mdp, const QFunction& q, double delta,
                        bool force_reselect_at_subgoal) {
  require_single_agent(mdp);
  const int n_o = mdp.n_options();
  if (q.n_options() != n_o) throw std::invalid_argument("Q function has a different option set");
  std::vector<QOutput> values(mdp.size());
  for (std::size_t s = 0; s < mdp.size(); ++s) values[s] = q.evaluate(mdp.input(s));

  double worst = 0.0;
  for (std::size_t s = 0; s < mdp.size(); ++s) {
    const QOutput& v = values[s];
    for (int o = 0; o < n_o; ++o) {
      const auto& e = mdp.edge(s, o);
      double target = e.reward;
      if (!e.terminal) {
        const QOutput& nv = values[static_cast<std::size_t>(e.next)];
        const double term = nv.back();
        double cont;
        if (e.continuation >= 0)
          cont = std::max(nv[static_cast<std::size_t>(e.continuation)], term);
        else
          cont = force_reselect_at_subgoal ? nv[static_cast<std::size_t>(argmax_option(nv))]
                                           : std::max(nv[static_cast<std::size_t>(o)], term);
        target += mdp.gamma() * cont;
      }
      worst = std::max(worst, std::abs(target - v[static_cast<std::size_t>(o)]));
    }
    const double term_target = v[static_cast<std::size_t>(argmax_option(v))] - delta;
    worst = std::max(worst, std::abs(term_target - v.back()));
  }
  return worst;
}

TabularQ to_tabular(const EnumeratedMDP& mdp, const QTable& table, double alpha) {
  if (table.columns != mdp.n_options() + 1)
    throw std::invalid_argument("table needs option columns plus T");
  TabularQ q(mdp.n_options(), alpha);
  for (std::size_t s = 0; s < mdp.size(); ++s) {
    QOutput row(table.values.begin() + static_cast<std::ptrdiff_t>(s * static_cast<std::size_t>(table.columns)),
                table.values.begin() + static_cast<std::ptrdiff_t>((s + 1) * static_cast<std::size_t>(table.columns)));
    q.set(mdp.input(s), row);
  }
  return q;
}

double delayed_policy_return(const EnumeratedMDP& mdp, const QTable& joint, std::size_t start,
                             int max_steps) {
  const int n = mdp.n_agents();
  const int n_o = mdp.n_options();
  const GridDims dims = mdp.env_config().dims();
  const int radius = mdp.radius();
  std::vector<std::optional<Cell>> subgoals(static_cast<std::size_t>(n));
  std::vector<Action> actions(static_cast<std::size_t>(n));
  std::vector<std::optional<Cell>> chosen(static_cast<std::size_t>(n));

  // Joint column for (own option, other option) from agent j's perspective.
  auto column = [&](int j, int own, int other) {
    if (n == 1) return own;
    return j == 0 ? own * n_o + other : other * n_o + own;
  };

  double ret = 0.0;
  double discount = 1.0;
  int s = static_cast<int>(start);
  for (int t = 0; t < max_steps && s >= 0; ++t) {
    const GlobalState& st = mdp.state(static_cast<std::size_t>(s));
    for (int j = 0; j < n; ++j) {
      const Cell cell = st.agents[static_cast<std::size_t>(j)];
      std::optional<int> other_head;
      if (n == 2) {
        const auto& sg = subgoals[static_cast<std::size_t>(1 - j)];
        if (sg) other_head = options::relative_index(*sg, st.agents[static_cast<std::size_t>(1 - j)], radius);
      }
      QOutput values(static_cast<std::size_t>(n_o) + 1, 0.0);
      for (int o = 0; o < n_o; ++o) {
        if (n == 1 || other_head) {
          values[static_cast<std::size_t>(o)] =
              joint.at(static_cast<std::size_t>(s), column(j, o, other_head ? *other_head : 0));
        } else {
          double best = -std::numeric_limits<double>::infinity();
          for (int other = 0; other < n_o; ++other)
            best = std::max(best, joint.at(static_cast<std::size_t>(s), column(j, o, other)));
          values[static_cast<std::size_t>(o)] = best;
        }
      }
      std::optional<int> current;
      if (subgoals[static_cast<std::size_t>(j)])
        current = options::relative_index(*subgoals[static_cast<std::size_t>(j)], cell, radius);
      const int pick = current ? argmax_option_incumbent(values, *current) : argmax_option(values);
      chosen[static_cast<std::size_t>(j)] =
          options::bind(options::option_at(pick, radius), cell, dims).subgoal;
      actions[static_cast<std::size_t>(j)] = options::policy_action(*chosen[static_cast<std::size_t>(j)], cell);
    }
    subgoals = chosen;
    const auto [next, r] = mdp.joint_step(static_cast<std::size_t>(s), actions);
    ret += discount * r;
    discount *= mdp.gamma();
    s = next;
  }
  return ret;
}

Rollout rollout_dynamic(const EnumeratedMDP& mdp, const QTable& table, std::size_t start, int max_steps) {
  require_single_agent(mdp);
  const GridDims dims = mdp.env_config().dims();
  AgentFamily family{AgentKind::DynamicTerm};
  Rollout out;
  double discount = 1.0;
  std::optional<Cell> subgoal;
  int s = static_cast<int>(start);
  for (int t = 0; t < max_steps && s >= 0; ++t) {
    const GlobalState& st = mdp.state(static_cast<std::size_t>(s));
    const Cell cell = st.agents[0];
    QOutput row(table.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s) * static_cast<std::size_t>(table.columns)),
                table.values.begin() + static_cast<std::ptrdiff_t>(static_cast<std::size_t>(s + 1) * static_cast<std::size_t>(table.columns)));
    std::optional<int> current;
    if (subgoal) current = options::relative_index(*subgoal, cell, mdp.radius());
    const bool natural = subgoal && *subgoal == cell;
    const Decision d = decide(family, row, current, natural);
    int head = current ? *current : 0;
    if (d.switch_option) {
      if (current && t > 0) ++out.termination_choices;
      head = d.option;
      subgoal = options::bind(options::option_at(head, mdp.radius()), cell, dims).subgoal;
    }
    const auto& e = mdp.edge(static_cast<std::size_t>(s), head);
    out.discounted_return += discount * e.reward;
    discount *= mdp.gamma();
    ++out.steps;
    s = e.terminal ? -1 : e.next;
  }
  return out;
}

nlohmann::json fixture_json(const EnumeratedMDP& mdp, const QTable& table, double delta) {
  const auto& c = mdp.env_config();
  return {{"solver_version", kSolverVersion},
          {"instance",
           {{"task", to_string(c.task)},
            {"width", c.width},
            {"height", c.height},
            {"n_agents", c.n_agents},
            {"n_targets", c.n_targets},
            {"step_cost", c.step_cost},
            {"option_radius", mdp.radius()},
            {"gamma", mdp.gamma()},
            {"delta", delta}}},
          {"states", table.states},
          {"columns", table.columns},
          {"sweeps", table.sweeps},
          {"residual", table.residual},
          {"values", table.values}};
}

void write_fixture(const std::filesystem::path& path, const EnumeratedMDP& mdp, const QTable& table,
                   double delta) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write fixture " + path.string());
  out << fixture_json(mdp, table, delta).dump(1) << '\n';
}

QTable read_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read fixture " + path.string());
  const auto j = nlohmann::json::parse(in);
  QTable q;
  q.states = j.at("states").get<std::size_t>();
  q.columns = j.at("columns").get<int>();
  q.sweeps = j.at("sweeps").get<int>();
  q.residual = j.at("residual").get<double>();
  q.values = j.at("values").get<std::vector<double>>();
  if (q.values.size() != q.states * static_cast<std::size_t>(q.columns))
    throw std::runtime_error("fixture value count does not match its shape");
  return q;
}

}  // namespace mahrl::oracle
