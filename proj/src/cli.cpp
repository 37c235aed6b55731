#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "mahrl/harness.hpp"
#include "mahrl/oracle.hpp"

namespace mahrl {

double run_grad_check(std::uint64_t seed, int networks, int params) {
  EnvConfig env;
  env.width = 6;
  env.height = 5;
  env.n_agents = 2;
  env.n_targets = 3;
  const Env e(env);
  const int radius = 2;
  const int n_options = options::option_count(radius);
  double worst = 0.0;
  for (int k = 0; k < networks; ++k) {
    const std::uint64_t s = mix_seed(seed, static_cast<std::uint64_t>(k));
    DenseQ net(e.dims(), n_options, {24, 16}, s, 1e-3);
    Rng rng(mix_seed(s, 1));
    const GlobalState state = e.reset(mix_seed(s, 2));
    DelayedView view;
    const OptionInstance other =
        options::bind(options::option_at(rng.below(n_options), radius), state.agents[1], e.dims());
    view.push_back({1, other, 0});
    const QInput input = make_qinput(state, e.dims(), 0, view, true);
    const int head = rng.below(n_options + 1);
    const double target = rng.uniform(-2.0, 2.0);
    worst = std::max(worst, gradient_check(net, input, head, target, params, mix_seed(s, 3)));
  }
  return worst;
}

double run_oracle_check(const TrainConfig& config) {
  if (config.backend.kind != "tabular") throw std::invalid_argument("oracle check needs the tabular backend");
  if (!config.family.is_dynamic()) throw std::invalid_argument("oracle check needs a dynamic family");
  const TrainResult r = train(config);
  const oracle::EnumeratedMDP mdp(config.env, config.option_radius, config.gamma);
  return oracle::dynamic_residual(mdp, *r.q, config.family.delta, config.family.force_reselect_at_subgoal);
}

namespace {

struct Common {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> agent;
  std::optional<double> delta;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config_path, "config file (key = value)");
  app->add_option("--seed", c.seed, "run seed");
  app->add_option("--out", c.out, "output directory");
  app->add_option("--agent", c.agent, "agent family: option, greedy, dynamic, iql_greedy, iql_dynamic");
  app->add_option("--delta", c.delta, "termination price");
  app->add_option("--set", c.sets, "override any config key: key=value");
}

ExperimentConfig effective(const Common& c) {
  ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : load_config(c.config_path);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got '" + s + "'");
    apply_setting(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.out) cfg.out_dir = *c.out;
  if (c.agent) cfg.train.family.kind = parse_agent_kind(*c.agent);
  if (c.delta) cfg.train.family.delta = *c.delta;
  cfg.train.validate();
  return cfg;
}

void echo_config(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out_dir);
  const auto path = cfg.out_dir / name;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << config_to_text(cfg);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::unique_ptr<QFunction> checkpoint_for(const ExperimentConfig& cfg, const std::string& explicit_path) {
  const auto& tc = cfg.train;
  const std::filesystem::path path =
      explicit_path.empty() ? cfg.out_dir / checkpoint_name(to_string(tc.family.kind), tc.family.delta, tc.seed)
                            : std::filesystem::path(explicit_path);
  return load_checkpoint(path);
}

std::vector<double> parse_doubles(const std::string& s) {
  ExperimentConfig scratch;
  std::vector<double> v;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    apply_setting(scratch, "delta", cur);
    v.push_back(scratch.train.family.delta);
  }
  if (v.empty()) throw std::invalid_argument("empty list");
  return v;
}

std::vector<int> parse_ints(const std::string& s) {
  ExperimentConfig scratch;
  std::vector<int> v;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    apply_setting(scratch, "interrupt_every", cur);
    v.push_back(scratch.train.family.interrupt_every);
  }
  if (v.empty()) throw std::invalid_argument("empty list");
  return v;
}

std::vector<MatrixCell> parse_cells(const std::string& s) {
  std::vector<MatrixCell> cells;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    MatrixCell c;
    const auto colon = cur.find(':');
    c.kind = parse_agent_kind(cur.substr(0, colon));
    if (colon != std::string::npos) c.delta = parse_doubles(cur.substr(colon + 1)).front();
    cells.push_back(c);
  }
  if (cells.empty()) throw std::invalid_argument("empty agent list");
  return cells;
}

void print_summary(const std::vector<SummaryRow>& rows) {
  std::printf("%-12s %6s %6s %12s %10s %12s %10s\n", "agent", "delta", "seeds", "mean_reward", "std",
              "terminations", "std");
  for (const auto& r : rows) {
    std::printf("%-12s %6s %6d %12.4f %10.4f %12.4f %10.4f\n", r.agent.c_str(), format_delta(r.delta).c_str(),
                r.seeds, r.mean_reward, r.std_reward, r.mean_terminations, r.std_terminations);
    if (!r.error.empty()) std::printf("  failed: %s\n", r.error.c_str());
  }
}

}  // namespace

int cli(int argc, char** argv) {
  CLI::App app{"Multi-agent option learning with delayed communication and dynamic termination"};
  app.require_subcommand(1);

  Common train_c, eval_c, flex_c, pred_c, sd_c, si_c, oc_c, mx_c;
  std::string eval_ckpt, flex_ckpt, pred_ckpt, oc_ckpt;
  std::optional<int> eval_episodes, flex_T, flex_episodes, pred_episodes, si_episodes;
  std::string deltas = "0,0.05,0.1,0.2,0.5";
  std::string Ts = "1,2,4,8,16,0";
  std::string cells = "dynamic:0.1,greedy,option";
  std::uint64_t gc_seed = 1;
  int gc_networks = 5, gc_params = 20;
  double gc_tol = 1e-4, oc_tol = 1e-3;

  auto* train_cmd = app.add_subcommand("train", "train one agent; writes the curve CSV and checkpoint");
  add_common(train_cmd, train_c);

  auto* eval_cmd = app.add_subcommand("eval", "greedy evaluation of a checkpoint");
  add_common(eval_cmd, eval_c);
  eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file (default: derived from agent, delta, seed)");
  eval_cmd->add_option("--episodes", eval_episodes, "evaluation episodes");

  auto* flex_cmd = app.add_subcommand("probe-flex", "flexibility probe (single-agent taxi)");
  add_common(flex_cmd, flex_c);
  flex_cmd->add_option("--checkpoint", flex_ckpt, "checkpoint file");
  flex_cmd->add_option("--T", flex_T, "insertion step");
  flex_cmd->add_option("--episodes", flex_episodes, "probe episodes");

  auto* pred_cmd = app.add_subcommand("probe-pred", "predictability probe");
  add_common(pred_cmd, pred_c);
  pred_cmd->add_option("--checkpoint", pred_ckpt, "checkpoint file");
  pred_cmd->add_option("--episodes", pred_episodes, "probe episodes");

  auto* sd_cmd = app.add_subcommand("sweep-delta", "train dynamic agents over a list of deltas and seeds");
  add_common(sd_cmd, sd_c);
  sd_cmd->add_option("--deltas", deltas, "comma-separated deltas");

  auto* si_cmd = app.add_subcommand("sweep-interrupt", "train option agents and evaluate forced interrupts");
  add_common(si_cmd, si_c);
  si_cmd->add_option("--Ts", Ts, "comma-separated interrupt periods (0 = never)");
  si_cmd->add_option("--episodes", si_episodes, "evaluation episodes per period");

  auto* mx_cmd = app.add_subcommand("matrix", "train agent:delta cells over all seeds and summarize");
  add_common(mx_cmd, mx_c);
  mx_cmd->add_option("--cells", cells, "comma-separated agent[:delta] cells");

  auto* oc_cmd = app.add_subcommand("oracle-check", "tabular training checked against the exact operator");
  add_common(oc_cmd, oc_c);
  oc_cmd->add_option("--checkpoint", oc_ckpt, "check a saved tabular checkpoint instead of training");
  oc_cmd->add_option("--tol", oc_tol, "pass threshold on the residual");

  auto* gc_cmd = app.add_subcommand("grad-check", "dense backend gradients vs central differences");
  gc_cmd->add_option("--seed", gc_seed, "seed");
  gc_cmd->add_option("--networks", gc_networks, "networks");
  gc_cmd->add_option("--params", gc_params, "parameters per network");
  gc_cmd->add_option("--tol", gc_tol, "pass threshold on the relative error");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  try {
    if (train_cmd->parsed()) {
      ExperimentConfig cfg = effective(train_c);
      echo_config(cfg, "effective_" + run_stem(to_string(cfg.train.family.kind), cfg.train.family.delta,
                                              cfg.train.seed) + ".cfg");
      const auto curve = run_single(cfg.train, cfg.out_dir);
      const auto& last = curve.back();
      std::printf("episode %d mean_reward %.6f std_reward %.6f mean_terminations %.6f\n", last.episode,
                  last.mean_reward, last.std_reward, last.mean_terminations);
      return 0;
    }
    if (eval_cmd->parsed()) {
      const ExperimentConfig cfg = effective(eval_c);
      const auto q = checkpoint_for(cfg, eval_ckpt);
      const EvalSummary s = evaluate(Env(cfg.train.env), cfg.train, *q,
                                     eval_episodes.value_or(cfg.train.eval_episodes), cfg.train.seed);
      std::printf("mean_reward %.6f std_reward %.6f mean_terminations %.6f\n", s.mean_reward, s.std_reward,
                  s.mean_terminations);
      return 0;
    }
    if (flex_cmd->parsed()) {
      const ExperimentConfig cfg = effective(flex_c);
      const auto q = checkpoint_for(cfg, flex_ckpt);
      const ProbeReport r = flexibility_probe(cfg.train, *q, flex_T.value_or(cfg.flex_T),
                                              flex_episodes.value_or(cfg.probe_episodes), cfg.train.seed);
      std::filesystem::create_directories(cfg.out_dir);
      write_json(cfg.out_dir / ("probe_flex_" + run_stem(r.agent, r.delta, cfg.train.seed) + ".json"), r.to_json());
      std::printf("%s\n", r.to_json().dump().c_str());
      return 0;
    }
    if (pred_cmd->parsed()) {
      const ExperimentConfig cfg = effective(pred_c);
      const auto q = checkpoint_for(cfg, pred_ckpt);
      const ProbeReport r =
          predictability_probe(cfg.train, *q, pred_episodes.value_or(cfg.probe_episodes), cfg.train.seed);
      std::filesystem::create_directories(cfg.out_dir);
      write_json(cfg.out_dir / ("probe_pred_" + run_stem(r.agent, r.delta, cfg.train.seed) + ".json"), r.to_json());
      std::printf("%s\n", r.to_json().dump().c_str());
      return 0;
    }
    if (sd_cmd->parsed() || mx_cmd->parsed()) {
      const bool sweep = sd_cmd->parsed();
      ExperimentConfig cfg = effective(sweep ? sd_c : mx_c);
      std::vector<MatrixCell> list;
      if (sweep) {
        for (double d : parse_doubles(deltas)) list.push_back({cfg.train.family.kind, d});
        if (!cfg.train.family.is_dynamic()) list = {};
        if (list.empty()) throw std::invalid_argument("sweep-delta needs a dynamic agent family");
      } else {
        list = parse_cells(cells);
      }
      echo_config(cfg, sweep ? "effective_sweep_delta.cfg" : "effective_matrix.cfg");
      const auto rows = run_matrix(cfg, list);
      const std::string stem = sweep ? "sweep_delta" : "matrix";
      write_summary(cfg.out_dir / (stem + "_summary.csv"), rows);
      write_json(cfg.out_dir / (stem + "_summary.json"), summary_json(rows));
      print_summary(rows);
      for (const auto& r : rows)
        if (!r.error.empty()) return 1;
      return 0;
    }
    if (si_cmd->parsed()) {
      ExperimentConfig cfg = effective(si_c);
      cfg.train.family.kind = AgentKind::OptionTerm;
      echo_config(cfg, "effective_sweep_interrupt.cfg");
      const MatrixCell cell{AgentKind::OptionTerm, cfg.train.family.delta};
      const auto rows = run_matrix(cfg, std::span<const MatrixCell>(&cell, 1));
      if (!rows[0].error.empty()) throw std::runtime_error(rows[0].error);
      std::vector<std::unique_ptr<QFunction>> owned;
      std::vector<const QFunction*> qs;
      for (auto s : cfg.seeds) {
        owned.push_back(load_checkpoint(cfg.out_dir / checkpoint_name("option", cfg.train.family.delta, s)));
        qs.push_back(owned.back().get());
      }
      const auto periods = parse_ints(Ts);
      const auto points = interrupt_sweep(cfg.train, qs, periods, si_episodes.value_or(cfg.train.eval_episodes),
                                          cfg.train.seed);
      const auto path = cfg.out_dir / "sweep_interrupt.csv";
      std::ofstream out(path, std::ios::binary);
      if (!out) throw std::runtime_error("cannot write " + path.string());
      out << "T,mean_reward,std_reward,mean_terminations\n";
      for (const auto& p : points) {
        char line[160];
        std::snprintf(line, sizeof line, "%d,%.17g,%.17g,%.17g\n", p.T, p.mean_reward, p.std_reward,
                      p.mean_terminations);
        out << line;
        std::printf("T=%d mean_reward %.4f std %.4f terminations %.4f\n", p.T, p.mean_reward, p.std_reward,
                    p.mean_terminations);
      }
      return 0;
    }
    if (oc_cmd->parsed()) {
      ExperimentConfig cfg = effective(oc_c);
      if (!cfg.train.family.is_dynamic()) cfg.train.family.kind = AgentKind::DynamicTerm;
      double residual;
      if (oc_ckpt.empty()) {
        residual = run_oracle_check(cfg.train);
      } else {
        const auto q = load_checkpoint(oc_ckpt);
        const oracle::EnumeratedMDP mdp(cfg.train.env, cfg.train.option_radius, cfg.train.gamma);
        residual = oracle::dynamic_residual(mdp, *q, cfg.train.family.delta,
                                            cfg.train.family.force_reselect_at_subgoal);
      }
      std::printf("max Bellman residual %.6e (delta %s)\n", residual, format_delta(cfg.train.family.delta).c_str());
      return residual < oc_tol ? 0 : 1;
    }
    if (gc_cmd->parsed()) {
      const double err = run_grad_check(gc_seed, gc_networks, gc_params);
      std::printf("max relative gradient error %.3e over %d networks x %d parameters\n", err, gc_networks,
                  gc_params);
      return err < gc_tol ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 2;
}

}  // namespace mahrl
