// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.
//
//   acceptance [--out DIR] [--workers N]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mahrl/harness.hpp"
#include "mahrl/oracle.hpp"

using namespace mahrl;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(MAHRL_SOURCE_DIR) / "configs";

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  std::printf("criterion %d %s: %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ExperimentConfig load(const std::string& name, const fs::path& out, int workers) {
  ExperimentConfig c = load_config(kConfigs / name);
  c.out_dir = out;
  c.workers = workers;
  return c;
}

std::map<std::string, SummaryRow> matrix(const ExperimentConfig& c, const std::vector<MatrixCell>& cells) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = run_matrix(c, cells);
  std::printf("  matrix %s (%.0f s)\n", c.out_dir.filename().string().c_str(), seconds_since(t0));
  std::map<std::string, SummaryRow> out;
  for (const auto& r : rows) {
    std::printf("    %-10s delta %-5s reward %.4f +- %.4f  terminations %.4f +- %.4f%s\n", r.agent.c_str(),
                format_delta(r.delta).c_str(), r.mean_reward, r.std_reward, r.mean_terminations,
                r.std_terminations, r.error.empty() ? "" : ("  error: " + r.error).c_str());
    out[r.agent + ":" + format_delta(r.delta)] = r;
  }
  return out;
}

bool all_ok(const std::map<std::string, SummaryRow>& rows) {
  return std::all_of(rows.begin(), rows.end(), [](const auto& kv) { return kv.second.error.empty(); });
}

// --- 1: tabular dynamic training reaches the exact fixed point -------------

void criterion_1(const fs::path& out, int workers) {
  ExperimentConfig c = load("taxi_3x3.cfg", out, workers);
  bool pass = true;
  std::string detail;
  for (double delta : {0.0, 0.1}) {
    c.train.family.kind = AgentKind::DynamicTerm;
    c.train.family.delta = delta;
    const auto t0 = std::chrono::steady_clock::now();
    const double residual = run_oracle_check(c.train);
    const double secs = seconds_since(t0);
    pass = pass && residual < 1e-3 && secs < 60.0;
    detail += "delta " + format_delta(delta) + " residual " + fmt("%.2e", residual) + " in " + fmt("%.2f", secs) + " s; ";
  }
  report(1, pass, detail + "need residual < 1e-3 and < 60 s");
}

// --- 2: zero price reproduces greedy termination -----------------------------

int effective_option(const Decision& d, int current) { return d.switch_option ? d.option : current; }

void criterion_2(const fs::path& out, int workers) {
  AgentFamily greedy;
  greedy.kind = AgentKind::GreedyTerm;
  AgentFamily dyn;
  dyn.kind = AgentKind::DynamicTerm;
  dyn.delta = 0.0;

  int mismatches = 0;
  int cases = 0;
  Rng rng(20240611);
  const int n = 8;
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> q(n + 1);
    // Coarse values so that ties occur.
    for (int o = 0; o < n; ++o) q[static_cast<std::size_t>(o)] = rng.below(5) * 0.25;
    q[n] = termination_target(q, 0.0);
    const int current = rng.below(n);
    ++cases;
    mismatches += effective_option(decide(greedy, q, current, false), current) !=
                  effective_option(decide(dyn, q, current, false), current);
  }

  ExperimentConfig c = load("taxi_3x3.cfg", out, workers);
  const oracle::EnumeratedMDP mdp(c.train.env, c.train.option_radius, c.train.gamma);
  const oracle::QTable table = oracle::vi_dynamic(mdp, 0.0);
  const int n_o = mdp.n_options();
  for (std::size_t s = 0; s < mdp.size(); ++s) {
    std::vector<double> q(static_cast<std::size_t>(n_o) + 1);
    for (int o = 0; o <= n_o; ++o) q[static_cast<std::size_t>(o)] = table.at(s, o);
    for (int current = 0; current < n_o; ++current) {
      ++cases;
      mismatches += effective_option(decide(greedy, q, current, false), current) !=
                    effective_option(decide(dyn, q, current, false), current);
    }
  }
  report(2, mismatches == 0,
         std::to_string(mismatches) + " mismatches over " + std::to_string(cases) + " decisions");
}

// --- 3 and 4 (taxi part) -----------------------------------------------------

const std::vector<double> kDeltas{0.0, 0.05, 0.1, 0.2, 0.5};

void criterion_3(const std::map<std::string, SummaryRow>& rows) {
  std::vector<const SummaryRow*> seq;
  for (double d : kDeltas) seq.push_back(&rows.at("dynamic:" + format_delta(d)));
  int violations = 0;
  bool within = true;
  std::string detail = "mean terminations";
  for (std::size_t i = 0; i < seq.size(); ++i) {
    detail += " " + fmt("%.3f", seq[i]->mean_terminations);
    if (i == 0) continue;
    const double rise = seq[i]->mean_terminations - seq[i - 1]->mean_terminations;
    if (rise > 0.0) {
      ++violations;
      within = within && rise <= std::max(seq[i]->std_terminations, seq[i - 1]->std_terminations);
    }
  }
  const bool pass = all_ok(rows) && (violations == 0 || (violations == 1 && within));
  report(3, pass, detail + " over delta 0,0.05,0.1,0.2,0.5; " + std::to_string(violations) + " increases");
}

bool ordering(const std::map<std::string, SummaryRow>& rows, std::string& detail) {
  const double d = rows.at("dynamic:0.1").mean_reward;
  const double g = rows.at("greedy:0").mean_reward;
  const double o = rows.at("option:0").mean_reward;
  detail += "dynamic " + fmt("%.4f", d) + " greedy " + fmt("%.4f", g) + " option " + fmt("%.4f", o);
  return all_ok(rows) && d >= g && g >= o;
}

// --- 5: communication against independent learners -------------------------

void criterion_5(const std::map<std::string, SummaryRow>& rows) {
  const SummaryRow& d = rows.at("dynamic:0.1");
  const SummaryRow& i = rows.at("iql_greedy:0");
  const double sd = std::max(d.std_reward, i.std_reward);
  const bool pass = all_ok(rows) && d.mean_reward - i.mean_reward > sd;
  report(5, pass,
         "dynamic " + fmt("%.4f", d.mean_reward) + " iql_greedy " + fmt("%.4f", i.mean_reward) +
             " gap " + fmt("%.4f", d.mean_reward - i.mean_reward) + " vs std " + fmt("%.4f", sd));
}

// --- 6: gradients -------------------------------------------------------------

void criterion_6() {
  const auto t0 = std::chrono::steady_clock::now();
  const double err = run_grad_check(7, 5, 20);
  const double secs = seconds_since(t0);
  report(6, err < 1e-4 && secs < 10.0,
         "max relative error " + fmt("%.2e", err) + " in " + fmt("%.2f", secs) + " s over 5 networks x 20 parameters");
}

// --- 7: one-step broadcast delay ----------------------------------------------

void criterion_7(const ExperimentConfig& c) {
  const auto q = load_checkpoint(c.out_dir / checkpoint_name("dynamic", 0.1, c.seeds.front()));
  TrainConfig cfg = c.train;
  cfg.family.kind = AgentKind::DynamicTerm;
  cfg.family.delta = 0.1;
  const Env env(cfg.env);
  const EpisodeContext ctx{env, cfg, *q};
  long same_step = 0;
  long views = 0;
  long announcements = 0;
  for (int i = 0; i < 100; ++i) {
    const EpisodeRecord rec = run_episode(ctx, Mode::Eval, eval_episode_seed(99, i), nullptr, 0.0);
    announcements += static_cast<long>(rec.broadcasts.size());
    for (const ViewAudit& v : rec.view_audit) {
      ++views;
      same_step += v.latest_announcement >= v.t;
    }
  }
  report(7, same_step == 0 && announcements > 0,
         std::to_string(same_step) + " of " + std::to_string(views) + " views hold a same-step announcement (" +
             std::to_string(announcements) + " announcements)");
}

// --- 8: consistency sets --------------------------------------------------------

void criterion_8() {
  Rng rng(8);
  const int sizes[3] = {5, 8, 19};
  int mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    const int size = sizes[i % 3];
    const GridDims dims{size, size};
    const int radius = 1 + rng.below(3);
    const Cell cell{rng.below(size), rng.below(size)};
    const Action a = kAllActions[static_cast<std::size_t>(rng.below(5))];
    std::vector<int> brute;
    for (const OptionId& id : options::option_set(radius))
      if (options::policy_action(options::bind(id, cell, dims), cell) == a) brute.push_back(id.index);
    const std::vector<int> fast = options::consistent_options(cell, a, radius, dims);
    const options::ConsistencyTable table(radius, dims);
    mismatches += fast != brute || table.at(cell, a) != brute;
  }
  report(8, mismatches == 0, std::to_string(mismatches) + " mismatches over 1000 random pairs");
}

// --- 9: flexibility and predictability ------------------------------------------

void criterion_9(const ExperimentConfig& taxi, const fs::path& out, int workers) {
  const ExperimentConfig c = load("taxi_8x8_1a5p.cfg", out / "probe", workers);
  const std::vector<MatrixCell> cells{{AgentKind::DynamicTerm, 0.1}, {AgentKind::GreedyTerm, 0.0},
                                      {AgentKind::OptionTerm, 0.0}};
  const auto rows = matrix(c, cells);
  if (!all_ok(rows)) {
    report(9, false, "training failed");
    return;
  }
  // Flexibility needs a single agent; predictability uses the two-taxi runs.
  std::map<std::string, double> rate;
  std::map<std::string, double> far;
  for (const MatrixCell& cell : cells) {
    const std::string agent = to_string(cell.kind);
    TrainConfig cfg = c.train;
    cfg.family.kind = cell.kind;
    cfg.family.delta = cell.delta;
    for (auto seed : c.seeds) {
      const auto q = load_checkpoint(c.out_dir / checkpoint_name(agent, cell.delta, seed));
      const ProbeReport flex = flexibility_probe(cfg, *q, c.flex_T, c.probe_episodes, seed);
      rate[agent] += flex.switch_rate_at_T_plus_1 / static_cast<double>(c.seeds.size());
    }
    TrainConfig multi = taxi.train;
    multi.family = cfg.family;
    for (auto seed : taxi.seeds) {
      const auto q = load_checkpoint(taxi.out_dir / checkpoint_name(agent, cell.delta, seed));
      const ProbeReport pred = predictability_probe(multi, *q, c.probe_episodes, seed);
      far[agent] += pred.p_change_far / static_cast<double>(taxi.seeds.size());
    }
  }
  const bool flex_ok = rate["greedy"] >= rate["dynamic"] && rate["dynamic"] >= rate["option"];
  const bool pred_ok = far["dynamic"] <= far["greedy"];
  report(9, flex_ok && pred_ok,
         "switch rate greedy " + fmt("%.3f", rate["greedy"]) + " dynamic " + fmt("%.3f", rate["dynamic"]) +
             " option " + fmt("%.3f", rate["option"]) + "; p_change_far dynamic " + fmt("%.4f", far["dynamic"]) +
             " greedy " + fmt("%.4f", far["greedy"]));
}

}  // namespace

int main(int argc, char** argv) {
  fs::path out = fs::current_path() / "acceptance_out";
  int workers = 0;
  for (int i = 1; i + 1 < argc; i += 2) {
    if (std::strcmp(argv[i], "--out") == 0) {
      out = argv[i + 1];
    } else if (std::strcmp(argv[i], "--workers") == 0) {
      workers = std::atoi(argv[i + 1]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--out DIR] [--workers N]\n");
      return 2;
    }
  }

  try {
    criterion_1(out / "tabular", workers);
    criterion_2(out / "tabular", workers);

    const ExperimentConfig taxi = load("taxi_8x8_2a4p.cfg", out / "taxi", workers);
    std::vector<MatrixCell> taxi_cells;
    for (double d : kDeltas) taxi_cells.push_back({AgentKind::DynamicTerm, d});
    taxi_cells.push_back({AgentKind::GreedyTerm, 0.0});
    taxi_cells.push_back({AgentKind::OptionTerm, 0.0});
    const auto taxi_rows = matrix(taxi, taxi_cells);
    criterion_3(taxi_rows);

    const ExperimentConfig pursuit = load("pursuit_8x8_k2.cfg", out / "pursuit", workers);
    const std::vector<MatrixCell> pursuit_cells{{AgentKind::DynamicTerm, 0.1}, {AgentKind::GreedyTerm, 0.0},
                                                {AgentKind::OptionTerm, 0.0}, {AgentKind::IqlGreedy, 0.0}};
    const auto pursuit_rows = matrix(pursuit, pursuit_cells);
    std::string detail = "taxi: ";
    const bool taxi_ok = ordering(taxi_rows, detail);
    detail += "; pursuit: ";
    const bool pursuit_ok = ordering(pursuit_rows, detail);
    report(4, taxi_ok && pursuit_ok, detail);
    criterion_5(pursuit_rows);

    criterion_6();
    criterion_7(taxi);
    criterion_8();
    criterion_9(taxi, out, workers);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 2;
  }
  std::printf("criterion 10 SKIP: secondary plotting module is not built here\n");
  return failures == 0 ? 0 : 1;
}
