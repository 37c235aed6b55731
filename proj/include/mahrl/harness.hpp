#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mahrl/learning.hpp"
#include "mahrl/metrics.hpp"

namespace mahrl {

struct ExperimentConfig {
  TrainConfig train;
  /// Seeds used by matrix runs and sweeps; `train.seed` is the single-run seed.
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::filesystem::path out_dir = "out";
  /// Parallel workers for matrix runs; 0 picks the hardware concurrency.
  int workers = 0;
  int flex_T = 10;
  int probe_episodes = 200;
};

/// Flat `key = value` text. Blank lines and `#` comments are ignored; unknown
/// keys, duplicate keys and malformed values throw std::invalid_argument with
/// the line number.
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies one `key=value` assignment on top of an existing config.
void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value);
/// Every key, in a fixed order, at full precision. parse_config(to_text(c))
/// reproduces c.
std::string config_to_text(const ExperimentConfig& config);
std::vector<std::string> config_keys();

inline constexpr const char* kCurveHeader =
    "episode,seed,agent,delta,mean_reward,std_reward,mean_terminations";

/// %.17g doubles, LF line endings. Throws std::runtime_error naming the path.
void write_curve(const std::filesystem::path& path, std::span<const CurveRow> rows);
std::vector<CurveRow> read_curve(const std::filesystem::path& path);

std::string format_delta(double delta);
/// `<agent>_<delta>_<seed>.ckpt`
std::string checkpoint_name(const std::string& agent, double delta, std::uint64_t seed);
std::string run_stem(const std::string& agent, double delta, std::uint64_t seed);

/// Trains one (family, seed) run and writes its curve CSV and checkpoint
/// under `out_dir`. Returns the curve.
std::vector<CurveRow> run_single(const TrainConfig& config, const std::filesystem::path& out_dir);

struct MatrixCell {
  AgentKind kind = AgentKind::DynamicTerm;
  double delta = 0.0;
};

struct SummaryRow {
  std::string agent;
  double delta = 0.0;
  int seeds = 0;
  double mean_reward = 0.0;
  /// Across seeds of the final evaluation means.
  double std_reward = 0.0;
  double mean_terminations = 0.0;
  double std_terminations = 0.0;
  std::vector<double> seed_rewards;
  std::vector<double> seed_terminations;
  /// Non-empty when a run of this cell failed.
  std::string error;
};

/// Trains every cell over every seed (in parallel workers), writes each run's
/// curve and checkpoint, and returns one summary row per cell in input order.
/// A failing run is reported in its row; the other cells still run.
std::vector<SummaryRow> run_matrix(const ExperimentConfig& config, std::span<const MatrixCell> cells);

void write_summary(const std::filesystem::path& path, std::span<const SummaryRow> rows);
nlohmann::json summary_json(std::span<const SummaryRow> rows);

/// Runs fn(i) for i in [0, n) on up to `workers` threads (0 = hardware
/// concurrency).
void parallel_for(int n, int workers, const std::function<void(int)>& fn);

/// Largest relative gradient error over `networks` seeded dense networks and
/// `params` sampled parameters each.
double run_grad_check(std::uint64_t seed, int networks = 5, int params = 20);

/// Trains the tabular backend described by `config` and returns the sup-norm
/// residual of the dynamic-termination operator on the trained table.
double run_oracle_check(const TrainConfig& config);

/// Command-line entry point. Returns the process exit code.
int cli(int argc, char** argv);

}  // namespace mahrl
