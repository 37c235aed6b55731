#include "mahrl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "mahrl/oracle.hpp"

namespace mahrl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) parts.push_back(trim(cur));
  return parts;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
T parse_number(const std::string& s) {
  T v{};
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) throw std::invalid_argument("malformed number '" + s + "'");
  return v;
}

double parse_double(const std::string& s) {
  if (s == "inf") return std::numeric_limits<double>::infinity();
  return parse_number<double>(s);
}

bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw std::invalid_argument("malformed boolean '" + s + "'");
}

template <typename T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  if (trim(s).empty()) return out;
  for (const auto& p : split(s, ',')) out.push_back(parse_number<T>(p));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field int_field(T TrainConfig::* m) {
  return {[m](ExperimentConfig& c, const std::string& v) { c.train.*m = parse_number<T>(v); },
          [m](const ExperimentConfig& c) { return std::to_string(c.train.*m); }};
}

Field double_field(double TrainConfig::* m) {
  return {[m](ExperimentConfig& c, const std::string& v) { c.train.*m = parse_double(v); },
          [m](const ExperimentConfig& c) { return fmt(c.train.*m); }};
}

template <typename T>
Field env_int(T EnvConfig::* m) {
  return {[m](ExperimentConfig& c, const std::string& v) { c.train.env.*m = parse_number<T>(v); },
          [m](const ExperimentConfig& c) { return std::to_string(c.train.env.*m); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"task",
       {[](ExperimentConfig& c, const std::string& v) { c.train.env.task = parse_task_kind(v); },
        [](const ExperimentConfig& c) { return to_string(c.train.env.task); }}},
      {"width", env_int(&EnvConfig::width)},
      {"height", env_int(&EnvConfig::height)},
      {"n_agents", env_int(&EnvConfig::n_agents)},
      {"n_targets", env_int(&EnvConfig::n_targets)},
      {"k_capture", env_int(&EnvConfig::k_capture)},
      {"capture_range", env_int(&EnvConfig::capture_range)},
      {"step_cost",
       {[](ExperimentConfig& c, const std::string& v) { c.train.env.step_cost = parse_double(v); },
        [](const ExperimentConfig& c) { return fmt(c.train.env.step_cost); }}},
      {"max_steps", env_int(&EnvConfig::max_steps)},
      {"prey_walk",
       {[](ExperimentConfig& c, const std::string& v) { c.train.env.prey_walk = parse_bool(v); },
        [](const ExperimentConfig& c) { return std::string(c.train.env.prey_walk ? "true" : "false"); }}},
      {"option_radius", int_field(&TrainConfig::option_radius)},
      {"agent",
       {[](ExperimentConfig& c, const std::string& v) { c.train.family.kind = parse_agent_kind(v); },
        [](const ExperimentConfig& c) { return to_string(c.train.family.kind); }}},
      {"delta",
       {[](ExperimentConfig& c, const std::string& v) { c.train.family.delta = parse_double(v); },
        [](const ExperimentConfig& c) { return fmt(c.train.family.delta); }}},
      {"force_reselect",
       {[](ExperimentConfig& c, const std::string& v) { c.train.family.force_reselect_at_subgoal = parse_bool(v); },
        [](const ExperimentConfig& c) {
          return std::string(c.train.family.force_reselect_at_subgoal ? "true" : "false");
        }}},
      {"interrupt_every",
       {[](ExperimentConfig& c, const std::string& v) { c.train.family.interrupt_every = parse_number<int>(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.train.family.interrupt_every); }}},
      {"backend",
       {[](ExperimentConfig& c, const std::string& v) {
          if (v != "tabular" && v != "dense") throw std::invalid_argument("backend must be tabular or dense");
          c.train.backend.kind = v;
        },
        [](const ExperimentConfig& c) { return c.train.backend.kind; }}},
      {"alpha",
       {[](ExperimentConfig& c, const std::string& v) { c.train.backend.alpha = parse_double(v); },
        [](const ExperimentConfig& c) { return fmt(c.train.backend.alpha); }}},
      {"learning_rate",
       {[](ExperimentConfig& c, const std::string& v) { c.train.backend.learning_rate = parse_double(v); },
        [](const ExperimentConfig& c) { return fmt(c.train.backend.learning_rate); }}},
      {"hidden",
       {[](ExperimentConfig& c, const std::string& v) { c.train.backend.hidden = parse_list<int>(v); },
        [](const ExperimentConfig& c) { return join(c.train.backend.hidden); }}},
      {"input_frame",
       {[](ExperimentConfig& c, const std::string& v) { c.train.backend.frame = parse_input_frame(v); },
        [](const ExperimentConfig& c) { return to_string(c.train.backend.frame); }}},
      {"gamma", double_field(&TrainConfig::gamma)},
      {"rho", double_field(&TrainConfig::rho)},
      {"eps_start", double_field(&TrainConfig::eps_start)},
      {"eps_end", double_field(&TrainConfig::eps_end)},
      {"eps_decay_fraction", double_field(&TrainConfig::eps_decay_fraction)},
      {"batch_size", int_field(&TrainConfig::batch_size)},
      {"episodes", int_field(&TrainConfig::episodes)},
      {"update_every", int_field(&TrainConfig::update_every)},
      {"replay_capacity", int_field(&TrainConfig::replay_capacity)},
      {"target_period", int_field(&TrainConfig::target_period)},
      {"eval_interval", int_field(&TrainConfig::eval_interval)},
      {"eval_episodes", int_field(&TrainConfig::eval_episodes)},
      {"seed", int_field(&TrainConfig::seed)},
      {"seeds",
       {[](ExperimentConfig& c, const std::string& v) {
          c.seeds = parse_list<std::uint64_t>(v);
          if (c.seeds.empty()) throw std::invalid_argument("seed list is empty");
        },
        [](const ExperimentConfig& c) { return join(c.seeds); }}},
      {"out",
       {[](ExperimentConfig& c, const std::string& v) { c.out_dir = v; },
        [](const ExperimentConfig& c) { return c.out_dir.string(); }}},
      {"workers",
       {[](ExperimentConfig& c, const std::string& v) { c.workers = parse_number<int>(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.workers); }}},
      {"flex_T",
       {[](ExperimentConfig& c, const std::string& v) { c.flex_T = parse_number<int>(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.flex_T); }}},
      {"probe_episodes",
       {[](ExperimentConfig& c, const std::string& v) { c.probe_episodes = parse_number<int>(v); },
        [](const ExperimentConfig& c) { return std::to_string(c.probe_episodes); }}},
  };
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return f;
  throw std::invalid_argument("unknown config key '" + key + "'");
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

void apply_setting(ExperimentConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw std::invalid_argument(where + "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw std::invalid_argument(where + "duplicate key '" + key + "'");
    try {
      apply_setting(c, key, value);
    } catch (const std::exception& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string config_to_text(const ExperimentConfig& config) {
  std::string s;
  for (const auto& [k, f] : fields()) s += k + " = " + f.get(config) + "\n";
  return s;
}

void write_curve(const std::filesystem::path& path, std::span<const CurveRow> rows) {
  auto out = open_out(path);
  out << kCurveHeader << '\n';
  for (const auto& r : rows)
    out << r.episode << ',' << r.seed << ',' << r.agent << ',' << fmt(r.delta) << ',' << fmt(r.mean_reward)
        << ',' << fmt(r.std_reward) << ',' << fmt(r.mean_terminations) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<CurveRow> read_curve(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kCurveHeader)
    throw std::runtime_error(path.string() + ": unexpected curve header");
  std::vector<CurveRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto p = split(line, ',');
    if (p.size() != 7) throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    CurveRow r;
    r.episode = parse_number<int>(p[0]);
    r.seed = parse_number<std::uint64_t>(p[1]);
    r.agent = p[2];
    r.delta = parse_double(p[3]);
    r.mean_reward = parse_double(p[4]);
    r.std_reward = parse_double(p[5]);
    r.mean_terminations = parse_double(p[6]);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string format_delta(double delta) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%g", delta);
  return buf;
}

std::string run_stem(const std::string& agent, double delta, std::uint64_t seed) {
  return agent + "_" + format_delta(delta) + "_" + std::to_string(seed);
}

std::string checkpoint_name(const std::string& agent, double delta, std::uint64_t seed) {
  return run_stem(agent, delta, seed) + ".ckpt";
}

std::vector<CurveRow> run_single(const TrainConfig& config, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  TrainResult r = train(config);
  const std::string agent = to_string(config.family.kind);
  write_curve(out_dir / (run_stem(agent, config.family.delta, config.seed) + ".csv"), r.curve);
  save_checkpoint(*r.q, out_dir / checkpoint_name(agent, config.family.delta, config.seed));
  return r.curve;
}

void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace

std::vector<SummaryRow> run_matrix(const ExperimentConfig& config, std::span<const MatrixCell> cells) {
  const int n_seeds = static_cast<int>(config.seeds.size());
  const int jobs = static_cast<int>(cells.size()) * n_seeds;
  std::vector<CurveRow> finals(static_cast<std::size_t>(jobs));
  std::vector<std::string> errors(static_cast<std::size_t>(jobs));

  parallel_for(jobs, config.workers, [&](int i) {
    const MatrixCell& cell = cells[static_cast<std::size_t>(i / n_seeds)];
    TrainConfig tc = config.train;
    tc.family.kind = cell.kind;
    tc.family.delta = cell.delta;
    tc.seed = config.seeds[static_cast<std::size_t>(i % n_seeds)];
    try {
      finals[static_cast<std::size_t>(i)] = run_single(tc, config.out_dir).back();
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(i)] = e.what();
    }
  });

  std::vector<SummaryRow> rows;
  for (std::size_t c = 0; c < cells.size(); ++c) {
    SummaryRow row;
    row.agent = to_string(cells[c].kind);
    row.delta = cells[c].delta;
    for (int s = 0; s < n_seeds; ++s) {
      const auto i = c * static_cast<std::size_t>(n_seeds) + static_cast<std::size_t>(s);
      if (!errors[i].empty()) {
        row.error += (row.error.empty() ? "" : "; ") + ("seed " + std::to_string(config.seeds[static_cast<std::size_t>(s)]) + ": " + errors[i]);
        continue;
      }
      row.seed_rewards.push_back(finals[i].mean_reward);
      row.seed_terminations.push_back(finals[i].mean_terminations);
    }
    row.seeds = static_cast<int>(row.seed_rewards.size());
    std::tie(row.mean_reward, row.std_reward) = mean_std(row.seed_rewards);
    std::tie(row.mean_terminations, row.std_terminations) = mean_std(row.seed_terminations);
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_summary(const std::filesystem::path& path, std::span<const SummaryRow> rows) {
  auto out = open_out(path);
  out << "agent,delta,seeds,mean_reward,std_reward,mean_terminations,std_terminations\n";
  for (const auto& r : rows)
    out << r.agent << ',' << fmt(r.delta) << ',' << r.seeds << ',' << fmt(r.mean_reward) << ','
        << fmt(r.std_reward) << ',' << fmt(r.mean_terminations) << ',' << fmt(r.std_terminations) << '\n';
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

nlohmann::json summary_json(std::span<const SummaryRow> rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows)
    j.push_back({{"agent", r.agent},
                 {"delta", r.delta},
                 {"seeds", r.seeds},
                 {"mean_reward", r.mean_reward},
                 {"std_reward", r.std_reward},
                 {"mean_terminations", r.mean_terminations},
                 {"std_terminations", r.std_terminations},
                 {"seed_rewards", r.seed_rewards},
                 {"seed_terminations", r.seed_terminations},
                 {"error", r.error}});
  return j;
}

}  // namespace mahrl
