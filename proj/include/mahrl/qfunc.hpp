#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mahrl/comms.hpp"
#include "mahrl/gridworld.hpp"

namespace mahrl {

/// Everything one agent conditions on at one step: the grid contents and the
/// delayed broadcast view. Both backends derive their input from this.
struct QInput {
  GridDims dims;
  int observer = 0;
  /// All agents by id, including the observer.
  std::vector<Cell> agents;
  /// Alive targets in target-index order.
  std::vector<Cell> targets;
  /// One entry per other agent (id order): its last broadcast destination.
  /// Empty when broadcasting is disabled.
  std::vector<std::optional<Cell>> view;

  Cell self() const { return agents[static_cast<std::size_t>(observer)]; }
  bool operator==(const QInput&) const = default;
};

QInput make_qinput(const GlobalState& state, GridDims dims, int agent, const DelayedView& view,
                   bool broadcast_enabled);

/// Same 4-channel encoding as Env::observation.
ObservationGrid to_observation(const QInput& input);

/// Sorted flat indices of the set cells of to_observation(input).
std::vector<int> active_inputs(const QInput& input);

/// Dense-network input encodings. Absolute is the 4-channel grid. Egocentric
/// keeps the one-hot own cell and re-centres the other three channels on the
/// observer in a (2W-1)x(2H-1) window, so that equal offsets share weights.
enum class InputFrame { Absolute, Egocentric };
std::string to_string(InputFrame f);
InputFrame parse_input_frame(const std::string& s);
int input_size(InputFrame f, GridDims dims);
std::vector<int> active_inputs(const QInput& input, InputFrame f);

/// Values for every option head followed by the termination head T.
using QOutput = std::vector<double>;

struct TdTarget {
  const QInput* input = nullptr;
  int head = 0;
  double target = 0.0;
};

/// Shared evaluation/update interface over (observation, others' options,
/// option or T).
class QFunction {
 public:
  virtual ~QFunction() = default;

  virtual std::string kind() const = 0;
  virtual int n_options() const = 0;
  int output_size() const { return n_options() + 1; }
  int termination_head() const { return n_options(); }

  virtual QOutput evaluate(const QInput& input) const = 0;

  /// Applies one update for the batch and returns the loss
  /// sum((Q - target)^2) / normalizer measured before the update.
  /// Throws std::invalid_argument on non-finite targets.
  virtual double apply_td_updates(std::span<const TdTarget> batch, double normalizer) = 0;
  double apply_td_updates(std::span<const TdTarget> batch) {
    return apply_td_updates(batch, static_cast<double>(batch.size()));
  }

  virtual std::unique_ptr<QFunction> clone() const = 0;
  virtual nlohmann::json to_json() const = 0;
};

/// Exact table keyed by (agent cells, alive target cells, view destinations,
/// observer). Missing keys read as the initial value.
class TabularQ final : public QFunction {
 public:
  TabularQ(int n_options, double alpha, double init = 0.0);

  std::string kind() const override { return "tabular"; }
  int n_options() const override { return n_options_; }
  QOutput evaluate(const QInput& input) const override;
  double apply_td_updates(std::span<const TdTarget> batch, double normalizer) override;
  using QFunction::apply_td_updates;
  std::unique_ptr<QFunction> clone() const override { return std::make_unique<TabularQ>(*this); }
  nlohmann::json to_json() const override;
  static TabularQ from_json(const nlohmann::json& j);

  double alpha() const { return alpha_; }
  std::size_t size() const { return table_.size(); }
  /// Direct write, used by tests and the oracle to install exact values.
  void set(const QInput& input, const QOutput& values);

  static std::string key(const QInput& input);

 private:
  int n_options_;
  double alpha_;
  double init_;
  std::unordered_map<std::string, QOutput> table_;
};

/// Fully connected network over the binary 4-channel observation: ReLU
/// hidden layers, identity output with one unit per option plus T.
/// Trained by plain SGD on the squared TD error.
class DenseQ final : public QFunction {
 public:
  struct Layer {
    int in = 0;
    int out = 0;
    /// in x out, row-major: weight(i, o) = w[i * out + o].
    std::vector<double> w;
    std::vector<double> b;
  };

  /// Uniform init in +-sqrt(6 / (fan_in + fan_out)), biases zero.
  DenseQ(GridDims dims, int n_options, std::vector<int> hidden, std::uint64_t seed,
         double learning_rate, InputFrame frame = InputFrame::Absolute);

  std::string kind() const override { return "dense"; }
  int n_options() const override { return n_options_; }
  QOutput evaluate(const QInput& input) const override;
  double apply_td_updates(std::span<const TdTarget> batch, double normalizer) override;
  using QFunction::apply_td_updates;
  std::unique_ptr<QFunction> clone() const override { return std::make_unique<DenseQ>(*this); }
  nlohmann::json to_json() const override;
  static DenseQ from_json(const nlohmann::json& j);

  GridDims dims() const { return dims_; }
  int input_size() const { return mahrl::input_size(frame_, dims_); }
  InputFrame frame() const { return frame_; }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }
  double learning_rate() const { return learning_rate_; }
  void set_learning_rate(double lr) { learning_rate_ = lr; }
  std::uint64_t seed() const { return seed_; }

  /// Flat parameter view: per layer, weights then biases.
  std::size_t parameter_count() const;
  double& parameter(std::size_t i);

  /// (Q_head(input) - target)^2 and its analytic gradient in flat order.
  double squared_error(const QInput& input, int head, double target) const;
  std::vector<double> gradient(const QInput& input, int head, double target) const;

 private:
  struct Activations {
    std::vector<int> active;
    /// Pre-activations per layer.
    std::vector<std::vector<double>> z;
  };

  void forward(const QInput& input, Activations& acts) const;
  /// Accumulates parameter gradients for output gradient `dout` into `grads`.
  void backward(const Activations& acts, std::vector<double> dout, std::vector<double>& grads) const;

  GridDims dims_;
  int n_options_;
  std::vector<int> hidden_;
  std::uint64_t seed_;
  double learning_rate_;
  InputFrame frame_;
  std::vector<Layer> layers_;
  std::vector<std::size_t> offsets_;
  std::vector<double> grads_;
};

/// Central-difference check of DenseQ gradients: perturbs `samples` randomly
/// chosen parameters by +-eps and returns the maximum relative error
/// |analytic - numeric| / max(|analytic|, |numeric|), falling back to the
/// absolute difference when both magnitudes are below 1e-8.
double gradient_check(DenseQ& net, const QInput& input, int head, double target, int samples,
                      std::uint64_t seed, double eps = 1e-5);

struct BackendConfig {
  std::string kind = "tabular";
  double alpha = 0.5;
  double learning_rate = 1e-3;
  std::vector<int> hidden{128, 128};
  InputFrame frame = InputFrame::Absolute;
};

std::unique_ptr<QFunction> make_backend(const BackendConfig& config, GridDims dims, int n_options,
                                        std::uint64_t seed);

/// Frozen copy for computing TD targets.
std::shared_ptr<const QFunction> sync_target(const QFunction& q);

void save_checkpoint(const QFunction& q, const std::filesystem::path& path);
std::unique_ptr<QFunction> load_checkpoint(const std::filesystem::path& path);
std::unique_ptr<QFunction> backend_from_json(const nlohmann::json& j);

}  // namespace mahrl
