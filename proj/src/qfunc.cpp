#include "mahrl/qfunc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "mahrl/rng.hpp"

namespace mahrl {

QInput make_qinput(const GlobalState& state, GridDims dims, int agent, const DelayedView& view,
                   bool broadcast_enabled) {
  QInput in;
  in.dims = dims;
  in.observer = agent;
  in.agents = state.agents;
  for (const auto& t : state.targets)
    if (t.alive) in.targets.push_back(t.cell);
  if (broadcast_enabled) {
    in.view.reserve(view.size());
    for (const auto& e : view)
      in.view.push_back(e.option ? std::optional<Cell>(e.option->subgoal) : std::nullopt);
  }
  return in;
}

std::vector<int> active_inputs(const QInput& input) {
  const int plane = input.dims.cells();
  std::vector<int> idx;
  idx.reserve(input.agents.size() + input.targets.size() + input.view.size());
  idx.push_back(input.dims.index(input.self()));
  for (const Cell c : input.targets) idx.push_back(plane + input.dims.index(c));
  for (std::size_t j = 0; j < input.agents.size(); ++j)
    if (static_cast<int>(j) != input.observer) idx.push_back(2 * plane + input.dims.index(input.agents[j]));
  for (const auto& d : input.view)
    if (d) idx.push_back(3 * plane + input.dims.index(*d));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

std::string to_string(InputFrame f) { return f == InputFrame::Absolute ? "absolute" : "egocentric"; }

InputFrame parse_input_frame(const std::string& s) {
  if (s == "absolute") return InputFrame::Absolute;
  if (s == "egocentric") return InputFrame::Egocentric;
  throw std::invalid_argument("unknown input frame '" + s + "'");
}

int input_size(InputFrame f, GridDims dims) {
  if (f == InputFrame::Absolute) return ObservationGrid::kChannels * dims.cells();
  return dims.cells() + 3 * (2 * dims.width - 1) * (2 * dims.height - 1);
}

std::vector<int> active_inputs(const QInput& input, InputFrame f) {
  if (f == InputFrame::Absolute) return active_inputs(input);
  const GridDims d = input.dims;
  const int span_w = 2 * d.width - 1;
  const int plane = span_w * (2 * d.height - 1);
  const Cell self = input.self();
  auto rel = [&](int channel, Cell c) {
    return d.cells() + channel * plane + (c.y - self.y + d.height - 1) * span_w + (c.x - self.x + d.width - 1);
  };
  std::vector<int> idx;
  idx.push_back(d.index(self));
  for (const Cell c : input.targets) idx.push_back(rel(0, c));
  for (std::size_t j = 0; j < input.agents.size(); ++j)
    if (static_cast<int>(j) != input.observer) idx.push_back(rel(1, input.agents[j]));
  for (const auto& dst : input.view)
    if (dst) idx.push_back(rel(2, *dst));
  std::sort(idx.begin(), idx.end());
  idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
  return idx;
}

ObservationGrid to_observation(const QInput& input) {
  ObservationGrid g;
  g.width = input.dims.width;
  g.height = input.dims.height;
  g.data.assign(static_cast<std::size_t>(ObservationGrid::kChannels * input.dims.cells()), 0);
  for (int i : active_inputs(input)) g.data[static_cast<std::size_t>(i)] = 1;
  return g;
}

namespace {

void check_finite(std::span<const TdTarget> batch) {
  for (const auto& t : batch)
    if (!std::isfinite(t.target)) throw std::invalid_argument("non-finite TD target");
}

void check_head(const TdTarget& t, int output_size) {
  if (t.input == nullptr) throw std::invalid_argument("TD target without input");
  if (t.head < 0 || t.head >= output_size) throw std::out_of_range("TD target head out of range");
}

std::string to_hex(const std::string& bytes) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(kDigits[c >> 4]);
    out.push_back(kDigits[c & 15]);
  }
  return out;
}

std::string from_hex(const std::string& hex) {
  if (hex.size() % 2 != 0) throw std::invalid_argument("malformed table key");
  auto nibble = [](char c) -> int {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    throw std::invalid_argument("malformed table key");
  };
  std::string out(hex.size() / 2, '\0');
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<char>(nibble(hex[2 * i]) * 16 + nibble(hex[2 * i + 1]));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// TabularQ

TabularQ::TabularQ(int n_options, double alpha, double init)
    : n_options_(n_options), alpha_(alpha), init_(init) {
  if (n_options < 1) throw std::invalid_argument("tabular backend needs at least one option");
}

std::string TabularQ::key(const QInput& input) {
  // Fixed-width little-endian 16-bit fields; sections are length-prefixed.
  std::string k;
  auto put = [&k](int v) {
    k.push_back(static_cast<char>(v & 0xff));
    k.push_back(static_cast<char>((v >> 8) & 0xff));
  };
  put(input.observer);
  put(static_cast<int>(input.agents.size()));
  for (const Cell c : input.agents) put(input.dims.index(c));
  std::vector<int> targets;
  for (const Cell c : input.targets) targets.push_back(input.dims.index(c));
  std::sort(targets.begin(), targets.end());
  put(static_cast<int>(targets.size()));
  for (int t : targets) put(t);
  put(static_cast<int>(input.view.size()));
  for (const auto& d : input.view) put(d ? input.dims.index(*d) : 0xffff);
  return k;
}

QOutput TabularQ::evaluate(const QInput& input) const {
  const auto it = table_.find(key(input));
  if (it == table_.end()) return QOutput(static_cast<std::size_t>(output_size()), init_);
  return it->second;
}

void TabularQ::set(const QInput& input, const QOutput& values) {
  if (static_cast<int>(values.size()) != output_size())
    throw std::invalid_argument("value vector has the wrong length");
  table_[key(input)] = values;
}

double TabularQ::apply_td_updates(std::span<const TdTarget> batch, double normalizer) {
  check_finite(batch);
  double loss = 0.0;
  for (const auto& t : batch) {
    check_head(t, output_size());
    auto [it, inserted] = table_.try_emplace(key(*t.input));
    if (inserted) it->second.assign(static_cast<std::size_t>(output_size()), init_);
    double& v = it->second[static_cast<std::size_t>(t.head)];
    const double err = t.target - v;
    loss += err * err;
    v += alpha_ * err;
  }
  return normalizer > 0.0 ? loss / normalizer : 0.0;
}

nlohmann::json TabularQ::to_json() const {
  // Sorted keys so that identical tables serialize identically.
  std::vector<std::string> keys;
  keys.reserve(table_.size());
  for (const auto& [k, v] : table_) keys.push_back(k);
  std::sort(keys.begin(), keys.end());
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& k : keys) entries.push_back({{"key", to_hex(k)}, {"values", table_.at(k)}});
  return {{"kind", "tabular"},
          {"n_options", n_options_},
          {"alpha", alpha_},
          {"init", init_},
          {"entries", std::move(entries)}};
}

TabularQ TabularQ::from_json(const nlohmann::json& j) {
  TabularQ q(j.at("n_options").get<int>(), j.at("alpha").get<double>(), j.at("init").get<double>());
  for (const auto& e : j.at("entries")) {
    auto values = e.at("values").get<QOutput>();
    if (static_cast<int>(values.size()) != q.output_size())
      throw std::invalid_argument("tabular checkpoint entry has the wrong length");
    q.table_.emplace(from_hex(e.at("key").get<std::string>()), std::move(values));
  }
  return q;
}

// ---------------------------------------------------------------------------
// DenseQ

DenseQ::DenseQ(GridDims dims, int n_options, std::vector<int> hidden, std::uint64_t seed,
               double learning_rate, InputFrame frame)
    : dims_(dims), n_options_(n_options), hidden_(std::move(hidden)), seed_(seed),
      learning_rate_(learning_rate), frame_(frame) {
  if (n_options < 1) throw std::invalid_argument("dense backend needs at least one option");
  std::vector<int> widths{input_size()};
  for (int h : hidden_) {
    if (h < 1) throw std::invalid_argument("hidden layer widths must be positive");
    widths.push_back(h);
  }
  widths.push_back(output_size());

  Rng rng(seed);
  std::size_t offset = 0;
  for (std::size_t k = 0; k + 1 < widths.size(); ++k) {
    Layer layer;
    layer.in = widths[k];
    layer.out = widths[k + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(layer.in + layer.out));
    layer.w.resize(static_cast<std::size_t>(layer.in) * static_cast<std::size_t>(layer.out));
    for (double& w : layer.w) w = rng.uniform(-bound, bound);
    layer.b.assign(static_cast<std::size_t>(layer.out), 0.0);
    offsets_.push_back(offset);
    offset += layer.w.size() + layer.b.size();
    layers_.push_back(std::move(layer));
  }
  grads_.assign(offset, 0.0);
}

std::size_t DenseQ::parameter_count() const { return grads_.size(); }

double& DenseQ::parameter(std::size_t i) {
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (i >= offsets_[k]) {
      const std::size_t local = i - offsets_[k];
      Layer& l = layers_[k];
      return local < l.w.size() ? l.w[local] : l.b.at(local - l.w.size());
    }
  }
  throw std::out_of_range("parameter index out of range");
}

void DenseQ::forward(const QInput& input, Activations& acts) const {
  acts.active = active_inputs(input, frame_);
  acts.z.resize(layers_.size());
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const Layer& l = layers_[k];
    auto& z = acts.z[k];
    z = l.b;
    double* zp = z.data();
    const auto out = static_cast<std::size_t>(l.out);
    if (k == 0) {
      for (int i : acts.active) {
        const double* row = l.w.data() + static_cast<std::size_t>(i) * out;
        for (std::size_t o = 0; o < out; ++o) zp[o] += row[o];
      }
    } else {
      const auto& prev = acts.z[k - 1];
      for (std::size_t i = 0; i < static_cast<std::size_t>(l.in); ++i) {
        const double a = prev[i] > 0.0 ? prev[i] : 0.0;
        if (a == 0.0) continue;
        const double* row = l.w.data() + i * out;
        for (std::size_t o = 0; o < out; ++o) zp[o] += a * row[o];
      }
    }
  }
}

void DenseQ::backward(const Activations& acts, std::vector<double> dz,
                      std::vector<double>& grads) const {
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Layer& l = layers_[k];
    const auto out = static_cast<std::size_t>(l.out);
    double* gw = grads.data() + offsets_[k];
    double* gb = gw + l.w.size();
    for (std::size_t o = 0; o < out; ++o) gb[o] += dz[o];
    if (k == 0) {
      for (int i : acts.active) {
        double* row = gw + static_cast<std::size_t>(i) * out;
        for (std::size_t o = 0; o < out; ++o) row[o] += dz[o];
      }
      break;
    }
    const auto& prev = acts.z[k - 1];
    std::vector<double> dprev(static_cast<std::size_t>(l.in), 0.0);
    for (std::size_t i = 0; i < static_cast<std::size_t>(l.in); ++i) {
      if (prev[i] <= 0.0) continue;
      const double a = prev[i];
      const double* wrow = l.w.data() + i * out;
      double* grow = gw + i * out;
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) {
        grow[o] += a * dz[o];
        acc += wrow[o] * dz[o];
      }
      dprev[i] = acc;
    }
    dz = std::move(dprev);
  }
}

QOutput DenseQ::evaluate(const QInput& input) const {
  if (input.dims != dims_) throw std::invalid_argument("input grid does not match the network");
  Activations acts;
  forward(input, acts);
  return std::move(acts.z.back());
}

double DenseQ::apply_td_updates(std::span<const TdTarget> batch, double normalizer) {
  check_finite(batch);
  if (batch.empty() || normalizer <= 0.0) return 0.0;
  std::fill(grads_.begin(), grads_.end(), 0.0);
  double loss = 0.0;
  Activations acts;
  std::vector<double> dout(static_cast<std::size_t>(output_size()));
  // Consecutive targets on the same input share one forward/backward pass.
  for (std::size_t i = 0; i < batch.size();) {
    check_head(batch[i], output_size());
    const QInput* input = batch[i].input;
    if (input->dims != dims_) throw std::invalid_argument("input grid does not match the network");
    forward(*input, acts);
    const auto& q = acts.z.back();
    std::fill(dout.begin(), dout.end(), 0.0);
    for (; i < batch.size() && batch[i].input == input; ++i) {
      check_head(batch[i], output_size());
      const auto h = static_cast<std::size_t>(batch[i].head);
      const double err = q[h] - batch[i].target;
      loss += err * err;
      dout[h] += 2.0 * err / normalizer;
    }
    backward(acts, dout, grads_);
  }
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    Layer& l = layers_[k];
    const double* g = grads_.data() + offsets_[k];
    for (double& w : l.w) w -= learning_rate_ * *g++;
    for (double& b : l.b) b -= learning_rate_ * *g++;
  }
  return loss / normalizer;
}

double DenseQ::squared_error(const QInput& input, int head, double target) const {
  const double err = evaluate(input).at(static_cast<std::size_t>(head)) - target;
  return err * err;
}

std::vector<double> DenseQ::gradient(const QInput& input, int head, double target) const {
  Activations acts;
  forward(input, acts);
  std::vector<double> dout(static_cast<std::size_t>(output_size()), 0.0);
  dout.at(static_cast<std::size_t>(head)) = 2.0 * (acts.z.back()[static_cast<std::size_t>(head)] - target);
  std::vector<double> grads(parameter_count(), 0.0);
  backward(acts, dout, grads);
  return grads;
}

nlohmann::json DenseQ::to_json() const {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : layers_) layers.push_back({{"in", l.in}, {"out", l.out}, {"w", l.w}, {"b", l.b}});
  return {{"kind", "dense"},
          {"width", dims_.width},
          {"height", dims_.height},
          {"n_options", n_options_},
          {"hidden", hidden_},
          {"seed", seed_},
          {"learning_rate", learning_rate_},
          {"frame", to_string(frame_)},
          {"layers", std::move(layers)}};
}

DenseQ DenseQ::from_json(const nlohmann::json& j) {
  DenseQ q({j.at("width").get<int>(), j.at("height").get<int>()}, j.at("n_options").get<int>(),
           j.at("hidden").get<std::vector<int>>(), j.at("seed").get<std::uint64_t>(),
           j.at("learning_rate").get<double>(),
           parse_input_frame(j.value("frame", std::string("absolute"))));
  const auto& layers = j.at("layers");
  if (layers.size() != q.layers_.size()) throw std::invalid_argument("dense checkpoint layer count mismatch");
  for (std::size_t k = 0; k < q.layers_.size(); ++k) {
    auto& l = q.layers_[k];
    auto w = layers[k].at("w").get<std::vector<double>>();
    auto b = layers[k].at("b").get<std::vector<double>>();
    if (layers[k].at("in").get<int>() != l.in || layers[k].at("out").get<int>() != l.out ||
        w.size() != l.w.size() || b.size() != l.b.size())
      throw std::invalid_argument("dense checkpoint shape mismatch");
    l.w = std::move(w);
    l.b = std::move(b);
  }
  return q;
}

double gradient_check(DenseQ& net, const QInput& input, int head, double target, int samples,
                      std::uint64_t seed, double eps) {
  const auto analytic = net.gradient(input, head, target);
  Rng rng(seed);
  double worst = 0.0;
  for (int s = 0; s < samples; ++s) {
    const auto i = static_cast<std::size_t>(rng.below(static_cast<int>(net.parameter_count())));
    double& p = net.parameter(i);
    const double saved = p;
    p = saved + eps;
    const double up = net.squared_error(input, head, target);
    p = saved - eps;
    const double down = net.squared_error(input, head, target);
    p = saved;
    const double numeric = (up - down) / (2.0 * eps);
    const double scale = std::max(std::abs(analytic[i]), std::abs(numeric));
    const double diff = std::abs(analytic[i] - numeric);
    worst = std::max(worst, scale < 1e-8 ? diff : diff / scale);
  }
  return worst;
}

// ---------------------------------------------------------------------------

std::unique_ptr<QFunction> make_backend(const BackendConfig& config, GridDims dims, int n_options,
                                        std::uint64_t seed) {
  if (config.kind == "tabular") return std::make_unique<TabularQ>(n_options, config.alpha);
  if (config.kind == "dense")
    return std::make_unique<DenseQ>(dims, n_options, config.hidden, seed, config.learning_rate, config.frame);
  throw std::invalid_argument("unknown backend kind '" + config.kind + "'");
}

std::shared_ptr<const QFunction> sync_target(const QFunction& q) { return q.clone(); }

std::unique_ptr<QFunction> backend_from_json(const nlohmann::json& j) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "tabular") return std::make_unique<TabularQ>(TabularQ::from_json(j));
  if (kind == "dense") return std::make_unique<DenseQ>(DenseQ::from_json(j));
  throw std::invalid_argument("unknown checkpoint kind '" + kind + "'");
}

void save_checkpoint(const QFunction& q, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path.string());
  out << q.to_json().dump() << '\n';
  if (!out) throw std::runtime_error("failed writing checkpoint " + path.string());
}

std::unique_ptr<QFunction> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint " + path.string());
  try {
    return backend_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace mahrl
