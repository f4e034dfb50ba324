#include "csel/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace csel {
namespace {

enum class InitKind { uniform, lstm_bias };

struct ParamSpec {
  std::string path;
  Shape shape;
  std::size_t fan_in;
  InitKind init = InitKind::uniform;
};

std::vector<ParamSpec> param_specs(const ModelConfig& cfg) {
  std::vector<ParamSpec> specs;
  std::size_t channels = cfg.frame_channels;
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string base = "encoder.conv" + std::to_string(i + 1);
    const std::size_t out = cfg.conv_channels[i];
    specs.push_back({base + ".weight", {out, channels, 3, 3}, channels * 9});
    specs.push_back({base + ".bias", {out}, channels * 9});
    channels = out;
  }
  const std::size_t flat = cfg.encoder_flat_dim();
  specs.push_back({"encoder.fc.weight", {flat, cfg.feature_dim}, flat});
  specs.push_back({"encoder.fc.bias", {cfg.feature_dim}, flat});

  if (cfg.use_sequential) {
    const std::size_t in = cfg.context_dim(), h = cfg.rnn_hidden;
    for (const char* dir : {"bwd", "fwd"}) {
      const std::string base = std::string("lstm.") + dir;
      specs.push_back({base + ".bias", {4 * h}, h, InitKind::lstm_bias});
      specs.push_back({base + ".w_hh", {h, 4 * h}, h});
      specs.push_back({base + ".w_ih", {in, 4 * h}, in});
    }
  }

  std::size_t width = cfg.head_input_dim();
  for (std::size_t i = 0; i < cfg.head_hidden.size(); ++i) {
    const std::string base = "head.fc" + std::to_string(i + 1);
    specs.push_back({base + ".weight", {width, cfg.head_hidden[i]}, width});
    specs.push_back({base + ".bias", {cfg.head_hidden[i]}, width});
    width = cfg.head_hidden[i];
  }
  specs.push_back({"head.out.weight", {width, 1}, width});
  specs.push_back({"head.out.bias", {1}, width});

  std::sort(specs.begin(), specs.end(),
            [](const ParamSpec& a, const ParamSpec& b) { return a.path < b.path; });
  return specs;
}

}  // namespace

// ---------------------------------------------------------------------------
// ParamStore

void ParamStore::insert(std::string path, Tensor value) {
  if (params_.count(path) != 0) throw std::invalid_argument("ParamStore: duplicate path " + path);
  value.set_requires_grad(true);
  params_.emplace(std::move(path), std::move(value));
}

Tensor& ParamStore::at(std::string_view path) {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter " + std::string(path));
  return it->second;
}

const Tensor& ParamStore::at(std::string_view path) const {
  auto it = params_.find(path);
  if (it == params_.end()) throw std::out_of_range("ParamStore: no parameter " + std::string(path));
  return it->second;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [path, t] : params_) n += t.numel();
  return n;
}

std::vector<std::string> ParamStore::paths() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [path, t] : params_) out.push_back(path);
  return out;
}

ParamStore ParamStore::clone() const {
  ParamStore copy;
  for (const auto& [path, t] : params_) copy.insert(path, t.detach());
  return copy;
}

void ParamStore::clear_grads() {
  for (auto& [path, t] : params_) t.clear_grad();
}

bool ParamStore::identical_to(const ParamStore& other) const {
  if (params_.size() != other.params_.size()) return false;
  auto a = params_.begin();
  auto b = other.params_.begin();
  for (; a != params_.end(); ++a, ++b) {
    if (a->first != b->first || a->second.shape() != b->second.shape()) return false;
    const auto x = a->second.data(), y = b->second.data();
    if (!std::equal(x.begin(), x.end(), y.begin(), [](double p, double q) {
          return std::bit_cast<std::uint64_t>(p) == std::bit_cast<std::uint64_t>(q);
        }))
      return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Layers

Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() != 2 || weight.rank() != 2 || bias.rank() != 1 || x.extent(1) != weight.extent(0) ||
      bias.extent(0) != weight.extent(1))
    throw ShapeError("linear: incompatible shapes x " + shape_str(x.shape()) + ", weight " +
                     shape_str(weight.shape()) + ", bias " + shape_str(bias.shape()));
  const Tensor y = matmul(x, weight);
  return add(y, broadcast(bias, y.shape()));
}

Tensor linear_forward(const Tensor& x, const ParamStore& params, std::string_view prefix) {
  const std::string p(prefix);
  return linear_forward(x, params.at(p + ".weight"), params.at(p + ".bias"));
}

Tensor conv_encoder_forward(const Tensor& frames, const ParamStore& params,
                            const ModelConfig& cfg) {
  const bool single = frames.rank() == 3;
  if (!single && frames.rank() != 4)
    throw ShapeError("conv_encoder: frames must be CxHxW or BxCxHxW, got " +
                     shape_str(frames.shape()));
  const Shape expected{cfg.frame_channels, cfg.frame_height, cfg.frame_width};
  const Shape got(frames.shape().end() - 3, frames.shape().end());
  if (got != expected)
    throw ShapeError("conv_encoder: frame shape " + shape_str(got) + " does not match config " +
                     shape_str(expected));

  Tensor h = single ? reshape(frames, {1, expected[0], expected[1], expected[2]}) : frames;
  const std::size_t batch = h.extent(0);
  for (std::size_t i = 0; i < cfg.conv_channels.size(); ++i) {
    const std::string base = "encoder.conv" + std::to_string(i + 1);
    h = conv2d(h, params.at(base + ".weight"), params.at(base + ".bias"), 1, 1);
    h = max_pool2d(leaky_relu(h), 2);
  }
  h = reshape(h, {batch, h.numel() / batch});
  h = leaky_relu(linear_forward(h, params, "encoder.fc"));
  return single ? reshape(h, {cfg.feature_dim}) : h;
}

namespace {

// One direction over streams laid out [T*R x F]; returns hidden states
// [T*R x H] in time order.
Tensor lstm_direction(const Tensor& inputs, std::size_t steps, std::size_t streams,
                      const ParamStore& params, const std::string& prefix, bool reverse) {
  const Tensor& w_ih = params.at(prefix + ".w_ih");
  const Tensor& w_hh = params.at(prefix + ".w_hh");
  const Tensor& bias = params.at(prefix + ".bias");
  const std::size_t hidden = w_hh.extent(0);
  if (w_ih.extent(0) != inputs.extent(1))
    throw ShapeError("bilstm: input width " + std::to_string(inputs.extent(1)) +
                     " does not match " + prefix + ".w_ih " + shape_str(w_ih.shape()));

  const Tensor projected = linear_forward(inputs, w_ih, bias);
  Tensor h = Tensor::zeros({streams, hidden});
  Tensor c = Tensor::zeros({streams, hidden});
  std::vector<Tensor> outputs(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const std::size_t t = reverse ? steps - 1 - i : i;
    const Tensor gates =
        add(slice(projected, 0, t * streams, (t + 1) * streams), matmul(h, w_hh));
    const Tensor in_gate = sigmoid(slice(gates, 1, 0, hidden));
    const Tensor forget_gate = sigmoid(slice(gates, 1, hidden, 2 * hidden));
    const Tensor candidate = tanh(slice(gates, 1, 2 * hidden, 3 * hidden));
    const Tensor out_gate = sigmoid(slice(gates, 1, 3 * hidden, 4 * hidden));
    c = add(mul(forget_gate, c), mul(in_gate, candidate));
    h = mul(out_gate, tanh(c));
    outputs[t] = h;
  }
  return concat(outputs, 0);
}

}  // namespace

Tensor bilstm_forward(const Tensor& sequence, const ParamStore& params, std::string_view prefix) {
  if (sequence.rank() != 2 && sequence.rank() != 3)
    throw ShapeError("bilstm: expected TxF or TxRxF, got " + shape_str(sequence.shape()));
  const std::size_t steps = sequence.extent(0);
  if (steps == 0 || sequence.numel() == 0) throw ShapeError("bilstm: empty sequence");
  const std::size_t streams = sequence.rank() == 3 ? sequence.extent(1) : 1;
  const std::size_t width = sequence.shape().back();
  const Tensor flat = reshape(sequence, {steps * streams, width});
  const std::string p(prefix);
  const Tensor fwd = lstm_direction(flat, steps, streams, params, p + ".fwd", false);
  const Tensor bwd = lstm_direction(flat, steps, streams, params, p + ".bwd", true);
  const Tensor both = concat({fwd, bwd}, 1);
  const std::size_t out_width = both.extent(1);
  if (sequence.rank() == 2) return both;
  return reshape(both, {steps, streams, out_width});
}

Tensor dropout_forward(const Tensor& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  if (!training || p == 0.0) return x;
  std::vector<double> mask(x.numel());
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask) m = rng.bernoulli(p) ? 0.0 : keep_scale;
  return mul(x, Tensor(x.shape(), std::move(mask)));
}

// ---------------------------------------------------------------------------
// Optimizer

void adam_step(ParamStore& params, AdamState& state) {
  std::vector<std::string> missing;
  for (const auto& [path, t] : params)
    if (!t.has_grad()) missing.push_back(path);
  if (!missing.empty()) {
    std::string msg = "adam_step: missing gradients for";
    for (const auto& p : missing) msg += " " + p;
    throw MissingGradientError(msg);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (auto& [path, param] : params) {
    auto& m = state.m[path];
    auto& v = state.v[path];
    if (m.empty()) m.assign(param.numel(), 0.0);
    if (v.empty()) v.assign(param.numel(), 0.0);
    const auto g = param.grad();
    auto w = param.mutable_data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correction1;
      const double v_hat = v[i] / correction2;
      w[i] -= state.lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
    param.clear_grad();
  }
}

// ---------------------------------------------------------------------------
// Initialization

ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore store;
  for (const ParamSpec& spec : param_specs(cfg)) {
    std::vector<double> values(numel(spec.shape));
    if (spec.init == InitKind::lstm_bias) {
      const std::size_t hidden = values.size() / 4;
      std::fill(values.begin(), values.end(), 0.0);
      std::fill(values.begin() + static_cast<std::ptrdiff_t>(hidden),
                values.begin() + static_cast<std::ptrdiff_t>(2 * hidden), 1.0);
    } else {
      const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
      for (double& v : values) v = rng.uniform(-bound, bound);
    }
    store.insert(spec.path, Tensor(spec.shape, std::move(values)));
  }
  return store;
}

double init_bound(const ModelConfig& cfg, std::string_view path) {
  for (const ParamSpec& spec : param_specs(cfg)) {
    if (spec.path != path) continue;
    if (spec.init == InitKind::lstm_bias) return std::numeric_limits<double>::infinity();
    return 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
  }
  throw std::out_of_range("init_bound: no parameter " + std::string(path));
}

}  // namespace csel
