#include "csel/tensor.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>
#include <utility>

#include "csel/kernels.hpp"

namespace csel {

using VjpFn = std::function<void(std::span<const double>, std::span<Tensor>)>;

struct Tensor::Impl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

namespace {

thread_local bool g_grad_enabled = true;

constexpr std::array kAllKinds = {
    PrimitiveKind::add,          PrimitiveKind::mul,
    PrimitiveKind::matmul,       PrimitiveKind::conv2d,
    PrimitiveKind::max_over_axis, PrimitiveKind::mean_over_axis,
    PrimitiveKind::sum_over_axis, PrimitiveKind::concat_along_axis,
    PrimitiveKind::slice,        PrimitiveKind::sigmoid,
    PrimitiveKind::tanh,         PrimitiveKind::leaky_relu,
    PrimitiveKind::log,          PrimitiveKind::neg,
    PrimitiveKind::power,        PrimitiveKind::broadcast,
    PrimitiveKind::reshape,      PrimitiveKind::max_pool2d,
    PrimitiveKind::clamp,
};

[[noreturn]] void shape_fail(PrimitiveKind kind, const std::string& what) {
  throw ShapeError(std::string(to_string(kind)) + ": " + what);
}

void check_finite(PrimitiveKind kind, const Tensor& t, std::size_t input_index) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NonFiniteError(std::string(to_string(kind)) + ": input " +
                           std::to_string(input_index) + " contains a non-finite value");
    }
  }
}

void check_inputs(PrimitiveKind kind, std::initializer_list<const Tensor*> inputs) {
  std::size_t i = 0;
  for (const Tensor* t : inputs) {
    if (!t->defined()) shape_fail(kind, "input " + std::to_string(i) + " is undefined");
    check_finite(kind, *t, i);
    ++i;
  }
}

// Splits `shape` around `axis` into (outer, extent, inner) products.
struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape reduced_shape(const Shape& shape, std::size_t axis, bool keepdims) {
  Shape out = shape;
  if (keepdims) {
    out[axis] = 1;
  } else {
    out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  return out;
}

bool any_requires_grad(std::span<const Tensor> inputs) {
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor& t) { return t.defined() && t.requires_grad(); });
}

}  // namespace

Tensor make_result(PrimitiveKind kind, Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs, VjpFn vjp) {
  Tensor out;
  out.impl_->shape = std::move(shape);
  out.impl_->data = std::move(data);
  if (g_grad_enabled && any_requires_grad(inputs)) {
    out.impl_->requires_grad = true;
    out.impl_->node = std::make_shared<Node>(Node{kind, std::move(inputs), std::move(vjp)});
  }
  return out;
}

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

std::string_view to_string(PrimitiveKind kind) {
  switch (kind) {
    case PrimitiveKind::add: return "add";
    case PrimitiveKind::mul: return "mul";
    case PrimitiveKind::matmul: return "matmul";
    case PrimitiveKind::conv2d: return "conv2d";
    case PrimitiveKind::max_over_axis: return "max_over_axis";
    case PrimitiveKind::mean_over_axis: return "mean_over_axis";
    case PrimitiveKind::sum_over_axis: return "sum_over_axis";
    case PrimitiveKind::concat_along_axis: return "concat_along_axis";
    case PrimitiveKind::slice: return "slice";
    case PrimitiveKind::sigmoid: return "sigmoid";
    case PrimitiveKind::tanh: return "tanh";
    case PrimitiveKind::leaky_relu: return "leaky_relu";
    case PrimitiveKind::log: return "log";
    case PrimitiveKind::neg: return "neg";
    case PrimitiveKind::power: return "power";
    case PrimitiveKind::broadcast: return "broadcast";
    case PrimitiveKind::reshape: return "reshape";
    case PrimitiveKind::max_pool2d: return "max_pool2d";
    case PrimitiveKind::clamp: return "clamp";
  }
  return "unknown";
}

std::span<const PrimitiveKind> all_primitive_kinds() { return kAllKinds; }

// ---------------------------------------------------------------------------
// Tensor

Tensor::Tensor() : impl_(std::make_shared<Impl>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) : Tensor() {
  if (csel::numel(shape) != data.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " holds " +
                     std::to_string(csel::numel(shape)) + " values but " +
                     std::to_string(data.size()) + " were given");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = csel::numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool value) { impl_->requires_grad = value; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }

std::span<double> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(numel(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.assign(numel(), 0.0); }
void Tensor::clear_grad() { impl_->grad.clear(); }
const Node* Tensor::node() const { return impl_->node.get(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data, false); }

void Tensor::accumulate_grad(std::span<const double> g) {
  auto& grad = impl_->grad;
  if (grad.empty()) {
    grad.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
}

void Tensor::accumulate_grad_at(std::size_t flat_index, double g) {
  mutable_grad()[flat_index] += g;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_recording_enabled() { return g_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise primitives

Tensor add(const Tensor& a, const Tensor& b) {
  check_inputs(PrimitiveKind::add, {&a, &b});
  if (a.shape() != b.shape())
    shape_fail(PrimitiveKind::add, "operand shapes " + shape_str(a.shape()) + " and " +
                                       shape_str(b.shape()) + " differ");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return make_result(PrimitiveKind::add, a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<Tensor> in) {
                       for (auto& t : in)
                         if (t.requires_grad()) t.accumulate_grad(g);
                     });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_inputs(PrimitiveKind::mul, {&a, &b});
  if (a.shape() != b.shape())
    shape_fail(PrimitiveKind::mul, "operand shapes " + shape_str(a.shape()) + " and " +
                                       shape_str(b.shape()) + " differ");
  std::vector<double> out(a.numel());
  const auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return make_result(PrimitiveKind::mul, a.shape(), std::move(out), {a, b},
                     [](std::span<const double> g, std::span<Tensor> in) {
                       for (int which = 0; which < 2; ++which) {
                         Tensor& target = in[which];
                         if (!target.requires_grad()) continue;
                         const auto other = in[1 - which].data();
                         std::vector<double> gi(g.size());
                         for (std::size_t i = 0; i < g.size(); ++i) gi[i] = g[i] * other[i];
                         target.accumulate_grad(gi);
                       }
                     });
}

namespace {

template <class Forward, class Derivative>
Tensor unary(PrimitiveKind kind, const Tensor& x, Forward f, Derivative df) {
  check_inputs(kind, {&x});
  std::vector<double> out(x.numel());
  const auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xd[i]);
  // The derivative sees (input, output) so sigmoid/tanh can reuse the output.
  return make_result(kind, x.shape(), out, {x},
                     [df, out](std::span<const double> g, std::span<Tensor> in) {
                       if (!in[0].requires_grad()) return;
                       const auto xin = in[0].data();
                       std::vector<double> gi(g.size());
                       for (std::size_t i = 0; i < g.size(); ++i) gi[i] = g[i] * df(xin[i], out[i]);
                       in[0].accumulate_grad(gi);
                     });
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary(PrimitiveKind::sigmoid, x, stable_sigmoid,
               [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(PrimitiveKind::tanh, x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary(PrimitiveKind::leaky_relu, x,
               [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor log(const Tensor& x) {
  return unary(PrimitiveKind::log, x, [](double v) { return std::log(v); },
               [](double v, double) { return 1.0 / v; });
}

Tensor neg(const Tensor& x) {
  return unary(PrimitiveKind::neg, x, [](double v) { return -v; },
               [](double, double) { return -1.0; });
}

Tensor power(const Tensor& x, double exponent) {
  return unary(PrimitiveKind::power, x, [exponent](double v) { return std::pow(v, exponent); },
               [exponent](double v, double) {
                 return exponent == 0.0 ? 0.0 : exponent * std::pow(v, exponent - 1.0);
               });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (!(lo <= hi)) shape_fail(PrimitiveKind::clamp, "lower bound exceeds upper bound");
  return unary(PrimitiveKind::clamp, x, [lo, hi](double v) { return std::clamp(v, lo, hi); },
               [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_inputs(PrimitiveKind::matmul, {&a, &b});
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0))
    shape_fail(PrimitiveKind::matmul, "cannot multiply " + shape_str(a.shape()) + " by " +
                                          shape_str(b.shape()));
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  std::vector<double> out(m * n);
  kernels::gemm(a.data(), b.data(), out, m, k, n, false);
  return make_result(PrimitiveKind::matmul, {m, n}, std::move(out), {a, b},
                     [m, k, n](std::span<const double> g, std::span<Tensor> in) {
                       if (in[0].requires_grad()) {
                         std::vector<double> bt(n * k), ga(m * k);
                         kernels::transpose(in[1].data(), bt, k, n);
                         kernels::gemm(g, bt, ga, m, n, k, false);
                         in[0].accumulate_grad(ga);
                       }
                       if (in[1].requires_grad()) {
                         std::vector<double> at(k * m), gb(k * n);
                         kernels::transpose(in[0].data(), at, m, k);
                         kernels::gemm(at, g, gb, k, m, n, false);
                         in[1].accumulate_grad(gb);
                       }
                     });
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  const bool has_bias = bias.defined() && bias.numel() > 0;
  if (has_bias) {
    check_inputs(PrimitiveKind::conv2d, {&x, &w, &bias});
  } else {
    check_inputs(PrimitiveKind::conv2d, {&x, &w});
  }
  if (x.rank() != 4) shape_fail(PrimitiveKind::conv2d, "input must be BxCxHxW, got " + shape_str(x.shape()));
  if (w.rank() != 4) shape_fail(PrimitiveKind::conv2d, "kernel must be OxCxKhxKw, got " + shape_str(w.shape()));
  if (w.extent(1) != x.extent(1))
    shape_fail(PrimitiveKind::conv2d, "input channels " + std::to_string(x.extent(1)) +
                                          " do not match kernel channels " +
                                          std::to_string(w.extent(1)));
  if (stride == 0) shape_fail(PrimitiveKind::conv2d, "stride must be positive");
  if (x.extent(2) + 2 * padding < w.extent(2) || x.extent(3) + 2 * padding < w.extent(3))
    shape_fail(PrimitiveKind::conv2d, "kernel " + shape_str(w.shape()) + " larger than padded input " +
                                          shape_str(x.shape()));
  if (has_bias && (bias.rank() != 1 || bias.extent(0) != w.extent(0)))
    shape_fail(PrimitiveKind::conv2d, "bias " + shape_str(bias.shape()) + " does not match " +
                                          std::to_string(w.extent(0)) + " output channels");

  kernels::ConvDims d;
  d.batch = x.extent(0);
  d.in_channels = x.extent(1);
  d.in_h = x.extent(2);
  d.in_w = x.extent(3);
  d.out_channels = w.extent(0);
  d.kernel_h = w.extent(2);
  d.kernel_w = w.extent(3);
  d.stride = stride;
  d.padding = padding;

  std::vector<double> out(d.batch * d.out_image_size());
  kernels::conv2d_forward(x.data(), w.data(), has_bias ? bias.data() : std::span<const double>{},
                          out, d);
  std::vector<Tensor> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return make_result(
      PrimitiveKind::conv2d, {d.batch, d.out_channels, d.out_h(), d.out_w()}, std::move(out),
      std::move(inputs), [d](std::span<const double> g, std::span<Tensor> in) {
        if (in[0].requires_grad()) {
          std::vector<double> gx(in[0].numel(), 0.0);
          kernels::conv2d_backward_input(g, in[1].data(), gx, d);
          in[0].accumulate_grad(gx);
        }
        if (in[1].requires_grad()) {
          std::vector<double> gw(in[1].numel(), 0.0);
          kernels::conv2d_backward_weight(g, in[0].data(), gw, d);
          in[1].accumulate_grad(gw);
        }
        if (in.size() > 2 && in[2].requires_grad()) {
          const std::size_t pixels = d.out_h() * d.out_w();
          std::vector<double> gb(d.out_channels, 0.0);
          for (std::size_t b = 0; b < d.batch; ++b)
            for (std::size_t o = 0; o < d.out_channels; ++o) {
              const double* row = g.data() + (b * d.out_channels + o) * pixels;
              for (std::size_t p = 0; p < pixels; ++p) gb[o] += row[p];
            }
          in[2].accumulate_grad(gb);
        }
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t window) {
  check_inputs(PrimitiveKind::max_pool2d, {&x});
  if (x.rank() != 4) shape_fail(PrimitiveKind::max_pool2d, "input must be rank 4, got " + shape_str(x.shape()));
  if (window == 0 || x.extent(2) % window != 0 || x.extent(3) % window != 0)
    shape_fail(PrimitiveKind::max_pool2d, "extents " + shape_str(x.shape()) +
                                              " are not divisible by window " + std::to_string(window));
  const std::size_t planes = x.extent(0) * x.extent(1);
  const Shape out_shape{x.extent(0), x.extent(1), x.extent(2) / window, x.extent(3) / window};
  std::vector<double> out(numel(out_shape));
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  kernels::max_pool2d_forward(x.data(), out, *argmax, planes, x.extent(2), x.extent(3), window);
  return make_result(PrimitiveKind::max_pool2d, out_shape, std::move(out), {x},
                     [argmax](std::span<const double> g, std::span<Tensor> in) {
                       if (!in[0].requires_grad()) return;
                       std::vector<double> gi(in[0].numel(), 0.0);
                       for (std::size_t o = 0; o < g.size(); ++o) gi[(*argmax)[o]] += g[o];
                       in[0].accumulate_grad(gi);
                     });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor max_over_axis(const Tensor& x, std::size_t axis, bool keepdims) {
  check_inputs(PrimitiveKind::max_over_axis, {&x});
  if (axis >= x.rank())
    shape_fail(PrimitiveKind::max_over_axis, "axis " + std::to_string(axis) + " out of range for " +
                                                 shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>(out.size());
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t idx = (o * s.extent + e) * s.inner + i;
        if (xd[idx] > xd[best]) best = idx;
      }
      out[o * s.inner + i] = xd[best];
      (*argmax)[o * s.inner + i] = best;
    }
  return make_result(PrimitiveKind::max_over_axis, reduced_shape(x.shape(), axis, keepdims),
                     std::move(out), {x},
                     [argmax](std::span<const double> g, std::span<Tensor> in) {
                       if (!in[0].requires_grad()) return;
                       std::vector<double> gi(in[0].numel(), 0.0);
                       for (std::size_t o = 0; o < g.size(); ++o) gi[(*argmax)[o]] += g[o];
                       in[0].accumulate_grad(gi);
                     });
}

namespace {

Tensor sum_like(PrimitiveKind kind, const Tensor& x, std::size_t axis, bool keepdims,
                double factor) {
  check_inputs(kind, {&x});
  if (axis >= x.rank())
    shape_fail(kind, "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t e = 0; e < s.extent; ++e)
      for (std::size_t i = 0; i < s.inner; ++i)
        out[o * s.inner + i] += xd[(o * s.extent + e) * s.inner + i];
  if (factor != 1.0)
    for (double& v : out) v *= factor;
  return make_result(kind, reduced_shape(x.shape(), axis, keepdims), std::move(out), {x},
                     [s, factor](std::span<const double> g, std::span<Tensor> in) {
                       if (!in[0].requires_grad()) return;
                       std::vector<double> gi(in[0].numel());
                       for (std::size_t o = 0; o < s.outer; ++o)
                         for (std::size_t e = 0; e < s.extent; ++e)
                           for (std::size_t i = 0; i < s.inner; ++i)
                             gi[(o * s.extent + e) * s.inner + i] = g[o * s.inner + i] * factor;
                       in[0].accumulate_grad(gi);
                     });
}

}  // namespace

Tensor sum_over_axis(const Tensor& x, std::size_t axis, bool keepdims) {
  return sum_like(PrimitiveKind::sum_over_axis, x, axis, keepdims, 1.0);
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis, bool keepdims) {
  if (axis >= x.rank())
    shape_fail(PrimitiveKind::mean_over_axis, "axis " + std::to_string(axis) + " out of range for " +
                                                  shape_str(x.shape()));
  return sum_like(PrimitiveKind::mean_over_axis, x, axis, keepdims,
                  1.0 / static_cast<double>(x.extent(axis)));
}

// ---------------------------------------------------------------------------
// Structural primitives

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  constexpr auto kind = PrimitiveKind::concat_along_axis;
  if (parts.empty()) shape_fail(kind, "no inputs");
  for (std::size_t p = 0; p < parts.size(); ++p) {
    if (!parts[p].defined()) shape_fail(kind, "input " + std::to_string(p) + " is undefined");
    check_finite(kind, parts[p], p);
  }
  const Shape& first = parts[0].shape();
  if (axis >= first.size())
    shape_fail(kind, "axis " + std::to_string(axis) + " out of range for " + shape_str(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != first.size()) shape_fail(kind, "rank mismatch " + shape_str(t.shape()) + " vs " + shape_str(first));
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis && t.extent(i) != first[i])
        shape_fail(kind, "extents " + shape_str(t.shape()) + " vs " + shape_str(first) +
                             " differ off axis " + std::to_string(axis));
    out_shape[axis] += t.extent(axis);
  }
  const AxisSplit s = split_axis(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& t : parts) {
    offsets.push_back(offset);
    const std::size_t block = t.extent(axis) * s.inner;
    const auto td = t.data();
    for (std::size_t o = 0; o < s.outer; ++o)
      std::copy_n(td.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                  out.begin() + static_cast<std::ptrdiff_t>(o * s.extent * s.inner + offset * s.inner));
    offset += t.extent(axis);
  }
  return make_result(kind, out_shape, std::move(out), {parts.begin(), parts.end()},
                     [s, offsets, axis](std::span<const double> g, std::span<Tensor> in) {
                       for (std::size_t p = 0; p < in.size(); ++p) {
                         if (!in[p].requires_grad()) continue;
                         const std::size_t block = in[p].extent(axis) * s.inner;
                         std::vector<double> gi(in[p].numel());
                         for (std::size_t o = 0; o < s.outer; ++o)
                           std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(
                                                       o * s.extent * s.inner + offsets[p] * s.inner),
                                       block, gi.begin() + static_cast<std::ptrdiff_t>(o * block));
                         in[p].accumulate_grad(gi);
                       }
                     });
}

Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis) {
  return concat(std::span<const Tensor>(parts.begin(), parts.size()), axis);
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  constexpr auto kind = PrimitiveKind::slice;
  check_inputs(kind, {&x});
  if (axis >= x.rank()) shape_fail(kind, "axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  if (begin >= end || end > x.extent(axis))
    shape_fail(kind, "range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for extent " + std::to_string(x.extent(axis)));
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  const std::size_t block = (end - begin) * s.inner;
  std::vector<double> out(s.outer * block);
  const auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(xd.begin() + static_cast<std::ptrdiff_t>((o * s.extent + begin) * s.inner), block,
                out.begin() + static_cast<std::ptrdiff_t>(o * block));
  return make_result(kind, out_shape, std::move(out), {x},
                     [s, begin, block](std::span<const double> g, std::span<Tensor> in) {
                       if (!in[0].requires_grad()) return;
                       std::vector<double> gi(in[0].numel(), 0.0);
                       for (std::size_t o = 0; o < s.outer; ++o)
                         std::copy_n(g.begin() + static_cast<std::ptrdiff_t>(o * block), block,
                                     gi.begin() + static_cast<std::ptrdiff_t>((o * s.extent + begin) * s.inner));
                       in[0].accumulate_grad(gi);
                     });
}

Tensor broadcast(const Tensor& x, const Shape& target) {
  constexpr auto kind = PrimitiveKind::broadcast;
  check_inputs(kind, {&x});
  if (x.rank() > target.size())
    shape_fail(kind, "cannot broadcast " + shape_str(x.shape()) + " to lower rank " + shape_str(target));
  // Source extents right-aligned against the target, padded with 1s.
  const std::size_t lead = target.size() - x.rank();
  Shape src(target.size(), 1);
  for (std::size_t i = 0; i < x.rank(); ++i) {
    src[lead + i] = x.extent(i);
    if (src[lead + i] != 1 && src[lead + i] != target[lead + i])
      shape_fail(kind, "cannot broadcast " + shape_str(x.shape()) + " to " + shape_str(target));
  }
  const std::size_t n = numel(target);
  // Source flat index for every output element.
  auto index = std::make_shared<std::vector<std::size_t>>(n);
  std::vector<std::size_t> src_stride(target.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = target.size(); i-- > 0;) {
    src_stride[i] = src[i] == 1 ? 0 : stride;
    stride *= src[i];
  }
  std::vector<std::size_t> counter(target.size(), 0);
  for (std::size_t flat = 0; flat < n; ++flat) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < target.size(); ++i) s += counter[i] * src_stride[i];
    (*index)[flat] = s;
    for (std::size_t i = target.size(); i-- > 0;) {
      if (++counter[i] < target[i]) break;
      counter[i] = 0;
    }
  }
  std::vector<double> out(n);
  const auto xd = x.data();
  for (std::size_t flat = 0; flat < n; ++flat) out[flat] = xd[(*index)[flat]];
  return make_result(kind, target, std::move(out), {x},
                     [index](std::span<const double> g, std::span<Tensor> in) {
                       if (!in[0].requires_grad()) return;
                       std::vector<double> gi(in[0].numel(), 0.0);
                       for (std::size_t flat = 0; flat < g.size(); ++flat) gi[(*index)[flat]] += g[flat];
                       in[0].accumulate_grad(gi);
                     });
}

Tensor reshape(const Tensor& x, const Shape& shape) {
  check_inputs(PrimitiveKind::reshape, {&x});
  if (numel(shape) != x.numel())
    shape_fail(PrimitiveKind::reshape, "cannot reshape " + shape_str(x.shape()) + " to " + shape_str(shape));
  return make_result(PrimitiveKind::reshape, shape, std::vector<double>(x.data().begin(), x.data().end()),
                     {x}, [](std::span<const double> g, std::span<Tensor> in) {
                       if (in[0].requires_grad()) in[0].accumulate_grad(g);
                     });
}

// ---------------------------------------------------------------------------
// Composites

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor sum_all(const Tensor& x) { return sum_over_axis(reshape(x, {x.numel()}), 0); }

Tensor mean_all(const Tensor& x) { return mean_over_axis(reshape(x, {x.numel()}), 0); }

Tensor scale(const Tensor& x, double factor) { return mul(x, Tensor::full(x.shape(), factor)); }

Tensor add_scalar(const Tensor& x, double value) { return add(x, Tensor::full(x.shape(), value)); }

// ---------------------------------------------------------------------------

Tensor apply_primitive(PrimitiveKind kind, std::span<const Tensor> inputs,
                       const PrimitiveAttrs& attrs) {
  auto need = [&](std::size_t n) {
    if (inputs.size() != n)
      shape_fail(kind, "expects " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case PrimitiveKind::add: need(2); return add(inputs[0], inputs[1]);
    case PrimitiveKind::mul: need(2); return mul(inputs[0], inputs[1]);
    case PrimitiveKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case PrimitiveKind::conv2d:
      if (inputs.size() == 3) return conv2d(inputs[0], inputs[1], inputs[2], attrs.stride, attrs.padding);
      need(2);
      return conv2d(inputs[0], inputs[1], Tensor(), attrs.stride, attrs.padding);
    case PrimitiveKind::max_over_axis: need(1); return max_over_axis(inputs[0], attrs.axis, attrs.keepdims);
    case PrimitiveKind::mean_over_axis: need(1); return mean_over_axis(inputs[0], attrs.axis, attrs.keepdims);
    case PrimitiveKind::sum_over_axis: need(1); return sum_over_axis(inputs[0], attrs.axis, attrs.keepdims);
    case PrimitiveKind::concat_along_axis: return concat(inputs, attrs.axis);
    case PrimitiveKind::slice: need(1); return slice(inputs[0], attrs.axis, attrs.begin, attrs.end);
    case PrimitiveKind::sigmoid: need(1); return sigmoid(inputs[0]);
    case PrimitiveKind::tanh: need(1); return tanh(inputs[0]);
    case PrimitiveKind::leaky_relu: need(1); return leaky_relu(inputs[0], attrs.slope);
    case PrimitiveKind::log: need(1); return log(inputs[0]);
    case PrimitiveKind::neg: need(1); return neg(inputs[0]);
    case PrimitiveKind::power: need(1); return power(inputs[0], attrs.exponent);
    case PrimitiveKind::broadcast: need(1); return broadcast(inputs[0], attrs.shape);
    case PrimitiveKind::reshape: need(1); return reshape(inputs[0], attrs.shape);
    case PrimitiveKind::max_pool2d: need(1); return max_pool2d(inputs[0], attrs.window);
    case PrimitiveKind::clamp: need(1); return clamp(inputs[0], attrs.lo, attrs.hi);
  }
  shape_fail(kind, "unknown primitive");
}

// ---------------------------------------------------------------------------

void backward(const Tensor& loss) {
  if (!loss.defined()) throw GraphError("backward: undefined loss");
  if (loss.numel() != 1)
    throw GraphError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  if (loss.node() == nullptr)
    throw GraphError("backward: loss is detached (no recorded graph)");

  // Iterative post-order DFS gives a topological order (inputs first).
  std::vector<Tensor> order;
  std::unordered_set<const Tensor::Impl*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  stack.emplace_back(loss, 0);
  visited.insert(loss.impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    const Node* node = t.node();
    if (node != nullptr && next < node->inputs.size()) {
      const Tensor& child = node->inputs[next++];
      if (child.requires_grad() && visited.insert(child.impl_.get()).second)
        stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(t);
    stack.pop_back();
  }

  for (Tensor& t : order)
    if (!t.is_leaf()) t.clear_grad();
  const_cast<Tensor&>(loss).mutable_grad()[0] = 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = it->impl_->node.get();
    if (node == nullptr || !it->has_grad()) continue;
    node->vjp(it->grad(), node->inputs);
  }
}

}  // namespace csel
