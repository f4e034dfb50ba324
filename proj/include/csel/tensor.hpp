#pragma once

// Dense float64 tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle: copies alias the same buffer and graph node,
// like the tensor handles of most deep-learning frameworks. Every primitive
// produces a fresh tensor; a graph node is recorded whenever at least one
// input requires a gradient and gradient recording is enabled.
//
// Shapes never broadcast implicitly. `broadcast` is the only primitive that
// changes extents to match another operand.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csel {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

enum class PrimitiveKind {
  add,
  mul,
  matmul,
  conv2d,
  max_over_axis,
  mean_over_axis,
  sum_over_axis,
  concat_along_axis,
  slice,
  sigmoid,
  tanh,
  leaky_relu,
  log,
  neg,
  power,
  broadcast,
  reshape,
  max_pool2d,
  clamp,
};

std::string_view to_string(PrimitiveKind kind);
// All kinds, in declaration order.
std::span<const PrimitiveKind> all_primitive_kinds();

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class Tensor;

struct Node;

class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  std::span<const double> data() const;
  // Mutable access to the value buffer. Intended for leaf tensors (parameter
  // updates, finite-difference perturbation); mutating a tensor that already
  // participates in a graph invalidates that graph's gradients.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool value);

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();
  void clear_grad();

  const Node* node() const;
  bool is_leaf() const { return node() == nullptr; }

  // New leaf tensor sharing no state with this one.
  Tensor detach() const;

  bool defined() const { return static_cast<bool>(impl_); }
  bool same_as(const Tensor& other) const { return impl_ == other.impl_; }

  // Used by primitives to accumulate vector-Jacobian products.
  void accumulate_grad(std::span<const double> g);
  void accumulate_grad_at(std::size_t flat_index, double g);

 private:
  struct Impl;
  friend Tensor make_result(PrimitiveKind, Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(std::span<const double>, std::span<Tensor>)>);
  friend void backward(const Tensor& loss);
  std::shared_ptr<Impl> impl_;
};

struct Node {
  PrimitiveKind kind;
  std::vector<Tensor> inputs;
  // Receives the output gradient and accumulates into the inputs' gradients.
  std::function<void(std::span<const double> grad_out, std::span<Tensor> inputs)> vjp;
};

// Disables graph recording on the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

// Attributes for `apply_primitive`; each primitive reads only the fields it
// needs.
struct PrimitiveAttrs {
  std::size_t axis = 0;
  bool keepdims = false;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t window = 2;
  double exponent = 1.0;
  double slope = 0.01;
  double lo = 0.0;
  double hi = 1.0;
  Shape shape;
};

Tensor apply_primitive(PrimitiveKind kind, std::span<const Tensor> inputs,
                       const PrimitiveAttrs& attrs = {});

inline constexpr double kLeakySlope = 0.01;

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x [B x C x H x W], w [O x C x kh x kw], optional bias [O].
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias = Tensor(),
              std::size_t stride = 1, std::size_t padding = 0);
// Gradient flows to the first maximal element along the axis.
Tensor max_over_axis(const Tensor& x, std::size_t axis, bool keepdims = false);
Tensor mean_over_axis(const Tensor& x, std::size_t axis, bool keepdims = false);
Tensor sum_over_axis(const Tensor& x, std::size_t axis, bool keepdims = false);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor concat(std::initializer_list<Tensor> parts, std::size_t axis);
// Half-open range [begin, end) along `axis`.
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope = kLeakySlope);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor power(const Tensor& x, double exponent);
// Right-aligned broadcast; each source extent must be 1 or equal the target.
Tensor broadcast(const Tensor& x, const Shape& target);
Tensor reshape(const Tensor& x, const Shape& shape);
// Non-overlapping pooling on the last two axes of a rank-4 tensor.
Tensor max_pool2d(const Tensor& x, std::size_t window);
// Gradient is passed where lo <= x <= hi and zero elsewhere.
Tensor clamp(const Tensor& x, double lo, double hi);

Tensor sub(const Tensor& a, const Tensor& b);
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);

// Populates gradients of every requires_grad ancestor of a scalar loss.
void backward(const Tensor& loss);

}  // namespace csel
