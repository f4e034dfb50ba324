#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "csel/model_config.hpp"
#include "csel/rng.hpp"
#include "csel/tensor.hpp"

namespace csel {

// Named learnable parameters, iterated in lexicographic path order.
class ParamStore {
 public:
  using Map = std::map<std::string, Tensor, std::less<>>;

  // Throws std::invalid_argument on a duplicate path. Sets requires_grad.
  void insert(std::string path, Tensor value);

  Tensor& at(std::string_view path);
  const Tensor& at(std::string_view path) const;
  bool contains(std::string_view path) const { return params_.find(path) != params_.end(); }

  std::size_t size() const { return params_.size(); }
  std::size_t total_values() const;
  std::vector<std::string> paths() const;

  Map::iterator begin() { return params_.begin(); }
  Map::iterator end() { return params_.end(); }
  Map::const_iterator begin() const { return params_.begin(); }
  Map::const_iterator end() const { return params_.end(); }

  // Deep copy with fresh buffers and no gradients.
  ParamStore clone() const;
  void clear_grads();

  // Bitwise equality of paths, shapes and values.
  bool identical_to(const ParamStore& other) const;

 private:
  Map params_;
};

struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::map<std::string, std::vector<double>, std::less<>> m;
  std::map<std::string, std::vector<double>, std::less<>> v;

  bool operator==(const AdamState&) const = default;
};

class MissingGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// x [batch x in] * weight [in x out] + bias [out].
Tensor linear_forward(const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor linear_forward(const Tensor& x, const ParamStore& params, std::string_view prefix);

// Shared-weight convolutional encoder: frames [B x C x H x W] -> [B x D], or a
// single frame [C x H x W] -> [D]. Pixel values are expected in [0, 1].
Tensor conv_encoder_forward(const Tensor& frames, const ParamStore& params,
                            const ModelConfig& cfg);

// Bidirectional LSTM over [T x F] -> [T x 2H], or over independent streams
// [T x R x F] -> [T x R x 2H]. Row t is concat(forward_t, backward_t); the
// forward pass reads steps 0..t and the backward pass reads T-1..t.
Tensor bilstm_forward(const Tensor& sequence, const ParamStore& params,
                      std::string_view prefix = "lstm");

// Inverted dropout: survivors are scaled by 1/(1-p). Identity when not training.
Tensor dropout_forward(const Tensor& x, double p, bool training, Rng& rng);

// Bias-corrected Adam update, then clears gradients. Every parameter must
// carry a gradient.
void adam_step(ParamStore& params, AdamState& state);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias; LSTM
// biases are zero except the forget gate, which starts at 1.
ParamStore init_params(const ModelConfig& cfg, std::uint64_t seed);

// Largest |value| allowed for a freshly initialized parameter at `path`
// (infinity for the LSTM biases).
double init_bound(const ModelConfig& cfg, std::string_view path);

}  // namespace csel
