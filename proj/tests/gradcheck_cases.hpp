#pragma once

// Gradient-check instances for every primitive, every layer and the
// end-to-end focal-loss objective. Shared by the unit tests and the
// acceptance binary.

#include <functional>
#include <string>
#include <vector>

#include "csel/gradcheck.hpp"
#include "csel/loss.hpp"
#include "csel/model.hpp"
#include "csel/nn.hpp"
#include "test_util.hpp"

namespace csel::testing {

struct GradCase {
  std::string name;
  std::function<Tensor()> objective;
  std::vector<Tensor> leaves;
  // Smooth away from kinks and ties: the tighter 1e-6 bound applies.
  bool smooth = true;
  std::size_t max_coords = 0;
};

// A fixed random weighting turns any output into a scalar with a generic
// gradient, so every output coordinate is exercised.
inline Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum_all(mul(y, random_tensor(y.shape(), rng)));
}

inline std::vector<GradCase> primitive_grad_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  auto unary = [&](std::string name, PrimitiveKind kind, Tensor x, PrimitiveAttrs attrs, bool smooth = true) {
    cases.push_back({std::move(name),
                     [kind, x, attrs] {
                       const Tensor in[] = {x};
                       return weighted_sum(apply_primitive(kind, in, attrs), 11);
                     },
                     {x},
                     smooth});
  };
  auto binary = [&](std::string name, PrimitiveKind kind, Tensor a, Tensor b, PrimitiveAttrs attrs = {}) {
    cases.push_back({std::move(name),
                     [kind, a, b, attrs] {
                       const Tensor in[] = {a, b};
                       return weighted_sum(apply_primitive(kind, in, attrs), 12);
                     },
                     {a, b},
                     true});
  };
  auto leaf = [&](const Shape& s, double lo = -1.0, double hi = 1.0) { return random_tensor(s, rng, lo, hi, true); };

  binary("add", PrimitiveKind::add, leaf({3, 4}), leaf({3, 4}));
  binary("mul", PrimitiveKind::mul, leaf({2, 3, 2}), leaf({2, 3, 2}));
  binary("matmul", PrimitiveKind::matmul, leaf({3, 4}), leaf({4, 5}));
  {
    Tensor x = leaf({2, 2, 5, 4}), w = leaf({3, 2, 3, 3}), b = leaf({3});
    cases.push_back({"conv2d",
                     [x, w, b] { return weighted_sum(conv2d(x, w, b, 1, 1), 13); },
                     {x, w, b},
                     true});
    Tensor x2 = leaf({1, 1, 5, 5}), w2 = leaf({2, 1, 2, 2});
    cases.push_back({"conv2d stride 2",
                     [x2, w2] { return weighted_sum(conv2d(x2, w2, Tensor(), 2, 0), 14); },
                     {x2, w2},
                     true});
  }
  PrimitiveAttrs a;
  a.axis = 1;
  unary("max_over_axis", PrimitiveKind::max_over_axis, leaf({3, 4, 2}), a, false);
  a.keepdims = true;
  unary("max_over_axis keepdims", PrimitiveKind::max_over_axis, leaf({2, 5}), a, false);
  a.keepdims = false;
  a.axis = 0;
  unary("mean_over_axis", PrimitiveKind::mean_over_axis, leaf({4, 3}), a);
  a.axis = 2;
  unary("sum_over_axis", PrimitiveKind::sum_over_axis, leaf({2, 3, 4}), a);
  {
    Tensor p = leaf({2, 3}), q = leaf({2, 1}), r = leaf({2, 2});
    cases.push_back({"concat_along_axis",
                     [p, q, r] {
                       const Tensor in[] = {p, q, r};
                       PrimitiveAttrs c;
                       c.axis = 1;
                       return weighted_sum(apply_primitive(PrimitiveKind::concat_along_axis, in, c), 15);
                     },
                     {p, q, r},
                     true});
  }
  PrimitiveAttrs s;
  s.axis = 1;
  s.begin = 1;
  s.end = 4;
  unary("slice", PrimitiveKind::slice, leaf({2, 5, 2}), s);
  unary("sigmoid", PrimitiveKind::sigmoid, leaf({3, 4}, -3, 3), {});
  unary("tanh", PrimitiveKind::tanh, leaf({3, 4}, -2, 2), {});
  unary("leaky_relu", PrimitiveKind::leaky_relu, leaf({4, 5}), {}, false);
  unary("log", PrimitiveKind::log, leaf({3, 3}, 0.2, 2.0), {});
  unary("neg", PrimitiveKind::neg, leaf({5}), {});
  PrimitiveAttrs pw;
  pw.exponent = 2.0;
  unary("power 2", PrimitiveKind::power, leaf({4}), pw);
  pw.exponent = 2.5;
  unary("power 2.5", PrimitiveKind::power, leaf({4}, 0.1, 1.5), pw);
  PrimitiveAttrs bc;
  bc.shape = {3, 2, 4};
  unary("broadcast", PrimitiveKind::broadcast, leaf({2, 1}), bc);
  PrimitiveAttrs rs;
  rs.shape = {6, 2};
  unary("reshape", PrimitiveKind::reshape, leaf({3, 4}), rs);
  PrimitiveAttrs mp;
  mp.window = 2;
  unary("max_pool2d", PrimitiveKind::max_pool2d, leaf({2, 2, 4, 4}), mp, false);
  PrimitiveAttrs cl;
  cl.lo = -0.5;
  cl.hi = 0.5;
  {
    // Keep values away from the clamp boundaries, where the derivative jumps.
    std::vector<double> v{-0.9, -0.3, 0.1, 0.45, 0.8, -0.1};
    unary("clamp", PrimitiveKind::clamp, Tensor({6}, v, true), cl, false);
  }
  return cases;
}

// Model layers and the full objective on a reduced architecture: N=2
// cameras, T=3 frames, 8x8 pixels.
inline std::vector<GradCase> layer_grad_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<GradCase> cases;
  const ModelConfig cfg = tiny_config();
  ParamStore params = init_params(cfg, seed);
  auto leaves_with = [&](std::initializer_list<std::string_view> prefixes) {
    std::vector<Tensor> out;
    for (auto& [path, t] : params)
      for (auto p : prefixes)
        if (path.rfind(p, 0) == 0) out.push_back(t);
    return out;
  };

  {
    Tensor x = random_tensor({3, 4}, rng, -1, 1, true), w = random_tensor({4, 2}, rng, -1, 1, true),
           b = random_tensor({2}, rng, -1, 1, true);
    cases.push_back({"linear", [x, w, b] { return weighted_sum(linear_forward(x, w, b), 21); }, {x, w, b}, true});
  }
  {
    Tensor frames = random_tensor({2, 1, 8, 8}, rng, 0, 1, true);
    auto leaves = leaves_with({"encoder."});
    leaves.push_back(frames);
    cases.push_back({"conv encoder",
                     [frames, params, cfg] { return weighted_sum(conv_encoder_forward(frames, params, cfg), 22); },
                     leaves, false});
  }
  {
    ParamStore lstm;
    const std::size_t F = 4, H = 3;
    for (const char* dir : {"fwd", "bwd"}) {
      lstm.insert(std::string("lstm.") + dir + ".w_ih", random_tensor({F, 4 * H}, rng, -0.5, 0.5));
      lstm.insert(std::string("lstm.") + dir + ".w_hh", random_tensor({H, 4 * H}, rng, -0.5, 0.5));
      lstm.insert(std::string("lstm.") + dir + ".bias", random_tensor({4 * H}, rng, -0.5, 0.5));
    }
    Tensor seq = random_tensor({3, F}, rng, -1, 1, true);
    std::vector<Tensor> leaves{seq};
    for (auto& [path, t] : lstm) leaves.push_back(t);
    cases.push_back({"bilstm T=3 F=4 H=3",
                     [seq, lstm] { return weighted_sum(bilstm_forward(seq, lstm), 23); }, leaves, true});
  }
  {
    Tensor feats = random_tensor({3, 2, cfg.feature_dim}, rng, -1, 1, true);
    cases.push_back({"spatial aggregation",
                     [feats, cfg] { return weighted_sum(aggregate_spatial(feats, cfg), 24); }, {feats}, false});
  }
  {
    Tensor ctx = random_tensor({3, 2, cfg.context_dim()}, rng, -1, 1, true);
    auto leaves = leaves_with({"lstm."});
    leaves.push_back(ctx);
    cases.push_back({"sequential aggregation",
                     [ctx, params, cfg] { return weighted_sum(aggregate_sequential(ctx, params, cfg), 25); },
                     leaves, true});
  }
  {
    Tensor agg = random_tensor({3, 2, cfg.head_input_dim()}, rng, -1, 1, true);
    auto leaves = leaves_with({"head."});
    leaves.push_back(agg);
    cases.push_back({"head",
                     [agg, params, cfg] {
                       Rng unused(0);
                       return weighted_sum(predict_probabilities(agg, params, cfg, false, unused), 26);
                     },
                     leaves, false});
  }
  {
    const MultiCamSequence seq = random_sequence(3, 2, 8, 8, rng, "grad");
    const Tensor frames = frames_tensor(seq, 0, 3);
    const Tensor mask = one_hot_mask(seq.labels, 2);
    std::vector<Tensor> leaves;
    for (auto& [path, t] : params) leaves.push_back(t);
    cases.push_back({"focal loss end to end",
                     [frames, mask, params, cfg] {
                       Rng unused(0);
                       return focal_loss(forward_probs(frames, params, cfg, false, unused), mask);
                     },
                     leaves, false, 12});
  }
  return cases;
}

inline GradCheckResult run_case(GradCase& c, double eps = 1e-5) {
  return finite_difference_check(c.objective, c.leaves, eps, c.max_coords);
}

}  // namespace csel::testing
