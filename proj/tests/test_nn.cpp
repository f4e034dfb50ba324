#include <doctest.h>

#include <cmath>

#include "csel/nn.hpp"
#include "test_util.hpp"

using namespace csel;
using csel::testing::random_tensor;
using csel::testing::tiny_config;
using csel::testing::to_vec;

TEST_CASE("linear layer examples") {
  CHECK(to_vec(linear_forward(Tensor({1, 2}, {1, 0}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0}))) ==
        std::vector<double>{1, 0});
  CHECK(linear_forward(Tensor({1, 2}, {1, 2}), Tensor({2, 1}, {1, 1}), Tensor({1}, {1})).item() == 4.0);

  Tensor b({2}, {0.3, -0.1}, true);
  Rng rng(1);
  backward(sum_all(linear_forward(random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), b)));
  CHECK(to_vec(Tensor(b.shape(), {b.grad().begin(), b.grad().end()})) == std::vector<double>{3, 3});
  CHECK_THROWS_AS(linear_forward(Tensor({1, 3}, {1, 2, 3}), Tensor({2, 2}, {1, 0, 0, 1}), Tensor({2}, {0, 0})),
                  ShapeError);
}

TEST_CASE("conv encoder contract") {
  const ModelConfig cfg;  // default 1x32x32 -> 128
  const ParamStore params = init_params(cfg, 3);
  const Tensor zero = Tensor::zeros({1, 32, 32});
  const Tensor f = conv_encoder_forward(zero, params, cfg);
  CHECK(f.shape() == Shape{128});
  for (double v : f.data()) CHECK(std::isfinite(v));

  Rng rng(2);
  const Tensor frame = random_tensor({1, 1, 32, 32}, rng, 0, 1);
  const Tensor pair = concat({frame, frame}, 0);
  const Tensor out = conv_encoder_forward(pair, params, cfg);
  CHECK(to_vec(slice(out, 0, 0, 1)) == to_vec(slice(out, 0, 1, 2)));
  CHECK_THROWS_AS(conv_encoder_forward(Tensor::zeros({1, 16, 16}), params, cfg), ShapeError);
}

namespace {

ParamStore random_lstm(std::size_t F, std::size_t H, Rng& rng) {
  ParamStore p;
  for (const char* dir : {"fwd", "bwd"}) {
    p.insert(std::string("lstm.") + dir + ".w_ih", random_tensor({F, 4 * H}, rng, -0.5, 0.5));
    p.insert(std::string("lstm.") + dir + ".w_hh", random_tensor({H, 4 * H}, rng, -0.5, 0.5));
    p.insert(std::string("lstm.") + dir + ".bias", random_tensor({4 * H}, rng, -0.5, 0.5));
  }
  return p;
}

}  // namespace

TEST_CASE("bilstm shapes and the reversal symmetry") {
  Rng rng(3);
  const std::size_t F = 4, H = 3, T = 3;
  ParamStore p = random_lstm(F, H, rng);
  CHECK(bilstm_forward(random_tensor({1, F}, rng), p).shape() == Shape{1, 2 * H});
  CHECK_THROWS(bilstm_forward(Tensor::zeros({0, F}), p));

  const Tensor x = random_tensor({T, F}, rng);
  const Tensor y = bilstm_forward(x, p);
  CHECK(y.shape() == Shape{T, 2 * H});

  // Reverse time and swap the direction blocks.
  std::vector<Tensor> rows;
  for (std::size_t t = T; t-- > 0;) rows.push_back(slice(x, 0, t, t + 1));
  const Tensor x_rev = concat(rows, 0);
  ParamStore swapped;
  for (const char* leaf : {"w_ih", "w_hh", "bias"}) {
    swapped.insert(std::string("lstm.fwd.") + leaf, p.at(std::string("lstm.bwd.") + leaf).detach());
    swapped.insert(std::string("lstm.bwd.") + leaf, p.at(std::string("lstm.fwd.") + leaf).detach());
  }
  const Tensor y_rev = bilstm_forward(x_rev, swapped);
  for (std::size_t t = 0; t < T; ++t) {
    const auto a = to_vec(slice(y, 0, t, t + 1));
    const auto b = to_vec(slice(y_rev, 0, T - 1 - t, T - t));
    // Row t of the original is [fwd_t, bwd_t]; the mirrored run has them swapped.
    for (std::size_t h = 0; h < H; ++h) {
      CHECK(a[h] == doctest::Approx(b[H + h]).epsilon(1e-14));
      CHECK(a[H + h] == doctest::Approx(b[h]).epsilon(1e-14));
    }
  }
}

TEST_CASE("bilstm streams are independent") {
  Rng rng(4);
  ParamStore p = random_lstm(3, 2, rng);
  const Tensor a = random_tensor({4, 1, 3}, rng), b = random_tensor({4, 1, 3}, rng);
  const Tensor both = bilstm_forward(concat({a, b}, 1), p);
  const Tensor only_b = bilstm_forward(reshape(b, {4, 3}), p);
  CHECK(to_vec(slice(both, 1, 1, 2)) == to_vec(only_b));
}

TEST_CASE("dropout") {
  Rng rng(5);
  const Tensor x = random_tensor({10, 10}, rng);
  CHECK(to_vec(dropout_forward(x, 0.0, true, rng)) == to_vec(x));
  CHECK(to_vec(dropout_forward(x, 0.7, false, rng)) == to_vec(x));
  const Tensor ones = Tensor::full({10000}, 1.0);
  const double mean = mean_all(dropout_forward(ones, 0.5, true, rng)).item();
  CHECK(std::abs(mean - 1.0) < 0.05);
  const Tensor dropped = dropout_forward(ones, 0.5, true, rng);
  for (double v : dropped.data()) CHECK((v == 0.0 || v == 2.0));
  CHECK_THROWS_AS(dropout_forward(x, 1.0, true, rng), std::invalid_argument);
  CHECK_THROWS_AS(dropout_forward(x, -0.1, true, rng), std::invalid_argument);
}

TEST_CASE("adam step") {
  SUBCASE("zero gradient leaves parameters unchanged") {
    ParamStore p;
    p.insert("w", Tensor({3}, {0.5, -1, 2}));
    AdamState s;
    p.at("w").accumulate_grad(std::vector<double>{0, 0, 0});
    adam_step(p, s);
    CHECK(to_vec(p.at("w")) == std::vector<double>{0.5, -1, 2});
    CHECK(s.step == 1);
    CHECK_FALSE(p.at("w").has_grad());
  }
  SUBCASE("first step moves by about lr") {
    ParamStore p;
    p.insert("w", Tensor::scalar(0.0));
    AdamState s;
    s.lr = 0.1;
    p.at("w").accumulate_grad(std::vector<double>{1.0});
    adam_step(p, s);
    CHECK(p.at("w").item() == doctest::Approx(-0.1 * 1.0 / (1.0 + 1e-8)).epsilon(1e-12));
    const double before = p.at("w").item();
    p.at("w").accumulate_grad(std::vector<double>{1.0});
    adam_step(p, s);
    CHECK(std::abs(p.at("w").item() - before) <= 0.1);
  }
  SUBCASE("lr zero is the identity") {
    Rng rng(6);
    ParamStore p;
    p.insert("a", random_tensor({4, 3}, rng));
    p.insert("b", random_tensor({2}, rng));
    const ParamStore before = p.clone();
    AdamState s;
    s.lr = 0.0;
    for (int i = 0; i < 3; ++i) {
      for (auto& [path, t] : p) t.accumulate_grad(to_vec(random_tensor(t.shape(), rng)));
      adam_step(p, s);
    }
    CHECK(p.identical_to(before));
  }
  SUBCASE("missing gradients are listed by path") {
    ParamStore p;
    p.insert("x.weight", Tensor::scalar(1.0));
    p.insert("y.bias", Tensor::scalar(1.0));
    p.at("x.weight").accumulate_grad(std::vector<double>{1.0});
    AdamState s;
    try {
      adam_step(p, s);
      FAIL("expected MissingGradientError");
    } catch (const MissingGradientError& e) {
      CHECK(std::string(e.what()).find("y.bias") != std::string::npos);
      CHECK(std::string(e.what()).find("x.weight") == std::string::npos);
    }
  }
}

TEST_CASE("param store order and uniqueness") {
  ParamStore p;
  p.insert("b", Tensor::scalar(1));
  p.insert("a.z", Tensor::scalar(1));
  p.insert("a.b", Tensor::scalar(1));
  CHECK(p.paths() == std::vector<std::string>{"a.b", "a.z", "b"});
  CHECK(p.at("b").requires_grad());
  CHECK_THROWS_AS(p.insert("b", Tensor::scalar(2)), std::invalid_argument);
}

TEST_CASE("init params") {
  const ModelConfig cfg;
  const ParamStore a = init_params(cfg, 7), b = init_params(cfg, 7), c = init_params(cfg, 8);
  CHECK(a.identical_to(b));
  CHECK_FALSE(a.identical_to(c));
  for (const auto& [path, t] : a) {
    const double bound = init_bound(cfg, path);
    for (double v : t.data()) REQUIRE_MESSAGE(std::abs(v) <= bound, path);
  }
  // Forget gate starts at 1, the other LSTM gates at 0.
  const auto bias = a.at("lstm.fwd.bias").data();
  const std::size_t H = cfg.rnn_hidden;
  CHECK(bias[0] == 0.0);
  CHECK(bias[H] == 1.0);
  CHECK(bias[2 * H - 1] == 1.0);
  CHECK(bias[2 * H] == 0.0);
  CHECK(a.contains("encoder.conv1.weight"));
  CHECK(a.contains("head.out.bias"));

  const ParamStore tiny = init_params(tiny_config(false, false), 1);
  CHECK_FALSE(tiny.contains("lstm.fwd.w_ih"));
}
