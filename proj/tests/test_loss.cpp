#include <doctest.h>

#include <cmath>

#include "csel/gradcheck.hpp"
#include "csel/loss.hpp"
#include "test_util.hpp"

using namespace csel;
using namespace csel::testing;

namespace {

Tensor random_probs(const Shape& s, Rng& rng) { return random_tensor(s, rng, 0.01, 0.99); }

std::vector<int> random_labels(std::size_t T, std::size_t N, Rng& rng) {
  std::vector<int> y(T);
  for (int& v : y) v = static_cast<int>(rng.index(N));
  return y;
}

}  // namespace

TEST_CASE("focal loss scalar example") {
  const Tensor p({1, 2}, {0.5, 0.5});
  const Tensor m({1, 2}, {1, 0});
  // Both entries have q = 0.5, so the mean equals the single-term value.
  CHECK(focal_loss(p, m).item() == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-15));
  CHECK(0.25 * std::log(2.0) == doctest::Approx(0.173287).epsilon(1e-6));
}

TEST_CASE("bce at one half is log 2") {
  Rng rng(1);
  const auto y = random_labels(6, 4, rng);
  CHECK(binary_cross_entropy(Tensor::full({6, 4}, 0.5), one_hot_mask(y, 4)).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));
}

TEST_CASE("perfect clamped predictions give almost zero loss") {
  const double eps = 1e-7;
  const Tensor m = one_hot_mask(std::vector<int>{0, 2, 1}, 3);
  std::vector<double> p;
  for (double v : m.data()) p.push_back(v == 1.0 ? 1.0 - eps : eps);
  const Tensor probs(m.shape(), p);
  CHECK(focal_loss(probs, m).item() <= std::pow(eps, 2.0) * -std::log(1.0 - eps) + 1e-30);
  CHECK(binary_cross_entropy(probs, m).item() < 1e-6);
  // Exact 0/1 inputs are clamped rather than producing infinities.
  CHECK(std::isfinite(binary_cross_entropy(m, m).item()));
}

TEST_CASE("gamma zero reduces to bce and focal never exceeds bce") {
  Rng rng(2);
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = 1 + rng.index(6), N = 2 + rng.index(4);
    const Tensor p = random_probs({T, N}, rng);
    const Tensor m = one_hot_mask(random_labels(T, N, rng), N);
    const double bce = binary_cross_entropy(p, m).item();
    CHECK(std::abs(focal_loss(p, m, {0.0, 1e-7}).item() - bce) <= 1e-12);
    const double focal = focal_loss(p, m).item();
    CHECK(focal >= 0.0);
    CHECK(focal <= bce);
  }
}

TEST_CASE("focal loss is camera permutation invariant") {
  Rng rng(3);
  const std::size_t T = 5, N = 4;
  const Tensor p = random_probs({T, N}, rng);
  const auto y = random_labels(T, N, rng);
  const auto perm = random_permutation(N, rng);
  std::vector<double> pp(T * N);
  std::vector<int> yp(T);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n = 0; n < N; ++n) pp[t * N + n] = p.data()[t * N + perm[n]];
    for (std::size_t n = 0; n < N; ++n)
      if (perm[n] == static_cast<std::size_t>(y[t])) yp[t] = static_cast<int>(n);
  }
  CHECK(focal_loss(Tensor({T, N}, pp), one_hot_mask(yp, N)).item() ==
        doctest::Approx(focal_loss(p, one_hot_mask(y, N)).item()).epsilon(1e-14));
}

TEST_CASE("focal gradient matches finite differences away from the clamp") {
  Rng rng(4);
  const Tensor m = one_hot_mask(random_labels(4, 3, rng), 3);
  const double err = finite_difference_check([&](const Tensor& p) { return focal_loss(p, m); },
                                             random_tensor({4, 3}, rng, 0.05, 0.95));
  CHECK(err < 1e-5);
  // Batched input [T x B x N].
  const Tensor mb = reshape(one_hot_mask(random_labels(6, 3, rng), 3), {3, 2, 3});
  CHECK(finite_difference_check([&](const Tensor& p) { return focal_loss(p, mb); },
                                random_tensor({3, 2, 3}, rng, 0.05, 0.95)) < 1e-5);
}

TEST_CASE("bce gradient through the sigmoid at the selected entry is p - 1") {
  Tensor logits({1, 2}, {0.3, -0.7}, true);
  const Tensor m({1, 2}, {1, 0});
  const Tensor p = sigmoid(logits);
  backward(binary_cross_entropy(p, m));
  // The mean over two entries scales each gradient by 1/2.
  CHECK(logits.grad()[0] * 2.0 == doctest::Approx(p.data()[0] - 1.0).epsilon(1e-12));
  CHECK(logits.grad()[1] * 2.0 == doctest::Approx(p.data()[1]).epsilon(1e-12));
}

TEST_CASE("loss input validation") {
  CHECK_THROWS_AS(focal_loss(Tensor::full({2, 3}, 0.5), Tensor::full({2, 2}, 0.0)), ShapeError);
  CHECK_THROWS_AS(focal_loss(Tensor::full({1, 2}, 0.5), Tensor({1, 2}, {1, 1})), std::invalid_argument);
  CHECK_THROWS_AS(focal_loss(Tensor::full({1, 2}, 0.5), Tensor({1, 2}, {0, 0})), std::invalid_argument);
  CHECK_THROWS(LossConfig{-1.0, 1e-7}.validate());
  CHECK_THROWS(LossConfig{2.0, 0.5}.validate());
  CHECK_THROWS(one_hot_mask(std::vector<int>{3}, 3));
}

TEST_CASE("label imbalance") {
  CHECK(label_imbalance(4) == ImbalanceRatio{1, 3});
  CHECK(label_imbalance(2) == ImbalanceRatio{1, 1});
  CHECK(label_imbalance(5) == ImbalanceRatio{1, 4});
  CHECK_THROWS(label_imbalance(1));
  // Matches the entry counts of a one-hot mask.
  const Tensor m = one_hot_mask(std::vector<int>{0, 3, 1, 2, 2}, 4);
  double ones = 0;
  for (double v : m.data()) ones += v;
  CHECK(ones * 3 == static_cast<double>(m.numel()) - ones);
}

TEST_CASE("dice score") {
  const std::vector<int> a{0, 1, 2, 1}, b{0, 2, 2, 0};
  CHECK(dice_score(a, a, 3) == 1.0);
  CHECK(dice_score(std::vector<int>{0, 0}, std::vector<int>{1, 1}, 2) == 0.0);
  CHECK(dice_score(a, b, 3) == 0.5);
  CHECK_THROWS(dice_score(a, std::vector<int>{0}, 3));
  CHECK_THROWS(dice_score(a, std::vector<int>{0, 1, 3, 0}, 3));

  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    const std::size_t T = 1 + rng.index(30), N = 2 + rng.index(4);
    const auto x = random_labels(T, N, rng), y = random_labels(T, N, rng);
    const double d = dice_score(x, y, N);
    CHECK(d == dice_score(y, x, N));
    std::size_t same = 0;
    for (std::size_t t = 0; t < T; ++t) same += x[t] == y[t];
    CHECK(d == doctest::Approx(static_cast<double>(same) / static_cast<double>(T)).epsilon(1e-15));
    const auto perm = random_permutation(N, rng);
    std::vector<int> xp(T), yp(T);
    for (std::size_t t = 0; t < T; ++t) {
      xp[t] = static_cast<int>(perm[static_cast<std::size_t>(x[t])]);
      yp[t] = static_cast<int>(perm[static_cast<std::size_t>(y[t])]);
    }
    CHECK(dice_score(xp, yp, N) == d);
  }
}

TEST_CASE("switch count") {
  CHECK(switch_count(std::vector<int>{}) == 0);
  CHECK(switch_count(std::vector<int>{1, 1, 0, 0, 2, 1}) == 3);
}
