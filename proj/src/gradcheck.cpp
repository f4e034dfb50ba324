#include "csel/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace csel {
namespace {

double evaluate(const std::function<Tensor()>& f) {
  NoGradGuard no_grad;
  const double v = f().item();
  if (!std::isfinite(v))
    throw NonFiniteError("finite_difference_check: objective is non-finite at a perturbed point");
  return v;
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<Tensor()>& f,
                                        std::span<Tensor> leaves, double eps,
                                        std::size_t max_coords_per_leaf) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("finite_difference_check: eps " + std::to_string(eps) +
                                " outside [1e-7, 1e-3]");
  for (Tensor& leaf : leaves) {
    leaf.set_requires_grad(true);
    leaf.zero_grad();
  }
  const Tensor loss = f();
  if (!std::isfinite(loss.item()))
    throw NonFiniteError("finite_difference_check: objective is non-finite");
  backward(loss);

  GradCheckResult result;
  for (Tensor& leaf : leaves) {
    const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
    const std::size_t n = leaf.numel();
    const std::size_t step =
        (max_coords_per_leaf == 0 || n <= max_coords_per_leaf) ? 1 : (n + max_coords_per_leaf - 1) / max_coords_per_leaf;
    for (std::size_t i = 0; i < n; i += step) {
      auto values = leaf.mutable_data();
      const double saved = values[i];
      values[i] = saved + eps;
      const double plus = evaluate(f);
      values[i] = saved - eps;
      const double minus = evaluate(f);
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(analytic[i]));
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.coordinates;
    }
  }
  return result;
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double eps) {
  Tensor leaves[] = {x};
  return finite_difference_check([&] { return f(x); }, leaves, eps).max_rel_error;
}

}  // namespace csel
