#pragma once

#include <functional>
#include <span>
#include <stdexcept>

#include "csel/tensor.hpp"

namespace csel {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

// Compares backward() against central differences. The error per coordinate
// is |analytic - numeric| / max(1, |analytic|); the maximum is returned.
// `f` must be deterministic and return a scalar. eps must lie in [1e-7, 1e-3].
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               double eps = 1e-5);

// Same check over several leaves of one objective (e.g. every parameter of a
// model). When `max_coords_per_leaf` is non-zero, larger leaves are probed on
// an evenly strided subset of coordinates.
GradCheckResult finite_difference_check(const std::function<Tensor()>& f,
                                        std::span<Tensor> leaves, double eps = 1e-5,
                                        std::size_t max_coords_per_leaf = 0);

}  // namespace csel
