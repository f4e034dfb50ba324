#include "csel/loss.hpp"

#include <stdexcept>
#include <string>

namespace csel {
namespace {

void check_mask(const Tensor& probs, const Tensor& mask) {
  if (probs.shape() != mask.shape())
    throw ShapeError("loss: probabilities " + shape_str(probs.shape()) + " and mask " +
                     shape_str(mask.shape()) + " differ");
  if (probs.rank() == 0) throw ShapeError("loss: probabilities need a camera axis");
  const std::size_t cams = probs.shape().back();
  const auto m = mask.data();
  for (std::size_t row = 0; row < m.size() / cams; ++row) {
    std::size_t ones = 0;
    for (std::size_t n = 0; n < cams; ++n) {
      const double v = m[row * cams + n];
      if (v == 1.0) {
        ++ones;
      } else if (v != 0.0) {
        throw std::invalid_argument("loss: mask entry " + std::to_string(v) + " is not 0/1");
      }
    }
    if (ones != 1)
      throw std::invalid_argument("loss: mask row " + std::to_string(row) + " has " +
                                  std::to_string(ones) + " selected cameras, expected one-hot");
  }
}

// q = p * mask + (1 - p) * (1 - mask), from clamped probabilities.
Tensor selected_likelihood(const Tensor& probs, const Tensor& mask, const LossConfig& cfg) {
  cfg.validate();
  check_mask(probs, mask);
  const Tensor p = clamp(probs, cfg.prob_clamp_eps, 1.0 - cfg.prob_clamp_eps);
  const Tensor inv_mask = add_scalar(neg(mask), 1.0);
  return add(mul(p, mask), mul(add_scalar(neg(p), 1.0), inv_mask));
}

}  // namespace

void LossConfig::validate() const {
  if (!(gamma >= 0.0)) throw std::invalid_argument("loss: gamma must be >= 0");
  if (!(prob_clamp_eps > 0.0 && prob_clamp_eps < 0.5))
    throw std::invalid_argument("loss: prob_clamp_eps must lie in (0, 0.5)");
}

Tensor one_hot_mask(std::span<const int> labels, std::size_t num_cameras) {
  std::vector<double> values(labels.size() * num_cameras, 0.0);
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (labels[t] < 0 || static_cast<std::size_t>(labels[t]) >= num_cameras)
      throw std::out_of_range("one_hot_mask: label " + std::to_string(labels[t]) + " outside [0, " +
                              std::to_string(num_cameras) + ")");
    values[t * num_cameras + static_cast<std::size_t>(labels[t])] = 1.0;
  }
  return Tensor({labels.size(), num_cameras}, std::move(values));
}

Tensor focal_loss(const Tensor& probs, const Tensor& gt_mask, const LossConfig& cfg) {
  const Tensor q = selected_likelihood(probs, gt_mask, cfg);
  const Tensor weight = power(add_scalar(neg(q), 1.0), cfg.gamma);
  return neg(mean_all(mul(weight, log(q))));
}

Tensor binary_cross_entropy(const Tensor& probs, const Tensor& gt_mask, const LossConfig& cfg) {
  const Tensor q = selected_likelihood(probs, gt_mask, cfg);
  return neg(mean_all(log(q)));
}

ImbalanceRatio label_imbalance(std::size_t num_cameras) {
  if (num_cameras < 2)
    throw std::invalid_argument("label_imbalance: need at least two cameras, got " +
                                std::to_string(num_cameras));
  return {1, num_cameras - 1};
}

double dice_score(std::span<const int> predicted, std::span<const int> truth,
                  std::size_t num_cameras) {
  if (predicted.size() != truth.size())
    throw std::invalid_argument("dice_score: length mismatch " + std::to_string(predicted.size()) +
                                " vs " + std::to_string(truth.size()));
  auto check = [num_cameras](int y) {
    if (y < 0 || static_cast<std::size_t>(y) >= num_cameras)
      throw std::out_of_range("dice_score: label " + std::to_string(y) + " outside [0, " +
                              std::to_string(num_cameras) + ")");
  };
  if (predicted.empty()) return 1.0;
  std::size_t overlap = 0, pred_total = 0, truth_total = 0;
  for (std::size_t t = 0; t < predicted.size(); ++t) {
    check(predicted[t]);
    check(truth[t]);
    for (std::size_t n = 0; n < num_cameras; ++n) {
      const bool p = static_cast<std::size_t>(predicted[t]) == n;
      const bool g = static_cast<std::size_t>(truth[t]) == n;
      overlap += (p && g) ? 1 : 0;
      pred_total += p ? 1 : 0;
      truth_total += g ? 1 : 0;
    }
  }
  return 2.0 * static_cast<double>(overlap) / static_cast<double>(pred_total + truth_total);
}

std::size_t switch_count(std::span<const int> labels) {
  std::size_t n = 0;
  for (std::size_t t = 1; t < labels.size(); ++t) n += labels[t] != labels[t - 1] ? 1 : 0;
  return n;
}

}  // namespace csel
