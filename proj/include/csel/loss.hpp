#pragma once

#include <span>
#include <vector>

#include "csel/tensor.hpp"

namespace csel {

struct LossConfig {
  // Focusing parameter; 0 reduces the focal loss to binary cross entropy.
  double gamma = 2.0;
  // Probabilities are clamped to [eps, 1 - eps] before the logarithm.
  double prob_clamp_eps = 1e-7;

  void validate() const;
};

// One-hot ground-truth mask with the camera axis last: labels[t] -> row t.
Tensor one_hot_mask(std::span<const int> labels, std::size_t num_cameras);

// Mean over every (frame, camera) entry (and batch element) of
// -(1 - q)^gamma * log(q), where q = p at the selected camera and 1 - p
// elsewhere. `probs` and `gt_mask` share a shape whose last axis is the
// camera axis; each row of the mask must be one-hot.
Tensor focal_loss(const Tensor& probs, const Tensor& gt_mask, const LossConfig& cfg = {});

// Mean of -log(q) with the same clamping.
Tensor binary_cross_entropy(const Tensor& probs, const Tensor& gt_mask, const LossConfig& cfg = {});

struct ImbalanceRatio {
  std::size_t selected = 1;
  std::size_t not_selected = 1;
  bool operator==(const ImbalanceRatio&) const = default;
};

// Selected : not-selected entries per frame for N cameras, i.e. 1 : N-1.
ImbalanceRatio label_imbalance(std::size_t num_cameras);

// Dice overlap 2|P & G| / (|P| + |G|) of the one-hot selection masks built
// from two label sequences. With one camera per frame this equals the
// fraction of frames where the labels agree.
double dice_score(std::span<const int> predicted, std::span<const int> truth,
                  std::size_t num_cameras);

// Number of t with labels[t] != labels[t-1].
std::size_t switch_count(std::span<const int> labels);

}  // namespace csel
