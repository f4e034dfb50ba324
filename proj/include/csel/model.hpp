#pragma once

// The camera-selection network: shared per-camera encoder, order-invariant
// spatial aggregation (elementwise max over cameras, concatenated back onto
// each camera), a shared BiLSTM run independently per camera stream, and an
// MLP head with a sigmoid that scores every (frame, camera) pair.
//
// Tensors use the layout [T x N x ...] for a single sequence or
// [T x B x N x ...] for a batch of equally long fragments. The camera axis is
// always second to last for features and last for probabilities.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "csel/model_config.hpp"
#include "csel/nn.hpp"
#include "csel/rng.hpp"
#include "csel/tensor.hpp"

namespace csel {

struct MultiCamSequence {
  std::string id;
  std::size_t scene = 0;
  std::size_t num_frames = 0;
  std::size_t num_cameras = 0;
  std::size_t channels = 1;
  std::size_t height = 0;
  std::size_t width = 0;
  // 8-bit intensities laid out [T][N][C][H][W].
  std::vector<std::uint8_t> pixels;
  // Ground-truth camera per frame, in [0, N).
  std::vector<int> labels;
  // Oracle visibility [T][N] in [0, 1]; empty for real recordings.
  std::vector<double> visibility;

  std::size_t frame_size() const { return channels * height * width; }
  std::span<const std::uint8_t> frame(std::size_t t, std::size_t n) const;
  std::span<std::uint8_t> frame(std::size_t t, std::size_t n);
  bool has_visibility() const { return !visibility.empty(); }
  double visibility_at(std::size_t t, std::size_t n) const { return visibility[t * num_cameras + n]; }

  // Throws DataError on inconsistent extents or labels.
  void validate() const;

  bool operator==(const MultiCamSequence&) const = default;
};

struct SelectionOutput {
  std::size_t num_frames = 0;
  std::size_t num_cameras = 0;
  // p[t][n] in (0, 1); rows are not normalized.
  std::vector<double> probs;
  std::vector<int> labels;

  double prob(std::size_t t, std::size_t n) const { return probs[t * num_cameras + n]; }
};

// Per-row argmax with the lowest index winning ties.
std::vector<int> decode_labels(std::span<const double> probs, std::size_t num_frames,
                               std::size_t num_cameras);

// Frames [begin, begin+len) normalized to [0, 1]: [len x N x C x H x W].
Tensor frames_tensor(const MultiCamSequence& seq, std::size_t begin, std::size_t len);
// Stacks equally shaped fragments into [T x B x N x C x H x W].
Tensor stack_fragments(std::span<const Tensor> fragments);

// [T x (B x) N x C x H x W] -> [T x (B x) N x D]
Tensor extract_features(const Tensor& frames, const ParamStore& params, const ModelConfig& cfg);
Tensor extract_features(const MultiCamSequence& seq, const ParamStore& params,
                        const ModelConfig& cfg);

// [.. x N x D] -> [.. x N x 2D], or unchanged when use_spatial is off.
Tensor aggregate_spatial(const Tensor& features, const ModelConfig& cfg);

// [T x (B x) N x F] -> [T x (B x) N x 2H], or unchanged when use_sequential is off.
Tensor aggregate_sequential(const Tensor& context, const ParamStore& params,
                            const ModelConfig& cfg);

// [.. x N x F] -> [.. x N] probabilities.
Tensor predict_probabilities(const Tensor& aggregated, const ParamStore& params,
                             const ModelConfig& cfg, bool training, Rng& rng);

// Full composition on a prepared frame tensor; returns [T x (B x) N].
Tensor forward_probs(const Tensor& frames, const ParamStore& params, const ModelConfig& cfg,
                     bool training, Rng& rng);

// Runs the network over a whole sequence. At inference (training == false)
// the sequence is cut into consecutive non-overlapping windows of
// cfg.window_len frames; the last window keeps its natural length.
SelectionOutput forward(const MultiCamSequence& seq, const ParamStore& params,
                        const ModelConfig& cfg, bool training, Rng& rng);

// Inference convenience: training = false, no gradient recording.
SelectionOutput infer(const MultiCamSequence& seq, const ParamStore& params,
                      const ModelConfig& cfg);

}  // namespace csel
