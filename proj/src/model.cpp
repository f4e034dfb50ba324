#include "csel/model.hpp"

#include <algorithm>

#include "csel/errors.hpp"
#include "csel/json_util.hpp"

namespace csel {

// ---------------------------------------------------------------------------
// ModelConfig

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (frame_channels == 0 || frame_height == 0 || frame_width == 0) fail("frame extents must be positive");
  if (conv_channels.empty()) fail("conv_channels must list at least one block");
  for (std::size_t c : conv_channels)
    if (c == 0) fail("conv_channels entries must be positive");
  const std::size_t factor = std::size_t{1} << conv_channels.size();
  if (frame_height % factor != 0 || frame_width % factor != 0)
    fail("frame extents must be divisible by " + std::to_string(factor) + " (one 2x2 pool per block)");
  if (feature_dim == 0) fail("feature_dim must be positive");
  if (rnn_hidden == 0) fail("rnn_hidden must be positive");
  for (std::size_t w : head_hidden)
    if (w == 0) fail("head_hidden entries must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (window_len == 0) fail("window_len must be positive");
}

std::size_t ModelConfig::encoder_flat_dim() const {
  const std::size_t factor = std::size_t{1} << conv_channels.size();
  return conv_channels.back() * (frame_height / factor) * (frame_width / factor);
}

std::string ModelConfig::variant_name() const {
  if (use_spatial && use_sequential) return "full";
  if (!use_spatial && !use_sequential) return "w/o spa., seq.";
  return use_spatial ? "w/o seq." : "w/o spa.";
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {
      {"frame_channels", cfg.frame_channels},
      {"frame_height", cfg.frame_height},
      {"frame_width", cfg.frame_width},
      {"conv_channels", cfg.conv_channels},
      {"feature_dim", cfg.feature_dim},
      {"rnn_hidden", cfg.rnn_hidden},
      {"head_hidden", cfg.head_hidden},
      {"dropout", cfg.dropout},
      {"use_spatial", cfg.use_spatial},
      {"use_sequential", cfg.use_sequential},
      {"window_len", cfg.window_len},
  };
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  using json_util::read_optional;
  constexpr std::string_view what = "model config";
  json_util::reject_unknown_keys(j,
                                 {"frame_channels", "frame_height", "frame_width", "conv_channels",
                                  "feature_dim", "rnn_hidden", "head_hidden", "dropout",
                                  "use_spatial", "use_sequential", "window_len"},
                                 what);
  ModelConfig cfg;
  read_optional(j, "frame_channels", cfg.frame_channels, what);
  read_optional(j, "frame_height", cfg.frame_height, what);
  read_optional(j, "frame_width", cfg.frame_width, what);
  read_optional(j, "conv_channels", cfg.conv_channels, what);
  read_optional(j, "feature_dim", cfg.feature_dim, what);
  read_optional(j, "rnn_hidden", cfg.rnn_hidden, what);
  read_optional(j, "head_hidden", cfg.head_hidden, what);
  read_optional(j, "dropout", cfg.dropout, what);
  read_optional(j, "use_spatial", cfg.use_spatial, what);
  read_optional(j, "use_sequential", cfg.use_sequential, what);
  read_optional(j, "window_len", cfg.window_len, what);
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// MultiCamSequence

std::span<const std::uint8_t> MultiCamSequence::frame(std::size_t t, std::size_t n) const {
  return std::span<const std::uint8_t>(pixels).subspan((t * num_cameras + n) * frame_size(),
                                                       frame_size());
}

std::span<std::uint8_t> MultiCamSequence::frame(std::size_t t, std::size_t n) {
  return std::span<std::uint8_t>(pixels).subspan((t * num_cameras + n) * frame_size(), frame_size());
}

void MultiCamSequence::validate() const {
  auto fail = [this](const std::string& msg) { throw DataError("sequence " + id + ": " + msg); };
  if (num_cameras < 2) fail("needs at least two cameras");
  if (num_frames < 1) fail("needs at least one frame");
  if (pixels.size() != num_frames * num_cameras * frame_size()) fail("pixel buffer size mismatch");
  if (labels.size() != num_frames) fail("label count does not match frame count");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= num_cameras)
      fail("label " + std::to_string(y) + " outside [0, " + std::to_string(num_cameras) + ")");
  if (!visibility.empty() && visibility.size() != num_frames * num_cameras)
    fail("visibility size mismatch");
}

// ---------------------------------------------------------------------------

std::vector<int> decode_labels(std::span<const double> probs, std::size_t num_frames,
                               std::size_t num_cameras) {
  std::vector<int> labels(num_frames, 0);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const auto row = probs.subspan(t * num_cameras, num_cameras);
    // max_element returns the first maximum, which is the lowest index.
    labels[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return labels;
}

Tensor frames_tensor(const MultiCamSequence& seq, std::size_t begin, std::size_t len) {
  if (len == 0 || begin + len > seq.num_frames)
    throw std::out_of_range("frames_tensor: range [" + std::to_string(begin) + ", " +
                            std::to_string(begin + len) + ") outside sequence of " +
                            std::to_string(seq.num_frames) + " frames");
  const std::size_t per_frame = seq.num_cameras * seq.frame_size();
  std::vector<double> values(len * per_frame);
  const auto src = std::span<const std::uint8_t>(seq.pixels).subspan(begin * per_frame, len * per_frame);
  std::transform(src.begin(), src.end(), values.begin(),
                 [](std::uint8_t p) { return static_cast<double>(p) / 255.0; });
  return Tensor({len, seq.num_cameras, seq.channels, seq.height, seq.width}, std::move(values));
}

Tensor stack_fragments(std::span<const Tensor> fragments) {
  if (fragments.empty()) throw ShapeError("stack_fragments: no fragments");
  const Shape& s = fragments[0].shape();
  std::vector<Tensor> expanded;
  expanded.reserve(fragments.size());
  for (const Tensor& f : fragments) {
    if (f.shape() != s)
      throw ShapeError("stack_fragments: fragment " + shape_str(f.shape()) + " vs " + shape_str(s));
    Shape with_batch = s;
    with_batch.insert(with_batch.begin() + 1, 1);
    expanded.push_back(reshape(f, with_batch));
  }
  NoGradGuard no_grad;
  return concat(expanded, 1);
}

// ---------------------------------------------------------------------------
// Network stages

Tensor extract_features(const Tensor& frames, const ParamStore& params, const ModelConfig& cfg) {
  if (frames.rank() != 5 && frames.rank() != 6)
    throw ShapeError("extract_features: expected T x (B x) N x C x H x W, got " +
                     shape_str(frames.shape()));
  const Shape lead(frames.shape().begin(), frames.shape().end() - 3);
  const Shape image(frames.shape().end() - 3, frames.shape().end());
  const std::size_t count = numel(lead);
  Shape flat{count};
  flat.insert(flat.end(), image.begin(), image.end());
  const Tensor features = conv_encoder_forward(reshape(frames, flat), params, cfg);
  Shape out = lead;
  out.push_back(cfg.feature_dim);
  return reshape(features, out);
}

Tensor extract_features(const MultiCamSequence& seq, const ParamStore& params,
                        const ModelConfig& cfg) {
  return extract_features(frames_tensor(seq, 0, seq.num_frames), params, cfg);
}

Tensor aggregate_spatial(const Tensor& features, const ModelConfig& cfg) {
  if (features.rank() < 2) throw ShapeError("aggregate_spatial: expected .. x N x D, got " + shape_str(features.shape()));
  if (!cfg.use_spatial) return features;
  const std::size_t camera_axis = features.rank() - 2;
  const Tensor global = max_over_axis(features, camera_axis, true);
  return concat({features, broadcast(global, features.shape())}, features.rank() - 1);
}

Tensor aggregate_sequential(const Tensor& context, const ParamStore& params,
                            const ModelConfig& cfg) {
  if (context.rank() != 3 && context.rank() != 4)
    throw ShapeError("aggregate_sequential: expected T x (B x) N x F, got " + shape_str(context.shape()));
  if (context.extent(0) == 0) throw ShapeError("aggregate_sequential: empty sequence");
  if (!cfg.use_sequential) return context;
  const std::size_t steps = context.extent(0);
  const std::size_t width = context.shape().back();
  const std::size_t streams = context.numel() / (steps * width);
  const Tensor out = bilstm_forward(reshape(context, {steps, streams, width}), params, "lstm");
  Shape shape = context.shape();
  shape.back() = out.extent(2);
  return reshape(out, shape);
}

Tensor predict_probabilities(const Tensor& aggregated, const ParamStore& params,
                             const ModelConfig& cfg, bool training, Rng& rng) {
  if (aggregated.rank() < 2)
    throw ShapeError("predict_probabilities: expected .. x N x F, got " + shape_str(aggregated.shape()));
  const std::size_t width = aggregated.shape().back();
  if (width != cfg.head_input_dim())
    throw ShapeError("predict_probabilities: feature width " + std::to_string(width) +
                     " does not match head input " + std::to_string(cfg.head_input_dim()) +
                     " for variant \"" + cfg.variant_name() + "\"");
  const std::size_t rows = aggregated.numel() / width;
  Tensor h = reshape(aggregated, {rows, width});
  for (std::size_t i = 0; i < cfg.head_hidden.size(); ++i) {
    h = leaky_relu(linear_forward(h, params, "head.fc" + std::to_string(i + 1)));
    if (i == 0) h = dropout_forward(h, cfg.dropout, training, rng);
  }
  const Tensor probs = sigmoid(linear_forward(h, params, "head.out"));
  const Shape out(aggregated.shape().begin(), aggregated.shape().end() - 1);
  return reshape(probs, out);
}

Tensor forward_probs(const Tensor& frames, const ParamStore& params, const ModelConfig& cfg,
                     bool training, Rng& rng) {
  const Tensor features = extract_features(frames, params, cfg);
  const Tensor context = aggregate_spatial(features, cfg);
  const Tensor aggregated = aggregate_sequential(context, params, cfg);
  return predict_probabilities(aggregated, params, cfg, training, rng);
}

SelectionOutput forward(const MultiCamSequence& seq, const ParamStore& params,
                        const ModelConfig& cfg, bool training, Rng& rng) {
  seq.validate();
  if (seq.channels != cfg.frame_channels || seq.height != cfg.frame_height ||
      seq.width != cfg.frame_width)
    throw ShapeError("forward: sequence frames " +
                     shape_str({seq.channels, seq.height, seq.width}) + " do not match config " +
                     shape_str({cfg.frame_channels, cfg.frame_height, cfg.frame_width}));
  SelectionOutput out;
  out.num_frames = seq.num_frames;
  out.num_cameras = seq.num_cameras;
  out.probs.reserve(seq.num_frames * seq.num_cameras);
  const std::size_t window = training ? seq.num_frames : cfg.window_len;
  for (std::size_t begin = 0; begin < seq.num_frames; begin += window) {
    const std::size_t len = std::min(window, seq.num_frames - begin);
    const Tensor probs = forward_probs(frames_tensor(seq, begin, len), params, cfg, training, rng);
    out.probs.insert(out.probs.end(), probs.data().begin(), probs.data().end());
  }
  out.labels = decode_labels(out.probs, out.num_frames, out.num_cameras);
  return out;
}

SelectionOutput infer(const MultiCamSequence& seq, const ParamStore& params,
                      const ModelConfig& cfg) {
  NoGradGuard no_grad;
  Rng unused(0);
  return forward(seq, params, cfg, false, unused);
}

}  // namespace csel
