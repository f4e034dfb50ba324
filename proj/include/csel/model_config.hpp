#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace csel {

// Architecture and ablation switches. The four network variants are selected
// solely by `use_spatial` and `use_sequential`.
struct ModelConfig {
  std::size_t frame_channels = 1;
  std::size_t frame_height = 32;
  std::size_t frame_width = 32;
  // One conv 3x3 -> leaky_relu -> 2x2 max-pool block per entry.
  std::vector<std::size_t> conv_channels{8, 16, 32};
  std::size_t feature_dim = 128;
  std::size_t rnn_hidden = 128;
  std::vector<std::size_t> head_hidden{128, 64};
  double dropout = 0.5;
  bool use_spatial = true;
  bool use_sequential = true;
  std::size_t window_len = 40;

  // Throws ConfigError.
  void validate() const;

  std::size_t context_dim() const { return use_spatial ? 2 * feature_dim : feature_dim; }
  std::size_t head_input_dim() const { return use_sequential ? 2 * rnn_hidden : context_dim(); }
  std::size_t encoder_flat_dim() const;

  // "full", "w/o spa.", "w/o seq." or "w/o spa., seq."
  std::string variant_name() const;

  bool operator==(const ModelConfig&) const = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
// Unknown keys are rejected.
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace csel
