#pragma once

// Binary checkpoint: "CSEL" magic, u32 version, then the model and training
// configs (JSON text), the epoch counter and loss history, the rng state, named parameter
// tensors and the Adam moments. All integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "csel/errors.hpp"
#include "csel/model_config.hpp"
#include "csel/nn.hpp"

namespace csel {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class TensorDtype : std::uint8_t { f64 = 0, f32 = 1 };

struct Checkpoint {
  ModelConfig model;
  nlohmann::json train_config = nlohmann::json::object();
  ParamStore params;
  AdamState adam;
  std::string rng_state;
  std::uint64_t epoch = 0;
  // Mean training loss of every completed epoch.
  std::vector<double> epoch_losses;
};

class CheckpointError : public DataError {
 public:
  using DataError::DataError;
};
class BadMagicError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class VersionMismatchError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class TruncatedCheckpointError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

// Parameters are stored as `dtype`; f32 is lossy. Adam moments stay f64.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path,
                     TensorDtype dtype = TensorDtype::f64);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csel
