#pragma once

// Training loop, evaluation protocols and selection export.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "csel/checkpoint.hpp"
#include "csel/model.hpp"

namespace csel {

enum class Protocol { sequence_out, surgery_out, all_frames };

std::string to_string(Protocol p);
// Accepts "sequence-out", "surgery-out" and "all". Throws ConfigError.
Protocol parse_protocol(const std::string& text);

struct TrainConfig {
  double lr = 1e-4;
  std::size_t batch_size = 2;
  std::size_t fragment_len = 40;
  std::size_t epochs = 15;
  double gamma = 2.0;
  double dropout = 0.5;
  std::uint64_t seed = 0;
  bool use_spatial = true;
  bool use_sequential = true;
  Protocol protocol = Protocol::sequence_out;
  // Scenes held out under surgery-out; empty picks the last third of the
  // scene ids (at least one).
  std::vector<std::size_t> holdout_scenes;
  // Keep every k-th frame of each sequence before splitting.
  std::size_t subsample_stride = 1;
  // Fraction of every sequence used for training under sequence-out.
  double train_fraction = 0.8;
  std::string data_dir;
  std::string checkpoint_path;
  // Architecture overrides; frame extents are taken from the dataset and the
  // dropout and ablation flags from the fields above.
  nlohmann::json model = nlohmann::json::object();

  // Throws ConfigError.
  void validate() const;
  // Architecture for frames of the given extents.
  ModelConfig model_config(std::size_t channels, std::size_t height, std::size_t width) const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);
TrainConfig load_train_config(const std::filesystem::path& path);

// Frames [begin, begin + len) of sequence `seq`.
struct Segment {
  std::size_t seq = 0;
  std::size_t begin = 0;
  std::size_t len = 0;
  bool operator==(const Segment&) const = default;
};

struct Split {
  std::vector<Segment> train;
  std::vector<Segment> test;
};

// Throws ConfigError when the protocol cannot be applied to the data, e.g.
// surgery-out on a single scene.
Split make_split(const std::vector<MultiCamSequence>& data, Protocol protocol,
                 const std::vector<std::size_t>& holdout_scenes, double train_fraction = 0.8);
std::vector<std::size_t> default_holdout_scenes(const std::vector<MultiCamSequence>& data);

// Frames of one segment as a standalone sequence.
MultiCamSequence segment_sequence(const MultiCamSequence& seq, const Segment& seg);

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;  // whole history, including resumed epochs
};

// Called after every epoch with (epoch, mean loss, checkpoint so far).
using EpochCallback = std::function<void(std::size_t, double, const Checkpoint&)>;

// Trains until cfg.epochs epochs are complete. With `resume`, continues from
// that checkpoint, whose configuration must match apart from the epoch count.
// Throws NumericError on a non-finite loss, DataError on unusable data.
TrainResult train(const TrainConfig& cfg, const std::vector<MultiCamSequence>& data,
                  const Checkpoint* resume = nullptr, const EpochCallback& on_epoch = {});

// Optimizer steps per epoch: enough fragments to cover the training frames once.
std::size_t steps_per_epoch(const TrainConfig& cfg, const Split& split);

void write_loss_log(const std::vector<double>& losses, const std::filesystem::path& path);

struct SequenceResult {
  std::string sequence;
  std::size_t scene = 0;
  double dice = 0.0;
  std::size_t pred_switches = 0;
  std::size_t gt_switches = 0;
  std::size_t frames = 0;
};

struct EvalReport {
  std::string protocol;
  std::vector<SequenceResult> sequences;
  std::map<std::size_t, double> scene_means;
  // Mean of the per-scene means.
  double overall = 0.0;
  double wall_seconds = 0.0;
  nlohmann::json config = nlohmann::json::object();
};

// Scores predicted label sequences, one per entry of `truth`.
EvalReport summarize(const std::vector<MultiCamSequence>& truth,
                     const std::vector<std::vector<int>>& predicted, const std::string& protocol);

// Windowed inference on every test segment of the protocol split.
EvalReport evaluate(const Checkpoint& ckpt, const std::vector<MultiCamSequence>& data,
                    Protocol protocol, const std::vector<std::size_t>& holdout_scenes = {},
                    double train_fraction = 0.8);

// Windowed inference on every sequence, start to end.
EvalReport evaluate_sequences(const Checkpoint& ckpt, const std::vector<MultiCamSequence>& data);

// CSV with columns level,scene,sequence,dice,pred_switches,gt_switches,frames
// plus a JSON sidecar (<path>.json) holding the config echo and timing.
void write_report(const EvalReport& report, const std::filesystem::path& path);

// Inference on every sequence in parallel; outputs follow `data` order.
std::vector<SelectionOutput> run_inference(const Checkpoint& ckpt,
                                           const std::vector<MultiCamSequence>& data);

// selection.csv with header sequence,t,label,p0..p{N-1}; probabilities use
// six decimals. Returns the number of rows written.
std::size_t write_selection(const std::vector<MultiCamSequence>& data,
                            const std::vector<SelectionOutput>& outputs,
                            const std::filesystem::path& path);

// One PPM contact sheet per sequence: rows are cameras, columns sampled
// timesteps. The predicted camera is framed green, the ground truth red.
void write_montages(const std::vector<MultiCamSequence>& data,
                    const std::vector<SelectionOutput>& outputs, const std::filesystem::path& dir,
                    std::size_t columns = 10);

}  // namespace csel
