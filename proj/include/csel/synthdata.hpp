#pragma once

// Seeded multi-camera occlusion simulator and the on-disk dataset layout.
//
// A bright target lies on a ground plane; dark occluders drift above it on
// reflecting random walks. Every camera sees the same world through its own
// rotation and offset, and the occluder layer is additionally shifted by a
// per-camera parallax, so occlusion differs between views. Visibility is the
// unoccluded fraction of the target's pixels in each view; labels come from a
// scripted annotator that only switches cameras after a challenger has been
// clearly better for several frames.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "csel/model.hpp"

namespace csel {

struct Viewpoint {
  double rotation = 0.0;  // radians
  double offset_x = 0.0;  // target-plane shift, pixels
  double offset_y = 0.0;
  double parallax_x = 0.0;  // extra occluder-plane shift, pixels
  double parallax_y = 0.0;

  bool operator==(const Viewpoint&) const = default;
};

enum class TargetShape { disk, square, diamond, ring, cross };

struct SceneConfig {
  std::size_t num_cameras = 5;
  std::size_t frames_per_seq = 200;
  std::size_t frame_height = 32;
  std::size_t frame_width = 32;
  std::size_t num_occluders = 6;
  double occluder_radius_min = 3.0;
  double occluder_radius_max = 5.0;
  double occluder_step = 0.6;
  // Occluders wander inside [-extent, extent]^2 around the target.
  double occluder_extent = 9.0;
  double target_radius = 6.0;
  // Magnitude of the automatic per-camera parallax and target offsets.
  double parallax = 10.0;
  double view_offset = 1.5;
  // Explicit viewpoints; when empty they are spread evenly on a circle.
  std::vector<Viewpoint> viewpoints;
  double pixel_noise = 0.02;
  std::uint64_t seed = 0;
  // Selects the target shape and occluder dynamics ("surgery type").
  std::size_t scene_id = 0;
  double hysteresis_margin = 0.1;
  std::size_t hysteresis_persistence = 3;

  // Throws ConfigError.
  void validate() const;
  std::vector<Viewpoint> resolved_viewpoints() const;
  TargetShape target_shape() const;
};

nlohmann::json to_json(const SceneConfig& cfg);
// Unknown keys are rejected. `extra_keys` are tolerated and ignored.
SceneConfig scene_config_from_json(const nlohmann::json& j,
                                   std::initializer_list<std::string_view> extra_keys = {});

MultiCamSequence simulate_sequence(const SceneConfig& cfg);

// Scripted annotator: starts on the most visible camera and switches to
// camera m once v[t][m] - v[t][current] > margin has held for `persistence`
// consecutive frames. The switch is labelled from the frame that confirms it.
// Among several confirmed challengers the most visible (lowest index on ties)
// wins, and all run counters restart after a switch.
std::vector<int> annotate_labels(std::span<const double> visibility, std::size_t num_frames,
                                 std::size_t num_cameras, double margin, std::size_t persistence);

// Keeps frames 0, stride, 2*stride, ... with their labels and visibility.
MultiCamSequence subsample(const MultiCamSequence& seq, std::size_t stride);

// Sequences for seeds [first_seed, last_seed]; sequence i belongs to scene
// i % num_scenes. Generated in parallel with per-sequence derived seeds.
std::vector<MultiCamSequence> generate_dataset(const SceneConfig& base, std::size_t num_scenes,
                                               std::uint64_t first_seed, std::uint64_t last_seed);

struct ManifestEntry {
  std::string id;
  std::size_t scene = 0;
  std::size_t num_cameras = 0;
  std::size_t num_frames = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::string frame_pattern;  // relative, with {n} and {t:06} placeholders
  std::string labels_file;
  std::string visibility_file;  // empty when absent

  std::string frame_path(std::size_t n, std::size_t t) const;
  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::vector<ManifestEntry> sequences;
  bool operator==(const DatasetManifest&) const = default;
};

// Writes PGM frames, labels.csv, visibility.csv and manifest.json.
DatasetManifest write_dataset(std::span<const MultiCamSequence> seqs,
                              const std::filesystem::path& dir);
DatasetManifest read_manifest(const std::filesystem::path& dir);
// Throws DataError naming the offending path.
std::vector<MultiCamSequence> read_dataset(const std::filesystem::path& dir);

// Binary 8-bit PGM (P5).
void write_pgm(const std::filesystem::path& path, std::span<const std::uint8_t> pixels,
               std::size_t height, std::size_t width);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height,
                                   std::size_t& width);

}  // namespace csel
