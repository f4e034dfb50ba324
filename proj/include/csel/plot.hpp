#pragma once

// Plain-text SVG charts for loss logs and evaluation reports.

#include <filesystem>
#include <string>
#include <vector>

namespace csel {

struct LossPoint {
  std::size_t epoch = 0;
  double loss = 0.0;
};

struct SceneDice {
  std::string scene;
  double dice = 0.0;
};

// Throws DataError on a malformed or empty file.
std::vector<LossPoint> read_loss_log(const std::filesystem::path& path);
// Scene-level rows of an evaluation report.
std::vector<SceneDice> read_report_scenes(const std::filesystem::path& path);

// Plot area geometry shared by both charts.
struct PlotFrame {
  double width = 480.0;
  double height = 320.0;
  double margin = 48.0;

  double inner_width() const { return width - 2.0 * margin; }
  double inner_height() const { return height - 2.0 * margin; }
};

std::string loss_curve_svg(const std::vector<LossPoint>& points, const PlotFrame& frame = {});
// Bar height is dice * inner_height (dice axis fixed to [0, 1]).
std::string dice_bars_svg(const std::vector<SceneDice>& bars, const PlotFrame& frame = {});

// Detects the input kind from its header and writes loss_curve.svg or
// dice_by_scene.svg into `out_dir`. Returns the written path.
std::filesystem::path plot_file(const std::filesystem::path& in, const std::filesystem::path& out_dir);

}  // namespace csel
