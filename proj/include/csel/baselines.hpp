#pragma once

// Non-learned reference selector: per-frame visibility scores smoothed by a
// shortest path over the (time x camera) lattice.

#include <limits>
#include <span>
#include <string>
#include <vector>

namespace csel {

enum class ScoreSource { oracle_visibility, model_probabilities };

struct SwitchGraphConfig {
  // Cost per camera switch; infinity forbids switching.
  double switch_penalty = 1.0;
  ScoreSource source = ScoreSource::oracle_visibility;

  static constexpr double infinite = std::numeric_limits<double>::infinity();

  // Throws ConfigError unless the penalty is >= 0 (finite or infinite).
  void validate() const;
};

// Accepts a non-negative number or "inf"/"infinite". Throws ConfigError.
double parse_switch_penalty(const std::string& text);

// Per-frame argmax of scores [T x N], lowest index on ties.
std::vector<int> area_select(std::span<const double> scores, std::size_t num_frames,
                             std::size_t num_cameras);

// Path minimizing sum_t (max_n s[t][n] - s[t][y_t]) + penalty * switches.
// Among optimal paths the lexicographically smallest one is returned, which
// prefers the lower camera index at the earliest differing frame.
std::vector<int> dijkstra_smooth(std::span<const double> scores, std::size_t num_frames,
                                 std::size_t num_cameras, const SwitchGraphConfig& cfg);

// The objective minimized by dijkstra_smooth.
double path_cost(std::span<const double> scores, std::size_t num_frames, std::size_t num_cameras,
                 std::span<const int> path, double switch_penalty);

}  // namespace csel
