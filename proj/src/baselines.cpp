#include "csel/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <queue>
#include <stdexcept>

#include "csel/errors.hpp"

namespace csel {

namespace {

void check_scores(std::span<const double> scores, std::size_t T, std::size_t N, const char* who) {
  if (scores.size() != T * N)
    throw std::invalid_argument(std::string(who) + ": expected " + std::to_string(T * N) +
                                " scores, got " + std::to_string(scores.size()));
  for (double s : scores)
    if (!std::isfinite(s)) throw std::invalid_argument(std::string(who) + ": non-finite score");
}

std::vector<double> regrets(std::span<const double> scores, std::size_t T, std::size_t N) {
  std::vector<double> r(T * N);
  for (std::size_t t = 0; t < T; ++t) {
    const auto row = scores.subspan(t * N, N);
    const double best = *std::max_element(row.begin(), row.end());
    for (std::size_t n = 0; n < N; ++n) r[t * N + n] = best - row[n];
  }
  return r;
}

// Relative slack for treating two path costs as equal.
bool cost_equal(double a, double b) {
  if (a == b) return true;
  return std::abs(a - b) <= 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace

void SwitchGraphConfig::validate() const {
  if (std::isnan(switch_penalty) || switch_penalty < 0.0)
    throw ConfigError("switch penalty must be >= 0 or infinite");
}

double parse_switch_penalty(const std::string& text) {
  if (text == "inf" || text == "infinite" || text == "infinity") return SwitchGraphConfig::infinite;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || std::isnan(v) || v < 0.0)
    throw ConfigError("bad switch penalty \"" + text + "\"");
  return v;
}

std::vector<int> area_select(std::span<const double> scores, std::size_t num_frames,
                             std::size_t num_cameras) {
  check_scores(scores, num_frames, num_cameras, "area_select");
  std::vector<int> labels(num_frames);
  for (std::size_t t = 0; t < num_frames; ++t) {
    const auto row = scores.subspan(t * num_cameras, num_cameras);
    labels[t] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return labels;
}

std::vector<int> dijkstra_smooth(std::span<const double> scores, std::size_t num_frames,
                                 std::size_t num_cameras, const SwitchGraphConfig& cfg) {
  cfg.validate();
  check_scores(scores, num_frames, num_cameras, "dijkstra_smooth");
  const std::size_t T = num_frames, N = num_cameras;
  if (T == 0) return {};
  if (N == 0) throw std::invalid_argument("dijkstra_smooth: no cameras");
  const std::vector<double> r = regrets(scores, T, N);
  const double lambda = cfg.switch_penalty;
  const bool no_switching = std::isinf(lambda);

  // Dijkstra on the reversed lattice from a virtual sink behind frame T-1:
  // togo[t*N+n] is the cheapest cost of frames t..T-1 when frame t uses n.
  constexpr double inf = std::numeric_limits<double>::infinity();
  std::vector<double> togo(T * N, inf);
  std::vector<char> done(T * N, 0);
  using Item = std::pair<double, std::size_t>;
  std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
  for (std::size_t n = 0; n < N; ++n) {
    togo[(T - 1) * N + n] = r[(T - 1) * N + n];
    queue.emplace(togo[(T - 1) * N + n], (T - 1) * N + n);
  }
  while (!queue.empty()) {
    const auto [d, node] = queue.top();
    queue.pop();
    if (done[node]) continue;
    done[node] = 1;
    const std::size_t t = node / N, m = node % N;
    if (t == 0) continue;
    for (std::size_t n = 0; n < N; ++n) {
      if (n != m && no_switching) continue;
      const double edge = (n == m ? 0.0 : lambda) + r[(t - 1) * N + n];
      const std::size_t prev = (t - 1) * N + n;
      if (d + edge < togo[prev]) {
        togo[prev] = d + edge;
        queue.emplace(togo[prev], prev);
      }
    }
  }

  // Forward walk: pick the lowest camera whose continuation is optimal.
  std::vector<int> path(T);
  double best = inf;
  for (std::size_t n = 0; n < N; ++n) best = std::min(best, togo[n]);
  std::size_t cur = 0;
  while (!cost_equal(togo[cur], best)) ++cur;
  path[0] = static_cast<int>(cur);
  double remaining = togo[cur];
  for (std::size_t t = 1; t < T; ++t) {
    const double target = remaining - r[(t - 1) * N + cur];
    std::size_t pick = N;
    for (std::size_t n = 0; n < N && pick == N; ++n) {
      if (n != cur && no_switching) continue;
      const double via = (n == cur ? 0.0 : lambda) + togo[t * N + n];
      if (cost_equal(via, target)) pick = n;
    }
    if (pick == N) pick = cur;  // unreachable with consistent costs
    remaining = togo[t * N + pick];
    cur = pick;
    path[t] = static_cast<int>(cur);
  }
  return path;
}

double path_cost(std::span<const double> scores, std::size_t num_frames, std::size_t num_cameras,
                 std::span<const int> path, double switch_penalty) {
  check_scores(scores, num_frames, num_cameras, "path_cost");
  if (path.size() != num_frames) throw std::invalid_argument("path_cost: path length mismatch");
  const std::vector<double> r = regrets(scores, num_frames, num_cameras);
  double cost = 0.0;
  for (std::size_t t = 0; t < num_frames; ++t) {
    cost += r[t * num_cameras + static_cast<std::size_t>(path[t])];
    if (t > 0 && path[t] != path[t - 1]) cost += switch_penalty;
  }
  return cost;
}

}  // namespace csel
