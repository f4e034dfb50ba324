// Acceptance suite. Runs every criterion at its stated tolerance and prints
// one PASS/FAIL line each. Exit status is non-zero when any criterion fails.
//
//   acceptance            run all criteria
//   acceptance 1 4 5      run a subset
//   acceptance --workdir DIR   keep datasets and checkpoints in DIR
//   acceptance --results FILE  also write the PASS/FAIL lines to FILE

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "annotator_oracle.hpp"
#include "csel/baselines.hpp"
#include "csel/checkpoint.hpp"
#include "csel/harness.hpp"
#include "csel/loss.hpp"
#include "csel/synthdata.hpp"
#include "dijkstra_oracle.hpp"
#include "gradcheck_cases.hpp"
#include "test_util.hpp"

using namespace csel;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

fs::path g_workdir;

// The desk-scale dataset: 5 scenes x 4 sequences, 200 frames of 32x32.
std::vector<MultiCamSequence> default_dataset(std::size_t cameras, std::uint64_t first_seed) {
  SceneConfig scene;
  scene.num_cameras = cameras;
  scene.frames_per_seq = 200;
  scene.frame_height = 32;
  scene.frame_width = 32;
  return generate_dataset(scene, 5, first_seed, first_seed + 19);
}

// ---------------------------------------------------------------------------

Outcome gradient_integrity() {
  const auto start = Clock::now();
  auto cases = testing::primitive_grad_cases(1);
  auto layers = testing::layer_grad_cases(2);
  cases.insert(cases.end(), layers.begin(), layers.end());
  double worst = 0.0;
  std::string worst_name, failures;
  for (auto& c : cases) {
    const double err = testing::run_case(c, 1e-5).max_rel_error;
    if (!(err < 1e-4)) failures += " " + c.name;
    if (err > worst) {
      worst = err;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(start);
  const bool pass = failures.empty() && secs < 60.0;
  return {pass, format("%zu cases, max rel error %.2e (%s), %.1fs%s", cases.size(), worst, worst_name.c_str(),
                       secs, failures.empty() ? "" : (", failing:" + failures).c_str())};
}

Outcome permutation_equivariance() {
  const auto start = Clock::now();
  Rng rng(7);
  ModelConfig cfg;  // full architecture at 32x32
  std::size_t bad = 0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t N = 2 + rng.index(4), T = 1 + rng.index(6);
    const ParamStore params = init_params(cfg, 100 + static_cast<std::uint64_t>(i));
    const auto s = testing::random_sequence(T, N, 32, 32, rng);
    const auto perm = testing::random_permutation(N, rng);
    const auto a = infer(s, params, cfg);
    const auto b = infer(testing::permute_cameras(s, perm), params, cfg);
    bool ok = true;
    for (std::size_t t = 0; t < T; ++t) {
      for (std::size_t n = 0; n < N; ++n) ok = ok && b.prob(t, n) == a.prob(t, perm[n]);
      ok = ok && perm[static_cast<std::size_t>(b.labels[t])] == static_cast<std::size_t>(a.labels[t]);
    }
    bad += !ok;
  }
  const double secs = seconds_since(start);
  return {bad == 0 && secs < 60.0, format("%zu/100 instances not exactly equivariant, %.1fs", bad, secs)};
}

Outcome loss_identities() {
  Rng rng(11);
  double worst_gap = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t T = 1 + rng.index(10), N = 2 + rng.index(5);
    const Tensor probs = testing::random_tensor({T, N}, rng, 0.0, 1.0);
    std::vector<int> labels(T);
    for (int& l : labels) l = static_cast<int>(rng.index(N));
    const Tensor mask = one_hot_mask(labels, N);
    const double f = focal_loss(probs, mask, {0.0, 1e-7}).item();
    const double b = binary_cross_entropy(probs, mask).item();
    worst_gap = std::max(worst_gap, std::abs(f - b));
  }
  // Every loss entry is a function of q alone (q = p when selected, 1 - p
  // otherwise), so single selected entries cover all entry kinds.
  std::size_t above = 0;
  const Tensor one = Tensor({1, 1}, {1.0});
  for (int i = 0; i <= 1000; ++i) {
    const double q = std::clamp(i / 1000.0, 0.0, 1.0);
    const Tensor p({1, 1}, {q});
    above += focal_loss(p, one, {2.0, 1e-7}).item() > binary_cross_entropy(p, one).item();
  }
  const ImbalanceRatio r = label_imbalance(4);
  std::vector<int> labels(50);
  for (int& l : labels) l = static_cast<int>(rng.index(4));
  const Tensor mask = one_hot_mask(labels, 4);
  std::size_t ones = 0;
  for (double v : mask.data()) ones += v == 1.0;
  const bool ratio_ok = r == ImbalanceRatio{1, 3} && 3 * ones == mask.numel() - ones;
  return {worst_gap <= 1e-12 && above == 0 && ratio_ok,
          format("max |focal(0) - bce| %.1e, focal > bce at %zu/1001 points, N=4 ratio %zu:%zu", worst_gap, above,
                 r.selected, r.not_selected)};
}

Outcome dijkstra_correctness() {
  const auto start = Clock::now();
  Rng rng(13);
  std::size_t mismatch = 0, argmax_bad = 0, constant_bad = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t T = 1 + rng.index(8), N = 2 + rng.index(2);
    const double lambda = rng.uniform(0.0, 1.5);
    std::vector<double> s(T * N);
    for (double& x : s) x = i % 4 == 0 ? static_cast<double>(rng.index(4)) / 4.0 : rng.uniform();
    SwitchGraphConfig g;
    g.switch_penalty = lambda;
    const auto path = dijkstra_smooth(s, T, N, g);
    const auto [cost, expected] = testing::brute_force_path(s, T, N, lambda);
    mismatch += path != expected;

    g.switch_penalty = 0.0;
    argmax_bad += dijkstra_smooth(s, T, N, g) != area_select(s, T, N);

    g.switch_penalty = SwitchGraphConfig::infinite;
    const auto flat = dijkstra_smooth(s, T, N, g);
    std::vector<double> sums(N, 0.0);
    for (std::size_t t = 0; t < T; ++t)
      for (std::size_t n = 0; n < N; ++n) sums[n] += s[t * N + n];
    const int best = static_cast<int>(std::max_element(sums.begin(), sums.end()) - sums.begin());
    constant_bad += flat != std::vector<int>(T, best);
  }
  const double secs = seconds_since(start);
  return {mismatch == 0 && argmax_bad == 0 && constant_bad == 0 && secs < 60.0,
          format("brute-force mismatches %zu/500, lambda=0 vs argmax %zu, lambda=inf vs best constant %zu, %.1fs",
                 mismatch, argmax_bad, constant_bad, secs)};
}

Outcome annotator_reference() {
  Rng rng(17);
  std::size_t mismatch = 0;
  for (int i = 0; i < 500; ++i) {
    const std::size_t T = 1 + rng.index(20), N = 2 + rng.index(3), h = 1 + rng.index(4);
    const double delta = rng.uniform(0.0, 0.3);
    std::vector<double> v(T * N);
    for (double& x : v) x = i % 2 ? rng.uniform() : static_cast<double>(rng.index(6)) / 5.0;
    mismatch += annotate_labels(v, T, N, delta, h) != testing::reference_annotator(v, T, N, delta, h);
  }
  return {mismatch == 0, format("%zu/500 instances differ from the reference automaton", mismatch)};
}

// Shared between the learnability and transfer criteria.
std::optional<Checkpoint> g_learned;

Outcome learnability() {
  const auto start = Clock::now();
  const auto data = default_dataset(4, 0);
  TrainConfig cfg;  // lr 1e-4, fragments of 40, batch 2, gamma 2, dropout 0.5
  cfg.epochs = 15;
  cfg.seed = 0;
  cfg.protocol = Protocol::sequence_out;
  const auto result = train(cfg, data, nullptr, [&](std::size_t epoch, double loss, const Checkpoint&) {
    std::fprintf(stderr, "  [6] epoch %zu loss %.5f (%.0fs)\n", epoch, loss, seconds_since(start));
  });
  const double train_secs = seconds_since(start);
  g_learned = result.checkpoint;
  if (!g_workdir.empty()) save_checkpoint(result.checkpoint, g_workdir / "learnability.ckpt");
  const auto report = evaluate(result.checkpoint, data, Protocol::sequence_out);
  const auto& losses = result.epoch_losses;
  return {report.overall >= 0.80 && train_secs < 1800.0,
          format("held-out dice %.4f (need >= 0.80), training %.0fs (limit 1800s); loss epoch 1 %.4f, epoch 10 %.4f",
                 report.overall, train_secs, losses.front(), losses.at(9))};
}

Outcome ablation_ordering() {
  const auto data = default_dataset(4, 0);
  const std::vector<std::pair<bool, bool>> variants{{true, true}, {false, true}, {true, false}, {false, false}};
  std::map<std::string, double> mean;
  std::map<std::string, std::vector<double>> per_seed;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (const auto& [spa, seq] : variants) {
      const auto start = Clock::now();
      TrainConfig cfg;
      cfg.epochs = 15;
      cfg.seed = seed;
      cfg.protocol = Protocol::surgery_out;
      cfg.use_spatial = spa;
      cfg.use_sequential = seq;
      const auto result = train(cfg, data);
      const auto report = evaluate(result.checkpoint, data, Protocol::surgery_out);
      const std::string name = result.checkpoint.model.variant_name();
      per_seed[name].push_back(report.overall);
      mean[name] += report.overall / 3.0;
      std::fprintf(stderr, "  [7] seed %llu %-16s dice %.4f (%.0fs)\n", static_cast<unsigned long long>(seed),
                   name.c_str(), report.overall, seconds_since(start));
    }
  }
  const double full = mean["full"], none = mean["w/o spa., seq."];
  const bool pass = full > none && full >= mean["w/o spa."] - 0.02 && full >= mean["w/o seq."] - 0.02;
  return {pass, format("mean dice full %.4f, w/o spa. %.4f, w/o seq. %.4f, w/o spa., seq. %.4f", full,
                       mean["w/o spa."], mean["w/o seq."], none)};
}

Outcome camera_transfer() {
  if (!g_learned) {
    const fs::path saved = g_workdir.empty() ? fs::path() : g_workdir / "learnability.ckpt";
    if (saved.empty() || !fs::exists(saved)) return {false, "needs the learnability checkpoint (run criterion 6)"};
    g_learned = load_checkpoint(saved);
  }
  std::string detail;
  bool pass = true;
  for (std::size_t N : {3, 5}) {
    const auto data = default_dataset(N, 1000);
    const auto outputs = run_inference(*g_learned, data);
    bool valid = true;
    for (const auto& o : outputs)
      for (double p : o.probs) valid = valid && std::isfinite(p) && p > 0.0 && p < 1.0;
    const auto report = evaluate_sequences(*g_learned, data);
    const double need = 1.0 / static_cast<double>(N) + 0.15;
    pass = pass && valid && report.overall >= need;
    detail += format("%sN=%zu dice %.4f (need >= %.4f)%s", detail.empty() ? "" : ", ", N, report.overall, need,
                     valid ? "" : " invalid probabilities");
  }
  return {pass, detail};
}

Outcome determinism_persistence() {
  SceneConfig scene;
  scene.num_cameras = 3;
  scene.frames_per_seq = 40;
  scene.frame_height = 16;
  scene.frame_width = 16;
  scene.target_radius = 3.0;
  const auto data = generate_dataset(scene, 2, 0, 3);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.fragment_len = 8;
  cfg.epochs = 3;
  cfg.seed = 3;
  cfg.model = {{"conv_channels", {4, 8}}, {"feature_dim", 16}, {"rnn_hidden", 8},
               {"head_hidden", {16, 8}},  {"window_len", 8}};

  const fs::path dir = g_workdir.empty() ? fs::temp_directory_path() / "csel_acceptance_det" : g_workdir / "det";
  fs::create_directories(dir);
  const auto a = train(cfg, data);
  const auto b = train(cfg, data);
  write_loss_log(a.epoch_losses, dir / "a.csv");
  write_loss_log(b.epoch_losses, dir / "b.csv");
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  const bool logs_equal = slurp(dir / "a.csv") == slurp(dir / "b.csv") && a.epoch_losses == b.epoch_losses;

  TrainConfig first = cfg;
  first.epochs = 1;
  save_checkpoint(train(first, data).checkpoint, dir / "e1.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "e1.ckpt");
  const auto resumed = train(cfg, data, &loaded);
  const bool resume_equal = resumed.checkpoint.params.identical_to(a.checkpoint.params) &&
                            resumed.checkpoint.adam == a.checkpoint.adam &&
                            resumed.epoch_losses == a.epoch_losses;
  if (g_workdir.empty()) fs::remove_all(dir);
  return {logs_equal && resume_equal, format("loss logs bitwise %s, 1 + 2 resumed epochs vs 3 epochs %s",
                                             logs_equal ? "equal" : "DIFFER", resume_equal ? "equal" : "DIFFER")};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient integrity", gradient_integrity},
      {"permutation equivariance", permutation_equivariance},
      {"loss identities", loss_identities},
      {"dijkstra correctness", dijkstra_correctness},
      {"annotator reference", annotator_reference},
      {"learnability", learnability},
      {"ablation ordering", ablation_ordering},
      {"camera-count transfer", camera_transfer},
      {"determinism and persistence", determinism_persistence},
  };
  std::set<std::size_t> selected;
  std::string results_path;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--workdir") == 0 && i + 1 < argc) {
      g_workdir = argv[++i];
      fs::create_directories(g_workdir);
    } else if (std::strcmp(argv[i], "--results") == 0 && i + 1 < argc) {
      results_path = argv[++i];
    } else {
      const std::size_t k = std::strtoul(argv[i], nullptr, 10);
      if (k < 1 || k > criteria.size()) {
        std::fprintf(stderr, "usage: acceptance [--workdir DIR] [--results FILE] [criterion numbers 1-%zu]\n",
                     criteria.size());
        return 1;
      }
      selected.insert(k);
    }
  }

  std::size_t failed = 0;
  std::ofstream results;
  if (!results_path.empty()) results.open(results_path);
  for (std::size_t k = 1; k <= criteria.size(); ++k) {
    if (!selected.empty() && !selected.count(k)) continue;
    const auto start = Clock::now();
    Outcome o;
    try {
      o = criteria[k - 1].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    const std::string line = format("%s  %zu %-28s %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", k, criteria[k - 1].first,
                                    o.detail.c_str(), seconds_since(start));
    std::fputs(line.c_str(), stdout);
    std::fflush(stdout);
    if (results) results << line << std::flush;
  }
  return failed == 0 ? 0 : 1;
}
