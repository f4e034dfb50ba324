#include "csel/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <set>

#include "csel/errors.hpp"
#include "csel/json_util.hpp"
#include "csel/loss.hpp"
#include "csel/synthdata.hpp"

namespace csel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::sequence_out: return "sequence-out";
    case Protocol::surgery_out: return "surgery-out";
    case Protocol::all_frames: return "all";
  }
  return "?";
}

Protocol parse_protocol(const std::string& text) {
  if (text == "sequence-out") return Protocol::sequence_out;
  if (text == "surgery-out") return Protocol::surgery_out;
  if (text == "all") return Protocol::all_frames;
  throw ConfigError("unknown protocol \"" + text + "\" (expected sequence-out, surgery-out or all)");
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("train config: " + msg); };
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be finite and >= 0");
  if (batch_size == 0) fail("batch_size must be positive");
  if (fragment_len == 0) fail("fragment_len must be positive");
  if (epochs == 0) fail("epochs must be positive");
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) fail("gamma must be finite and >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
  if (subsample_stride == 0) fail("subsample_stride must be positive");
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) fail("train_fraction must lie in (0, 1)");
  if (protocol == Protocol::all_frames) fail("training needs sequence-out or surgery-out");
  if (!model.is_object()) fail("model must be an object");
  for (const char* key : {"frame_channels", "frame_height", "frame_width", "dropout", "use_spatial",
                          "use_sequential"})
    if (model.contains(key))
      fail(std::string("model.") + key + " is set from the dataset or the top-level field");
}

ModelConfig TrainConfig::model_config(std::size_t channels, std::size_t height,
                                      std::size_t width) const {
  nlohmann::json j = model;
  j["frame_channels"] = channels;
  j["frame_height"] = height;
  j["frame_width"] = width;
  j["dropout"] = dropout;
  j["use_spatial"] = use_spatial;
  j["use_sequential"] = use_sequential;
  return model_config_from_json(j);
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"batch_size", cfg.batch_size},
          {"fragment_len", cfg.fragment_len},
          {"epochs", cfg.epochs},
          {"gamma", cfg.gamma},
          {"dropout", cfg.dropout},
          {"seed", cfg.seed},
          {"use_spatial", cfg.use_spatial},
          {"use_sequential", cfg.use_sequential},
          {"protocol", to_string(cfg.protocol)},
          {"holdout_scenes", cfg.holdout_scenes},
          {"subsample_stride", cfg.subsample_stride},
          {"train_fraction", cfg.train_fraction},
          {"data_dir", cfg.data_dir},
          {"checkpoint_path", cfg.checkpoint_path},
          {"model", cfg.model}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  using json_util::read_optional;
  constexpr std::string_view what = "train config";
  json_util::reject_unknown_keys(
      j,
      {"lr", "batch_size", "fragment_len", "epochs", "gamma", "dropout", "seed", "use_spatial",
       "use_sequential", "protocol", "holdout_scenes", "subsample_stride", "train_fraction",
       "data_dir", "checkpoint_path", "model"},
      what);
  TrainConfig cfg;
  read_optional(j, "lr", cfg.lr, what);
  read_optional(j, "batch_size", cfg.batch_size, what);
  read_optional(j, "fragment_len", cfg.fragment_len, what);
  read_optional(j, "epochs", cfg.epochs, what);
  read_optional(j, "gamma", cfg.gamma, what);
  read_optional(j, "dropout", cfg.dropout, what);
  read_optional(j, "seed", cfg.seed, what);
  read_optional(j, "use_spatial", cfg.use_spatial, what);
  read_optional(j, "use_sequential", cfg.use_sequential, what);
  std::string protocol = to_string(cfg.protocol);
  read_optional(j, "protocol", protocol, what);
  cfg.protocol = parse_protocol(protocol);
  read_optional(j, "holdout_scenes", cfg.holdout_scenes, what);
  read_optional(j, "subsample_stride", cfg.subsample_stride, what);
  read_optional(j, "train_fraction", cfg.train_fraction, what);
  read_optional(j, "data_dir", cfg.data_dir, what);
  read_optional(j, "checkpoint_path", cfg.checkpoint_path, what);
  if (auto it = j.find("model"); it != j.end()) cfg.model = *it;
  cfg.validate();
  // Surface bad architecture overrides now rather than after loading data.
  (void)cfg.model_config(1, 32, 32);
  return cfg;
}

TrainConfig load_train_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return train_config_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Splits

std::vector<std::size_t> default_holdout_scenes(const std::vector<MultiCamSequence>& data) {
  std::set<std::size_t> scenes;
  for (const auto& s : data) scenes.insert(s.scene);
  const std::size_t count = std::max<std::size_t>(1, (scenes.size() + 1) / 3);
  std::vector<std::size_t> all(scenes.begin(), scenes.end());
  return std::vector<std::size_t>(all.end() - static_cast<std::ptrdiff_t>(std::min(count, all.size())),
                                  all.end());
}

Split make_split(const std::vector<MultiCamSequence>& data, Protocol protocol,
                 const std::vector<std::size_t>& holdout_scenes, double train_fraction) {
  if (data.empty()) throw DataError("dataset is empty");
  Split split;
  switch (protocol) {
    case Protocol::all_frames:
      for (std::size_t i = 0; i < data.size(); ++i) {
        split.train.push_back({i, 0, data[i].num_frames});
        split.test.push_back({i, 0, data[i].num_frames});
      }
      break;
    case Protocol::sequence_out:
      for (std::size_t i = 0; i < data.size(); ++i) {
        const std::size_t T = data[i].num_frames;
        const auto cut = static_cast<std::size_t>(std::floor(static_cast<double>(T) * train_fraction));
        if (cut == 0 || cut >= T)
          throw DataError("sequence " + data[i].id + " with " + std::to_string(T) +
                          " frames is too short for a temporal split");
        split.train.push_back({i, 0, cut});
        split.test.push_back({i, cut, T - cut});
      }
      break;
    case Protocol::surgery_out: {
      std::set<std::size_t> scenes;
      for (const auto& s : data) scenes.insert(s.scene);
      if (scenes.size() < 2)
        throw ConfigError("surgery-out needs at least two scenes, dataset has " + std::to_string(scenes.size()));
      const auto held = holdout_scenes.empty() ? default_holdout_scenes(data) : holdout_scenes;
      const std::set<std::size_t> held_set(held.begin(), held.end());
      for (std::size_t s : held_set)
        if (!scenes.count(s)) throw ConfigError("held-out scene " + std::to_string(s) + " is not in the dataset");
      if (held_set.size() >= scenes.size()) throw ConfigError("surgery-out holds out every scene");
      for (std::size_t i = 0; i < data.size(); ++i) {
        const Segment whole{i, 0, data[i].num_frames};
        (held_set.count(data[i].scene) ? split.test : split.train).push_back(whole);
      }
      break;
    }
  }
  return split;
}

MultiCamSequence segment_sequence(const MultiCamSequence& seq, const Segment& seg) {
  if (seg.len == 0 || seg.begin + seg.len > seq.num_frames)
    throw std::out_of_range("segment outside sequence " + seq.id);
  if (seg.begin == 0 && seg.len == seq.num_frames) return seq;
  MultiCamSequence out = seq;
  const std::size_t per_frame = seq.num_cameras * seq.frame_size();
  out.num_frames = seg.len;
  out.pixels.assign(seq.pixels.begin() + static_cast<std::ptrdiff_t>(seg.begin * per_frame),
                    seq.pixels.begin() + static_cast<std::ptrdiff_t>((seg.begin + seg.len) * per_frame));
  out.labels.assign(seq.labels.begin() + static_cast<std::ptrdiff_t>(seg.begin),
                    seq.labels.begin() + static_cast<std::ptrdiff_t>(seg.begin + seg.len));
  if (seq.has_visibility())
    out.visibility.assign(
        seq.visibility.begin() + static_cast<std::ptrdiff_t>(seg.begin * seq.num_cameras),
        seq.visibility.begin() + static_cast<std::ptrdiff_t>((seg.begin + seg.len) * seq.num_cameras));
  return out;
}

// ---------------------------------------------------------------------------
// Training

namespace {

std::vector<MultiCamSequence> apply_stride(const std::vector<MultiCamSequence>& data, std::size_t stride) {
  if (stride == 1) return data;
  std::vector<MultiCamSequence> out;
  out.reserve(data.size());
  for (const auto& s : data) out.push_back(subsample(s, stride));
  return out;
}

// Config fields that must agree between a checkpoint and a resumed run.
nlohmann::json resume_identity(nlohmann::json j) {
  j.erase("epochs");
  j.erase("data_dir");
  j.erase("checkpoint_path");
  return j;
}

std::size_t stride_of(const Checkpoint& ckpt) {
  return ckpt.train_config.value("subsample_stride", std::size_t{1});
}

}  // namespace

std::size_t steps_per_epoch(const TrainConfig& cfg, const Split& split) {
  std::size_t frames = 0;
  for (const auto& seg : split.train) frames += seg.len;
  const std::size_t per_step = cfg.fragment_len * cfg.batch_size;
  return std::max<std::size_t>(1, (frames + per_step - 1) / per_step);
}

TrainResult train(const TrainConfig& cfg, const std::vector<MultiCamSequence>& raw,
                  const Checkpoint* resume, const EpochCallback& on_epoch) {
  cfg.validate();
  if (raw.empty()) throw DataError("dataset is empty");
  const auto data = apply_stride(raw, cfg.subsample_stride);
  const Split split = make_split(data, cfg.protocol, cfg.holdout_scenes, cfg.train_fraction);
  if (split.train.empty()) throw DataError("no training sequences under " + to_string(cfg.protocol));

  const MultiCamSequence& first = data[split.train.front().seq];
  for (const auto& seg : split.train) {
    const auto& s = data[seg.seq];
    if (seg.len < cfg.fragment_len)
      throw DataError("fragment_len " + std::to_string(cfg.fragment_len) + " exceeds the " +
                      std::to_string(seg.len) + " training frames of sequence " + s.id);
    if (s.num_cameras != first.num_cameras || s.channels != first.channels || s.height != first.height ||
        s.width != first.width)
      throw DataError("training sequences must share camera count and frame extents (" + s.id + " vs " +
                      first.id + ")");
  }
  const std::size_t N = first.num_cameras;
  const ModelConfig mcfg = cfg.model_config(first.channels, first.height, first.width);
  const LossConfig loss_cfg{cfg.gamma, 1e-7};

  Checkpoint ckpt;
  ckpt.model = mcfg;
  ckpt.train_config = to_json(cfg);
  Rng rng(Rng::derive(cfg.seed, 2));
  if (resume) {
    if (!(resume->model == mcfg)) throw ConfigError("resume: checkpoint architecture differs from config");
    if (resume_identity(resume->train_config) != resume_identity(ckpt.train_config))
      throw ConfigError("resume: checkpoint was trained with a different configuration");
    if (resume->epoch > cfg.epochs)
      throw ConfigError("resume: checkpoint already has " + std::to_string(resume->epoch) + " epochs");
    ckpt.params = resume->params.clone();
    ckpt.adam = resume->adam;
    ckpt.epoch = resume->epoch;
    ckpt.epoch_losses = resume->epoch_losses;
    rng.set_state(resume->rng_state);
  } else {
    ckpt.params = init_params(mcfg, Rng::derive(cfg.seed, 1));
    ckpt.adam.lr = cfg.lr;
  }

  const std::size_t steps = steps_per_epoch(cfg, split);
  const std::size_t T = cfg.fragment_len, B = cfg.batch_size;
  while (ckpt.epoch < cfg.epochs) {
    double total = 0.0;
    for (std::size_t step = 0; step < steps; ++step) {
      std::vector<Tensor> fragments;
      std::vector<double> mask(T * B * N, 0.0);
      for (std::size_t b = 0; b < B; ++b) {
        const Segment& seg = split.train[rng.index(split.train.size())];
        const std::size_t start = seg.begin + rng.index(seg.len - T + 1);
        const auto& s = data[seg.seq];
        fragments.push_back(frames_tensor(s, start, T));
        for (std::size_t t = 0; t < T; ++t)
          mask[(t * B + b) * N + static_cast<std::size_t>(s.labels[start + t])] = 1.0;
      }
      double value = 0.0;
      try {
        const Tensor probs = forward_probs(stack_fragments(fragments), ckpt.params, mcfg, true, rng);
        const Tensor loss = focal_loss(probs, Tensor({T, B, N}, std::move(mask)), loss_cfg);
        value = loss.item();
        if (!std::isfinite(value)) throw NonFiniteError("loss");
        backward(loss);
      } catch (const NonFiniteError& e) {
        throw NumericError("non-finite loss at epoch " + std::to_string(ckpt.epoch + 1) + ", step " +
                           std::to_string(step + 1) + ": " + e.what());
      }
      adam_step(ckpt.params, ckpt.adam);
      total += value;
    }
    const double mean = total / static_cast<double>(steps);
    ckpt.epoch_losses.push_back(mean);
    ++ckpt.epoch;
    ckpt.rng_state = rng.state();
    if (on_epoch) on_epoch(ckpt.epoch, mean, ckpt);
  }
  ckpt.rng_state = rng.state();
  TrainResult result;
  result.epoch_losses = ckpt.epoch_losses;
  result.checkpoint = std::move(ckpt);
  return result;
}

void write_loss_log(const std::vector<double>& losses, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "epoch,mean_loss\n";
  char buf[64];
  for (std::size_t i = 0; i < losses.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", losses[i]);
    out << i + 1 << ',' << buf << '\n';
  }
}

// ---------------------------------------------------------------------------
// Evaluation

EvalReport summarize(const std::vector<MultiCamSequence>& truth,
                     const std::vector<std::vector<int>>& predicted, const std::string& protocol) {
  if (truth.size() != predicted.size()) throw std::invalid_argument("summarize: count mismatch");
  EvalReport report;
  report.protocol = protocol;
  std::map<std::size_t, std::pair<double, std::size_t>> per_scene;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    SequenceResult r;
    r.sequence = truth[i].id;
    r.scene = truth[i].scene;
    r.frames = truth[i].num_frames;
    r.dice = dice_score(predicted[i], truth[i].labels, truth[i].num_cameras);
    r.pred_switches = switch_count(predicted[i]);
    r.gt_switches = switch_count(truth[i].labels);
    auto& acc = per_scene[r.scene];
    acc.first += r.dice;
    ++acc.second;
    report.sequences.push_back(std::move(r));
  }
  double sum = 0.0;
  for (const auto& [scene, acc] : per_scene) {
    report.scene_means[scene] = acc.first / static_cast<double>(acc.second);
    sum += report.scene_means[scene];
  }
  report.overall = per_scene.empty() ? 0.0 : sum / static_cast<double>(per_scene.size());
  return report;
}

std::vector<SelectionOutput> run_inference(const Checkpoint& ckpt,
                                           const std::vector<MultiCamSequence>& data) {
  for (const auto& s : data)
    if (s.channels != ckpt.model.frame_channels || s.height != ckpt.model.frame_height ||
        s.width != ckpt.model.frame_width)
      throw DataError("sequence " + s.id + " has " + shape_str({s.channels, s.height, s.width}) +
                      " frames, checkpoint expects " +
                      shape_str({ckpt.model.frame_channels, ckpt.model.frame_height, ckpt.model.frame_width}));
  std::vector<SelectionOutput> out(data.size());
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(data.size()); ++i) {
    try {
      out[static_cast<std::size_t>(i)] = infer(data[static_cast<std::size_t>(i)], ckpt.params, ckpt.model);
    } catch (...) {
#pragma omp critical
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

namespace {

EvalReport evaluate_segments(const Checkpoint& ckpt, const std::vector<MultiCamSequence>& data,
                             const std::vector<Segment>& segments, const std::string& protocol) {
  const auto start = std::chrono::steady_clock::now();
  std::vector<MultiCamSequence> parts;
  parts.reserve(segments.size());
  for (const auto& seg : segments) parts.push_back(segment_sequence(data[seg.seq], seg));
  const auto outputs = run_inference(ckpt, parts);
  std::vector<std::vector<int>> predicted;
  for (const auto& o : outputs) predicted.push_back(o.labels);
  EvalReport report = summarize(parts, predicted, protocol);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.config = {{"model", to_json(ckpt.model)}, {"train", ckpt.train_config}, {"epoch", ckpt.epoch}};
  return report;
}

}  // namespace

EvalReport evaluate(const Checkpoint& ckpt, const std::vector<MultiCamSequence>& raw, Protocol protocol,
                    const std::vector<std::size_t>& holdout_scenes, double train_fraction) {
  const auto data = apply_stride(raw, stride_of(ckpt));
  const Split split = make_split(data, protocol, holdout_scenes, train_fraction);
  if (split.test.empty()) throw DataError("no test sequences under " + to_string(protocol));
  return evaluate_segments(ckpt, data, split.test, to_string(protocol));
}

EvalReport evaluate_sequences(const Checkpoint& ckpt, const std::vector<MultiCamSequence>& raw) {
  const auto data = apply_stride(raw, stride_of(ckpt));
  const Split split = make_split(data, Protocol::all_frames, {});
  return evaluate_segments(ckpt, data, split.test, to_string(Protocol::all_frames));
}

void write_report(const EvalReport& report, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  char buf[64];
  auto num = [&buf](double v) {
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return std::string(buf);
  };
  out << "level,scene,sequence,dice,pred_switches,gt_switches,frames\n";
  for (const auto& r : report.sequences)
    out << "sequence," << r.scene << ',' << r.sequence << ',' << num(r.dice) << ',' << r.pred_switches << ','
        << r.gt_switches << ',' << r.frames << '\n';
  for (const auto& [scene, mean] : report.scene_means) {
    std::size_t pred = 0, gt = 0, frames = 0;
    for (const auto& r : report.sequences)
      if (r.scene == scene) {
        pred += r.pred_switches;
        gt += r.gt_switches;
        frames += r.frames;
      }
    out << "scene," << scene << ",," << num(mean) << ',' << pred << ',' << gt << ',' << frames << '\n';
  }
  std::size_t pred = 0, gt = 0, frames = 0;
  for (const auto& r : report.sequences) {
    pred += r.pred_switches;
    gt += r.gt_switches;
    frames += r.frames;
  }
  out << "overall,,," << num(report.overall) << ',' << pred << ',' << gt << ',' << frames << '\n';
  if (!out) throw DataError("write failed for " + path.string());

  std::ofstream side(path.string() + ".json");
  if (!side) throw DataError("cannot write " + path.string() + ".json");
  side << nlohmann::json{{"protocol", report.protocol},
                         {"overall", report.overall},
                         {"wall_seconds", report.wall_seconds},
                         {"config", report.config}}
              .dump(2)
       << '\n';
}

// ---------------------------------------------------------------------------
// Selection export

std::size_t write_selection(const std::vector<MultiCamSequence>& data,
                            const std::vector<SelectionOutput>& outputs, const fs::path& path) {
  if (data.size() != outputs.size()) throw std::invalid_argument("write_selection: count mismatch");
  std::size_t max_cameras = 0;
  for (const auto& o : outputs) max_cameras = std::max(max_cameras, o.num_cameras);
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "sequence,t,label";
  for (std::size_t n = 0; n < max_cameras; ++n) out << ",p" << n;
  out << '\n';
  std::size_t rows = 0;
  char buf[32];
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& o = outputs[i];
    for (std::size_t t = 0; t < o.num_frames; ++t) {
      out << data[i].id << ',' << t << ',' << o.labels[t];
      for (std::size_t n = 0; n < max_cameras; ++n) {
        out << ',';
        if (n < o.num_cameras) {
          std::snprintf(buf, sizeof buf, "%.6f", o.prob(t, n));
          out << buf;
        }
      }
      out << '\n';
      ++rows;
    }
  }
  if (!out) throw DataError("write failed for " + path.string());
  return rows;
}

void write_montages(const std::vector<MultiCamSequence>& data, const std::vector<SelectionOutput>& outputs,
                    const fs::path& dir, std::size_t columns) {
  if (data.size() != outputs.size()) throw std::invalid_argument("write_montages: count mismatch");
  if (columns == 0) throw std::invalid_argument("write_montages: columns must be positive");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  constexpr std::size_t border = 2, gap = 2;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& s = data[i];
    const std::size_t cols = std::min(columns, s.num_frames);
    const std::size_t cell_h = s.height + 2 * border, cell_w = s.width + 2 * border;
    const std::size_t H = s.num_cameras * (cell_h + gap) + gap, W = cols * (cell_w + gap) + gap;
    std::vector<std::uint8_t> rgb(H * W * 3, 255);
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t t = c * s.num_frames / cols;
      for (std::size_t n = 0; n < s.num_cameras; ++n) {
        const bool chosen = outputs[i].labels[t] == static_cast<int>(n);
        const bool truth = s.labels[t] == static_cast<int>(n);
        std::uint8_t frame_rgb[3] = {200, 200, 200};
        if (chosen) frame_rgb[0] = 0, frame_rgb[1] = 220, frame_rgb[2] = 0;
        else if (truth) frame_rgb[0] = 220, frame_rgb[1] = 0, frame_rgb[2] = 0;
        const auto px = s.frame(t, n);
        const std::size_t y0 = gap + n * (cell_h + gap), x0 = gap + c * (cell_w + gap);
        for (std::size_t y = 0; y < cell_h; ++y)
          for (std::size_t x = 0; x < cell_w; ++x) {
            const bool edge = y < border || x < border || y >= cell_h - border || x >= cell_w - border;
            auto* dst = &rgb[((y0 + y) * W + x0 + x) * 3];
            if (edge) {
              std::copy(frame_rgb, frame_rgb + 3, dst);
            } else {
              // First channel only; frames on disk are single channel.
              const std::uint8_t g = px[(y - border) * s.width + (x - border)];
              dst[0] = dst[1] = dst[2] = g;
            }
          }
      }
    }
    const fs::path path = dir / (s.id + ".ppm");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << "P6\n" << W << ' ' << H << "\n255\n";
    out.write(reinterpret_cast<const char*>(rgb.data()), static_cast<std::streamsize>(rgb.size()));
  }
}

}  // namespace csel
