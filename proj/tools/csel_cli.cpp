// Command-line front end: gen-data, train, eval, select, baseline, plot.
//
// Exit codes: 0 success, 1 usage or config error, 2 data error, 3 numeric
// failure (non-finite loss).

#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>

#include <CLI11.hpp>

#include "csel/baselines.hpp"
#include "csel/checkpoint.hpp"
#include "csel/errors.hpp"
#include "csel/harness.hpp"
#include "csel/plot.hpp"
#include "csel/synthdata.hpp"

namespace fs = std::filesystem;
using namespace csel;

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": malformed JSON: " + e.what());
  }
}

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  static const std::regex range(R"((\d+)(?:\.\.(\d+))?)");
  std::smatch m;
  if (!std::regex_match(text, m, range)) throw ConfigError("bad seed range \"" + text + "\", expected a..b");
  const auto a = std::stoull(m[1].str());
  const auto b = m[2].matched ? std::stoull(m[2].str()) : a;
  if (b < a) throw ConfigError("empty seed range \"" + text + "\"");
  return {a, b};
}

std::vector<std::size_t> holdout_from(const Checkpoint& ckpt) {
  return ckpt.train_config.value("holdout_scenes", std::vector<std::size_t>{});
}

void print_report(const EvalReport& r) {
  for (const auto& [scene, mean] : r.scene_means) std::printf("scene %zu  dice %.4f\n", scene, mean);
  std::printf("overall dice %.4f (%s, %zu sequences, %.1fs)\n", r.overall, r.protocol.c_str(),
              r.sequences.size(), r.wall_seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-camera best-view selection"};
  app.require_subcommand(1);

  std::string config, out, data, ckpt_path, report, protocol = "sequence-out", montage, lambda_text = "1",
                                                    seeds = "0..19", resume, loss_log, input;
  std::size_t num_scenes = 5;
  std::vector<std::size_t> holdout;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic multi-camera dataset");
  gen->add_option("--config", config, "Scene config JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seeds", seeds, "Inclusive seed range a..b")->capture_default_str();
  gen->add_option("--scenes", num_scenes, "Number of scene types (overrides num_scenes in the config)");

  auto* tr = app.add_subcommand("train", "Train a selection model");
  tr->add_option("--config", config, "Train config JSON")->required()->check(CLI::ExistingFile);
  tr->add_option("--data", data, "Dataset directory");
  tr->add_option("--out", out, "Checkpoint path");
  tr->add_option("--resume", resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  tr->add_option("--loss-log", loss_log, "Loss CSV (default <out>.loss.csv)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint");
  ev->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--protocol", protocol, "sequence-out, surgery-out or all")->capture_default_str();
  ev->add_option("--holdout", holdout, "Held-out scene ids (default: from the checkpoint)");
  ev->add_option("--report", report, "Report CSV")->required();

  auto* sel = app.add_subcommand("select", "Export per-frame camera selections");
  sel->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  sel->add_option("--data", data, "Dataset directory")->required();
  sel->add_option("--out", out, "selection.csv path")->required();
  sel->add_option("--montage", montage, "Directory for PPM contact sheets");

  auto* base = app.add_subcommand("baseline", "Visibility + shortest-path reference selector");
  base->add_option("--data", data, "Dataset directory")->required();
  base->add_option("--lambda", lambda_text, "Switch penalty (number or inf)")->capture_default_str();
  base->add_option("--protocol", protocol, "Frames to score: all, sequence-out or surgery-out");
  base->add_option("--holdout", holdout, "Held-out scene ids for surgery-out");
  base->add_option("--report", report, "Report CSV")->required();

  auto* pl = app.add_subcommand("plot", "Render a loss log or report as SVG");
  pl->add_option("--in", input, "Loss log or report CSV")->required();
  pl->add_option("--out", out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*gen) {
      SceneConfig scene;
      if (!config.empty()) {
        const auto j = read_json(config);
        scene = scene_config_from_json(j, {"num_scenes"});
        if (j.contains("num_scenes") && gen->count("--scenes") == 0) num_scenes = j.at("num_scenes").get<std::size_t>();
      }
      const auto [first, last] = parse_seed_range(seeds);
      const auto seqs = generate_dataset(scene, num_scenes, first, last);
      write_dataset(seqs, out);
      std::printf("wrote %zu sequences to %s\n", seqs.size(), out.c_str());
    } else if (*tr) {
      TrainConfig cfg = load_train_config(config);
      if (!data.empty()) cfg.data_dir = data;
      if (!out.empty()) cfg.checkpoint_path = out;
      if (cfg.data_dir.empty()) throw ConfigError("train: no dataset (--data or data_dir)");
      if (cfg.checkpoint_path.empty()) throw ConfigError("train: no checkpoint path (--out or checkpoint_path)");
      if (loss_log.empty()) loss_log = cfg.checkpoint_path + ".loss.csv";
      const auto seqs = read_dataset(cfg.data_dir);
      std::optional<Checkpoint> from;
      if (!resume.empty()) from = load_checkpoint(resume);
      const auto result = train(cfg, seqs, from ? &*from : nullptr,
                                [&](std::size_t epoch, double loss, const Checkpoint& ckpt) {
                                  std::fprintf(stderr, "epoch %zu/%zu  loss %.6g\n", epoch, cfg.epochs, loss);
                                  save_checkpoint(ckpt, cfg.checkpoint_path);
                                  write_loss_log(ckpt.epoch_losses, loss_log);
                                });
      save_checkpoint(result.checkpoint, cfg.checkpoint_path);
      write_loss_log(result.epoch_losses, loss_log);
      std::printf("checkpoint %s, loss log %s\n", cfg.checkpoint_path.c_str(), loss_log.c_str());
    } else if (*ev) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto seqs = read_dataset(data);
      const auto p = parse_protocol(protocol);
      const double fraction = ckpt.train_config.value("train_fraction", 0.8);
      EvalReport r = evaluate(ckpt, seqs, p, holdout.empty() ? holdout_from(ckpt) : holdout, fraction);
      write_report(r, report);
      print_report(r);
    } else if (*sel) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const auto seqs = read_dataset(data);
      const auto outputs = run_inference(ckpt, seqs);
      const std::size_t rows = write_selection(seqs, outputs, out);
      if (!montage.empty()) write_montages(seqs, outputs, montage);
      std::printf("wrote %zu rows to %s\n", rows, out.c_str());
    } else if (*base) {
      SwitchGraphConfig g;
      g.switch_penalty = parse_switch_penalty(lambda_text);
      const auto seqs = read_dataset(data);
      const auto p = base->count("--protocol") ? parse_protocol(protocol) : Protocol::all_frames;
      const Split split = make_split(seqs, p, holdout);
      std::vector<MultiCamSequence> parts;
      std::vector<std::vector<int>> predicted;
      for (const auto& seg : split.test) {
        parts.push_back(segment_sequence(seqs[seg.seq], seg));
        const auto& s = parts.back();
        if (!s.has_visibility()) throw DataError("sequence " + s.id + " has no visibility.csv for the baseline");
        predicted.push_back(dijkstra_smooth(s.visibility, s.num_frames, s.num_cameras, g));
      }
      EvalReport r = summarize(parts, predicted, to_string(p));
      r.config = {{"baseline", "visibility+dijkstra"}, {"lambda", lambda_text}};
      write_report(r, report);
      print_report(r);
    } else if (*pl) {
      const auto path = plot_file(input, out);
      std::printf("wrote %s\n", path.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 3;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
