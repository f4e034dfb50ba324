#include "csel/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "csel/errors.hpp"
#include "csel/json_util.hpp"
#include "csel/rng.hpp"

namespace csel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// SceneConfig

void SceneConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("scene config: " + msg); };
  if (num_cameras < 2) fail("num_cameras must be at least 2");
  if (frames_per_seq < 1) fail("frames_per_seq must be positive");
  if (frame_height == 0 || frame_width == 0) fail("frame extents must be positive");
  if (!(occluder_radius_min > 0.0) || occluder_radius_max < occluder_radius_min)
    fail("occluder radius range must be positive and ordered");
  if (!(occluder_step >= 0.0) || !(occluder_extent > 0.0)) fail("occluder motion parameters must be positive");
  if (!(target_radius > 0.0)) fail("target_radius must be positive");
  if (!(parallax >= 0.0) || !(view_offset >= 0.0)) fail("viewpoint spread must be non-negative");
  if (!(pixel_noise >= 0.0)) fail("pixel_noise must be non-negative");
  if (!(hysteresis_margin >= 0.0)) fail("hysteresis_margin must be non-negative");
  if (hysteresis_persistence < 1) fail("hysteresis_persistence must be at least 1");
  if (!viewpoints.empty() && viewpoints.size() != num_cameras)
    fail("viewpoints must list one entry per camera");
  const auto views = resolved_viewpoints();
  for (std::size_t a = 0; a < views.size(); ++a)
    for (std::size_t b = a + 1; b < views.size(); ++b)
      if (views[a] == views[b]) fail("viewpoints " + std::to_string(a) + " and " + std::to_string(b) + " coincide");
}

std::vector<Viewpoint> SceneConfig::resolved_viewpoints() const {
  if (!viewpoints.empty()) return viewpoints;
  std::vector<Viewpoint> views(num_cameras);
  for (std::size_t n = 0; n < num_cameras; ++n) {
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(num_cameras);
    views[n].rotation = angle;
    views[n].offset_x = view_offset * std::cos(angle + 0.5);
    views[n].offset_y = view_offset * std::sin(angle + 0.5);
    views[n].parallax_x = parallax * std::cos(angle);
    views[n].parallax_y = parallax * std::sin(angle);
  }
  return views;
}

TargetShape SceneConfig::target_shape() const { return static_cast<TargetShape>(scene_id % 5); }

nlohmann::json to_json(const SceneConfig& cfg) {
  nlohmann::json views = nlohmann::json::array();
  for (const auto& v : cfg.viewpoints)
    views.push_back({{"rotation", v.rotation},
                     {"offset_x", v.offset_x},
                     {"offset_y", v.offset_y},
                     {"parallax_x", v.parallax_x},
                     {"parallax_y", v.parallax_y}});
  return {{"num_cameras", cfg.num_cameras},
          {"frames_per_seq", cfg.frames_per_seq},
          {"frame_height", cfg.frame_height},
          {"frame_width", cfg.frame_width},
          {"num_occluders", cfg.num_occluders},
          {"occluder_radius_min", cfg.occluder_radius_min},
          {"occluder_radius_max", cfg.occluder_radius_max},
          {"occluder_step", cfg.occluder_step},
          {"occluder_extent", cfg.occluder_extent},
          {"target_radius", cfg.target_radius},
          {"parallax", cfg.parallax},
          {"view_offset", cfg.view_offset},
          {"viewpoints", views},
          {"pixel_noise", cfg.pixel_noise},
          {"seed", cfg.seed},
          {"scene_id", cfg.scene_id},
          {"hysteresis_margin", cfg.hysteresis_margin},
          {"hysteresis_persistence", cfg.hysteresis_persistence}};
}

SceneConfig scene_config_from_json(const nlohmann::json& j,
                                   std::initializer_list<std::string_view> extra_keys) {
  using json_util::read_optional;
  constexpr std::string_view what = "scene config";
  if (!j.is_object()) throw ConfigError("scene config: expected a JSON object");
  static constexpr std::string_view known[] = {
      "num_cameras",   "frames_per_seq",    "frame_height",   "frame_width",
      "num_occluders", "occluder_radius_min", "occluder_radius_max", "occluder_step",
      "occluder_extent", "target_radius",   "parallax",       "view_offset",
      "viewpoints",    "pixel_noise",       "seed",           "scene_id",
      "hysteresis_margin", "hysteresis_persistence"};
  for (const auto& item : j.items()) {
    const bool ok = std::find(std::begin(known), std::end(known), item.key()) != std::end(known) ||
                    std::find(extra_keys.begin(), extra_keys.end(), item.key()) != extra_keys.end();
    if (!ok) throw ConfigError("scene config: unknown key \"" + item.key() + "\"");
  }
  SceneConfig cfg;
  read_optional(j, "num_cameras", cfg.num_cameras, what);
  read_optional(j, "frames_per_seq", cfg.frames_per_seq, what);
  read_optional(j, "frame_height", cfg.frame_height, what);
  read_optional(j, "frame_width", cfg.frame_width, what);
  read_optional(j, "num_occluders", cfg.num_occluders, what);
  read_optional(j, "occluder_radius_min", cfg.occluder_radius_min, what);
  read_optional(j, "occluder_radius_max", cfg.occluder_radius_max, what);
  read_optional(j, "occluder_step", cfg.occluder_step, what);
  read_optional(j, "occluder_extent", cfg.occluder_extent, what);
  read_optional(j, "target_radius", cfg.target_radius, what);
  read_optional(j, "parallax", cfg.parallax, what);
  read_optional(j, "view_offset", cfg.view_offset, what);
  read_optional(j, "pixel_noise", cfg.pixel_noise, what);
  read_optional(j, "seed", cfg.seed, what);
  read_optional(j, "scene_id", cfg.scene_id, what);
  read_optional(j, "hysteresis_margin", cfg.hysteresis_margin, what);
  read_optional(j, "hysteresis_persistence", cfg.hysteresis_persistence, what);
  if (auto it = j.find("viewpoints"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("scene config: viewpoints must be an array");
    for (const auto& v : *it) {
      json_util::reject_unknown_keys(v, {"rotation", "offset_x", "offset_y", "parallax_x", "parallax_y"},
                                     "scene config viewpoint");
      Viewpoint vp;
      read_optional(v, "rotation", vp.rotation, what);
      read_optional(v, "offset_x", vp.offset_x, what);
      read_optional(v, "offset_y", vp.offset_y, what);
      read_optional(v, "parallax_x", vp.parallax_x, what);
      read_optional(v, "parallax_y", vp.parallax_y, what);
      cfg.viewpoints.push_back(vp);
    }
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Simulation

namespace {

struct Occluder {
  double x = 0.0, y = 0.0;
  double vx = 0.0, vy = 0.0;
  double radius = 1.0;
};

bool inside_target(TargetShape shape, double r, double x, double y) {
  const double ax = std::abs(x), ay = std::abs(y);
  switch (shape) {
    case TargetShape::disk: return x * x + y * y <= r * r;
    case TargetShape::square: return std::max(ax, ay) <= 0.9 * r;
    case TargetShape::diamond: return ax + ay <= 1.25 * r;
    case TargetShape::ring: {
      const double d2 = x * x + y * y;
      return d2 <= 1.1 * 1.1 * r * r && d2 >= 0.45 * 0.45 * r * r;
    }
    case TargetShape::cross:
      return (ax <= 0.4 * r && ay <= 1.2 * r) || (ay <= 0.4 * r && ax <= 1.2 * r);
  }
  return false;
}

// Per-scene appearance and dynamics ("surgery type").
struct SceneStyle {
  double background = 0.32;
  double stripe_amplitude = 0.04;
  double stripe_angle = 0.0;
  double stripe_period = 7.0;
  double speed = 1.0;
  double target_level = 0.92;
  double occluder_level = 0.08;
};

SceneStyle scene_style(std::size_t scene_id) {
  SceneStyle s;
  s.background = 0.28 + 0.04 * static_cast<double>(scene_id % 3);
  s.stripe_angle = 0.7 * static_cast<double>(scene_id);
  s.stripe_period = 5.0 + static_cast<double>(scene_id % 4);
  s.speed = 0.75 + 0.125 * static_cast<double>((scene_id * 3) % 5);
  return s;
}

void reflect(double& pos, double& vel, double extent) {
  for (int guard = 0; guard < 4 && (pos > extent || pos < -extent); ++guard) {
    if (pos > extent) pos = 2.0 * extent - pos;
    if (pos < -extent) pos = -2.0 * extent - pos;
    vel = -vel;
  }
  pos = std::clamp(pos, -extent, extent);
}

double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

MultiCamSequence simulate_sequence(const SceneConfig& cfg) {
  cfg.validate();
  const double half_extent = 0.5 * static_cast<double>(std::min(cfg.frame_height, cfg.frame_width));
  if (1.3 * cfg.target_radius + cfg.view_offset >= half_extent)
    throw ConfigError("scene config: target of radius " + std::to_string(cfg.target_radius) +
                      " does not fit in a " + std::to_string(cfg.frame_height) + "x" +
                      std::to_string(cfg.frame_width) + " frame");

  const std::size_t T = cfg.frames_per_seq, N = cfg.num_cameras;
  const std::size_t H = cfg.frame_height, W = cfg.frame_width;
  const auto views = cfg.resolved_viewpoints();
  const SceneStyle style = scene_style(cfg.scene_id);
  const TargetShape shape = cfg.target_shape();
  Rng rng(cfg.seed);

  std::vector<Occluder> occluders(cfg.num_occluders);
  for (auto& o : occluders) {
    o.x = rng.uniform(-cfg.occluder_extent, cfg.occluder_extent);
    o.y = rng.uniform(-cfg.occluder_extent, cfg.occluder_extent);
    o.radius = rng.uniform(cfg.occluder_radius_min, cfg.occluder_radius_max);
  }

  MultiCamSequence seq;
  seq.id = "seq_" + std::to_string(cfg.seed);
  seq.scene = cfg.scene_id;
  seq.num_frames = T;
  seq.num_cameras = N;
  seq.channels = 1;
  seq.height = H;
  seq.width = W;
  seq.pixels.resize(T * N * H * W);
  seq.visibility.resize(T * N);

  // Ground-plane coordinates of every pixel centre, per camera.
  std::vector<double> plane_x(N * H * W), plane_y(N * H * W);
  std::vector<std::size_t> target_pixels(N, 0);
  for (std::size_t n = 0; n < N; ++n) {
    const double c = std::cos(views[n].rotation), s = std::sin(views[n].rotation);
    for (std::size_t v = 0; v < H; ++v)
      for (std::size_t u = 0; u < W; ++u) {
        const double dx = static_cast<double>(u) + 0.5 - 0.5 * static_cast<double>(W);
        const double dy = static_cast<double>(v) + 0.5 - 0.5 * static_cast<double>(H);
        const std::size_t i = (n * H + v) * W + u;
        plane_x[i] = c * dx - s * dy + views[n].offset_x;
        plane_y[i] = s * dx + c * dy + views[n].offset_y;
        if (inside_target(shape, cfg.target_radius, plane_x[i], plane_y[i])) ++target_pixels[n];
      }
    if (target_pixels[n] == 0)
      throw ConfigError("scene config: target covers no pixel in camera " + std::to_string(n));
  }

  for (std::size_t t = 0; t < T; ++t) {
    if (t > 0) {
      for (auto& o : occluders) {
        o.vx = 0.85 * o.vx + style.speed * cfg.occluder_step * rng.uniform(-1.0, 1.0);
        o.vy = 0.85 * o.vy + style.speed * cfg.occluder_step * rng.uniform(-1.0, 1.0);
        o.x += o.vx;
        o.y += o.vy;
        reflect(o.x, o.vx, cfg.occluder_extent);
        reflect(o.y, o.vy, cfg.occluder_extent);
      }
    }
    for (std::size_t n = 0; n < N; ++n) {
      std::size_t visible = 0;
      auto frame = seq.frame(t, n);
      for (std::size_t v = 0; v < H; ++v)
        for (std::size_t u = 0; u < W; ++u) {
          const std::size_t i = (n * H + v) * W + u;
          const double px = plane_x[i], py = plane_y[i];
          const double ox = px + views[n].parallax_x, oy = py + views[n].parallax_y;
          bool occluded = false;
          for (const auto& o : occluders) {
            const double ddx = ox - o.x, ddy = oy - o.y;
            if (ddx * ddx + ddy * ddy <= o.radius * o.radius) {
              occluded = true;
              break;
            }
          }
          const bool target = inside_target(shape, cfg.target_radius, px, py);
          double level;
          if (occluded) {
            level = style.occluder_level;
          } else if (target) {
            level = style.target_level;
            ++visible;
          } else {
            const double phase = (std::cos(style.stripe_angle) * px + std::sin(style.stripe_angle) * py) /
                                 style.stripe_period;
            level = style.background + style.stripe_amplitude * std::sin(2.0 * std::numbers::pi * phase);
          }
          level += cfg.pixel_noise * rng.uniform(-1.0, 1.0);
          frame[v * W + u] = static_cast<std::uint8_t>(std::lround(std::clamp(level, 0.0, 1.0) * 255.0));
        }
      seq.visibility[t * N + n] =
          round6(static_cast<double>(visible) / static_cast<double>(target_pixels[n]));
    }
  }

  seq.labels = annotate_labels(seq.visibility, T, N, cfg.hysteresis_margin, cfg.hysteresis_persistence);
  return seq;
}

std::vector<int> annotate_labels(std::span<const double> visibility, std::size_t num_frames,
                                 std::size_t num_cameras, double margin, std::size_t persistence) {
  if (visibility.size() != num_frames * num_cameras)
    throw std::invalid_argument("annotate_labels: visibility size mismatch");
  std::vector<int> labels(num_frames, 0);
  if (num_frames == 0) return labels;
  auto row = [&](std::size_t t) { return visibility.subspan(t * num_cameras, num_cameras); };

  const auto first = row(0);
  std::size_t current = static_cast<std::size_t>(std::max_element(first.begin(), first.end()) - first.begin());
  std::vector<std::size_t> run(num_cameras, 0);
  labels[0] = static_cast<int>(current);
  for (std::size_t t = 1; t < num_frames; ++t) {
    const auto v = row(t);
    std::optional<std::size_t> winner;
    for (std::size_t m = 0; m < num_cameras; ++m) {
      if (m == current) continue;
      run[m] = (v[m] - v[current] > margin) ? run[m] + 1 : 0;
      if (run[m] >= persistence && (!winner || v[m] > v[*winner])) winner = m;
    }
    if (winner) {
      current = *winner;
      std::fill(run.begin(), run.end(), 0);
    }
    labels[t] = static_cast<int>(current);
  }
  return labels;
}

MultiCamSequence subsample(const MultiCamSequence& seq, std::size_t stride) {
  if (stride < 1) throw std::invalid_argument("subsample: stride must be at least 1");
  MultiCamSequence out = seq;
  out.pixels.clear();
  out.labels.clear();
  out.visibility.clear();
  const std::size_t per_frame = seq.num_cameras * seq.frame_size();
  for (std::size_t t = 0; t < seq.num_frames; t += stride) {
    out.pixels.insert(out.pixels.end(), seq.pixels.begin() + static_cast<std::ptrdiff_t>(t * per_frame),
                      seq.pixels.begin() + static_cast<std::ptrdiff_t>((t + 1) * per_frame));
    out.labels.push_back(seq.labels[t]);
    if (seq.has_visibility())
      out.visibility.insert(out.visibility.end(),
                            seq.visibility.begin() + static_cast<std::ptrdiff_t>(t * seq.num_cameras),
                            seq.visibility.begin() + static_cast<std::ptrdiff_t>((t + 1) * seq.num_cameras));
  }
  out.num_frames = out.labels.size();
  return out;
}

std::vector<MultiCamSequence> generate_dataset(const SceneConfig& base, std::size_t num_scenes,
                                               std::uint64_t first_seed, std::uint64_t last_seed) {
  if (num_scenes == 0) throw ConfigError("generate_dataset: num_scenes must be positive");
  if (last_seed < first_seed) throw ConfigError("generate_dataset: empty seed range");
  const std::size_t count = static_cast<std::size_t>(last_seed - first_seed + 1);
  std::vector<MultiCamSequence> out(count);
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(count); ++i) {
    SceneConfig cfg = base;
    const std::uint64_t seed = first_seed + static_cast<std::uint64_t>(i);
    cfg.seed = Rng::derive(seed, 0);
    cfg.scene_id = static_cast<std::size_t>(i) % num_scenes;
    out[static_cast<std::size_t>(i)] = simulate_sequence(cfg);
    std::ostringstream id;
    id << "s" << cfg.scene_id << "_seed" << std::setw(4) << std::setfill('0') << seed;
    out[static_cast<std::size_t>(i)].id = id.str();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Dataset I/O

std::string ManifestEntry::frame_path(std::size_t n, std::size_t t) const {
  std::string path = frame_pattern;
  auto replace = [&path](const std::string& key, const std::string& value) {
    const auto pos = path.find(key);
    if (pos != std::string::npos) path.replace(pos, key.size(), value);
  };
  std::ostringstream tt;
  tt << std::setw(6) << std::setfill('0') << t;
  replace("{n}", std::to_string(n));
  replace("{t:06}", tt.str());
  return path;
}

void write_pgm(const fs::path& path, std::span<const std::uint8_t> pixels, std::size_t height,
               std::size_t width) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

namespace {

// Next whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string token;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(c);
  }
  return token;
}

std::size_t parse_size(const std::string& s, const fs::path& path) {
  try {
    std::size_t pos = 0;
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed number \"" + s + "\"");
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::ifstream open_text(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  return in;
}

double parse_double(const std::string& s, const fs::path& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw DataError(path.string() + ": malformed value \"" + s + "\"");
  return v;
}

}  // namespace

std::vector<std::uint8_t> read_pgm(const fs::path& path, std::size_t& height, std::size_t& width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing frame file: " + path.string());
  if (pgm_token(in) != "P5") throw DataError(path.string() + ": not a binary PGM (P5)");
  width = parse_size(pgm_token(in), path);
  height = parse_size(pgm_token(in), path);
  if (parse_size(pgm_token(in), path) != 255) throw DataError(path.string() + ": only 8-bit PGM is supported");
  std::vector<std::uint8_t> pixels(height * width);
  in.read(reinterpret_cast<char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(pixels.size()))
    throw DataError(path.string() + ": truncated pixel data");
  return pixels;
}

DatasetManifest write_dataset(std::span<const MultiCamSequence> seqs, const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  DatasetManifest manifest;
  nlohmann::json list = nlohmann::json::array();
  for (const auto& seq : seqs) {
    seq.validate();
    if (seq.channels != 1) throw DataError("sequence " + seq.id + ": PGM frames need a single channel");
    ManifestEntry e;
    e.id = seq.id;
    e.scene = seq.scene;
    e.num_cameras = seq.num_cameras;
    e.num_frames = seq.num_frames;
    e.height = seq.height;
    e.width = seq.width;
    e.frame_pattern = seq.id + "/cam{n}/frame{t:06}.pgm";
    e.labels_file = seq.id + "/labels.csv";
    e.visibility_file = seq.has_visibility() ? seq.id + "/visibility.csv" : "";

    for (std::size_t n = 0; n < seq.num_cameras; ++n) {
      fs::create_directories(dir / seq.id / ("cam" + std::to_string(n)), ec);
      if (ec) throw DataError("cannot create camera directory under " + (dir / seq.id).string());
      for (std::size_t t = 0; t < seq.num_frames; ++t)
        write_pgm(dir / e.frame_path(n, t), seq.frame(t, n), seq.height, seq.width);
    }
    {
      std::ofstream out(dir / e.labels_file);
      if (!out) throw DataError("cannot write " + (dir / e.labels_file).string());
      out << "t,label\n";
      for (std::size_t t = 0; t < seq.num_frames; ++t) out << t << ',' << seq.labels[t] << '\n';
    }
    if (seq.has_visibility()) {
      std::ofstream out(dir / e.visibility_file);
      if (!out) throw DataError("cannot write " + (dir / e.visibility_file).string());
      out << "t";
      for (std::size_t n = 0; n < seq.num_cameras; ++n) out << ",v" << n;
      out << '\n' << std::fixed << std::setprecision(6);
      for (std::size_t t = 0; t < seq.num_frames; ++t) {
        out << t;
        for (std::size_t n = 0; n < seq.num_cameras; ++n) out << ',' << seq.visibility_at(t, n);
        out << '\n';
      }
    }
    list.push_back({{"id", e.id},
                    {"scene", e.scene},
                    {"num_cameras", e.num_cameras},
                    {"num_frames", e.num_frames},
                    {"height", e.height},
                    {"width", e.width},
                    {"frame_pattern", e.frame_pattern},
                    {"labels", e.labels_file},
                    {"visibility", e.visibility_file}});
    manifest.sequences.push_back(std::move(e));
  }
  std::ofstream out(dir / "manifest.json");
  if (!out) throw DataError("cannot write " + (dir / "manifest.json").string());
  out << nlohmann::json{{"format", "csel-dataset"}, {"version", 1}, {"sequences", list}}.dump(2) << '\n';
  return manifest;
}

DatasetManifest read_manifest(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw DataError("missing manifest: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": malformed JSON: " + e.what());
  }
  DatasetManifest manifest;
  try {
    if (j.at("format") != "csel-dataset") throw DataError(path.string() + ": unknown format");
    if (j.at("version") != 1) throw DataError(path.string() + ": unsupported version");
    for (const auto& s : j.at("sequences")) {
      ManifestEntry e;
      e.id = s.at("id").get<std::string>();
      e.scene = s.at("scene").get<std::size_t>();
      e.num_cameras = s.at("num_cameras").get<std::size_t>();
      e.num_frames = s.at("num_frames").get<std::size_t>();
      e.height = s.at("height").get<std::size_t>();
      e.width = s.at("width").get<std::size_t>();
      e.frame_pattern = s.at("frame_pattern").get<std::string>();
      e.labels_file = s.at("labels").get<std::string>();
      e.visibility_file = s.value("visibility", std::string());
      manifest.sequences.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return manifest;
}

std::vector<MultiCamSequence> read_dataset(const fs::path& dir) {
  const DatasetManifest manifest = read_manifest(dir);
  std::vector<MultiCamSequence> out;
  out.reserve(manifest.sequences.size());
  for (const auto& e : manifest.sequences) {
    MultiCamSequence seq;
    seq.id = e.id;
    seq.scene = e.scene;
    seq.num_cameras = e.num_cameras;
    seq.num_frames = e.num_frames;
    seq.channels = 1;
    seq.height = e.height;
    seq.width = e.width;
    seq.pixels.resize(e.num_frames * e.num_cameras * e.height * e.width);
    for (std::size_t t = 0; t < e.num_frames; ++t)
      for (std::size_t n = 0; n < e.num_cameras; ++n) {
        const fs::path path = dir / e.frame_path(n, t);
        std::size_t h = 0, w = 0;
        const auto pixels = read_pgm(path, h, w);
        if (h != e.height || w != e.width)
          throw DataError(path.string() + ": frame is " + std::to_string(h) + "x" + std::to_string(w) +
                          ", manifest says " + std::to_string(e.height) + "x" + std::to_string(e.width));
        std::copy(pixels.begin(), pixels.end(), seq.frame(t, n).begin());
      }

    const fs::path labels_path = dir / e.labels_file;
    auto in = open_text(labels_path);
    std::string line;
    if (!std::getline(in, line) || line != "t,label") throw DataError(labels_path.string() + ": bad header");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      const auto f = split_csv(line);
      if (f.size() != 2) throw DataError(labels_path.string() + ": malformed row \"" + line + "\"");
      if (parse_size(f[0], labels_path) != seq.labels.size())
        throw DataError(labels_path.string() + ": rows out of order");
      seq.labels.push_back(static_cast<int>(parse_size(f[1], labels_path)));
    }
    if (seq.labels.size() != e.num_frames)
      throw DataError(labels_path.string() + ": " + std::to_string(seq.labels.size()) + " labels for " +
                      std::to_string(e.num_frames) + " frames");

    if (!e.visibility_file.empty()) {
      const fs::path vis_path = dir / e.visibility_file;
      auto vin = open_text(vis_path);
      if (!std::getline(vin, line)) throw DataError(vis_path.string() + ": empty file");
      if (split_csv(line).size() != e.num_cameras + 1) throw DataError(vis_path.string() + ": bad header");
      std::size_t rows = 0;
      while (std::getline(vin, line)) {
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != e.num_cameras + 1) throw DataError(vis_path.string() + ": malformed row \"" + line + "\"");
        for (std::size_t n = 0; n < e.num_cameras; ++n) seq.visibility.push_back(parse_double(f[n + 1], vis_path));
        ++rows;
      }
      if (rows != e.num_frames) throw DataError(vis_path.string() + ": row count does not match frame count");
    }
    try {
      seq.validate();
    } catch (const DataError& err) {
      throw DataError(dir.string() + ": " + err.what());
    }
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace csel
