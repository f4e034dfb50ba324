#include "csel/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "csel/errors.hpp"

namespace csel {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream is(line);
  while (std::getline(is, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double to_double(const std::string& s, const fs::path& path) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || !std::isfinite(v))
    throw DataError(path.string() + ": malformed number \"" + s + "\"");
  return v;
}

std::string first_line(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  std::string line;
  std::getline(in, line);
  return line;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::string header(const PlotFrame& f) {
  return "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" +
         fmt(f.width) + "\" height=\"" + fmt(f.height) + "\" viewBox=\"0 0 " + fmt(f.width) + " " +
         fmt(f.height) + "\">\n<rect x=\"0\" y=\"0\" width=\"" + fmt(f.width) + "\" height=\"" + fmt(f.height) +
         "\" fill=\"white\"/>\n";
}

std::string axes(const PlotFrame& f, const std::string& xlabel, const std::string& ylabel) {
  const double x0 = f.margin, y0 = f.height - f.margin;
  std::string s;
  s += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(y0) + "\" x2=\"" + fmt(f.width - f.margin) + "\" y2=\"" +
       fmt(y0) + "\" stroke=\"black\"/>\n";
  s += "<line x1=\"" + fmt(x0) + "\" y1=\"" + fmt(f.margin) + "\" x2=\"" + fmt(x0) + "\" y2=\"" + fmt(y0) +
       "\" stroke=\"black\"/>\n";
  s += "<text x=\"" + fmt(f.width / 2) + "\" y=\"" + fmt(f.height - 12) +
       "\" font-size=\"12\" text-anchor=\"middle\">" + escape(xlabel) + "</text>\n";
  s += "<text x=\"14\" y=\"" + fmt(f.height / 2) + "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
       fmt(f.height / 2) + ")\">" + escape(ylabel) + "</text>\n";
  return s;
}

}  // namespace

std::vector<LossPoint> read_loss_log(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing loss log: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "epoch,mean_loss") throw DataError(path.string() + ": not a loss log");
  std::vector<LossPoint> points;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 2) throw DataError(path.string() + ": malformed row \"" + line + "\"");
    points.push_back({static_cast<std::size_t>(to_double(f[0], path)), to_double(f[1], path)});
  }
  if (points.empty()) throw DataError(path.string() + ": loss log has no epochs");
  return points;
}

std::vector<SceneDice> read_report_scenes(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing report: " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "level,scene,sequence,dice,pred_switches,gt_switches,frames")
    throw DataError(path.string() + ": not an evaluation report");
  std::vector<SceneDice> bars;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_line(line);
    if (f.size() != 7) throw DataError(path.string() + ": malformed row \"" + line + "\"");
    if (f[0] == "scene") bars.push_back({f[1], to_double(f[3], path)});
  }
  if (bars.empty()) throw DataError(path.string() + ": report has no scene rows");
  return bars;
}

std::string loss_curve_svg(const std::vector<LossPoint>& points, const PlotFrame& f) {
  if (points.empty()) throw DataError("loss curve: no points");
  double lo = points[0].loss, hi = points[0].loss;
  for (const auto& p : points) lo = std::min(lo, p.loss), hi = std::max(hi, p.loss);
  if (hi == lo) hi = lo + 1.0;
  const double first = static_cast<double>(points.front().epoch);
  const double span = std::max(1.0, static_cast<double>(points.back().epoch) - first);
  std::string s = header(f) + axes(f, "epoch", "mean loss");
  s += "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double x = f.margin + (static_cast<double>(points[i].epoch) - first) / span * f.inner_width();
    const double y = f.height - f.margin - (points[i].loss - lo) / (hi - lo) * f.inner_height();
    s += (i ? " " : "") + fmt(x) + "," + fmt(y);
  }
  s += "\"/>\n";
  s += "<text x=\"" + fmt(f.margin - 4) + "\" y=\"" + fmt(f.margin) + "\" font-size=\"10\" text-anchor=\"end\">" +
       fmt(hi) + "</text>\n";
  s += "<text x=\"" + fmt(f.margin - 4) + "\" y=\"" + fmt(f.height - f.margin) +
       "\" font-size=\"10\" text-anchor=\"end\">" + fmt(lo) + "</text>\n";
  return s + "</svg>\n";
}

std::string dice_bars_svg(const std::vector<SceneDice>& bars, const PlotFrame& f) {
  if (bars.empty()) throw DataError("dice chart: no bars");
  std::string s = header(f) + axes(f, "scene", "dice");
  const double slot = f.inner_width() / static_cast<double>(bars.size());
  const double base = f.height - f.margin;
  for (std::size_t i = 0; i < bars.size(); ++i) {
    const double h = std::clamp(bars[i].dice, 0.0, 1.0) * f.inner_height();
    const double x = f.margin + slot * static_cast<double>(i) + 0.15 * slot;
    s += "<rect class=\"bar\" x=\"" + fmt(x) + "\" y=\"" + fmt(base - h) + "\" width=\"" + fmt(0.7 * slot) +
         "\" height=\"" + fmt(h) + "\" fill=\"steelblue\"/>\n";
    s += "<text x=\"" + fmt(x + 0.35 * slot) + "\" y=\"" + fmt(base + 14) +
         "\" font-size=\"10\" text-anchor=\"middle\">" + escape(bars[i].scene) + "</text>\n";
    s += "<text x=\"" + fmt(x + 0.35 * slot) + "\" y=\"" + fmt(base - h - 4) +
         "\" font-size=\"10\" text-anchor=\"middle\">" + fmt(bars[i].dice) + "</text>\n";
  }
  return s + "</svg>\n";
}

fs::path plot_file(const fs::path& in, const fs::path& out_dir) {
  const std::string head = first_line(in);
  std::string svg;
  fs::path out;
  if (head == "epoch,mean_loss") {
    svg = loss_curve_svg(read_loss_log(in));
    out = out_dir / "loss_curve.svg";
  } else if (head.rfind("level,scene,sequence,dice", 0) == 0) {
    svg = dice_bars_svg(read_report_scenes(in));
    out = out_dir / "dice_by_scene.svg";
  } else {
    throw DataError(in.string() + ": neither a loss log nor an evaluation report");
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  std::ofstream os(out);
  if (!os) throw DataError("cannot write " + out.string());
  os << svg;
  return out;
}

}  // namespace csel
