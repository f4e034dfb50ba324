#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <regex>

#include "csel/errors.hpp"
#include "csel/plot.hpp"

using namespace csel;
namespace fs = std::filesystem;

namespace {

// Minimal tag balance check: every element opened is closed in order.
bool balanced_xml(const std::string& s) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    const std::size_t end = s.find('>', i);
    if (end == std::string::npos) return false;
    const std::string tag = s.substr(i + 1, end - i - 1);
    i = end + 1;
    if (tag.empty() || tag[0] == '?' || tag[0] == '!') continue;
    if (tag.back() == '/') continue;
    const std::string name = tag.substr(tag[0] == '/' ? 1 : 0, tag.find_first_of(" \t\n") - (tag[0] == '/' ? 1 : 0));
    if (tag[0] == '/') {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else {
      stack.push_back(name);
    }
  }
  return stack.empty();
}

std::vector<double> bar_heights(const std::string& svg) {
  static const std::regex bar(R"re(<rect class="bar"[^>]*height="([0-9.]+)")re");
  std::vector<double> out;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), bar); it != std::sregex_iterator(); ++it)
    out.push_back(std::stod((*it)[1].str()));
  return out;
}

fs::path scratch() {
  const auto d = fs::temp_directory_path() / "csel_plot";
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("loss curve") {
  const std::string svg = loss_curve_svg({{1, 0.5}, {2, 0.3}, {3, 0.25}});
  CHECK(balanced_xml(svg));
  CHECK(svg.find("<polyline") != std::string::npos);
  CHECK(balanced_xml(loss_curve_svg({{1, 0.5}})));
}

TEST_CASE("dice bars are proportional to dice") {
  const PlotFrame f;
  const std::string svg = dice_bars_svg({{"0", 0.8}, {"1", 0.4}, {"a<b", 0.0}}, f);
  CHECK(balanced_xml(svg));
  const auto h = bar_heights(svg);
  REQUIRE(h.size() == 3);
  CHECK(h[0] == doctest::Approx(0.8 * f.inner_height()).epsilon(1e-3));
  CHECK(h[0] == doctest::Approx(2.0 * h[1]).epsilon(1e-3));
  CHECK(h[2] == 0.0);
}

TEST_CASE("plot_file detects the input kind") {
  const auto d = scratch();
  std::ofstream(d / "loss.csv") << "epoch,mean_loss\n1,0.4\n2,0.2\n";
  CHECK(plot_file(d / "loss.csv", d / "out") == d / "out" / "loss_curve.svg");
  std::ofstream(d / "report.csv") << "level,scene,sequence,dice,pred_switches,gt_switches,frames\n"
                                     "sequence,0,a,0.5,1,1,10\nscene,0,,0.5,,,\nscene,1,,0.9,,,\n"
                                     "overall,,,0.7,,,\n";
  CHECK(read_report_scenes(d / "report.csv").size() == 2);
  const auto out = plot_file(d / "report.csv", d / "out");
  CHECK(out == d / "out" / "dice_by_scene.svg");
  std::ifstream in(out);
  const std::string svg{std::istreambuf_iterator<char>(in), {}};
  CHECK(bar_heights(svg).size() == 2);

  std::ofstream(d / "empty.csv") << "epoch,mean_loss\n";
  CHECK_THROWS_AS(read_loss_log(d / "empty.csv"), DataError);
  std::ofstream(d / "junk.csv") << "epoch,mean_loss\n1,abc\n";
  CHECK_THROWS_AS(read_loss_log(d / "junk.csv"), DataError);
  std::ofstream(d / "other.csv") << "a,b\n";
  CHECK_THROWS_AS(plot_file(d / "other.csv", d / "out"), DataError);
  CHECK_THROWS_AS(read_loss_log(d / "absent.csv"), DataError);
  fs::remove_all(d);
}
