#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;

namespace {

const fs::path kDir = fs::temp_directory_path() / "csel_cli";

int run(const std::string& args) {
  const std::string cmd = std::string(CSEL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string path(const std::string& name) { return (kDir / name).string(); }

void write(const std::string& name, const std::string& text) { std::ofstream(kDir / name) << text; }

const char* kScene =
    R"({"num_cameras": 3, "frames_per_seq": 20, "frame_height": 16, "frame_width": 16, "target_radius": 3.0,
        "num_scenes": 2})";
const char* kTrain =
    R"({"lr": 0.01, "fragment_len": 4, "epochs": 1, "model": {"conv_channels": [2, 3], "feature_dim": 5,
        "rnn_hidden": 3, "head_hidden": [6, 4], "window_len": 4}})";

}  // namespace

TEST_CASE("command line end to end") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);
  write("scene.json", kScene);
  write("train.json", kTrain);

  CHECK(run("--help") == 0);
  CHECK(run("") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("gen-data --out " + path("d") + " --bogus 3") == 1);

  REQUIRE(run("gen-data --config " + path("scene.json") + " --out " + path("data") + " --seeds 0..3") == 0);
  CHECK(fs::exists(kDir / "data" / "manifest.json"));
  CHECK(fs::exists(kDir / "data" / "s1_seed0001" / "cam2" / "frame000019.pgm"));
  CHECK(run("gen-data --config " + path("scene.json") + " --out " + path("d") + " --seeds 5..2") == 1);

  write("bad_scene.json", R"({"num_cameras": 3, "colour": "red"})");
  CHECK(run("gen-data --config " + path("bad_scene.json") + " --out " + path("d")) == 1);

  REQUIRE(run("train --config " + path("train.json") + " --data " + path("data") + " --out " + path("m.ckpt")) == 0);
  {
    std::ifstream in(kDir / "m.ckpt", std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    CHECK(std::string(magic, 4) == "CSEL");
  }
  CHECK(fs::exists(kDir / "m.ckpt.loss.csv"));

  write("typo.json", R"({"lr": 0.01, "epoch": 2})");
  CHECK(run("train --config " + path("typo.json") + " --data " + path("data") + " --out " + path("x.ckpt")) == 1);
  CHECK(run("train --config " + path("train.json") + " --data " + path("nowhere") + " --out " + path("x.ckpt")) ==
        2);
  write("explode.json", R"({"lr": 1e300, "fragment_len": 4, "epochs": 3, "model": {"conv_channels": [2, 3],
        "feature_dim": 5, "rnn_hidden": 3, "head_hidden": [6, 4], "window_len": 4}})");
  CHECK(run("train --config " + path("explode.json") + " --data " + path("data") + " --out " + path("x.ckpt")) ==
        3);

  CHECK(run("eval --ckpt " + path("m.ckpt") + " --data " + path("data") + " --report " + path("r.csv")) == 0);
  CHECK(fs::exists(kDir / "r.csv"));
  CHECK(run("eval --ckpt " + path("m.ckpt") + " --data " + path("data") + " --protocol surgery-out --report " +
            path("r2.csv")) == 0);
  CHECK(run("eval --ckpt " + path("m.ckpt") + " --data " + path("data") + " --protocol nonsense --report " +
            path("r3.csv")) == 1);
  write("fake.ckpt", "NOPE and then some bytes");
  CHECK(run("eval --ckpt " + path("fake.ckpt") + " --data " + path("data") + " --report " + path("r4.csv")) == 2);

  CHECK(run("select --ckpt " + path("m.ckpt") + " --data " + path("data") + " --out " + path("sel.csv") +
            " --montage " + path("mont")) == 0);
  CHECK(fs::exists(kDir / "sel.csv"));
  CHECK(fs::exists(kDir / "mont" / "s0_seed0000.ppm"));

  CHECK(run("baseline --data " + path("data") + " --lambda 0.5 --report " + path("b.csv")) == 0);
  CHECK(run("baseline --data " + path("data") + " --lambda inf --report " + path("b.csv")) == 0);
  CHECK(run("baseline --data " + path("data") + " --lambda -2 --report " + path("b.csv")) == 1);

  CHECK(run("plot --in " + path("m.ckpt.loss.csv") + " --out " + path("plots")) == 0);
  CHECK(run("plot --in " + path("b.csv") + " --out " + path("plots")) == 0);
  CHECK(fs::exists(kDir / "plots" / "loss_curve.svg"));
  CHECK(fs::exists(kDir / "plots" / "dice_by_scene.svg"));
  CHECK(run("plot --in " + path("sel.csv") + " --out " + path("plots")) == 2);

  fs::remove_all(kDir);
}
