#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <sys/wait.h>

#include "reach/config.hpp"
#include "reach/errors.hpp"

namespace fs = std::filesystem;
using namespace reach;

namespace {

const fs::path& work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "reach_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "cd '" + work_dir().string() + "' && '" REACH_CLI "' " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void write(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
}

std::string read(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Byte contents of every file under `root`, keyed by relative path.
std::map<std::string, std::string> tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = read(e.path());
  }
  return out;
}

const char* kTiny = R"({"gamma": {"hidden": [16], "train": {"epochs": 1}},
 "target": {"window": 10, "rows": 2, "hidden": 4, "train": {"epochs": 1, "items_per_epoch": 128}}})";

}  // namespace

TEST_CASE("config: defaults round trip and unknown keys are rejected") {
  const config::RunConfig d = config::default_config();
  CHECK(config::to_json(config::from_json(config::to_json(d))) == config::to_json(d));
  CHECK(config::from_json(nlohmann::json::object()).protocol.train_per_square == 20);
  CHECK_THROWS_AS(config::from_json({{"gamma", {{"hiden", {8}}}}}), InvalidArgument);
  CHECK_THROWS_AS(config::from_json({{"data", {{"board", {{"rows", "six"}}}}}}), InvalidArgument);
  CHECK_THROWS_AS(config::from_json({{"mask", "elbow"}}), UnknownMask);

  const auto c = config::from_json({{"seed", 9}, {"target", {{"curriculum", {{"enabled", true}, {"threshold_mm", nullptr}}}}}});
  CHECK(c.protocol.seed == 9);
  REQUIRE(c.experiment.target_curriculum.has_value());
  CHECK(std::isinf(c.experiment.target_curriculum->threshold_mm));
  CHECK(c.experiment.gamma_train.seed != c.experiment.target_train.seed);
}

TEST_CASE("config: REACH_SEED overrides the file seed") {
  const fs::path p = work_dir() / "seeded.json";
  write(p, R"({"seed": 4})");
  ::unsetenv("REACH_SEED");
  CHECK(config::load(p).seed == 4);
  ::setenv("REACH_SEED", "77", 1);
  CHECK(config::load(p).seed == 77);
  CHECK(config::load(p).protocol.seed == 77);
  ::setenv("REACH_SEED", "x", 1);
  CHECK_THROWS_AS(config::load(p), InvalidArgument);
  ::unsetenv("REACH_SEED");
}

TEST_CASE("cli: exit codes and reproducible outputs") {
  write(work_dir() / "tiny.json", kTiny);
  CHECK(run("gen-data --config tiny.json --out data --squares 2 --train-per-square 3 --test-per-square 1") == 0);
  CHECK(tree(work_dir() / "data").size() == 2 * 4 + 3);

  // A single episode.
  CHECK(run("gen-data --out one --squares 1 --train-per-square 1 --test-per-square 0") == 0);
  CHECK(fs::exists(work_dir() / "one/train/ep_00000.csv"));
  CHECK_FALSE(fs::exists(work_dir() / "one/test/ep_00000.csv"));

  // Rerunning from the emitted snapshot gives byte-identical data.
  fs::copy_file(work_dir() / "data/resolved_config.json", work_dir() / "snapshot.json");
  CHECK(run("gen-data --config snapshot.json --out again") == 0);
  auto a = tree(work_dir() / "data"), b = tree(work_dir() / "again");
  for (const char* f : {"run.json", "resolved_config.json"}) {
    a.erase(f);
    b.erase(f);
  }
  CHECK(a == b);

  CHECK(run("train-gamma --config tiny.json --data data --out g --mask all --no-curriculum") == 0);
  CHECK(fs::exists(work_dir() / "g/gamma.bin"));
  CHECK(fs::exists(work_dir() / "g/gamma_history.log"));
  CHECK(fs::exists(work_dir() / "g/resolved_config.json"));
  CHECK(run("train-target --config tiny.json --data data --gamma g/gamma.bin --out t --mode pos-only --H 10") == 0);
  CHECK(run("eval --data data --gamma g/gamma.bin --target t/target.bin --out e --heatmap") == 0);
  const std::string heat = read(work_dir() / "e/heatmap_test.csv");
  CHECK(std::count(heat.begin(), heat.end(), '\n') == 43);
  CHECK(run("rendezvous --data data --gamma g/gamma.bin --target t/target.bin --out r") == 0);
  CHECK(read(work_dir() / "r/campaign.csv").rfind("trial_id,success,final_distance_mm,first_prediction_t_s\n", 0) == 0);

  write(work_dir() / "dq.json", R"({"gamma": {"hidden": [8], "curriculum": {"enabled": true, "threshold_mm": 0, "max_stage_epochs": 1}}})");
  CHECK(run("train-gamma --config dq.json --data data --out dq --epochs 3") == 2);

  write(work_dir() / "bad.json", R"({"gamma": {"depth": 3}})");
  CHECK(run("train-gamma --config bad.json --data data --out x") == 1);
  CHECK(run("train-target --data data --out x --mode pos-only") == 1);
  CHECK(run("eval --data missing --gamma g/gamma.bin --out x") == 1);
  CHECK(run("frobnicate") == 1);
  CHECK(run("--help") == 0);
}
