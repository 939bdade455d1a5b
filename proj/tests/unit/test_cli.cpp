#include <doctest.h>

#include "posfeat/cli.hpp"
#include "posfeat/config.hpp"
#include "posfeat/inference.hpp"

#include <filesystem>
#include <iostream>
#include <sstream>

using namespace posfeat;
namespace fs = std::filesystem;

namespace {

struct CaptureErr {
  std::ostringstream buf;
  std::streambuf* old;
  CaptureErr() : old(std::cerr.rdbuf(buf.rdbuf())) {}
  ~CaptureErr() { std::cerr.rdbuf(old); }
};

}  // namespace

TEST_CASE("config json") {
  TrainConfig c;
  c.lr = 0.5;
  c.search = SearchMode::CoarseToFine;
  const TrainConfig back = apply_json(TrainConfig{}, to_json_string(c));
  CHECK(to_json_string(back) == to_json_string(c));
  CHECK(apply_json(c, R"({"g_d": 8})").g_d == 8);
  CHECK_THROWS(apply_json(c, R"({"no_such_key": 1})"));
  TrainConfig bad;
  bad.w_patch = 1.5;
  CHECK_THROWS_AS(bad.validate(), InputError);
  bad = TrainConfig{};
  bad.n_line = 1;
  CHECK_THROWS_AS(bad.validate(), InputError);
}

TEST_CASE("command line") {
  const fs::path root = fs::temp_directory_path() / "posfeat_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::string data = (root / "data").string();
  REQUIRE(run_cli({"synth", "--out", data, "--count", "2", "--width", "32", "--height", "32", "--seed", "3"}) == 0);
  CHECK(fs::exists(root / "data" / "pair_0000" / "img1.pgm"));
  CHECK(fs::exists(root / "data" / "pair_0001" / "H.txt"));

  SUBCASE("detector training needs a descriptor checkpoint") {
    CaptureErr err;
    CHECK(run_cli({"train-det", "--data", data, "--out", (root / "det.pfw").string()}) != 0);
    const std::string msg = err.buf.str();
    CHECK(msg.find("descriptor checkpoint required") != std::string::npos);
    CHECK(msg.rfind("error: ", 0) == 0);
    CHECK(std::count(msg.begin(), msg.end(), '\n') == 1);
  }
  SUBCASE("bad arguments fail cleanly") {
    CaptureErr err;
    CHECK(run_cli({"extract"}) != 0);
    CHECK(run_cli({"nonsense"}) != 0);
  }
  SUBCASE("self-matching of identical images") {
    const std::string desc = (root / "desc.pfw").string(), det = (root / "det.pfw").string();
    REQUIRE(run_cli({"train-desc", "--data", data, "--out", desc, "--iterations", "2"}) == 0);
    CHECK(fs::exists(root / "desc.pfw.loss.csv"));
    CHECK(fs::exists(root / "desc.pfw.config.json"));
    REQUIRE(run_cli({"train-det", "--data", data, "--desc", desc, "--out", det, "--iterations", "2"}) == 0);
    CHECK(fs::exists(root / "det.pfw.reward.csv"));
    const std::string img = (root / "data" / "pair_0000" / "img1.pgm").string();
    const std::string k1 = (root / "a.pfk").string(), k2 = (root / "b.pfk").string();
    REQUIRE(run_cli({"extract", "--image", img, "--desc", desc, "--det", det, "--out", k1}) == 0);
    REQUIRE(run_cli({"extract", "--image", img, "--desc", desc, "--det", det, "--out", k2}) == 0);
    const std::string m = (root / "m.csv").string();
    REQUIRE(run_cli({"match", "--feat1", k1, "--feat2", k2, "--out", m}) == 0);
    const auto kp = read_pfk1(k1);
    REQUIRE(!kp.empty());
    const auto ms = read_matches_csv(m);
    int self = 0;
    for (const auto& x : ms.matches) self += x.i == x.j;
    CHECK(self >= 0.95 * static_cast<double>(kp.size()));
    const std::string h = (root / "data" / "pair_0000" / "H.txt").string();
    const std::string report = (root / "eval.csv").string();
    CHECK(run_cli({"eval", "--feat1", k1, "--feat2", k2, "--homography", h, "--out", report}) == 0);
    CHECK(fs::exists(report));
  }
  fs::remove_all(root);
}
