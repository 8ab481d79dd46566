#include "test_util.hpp"

#include <fstream>

#include <json.hpp>

#include "lacune/cli.hpp"
#include "lacune/nifti.hpp"

using namespace lacune;
namespace fs = std::filesystem;

namespace {

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "lacune");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli::dispatch(static_cast<int>(argv.size()), argv.data());
}

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  return nlohmann::json::parse(in);
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({"--bogus"}) == cli::kExitUsage);
  CHECK(run({"no-such-command"}) == cli::kExitUsage);
  CHECK(run({"evaluate", "--pred", "a"}) == cli::kExitUsage);
  CHECK(run({"evaluate", "--pred", "a", "--truth", "b", "--out", "c", "--frobnicate"}) == cli::kExitUsage);
  CHECK(run({"train-detect", "--cases", "a", "--out", "b", "--model", "magic"}) == cli::kExitUsage);
}

TEST_CASE("workflow errors exit with 1") {
  const auto dir = testutil::scratch("cli_err");
  CHECK(run({"build-prevmap", "--cases", (dir / "missing").string(), "--out", (dir / "p.nii.gz").string()}) ==
        cli::kExitWorkflow);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK(run({"gen-phantoms", "--n", "1", "--out", (dir / "o").string(), "--config", (dir / "bad.json").string()}) ==
        cli::kExitWorkflow);
}

TEST_CASE("run config seeds and unknown keys") {
  const auto dir = testutil::scratch("cli_cfg");
  std::ofstream(dir / "c.json") << R"({"seed": 7, "detector": {"epochs": 3}})";
  const cli::RunConfig c = cli::load_run_config(dir / "c.json");
  CHECK(c.detector.epochs == 3);
  CHECK(c.detector.seed == 7);
  CHECK(c.segmenter.seed == 7);
  CHECK(c.phantom.seed == 7);
  std::ofstream(dir / "bad.json") << R"({"detectr": {}})";
  CHECK(testutil::error_code_of([&] { cli::load_run_config(dir / "bad.json"); }) == ErrorCode::config);
}

TEST_CASE("evaluate on identical prediction and truth directories") {
  const auto dir = testutil::scratch("cli_eval");
  for (const char* id : {"a", "b"}) {
    Mask3D m({20, 20, 4}, {1, 1, 1});
    for (std::size_t x = 5; x < 9; ++x) m(x, 6, 2) = 1;
    nifti::write_mask(dir / "pred" / (std::string(id) + "_seg.nii.gz"), (fs::create_directories(dir / "pred"), m));
  }
  REQUIRE(run({"evaluate", "--pred", (dir / "pred").string(), "--truth", (dir / "pred").string(), "--out",
               (dir / "report.json").string()}) == cli::kExitOk);
  const auto rep = read_json(dir / "report.json");
  REQUIRE(rep.at("cases").size() == 2);
  for (const auto& c : rep.at("cases")) CHECK(c.at("dice") == 1.0);
  CHECK(fs::exists(dir / "report.csv"));
}

TEST_CASE("full rule-based chain") {
  const auto dir = testutil::scratch("cli_chain");
  const std::string d = dir.string();
  std::ofstream(dir / "spec.json") << R"({"shape": [96, 96, 48]})";
  REQUIRE(run({"gen-phantoms", "--n", "2", "--out", d + "/cases", "--spec", d + "/spec.json", "--seed", "3"}) == 0);
  REQUIRE(run({"build-prevmap", "--cases", d + "/cases", "--out", d + "/prev.nii.gz"}) == 0);
  REQUIRE(run({"train-detect", "--cases", d + "/cases", "--out", d + "/det.bin", "--model", "rule-based"}) == 0);
  REQUIRE(run({"train-segment", "--cases", d + "/cases", "--prevmask", d + "/prev.nii.gz", "--out", d + "/seg.bin",
               "--model", "rule-based"}) == 0);
  REQUIRE(run({"predict", "--cases", d + "/cases", "--detector", d + "/det.bin", "--segmenter", d + "/seg.bin",
               "--prevmask", d + "/prev.nii.gz", "--out", d + "/pred", "--overlay", d + "/png", "--jobs", "2"}) == 0);
  CHECK(fs::exists(dir / "pred" / "case_000_seg.nii.gz"));
  CHECK(fs::exists(dir / "pred" / "case_000_unc.nii.gz"));
  CHECK(fs::exists(dir / "pred" / "case_001_provenance.json"));
  CHECK_FALSE(fs::is_empty(dir / "png"));
  REQUIRE(run({"evaluate", "--pred", d + "/pred", "--truth", d + "/cases", "--out", d + "/report.json"}) == 0);
  const auto rep = read_json(dir / "report.json");
  CHECK(rep.at("cases").size() == 2);
  CHECK(rep.at("lesionwise").at("tp").get<int>() > 0);
}
