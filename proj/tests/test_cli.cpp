#include <sys/wait.h>

#include <cstdlib>

#include "nirvis/dataset.hpp"
#include "nirvis/io.hpp"
#include "nirvis/metrics.hpp"
#include "support.hpp"

namespace nirvis {
namespace {

using test::TempDir;

const char* const kTinyConfig = R"({
  "training": {"epochs": 1, "patch_size": 16, "batch_size": 2, "seed": 3},
  "topology": {
    "separation": {"depth": 2, "base_features": 4},
    "proportion": {"depth": 2, "base_features": 4, "activation": "relu"},
    "colorization": {"depth": 2, "base_features": 4},
    "restoration_blocks": 1,
    "restoration_features": 4
  }
})";

std::string quote(const std::string& s) { return "'" + s + "'"; }

/// Runs the CLI, returns its exit code; stdout and stderr land in `log`.
int run(const std::string& args, const fs::path& log) {
  const std::string cmd = quote(NIRVIS_CLI_PATH) + " " + args + " >" + quote(log.string()) + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("cli");
    io::write_text(root() / "tiny.json", kTinyConfig);
    ASSERT_EQ(run("synth --scenes 4 --size 32x32 --seed 5 --out " + quote((root() / "data").string()), log()), 0)
        << io::read_text(log());
    ASSERT_EQ(run("train --data " + quote((root() / "data").string()) + " --config " +
                      quote((root() / "tiny.json").string()) + " --out " + quote((root() / "ckpt").string()),
                  log()),
              0)
        << io::read_text(log());
  }
  static void TearDownTestSuite() {
    delete dir_;
    dir_ = nullptr;
  }

  static fs::path root() { return dir_->path(); }
  static fs::path log() { return dir_->path() / "log.txt"; }
  static std::string data() { return quote((root() / "data").string()); }
  static std::string ckpt() { return quote((root() / "ckpt").string()); }
  static std::string config() { return quote((root() / "tiny.json").string()); }

  static TempDir* dir_;
};

TempDir* Cli::dir_ = nullptr;

TEST_F(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run("", log()), 2);
  EXPECT_EQ(run("frobnicate", log()), 2);
  EXPECT_EQ(run("synth --out " + quote((root() / "x").string()), log()), 2);
  EXPECT_EQ(run("synth --scenes 1 --out " + quote((root() / "x").string()), log()), 2);
  EXPECT_NE(io::read_text(log()).find("at least 2 scenes"), std::string::npos);
  EXPECT_EQ(run("synth --scenes 2 --size 12by12 --out " + quote((root() / "x").string()), log()), 2);
  EXPECT_EQ(run("--help", log()), 0);
}

TEST_F(Cli, SynthWritesTwentyEightRoleFiles) {
  const Manifest m = read_manifest(root() / "data");
  EXPECT_EQ(m.role_file_count(), 28u);
  EXPECT_EQ(m.synthesis.height, 32);
  EXPECT_EQ(run("validate --data " + data(), log()), 0);
}

TEST_F(Cli, SynthIsDeterministic) {
  const auto other = root() / "data2";
  ASSERT_EQ(run("synth --scenes 4 --size 32x32 --seed 5 --out " + quote(other.string()), log()), 0);
  for (const auto& e : fs::recursive_directory_iterator(root() / "data"))
    if (e.is_regular_file())
      EXPECT_EQ(io::read_bytes(e.path()), io::read_bytes(other / fs::relative(e.path(), root() / "data")))
          << e.path();
}

TEST_F(Cli, TrainWritesCheckpointAndCurve) {
  for (const char* f : {"params.bin", "params.json", "topology.json", "adam.bin", "trainer_state.json", "loss.csv"})
    EXPECT_TRUE(fs::exists(root() / "ckpt" / f)) << f;
  const std::string csv = io::read_text(root() / "ckpt" / "loss.csv");
  EXPECT_EQ(csv.rfind("epoch,lr,total", 0), 0u);
  EXPECT_NE(csv.find("\n1,"), std::string::npos);
}

TEST_F(Cli, TrainRejectsBadConfigs) {
  io::write_text(root() / "bad.json", R"({"training": {"epochs": 1}, "optimiser": {}})");
  EXPECT_EQ(run("train --data " + data() + " --config " + quote((root() / "bad.json").string()) + " --out " +
                    quote((root() / "c2").string()),
                log()),
            2);
  EXPECT_EQ(run("train --data " + data() + " --config " + quote((root() / "missing.json").string()) + " --out " +
                    quote((root() / "c2").string()),
                log()),
            3);
  EXPECT_EQ(run("train --data " + quote((root() / "nodata").string()) + " --config " + config() + " --out " +
                    quote((root() / "c2").string()),
                log()),
            3);
}

TEST_F(Cli, InferWritesFinalAndIntermediates) {
  const auto input = root() / "data" / read_manifest(root() / "data").find(0, Phase::Night)->roles.at("mixed");
  const auto out = root() / "infer";
  ASSERT_EQ(run("infer --ckpt " + ckpt() + " --input " + quote(input.string()) + " --out " + quote(out.string()) +
                    " --intermediates",
                log()),
            0)
      << io::read_text(log());
  for (const char* f : {"final.png", "final.f32", "nir_est.png", "proportion.png", "vis_est.png", "y_restored.png",
                        "chroma.png"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  const Raster r = io::load_raster(out / "final");
  EXPECT_EQ(r.height(), 32);
  for (float v : r.storage()) ASSERT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST_F(Cli, InferRejectsIndivisibleInputAndMissingCheckpoint) {
  io::save_raster(root() / "odd", Raster(30, 30, 3, ColorSpace::RGB));
  EXPECT_EQ(run("infer --ckpt " + ckpt() + " --input " + quote((root() / "odd.f32").string()) + " --out " +
                    quote((root() / "o").string()),
                log()),
            2);
  EXPECT_NE(io::read_text(log()).find("28x28"), std::string::npos);
  EXPECT_EQ(run("infer --ckpt " + quote((root() / "none").string()) + " --input " +
                    quote((root() / "odd.f32").string()) + " --out " + quote((root() / "o").string()),
                log()),
            3);
}

TEST_F(Cli, EvalIdenticalSetsReportInfinity) {
  const auto set = root() / "evalset";
  fs::create_directories(set);
  Rng rng(1);
  io::save_raster(set / "a", test::random_raster(16, 16, 3, rng));
  io::save_raster(set / "b", test::random_raster(16, 16, 3, rng));
  const auto report = root() / "report.json";
  ASSERT_EQ(run("eval --pred " + quote(set.string()) + " --gt " + quote(set.string()) + " --report " +
                    quote(report.string()),
                log()),
            0);
  const auto j = io::read_json(report);
  EXPECT_EQ(j["mean"]["psnr"], "inf");
  EXPECT_DOUBLE_EQ(j["mean"]["ssim"].get<double>(), 1.0);
  EXPECT_EQ(j["per_image"].size(), 2u);
}

TEST_F(Cli, EvalUnmatchedSetsExitThree) {
  const auto a = root() / "ea", b = root() / "eb";
  fs::create_directories(a);
  fs::create_directories(b);
  io::save_raster(a / "x", Raster(4, 4, 3, ColorSpace::RGB));
  io::save_raster(b / "y", Raster(4, 4, 3, ColorSpace::RGB));
  EXPECT_EQ(run("eval --pred " + quote(a.string()) + " --gt " + quote(b.string()) + " --report " +
                    quote((root() / "r.json").string()),
                log()),
            3);
  EXPECT_NE(io::read_text(log()).find("unmatched"), std::string::npos);
}

TEST_F(Cli, AblateReportsOneRowPerCondition) {
  const auto report = root() / "ablate.json";
  ASSERT_EQ(run("ablate --data " + data() + " --config " + config() + " --conditions 1,2 --report " +
                    quote(report.string()),
                log()),
            0)
      << io::read_text(log());
  const auto rows = io::read_json(report)["rows"];
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["condition"], 1);
  EXPECT_EQ(rows[1]["condition"], 2);
  EXPECT_GT(metrics::number_from_json(rows[0]["psnr"]), 0.0);
  EXPECT_EQ(run("ablate --data " + data() + " --conditions 0..3 --report " + quote(report.string()), log()), 2);
}

TEST_F(Cli, ValidateFlagsBrokenDataset) {
  const auto broken = root() / "broken";
  ASSERT_EQ(run("synth --scenes 2 --size 16x16 --out " + quote(broken.string()), log()), 0);
  fs::remove(broken / read_manifest(broken).find(1, Phase::Day)->roles.at("nir"));
  EXPECT_EQ(run("validate --data " + quote(broken.string()), log()), 3);
  EXPECT_NE(io::read_text(log()).find("missing_role"), std::string::npos);
}

}  // namespace
}  // namespace nirvis
