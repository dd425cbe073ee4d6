#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "relpose/hilbert.hpp"
#include "relpose/scene_io.hpp"
#include "support/testing.hpp"

namespace relpose {
namespace {

namespace fs = std::filesystem;

// Runs the CLI with `args`, stdout and stderr to `log` (or discarded).
int run(const std::string& args, const std::string& env = "", const fs::path& log = {}) {
  const std::string sink = log.empty() ? "/dev/null" : log.string();
  const std::string cmd =
      env + " '" RELPOSE_CLI_PATH "' " + args + " > '" + sink + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Every regular file under `dir`, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = read_text_file(e.path());
  }
  return out;
}

const char* kSmallScene = "--grid 8x8 --views 8 --landmarks 150";

/// One small scene shared by the command tests.
class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("cli");
    ASSERT_EQ(run("synth-gen --out " + q(*dir_ / "scene") + " --seed 3 " + kSmallScene), 0);
  }
  static void TearDownTestSuite() { delete dir_; }

  static fs::path manifest() { return *dir_ / "scene" / "manifest.json"; }
  static fs::path retrieval() { return *dir_ / "scene" / "retrieval.json"; }

  static testing::TempDir* dir_;
};

testing::TempDir* Cli::dir_ = nullptr;

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(run(""), 1);
  EXPECT_EQ(run("--help"), 0);
  EXPECT_EQ(run("frobnicate"), 1);
  EXPECT_EQ(run("hilbert-dump --rows 4"), 1);
  EXPECT_EQ(run("hilbert-dump --rows 4 --cols 4 --bogus"), 1);
  EXPECT_EQ(run("hilbert-dump --rows 0 --cols 4"), 1);
  EXPECT_EQ(run("eval-pairs --pairs /nonexistent/manifest.json --out /tmp/x.csv --matcher baseline"),
            2);
}

TEST(CliUsage, HilbertDump) {
  testing::TempDir dir("cli_hilbert");
  ASSERT_EQ(run("hilbert-dump --rows 15 --cols 20 --out " + q(dir / "c.csv")), 0);
  std::stringstream in(read_text_file(dir / "c.csv"));
  const HilbertMap m = read_curve_csv(in);
  EXPECT_EQ(m, build_pseudo_hilbert(15, 20));
  ASSERT_EQ(run("hilbert-dump --rows 3 --cols 2", "", dir / "stdout.txt"), 0);
  EXPECT_EQ(read_text_file(dir / "stdout.txt").substr(0, 6), "k,i,j\n");
}

TEST(CliUsage, GradCheckPasses) {
  testing::TempDir dir("cli_grad");
  ASSERT_EQ(run("grad-check --grid 4x4 --seed 7 --out " + q(dir / "probes.csv"), "",
                dir / "stdout.txt"),
            0);
  EXPECT_NE(read_text_file(dir / "stdout.txt").find("max relative error"), std::string::npos);
  EXPECT_EQ(run("grad-check --grid 4"), 1);
}

TEST_F(Cli, SynthGenWritesAScene) {
  const SceneManifest m = load_manifest(manifest());
  EXPECT_EQ(m.views.size(), 8u);
  EXPECT_FALSE(m.pairs.empty());
  EXPECT_FALSE(load_retrieval(retrieval()).empty());
  EXPECT_TRUE(fs::exists(*dir_ / "scene" / "synth_config.json"));
}

TEST_F(Cli, SynthGenIsDeterministicAndHonoursTheSeedVariable) {
  const fs::path a = *dir_ / "det_a", b = *dir_ / "det_b", c = *dir_ / "det_c",
                 d = *dir_ / "det_d";
  ASSERT_EQ(run("synth-gen --out " + q(a) + " " + kSmallScene, "RELPOSE_SEED=11"), 0);
  ASSERT_EQ(run("synth-gen --out " + q(b) + " " + kSmallScene, "RELPOSE_SEED=11"), 0);
  ASSERT_EQ(run("synth-gen --out " + q(c) + " " + kSmallScene, "RELPOSE_SEED=12"), 0);
  ASSERT_EQ(run("synth-gen --out " + q(d) + " --seed 11 " + kSmallScene, "RELPOSE_SEED=12"), 0);
  EXPECT_EQ(snapshot(a), snapshot(b));
  EXPECT_NE(snapshot(a), snapshot(c));
  EXPECT_EQ(snapshot(a), snapshot(d));
  EXPECT_EQ(run("synth-gen --out " + q(*dir_ / "x") + " --noise -1"), 2);
}

TEST_F(Cli, EvalPairsBaselineCsv) {
  const fs::path out = *dir_ / "metrics.csv";
  ASSERT_EQ(run("eval-pairs --pairs " + q(manifest()) + " --out " + q(out) +
                " --matcher baseline --max-pairs 6"),
            0);
  const std::string text = read_text_file(out);
  EXPECT_EQ(text.substr(0, text.find('\n')),
            "pair_id,inlier_ratio,rot_err_deg,trans_err_m,estimated");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 7);
  // The learned matcher needs a checkpoint.
  EXPECT_EQ(run("eval-pairs --pairs " + q(manifest()) + " --out " + q(out)), 1);
  EXPECT_EQ(run("eval-pairs --pairs " + q(manifest()) + " --out " + q(out) + " --matcher fuzzy"),
            1);
}

TEST_F(Cli, TrainEvalAndLocalizeAreDeterministic) {
  const fs::path cfg = *dir_ / "train.json";
  write_text_file(cfg, R"({"learning_rate": 0.01, "batch_size": 2, "epochs": 2,
                            "model": {"widths": [2, 4]}})");
  for (const char* name : {"ckpt_a", "ckpt_b"}) {
    ASSERT_EQ(run("train --config " + q(cfg) + " --data " + q(manifest()) + " --out " +
                  q(*dir_ / name) + " --seed 4 --max-pairs 3"),
              0);
  }
  EXPECT_EQ(snapshot(*dir_ / "ckpt_a"), snapshot(*dir_ / "ckpt_b"));
  EXPECT_TRUE(fs::exists(*dir_ / "ckpt_a" / "train_log.csv"));

  const std::string eval = "eval-pairs --pairs " + q(manifest()) + " --ckpt " +
                           q(*dir_ / "ckpt_a") + " --max-pairs 4 --seed 2 --out ";
  ASSERT_EQ(run(eval + q(*dir_ / "e1.csv")), 0);
  ASSERT_EQ(run(eval + q(*dir_ / "e2.csv")), 0);
  EXPECT_EQ(read_text_file(*dir_ / "e1.csv"), read_text_file(*dir_ / "e2.csv"));

  const SceneManifest m = load_manifest(manifest());
  const std::string loc = "localize --query " + m.views[0].id + " --db " + q(manifest()) +
                          " --retrieval " + q(retrieval()) + " --matcher baseline --refine --out ";
  ASSERT_EQ(run(loc + q(*dir_ / "p1.json")), 0);
  ASSERT_EQ(run(loc + q(*dir_ / "p2.json")), 0);
  const std::string pose = read_text_file(*dir_ / "p1.json");
  EXPECT_EQ(pose, read_text_file(*dir_ / "p2.json"));
  const auto j = nlohmann::json::parse(pose);
  EXPECT_EQ(j.at("query_id"), m.views[0].id);
  EXPECT_TRUE(j.contains("estimated"));
  EXPECT_FALSE(j.contains("timing_ms"));
  EXPECT_EQ(run("localize --query nope --db " + q(manifest()) + " --retrieval " + q(retrieval()) +
                " --matcher baseline"),
            2);
}

TEST_F(Cli, CorruptCheckpointIsADataError) {
  const fs::path bad = *dir_ / "bad_ckpt";
  fs::create_directories(bad);
  write_text_file(bad / "manifest.json", "{not json");
  EXPECT_EQ(run("eval-pairs --pairs " + q(manifest()) + " --ckpt " + q(bad) + " --out " +
                q(*dir_ / "m.csv")),
            2);
}

}  // namespace
}  // namespace relpose
