#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "test_support.hpp"

namespace fs = std::filesystem;
using vigat::testing::TempDir;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args, const fs::path& scratch) {
  const fs::path out = scratch / "stdout.txt";
  const std::string cmd = std::string("VIGAT_LOG=warn ") + VIGAT_CLI_PATH + " " + args + " > " +
                          out.string() + " 2> " + (scratch / "stderr.txt").string();
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(out);
  std::stringstream ss;
  ss << in.rdbuf();
  r.out = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const std::string kSmallSynth =
    " --seed 7 --classes 3 --frames 4 --objects 2 --features 6 --train-count 12 --test-count 6";

class Cli : public ::testing::Test {
 protected:
  Cli() : dir_("cli") {}
  fs::path path(const std::string& rel) const { return dir_.path() / rel; }
  RunResult cli(const std::string& args) const { return run(args, dir_.path()); }

  void make_model() {
    ASSERT_EQ(cli("synth --out " + path("data").string() + kSmallSynth).code, 0);
    ASSERT_EQ(cli("train --dataset-dir " + path("data").string() + " --out " + path("model").string() +
                  " --epochs 2 --batch-size 4 --lr 1e-3 --layers 1")
                  .code,
              0);
  }

  TempDir dir_;
};

}  // namespace

TEST_F(Cli, SynthIsDeterministic) {
  ASSERT_EQ(cli("synth --out " + path("a").string() + kSmallSynth).code, 0);
  ASSERT_EQ(cli("synth --out " + path("b").string() + kSmallSynth).code, 0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(path("a"))) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(slurp(e.path()), slurp(path("b") / fs::relative(e.path(), path("a"))));
  }
  EXPECT_EQ(files, 18u + 2u);
}

TEST_F(Cli, ExistingArtifactsAreNotClobbered) {
  ASSERT_EQ(cli("synth --out " + path("a").string() + kSmallSynth).code, 0);
  EXPECT_EQ(cli("synth --out " + path("a").string() + kSmallSynth).code, 1);
  EXPECT_EQ(cli("synth --overwrite --out " + path("a").string() + kSmallSynth).code, 0);
}

TEST_F(Cli, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli("synth --out x --no-such-flag").code, 2);
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("train --dataset-dir d").code, 2);
  EXPECT_EQ(cli("train --dataset-dir d --out o --tied --untied").code, 2);
  EXPECT_EQ(cli("xai-bench --dataset-dir d --checkpoint c --out o --criteria median").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST_F(Cli, RuntimeFailuresExitWithOne) {
  EXPECT_EQ(cli("eval --dataset-dir " + path("missing").string() + " --checkpoint x.vgc").code, 1);
  std::ofstream(path("junk.bin")) << "junk";
  EXPECT_EQ(cli("inspect " + path("junk.bin").string()).code, 1);
}

TEST_F(Cli, TrainEvalExplainAndBenchmark) {
  make_model();
  EXPECT_TRUE(fs::exists(path("model/model.vgc")));
  EXPECT_TRUE(fs::exists(path("model/model_final.vgc")));
  const std::string log = slurp(path("model/train_log.csv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 3);

  // Re-running without --overwrite must not replace the checkpoint.
  EXPECT_EQ(cli("train --dataset-dir " + path("data").string() + " --out " + path("model").string() +
                " --epochs 1")
                .code,
            1);

  const std::string ds = " --dataset-dir " + path("data").string();
  const std::string ck = " --checkpoint " + path("model/model.vgc").string();
  const auto ev = cli("eval" + ds + ck);
  EXPECT_EQ(ev.code, 0);
  EXPECT_EQ(ev.out.rfind("top1 ", 0), 0u) << ev.out;

  EXPECT_EQ(cli("explain" + ds + ck + " --out " + path("expl").string()).code, 0);
  std::size_t json_files = 0;
  for (const auto& e : fs::directory_iterator(path("expl"))) json_files += e.path().extension() == ".json";
  EXPECT_EQ(json_files, 6u);
  const auto j = nlohmann::json::parse(slurp(path("expl/synth_00012.json")));
  EXPECT_EQ(j["ranked_frames"].size(), 4u);

  const auto xb = cli("xai-bench" + ds + ck + " --out " + path("xai").string() +
                      " --criteria mean,random --upsilon 1,2,3 --workers 2");
  ASSERT_EQ(xb.code, 0);
  const std::string csv = slurp(path("xai/xai_report.csv"));
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 3);
  EXPECT_EQ(nlohmann::json::parse(slurp(path("xai/xai_report.json")))["rows"].size(), 6u);
  EXPECT_EQ(cli("xai-bench" + ds + ck + " --out " + path("xai").string()).code, 1);

  const auto ins = cli("inspect " + path("model/model.vgc").string());
  EXPECT_EQ(ins.code, 0);
  EXPECT_NE(ins.out.find("integrity ok"), std::string::npos);
  const auto pk = cli("inspect " + path("data/packs/synth_00000.vgf").string());
  EXPECT_EQ(pk.code, 0);
  EXPECT_NE(pk.out.find("synth_00000"), std::string::npos);
}

TEST_F(Cli, ConfigFileSuppliesDefaultsAndFlagsWin) {
  ASSERT_EQ(cli("synth --out " + path("data").string() + kSmallSynth).code, 0);
  std::ofstream(path("run.toml")) << "[train]\nepochs = 3\nlayers = 1\nbatch-size = 6\n";
  ASSERT_EQ(cli("--config " + path("run.toml").string() + " train --dataset-dir " + path("data").string() +
                " --out " + path("m").string() + " --epochs 1")
                .code,
            0);
  const std::string log = slurp(path("m/train_log.csv"));
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);  // header + 1 epoch
  const auto ins = cli("inspect " + path("m/model.vgc").string());
  EXPECT_NE(ins.out.find("F M C     6 1 3"), std::string::npos) << ins.out;
}

TEST_F(Cli, PresetMustMatchDataset) {
  ASSERT_EQ(cli("synth --out " + path("data").string() + kSmallSynth).code, 0);
  EXPECT_EQ(cli("train --preset minikinetics --dataset-dir " + path("data").string() + " --out " +
                path("m").string())
                .code,
            1);
  EXPECT_EQ(cli("train --preset imagenet --dataset-dir d --out o").code, 2);
}
