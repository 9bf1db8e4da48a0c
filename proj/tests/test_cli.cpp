#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "oracles.hpp"

using namespace pclf;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(PCLF_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf{};
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

const char* kTinyConfig = R"(
[experiment]
name = "tiny"
[data]
size = 32
train = 4
test = 2
test_pristine = 2
labeled_fraction = 0.5
[model]
roi_dim = 16
bilinear_dim = 4
proj_hidden = 16
proj_dim = 8
rpn_batch = 32
proposals_train = 8
proposals_test = 10
rcnn_batch = 8
[train]
steps = 3
checkpoint_every = 0
)";

}  // namespace

TEST(Cli, HelpListsEveryConfigKeyAndSubcommand) {
  const auto r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const auto& k : train::config_schema()) EXPECT_NE(r.out.find(k.key), std::string::npos) << k.key;
  for (const char* s : {"gen-data", "train", "eval", "analyze-scores", "sweep", "plot", "dump-srm"})
    EXPECT_NE(r.out.find(s), std::string::npos) << s;
}

TEST(Cli, DumpSrmPrintsKernels) {
  const auto r = run("dump-srm");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("kernel 0 divisor 12"), std::string::npos);
  EXPECT_EQ(run("--dump-srm").out, r.out);
}

TEST(Cli, RejectsUnknownKeyAndMissingFiles) {
  EXPECT_NE(run("--set train.bogus=1 gen-data").code, 0);
  EXPECT_NE(run("--config /nonexistent/x.toml gen-data").code, 0);
  EXPECT_NE(run("eval --ckpt /nonexistent.ckpt --manifest /nonexistent.json").code, 0);
}

TEST(Cli, EndToEndPipeline) {
  const fs::path wd = fs::temp_directory_path() / "pclf_cli_test";
  fs::remove_all(wd);
  fs::create_directories(wd);
  std::ofstream(wd / "tiny.toml") << kTinyConfig;
  const std::string base = "--workdir " + wd.string() + " --config " + (wd / "tiny.toml").string() + " ";

  auto r = run(base + "gen-data");
  ASSERT_EQ(r.code, 0) << r.out;
  const fs::path manifest = wd / "data" / "manifest.json";
  ASSERT_TRUE(fs::exists(manifest));

  r = run(base + "train");
  ASSERT_EQ(r.code, 0) << r.out;
  const fs::path run_dir = wd / "tiny";
  ASSERT_TRUE(fs::exists(run_dir / "final.ckpt"));
  ASSERT_TRUE(fs::exists(run_dir / "train_log.jsonl"));

  r = run(base + "eval --ckpt " + (run_dir / "final.ckpt").string() + " --manifest " + manifest.string() + " --out " +
          (wd / "eval.json").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const auto rep = train::read_json(wd / "eval.json");
  EXPECT_EQ(rep.at("images").get<int>(), 4);

  r = run(base + "analyze-scores --ckpt " + (run_dir / "final.ckpt").string() + " --manifest " + manifest.string() +
          " --out " + (wd / "scores.csv").string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("pcc_rpn"), std::string::npos);
  EXPECT_NE(r.out.find("pcc_rcnn"), std::string::npos);
  EXPECT_TRUE(fs::exists(wd / "scores.csv"));

  r = run(base + "plot --dir " + run_dir.string());
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_TRUE(fs::exists(run_dir / "loss_curve.png"));
  fs::remove_all(wd);
}

TEST(Cli, SweepWritesSummaryPerValue) {
  const fs::path wd = fs::temp_directory_path() / "pclf_cli_sweep";
  fs::remove_all(wd);
  fs::create_directories(wd);
  std::ofstream(wd / "tiny.toml") << kTinyConfig << "[experiment]\nsweep_key = \"pcl.tau\"\nsweep_values = [0.1, 0.5]\n";
  const auto r = run("--workdir " + wd.string() + " --config " + (wd / "tiny.toml").string() + " --set train.steps=2 sweep");
  ASSERT_EQ(r.code, 0) << r.out;
  const auto summary = train::read_json(wd / "tiny" / "summary.json");
  EXPECT_EQ(summary.at("runs").size(), 2u);
  EXPECT_TRUE(fs::exists(wd / "tiny" / "pcl.tau_0.1" / "report.json"));
  fs::remove_all(wd);
}
