#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <string>

namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
};

fs::path work() {
  static const fs::path dir = [] {
    fs::path d = fs::temp_directory_path() / "cstt_cli_test";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Result run(const std::string& args) {
  const fs::path log = work() / "last.log";
  const std::string cmd = std::string(CSTT_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(log)};
}

fs::path tiny_config(const std::string& extra = "") {
  const fs::path p = work() / "tiny.cfg";
  std::ofstream(p) << "frames = 3\nindividuals = 4\ngroup_classes = 4\naction_classes = 3\n"
                      "scene_channels = 4\nscene_height = 2\nscene_width = 2\nwidth = 8\n"
                      "heads = 2\nblocks = 1\nscene_tokens = 2\nclusters = 2\nclips = 12\n"
                      "batch_size = 4\nepochs = 2\nlr = 1e-3\n"
                   << extra;
  return p;
}

std::string out_dir(const std::string& name) { return (work() / name).string(); }

}  // namespace

TEST(Cli, HelpListsEveryFlag) {
  for (const char* cmd : {"gen", "train", "eval", "gradcheck", "ablate", "export-clusters"}) {
    Result r = run(std::string(cmd) + " --help");
    EXPECT_EQ(r.code, 0) << cmd;
    for (const char* flag : {"--config", "--out", "--seed", "--workers", "--epochs", "--clusters",
                             "--blocks", "--variant", "--no-grg", "--intra", "--inter"})
      EXPECT_NE(r.out.find(flag), std::string::npos) << cmd << " " << flag;
  }
  Result top = run("--help");
  EXPECT_EQ(top.code, 0);
  EXPECT_NE(top.out.find("export-clusters"), std::string::npos);
}

TEST(Cli, UnknownFlagIsAnError) {
  Result r = run("train --bogus");
  EXPECT_NE(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["error"], "usage_error");
  EXPECT_NE(run("gen --variant mine").code, 0);
  EXPECT_NE(run("").code, 0);
}

TEST(Cli, GenIsByteReproducible) {
  const auto cfg = tiny_config("clips = 10\n");
  ASSERT_EQ(run("gen --config " + cfg.string() + " --seed 1 --out " + out_dir("gen_a")).code, 0);
  ASSERT_EQ(run("gen --config " + cfg.string() + " --seed 1 --out " + out_dir("gen_b")).code, 0);
  const std::string a = slurp(work() / "gen_a" / "data.bin");
  EXPECT_EQ(a, slurp(work() / "gen_b" / "data.bin"));
  EXPECT_EQ(slurp(work() / "gen_a" / "data.bin.json"), slurp(work() / "gen_b" / "data.bin.json"));
  ASSERT_EQ(run("gen --config " + cfg.string() + " --seed 2 --out " + out_dir("gen_c")).code, 0);
  EXPECT_NE(a, slurp(work() / "gen_c" / "data.bin"));
  auto manifest = nlohmann::json::parse(slurp(work() / "gen_a" / "manifest.json"));
  EXPECT_EQ(manifest["command"], "gen");
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_EQ(manifest["config"]["clips"], 10);
  EXPECT_TRUE(manifest.contains("version"));
}

TEST(Cli, DefaultGenWritesTwoThousandClips) {
  ASSERT_EQ(run("gen --out " + out_dir("gen_default")).code, 0);
  const std::string bytes = slurp(work() / "gen_default" / "data.bin");
  ASSERT_GT(bytes.size(), 4u);
  EXPECT_EQ(bytes.substr(0, 4), "CSTT");
  auto side = nlohmann::json::parse(slurp(work() / "gen_default" / "data.bin.json"));
  EXPECT_EQ(side["clips"], 2000);
}

TEST(Cli, ConfigErrorsNameTheKey) {
  const fs::path bad = work() / "bad.cfg";
  std::ofstream(bad) << "width = 8\nclusters\n";
  Result r = run("gen --config " + bad.string() + " --out " + out_dir("bad"));
  EXPECT_NE(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["error"], "config_error");
  EXPECT_NE(j["message"].get<std::string>().find("'clusters'"), std::string::npos);
}

TEST(Cli, UnwritableOutputIsAnIoError) {
  const fs::path blocker = work() / "blocker";
  std::ofstream(blocker) << "x";
  const std::string target = (blocker / "sub").string();
  Result r = run("gen --config " + tiny_config().string() + " --out " + target);
  EXPECT_NE(r.code, 0);
  auto j = nlohmann::json::parse(r.out);
  EXPECT_EQ(j["error"], "io_error");
  EXPECT_NE(j["message"].get<std::string>().find(target), std::string::npos);
}

TEST(Cli, GradcheckPasses) {
  Result r = run("gradcheck --out " + out_dir("gradcheck"));
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("max_rel_error"), std::string::npos);
  EXPECT_NE(r.out.find("PASS"), std::string::npos);
}

TEST(Cli, TrainIsReproducibleAndEvalMatches) {
  const auto cfg = tiny_config().string();
  ASSERT_EQ(run("train --config " + cfg + " --seed 3 --out " + out_dir("train_a")).code, 0);
  ASSERT_EQ(run("train --config " + cfg + " --seed 3 --out " + out_dir("train_b")).code, 0);
  const std::string metrics = slurp(work() / "train_a" / "metrics.jsonl");
  EXPECT_EQ(metrics, slurp(work() / "train_b" / "metrics.jsonl"));
  EXPECT_EQ(std::count(metrics.begin(), metrics.end(), '\n'), 2);
  EXPECT_TRUE(fs::exists(work() / "train_a" / "checkpoints" / "last.ckpt"));
  EXPECT_TRUE(fs::exists(work() / "train_a" / "checkpoints" / "best.ckpt"));

  const std::string ckpt = (work() / "train_a" / "checkpoints" / "last.ckpt").string();
  Result e = run("eval --checkpoint " + ckpt + " --out " + out_dir("eval_a"));
  ASSERT_EQ(e.code, 0) << e.out;
  auto ev = nlohmann::json::parse(e.out);
  const std::string last = metrics.substr(metrics.rfind('\n', metrics.size() - 2) + 1);
  auto lastj = nlohmann::json::parse(last);
  EXPECT_EQ(ev["group_acc"], lastj["val_group_acc"]);
  EXPECT_EQ(ev["loss"], lastj["val_loss"]);

  Result bad = run("eval --checkpoint " + ckpt + " --blocks 2 --out " + out_dir("eval_bad"));
  EXPECT_NE(bad.code, 0);
  auto j = nlohmann::json::parse(bad.out);
  EXPECT_EQ(j["error"], "incompatible");
  EXPECT_NE(j["message"].get<std::string>().find("blocks"), std::string::npos);
}

TEST(Cli, EvalOfAMemorizingCheckpointIsPerfect) {
  const auto cfg = tiny_config("clips = 4\ndropout = 0\nlr = 3e-3\nbatch_size = 2\ndecay_epochs = none\n").string();
  ASSERT_EQ(run("train --config " + cfg + " --epochs 150 --out " + out_dir("memo")).code, 0);
  Result e = run("eval --checkpoint " + (work() / "memo" / "checkpoints" / "last.ckpt").string() +
                 " --split train --out " + out_dir("memo_eval"));
  ASSERT_EQ(e.code, 0) << e.out;
  auto ev = nlohmann::json::parse(e.out);
  EXPECT_EQ(ev["group_acc"], 1.0);
  EXPECT_EQ(ev["ind_acc"], 1.0);
}

TEST(Cli, AblateClustersWritesFiveRows) {
  Result r = run("ablate --config " + tiny_config().string() + " --epochs 1 --plan clusters --out " +
                 out_dir("ablate"));
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string csv = slurp(work() / "ablate" / "ablation.csv");
  EXPECT_EQ(csv.rfind("arm,group_acc,ind_acc,seed\n", 0), 0u);
  for (const char* arm : {"clusters=1,", "clusters=2,", "clusters=3,", "clusters=4,", "clusters=6,"})
    EXPECT_NE(csv.find(std::string("\n") + arm), std::string::npos) << arm;
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 6);
}

TEST(Cli, ExportClusters) {
  Result r = run("export-clusters --config " + tiny_config().string() + " --max-clips 3 --out " +
                 out_dir("export"));
  ASSERT_EQ(r.code, 0) << r.out;
  auto j = nlohmann::json::parse(slurp(work() / "export" / "clusters.json"));
  EXPECT_EQ(j["clusters"], 2);
  ASSERT_EQ(j["clips"].size(), 3u);
  for (const auto& s : j["clips"][0]["sites"]) EXPECT_EQ(s["labels"].size(), 4u);
  EXPECT_TRUE(fs::exists(work() / "export" / "manifest.json"));
}

TEST(Cli, FlagsOverrideTheFile) {
  ASSERT_EQ(run("gen --config " + tiny_config().string() +
                " --seed 5 --clusters 3 --blocks 0 --variant stacked --no-grg --intra off --inter on "
                "--workers 2 --epochs 7 --out " + out_dir("flags"))
                .code,
            0);
  auto c = nlohmann::json::parse(slurp(work() / "flags" / "manifest.json"))["config"];
  EXPECT_EQ(c["seed"], 5);
  EXPECT_EQ(c["clusters"], 3);
  EXPECT_EQ(c["blocks"], 0);
  EXPECT_EQ(c["variant"], "stacked");
  EXPECT_EQ(c["grg"], false);
  EXPECT_EQ(c["intra"], false);
  EXPECT_EQ(c["inter"], true);
  EXPECT_EQ(c["workers"], 2);
  EXPECT_EQ(c["epochs"], 7);
}
