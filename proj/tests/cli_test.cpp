// End-to-end checks of the command-line surface; each test shells out to the
// built binary with a scratch working directory.

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#ifndef D2S_CLI_PATH
#error "D2S_CLI_PATH must point at the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

struct Scratch {
  fs::path dir;
  explicit Scratch(const std::string& name) : dir(fs::temp_directory_path() / name) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Scratch() { fs::remove_all(dir); }
  std::string path(const std::string& rel) const { return (dir / rel).string(); }
};

int run(const std::string& args) {
  const std::string cmd = std::string(D2S_CLI_PATH) + " " + args + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// Small config shared by the pipeline tests.
std::string tiny_config_json(const Scratch& s) {
  const std::string path = s.path("config.json");
  write_file(path, R"({
    "data": {
      "seed": 7, "count": 48, "test_seed": 8, "test_count": 16,
      "train_path": ")" + s.path("train/dataset.jsonl") + R"(",
      "test_path": ")" + s.path("test/dataset.jsonl") + R"(",
      "gen": {"grid": 16, "patch": 4}
    },
    "model": {"d_token": 8, "d_hidden": 12, "d_visual": 8, "d_text": 8},
    "train": {"epochs": 1, "batch_size": 8, "seed": 42},
    "alignment": {"buffer_capacity": 16, "refresh_step": 4, "lambda": 0.05, "gamma": 0.01},
    "ablation": {"cases": "ae"}
  })");
  return path;
}

TEST(Cli, GenDataWritesDatasetAndManifest) {
  Scratch s("d2s_cli_gen");
  const std::string cfg = tiny_config_json(s);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("corpus") +
                " --set data.count=100"),
            0);
  EXPECT_TRUE(fs::exists(s.path("corpus/dataset.jsonl")));
  const std::string manifest = read_file(s.path("corpus/manifest.json"));
  EXPECT_NE(manifest.find("gt_decile_counts"), std::string::npos);

  // decile counts sum to the sample count
  const auto j = nlohmann::json::parse(manifest);
  std::size_t total = 0;
  for (const auto& c : j.at("gt_decile_counts")) total += c.get<std::size_t>();
  EXPECT_EQ(total, 100u);
  EXPECT_EQ(j.at("count").get<std::size_t>(), 100u);
}

TEST(Cli, GenDataIsByteIdenticalPerSeed) {
  Scratch s("d2s_cli_repro");
  const std::string cfg = tiny_config_json(s);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("one")), 0);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("two")), 0);
  EXPECT_EQ(read_file(s.path("one/dataset.jsonl")), read_file(s.path("two/dataset.jsonl")));
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("three") + " --seed 99"), 0);
  EXPECT_NE(read_file(s.path("one/dataset.jsonl")), read_file(s.path("three/dataset.jsonl")));
}

TEST(Cli, GenDataZeroCountIsValid) {
  Scratch s("d2s_cli_zero");
  const std::string cfg = tiny_config_json(s);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("empty") +
                " --set data.count=0"),
            0);
  EXPECT_TRUE(fs::exists(s.path("empty/dataset.jsonl")));
  EXPECT_TRUE(read_file(s.path("empty/dataset.jsonl")).empty());
}

TEST(Cli, TrainEvalInferAblatePipeline) {
  Scratch s("d2s_cli_pipeline");
  const std::string cfg = tiny_config_json(s);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("train")), 0);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("test") +
                " --set data.seed=8 --set data.count=16"),
            0);

  ASSERT_EQ(run("train --config " + cfg + " --out " + s.path("run")), 0);
  for (const char* name : {"config.json", "app_config.json", "log.csv", "checkpoint.json",
                           "metrics.csv", "metrics.txt", "diagnostics.json"}) {
    EXPECT_TRUE(fs::exists(s.path("run") + "/" + name)) << name;
  }
  const std::string log = read_file(s.path("run/log.csv"));
  EXPECT_NE(log.find("iter,lr,L_mse,L_eal,L_fal,L_total,buf_v,buf_s"), std::string::npos);

  ASSERT_EQ(run("eval --config " + cfg + " --out " + s.path("eval") +
                " --set eval.checkpoint=" + s.path("run/checkpoint.json") +
                " --set eval.data=" + s.path("test/dataset.jsonl")),
            0);
  const std::string metrics = read_file(s.path("eval/metrics.csv"));
  EXPECT_NE(metrics.find("srcc,pcc,rmse,rmae,n"), std::string::npos);

  ASSERT_EQ(run("infer --config " + cfg + " --out " + s.path("scores") +
                " --set infer.checkpoint=" + s.path("run/checkpoint.json") +
                " --set infer.data=" + s.path("test/dataset.jsonl")),
            0);
  const std::string scores = read_file(s.path("scores/scores.csv"));
  EXPECT_NE(scores.find("index,score"), std::string::npos);

  ASSERT_EQ(run("ablate --config " + cfg + " --out " + s.path("ablation") + " --seed 42"), 0);
  EXPECT_TRUE(fs::exists(s.path("ablation/ablation_runs.csv")));
  EXPECT_TRUE(fs::exists(s.path("ablation/ablation_summary.csv")));
  EXPECT_TRUE(fs::exists(s.path("ablation/ablation_summary.txt")));
  EXPECT_TRUE(fs::exists(s.path("ablation/case_a/seed_42/checkpoint.json")));
  EXPECT_TRUE(fs::exists(s.path("ablation/case_e/seed_42/metrics.csv")));
}

TEST(Cli, TrainRunsArePerSeedReproducible) {
  Scratch s("d2s_cli_seedrepro");
  const std::string cfg = tiny_config_json(s);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("train")), 0);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("test") +
                " --set data.seed=8 --set data.count=16"),
            0);
  ASSERT_EQ(run("train --config " + cfg + " --out " + s.path("r1") + " --seed 826"), 0);
  ASSERT_EQ(run("train --config " + cfg + " --out " + s.path("r2") + " --seed 826"), 0);
  EXPECT_EQ(read_file(s.path("r1/checkpoint.json")), read_file(s.path("r2/checkpoint.json")));
}

TEST(Cli, VerifyPassesOnHealthyBuild) {
  EXPECT_EQ(run("verify"), 0);
}

TEST(Cli, VerifyCatchesInjectedSignFlip) {
  EXPECT_NE(run("verify --mutate-eal-sign"), 0);
}

TEST(Cli, DistinctExitCodes) {
  Scratch s("d2s_cli_exits");
  // config error: missing required sections
  write_file(s.path("bad.json"), "{}");
  EXPECT_EQ(run("train --config " + s.path("bad.json") + " --out " + s.path("x")), 2);
  // config error: malformed JSON
  write_file(s.path("broken.json"), "{not json");
  EXPECT_EQ(run("gen-data --config " + s.path("broken.json") + " --out " + s.path("y")), 2);
  // io error: missing dataset file
  const std::string cfg = tiny_config_json(s);
  EXPECT_EQ(run("train --config " + cfg + " --out " + s.path("z")), 3);
  // numerical abort: absurd learning rate diverges
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("train")), 0);
  ASSERT_EQ(run("gen-data --config " + cfg + " --out " + s.path("test") +
                " --set data.seed=8 --set data.count=16"),
            0);
  EXPECT_EQ(run("train --config " + cfg + " --out " + s.path("w") +
                " --set train.lr0=1e150 --set train.lr_min=1e140"),
            4);
  EXPECT_TRUE(fs::exists(s.path("w/checkpoint_last_good.json")));
}

}  // namespace
