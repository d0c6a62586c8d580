#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "commands.hpp"
#include "rvlm/config.hpp"
#include "rvlm/data.hpp"
#include "toy.hpp"

namespace rvlm::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  fs::path dir;
  fs::path config;
  std::ostringstream out, err;

  void SetUp() override {
    dir = fs::temp_directory_path() /
          ("rvlm_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
    RunConfig cfg;
    cfg.model = testing::tiny_model_config();
    cfg.synth.scene = testing::tiny_scene_config();
    cfg.synth.n_samples = 8;
    for (auto& s : cfg.stages) {
      s.steps = 2;
      s.batch_size = 4;
    }
    cfg.eval.max_new = 8;
    json j = to_json(cfg);
    for (auto& s : j["stages"]) s["dataset"] = "train.jsonl";
    j["eval"]["dataset"] = "train.jsonl";
    j["output_dir"] = "run";
    config = dir / "tiny.json";
    std::ofstream(config) << j.dump(2);
  }

  int synth(std::optional<long long> n = 8, std::uint64_t seed = 1, fs::path path = {}) {
    SynthArgs a;
    a.config = config;
    a.seed = seed;
    a.n = n;
    a.out = path.empty() ? dir / "train.jsonl" : path;
    return cmd_synth(a, out, err);
  }

  int train(std::optional<int> stage = std::nullopt, std::optional<fs::path> to = std::nullopt) {
    TrainArgs a;
    a.config = config;
    a.stage = stage;
    a.out = to;
    return cmd_train(a, out, err);
  }
};

TEST_F(CliTest, SynthIsDeterministicAndValidatesArguments) {
  ASSERT_EQ(synth(8, 3, dir / "a.jsonl"), kOk) << err.str();
  ASSERT_EQ(synth(8, 3, dir / "b.jsonl"), kOk);
  ASSERT_EQ(synth(8, 4, dir / "c.jsonl"), kOk);
  EXPECT_EQ(slurp(dir / "a.jsonl"), slurp(dir / "b.jsonl"));
  EXPECT_NE(slurp(dir / "a.jsonl"), slurp(dir / "c.jsonl"));
  EXPECT_EQ(load_dataset(dir / "a.jsonl").size(), 8u);
  EXPECT_NE(out.str().find("wrote 8 samples"), std::string::npos);

  EXPECT_EQ(synth(0), kUsage);
  EXPECT_NE(err.str().find("--n must be >= 1"), std::string::npos);

  SynthArgs a;
  a.config = config;
  a.n = 6;
  a.out = dir / "lr.jsonl";
  a.categories = std::vector<std::string>{"left_right"};
  ASSERT_EQ(cmd_synth(a, out, err), kOk);
  for (const auto& s : load_dataset(a.out)) EXPECT_EQ(*s.category, QuestionType::LeftRight);
  a.categories = std::vector<std::string>{"colour"};
  EXPECT_EQ(cmd_synth(a, out, err), kUsage);
  EXPECT_NE(err.str().find("unknown category 'colour'"), std::string::npos);
}

TEST_F(CliTest, TrainWritesArtifactsAndIsReproducible) {
  ASSERT_EQ(synth(), kOk);
  ASSERT_EQ(train(), kOk) << err.str();
  const fs::path run = dir / "run";
  for (const char* f : {"stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "final.ckpt", "train_report.json",
                        "loss_curve.csv", "loss_curve.svg"})
    EXPECT_TRUE(fs::exists(run / f)) << f;
  const auto report = json::parse(slurp(run / "train_report.json"));
  ASSERT_EQ(report.size(), 3u);
  EXPECT_EQ(slurp(run / "stage3.ckpt"), slurp(run / "final.ckpt"));

  ASSERT_EQ(train(std::nullopt, dir / "again"), kOk);
  EXPECT_EQ(slurp(run / "final.ckpt"), slurp(dir / "again" / "final.ckpt"));
  EXPECT_EQ(slurp(run / "loss_curve.csv"), slurp(dir / "again" / "loss_curve.csv"));
}

TEST_F(CliTest, TrainErrorsNameTheirCause) {
  EXPECT_EQ(train(), kDataError);
  EXPECT_NE(err.str().find("stage 1 dataset"), std::string::npos) << err.str();

  ASSERT_EQ(synth(), kOk);
  err.str("");
  EXPECT_EQ(train(2), kDataError);
  EXPECT_NE(err.str().find("stage1.ckpt"), std::string::npos) << err.str();
  EXPECT_EQ(train(4), kUsage);

  ASSERT_EQ(train(1), kOk) << err.str();
  ASSERT_EQ(train(2), kOk) << err.str();
  EXPECT_TRUE(fs::exists(dir / "run" / "stage2.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "run" / "final.ckpt"));
}

TEST_F(CliTest, EvalAndGenerate) {
  ASSERT_EQ(synth(), kOk);
  ASSERT_EQ(train(), kOk) << err.str();

  EvalArgs e;
  e.config = config;
  e.checkpoint = dir / "run" / "final.ckpt";
  ASSERT_EQ(cmd_eval(e, out, err), kOk) << err.str();
  for (const char* f : {"trace.jsonl", "report.txt", "report.json"})
    EXPECT_TRUE(fs::exists(dir / "run" / "eval" / f)) << f;
  EXPECT_NE(out.str().find("not a leaderboard"), std::string::npos);

  std::ostringstream gen;
  GenerateArgs g;
  g.config = config;
  g.checkpoint = e.checkpoint;
  g.samples = dir / "train.jsonl";
  ASSERT_EQ(cmd_generate(g, gen, err), kOk) << err.str();
  const auto samples = load_dataset(g.samples);
  for (const auto& s : samples) {
    EXPECT_NE(gen.str().find("[" + s.id + "] raw: "), std::string::npos);
    EXPECT_NE(gen.str().find("[" + s.id + "] extracted: "), std::string::npos);
  }

  e.checkpoint = dir / "missing.ckpt";
  EXPECT_EQ(cmd_eval(e, out, err), kDataError);
}

TEST_F(CliTest, MissingDepthNamesTheSample) {
  ASSERT_EQ(synth(), kOk);
  ASSERT_EQ(train(1), kOk);
  std::ifstream in(dir / "train.jsonl");
  std::string line;
  std::getline(in, line);
  json j = json::parse(line);
  ASSERT_TRUE(j.contains("depth"));
  j.erase("depth");
  const std::string id = j.at("id");
  std::ofstream(dir / "broken.jsonl") << j.dump() << "\n";

  GenerateArgs g;
  g.config = config;
  g.checkpoint = dir / "run" / "stage1.ckpt";
  g.samples = dir / "broken.jsonl";
  EXPECT_EQ(cmd_generate(g, out, err), kDataError);
  EXPECT_NE(err.str().find("MissingDepth"), std::string::npos) << err.str();
  EXPECT_NE(err.str().find(id), std::string::npos) << err.str();
}

}  // namespace
}  // namespace rvlm::cli
