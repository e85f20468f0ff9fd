// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sslcap/checkpoint.hpp"
#include "sslcap/cli.hpp"
#include "sslcap/run_config.hpp"
#include "sslcap/trainer.hpp"
#include "test_support.hpp"

namespace sslcap {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

/// A fast config: short stages over a small toy set.
RunConfig quick_config() {
  RunConfig c = toy_run_config();
  c.schedule = TrainingSchedule::two_stage(2, 2);
  for (StageConfig& s : c.schedule.stages) s.batch_size = 16;
  return c;
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::ofstream(tmp_ / "quick.json") << canonical_json(quick_config());
    const CliResult r = cli({"prepare", "--toy", "--seed", "2", "--items", "60", "--labeled", "20", "--config",
                             (tmp_ / "quick.json").string(), "--out", data_dir().string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }

  fs::path data_dir() const { return tmp_ / "data"; }

  fs::path train(const std::string& name, std::vector<std::string> extra = {}) {
    std::vector<std::string> args{"train", "--data", data_dir().string(), "--out", (tmp_ / name).string()};
    args.insert(args.end(), extra.begin(), extra.end());
    const CliResult r = cli(args);
    EXPECT_EQ(r.code, 0) << r.err;
    return tmp_ / name;
  }

  testing::TempDir tmp_;
};

TEST_F(CliTest, PrepareWritesEverythingDeterministically) {
  for (const char* f : {"config.json", "manifest.json", "labeled.json", "unlabeled.json", "references.json",
                        "split.json", "embeddings.cache"}) {
    EXPECT_TRUE(fs::exists(data_dir() / f)) << f;
  }
  const CliResult again = cli({"prepare", "--toy", "--seed", "2", "--items", "60", "--labeled", "20", "--config",
                               (tmp_ / "quick.json").string(), "--out", (tmp_ / "again").string()});
  ASSERT_EQ(again.code, 0);
  for (const char* f : {"config.json", "labeled.json", "unlabeled.json", "split.json", "embeddings.cache"}) {
    EXPECT_EQ(slurp(data_dir() / f), slurp(tmp_ / "again" / f)) << f;
  }
  const RunConfig cfg = read_run_config(data_dir() / "config.json");
  EXPECT_EQ(cfg.data.n_labeled, 20u);
  EXPECT_EQ(cfg.data.split_seed, 2u);
  EXPECT_EQ(read_manifest(data_dir() / "labeled.json").records.size(), 20u);
  EXPECT_EQ(read_manifest(data_dir() / "unlabeled.json").records.size(), 40u);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(cli({}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"train"}).code, 2);
  EXPECT_EQ(cli({"prepare", "--toy", "--coco", "x.json"}).code, 2);
  EXPECT_EQ(cli({"train", "--data", (tmp_ / "nowhere").string()}).code, 2);
  EXPECT_EQ(cli({"report", (tmp_ / "missing.jsonl").string()}).code, 2);
  EXPECT_EQ(cli({"--help"}).code, 0);

  RunConfig uns_only = quick_config();
  uns_only.schedule.stages.erase(uns_only.schedule.stages.begin());
  std::ofstream(tmp_ / "uns.json") << canonical_json(uns_only);
  const CliResult r = cli({"train", "--data", data_dir().string(), "--config", (tmp_ / "uns.json").string(), "--out",
                           (tmp_ / "uns-run").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("supervised"), std::string::npos);
}

TEST_F(CliTest, CocoTrainingIsACapabilityError) {
  std::ofstream(tmp_ / "coco.json") << R"({"images": [{"id": 1, "file_name": "a.jpg"}, {"id": 2, "file_name": "b.jpg"}],
    "annotations": [{"image_id": 1, "caption": "a dog"}, {"image_id": 2, "caption": "a cat"}]})";
  ASSERT_EQ(cli({"prepare", "--coco", (tmp_ / "coco.json").string(), "--labeled", "1", "--out",
                 (tmp_ / "coco").string()})
                .code,
            0);
  EXPECT_EQ(cli({"train", "--data", (tmp_ / "coco").string(), "--out", (tmp_ / "coco-run").string()}).code, 3);
}

TEST_F(CliTest, TrainIsReproducibleAndResumable) {
  const fs::path a = train("a");
  const fs::path b = train("b");
  EXPECT_EQ(slurp(a / "report.jsonl"), slurp(b / "report.jsonl"));
  EXPECT_EQ(slurp(a / "model.ckpt"), slurp(b / "model.ckpt"));
  EXPECT_TRUE(fs::exists(a / "checkpoints" / "checkpoint-stage0.ckpt"));

  const fs::path resumed = train("resumed", {"--resume", (a / "checkpoints" / "checkpoint-stage0.ckpt").string()});
  EXPECT_EQ(slurp(resumed / "model.ckpt"), slurp(a / "model.ckpt"));

  // A different seed changes the digest, so the old checkpoint is refused.
  const CliResult r = cli({"train", "--data", data_dir().string(), "--seed", "9", "--resume",
                           (a / "checkpoints" / "checkpoint-stage0.ckpt").string(), "--out", (tmp_ / "bad").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("digest"), std::string::npos);
}

TEST_F(CliTest, EvaluateMatchesLibrary) {
  const fs::path run = train("run");
  ASSERT_EQ(cli({"evaluate", "--data", data_dir().string(), "--run", run.string(), "--out",
                 (tmp_ / "eval").string()})
                .code,
            0);
  const auto scores = nlohmann::json::parse(slurp(tmp_ / "eval" / "scores.json"));

  const RunConfig cfg = read_run_config(run / "config.json");
  LabeledSplit split;
  split.labeled = read_manifest(data_dir() / "labeled.json");
  split.unlabeled = read_manifest(data_dir() / "unlabeled.json");
  split.references = references_from_json(slurp(data_dir() / "references.json"));
  const ToyBackend backend(toy_backend_spec(cfg.data));
  const TrainingData data = prepare_training_data(split, backend, parse_token_caption);
  CaptionModel model = build_model(cfg);
  restore_model(model, load_checkpoint(run / "model.ckpt"));
  const ScoreReport lib = score_records(decode_and_score(model, data.eval, backend), BleuOptions{cfg.bleu_epsilon});
  EXPECT_EQ(scores.at("s_clip").get<double>(), lib.s_clip);
  EXPECT_EQ(scores.at("bleu4").get<double>(), lib.bleu4);
  EXPECT_EQ(scores.at("n").get<std::size_t>(), 40u);
  EXPECT_EQ(slurp(tmp_ / "eval" / "scores.csv"), score_report_to_csv(lib));

  ASSERT_EQ(cli({"evaluate", "--data", data_dir().string(), "--run", run.string(), "--beam", "1", "--out",
                 (tmp_ / "beam1").string()})
                .code,
            0);
  EXPECT_EQ(slurp(tmp_ / "beam1" / "eval_manifest.json"), slurp(tmp_ / "eval" / "eval_manifest.json"));
}

TEST_F(CliTest, EvaluateRejectsMismatchedCheckpoint) {
  const fs::path run = train("run");
  RunConfig other = read_run_config(run / "config.json");
  other.seed += 1;
  std::ofstream(run / "config.json", std::ios::trunc) << canonical_json(other);
  EXPECT_EQ(cli({"evaluate", "--data", data_dir().string(), "--run", run.string(), "--out",
                 (tmp_ / "eval").string()})
                .code,
            3);
  EXPECT_EQ(cli({"evaluate", "--data", data_dir().string(), "--out", (tmp_ / "eval").string()}).code, 2);
}

TEST_F(CliTest, GoldCaptionsScoreAtLeastOneOverM) {
  const CliResult r = cli({"evaluate", "--data", data_dir().string(), "--gold", "--out", (tmp_ / "gold").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto scores = nlohmann::json::parse(slurp(tmp_ / "gold" / "scores.json"));
  EXPECT_GE(scores.at("s_clip").get<double>(), 0.2);
  for (const auto& row : scores.at("per_image")) EXPECT_GE(row.at("fraction").get<double>(), 0.2);
}

TEST_F(CliTest, SweepAndReport) {
  const fs::path run = train("sweep", {"--sweep", "5,10,5"});
  EXPECT_TRUE(fs::exists(run / "report-size5.jsonl"));
  EXPECT_TRUE(fs::exists(run / "report-size10.jsonl"));
  const std::string sweep = slurp(run / "sweep.jsonl");
  EXPECT_EQ(std::count(sweep.begin(), sweep.end(), '\n'), 2);

  const CliResult r = cli({"report", (run / "report-size5.jsonl").string(), (run / "sweep.jsonl").string(), "--out",
                           (tmp_ / "curves").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string jsonl = slurp(run / "report-size5.jsonl");
  std::istringstream lines(jsonl);
  std::string line, expect = "source,stage,stage_index,epoch,loss,mean_cosine,bleu4,s_clip\n";
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    if (!j.contains("mean_cosine")) continue;
    expect += "report-size5.jsonl," + j.at("stage").get<std::string>() + "," +
              std::to_string(j.at("stage_index").get<int>()) + "," + std::to_string(j.at("epoch").get<int>()) + "," +
              (j.at("loss").is_null() ? std::string() : format_double(j.at("loss").get<double>())) + "," +
              format_double(j.at("mean_cosine").get<double>()) + "," + format_double(j.at("bleu4").get<double>()) + "," +
              format_double(j.at("s_clip").get<double>()) + "\n";
  }
  EXPECT_EQ(slurp(tmp_ / "curves" / "epochs.csv"), expect);
  const std::string sizes = slurp(tmp_ / "curves" / "sizes.csv");
  EXPECT_EQ(std::count(sizes.begin(), sizes.end(), '\n'), 3);

  std::ofstream(tmp_ / "broken.jsonl") << "{\"epoch\": 1}\n{oops\n";
  EXPECT_EQ(cli({"report", (tmp_ / "broken.jsonl").string(), "--out", (tmp_ / "c2").string()}).code, 2);
}

}  // namespace
}  // namespace sslcap
