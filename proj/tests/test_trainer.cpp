// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "sslcap/error.hpp"
#include "sslcap/run_config.hpp"
#include "sslcap/trainer.hpp"
#include "test_support.hpp"

namespace sslcap {
namespace {

constexpr std::size_t kVocab = 8;

ToyDatasetSpec tiny_spec(std::uint64_t seed) {
  ToyDatasetSpec s;
  s.seed = seed;
  s.vocabulary_size = kVocab;
  s.item_count = 60;
  s.bag_min = 2;
  s.bag_max = 3;
  s.references_min = 2;
  s.references_max = 3;
  s.embedding_dim = 8;
  return s;
}

class TrainerTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const ToyDataset toy = generate_toy_dataset(tiny_spec(5));
    backend_ = std::make_unique<ToyBackend>(toy.backend);
    data_ = prepare_training_data(split_labeled(toy.manifest, 20, 5), *backend_, parse_token_caption);
  }

  CaptionModel fresh_model(std::uint64_t seed = 1) const {
    return make_toy_caption_model(testing::small_toy_config(8, seed, 3), kVocab);
  }

  static StageConfig stage(StageKind kind, std::size_t epochs, double lr = 1e-2) {
    StageConfig c;
    c.kind = kind;
    c.epochs = epochs;
    c.batch_size = 8;
    c.learning_rate = lr;
    return c;
  }

  static std::vector<double> losses(const StageReport& r) {
    std::vector<double> out;
    for (const EpochRecord& e : r.epochs) {
      if (e.loss) out.push_back(*e.loss);
    }
    return out;
  }

  std::unique_ptr<ToyBackend> backend_;
  TrainingData data_;
};

TEST_F(TrainerTest, PreparedDataKeepsReferencesOutOfTraining) {
  EXPECT_EQ(data_.labeled.size(), 20u);
  EXPECT_EQ(data_.unlabeled.size(), 40u);
  EXPECT_EQ(data_.eval.size(), 40u);
  for (std::size_t i = 0; i < data_.eval.size(); ++i) EXPECT_EQ(data_.eval[i].id, data_.unlabeled[i].id);
}

TEST_F(TrainerTest, ZeroLearningRateLeavesParametersUnchanged) {
  CaptionModel model = fresh_model();
  const auto before = model_groups(model);
  TrainingContext ctx(3);
  const StageReport r = run_supervised_stage(data_.labeled, model, stage(StageKind::supervised, 3, 0.0), ctx);
  EXPECT_EQ(model_groups(model), before);
  const auto trace = losses(r);
  ASSERT_EQ(trace.size(), 3u);
  EXPECT_NEAR(trace[1], trace[0], 1e-12);
  EXPECT_NEAR(trace[2], trace[0], 1e-12);
  EXPECT_EQ(model.supervised_epochs(), 3u);
}

TEST_F(TrainerTest, StageConfigValidation) {
  CaptionModel model = fresh_model();
  TrainingContext ctx(0);
  EXPECT_THROW(run_supervised_stage(data_.labeled, model, stage(StageKind::supervised, 0), ctx), ParameterError);
  StageConfig bad = stage(StageKind::supervised, 1);
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ParameterError);
  bad = stage(StageKind::supervised, 1, -1.0);
  EXPECT_THROW(bad.validate(), ParameterError);
  EXPECT_THROW(run_supervised_stage(data_.labeled, model, stage(StageKind::unsupervised, 1), ctx), ParameterError);
  EXPECT_THROW(TrainingSchedule{}.validate(), ParameterError);
}

TEST_F(TrainerTest, UnlabeledItemInSupervisedStage) {
  std::vector<LabeledItem> items = data_.labeled;
  items[3].captions.clear();
  CaptionModel model = fresh_model();
  TrainingContext ctx(0);
  EXPECT_THROW(run_supervised_stage(items, model, stage(StageKind::supervised, 1), ctx), ManifestError);

  LabeledSplit split = split_labeled(generate_toy_dataset(tiny_spec(5)).manifest, 20, 5);
  split.unlabeled.records[0].captions.push_back("1 2");
  EXPECT_THROW(prepare_training_data(split, *backend_, parse_token_caption), ManifestError);
}

TEST_F(TrainerTest, FreshStartRefusal) {
  CaptionModel model = fresh_model();
  TrainingContext ctx(0);
  try {
    run_unsupervised_stage(data_.unlabeled, model, stage(StageKind::unsupervised, 1), *backend_, ctx);
    FAIL() << "expected SequencingError";
  } catch (const SequencingError& e) {
    EXPECT_NE(std::string(e.what()).find("supervised"), std::string::npos);
    EXPECT_EQ(e.exit_code(), 3);
  }
  TrainingSchedule s;
  s.stages = {stage(StageKind::unsupervised, 1)};
  EXPECT_THROW(run_schedule(s, data_, model, *backend_), SequencingError);
}

TEST_F(TrainerTest, UnsupervisedStageNeedsSoftEncoding) {
  CaptionModel model = fresh_model();
  model.set_supervised_epochs(1);
  EmbeddingCache cache;
  cache.dim = 8;
  const CacheBackend cached(cache, kVocab);
  TrainingContext ctx(0);
  EXPECT_THROW(run_unsupervised_stage(data_.unlabeled, model, stage(StageKind::unsupervised, 1), cached, ctx),
               CapabilityError);
}

TEST_F(TrainerTest, TwoStageHappyPathAndDeterminism) {
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 3), stage(StageKind::unsupervised, 2)};
  s.seed = 11;
  CaptionModel a = fresh_model(), b = fresh_model();
  const ScheduleReport ra = run_schedule(s, data_, a, *backend_);
  const ScheduleReport rb = run_schedule(s, data_, b, *backend_);
  ASSERT_EQ(ra.stages.size(), 2u);
  EXPECT_EQ(ra.stages[0].kind, StageKind::supervised);
  EXPECT_EQ(ra.stages[1].kind, StageKind::unsupervised);
  EXPECT_EQ(ra.stages[0].epochs.size(), 4u);
  EXPECT_EQ(ra.stages[1].epochs.size(), 3u);
  EXPECT_FALSE(ra.stages[0].epochs[0].loss.has_value());
  for (const auto& st : ra.stages) {
    for (const auto& e : st.epochs) ASSERT_TRUE(e.metrics.has_value());
  }
  EXPECT_EQ(schedule_report_jsonl(ra), schedule_report_jsonl(rb));
  EXPECT_EQ(model_groups(a), model_groups(b));
  ASSERT_TRUE(ra.final_metrics.has_value());
}

TEST_F(TrainerTest, InterleavedScheduleRuns) {
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 2), stage(StageKind::unsupervised, 2), stage(StageKind::supervised, 2),
              stage(StageKind::unsupervised, 2)};
  CaptionModel model = fresh_model();
  const ScheduleReport r = run_schedule(s, data_, model, *backend_);
  ASSERT_EQ(r.stages.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.stages[i].stage_index, i);
  EXPECT_EQ(model.supervised_epochs(), 4u);
}

TEST_F(TrainerTest, EvalEverySkipsMiddleEpochs) {
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 5)};
  s.eval_every = 2;
  CaptionModel model = fresh_model();
  const ScheduleReport r = run_schedule(s, data_, model, *backend_);
  std::vector<std::size_t> evaluated;
  for (const auto& e : r.stages[0].epochs) {
    if (e.metrics) evaluated.push_back(e.epoch);
  }
  EXPECT_EQ(evaluated, (std::vector<std::size_t>{0, 2, 4, 5}));
}

TEST_F(TrainerTest, BackendIsUntouchedByTraining) {
  const ad::Matrix table = backend_->token_table();
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 1), stage(StageKind::unsupervised, 1)};
  CaptionModel model = fresh_model();
  run_schedule(s, data_, model, *backend_);
  EXPECT_EQ(backend_->token_table(), table);
}

TEST_F(TrainerTest, ResumeChecksDigestAndPosition) {
  testing::TempDir tmp;
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 2), stage(StageKind::unsupervised, 2)};
  ScheduleOptions opts;
  opts.config_digest = "aaaa";
  opts.checkpoint_dir = tmp.path();
  opts.stop_after_stages = 1;
  CaptionModel model = fresh_model();
  run_schedule(s, data_, model, *backend_, opts);
  ASSERT_TRUE(std::filesystem::exists(checkpoint_path(tmp.path(), 0)));

  ScheduleOptions resume;
  resume.config_digest = "bbbb";
  resume.resume_from = checkpoint_path(tmp.path(), 0);
  CaptionModel other = fresh_model(2);
  EXPECT_THROW(run_schedule(s, data_, other, *backend_, resume), CompatibilityError);

  TrainingSchedule shorter;
  shorter.stages = {stage(StageKind::supervised, 1)};
  Checkpoint far = load_checkpoint(checkpoint_path(tmp.path(), 0));
  far.stage_index = 0;
  far.epoch = 1;
  save_checkpoint(tmp / "far.ckpt", far);
  resume.config_digest = "aaaa";
  resume.resume_from = tmp / "far.ckpt";
  EXPECT_THROW(run_schedule(shorter, data_, other, *backend_, resume), CompatibilityError);
}

TEST_F(TrainerTest, ResumeAtStageBoundaryMatchesUninterrupted) {
  testing::TempDir tmp;
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 2), stage(StageKind::unsupervised, 2)};
  s.seed = 4;
  CaptionModel full = fresh_model();
  const ScheduleReport whole = run_schedule(s, data_, full, *backend_);

  ScheduleOptions first;
  first.config_digest = "d";
  first.checkpoint_dir = tmp.path();
  first.stop_after_stages = 1;
  CaptionModel part = fresh_model();
  run_schedule(s, data_, part, *backend_, first);

  ScheduleOptions second;
  second.config_digest = "d";
  second.resume_from = checkpoint_path(tmp.path(), 0);
  CaptionModel resumed = fresh_model(77);
  const ScheduleReport rest = run_schedule(s, data_, resumed, *backend_, second);
  ASSERT_EQ(rest.stages.size(), 1u);
  EXPECT_EQ(losses(rest.stages[0]), losses(whole.stages[1]));
  EXPECT_EQ(model_groups(resumed), model_groups(full));
}

TEST(Adam, WarmupFactorAndReset) {
  Adam adam;
  adam.reset(4);
  EXPECT_EQ(adam.warmup_factor(), 0.25);
  ad::Parameter p{"p", ad::Matrix::Zero(1, 1), true};
  std::vector<ad::Parameter*> params{&p};
  ad::Tape tape;
  tape.backward(ad::scale(ad::sum(tape.parameter(p)), 2.0));
  Gradients g;
  g.add_from(tape, std::vector<const ad::Parameter*>{&p});
  adam.step(params, g, 0.1);
  // First bias-corrected step moves by lr * factor, against the gradient sign.
  EXPECT_NEAR(p.value(0, 0), -0.1 * 0.25, 1e-7);
  EXPECT_EQ(adam.warmup_factor(), 0.5);
  for (int i = 0; i < 5; ++i) adam.step(params, g, 0.1);
  EXPECT_EQ(adam.warmup_factor(), 1.0);
  EXPECT_EQ(adam.steps(), 6u);
  EXPECT_EQ(adam.state_groups().size(), 2u);
  adam.reset(0);
  EXPECT_EQ(adam.steps(), 0u);
  EXPECT_EQ(adam.warmup_factor(), 1.0);
  EXPECT_TRUE(adam.state_groups().empty());
}

TEST_F(TrainerTest, SweepDeduplicatesAndValidates) {
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 1)};
  auto factory = [this] { return fresh_model(); };
  const std::vector<std::size_t> sizes{5, 10, 5};
  const SweepReport r = sweep_labeled_size(sizes, s, data_, factory, *backend_);
  ASSERT_EQ(r.rows.size(), 2u);
  EXPECT_EQ(r.rows[0].size, 5u);
  EXPECT_EQ(r.rows[1].size, 10u);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("duplicate"), std::string::npos);
  EXPECT_TRUE(r.rows[0].completed);

  EXPECT_THROW(sweep_labeled_size(std::vector<std::size_t>{21}, s, data_, factory, *backend_), ParameterError);
  EXPECT_THROW(sweep_labeled_size(std::vector<std::size_t>{0}, s, data_, factory, *backend_), ParameterError);
  EXPECT_THROW(sweep_labeled_size(std::vector<std::size_t>{}, s, data_, factory, *backend_), ParameterError);
  const std::string jsonl = sweep_report_jsonl(r);
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 2);
}

TEST_F(TrainerTest, FullPoolSweepEqualsPlainRun) {
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 2), stage(StageKind::unsupervised, 1)};
  s.seed = 2;
  const SweepReport sweep =
      sweep_labeled_size(std::vector<std::size_t>{20}, s, data_, [this] { return fresh_model(); }, *backend_);
  CaptionModel model = fresh_model();
  const ScheduleReport plain = run_schedule(s, data_, model, *backend_);
  EXPECT_EQ(schedule_report_jsonl(sweep.rows[0].report), schedule_report_jsonl(plain));
  EXPECT_EQ(sweep.rows[0].metrics.mean_cosine, plain.final_metrics->mean_cosine);
}

TEST(EpochRecordJson, Keys) {
  EpochRecord rec;
  rec.stage = StageKind::unsupervised;
  rec.stage_index = 1;
  rec.epoch = 2;
  rec.loss = -0.5;
  rec.skipped = 3;
  auto j = nlohmann::json::parse(epoch_record_json(rec));
  EXPECT_EQ(j.at("stage"), "unsupervised");
  EXPECT_EQ(j.at("loss"), -0.5);
  EXPECT_EQ(j.at("skipped"), 3);
  EXPECT_FALSE(j.contains("bleu4"));
  rec.loss.reset();
  rec.metrics = EvalMetrics{0.9, 0.2, 0.6, 10};
  j = nlohmann::json::parse(epoch_record_json(rec));
  EXPECT_TRUE(j.at("loss").is_null());
  EXPECT_EQ(j.at("mean_cosine"), 0.9);
  EXPECT_EQ(j.at("s_clip"), 0.6);
  EXPECT_EQ(parse_stage_kind("supervised"), StageKind::supervised);
  EXPECT_THROW(parse_stage_kind("semi"), ParameterError);
}

TEST(DecodeAndScore, EmptyCaptionGetsMinusOne) {
  CaptionModel model = make_toy_caption_model(testing::small_toy_config(8, 1, 3), kVocab);
  for (ad::Parameter* p : model.parameters()) {
    if (p->name == "lm.out_bias") p->value(0, 0) = 1e4;  // always emit the end token first
  }
  const ToyBackend backend(ToyBackendSpec{0, 8, kVocab, 0.0, 0});
  const std::vector<EvalItem> items = {{"a", backend.encode_image({"a", "toy:1,2"}), {{1, 2}, {2, 1}}}};
  const auto recs = decode_and_score(model, items, backend);
  ASSERT_EQ(recs.size(), 1u);
  EXPECT_EQ(recs[0].generated, "");
  EXPECT_EQ(recs[0].g, -1.0);
  ASSERT_EQ(recs[0].r.size(), 2u);
  EXPECT_NEAR(recs[0].r[0], 1.0, 1e-6);
  EXPECT_EQ(recs[0].references, (std::vector<std::string>{"1 2", "2 1"}));
}

// The calibrated toy run: supervised loss halves within the stage.
TEST(ToyConvergence, SupervisedLossHalves) {
  const RunConfig cfg = toy_run_config();
  const ToyDataset toy = generate_toy_dataset(cfg.data.toy);
  const ToyBackend backend(toy_backend_spec(cfg.data));
  const TrainingData data =
      prepare_training_data(split_labeled(toy.manifest, cfg.data.n_labeled, cfg.data.split_seed), backend,
                            parse_token_caption);
  ASSERT_EQ(data.labeled.size(), 200u);
  CaptionModel model = build_model(cfg);
  TrainingContext ctx(cfg.seed);
  const StageReport r = run_supervised_stage(data.labeled, model, effective_schedule(cfg).stages.at(0), ctx);
  ASSERT_EQ(r.epochs.size(), 11u);
  EXPECT_LT(*r.epochs.back().loss, 0.5 * *r.epochs[1].loss);
}

// A model that reproduces its images' bags should hold its similarity
// through an unsupervised stage over those same images.
TEST_F(TrainerTest, StrongModelStaysStable) {
  TrainingData memorized;
  memorized.labeled = data_.labeled;
  for (const LabeledItem& item : data_.labeled) {
    memorized.unlabeled.push_back(ImageEmbedding{item.id, item.image});
    memorized.eval.push_back(EvalItem{item.id, item.image, item.captions});
  }
  TrainingSchedule s;
  s.stages = {stage(StageKind::supervised, 60, 2e-2), stage(StageKind::unsupervised, 5, 1e-3)};
  CaptionModel model = fresh_model();
  const ScheduleReport r = run_schedule(s, memorized, model, *backend_);
  const double start = r.stages[1].epochs.front().metrics->mean_cosine;
  ASSERT_GT(start, 0.95);
  for (const EpochRecord& e : r.stages[1].epochs) EXPECT_GE(e.metrics->mean_cosine, start - 0.05);
}

}  // namespace
}  // namespace sslcap
