// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Two-stage training: supervised cross-entropy stages and unsupervised
// image-caption similarity stages run from an ordered schedule, with
// checkpoints at stage boundaries and a labeled-set-size sweep on top.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslcap/captioner.hpp"
#include "sslcap/checkpoint.hpp"
#include "sslcap/data.hpp"
#include "sslcap/embedding_backend.hpp"
#include "sslcap/gumbel.hpp"
#include "sslcap/losses.hpp"
#include "sslcap/metrics.hpp"
#include "sslcap/rng.hpp"

namespace sslcap {

enum class StageKind { supervised, unsupervised };
std::string_view to_string(StageKind kind);
StageKind parse_stage_kind(std::string_view text);

inline constexpr double kToyLearningRate = 1e-2;
inline constexpr double kRealLearningRate = 2e-5;

struct StageConfig {
  StageKind kind = StageKind::supervised;
  std::size_t epochs = 10;
  std::size_t batch_size = 16;
  /// 0 is accepted and leaves parameters untouched.
  double learning_rate = kToyLearningRate;
  /// Unsupervised only.
  gumbel::TemperatureSchedule temperature;
  Estimator estimator = Estimator::straight_through;

  void validate() const;
};

struct TrainingSchedule {
  std::vector<StageConfig> stages;
  /// Metrics are computed at epoch 0 of every stage and then every
  /// eval_every epochs, always including a stage's last epoch.
  std::size_t eval_every = 1;
  std::uint64_t seed = 0;

  /// supervised x10 then unsupervised x10.
  static TrainingSchedule two_stage(std::size_t sup_epochs = 10, std::size_t unsup_epochs = 10);
  /// Throws ParameterError on an empty schedule or bad stage.
  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double warmup_fraction = 0.05;
};

/// Adam with bias correction. The learning rate ramps linearly over the
/// first `warmup` steps since the last reset. Moments and parameters are
/// rounded to f32 after every step, so checkpoints hold the exact state.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  void reset(std::size_t warmup_steps);
  /// Applies one update to every parameter present in `grads`.
  void step(std::span<ad::Parameter* const> params, const Gradients& grads, double learning_rate);

  std::size_t steps() const { return steps_; }
  std::size_t warmup() const { return warmup_; }
  /// Learning-rate multiplier for the next step.
  double warmup_factor() const;

  /// "optim.m.<name>" / "optim.v.<name>" groups.
  std::vector<ParameterGroup> state_groups() const;
  void restore(std::size_t steps, std::size_t warmup, const Checkpoint& ckpt,
               std::span<ad::Parameter* const> params);

 private:
  struct Moments {
    ad::Matrix m, v;
  };
  AdamConfig config_;
  std::size_t steps_ = 0;
  std::size_t warmup_ = 0;
  std::map<std::string, Moments> moments_;
};

/// Item with at least one tokenized caption.
struct LabeledItem {
  std::string id;
  EmbeddingVector image;
  std::vector<TokenSequence> captions;
};

/// Evaluation item: references come from the labeled captions or the
/// sealed side table and never reach a training step.
struct EvalItem {
  std::string id;
  EmbeddingVector image;
  std::vector<TokenSequence> references;
};

using Tokenizer = std::function<TokenSequence(std::string_view)>;
using Detokenizer = std::function<std::string(std::span<const TokenId>)>;

/// Embedded training inputs. Built once; stages only read them.
struct TrainingData {
  std::vector<LabeledItem> labeled;
  std::vector<ImageEmbedding> unlabeled;
  std::vector<EvalItem> eval;
};

/// Encodes the split. Eval items are the unlabeled records that have sealed
/// references. Throws ManifestError if a labeled record has no caption or
/// an unlabeled record still carries captions.
TrainingData prepare_training_data(const LabeledSplit& split, const EmbeddingBackend& backend,
                                   const Tokenizer& tokenize);

/// Decodes each item (greedy when beam_width is 0, else beam search) and
/// fills g and r with backend cosines. An empty caption gets g = -1.
std::vector<EvalRecord> decode_and_score(const CaptionModel& model, std::span<const EvalItem> items,
                                         const EmbeddingBackend& backend, std::size_t beam_width = 0,
                                         const Detokenizer& detokenize = format_tokens);

struct EvalMetrics {
  double mean_cosine = 0.0;
  double bleu4 = 0.0;
  double s_clip = 0.0;
  std::size_t n = 0;
};

/// Greedy decode_and_score summarized: mean g, S_CLIP and BLEU@4.
EvalMetrics evaluate_model(const CaptionModel& model, std::span<const EvalItem> items, const EmbeddingBackend& backend,
                           const BleuOptions& bleu = {});

struct EpochRecord {
  StageKind stage = StageKind::supervised;
  std::size_t stage_index = 0;
  std::size_t epoch = 0;
  /// Mean per-example loss over the epoch; empty at epoch 0.
  std::optional<double> loss;
  std::optional<EvalMetrics> metrics;
  /// Unsupervised only: images dropped for degenerate generations.
  std::size_t skipped = 0;
};

struct StageReport {
  StageKind kind = StageKind::supervised;
  std::size_t stage_index = 0;
  std::vector<EpochRecord> epochs;
};

struct ScheduleReport {
  std::vector<StageReport> stages;
  std::vector<std::string> warnings;
  /// Evaluation after the last stage.
  std::optional<EvalMetrics> final_metrics;
};

/// Mutable state carried through a schedule.
struct TrainingContext {
  explicit TrainingContext(std::uint64_t seed) : rng(seed) {}

  Rng rng;
  Adam optimizer;
  std::optional<StageKind> optimizer_kind;
  BleuOptions bleu;
  /// Eval items used for metric traces; empty (or no backend) disables
  /// evaluation.
  std::span<const EvalItem> eval;
  const EmbeddingBackend* eval_backend = nullptr;
  std::size_t eval_every = 1;
};

/// Mini-batch descent on the summed cross-entropy over (item, caption)
/// pairs, reshuffled each epoch; each caption is trained with the end token
/// appended. Epochs [start_epoch, cfg.epochs) run; `on_epoch` fires after each.
StageReport run_supervised_stage(std::span<const LabeledItem> labeled, CaptionModel& model, const StageConfig& cfg,
                                 TrainingContext& ctx, std::size_t stage_index = 0, std::size_t start_epoch = 0,
                                 const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Throws SequencingError when the model has no completed supervised epoch.
StageReport run_unsupervised_stage(std::span<const ImageEmbedding> unlabeled, CaptionModel& model,
                                   const StageConfig& cfg, const EmbeddingBackend& backend, TrainingContext& ctx,
                                   std::size_t stage_index = 0, std::size_t start_epoch = 0,
                                   const std::function<void(const EpochRecord&)>& on_epoch = {});

struct ScheduleOptions {
  /// Stored in every checkpoint and checked on resume.
  std::string config_digest;
  /// Checkpoints are written here when set.
  std::optional<std::filesystem::path> checkpoint_dir;
  bool checkpoint_every_epoch = false;
  std::optional<std::filesystem::path> resume_from;
  /// Stop after this many stages (counting from the resume point).
  std::optional<std::size_t> stop_after_stages;
  BleuOptions bleu;
  std::function<void(const EpochRecord&)> on_epoch;
};

/// checkpoint-stage<i>.ckpt after stage i, and checkpoint-stage<i>-epoch<e>.ckpt
/// when checkpointing every epoch.
std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t stage_index,
                                      std::optional<std::size_t> epoch = std::nullopt);

ScheduleReport run_schedule(const TrainingSchedule& schedule, const TrainingData& data, CaptionModel& model,
                            const EmbeddingBackend& backend, const ScheduleOptions& options = {});

Checkpoint capture_checkpoint(const CaptionModel& model, const TrainingContext& ctx, const std::string& digest,
                              std::size_t stage_index, std::size_t epoch);

struct SweepRow {
  std::size_t size = 0;
  EvalMetrics metrics;
  ScheduleReport report;
  /// True if every recorded loss was finite and all stages completed.
  bool completed = false;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<std::string> warnings;
};

using ModelFactory = std::function<CaptionModel()>;

/// For each distinct size (first occurrence kept), draws that many labeled
/// items with split_labeled(seed = schedule.seed) over the labeled pool and
/// runs the schedule on a fresh model. The unlabeled and eval sets are shared.
SweepReport sweep_labeled_size(std::span<const std::size_t> sizes, const TrainingSchedule& schedule,
                               const TrainingData& data, const ModelFactory& make_model,
                               const EmbeddingBackend& backend, const BleuOptions& bleu = {});

/// {stage, stage_index, epoch, loss, skipped, mean_cosine, bleu4, s_clip};
/// metric keys are absent when the epoch was not evaluated.
std::string epoch_record_json(const EpochRecord& record);
std::string schedule_report_jsonl(const ScheduleReport& report);
/// {size, mean_cosine, bleu4, s_clip, completed}.
std::string sweep_report_jsonl(const SweepReport& report);

}  // namespace sslcap
