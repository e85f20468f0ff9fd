// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "sslcap/error.hpp"

namespace sslcap {

std::string_view to_string(StageKind kind) { return kind == StageKind::supervised ? "supervised" : "unsupervised"; }

StageKind parse_stage_kind(std::string_view text) {
  if (text == "supervised") return StageKind::supervised;
  if (text == "unsupervised") return StageKind::unsupervised;
  throw ParameterError("unknown stage kind '" + std::string(text) + "'");
}

void StageConfig::validate() const {
  if (epochs < 1) throw ParameterError("stage epochs must be >= 1");
  if (batch_size < 1) throw ParameterError("stage batch_size must be >= 1");
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw ParameterError("stage learning_rate must be finite and >= 0");
  }
  temperature.validate();
}

TrainingSchedule TrainingSchedule::two_stage(std::size_t sup_epochs, std::size_t unsup_epochs) {
  TrainingSchedule s;
  StageConfig sup;
  sup.kind = StageKind::supervised;
  sup.epochs = sup_epochs;
  StageConfig unsup;
  unsup.kind = StageKind::unsupervised;
  unsup.epochs = unsup_epochs;
  s.stages = {sup, unsup};
  return s;
}

void TrainingSchedule::validate() const {
  if (stages.empty()) throw ParameterError("schedule has no stages");
  if (eval_every < 1) throw ParameterError("eval_every must be >= 1");
  for (const StageConfig& st : stages) st.validate();
}

// ---- optimizer --------------------------------------------------------------

void Adam::reset(std::size_t warmup_steps) {
  steps_ = 0;
  warmup_ = warmup_steps;
  moments_.clear();
}

double Adam::warmup_factor() const {
  if (warmup_ == 0) return 1.0;
  return std::min(1.0, static_cast<double>(steps_ + 1) / static_cast<double>(warmup_));
}

void Adam::step(std::span<ad::Parameter* const> params, const Gradients& grads, double learning_rate) {
  const double lr = learning_rate * warmup_factor();
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(config_.beta1, t);
  const double c2 = 1.0 - std::pow(config_.beta2, t);
  for (ad::Parameter* p : params) {
    const ad::Matrix* g = grads.find(*p);
    if (g == nullptr) continue;
    auto [it, inserted] = moments_.try_emplace(p->name);
    Moments& mo = it->second;
    if (inserted) {
      mo.m = ad::Matrix::Zero(p->value.rows(), p->value.cols());
      mo.v = ad::Matrix::Zero(p->value.rows(), p->value.cols());
    }
    mo.m = config_.beta1 * mo.m + (1.0 - config_.beta1) * *g;
    mo.v = config_.beta2 * mo.v + (1.0 - config_.beta2) * g->cwiseProduct(*g);
    ad::round_to_f32(mo.m);
    ad::round_to_f32(mo.v);
    p->value.array() -= lr * (mo.m.array() / c1) / ((mo.v.array() / c2).sqrt() + config_.epsilon);
    ad::round_to_f32(p->value);
  }
}

std::vector<ParameterGroup> Adam::state_groups() const {
  std::vector<ParameterGroup> out;
  for (const auto& [name, mo] : moments_) {
    out.push_back(make_group("optim.m." + name, mo.m));
    out.push_back(make_group("optim.v." + name, mo.v));
  }
  return out;
}

void Adam::restore(std::size_t steps, std::size_t warmup, const Checkpoint& ckpt,
                   std::span<ad::Parameter* const> params) {
  steps_ = steps;
  warmup_ = warmup;
  moments_.clear();
  for (const ad::Parameter* p : params) {
    const ParameterGroup* m = find_group(ckpt, "optim.m." + p->name);
    const ParameterGroup* v = find_group(ckpt, "optim.v." + p->name);
    if (m == nullptr && v == nullptr) continue;
    if (m == nullptr || v == nullptr) throw CompatibilityError("checkpoint has partial optimizer state for " + p->name);
    Moments mo{ad::Matrix(p->value.rows(), p->value.cols()), ad::Matrix(p->value.rows(), p->value.cols())};
    restore_group(*m, mo.m);
    restore_group(*v, mo.v);
    moments_.emplace(p->name, std::move(mo));
  }
}

// ---- data and evaluation ----------------------------------------------------

TrainingData prepare_training_data(const LabeledSplit& split, const EmbeddingBackend& backend,
                                   const Tokenizer& tokenize) {
  TrainingData data;
  for (const CaptionRecord& rec : split.labeled.records) {
    if (rec.captions.empty()) throw ManifestError("labeled record '" + rec.image_id + "' has no caption");
    LabeledItem item{rec.image_id, backend.encode_image(rec.image()), {}};
    for (const std::string& c : rec.captions) {
      TokenSequence t = tokenize(c);
      if (t.empty()) throw EmptyCaptionError("record '" + rec.image_id + "' has an empty caption");
      item.captions.push_back(std::move(t));
    }
    data.labeled.push_back(std::move(item));
  }
  for (const CaptionRecord& rec : split.unlabeled.records) {
    if (!rec.captions.empty()) {
      throw ManifestError("unlabeled record '" + rec.image_id + "' still carries captions");
    }
    ImageEmbedding img{rec.image_id, backend.encode_image(rec.image())};
    auto it = split.references.captions.find(rec.image_id);
    if (it != split.references.captions.end()) {
      EvalItem ev{rec.image_id, img.image, {}};
      for (const std::string& c : it->second) ev.references.push_back(tokenize(c));
      data.eval.push_back(std::move(ev));
    }
    data.unlabeled.push_back(std::move(img));
  }
  return data;
}

std::vector<EvalRecord> decode_and_score(const CaptionModel& model, std::span<const EvalItem> items,
                                         const EmbeddingBackend& backend, std::size_t beam_width,
                                         const Detokenizer& detokenize) {
  const std::size_t max_len = model.config().max_caption_length;
  std::vector<EvalRecord> out;
  out.reserve(items.size());
  for (const EvalItem& item : items) {
    if (item.references.empty()) throw ParameterError("evaluation item '" + item.id + "' has no references");
    const PrefixEmbeddings prefix = model.map_prefix(item.image);
    const TokenSequence tokens =
        beam_width == 0 ? model.generate_greedy(prefix, max_len) : model.generate_beam(prefix, beam_width, max_len);
    EvalRecord rec;
    rec.image_id = item.id;
    rec.generated = detokenize(tokens);
    rec.g = tokens.empty() ? -1.0 : cosine_similarity(item.image, backend.encode_text(tokens));
    for (const TokenSequence& ref : item.references) {
      rec.references.push_back(detokenize(ref));
      rec.r.push_back(cosine_similarity(item.image, backend.encode_text(ref)));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

EvalMetrics evaluate_model(const CaptionModel& model, std::span<const EvalItem> items, const EmbeddingBackend& backend,
                           const BleuOptions& bleu) {
  const std::vector<EvalRecord> records = decode_and_score(model, items, backend);
  const ScoreReport report = score_records(records, bleu);
  EvalMetrics m;
  m.n = report.n;
  m.s_clip = report.s_clip;
  m.bleu4 = report.bleu4;
  double sum = 0.0;
  for (const EvalRecord& r : records) sum += r.g;
  m.mean_cosine = sum / static_cast<double>(records.size());
  return m;
}

// ---- stages -----------------------------------------------------------------

namespace {

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

void prepare_optimizer(TrainingContext& ctx, StageKind kind, std::size_t total_steps) {
  if (ctx.optimizer_kind == kind) return;
  const auto warm = static_cast<std::size_t>(std::ceil(ctx.optimizer.config().warmup_fraction *
                                                       static_cast<double>(total_steps)));
  ctx.optimizer.reset(warm);
  ctx.optimizer_kind = kind;
}

bool should_eval(const TrainingContext& ctx, std::size_t epoch, std::size_t last) {
  if (ctx.eval.empty()) return false;
  return epoch == 0 || epoch == last || epoch % ctx.eval_every == 0;
}

void finish_epoch(EpochRecord rec, const CaptionModel& model, const EmbeddingBackend* backend, TrainingContext& ctx,
                  std::size_t last, StageReport& report, const std::function<void(const EpochRecord&)>& on_epoch) {
  if (backend != nullptr && should_eval(ctx, rec.epoch, last)) {
    rec.metrics = evaluate_model(model, ctx.eval, *backend, ctx.bleu);
  }
  report.epochs.push_back(rec);
  if (on_epoch) on_epoch(report.epochs.back());
}

void check_finite(double loss, const Gradients& grads, StageKind kind) {
  if (!std::isfinite(loss) || !grads.all_finite()) {
    throw NumericalError(std::string(to_string(kind)) + " stage produced a non-finite loss or gradient");
  }
}

}  // namespace

StageReport run_supervised_stage(std::span<const LabeledItem> labeled, CaptionModel& model, const StageConfig& cfg,
                                 TrainingContext& ctx, std::size_t stage_index, std::size_t start_epoch,
                                 const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (cfg.kind != StageKind::supervised) throw ParameterError("run_supervised_stage given an unsupervised config");
  if (labeled.empty()) throw ManifestError("supervised stage needs at least one labeled item");
  std::vector<std::pair<std::size_t, std::size_t>> canonical;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (labeled[i].captions.empty()) throw ManifestError("item '" + labeled[i].id + "' has no caption");
    for (std::size_t c = 0; c < labeled[i].captions.size(); ++c) canonical.emplace_back(i, c);
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs = canonical;
  prepare_optimizer(ctx, StageKind::supervised, cfg.epochs * ceil_div(pairs.size(), cfg.batch_size));

  StageReport report{StageKind::supervised, stage_index, {}};
  if (start_epoch == 0) {
    finish_epoch(EpochRecord{StageKind::supervised, stage_index, 0, std::nullopt, std::nullopt, 0}, model,
                 ctx.eval_backend, ctx, cfg.epochs, report, on_epoch);
  }
  const TokenId end = model.config().end_token;
  const std::vector<ad::Parameter*> params = model.trainable_parameters();
  for (std::size_t epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    // Each epoch shuffles the canonical order (see the unsupervised stage).
    pairs = canonical;
    shuffle(pairs, ctx.rng);
    double total = 0.0;
    for (std::size_t b = 0; b < pairs.size(); b += cfg.batch_size) {
      std::vector<SupervisedExample> batch;
      for (std::size_t k = b; k < std::min(pairs.size(), b + cfg.batch_size); ++k) {
        const auto [i, c] = pairs[k];
        TokenSequence targets = labeled[i].captions[c];
        targets.push_back(end);
        batch.push_back(SupervisedExample{labeled[i].image, std::move(targets)});
      }
      Gradients grads;
      const double loss = supervised_loss(batch, model, &grads);
      check_finite(loss, grads, StageKind::supervised);
      ctx.optimizer.step(params, grads, cfg.learning_rate);
      total += loss;
    }
    model.add_supervised_epochs(1);
    finish_epoch(EpochRecord{StageKind::supervised, stage_index, epoch, total / static_cast<double>(pairs.size()),
                             std::nullopt, 0},
                 model, ctx.eval_backend, ctx, cfg.epochs, report, on_epoch);
  }
  return report;
}

StageReport run_unsupervised_stage(std::span<const ImageEmbedding> unlabeled, CaptionModel& model,
                                   const StageConfig& cfg, const EmbeddingBackend& backend, TrainingContext& ctx,
                                   std::size_t stage_index, std::size_t start_epoch,
                                   const std::function<void(const EpochRecord&)>& on_epoch) {
  cfg.validate();
  if (cfg.kind != StageKind::unsupervised) throw ParameterError("run_unsupervised_stage given a supervised config");
  if (model.supervised_epochs() == 0) {
    throw SequencingError(
        "unsupervised stage refused: the model has not completed a supervised stage; run a supervised stage first");
  }
  if (!backend.descriptor().differentiable_text) {
    throw CapabilityError("backend '" + backend.descriptor().name + "' cannot encode soft token sequences");
  }
  if (unlabeled.empty()) throw ManifestError("unsupervised stage needs at least one image");
  prepare_optimizer(ctx, StageKind::unsupervised, cfg.epochs * ceil_div(unlabeled.size(), cfg.batch_size));

  StageReport report{StageKind::unsupervised, stage_index, {}};
  if (start_epoch == 0) {
    finish_epoch(EpochRecord{StageKind::unsupervised, stage_index, 0, std::nullopt, std::nullopt, 0}, model,
                 ctx.eval_backend ? ctx.eval_backend : &backend, ctx, cfg.epochs, report, on_epoch);
  }
  std::vector<std::size_t> order(unlabeled.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::vector<ad::Parameter*> params = model.trainable_parameters();
  for (std::size_t epoch = start_epoch + 1; epoch <= cfg.epochs; ++epoch) {
    DifferentiableDecodeOptions decode;
    decode.max_len = model.config().max_caption_length;
    decode.temperature = cfg.temperature.at(epoch - 1);
    decode.estimator = cfg.estimator;
    // The order is a function of the epoch's rng draws only, not of the
    // previous epoch's permutation, so mid-stage resume needs no extra state.
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, ctx.rng);
    double total = 0.0;
    std::size_t used = 0;
    std::size_t skipped = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::vector<ImageEmbedding> batch;
      for (std::size_t k = b; k < std::min(order.size(), b + cfg.batch_size); ++k) batch.push_back(unlabeled[order[k]]);
      Gradients grads;
      const UnsupervisedStepResult step = batched_unsupervised_step(batch, model, decode, ctx.rng, backend, &grads);
      skipped += step.skipped.size();
      if (step.used == 0) continue;
      check_finite(step.loss, grads, StageKind::unsupervised);
      ctx.optimizer.step(params, grads, cfg.learning_rate);
      total += step.loss;
      used += step.used;
    }
    std::optional<double> loss;
    if (used > 0) loss = total / static_cast<double>(used);
    finish_epoch(EpochRecord{StageKind::unsupervised, stage_index, epoch, loss, std::nullopt, skipped}, model,
                 ctx.eval_backend ? ctx.eval_backend : &backend, ctx, cfg.epochs, report, on_epoch);
  }
  return report;
}

// ---- schedule ---------------------------------------------------------------

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t stage_index,
                                      std::optional<std::size_t> epoch) {
  std::string name = "checkpoint-stage" + std::to_string(stage_index);
  if (epoch) name += "-epoch" + std::to_string(*epoch);
  return dir / (name + ".ckpt");
}

Checkpoint capture_checkpoint(const CaptionModel& model, const TrainingContext& ctx, const std::string& digest,
                              std::size_t stage_index, std::size_t epoch) {
  Checkpoint ck;
  ck.config_digest = digest;
  ck.stage_index = stage_index;
  ck.epoch = epoch;
  ck.rng_state = ctx.rng.state();
  ck.supervised_epochs = model.supervised_epochs();
  ck.optimizer_steps = ctx.optimizer.steps();
  ck.optimizer_warmup = ctx.optimizer.warmup();
  ck.optimizer_kind = ctx.optimizer_kind ? std::string(to_string(*ctx.optimizer_kind)) : std::string();
  ck.groups = model_groups(model);
  for (ParameterGroup& g : ctx.optimizer.state_groups()) ck.groups.push_back(std::move(g));
  return ck;
}

ScheduleReport run_schedule(const TrainingSchedule& schedule, const TrainingData& data, CaptionModel& model,
                            const EmbeddingBackend& backend, const ScheduleOptions& options) {
  schedule.validate();
  TrainingContext ctx(schedule.seed);
  ctx.eval = data.eval;
  ctx.eval_every = schedule.eval_every;
  ctx.bleu = options.bleu;

  std::size_t start_stage = 0;
  std::size_t start_epoch = 0;
  if (options.resume_from) {
    const Checkpoint ck = load_checkpoint(*options.resume_from);
    if (ck.config_digest != options.config_digest) {
      throw CompatibilityError("checkpoint config digest " + ck.config_digest + " does not match the active config " +
                               options.config_digest);
    }
    if (ck.stage_index > schedule.stages.size() ||
        (ck.stage_index < schedule.stages.size() && ck.epoch >= schedule.stages[ck.stage_index].epochs)) {
      throw CompatibilityError("checkpoint position lies outside the schedule");
    }
    restore_model(model, ck);
    ctx.rng.set_state(ck.rng_state);
    ctx.optimizer.restore(ck.optimizer_steps, ck.optimizer_warmup, ck, model.parameters());
    if (!ck.optimizer_kind.empty()) ctx.optimizer_kind = parse_stage_kind(ck.optimizer_kind);
    start_stage = ck.stage_index;
    start_epoch = ck.epoch;
  } else if (model.supervised_epochs() == 0 && schedule.stages.front().kind != StageKind::supervised) {
    throw SequencingError("schedule starts with an unsupervised stage on a fresh model; a supervised stage must come first");
  }
  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  ScheduleReport report;
  std::size_t ran = 0;
  ctx.eval_backend = &backend;
  for (std::size_t s = start_stage; s < schedule.stages.size(); ++s) {
    if (options.stop_after_stages && ran == *options.stop_after_stages) break;
    const StageConfig& cfg = schedule.stages[s];
    const std::size_t first = s == start_stage ? start_epoch : 0;
    auto on_epoch = [&](const EpochRecord& rec) {
      if (options.on_epoch) options.on_epoch(rec);
      if (options.checkpoint_dir && options.checkpoint_every_epoch && rec.epoch > 0 && rec.epoch < cfg.epochs) {
        save_checkpoint(checkpoint_path(*options.checkpoint_dir, s, rec.epoch),
                        capture_checkpoint(model, ctx, options.config_digest, s, rec.epoch));
      }
    };
    StageReport sr = cfg.kind == StageKind::supervised
                         ? run_supervised_stage(data.labeled, model, cfg, ctx, s, first, on_epoch)
                         : run_unsupervised_stage(data.unlabeled, model, cfg, backend, ctx, s, first, on_epoch);
    report.stages.push_back(std::move(sr));
    if (options.checkpoint_dir) {
      save_checkpoint(checkpoint_path(*options.checkpoint_dir, s),
                      capture_checkpoint(model, ctx, options.config_digest, s + 1, 0));
    }
    ++ran;
  }
  if (!data.eval.empty()) report.final_metrics = evaluate_model(model, data.eval, backend, options.bleu);
  return report;
}

// ---- sweep ------------------------------------------------------------------

SweepReport sweep_labeled_size(std::span<const std::size_t> sizes, const TrainingSchedule& schedule,
                               const TrainingData& data, const ModelFactory& make_model,
                               const EmbeddingBackend& backend, const BleuOptions& bleu) {
  if (sizes.empty()) throw ParameterError("sweep needs at least one size");
  SweepReport out;
  std::vector<std::size_t> unique;
  std::set<std::size_t> seen;
  for (std::size_t n : sizes) {
    if (n < 1) throw ParameterError("sweep sizes must be positive");
    if (n > data.labeled.size()) {
      throw ParameterError("sweep size " + std::to_string(n) + " exceeds the labeled pool of " +
                           std::to_string(data.labeled.size()));
    }
    if (!seen.insert(n).second) {
      out.warnings.push_back("duplicate sweep size " + std::to_string(n) + " ignored");
      continue;
    }
    unique.push_back(n);
  }
  for (std::size_t n : unique) {
    TrainingData subset;
    for (std::size_t k : sample_indices(data.labeled.size(), n, schedule.seed)) subset.labeled.push_back(data.labeled[k]);
    subset.unlabeled = data.unlabeled;
    subset.eval = data.eval;
    CaptionModel model = make_model();
    ScheduleOptions opts;
    opts.bleu = bleu;
    SweepRow row;
    row.size = n;
    try {
      row.report = run_schedule(schedule, subset, model, backend, opts);
      row.completed = true;
      for (const StageReport& st : row.report.stages) {
        for (const EpochRecord& e : st.epochs) {
          if (e.loss && !std::isfinite(*e.loss)) row.completed = false;
        }
      }
    } catch (const NumericalError& e) {
      out.warnings.push_back("size " + std::to_string(n) + ": " + e.what());
    }
    if (row.report.final_metrics) row.metrics = *row.report.final_metrics;
    out.rows.push_back(std::move(row));
  }
  return out;
}

// ---- reports ----------------------------------------------------------------

std::string epoch_record_json(const EpochRecord& rec) {
  nlohmann::ordered_json j;
  j["stage"] = std::string(to_string(rec.stage));
  j["stage_index"] = rec.stage_index;
  j["epoch"] = rec.epoch;
  j["loss"] = rec.loss ? nlohmann::ordered_json(*rec.loss) : nlohmann::ordered_json(nullptr);
  j["skipped"] = rec.skipped;
  if (rec.metrics) {
    j["mean_cosine"] = rec.metrics->mean_cosine;
    j["bleu4"] = rec.metrics->bleu4;
    j["s_clip"] = rec.metrics->s_clip;
  }
  return j.dump();
}

std::string schedule_report_jsonl(const ScheduleReport& report) {
  std::string out;
  for (const StageReport& st : report.stages) {
    for (const EpochRecord& e : st.epochs) out += epoch_record_json(e) + "\n";
  }
  return out;
}

std::string sweep_report_jsonl(const SweepReport& report) {
  std::string out;
  for (const SweepRow& row : report.rows) {
    nlohmann::ordered_json j;
    j["size"] = row.size;
    j["mean_cosine"] = row.metrics.mean_cosine;
    j["bleu4"] = row.metrics.bleu4;
    j["s_clip"] = row.metrics.s_clip;
    j["completed"] = row.completed;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace sslcap
