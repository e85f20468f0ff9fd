// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "sslcap/checkpoint.hpp"
#include "sslcap/data.hpp"
#include "sslcap/error.hpp"
#include "sslcap/metrics.hpp"
#include "sslcap/run_config.hpp"
#include "sslcap/trainer.hpp"

namespace sslcap {

namespace fs = std::filesystem;

fs::path default_run_dir(const std::string& command) {
  const char* env = std::getenv(kOutputDirEnv);
  const fs::path parent = env != nullptr && *env != '\0' ? fs::path(env) : fs::path("runs");
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  std::ostringstream name;
  name << command << "-" << std::put_time(&tm, "%Y%m%d-%H%M%S");
  return parent / name.str();
}

namespace {

// File names inside a prepared data directory.
constexpr const char* kConfigFile = "config.json";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kLabeledFile = "labeled.json";
constexpr const char* kUnlabeledFile = "unlabeled.json";
constexpr const char* kReferencesFile = "references.json";
constexpr const char* kSplitFile = "split.json";
constexpr const char* kCacheFile = "embeddings.cache";
// ... and inside a run directory.
constexpr const char* kReportFile = "report.jsonl";
constexpr const char* kSweepFile = "sweep.jsonl";
constexpr const char* kModelFile = "model.ckpt";
constexpr const char* kCheckpointDir = "checkpoints";

fs::path out_dir_or_default(const std::string& flag, const std::string& command) {
  return flag.empty() ? default_run_dir(command) : fs::path(flag);
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw IoError("missing file '" + p.string() + "'");
}

struct PreparedData {
  RunConfig config;
  LabeledSplit split;
};

PreparedData load_prepared(const fs::path& dir) {
  for (const char* f : {kConfigFile, kLabeledFile, kUnlabeledFile, kReferencesFile}) require_file(dir / f);
  PreparedData p;
  p.config = read_run_config(dir / kConfigFile);
  p.split.labeled = read_manifest(dir / kLabeledFile);
  p.split.unlabeled = read_manifest(dir / kUnlabeledFile);
  p.split.references = references_from_json(detail::read_file(dir / kReferencesFile));
  return p;
}

// ---- prepare ----------------------------------------------------------------

struct PrepareArgs {
  bool toy = false;
  std::string coco;
  std::uint64_t seed = 0;
  std::size_t items = 0;
  std::optional<std::size_t> labeled;
  std::string config;
  std::string embeddings;
  std::string out;
};

int cmd_prepare(const PrepareArgs& a, std::ostream& out, std::ostream& err) {
  if (a.toy == !a.coco.empty()) throw ParameterError("prepare needs exactly one of --toy or --coco");
  RunConfig cfg = a.config.empty() ? toy_run_config() : read_run_config(a.config);
  cfg.data.split_seed = a.seed;

  // Everything is loaded and computed before the output directory exists,
  // so input errors leave nothing behind.
  DatasetManifest manifest;
  std::unique_ptr<EmbeddingBackend> backend;
  if (a.toy) {
    cfg.data.source = "toy";
    cfg.data.toy.seed = a.seed;
    if (a.items > 0) cfg.data.toy.item_count = a.items;
    cfg.data.n_labeled = a.labeled.value_or(std::min<std::size_t>(200, cfg.data.toy.item_count));
    ToyDataset toy = generate_toy_dataset(cfg.data.toy);
    manifest = std::move(toy.manifest);
    backend = std::make_unique<ToyBackend>(toy.backend);
  } else {
    require_file(a.coco);
    cfg.data.source = "coco";
    cfg.data.coco_path = a.coco;
    cfg.data.n_labeled = a.labeled.value_or(10000);
    manifest = load_coco_manifest(a.coco);
    if (!a.embeddings.empty()) {
      require_file(a.embeddings);
      cfg.data.embeddings_path = a.embeddings;
      backend = std::make_unique<CacheBackend>(CacheBackend::open(a.embeddings, 0));
    }
  }
  cfg.validate();
  const LabeledSplit split = split_labeled(manifest, cfg.data.n_labeled, cfg.data.split_seed);

  const fs::path dir = out_dir_or_default(a.out, "prepare");
  fs::create_directories(dir);
  detail::write_file(dir / kConfigFile, canonical_json(cfg));
  detail::write_file(dir / kManifestFile, manifest_to_json(manifest));
  detail::write_file(dir / kLabeledFile, manifest_to_json(split.labeled));
  detail::write_file(dir / kUnlabeledFile, manifest_to_json(split.unlabeled));
  detail::write_file(dir / kReferencesFile, references_to_json(split.references));
  detail::write_file(dir / kSplitFile, split_snapshot_json(split, cfg.data.n_labeled, cfg.data.split_seed));
  int code = 0;
  if (backend) {
    const CacheBuildResult res = build_embedding_cache(manifest, *backend, dir / kCacheFile);
    out << "cache: " << res.written << " embeddings\n";
    for (const auto& [id, msg] : res.errors) err << "cannot encode '" << id << "': " << msg << "\n";
    if (!res.errors.empty()) code = 2;
  } else {
    out << "cache: skipped (no embedding source given)\n";
  }
  out << "output: " << dir.string() << "\n";
  out << "config digest: " << config_digest(cfg) << "\n";
  out << "records: " << manifest.records.size() << "\n";
  out << "split: " << split.labeled.records.size() << " / " << split.unlabeled.records.size() << "\n";
  return code;
}

// ---- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string config;
  std::string mapper;
  bool finetune_lm = false;
  bool freeze_lm = false;
  std::optional<std::uint64_t> seed;
  std::string resume;
  std::vector<std::size_t> sweep;
  std::string out;
};

RunConfig train_config(const TrainArgs& a, const PreparedData& prepared) {
  RunConfig cfg = prepared.config;
  if (!a.config.empty()) {
    const RunConfig base = read_run_config(a.config);
    cfg.seed = base.seed;
    cfg.model = base.model;
    cfg.schedule = base.schedule;
    cfg.bleu_epsilon = base.bleu_epsilon;
  }
  if (!a.mapper.empty()) cfg.model.model.mapper.kind = parse_mapper_kind(a.mapper);
  if (a.finetune_lm && a.freeze_lm) throw ParameterError("--finetune-lm and --freeze-lm are exclusive");
  if (a.finetune_lm) cfg.model.model.finetune_lm = true;
  if (a.freeze_lm) cfg.model.model.finetune_lm = false;
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const PreparedData prepared = load_prepared(a.data);
  const RunConfig cfg = train_config(a, prepared);
  if (!a.resume.empty()) require_file(a.resume);
  if (cfg.data.source != "toy") {
    throw CapabilityError("training needs a differentiable text backend; only toy data provides one");
  }
  const ToyBackend backend(toy_backend_spec(cfg.data));
  const TrainingData data = prepare_training_data(prepared.split, backend, parse_token_caption);
  const TrainingSchedule schedule = effective_schedule(cfg);
  const std::string digest = config_digest(cfg);
  BleuOptions bleu{cfg.bleu_epsilon};

  const fs::path dir = out_dir_or_default(a.out, "train");
  fs::create_directories(dir);
  detail::write_file(dir / kConfigFile, canonical_json(cfg));
  out << "output: " << dir.string() << "\n";
  out << "config digest: " << digest << "\n";

  if (!a.sweep.empty()) {
    if (!a.resume.empty()) throw ParameterError("--resume cannot be combined with --sweep");
    const SweepReport rep = sweep_labeled_size(
        a.sweep, schedule, data, [&] { return build_model(cfg); }, backend, bleu);
    for (const std::string& w : rep.warnings) err << "warning: " << w << "\n";
    for (const SweepRow& row : rep.rows) {
      detail::write_file(dir / ("report-size" + std::to_string(row.size) + ".jsonl"), schedule_report_jsonl(row.report));
      out << "size " << row.size << ": mean_cosine " << format_double(row.metrics.mean_cosine) << " bleu4 "
          << format_double(row.metrics.bleu4) << " s_clip " << format_double(row.metrics.s_clip) << "\n";
    }
    detail::write_file(dir / kSweepFile, sweep_report_jsonl(rep));
    return 0;
  }

  CaptionModel model = build_model(cfg);
  ScheduleOptions opts;
  opts.config_digest = digest;
  opts.checkpoint_dir = dir / kCheckpointDir;
  opts.bleu = bleu;
  if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
  const ScheduleReport rep = run_schedule(schedule, data, model, backend, opts);
  for (const std::string& w : rep.warnings) err << "warning: " << w << "\n";
  detail::write_file(dir / kReportFile, schedule_report_jsonl(rep));
  fs::copy_file(checkpoint_path(dir / kCheckpointDir, schedule.stages.size() - 1), dir / kModelFile,
                fs::copy_options::overwrite_existing);
  if (rep.final_metrics) {
    out << "final: mean_cosine " << format_double(rep.final_metrics->mean_cosine) << " bleu4 "
        << format_double(rep.final_metrics->bleu4) << " s_clip " << format_double(rep.final_metrics->s_clip) << "\n";
  }
  return 0;
}

// ---- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string data;
  std::string run;
  std::string checkpoint;
  std::string eval_manifest;
  std::size_t beam = 0;
  bool gold = false;
  std::string out;
};

int cmd_evaluate(const EvaluateArgs& a, std::ostream& out, std::ostream&) {
  const PreparedData prepared = load_prepared(a.data);
  RunConfig cfg = prepared.config;
  std::optional<Checkpoint> ckpt;
  if (!a.gold) {
    if (a.run.empty() && a.checkpoint.empty()) throw ParameterError("evaluate needs --run or --checkpoint (or --gold)");
    if (!a.run.empty()) {
      require_file(fs::path(a.run) / kConfigFile);
      cfg = read_run_config(fs::path(a.run) / kConfigFile);
    }
    const fs::path ck = a.checkpoint.empty() ? fs::path(a.run) / kModelFile : fs::path(a.checkpoint);
    require_file(ck);
    ckpt = load_checkpoint(ck);
    if (ckpt->config_digest != config_digest(cfg)) {
      throw CompatibilityError("checkpoint digest " + ckpt->config_digest + " does not match config " +
                               config_digest(cfg));
    }
  }

  LabeledSplit eval_split;
  if (!a.eval_manifest.empty()) {
    require_file(a.eval_manifest);
    const DatasetManifest m = read_manifest(a.eval_manifest);
    for (const CaptionRecord& r : m.records) {
      CaptionRecord stripped = r;
      stripped.captions.clear();
      eval_split.unlabeled.records.push_back(stripped);
      if (!r.captions.empty()) eval_split.references.captions.emplace(r.image_id, r.captions);
    }
  } else {
    eval_split.unlabeled = prepared.split.unlabeled;
    eval_split.references = prepared.split.references;
  }
  if (eval_split.references.captions.empty()) {
    throw ManifestError("evaluation manifest carries no reference captions; S_CLIP and BLEU@4 need references");
  }
  if (cfg.data.source != "toy") throw CapabilityError("evaluation needs a text encoder; only toy data provides one");
  const ToyBackend backend(toy_backend_spec(cfg.data));
  const TrainingData data = prepare_training_data(eval_split, backend, parse_token_caption);

  std::vector<EvalRecord> records;
  if (a.gold) {
    for (const EvalItem& item : data.eval) {
      EvalRecord rec;
      rec.image_id = item.id;
      rec.generated = format_tokens(item.references.front());
      rec.g = cosine_similarity(item.image, backend.encode_text(item.references.front()));
      for (const TokenSequence& ref : item.references) {
        rec.references.push_back(format_tokens(ref));
        rec.r.push_back(cosine_similarity(item.image, backend.encode_text(ref)));
      }
      records.push_back(std::move(rec));
    }
  } else {
    CaptionModel model = build_model(cfg);
    restore_model(model, *ckpt);
    records = decode_and_score(model, data.eval, backend, a.beam);
  }
  const ScoreReport report = score_records(records, BleuOptions{cfg.bleu_epsilon});

  const fs::path dir = !a.out.empty() ? fs::path(a.out)
                       : !a.run.empty() ? fs::path(a.run) / "eval"
                                        : default_run_dir("evaluate");
  fs::create_directories(dir);
  detail::write_file(dir / "eval_manifest.json", evaluation_manifest_to_json(records));
  detail::write_file(dir / "scores.json", score_report_to_json(report));
  detail::write_file(dir / "scores.csv", score_report_to_csv(report));
  out << "output: " << dir.string() << "\n";
  out << "images: " << report.n << "\n";
  out << "s_clip: " << format_double(report.s_clip) << "\n";
  out << "bleu4: " << format_double(report.bleu4) << "\n";
  return 0;
}

// ---- report -----------------------------------------------------------------

std::string csv_number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return "";
  if (j.at(key).is_boolean()) return j.at(key).get<bool>() ? "true" : "false";
  if (j.at(key).is_number_unsigned()) return std::to_string(j.at(key).get<std::uint64_t>());
  if (j.at(key).is_number_integer()) return std::to_string(j.at(key).get<std::int64_t>());
  return format_double(j.at(key).get<double>());
}

std::string csv_field(std::string s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_flag, std::ostream& out) {
  if (inputs.empty()) throw ParameterError("report needs at least one input file");
  std::string epochs = "source,stage,stage_index,epoch,loss,mean_cosine,bleu4,s_clip\n";
  std::string sizes = "source,size,mean_cosine,bleu4,s_clip,completed\n";
  std::size_t n_epochs = 0;
  std::size_t n_sizes = 0;
  for (const std::string& in : inputs) require_file(in);
  for (const std::string& in : inputs) {
    const std::string text = detail::read_file(in);
    std::istringstream lines(text);
    std::string line;
    std::size_t offset = 0;
    while (std::getline(lines, line)) {
      const std::size_t line_start = offset;
      offset += line.size() + 1;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(in + ": malformed JSON line", line_start + e.byte - 1);
      }
      const std::string src = csv_field(fs::path(in).filename().string());
      if (j.contains("size")) {
        sizes += src + "," + csv_number(j, "size") + "," + csv_number(j, "mean_cosine") + "," + csv_number(j, "bleu4") +
                 "," + csv_number(j, "s_clip") + "," + csv_number(j, "completed") + "\n";
        ++n_sizes;
      } else if (j.contains("epoch")) {
        if (!j.contains("mean_cosine")) continue;
        epochs += src + "," + csv_field(j.value("stage", std::string())) + "," + csv_number(j, "stage_index") + "," +
                  csv_number(j, "epoch") + "," + csv_number(j, "loss") + "," + csv_number(j, "mean_cosine") + "," +
                  csv_number(j, "bleu4") + "," + csv_number(j, "s_clip") + "\n";
        ++n_epochs;
      } else {
        throw FormatError(in + ": line is neither an epoch record nor a sweep row");
      }
    }
  }
  const fs::path dir = out_dir_or_default(out_flag, "report");
  fs::create_directories(dir);
  detail::write_file(dir / "epochs.csv", epochs);
  detail::write_file(dir / "sizes.csv", sizes);
  out << "output: " << dir.string() << "\n";
  out << "epoch rows: " << n_epochs << "\n";
  out << "size rows: " << n_sizes << "\n";
  return 0;
}

}  // namespace

int run_cli(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sslcap: semi-supervised prefix captioning"};
  app.require_subcommand(1);

  PrepareArgs pa;
  CLI::App* prepare = app.add_subcommand("prepare", "Build manifests, the labeled split and the embedding cache");
  prepare->add_flag("--toy", pa.toy, "Generate the toy dataset");
  prepare->add_option("--coco", pa.coco, "COCO-captions annotation JSON");
  prepare->add_option("--seed", pa.seed, "Dataset and split seed");
  prepare->add_option("--items", pa.items, "Toy item count");
  prepare->add_option("--labeled", pa.labeled, "Labeled split size");
  prepare->add_option("--config", pa.config, "Base config file");
  prepare->add_option("--embeddings", pa.embeddings, "Precomputed image embedding cache (COCO)");
  prepare->add_option("--out", pa.out, "Output directory");

  TrainArgs ta;
  std::string sweep_text;
  CLI::App* train = app.add_subcommand("train", "Run the training schedule or a labeled-size sweep");
  train->add_option("--data", ta.data, "Prepared data directory")->required();
  train->add_option("--config", ta.config, "Config overriding model and schedule");
  train->add_option("--mapper", ta.mapper, "mlp or transformer");
  train->add_flag("--finetune-lm", ta.finetune_lm, "Train language model parameters too");
  train->add_flag("--freeze-lm", ta.freeze_lm, "Keep the language model frozen");
  train->add_option("--seed", ta.seed, "Model and schedule seed");
  train->add_option("--resume", ta.resume, "Checkpoint to continue from");
  train->add_option("--sweep", sweep_text, "Comma-separated labeled sizes");
  train->add_option("--out", ta.out, "Run directory");

  EvaluateArgs ea;
  CLI::App* evaluate = app.add_subcommand("evaluate", "Decode and score against references");
  evaluate->add_option("--data", ea.data, "Prepared data directory")->required();
  evaluate->add_option("--run", ea.run, "Run directory (config.json, model.ckpt)");
  evaluate->add_option("--checkpoint", ea.checkpoint, "Checkpoint overriding <run>/model.ckpt");
  evaluate->add_option("--manifest", ea.eval_manifest, "Manifest whose captions serve as references");
  evaluate->add_option("--beam", ea.beam, "Beam width; 0 decodes greedily");
  evaluate->add_flag("--gold", ea.gold, "Score the first reference as the generated caption");
  evaluate->add_option("--out", ea.out, "Output directory");

  std::vector<std::string> inputs;
  std::string report_out;
  CLI::App* report = app.add_subcommand("report", "Turn JSON-lines reports into curve CSVs");
  report->add_option("inputs", inputs, "Report files");
  report->add_option("--out", report_out, "Output directory");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (prepare->parsed()) return cmd_prepare(pa, out, err);
    if (train->parsed()) {
      std::stringstream ss(sweep_text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        try {
          ta.sweep.push_back(static_cast<std::size_t>(std::stoull(item)));
        } catch (const std::exception&) {
          throw ParameterError("--sweep expects comma-separated sizes, got '" + sweep_text + "'");
        }
      }
      return cmd_train(ta, out, err);
    }
    if (evaluate->parsed()) return cmd_evaluate(ea, out, err);
    if (report->parsed()) return cmd_report(inputs, report_out, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace sslcap
