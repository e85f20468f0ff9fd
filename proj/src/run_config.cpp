// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/run_config.hpp"

#include <initializer_list>

#include "binary_io.hpp"
#include "sslcap/error.hpp"
#include "sslcap/rng.hpp"

namespace sslcap {

using nlohmann::json;

void RunConfig::validate() const {
  if (data.source != "toy" && data.source != "coco") {
    throw ParameterError("data.source must be 'toy' or 'coco'");
  }
  if (data.source == "toy") {
    data.toy.validate();
    if (model.model.mapper.input_dim != data.toy.embedding_dim) {
      throw ParameterError("model.mapper.input_dim must equal data.toy.embedding_dim");
    }
    if (model.model.end_token != data.toy.end_token) {
      throw ParameterError("model.end_token must equal data.toy.end_token");
    }
  }
  model.model.validate();
  schedule.validate();
  if (!(bleu_epsilon >= 0.0)) throw ParameterError("bleu_epsilon must be >= 0");
}

RunConfig toy_run_config() {
  RunConfig c;
  c.data.toy.item_count = 1000;
  c.data.n_labeled = 200;
  MappingNetworkConfig& m = c.model.model.mapper;
  m.kind = MapperKind::mlp;
  m.prefix_length = 2;
  m.input_dim = c.data.toy.embedding_dim;
  m.lm_dim = 16;
  m.mlp_hidden = 32;
  m.tf_layers = 1;
  m.tf_heads = 2;
  c.model.model.finetune_lm = true;
  c.model.model.max_caption_length = 4;
  c.model.lm_hidden = 32;
  c.schedule = TrainingSchedule::two_stage();
  // Calibrated on the toy oracle: a deliberately weak supervised init
  // (large batches, few steps) leaves room for the unsupervised stage.
  c.schedule.stages[0].learning_rate = 3.35e-3;
  c.schedule.stages[0].batch_size = 128;
  c.schedule.stages[1].learning_rate = 3e-3;
  c.schedule.stages[1].batch_size = 16;
  return c;
}

namespace {

/// Rejects keys outside `allowed` so typos do not pass silently.
void check_keys(const json& j, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw FormatError(std::string(where) + " must be an object");
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (std::string_view a : allowed) ok = ok || key == a;
    if (!ok) throw FormatError("unknown key '" + key + "' in " + std::string(where));
  }
}

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

std::string_view to_string(Estimator e) { return e == Estimator::straight_through ? "straight_through" : "soft"; }

Estimator parse_estimator(std::string_view s) {
  if (s == "straight_through") return Estimator::straight_through;
  if (s == "soft") return Estimator::soft;
  throw FormatError("unknown estimator '" + std::string(s) + "'");
}

json stage_json(const StageConfig& s) {
  return json{{"kind", std::string(to_string(s.kind))},
              {"epochs", s.epochs},
              {"batch_size", s.batch_size},
              {"learning_rate", s.learning_rate},
              {"temperature",
               {{"initial", s.temperature.initial}, {"decay", s.temperature.decay}, {"minimum", s.temperature.minimum}}},
              {"estimator", std::string(to_string(s.estimator))}};
}

StageConfig stage_from(const json& j) {
  check_keys(j, "schedule.stages[]", {"kind", "epochs", "batch_size", "learning_rate", "temperature", "estimator"});
  StageConfig s;
  s.kind = parse_stage_kind(j.at("kind").get<std::string>());
  read(j, "epochs", s.epochs);
  read(j, "batch_size", s.batch_size);
  read(j, "learning_rate", s.learning_rate);
  if (j.contains("temperature")) {
    const json& t = j.at("temperature");
    check_keys(t, "temperature", {"initial", "decay", "minimum"});
    read(t, "initial", s.temperature.initial);
    read(t, "decay", s.temperature.decay);
    read(t, "minimum", s.temperature.minimum);
  }
  if (j.contains("estimator")) s.estimator = parse_estimator(j.at("estimator").get<std::string>());
  return s;
}

}  // namespace

json to_json(const RunConfig& c) {
  const ToyDatasetSpec& t = c.data.toy;
  const MappingNetworkConfig& m = c.model.model.mapper;
  json stages = json::array();
  for (const StageConfig& s : c.schedule.stages) stages.push_back(stage_json(s));
  return json{
      {"seed", c.seed},
      {"bleu_epsilon", c.bleu_epsilon},
      {"data",
       {{"source", c.data.source},
        {"coco_path", c.data.coco_path},
        {"embeddings_path", c.data.embeddings_path},
        {"n_labeled", c.data.n_labeled},
        {"split_seed", c.data.split_seed},
        {"toy",
         {{"seed", t.seed},
          {"vocabulary_size", t.vocabulary_size},
          {"item_count", t.item_count},
          {"bag_min", t.bag_min},
          {"bag_max", t.bag_max},
          {"caption_min", t.caption_min},
          {"caption_max", t.caption_max},
          {"references_min", t.references_min},
          {"references_max", t.references_max},
          {"embedding_dim", t.embedding_dim},
          {"noise_scale", t.noise_scale},
          {"end_token", t.end_token}}}}},
      {"model",
       {{"mapper",
         {{"kind", std::string(to_string(m.kind))},
          {"prefix_length", m.prefix_length},
          {"input_dim", m.input_dim},
          {"lm_dim", m.lm_dim},
          {"mlp_hidden", m.mlp_hidden},
          {"mlp_activation", std::string(to_string(m.mlp_activation))},
          {"tf_layers", m.tf_layers},
          {"tf_heads", m.tf_heads}}},
        {"finetune_lm", c.model.model.finetune_lm},
        {"max_caption_length", c.model.model.max_caption_length},
        {"end_token", c.model.model.end_token},
        {"lm_hidden", c.model.lm_hidden}}},
      {"schedule", {{"eval_every", c.schedule.eval_every}, {"stages", std::move(stages)}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c = toy_run_config();
  try {
    check_keys(j, "config", {"seed", "bleu_epsilon", "data", "model", "schedule"});
    read(j, "seed", c.seed);
    read(j, "bleu_epsilon", c.bleu_epsilon);
    if (j.contains("data")) {
      const json& d = j.at("data");
      check_keys(d, "data", {"source", "coco_path", "embeddings_path", "n_labeled", "split_seed", "toy"});
      read(d, "source", c.data.source);
      read(d, "coco_path", c.data.coco_path);
      read(d, "embeddings_path", c.data.embeddings_path);
      read(d, "n_labeled", c.data.n_labeled);
      read(d, "split_seed", c.data.split_seed);
      if (d.contains("toy")) {
        const json& t = d.at("toy");
        check_keys(t, "data.toy",
                   {"seed", "vocabulary_size", "item_count", "bag_min", "bag_max", "caption_min", "caption_max",
                    "references_min", "references_max", "embedding_dim", "noise_scale", "end_token"});
        ToyDatasetSpec& s = c.data.toy;
        read(t, "seed", s.seed);
        read(t, "vocabulary_size", s.vocabulary_size);
        read(t, "item_count", s.item_count);
        read(t, "bag_min", s.bag_min);
        read(t, "bag_max", s.bag_max);
        read(t, "caption_min", s.caption_min);
        read(t, "caption_max", s.caption_max);
        read(t, "references_min", s.references_min);
        read(t, "references_max", s.references_max);
        read(t, "embedding_dim", s.embedding_dim);
        read(t, "noise_scale", s.noise_scale);
        read(t, "end_token", s.end_token);
      }
    }
    if (j.contains("model")) {
      const json& mj = j.at("model");
      check_keys(mj, "model", {"mapper", "finetune_lm", "max_caption_length", "end_token", "lm_hidden"});
      if (mj.contains("mapper")) {
        const json& mp = mj.at("mapper");
        check_keys(mp, "model.mapper",
                   {"kind", "prefix_length", "input_dim", "lm_dim", "mlp_hidden", "mlp_activation", "tf_layers",
                    "tf_heads"});
        MappingNetworkConfig& m = c.model.model.mapper;
        if (mp.contains("kind")) m.kind = parse_mapper_kind(mp.at("kind").get<std::string>());
        read(mp, "prefix_length", m.prefix_length);
        read(mp, "input_dim", m.input_dim);
        read(mp, "lm_dim", m.lm_dim);
        read(mp, "mlp_hidden", m.mlp_hidden);
        if (mp.contains("mlp_activation")) m.mlp_activation = parse_activation(mp.at("mlp_activation").get<std::string>());
        read(mp, "tf_layers", m.tf_layers);
        read(mp, "tf_heads", m.tf_heads);
      }
      read(mj, "finetune_lm", c.model.model.finetune_lm);
      read(mj, "max_caption_length", c.model.model.max_caption_length);
      read(mj, "end_token", c.model.model.end_token);
      read(mj, "lm_hidden", c.model.lm_hidden);
    }
    if (j.contains("schedule")) {
      const json& sj = j.at("schedule");
      check_keys(sj, "schedule", {"eval_every", "stages"});
      read(sj, "eval_every", c.schedule.eval_every);
      if (sj.contains("stages")) {
        c.schedule.stages.clear();
        for (const json& s : sj.at("stages")) c.schedule.stages.push_back(stage_from(s));
      }
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string canonical_json(const RunConfig& config) { return to_json(config).dump(2) + "\n"; }

RunConfig parse_run_config(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("config: malformed JSON", e.byte);
  }
  return run_config_from_json(j);
}

RunConfig read_run_config(const std::filesystem::path& path) { return parse_run_config(detail::read_file(path)); }

std::string config_digest(const RunConfig& config) { return hex64(fnv1a64(canonical_json(config))); }

TrainingSchedule effective_schedule(const RunConfig& config) {
  TrainingSchedule s = config.schedule;
  s.seed = config.seed;
  return s;
}

CaptionModel build_model(const RunConfig& config) {
  ToyModelConfig m = config.model;
  m.seed = config.seed;
  const std::size_t vocab = config.data.source == "toy" ? config.data.toy.vocabulary_size : 0;
  if (vocab == 0) throw CapabilityError("only the toy language model is available; COCO training needs an LM adapter");
  return make_toy_caption_model(m, vocab);
}

ToyBackendSpec toy_backend_spec(const DataConfig& data) {
  const ToyDatasetSpec& t = data.toy;
  return ToyBackendSpec{t.seed, t.embedding_dim, t.vocabulary_size, t.noise_scale, t.end_token};
}

}  // namespace sslcap
