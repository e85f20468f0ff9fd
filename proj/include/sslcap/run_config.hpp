// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// The declarative run configuration shared by every CLI command, with a
// canonical JSON form (sorted keys, two-space indent) and its digest.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "sslcap/captioner.hpp"
#include "sslcap/data.hpp"
#include "sslcap/embedding_backend.hpp"
#include "sslcap/trainer.hpp"

namespace sslcap {

struct DataConfig {
  /// "toy" or "coco".
  std::string source = "toy";
  ToyDatasetSpec toy;
  std::string coco_path;
  /// Cache of precomputed image embeddings (COCO runs).
  std::string embeddings_path;
  std::size_t n_labeled = 200;
  std::uint64_t split_seed = 0;
};

struct RunConfig {
  /// Drives model initialization and the schedule's rng.
  std::uint64_t seed = 0;
  DataConfig data;
  ToyModelConfig model;
  TrainingSchedule schedule;
  double bleu_epsilon = 0.0;

  /// Throws ParameterError when parts disagree (e.g. dimensions).
  void validate() const;
};

/// Desk-scale defaults: the toy dataset of 200 labeled + 800 unlabeled items
/// and a small MLP mapper over the toy language model.
RunConfig toy_run_config();

nlohmann::json to_json(const RunConfig& config);
/// Missing keys take the toy defaults; unknown keys are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);

std::string canonical_json(const RunConfig& config);
RunConfig parse_run_config(std::string_view text);
RunConfig read_run_config(const std::filesystem::path& path);
/// hex FNV-1a 64 of canonical_json.
std::string config_digest(const RunConfig& config);

/// Schedule with seed taken from config.seed.
TrainingSchedule effective_schedule(const RunConfig& config);
/// Model as configured, seeded from config.seed.
CaptionModel build_model(const RunConfig& config);
ToyBackendSpec toy_backend_spec(const DataConfig& data);

}  // namespace sslcap
