// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Checkpoint container:
//
//   "SSLCKPT1" | u32 header_len | header JSON |
//   u32 group_count | groups: [u16 name_len | name | u32 count | count x f32]
//
// Little-endian throughout; group values are row-major. The header is
// compact JSON with sorted keys, so equal checkpoints encode to equal bytes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "sslcap/autograd.hpp"
#include "sslcap/captioner.hpp"

namespace sslcap {

inline constexpr int kCheckpointVersion = 1;

struct ParameterGroup {
  std::string name;
  std::vector<float> values;
  bool operator==(const ParameterGroup&) const = default;
};

struct Checkpoint {
  int version = kCheckpointVersion;
  std::string config_digest;
  /// Next stage to run and the number of its epochs already completed.
  std::size_t stage_index = 0;
  std::size_t epoch = 0;
  std::string rng_state;
  std::size_t supervised_epochs = 0;
  std::size_t optimizer_steps = 0;
  std::size_t optimizer_warmup = 0;
  /// "supervised" / "unsupervised", or empty before any stage ran.
  std::string optimizer_kind;
  std::vector<ParameterGroup> groups;

  bool operator==(const Checkpoint&) const = default;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws FormatError on bad magic, truncation, trailing bytes or a bad
/// header; CompatibilityError on an unknown version.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Row-major f32 copy. Throws ParameterError if a value is not exactly
/// representable in f32.
ParameterGroup make_group(const std::string& name, const ad::Matrix& value);
/// Writes a group back into `value` (shape kept). Throws CompatibilityError
/// on a size mismatch.
void restore_group(const ParameterGroup& group, ad::Matrix& value);
const ParameterGroup* find_group(const Checkpoint& ckpt, const std::string& name);

/// Every model parameter as a group, in CaptionModel::parameters() order.
std::vector<ParameterGroup> model_groups(const CaptionModel& model);
/// Restores every parameter. Throws CompatibilityError for a missing group.
void restore_model(CaptionModel& model, const Checkpoint& ckpt);

}  // namespace sslcap
