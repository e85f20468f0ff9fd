// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Dataset manifests, the labeled/unlabeled split, the toy dataset generator
// and embedding-cache building.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sslcap/embedding_backend.hpp"

namespace sslcap {

enum class Split { train, val, test };
std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct CaptionRecord {
  std::string image_id;
  /// File path, or a toy bag such as "toy:3,7,12".
  std::string image_ref;
  std::vector<std::string> captions;
  Split split = Split::train;

  ImageRef image() const { return ImageRef{image_id, image_ref}; }
  bool operator==(const CaptionRecord&) const = default;
};

struct DatasetManifest {
  std::vector<CaptionRecord> records;
  /// Name of the backend the image refs are meant for ("toy", "cache", ...).
  std::string backend;

  std::size_t labeled_count() const;
  /// Throws ManifestError on a duplicate image id.
  void validate() const;
  bool operator==(const DatasetManifest&) const = default;
};

/// Reference captions of the unlabeled pool, kept out of the training path
/// and consulted only by evaluation.
struct SealedReferences {
  std::map<std::string, std::vector<std::string>> captions;
  bool operator==(const SealedReferences&) const = default;
};

struct LabeledSplit {
  DatasetManifest labeled;
  DatasetManifest unlabeled;
  SealedReferences references;
};

/// COCO-captions annotation JSON: images[] {id, file_name[, split]} and
/// annotations[] {image_id, caption}. Records come out in ascending numeric
/// image id; captions keep file order. Throws ParseError (with byte offset)
/// on malformed JSON, FormatError on a wrong shape and DanglingReferenceError
/// for annotations naming unknown images.
DatasetManifest parse_coco_manifest(std::string_view json_text);
DatasetManifest load_coco_manifest(const std::filesystem::path& path);

/// Uniform sample of n of the indices 0..m-1, returned ascending. With
/// Rng(seed) and c = [0, m): for i = 0..n-1 draw j = i + uniform_index(m - i)
/// and swap c_i, c_j; the first n entries are the sample.
std::vector<std::size_t> sample_indices(std::size_t m, std::size_t n, std::uint64_t seed);

/// sample_indices over the captioned records (in manifest order). Both
/// outputs keep manifest order. Every other record lands in `unlabeled` with
/// its captions moved to `references`.
LabeledSplit split_labeled(const DatasetManifest& manifest, std::size_t n_labeled, std::uint64_t seed);

struct ToyDatasetSpec {
  std::uint64_t seed = 0;
  std::size_t vocabulary_size = 16;
  std::size_t item_count = 1000;
  std::size_t bag_min = 2;
  std::size_t bag_max = 4;
  /// 0 means the caption covers the whole bag.
  std::size_t caption_min = 0;
  std::size_t caption_max = 0;
  std::size_t references_min = 5;
  std::size_t references_max = 5;
  /// Backend side.
  std::size_t embedding_dim = 32;
  double noise_scale = 0.0;
  TokenId end_token = 0;

  /// Throws ParameterError on degenerate ranges.
  void validate() const;
};

struct ToyDataset {
  DatasetManifest manifest;
  ToyBackendSpec backend;
};

/// Bags are drawn without replacement from the non-end tokens; each
/// reference is a uniformly shuffled subset of the bag of the spec's length.
/// Image ids are "toy-00000", "toy-00001", ...
ToyDataset generate_toy_dataset(const ToyDatasetSpec& spec);

/// Parses a caption written as space-separated token ids.
TokenSequence parse_token_caption(std::string_view text);

struct CacheBuildResult {
  std::size_t written = 0;
  /// (image id, message) for each image the backend could not encode.
  std::vector<std::pair<std::string, std::string>> errors;
};

/// Encodes every image in manifest order and writes the successes. The
/// output depends only on the inputs, so rebuilding is byte-identical.
CacheBuildResult build_embedding_cache(const DatasetManifest& manifest, const EmbeddingBackend& backend,
                                       const std::filesystem::path& path);

std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(std::string_view json_text);
DatasetManifest read_manifest(const std::filesystem::path& path);

std::string references_to_json(const SealedReferences& refs);
SealedReferences references_from_json(std::string_view json_text);

/// Split-membership snapshot: {seed, n_labeled, labeled: [ids], unlabeled: [ids]}.
std::string split_snapshot_json(const LabeledSplit& split, std::size_t n_labeled, std::uint64_t seed);

}  // namespace sslcap
