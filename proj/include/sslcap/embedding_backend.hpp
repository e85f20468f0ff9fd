// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Frozen joint image/text embedding backends.
//
// Two realizations ship here: a seeded bag-of-tokens toy encoder whose
// optimum is known in closed form, and a read-only adapter over a binary
// cache of precomputed embeddings (produced out of process by a real
// encoder such as CLIP ViT-B/32, dim 512).

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "sslcap/autograd.hpp"

namespace sslcap {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

inline constexpr std::size_t kClipEmbeddingDim = 512;

class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  /// Throws ShapeError on an empty vector or non-finite entries.
  explicit EmbeddingVector(Eigen::VectorXd values);

  const Eigen::VectorXd& values() const { return values_; }
  std::size_t dim() const { return static_cast<std::size_t>(values_.size()); }
  /// 1 x d copy, the layout used on a Tape.
  ad::Matrix as_row() const { return values_.transpose(); }

  bool operator==(const EmbeddingVector& other) const { return values_ == other.values_; }

 private:
  Eigen::VectorXd values_;
};

/// dot(a, b) / (|a| |b|). Throws ShapeError on dimension mismatch and
/// DegenerateVectorError on a zero vector.
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct BackendDescriptor {
  std::string name;
  std::size_t dim = 0;
  std::size_t vocabulary_size = 0;
  bool differentiable_text = false;
};

/// How a manifest names an image: `id` is the manifest key, `source` is
/// backend-specific (a toy bag spec such as "toy:3,7,12", or a file path).
struct ImageRef {
  std::string id;
  std::string source;
};

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;

  virtual const BackendDescriptor& descriptor() const = 0;
  virtual EmbeddingVector encode_image(const ImageRef& image) const = 0;
  virtual EmbeddingVector encode_text(std::span<const TokenId> tokens) const = 0;

  /// Soft rows are 1 x vocabulary_size probability vectors recorded on the
  /// same tape; the result is 1 x dim. Base implementation throws
  /// CapabilityError.
  virtual ad::Var encode_text_soft(ad::Tape& tape, std::span<const ad::Var> rows) const;

  /// Value-only convenience over the tape version; `rows` is n x V.
  EmbeddingVector encode_text_soft(const ad::Matrix& rows) const;
};

// ---- toy backend -----------------------------------------------------------

struct ToyBackendSpec {
  std::uint64_t seed = 0;
  std::size_t dim = 32;
  std::size_t vocabulary_size = 16;
  double noise_scale = 0.0;
  /// Tokens from the first end marker onward are ignored by encode_text,
  /// and the marker carries no weight in encode_text_soft. Negative: no
  /// end marker.
  TokenId end_token = 0;
};

/// Parses "toy:3,7,12" into its token multiset. Throws FormatError.
TokenSequence parse_toy_image_source(const std::string& source);
std::string format_toy_image_source(std::span<const TokenId> bag);

/// Token table entries are i.i.d. N(0, 1) drawn row-major from
/// Rng(spec.seed). An image with bag B encodes to
/// normalize(sum_{t in B} E[t] + noise_scale * z), with z ~ N(0, I) drawn
/// from Rng(spec.seed ^ fnv1a64(image id)), rounded to f32. Text encodes to
/// normalize(sum_t E[t]); soft rows replace E[t] with p * E', where E' is
/// E with the end marker's row zeroed.
class ToyBackend final : public EmbeddingBackend {
 public:
  explicit ToyBackend(const ToyBackendSpec& spec);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  const ToyBackendSpec& spec() const { return spec_; }
  const ad::Matrix& token_table() const { return table_; }

  EmbeddingVector encode_image(const ImageRef& image) const override;
  EmbeddingVector encode_bag(std::span<const TokenId> bag, const std::string& image_id) const;
  EmbeddingVector encode_text(std::span<const TokenId> tokens) const override;
  ad::Var encode_text_soft(ad::Tape& tape, std::span<const ad::Var> rows) const override;
  using EmbeddingBackend::encode_text_soft;

 private:
  ToyBackendSpec spec_;
  BackendDescriptor descriptor_;
  ad::Matrix table_;       // V x dim
  ad::Matrix soft_table_;  // table_ with the end marker's row zeroed
};

/// Builds the toy token table exactly as ToyBackend does.
ad::Matrix make_toy_token_table(std::uint64_t seed, std::size_t vocabulary_size, std::size_t dim);

// ---- embedding cache -------------------------------------------------------

/// In-memory form of the binary cache file:
///   "SSLCAP01" | u32 dim | u32 count | count x [u16 id_len | id | dim x f32]
/// All integers and floats little-endian.
struct EmbeddingCache {
  std::size_t dim = 0;
  std::vector<std::pair<std::string, std::vector<float>>> entries;
};

void write_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache);
/// Throws FormatError on bad magic, truncation, or trailing bytes.
EmbeddingCache read_embedding_cache(const std::filesystem::path& path);

/// Read-only adapter over a cache file. Text lookups use keys of the form
/// "text:<space-joined token ids>" when such entries were precomputed.
class CacheBackend final : public EmbeddingBackend {
 public:
  CacheBackend(const EmbeddingCache& cache, std::size_t vocabulary_size, std::string name = "cache");
  /// Throws FormatError if `expected_dim` is given and differs from the file.
  static CacheBackend open(const std::filesystem::path& path, std::size_t vocabulary_size,
                           std::optional<std::size_t> expected_dim = std::nullopt);

  const BackendDescriptor& descriptor() const override { return descriptor_; }
  EmbeddingVector encode_image(const ImageRef& image) const override;
  EmbeddingVector encode_text(std::span<const TokenId> tokens) const override;
  bool contains(const std::string& id) const { return table_.count(id) != 0; }

  static std::string text_key(std::span<const TokenId> tokens);

 private:
  BackendDescriptor descriptor_;
  std::map<std::string, EmbeddingVector, std::less<>> table_;
};

}  // namespace sslcap
