// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/embedding_backend.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>

#include "binary_io.hpp"
#include "sslcap/error.hpp"
#include "sslcap/rng.hpp"

namespace sslcap {

EmbeddingVector::EmbeddingVector(Eigen::VectorXd values) : values_(std::move(values)) {
  if (values_.size() == 0) throw ShapeError("embedding vector must have dimension >= 1");
  if (!values_.allFinite()) throw ShapeError("embedding vector has non-finite entries");
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw ShapeError("cosine_similarity: dimensions " + std::to_string(a.dim()) + " and " +
                     std::to_string(b.dim()));
  }
  const double na = a.values().norm();
  const double nb = b.values().norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateVectorError("cosine_similarity: zero-norm vector");
  const double c = a.values().dot(b.values()) / (na * nb);
  return std::clamp(c, -1.0, 1.0);
}

ad::Var EmbeddingBackend::encode_text_soft(ad::Tape&, std::span<const ad::Var>) const {
  throw CapabilityError("backend '" + descriptor().name + "' cannot encode soft token rows");
}

EmbeddingVector EmbeddingBackend::encode_text_soft(const ad::Matrix& rows) const {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  vars.reserve(static_cast<std::size_t>(rows.rows()));
  for (Eigen::Index r = 0; r < rows.rows(); ++r) vars.push_back(tape.constant(rows.row(r)));
  const ad::Var out = encode_text_soft(tape, vars);
  return EmbeddingVector(out.value().row(0).transpose());
}

// ---- toy backend -----------------------------------------------------------

ad::Matrix make_toy_token_table(std::uint64_t seed, std::size_t vocabulary_size, std::size_t dim) {
  Rng rng(seed);
  ad::Matrix table(static_cast<Eigen::Index>(vocabulary_size), static_cast<Eigen::Index>(dim));
  for (Eigen::Index v = 0; v < table.rows(); ++v) {
    for (Eigen::Index j = 0; j < table.cols(); ++j) table(v, j) = rng.normal();
  }
  return table;
}

TokenSequence parse_toy_image_source(const std::string& source) {
  constexpr std::string_view kPrefix = "toy:";
  if (source.rfind(kPrefix, 0) != 0) throw FormatError("not a toy image source: '" + source + "'");
  TokenSequence bag;
  const char* p = source.data() + kPrefix.size();
  const char* end = source.data() + source.size();
  while (p < end) {
    TokenId t = 0;
    auto [next, ec] = std::from_chars(p, end, t);
    if (ec != std::errc() || next == p) throw FormatError("malformed toy image source: '" + source + "'");
    bag.push_back(t);
    p = next;
    if (p < end) {
      if (*p != ',') throw FormatError("malformed toy image source: '" + source + "'");
      ++p;
    }
  }
  if (bag.empty()) throw FormatError("toy image source has an empty bag: '" + source + "'");
  return bag;
}

std::string format_toy_image_source(std::span<const TokenId> bag) {
  std::string out = "toy:";
  for (std::size_t i = 0; i < bag.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(bag[i]);
  }
  return out;
}

ToyBackend::ToyBackend(const ToyBackendSpec& spec) : spec_(spec) {
  if (spec.dim < 1) throw ParameterError("toy backend: dim must be >= 1");
  if (spec.vocabulary_size < 2) throw ParameterError("toy backend: vocabulary_size must be >= 2");
  if (!(spec.noise_scale >= 0.0)) throw ParameterError("toy backend: noise_scale must be >= 0");
  descriptor_ = BackendDescriptor{"toy", spec.dim, spec.vocabulary_size, true};
  table_ = make_toy_token_table(spec.seed, spec.vocabulary_size, spec.dim);
  // Hard encoding stops at the end marker and never adds its row, so the
  // mixture gives the marker no content either.
  soft_table_ = table_;
  if (spec.end_token >= 0 && static_cast<std::size_t>(spec.end_token) < spec.vocabulary_size) {
    soft_table_.row(spec.end_token).setZero();
  }
}

namespace {

void check_token(TokenId t, std::size_t vocabulary_size) {
  if (t < 0 || static_cast<std::size_t>(t) >= vocabulary_size) {
    throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of size " +
                          std::to_string(vocabulary_size));
  }
}

}  // namespace

EmbeddingVector ToyBackend::encode_bag(std::span<const TokenId> bag, const std::string& image_id) const {
  if (bag.empty()) throw EmptyCaptionError("toy image '" + image_id + "' has an empty bag");
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(table_.cols());
  for (TokenId t : bag) {
    check_token(t, spec_.vocabulary_size);
    acc += table_.row(t);
  }
  if (spec_.noise_scale > 0.0) {
    Rng rng(spec_.seed ^ fnv1a64(image_id));
    for (Eigen::Index j = 0; j < acc.size(); ++j) acc(j) += spec_.noise_scale * rng.normal();
  }
  const double norm = acc.norm();
  if (!(norm > 0.0)) throw DegenerateVectorError("toy image '" + image_id + "' encodes to zero");
  // Image features are f32, as a cached real encoder's would be.
  Eigen::VectorXd out = (acc / norm).transpose();
  for (Eigen::Index j = 0; j < out.size(); ++j) out(j) = static_cast<double>(static_cast<float>(out(j)));
  return EmbeddingVector(std::move(out));
}

EmbeddingVector ToyBackend::encode_image(const ImageRef& image) const {
  TokenSequence bag;
  try {
    bag = parse_toy_image_source(image.source);
  } catch (const FormatError&) {
    throw MissingEmbeddingError(image.id);
  }
  return encode_bag(bag, image.id);
}

EmbeddingVector ToyBackend::encode_text(std::span<const TokenId> tokens) const {
  Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(table_.cols());
  std::size_t used = 0;
  for (TokenId t : tokens) {
    if (t == spec_.end_token) break;
    check_token(t, spec_.vocabulary_size);
    acc += table_.row(t);
    ++used;
  }
  if (used == 0) throw EmptyCaptionError("cannot encode an empty caption");
  const double norm = acc.norm();
  if (!(norm > 0.0)) throw DegenerateVectorError("caption encodes to the zero vector");
  return EmbeddingVector((acc / norm).transpose());
}

ad::Var ToyBackend::encode_text_soft(ad::Tape& tape, std::span<const ad::Var> rows) const {
  if (rows.empty()) throw EmptyCaptionError("cannot encode an empty soft caption");
  const auto v = static_cast<Eigen::Index>(spec_.vocabulary_size);
  for (const auto& r : rows) {
    if (r.rows() != 1 || r.cols() != v) throw ShapeError("soft token row must be 1 x vocabulary_size");
  }
  // sum_j (p_j E) == (sum_j p_j) E; mixing before aggregation is linear.
  const ad::Var mass = ad::sum_rows(ad::vstack({rows.begin(), rows.end()}));
  const ad::Var mixed = ad::matmul(mass, tape.constant(soft_table_));
  return ad::l2_normalize(mixed);
}

// ---- cache file ------------------------------------------------------------

namespace {

using detail::put_f32;
using detail::put_u16;
using detail::put_u32;

constexpr std::array<char, 8> kCacheMagic = {'S', 'S', 'L', 'C', 'A', 'P', '0', '1'};

}  // namespace

void write_embedding_cache(const std::filesystem::path& path, const EmbeddingCache& cache) {
  std::string out(kCacheMagic.begin(), kCacheMagic.end());
  put_u32(out, static_cast<std::uint32_t>(cache.dim));
  put_u32(out, static_cast<std::uint32_t>(cache.entries.size()));
  for (const auto& [id, values] : cache.entries) {
    if (id.size() > 0xFFFF) throw FormatError("cache id longer than 65535 bytes");
    if (values.size() != cache.dim) throw FormatError("cache entry '" + id + "' has the wrong dimension");
    put_u16(out, static_cast<std::uint16_t>(id.size()));
    out += id;
    for (float f : values) put_f32(out, f);
  }
  detail::write_file(path, out);
}

EmbeddingCache read_embedding_cache(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path);
  detail::ByteReader in(bytes, "embedding cache");
  const std::string magic = in.str(kCacheMagic.size(), "magic");
  if (!std::equal(magic.begin(), magic.end(), kCacheMagic.begin())) {
    throw FormatError("'" + path.string() + "' is not an embedding cache (bad magic)");
  }
  EmbeddingCache cache;
  cache.dim = in.u32("header");
  const std::uint32_t count = in.u32("header");
  cache.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t len = in.u16("record id length");
    std::string id = in.str(len, "record id");
    std::vector<float> values(cache.dim);
    for (auto& f : values) f = in.f32("record values");
    cache.entries.emplace_back(std::move(id), std::move(values));
  }
  if (!in.done()) throw FormatError("embedding cache has trailing bytes");
  return cache;
}

CacheBackend::CacheBackend(const EmbeddingCache& cache, std::size_t vocabulary_size, std::string name) {
  if (cache.dim < 1) throw FormatError("embedding cache dimension must be >= 1");
  descriptor_ = BackendDescriptor{std::move(name), cache.dim, vocabulary_size, false};
  for (const auto& [id, values] : cache.entries) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
    for (std::size_t j = 0; j < values.size(); ++j) v(static_cast<Eigen::Index>(j)) = values[j];
    table_.insert_or_assign(id, EmbeddingVector(std::move(v)));
  }
}

CacheBackend CacheBackend::open(const std::filesystem::path& path, std::size_t vocabulary_size,
                                std::optional<std::size_t> expected_dim) {
  EmbeddingCache cache = read_embedding_cache(path);
  if (expected_dim && cache.dim != *expected_dim) {
    throw FormatError("embedding cache dimension " + std::to_string(cache.dim) + " does not match expected " +
                      std::to_string(*expected_dim));
  }
  return CacheBackend(cache, vocabulary_size);
}

EmbeddingVector CacheBackend::encode_image(const ImageRef& image) const {
  auto it = table_.find(image.id);
  if (it == table_.end()) throw MissingEmbeddingError(image.id);
  return it->second;
}

std::string CacheBackend::text_key(std::span<const TokenId> tokens) {
  std::string key = "text:";
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) key += ' ';
    key += std::to_string(tokens[i]);
  }
  return key;
}

EmbeddingVector CacheBackend::encode_text(std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw EmptyCaptionError("cannot encode an empty caption");
  for (TokenId t : tokens) check_token(t, descriptor_.vocabulary_size);
  const std::string key = text_key(tokens);
  auto it = table_.find(key);
  if (it == table_.end()) throw MissingEmbeddingError(key);
  return it->second;
}

}  // namespace sslcap
