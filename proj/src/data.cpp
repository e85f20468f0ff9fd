// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/data.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdint>
#include <numeric>
#include <set>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "sslcap/error.hpp"
#include "sslcap/rng.hpp"

namespace sslcap {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "val") return Split::val;
  if (text == "test") return Split::test;
  throw FormatError("unknown split '" + std::string(text) + "'");
}

std::size_t DatasetManifest::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const CaptionRecord& r) { return !r.captions.empty(); }));
}

void DatasetManifest::validate() const {
  std::unordered_set<std::string> seen;
  for (const CaptionRecord& r : records) {
    if (!seen.insert(r.image_id).second) throw ManifestError("duplicate image id '" + r.image_id + "'");
  }
}

namespace {

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": malformed JSON", e.byte);
  }
}

std::string id_text(const json& id) {
  if (id.is_number_integer()) return std::to_string(id.get<std::int64_t>());
  if (id.is_string()) return id.get<std::string>();
  throw FormatError("image id must be an integer or a string");
}

/// Numeric ids sort numerically ahead of non-numeric ones, which sort as text.
bool id_less(const std::string& a, const std::string& b) {
  std::int64_t va = 0;
  std::int64_t vb = 0;
  const bool na = std::from_chars(a.data(), a.data() + a.size(), va).ptr == a.data() + a.size() && !a.empty();
  const bool nb = std::from_chars(b.data(), b.data() + b.size(), vb).ptr == b.data() + b.size() && !b.empty();
  if (na && nb) return va < vb;
  if (na != nb) return na;
  return a < b;
}

}  // namespace

DatasetManifest parse_coco_manifest(std::string_view json_text) {
  const json doc = parse_json(json_text, "COCO annotations");
  DatasetManifest manifest;
  manifest.backend = "cache";
  try {
    if (!doc.is_object()) throw FormatError("COCO annotations: top level must be an object");
    std::map<std::string, std::size_t> index;
    for (const json& img : doc.at("images")) {
      CaptionRecord rec;
      rec.image_id = id_text(img.at("id"));
      rec.image_ref = img.value("file_name", std::string());
      if (img.contains("split")) rec.split = parse_split(img.at("split").get<std::string>());
      if (index.count(rec.image_id) != 0) throw ManifestError("duplicate image id '" + rec.image_id + "'");
      index.emplace(rec.image_id, manifest.records.size());
      manifest.records.push_back(std::move(rec));
    }
    std::set<std::string, decltype(&id_less)> dangling(&id_less);
    if (doc.contains("annotations")) {
      for (const json& ann : doc.at("annotations")) {
        const std::string id = id_text(ann.at("image_id"));
        auto it = index.find(id);
        if (it == index.end()) {
          dangling.insert(id);
          continue;
        }
        manifest.records[it->second].captions.push_back(ann.at("caption").get<std::string>());
      }
    }
    if (!dangling.empty()) throw DanglingReferenceError(std::vector<std::string>(dangling.begin(), dangling.end()));
  } catch (const json::exception& e) {
    throw FormatError(std::string("COCO annotations: ") + e.what());
  }
  std::stable_sort(manifest.records.begin(), manifest.records.end(),
                   [](const CaptionRecord& a, const CaptionRecord& b) { return id_less(a.image_id, b.image_id); });
  return manifest;
}

DatasetManifest load_coco_manifest(const std::filesystem::path& path) {
  return parse_coco_manifest(detail::read_file(path));
}

std::vector<std::size_t> sample_indices(std::size_t m, std::size_t n, std::uint64_t seed) {
  if (n > m) throw ParameterError("cannot sample " + std::to_string(n) + " of " + std::to_string(m));
  std::vector<std::size_t> c(m);
  std::iota(c.begin(), c.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) std::swap(c[i], c[i + rng.uniform_index(m - i)]);
  c.resize(n);
  std::sort(c.begin(), c.end());
  return c;
}

LabeledSplit split_labeled(const DatasetManifest& manifest, std::size_t n_labeled, std::uint64_t seed) {
  manifest.validate();
  std::vector<std::size_t> captioned;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    if (!manifest.records[i].captions.empty()) captioned.push_back(i);
  }
  if (n_labeled > captioned.size()) {
    throw ParameterError("requested " + std::to_string(n_labeled) + " labeled records but only " +
                         std::to_string(captioned.size()) + " have captions");
  }
  std::vector<bool> chosen(manifest.records.size(), false);
  for (std::size_t k : sample_indices(captioned.size(), n_labeled, seed)) chosen[captioned[k]] = true;

  LabeledSplit out;
  out.labeled.backend = manifest.backend;
  out.unlabeled.backend = manifest.backend;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const CaptionRecord& rec = manifest.records[i];
    if (chosen[i]) {
      out.labeled.records.push_back(rec);
      continue;
    }
    CaptionRecord stripped = rec;
    if (!stripped.captions.empty()) out.references.captions.emplace(rec.image_id, std::move(stripped.captions));
    stripped.captions.clear();
    out.unlabeled.records.push_back(std::move(stripped));
  }
  return out;
}

void ToyDatasetSpec::validate() const {
  if (vocabulary_size < 4) throw ParameterError("toy dataset: vocabulary_size must be >= 4");
  if (item_count < 1) throw ParameterError("toy dataset: item_count must be >= 1");
  if (end_token < 0 || static_cast<std::size_t>(end_token) >= vocabulary_size) {
    throw ParameterError("toy dataset: end_token outside the vocabulary");
  }
  if (bag_min < 1 || bag_min > bag_max) throw ParameterError("toy dataset: bag size range must satisfy 1 <= min <= max");
  if (bag_max > vocabulary_size - 1) {
    throw ParameterError("toy dataset: bag_max exceeds the number of non-end tokens");
  }
  if ((caption_min == 0) != (caption_max == 0)) {
    throw ParameterError("toy dataset: caption length range must be both zero (whole bag) or both positive");
  }
  if (caption_min > caption_max) throw ParameterError("toy dataset: caption_min > caption_max");
  if (caption_min > bag_min) throw ParameterError("toy dataset: caption_min exceeds the smallest bag");
  if (references_min < 1 || references_min > references_max) {
    throw ParameterError("toy dataset: reference count range must satisfy 1 <= min <= max");
  }
  if (embedding_dim < 1) throw ParameterError("toy dataset: embedding_dim must be >= 1");
  if (!(noise_scale >= 0.0)) throw ParameterError("toy dataset: noise_scale must be >= 0");
}

namespace {

std::size_t draw_in_range(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.uniform_index(hi - lo + 1); }

/// Fisher-Yates from the back, the conventional full shuffle.
template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[rng.uniform_index(i)]);
}

}  // namespace

ToyDataset generate_toy_dataset(const ToyDatasetSpec& spec) {
  spec.validate();
  std::vector<TokenId> alphabet;
  for (std::size_t t = 0; t < spec.vocabulary_size; ++t) {
    if (static_cast<TokenId>(t) != spec.end_token) alphabet.push_back(static_cast<TokenId>(t));
  }
  Rng rng(spec.seed);
  ToyDataset out;
  out.manifest.backend = "toy";
  out.backend = ToyBackendSpec{spec.seed, spec.embedding_dim, spec.vocabulary_size, spec.noise_scale, spec.end_token};
  for (std::size_t i = 0; i < spec.item_count; ++i) {
    const std::size_t bag_size = draw_in_range(rng, spec.bag_min, spec.bag_max);
    std::vector<TokenId> pool = alphabet;
    for (std::size_t b = 0; b < bag_size; ++b) std::swap(pool[b], pool[b + rng.uniform_index(pool.size() - b)]);
    TokenSequence bag(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(bag_size));
    std::sort(bag.begin(), bag.end());

    CaptionRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "toy-%05zu", i);
    rec.image_id = id;
    rec.image_ref = format_toy_image_source(bag);
    const std::size_t refs = draw_in_range(rng, spec.references_min, spec.references_max);
    for (std::size_t r = 0; r < refs; ++r) {
      const std::size_t len =
          spec.caption_max == 0 ? bag_size : draw_in_range(rng, spec.caption_min, std::min(spec.caption_max, bag_size));
      TokenSequence cap = bag;
      shuffle(cap, rng);
      cap.resize(len);
      std::string text;
      for (std::size_t k = 0; k < cap.size(); ++k) text += (k ? " " : "") + std::to_string(cap[k]);
      rec.captions.push_back(std::move(text));
    }
    out.manifest.records.push_back(std::move(rec));
  }
  return out;
}

TokenSequence parse_token_caption(std::string_view text) {
  TokenSequence out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == ' ') {
      ++i;
      continue;
    }
    std::int64_t v = 0;
    const auto res = std::from_chars(text.data() + i, text.data() + text.size(), v);
    if (res.ec != std::errc() || v < 0 || v > INT32_MAX || (res.ptr != text.data() + text.size() && *res.ptr != ' ')) {
      throw FormatError("caption '" + std::string(text) + "' is not a list of token ids");
    }
    out.push_back(static_cast<TokenId>(v));
    i = static_cast<std::size_t>(res.ptr - text.data());
  }
  return out;
}

CacheBuildResult build_embedding_cache(const DatasetManifest& manifest, const EmbeddingBackend& backend,
                                       const std::filesystem::path& path) {
  CacheBuildResult result;
  EmbeddingCache cache;
  cache.dim = backend.descriptor().dim;
  for (const CaptionRecord& rec : manifest.records) {
    try {
      const EmbeddingVector v = backend.encode_image(rec.image());
      std::vector<float> values(v.dim());
      for (std::size_t j = 0; j < v.dim(); ++j) values[j] = static_cast<float>(v.values()(static_cast<Eigen::Index>(j)));
      cache.entries.emplace_back(rec.image_id, std::move(values));
    } catch (const Error& e) {
      result.errors.emplace_back(rec.image_id, e.what());
    }
  }
  write_embedding_cache(path, cache);
  result.written = cache.entries.size();
  return result;
}

std::string manifest_to_json(const DatasetManifest& manifest) {
  ordered_json doc;
  doc["backend"] = manifest.backend;
  ordered_json records = ordered_json::array();
  for (const CaptionRecord& r : manifest.records) {
    records.push_back({{"image_id", r.image_id},
                       {"image_ref", r.image_ref},
                       {"split", std::string(to_string(r.split))},
                       {"captions", r.captions}});
  }
  doc["records"] = std::move(records);
  return doc.dump(2) + "\n";
}

DatasetManifest manifest_from_json(std::string_view json_text) {
  const json doc = parse_json(json_text, "manifest");
  DatasetManifest m;
  try {
    m.backend = doc.at("backend").get<std::string>();
    for (const json& r : doc.at("records")) {
      CaptionRecord rec;
      rec.image_id = r.at("image_id").get<std::string>();
      rec.image_ref = r.at("image_ref").get<std::string>();
      rec.split = parse_split(r.at("split").get<std::string>());
      rec.captions = r.at("captions").get<std::vector<std::string>>();
      m.records.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  m.validate();
  return m;
}

DatasetManifest read_manifest(const std::filesystem::path& path) { return manifest_from_json(detail::read_file(path)); }

std::string references_to_json(const SealedReferences& refs) {
  ordered_json doc = ordered_json::object();
  for (const auto& [id, caps] : refs.captions) doc[id] = caps;
  return doc.dump(2) + "\n";
}

SealedReferences references_from_json(std::string_view json_text) {
  const json doc = parse_json(json_text, "references");
  SealedReferences refs;
  try {
    for (const auto& [id, caps] : doc.items()) refs.captions.emplace(id, caps.get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    throw FormatError(std::string("references: ") + e.what());
  }
  return refs;
}

std::string split_snapshot_json(const LabeledSplit& split, std::size_t n_labeled, std::uint64_t seed) {
  ordered_json doc;
  doc["seed"] = seed;
  doc["n_labeled"] = n_labeled;
  ordered_json lab = ordered_json::array();
  for (const CaptionRecord& r : split.labeled.records) lab.push_back(r.image_id);
  ordered_json unl = ordered_json::array();
  for (const CaptionRecord& r : split.unlabeled.records) unl.push_back(r.image_id);
  doc["labeled"] = std::move(lab);
  doc["unlabeled"] = std::move(unl);
  return doc.dump(2) + "\n";
}

}  // namespace sslcap
