// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <map>

#include <nlohmann/json.hpp>

#include "binary_io.hpp"
#include "sslcap/error.hpp"

namespace sslcap {

double per_image_fraction(double g, std::span<const double> r) {
  if (r.empty()) throw ParameterError("per_image_fraction: reference similarities must be nonempty");
  if (!std::isfinite(g)) throw ParameterError("per_image_fraction: g is not finite");
  std::size_t wins = 0;
  for (double rj : r) {
    if (!std::isfinite(rj)) throw ParameterError("per_image_fraction: reference similarity is not finite");
    if (g >= rj) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(r.size());
}

double clip_score(std::span<const EvalRecord> records) {
  if (records.empty()) throw EmptyEvaluationError("clip_score: no records");
  double total = 0.0;
  for (const EvalRecord& rec : records) total += per_image_fraction(rec.g, rec.r);
  return total / static_cast<double>(records.size());
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const WordSequence& words, std::size_t n) {
  NgramCounts out;
  for (std::size_t i = 0; i + n <= words.size(); ++i) {
    ++out[std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(i),
                                   words.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

WordSequence to_words(const TokenSequence& tokens) {
  WordSequence out;
  out.reserve(tokens.size());
  for (TokenId t : tokens) out.push_back(std::to_string(t));
  return out;
}

}  // namespace

double bleu4(std::span<const WordSequence> candidates, std::span<const std::vector<WordSequence>> references,
             const BleuOptions& options) {
  if (candidates.empty()) throw EmptyEvaluationError("bleu4: empty candidate set");
  if (candidates.size() != references.size()) throw ShapeError("bleu4: one reference list per candidate required");
  if (options.epsilon < 0.0) throw ParameterError("bleu4: epsilon must be >= 0");

  std::size_t matched[4] = {0, 0, 0, 0};
  std::size_t total[4] = {0, 0, 0, 0};
  std::size_t cand_len = 0;
  std::size_t ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const WordSequence& cand = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw ParameterError("bleu4: candidate " + std::to_string(i) + " has no references");
    cand_len += cand.size();
    std::size_t best = refs.front().size();
    for (const WordSequence& ref : refs) {
      const auto diff = [&](std::size_t len) { return len > cand.size() ? len - cand.size() : cand.size() - len; };
      if (diff(ref.size()) < diff(best) || (diff(ref.size()) == diff(best) && ref.size() < best)) best = ref.size();
    }
    ref_len += best;
    for (std::size_t n = 1; n <= 4; ++n) {
      const NgramCounts cand_counts = ngrams(cand, n);
      NgramCounts max_ref;
      for (const WordSequence& ref : refs) {
        for (const auto& [gram, count] : ngrams(ref, n)) max_ref[gram] = std::max(max_ref[gram], count);
      }
      for (const auto& [gram, count] : cand_counts) {
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) matched[n - 1] += std::min(count, it->second);
        total[n - 1] += count;
      }
    }
  }
  if (cand_len == 0) return 0.0;

  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (total[n] == 0) return 0.0;
    double num = static_cast<double>(matched[n]);
    if (num == 0.0) {
      if (options.epsilon == 0.0) return 0.0;
      num = options.epsilon;
    }
    log_sum += 0.25 * std::log(num / static_cast<double>(total[n]));
  }
  const double c = static_cast<double>(cand_len);
  const double r = static_cast<double>(ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return std::clamp(bp * std::exp(log_sum), 0.0, 1.0);
}

double bleu4(std::span<const TokenSequence> candidates, std::span<const std::vector<TokenSequence>> references,
             const BleuOptions& options) {
  std::vector<WordSequence> cands;
  cands.reserve(candidates.size());
  for (const TokenSequence& c : candidates) cands.push_back(to_words(c));
  std::vector<std::vector<WordSequence>> refs;
  refs.reserve(references.size());
  for (const auto& list : references) {
    std::vector<WordSequence> words;
    for (const TokenSequence& r : list) words.push_back(to_words(r));
    refs.push_back(std::move(words));
  }
  return bleu4(std::span<const WordSequence>(cands), std::span<const std::vector<WordSequence>>(refs), options);
}

WordSequence tokenize_for_bleu(std::string_view text) {
  WordSequence out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isspace(u)) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else if (!std::ispunct(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::string format_tokens(std::span<const TokenId> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += std::to_string(tokens[i]);
  }
  return out;
}

ScoreReport score_records(std::span<const EvalRecord> records, const BleuOptions& options) {
  ScoreReport report;
  report.s_clip = clip_score(records);
  report.n = records.size();
  std::vector<WordSequence> cands;
  std::vector<std::vector<WordSequence>> refs;
  for (const EvalRecord& rec : records) {
    report.per_image.push_back(PerImageScore{rec.image_id, per_image_fraction(rec.g, rec.r), rec.g, rec.r});
    if (rec.references.empty()) {
      throw ParameterError("record '" + rec.image_id + "' has no reference captions");
    }
    cands.push_back(tokenize_for_bleu(rec.generated));
    std::vector<WordSequence> words;
    for (const std::string& r : rec.references) words.push_back(tokenize_for_bleu(r));
    refs.push_back(std::move(words));
  }
  report.bleu4 = bleu4(std::span<const WordSequence>(cands), std::span<const std::vector<WordSequence>>(refs), options);
  return report;
}

std::string evaluation_manifest_to_json(std::span<const EvalRecord> records) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const EvalRecord& rec : records) {
    nlohmann::ordered_json j;
    j["image_id"] = rec.image_id;
    j["generated"] = rec.generated;
    j["references"] = rec.references;
    j["g"] = rec.g;
    j["r"] = rec.r;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::vector<EvalRecord> evaluation_manifest_from_json(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("evaluation manifest: ") + e.what(), e.byte);
  }
  if (!doc.is_array()) throw FormatError("evaluation manifest must be a JSON array");
  std::vector<EvalRecord> out;
  try {
    for (const auto& j : doc) {
      EvalRecord rec;
      rec.image_id = j.at("image_id").get<std::string>();
      rec.generated = j.at("generated").get<std::string>();
      rec.references = j.value("references", std::vector<std::string>{});
      rec.g = j.value("g", 0.0);
      rec.r = j.value("r", std::vector<double>{});
      out.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("evaluation manifest: ") + e.what());
  }
  return out;
}

std::vector<EvalRecord> read_evaluation_manifest(const std::filesystem::path& path) {
  return evaluation_manifest_from_json(detail::read_file(path));
}

std::string score_report_to_json(const ScoreReport& report) {
  nlohmann::ordered_json j;
  j["n"] = report.n;
  j["s_clip"] = report.s_clip;
  j["bleu4"] = report.bleu4;
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const PerImageScore& p : report.per_image) {
    rows.push_back({{"image_id", p.image_id}, {"fraction", p.fraction}, {"g", p.g}, {"r", p.r}});
  }
  j["per_image"] = std::move(rows);
  return j.dump(2) + "\n";
}

std::string format_double(double value) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

std::string score_report_to_csv(const ScoreReport& report) {
  std::string out = "image_id,fraction,g,max_r\n";
  for (const PerImageScore& p : report.per_image) {
    const double max_r = p.r.empty() ? 0.0 : *std::max_element(p.r.begin(), p.r.end());
    out += p.image_id + "," + format_double(p.fraction) + "," + format_double(p.g) + "," + format_double(max_r) + "\n";
  }
  return out;
}

}  // namespace sslcap
