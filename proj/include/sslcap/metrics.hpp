// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Evaluation metrics: the reference-relative CLIP score and corpus BLEU@4.
//
//   S = (1/N) sum_i (1/M_i) sum_j [g_i >= r_ij]
//
// where g_i is the cosine between image i and its generated caption and
// r_ij the cosine between image i and reference j.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslcap/embedding_backend.hpp"

namespace sslcap {

struct EvalRecord {
  std::string image_id;
  std::string generated;
  std::vector<std::string> references;
  double g = 0.0;
  std::vector<double> r;
};

struct PerImageScore {
  std::string image_id;
  double fraction = 0.0;
  double g = 0.0;
  std::vector<double> r;
};

struct ScoreReport {
  double s_clip = 0.0;
  double bleu4 = 0.0;
  std::vector<PerImageScore> per_image;
  std::size_t n = 0;
};

/// Share of references with g >= r_j. Ties count as wins.
/// Throws ParameterError on an empty list or non-finite input.
double per_image_fraction(double g, std::span<const double> r);

/// Unweighted mean of per_image_fraction. Throws EmptyEvaluationError for N = 0.
double clip_score(std::span<const EvalRecord> records);

struct BleuOptions {
  /// 0 disables smoothing. Otherwise a zero match count at order n is
  /// replaced by epsilon.
  double epsilon = 0.0;
};

using WordSequence = std::vector<std::string>;

/// Corpus BLEU with uniform weights over orders 1-4 and the closest-length
/// brevity penalty (shorter reference wins a tie).
double bleu4(std::span<const WordSequence> candidates, std::span<const std::vector<WordSequence>> references,
             const BleuOptions& options = {});
double bleu4(std::span<const TokenSequence> candidates, std::span<const std::vector<TokenSequence>> references,
             const BleuOptions& options = {});

/// Lowercase, strip ASCII punctuation, split on whitespace.
WordSequence tokenize_for_bleu(std::string_view text);
/// Space-joined decimal ids; the textual form of toy captions.
std::string format_tokens(std::span<const TokenId> tokens);

/// Scores records; BLEU uses tokenize_for_bleu on the caption strings.
ScoreReport score_records(std::span<const EvalRecord> records, const BleuOptions& options = {});

/// JSON array of {image_id, generated, references[], g, r[]}.
std::string evaluation_manifest_to_json(std::span<const EvalRecord> records);
std::vector<EvalRecord> evaluation_manifest_from_json(std::string_view text);
std::vector<EvalRecord> read_evaluation_manifest(const std::filesystem::path& path);

std::string score_report_to_json(const ScoreReport& report);
/// Header image_id,fraction,g,max_r; one row per image.
std::string score_report_to_csv(const ScoreReport& report);

/// Shortest decimal text that round-trips to the same double.
std::string format_double(double value);

}  // namespace sslcap
