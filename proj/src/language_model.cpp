// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "sslcap/captioner.hpp"
#include "sslcap/error.hpp"

namespace sslcap {

ad::Var LanguageModel::token_embedding(ad::Tape& tape, TokenId token) const {
  if (token < 0 || static_cast<std::size_t>(token) >= vocabulary_size()) {
    throw VocabularyError("token id " + std::to_string(token) + " outside vocabulary of size " +
                          std::to_string(vocabulary_size()));
  }
  return ad::rows(token_embeddings(tape), token, 1);
}

ad::Var LanguageModel::logits_all(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const {
  const auto k = static_cast<Eigen::Index>(prefix_length);
  std::vector<ad::Var> out;
  for (Eigen::Index n = k; n <= sequence.rows(); ++n) {
    out.push_back(logits(tape, ad::rows(sequence, 0, n), prefix_length));
  }
  return ad::vstack(out);
}

namespace {

ad::Parameter seeded(std::string name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  ad::Parameter p{std::move(name), ad::Matrix(rows, cols), true};
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = stddev * rng.normal();
  ad::round_to_f32(p.value);
  return p;
}

void check_sequence(const ad::Var& sequence, std::size_t prefix_length, std::size_t lm_dim) {
  if (static_cast<std::size_t>(sequence.cols()) != lm_dim) {
    throw ShapeError("language model expects rows of width " + std::to_string(lm_dim));
  }
  if (prefix_length < 1 || static_cast<std::size_t>(sequence.rows()) < prefix_length) {
    throw ShapeError("sequence shorter than its prefix");
  }
}

}  // namespace

ToyLanguageModel::ToyLanguageModel(const ToyLanguageModelConfig& config) : config_(config) {
  if (config.vocabulary_size < 2) throw ParameterError("toy LM: vocabulary_size must be >= 2");
  if (config.lm_dim < 1 || config.hidden < 1) throw ParameterError("toy LM: dimensions must be >= 1");
  Rng rng(config.seed);
  const auto v = static_cast<Eigen::Index>(config.vocabulary_size);
  const auto d = static_cast<Eigen::Index>(config.lm_dim);
  const auto h = static_cast<Eigen::Index>(config.hidden);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  embedding_ = seeded("lm.token_embedding", v, d, 1.0, rng);
  prefix_proj_ = seeded("lm.prefix_proj", d, h, sd, rng);
  token_proj_ = seeded("lm.token_proj", d, h, sd, rng);
  hidden_bias_ = ad::Parameter{"lm.hidden_bias", ad::Matrix::Zero(1, h), true};
  out_proj_ = seeded("lm.out_proj", h, v, 1.0 / std::sqrt(static_cast<double>(h)), rng);
  out_bias_ = ad::Parameter{"lm.out_bias", ad::Matrix::Zero(1, v), true};
}

ad::Var ToyLanguageModel::token_embeddings(ad::Tape& tape) const { return tape.parameter(embedding_); }

ad::Var ToyLanguageModel::logits(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const {
  check_sequence(sequence, prefix_length, config_.lm_dim);
  const auto k = static_cast<Eigen::Index>(prefix_length);
  ad::Var pre = ad::matmul(ad::sum_rows(ad::rows(sequence, 0, k)), tape.parameter(prefix_proj_));
  if (sequence.rows() > k) {
    const ad::Var toks = ad::sum_rows(ad::rows(sequence, k, sequence.rows() - k));
    pre = ad::add(pre, ad::matmul(toks, tape.parameter(token_proj_)));
  }
  const ad::Var h = ad::tanh(ad::add(pre, tape.parameter(hidden_bias_)));
  return ad::add(ad::matmul(h, tape.parameter(out_proj_)), tape.parameter(out_bias_));
}

ad::Var ToyLanguageModel::logits_all(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const {
  check_sequence(sequence, prefix_length, config_.lm_dim);
  const auto k = static_cast<Eigen::Index>(prefix_length);
  const Eigen::Index m = sequence.rows() - k;  // token rows
  const ad::Var pre = ad::matmul(ad::sum_rows(ad::rows(sequence, 0, k)), tape.parameter(prefix_proj_));
  ad::Var stacked = ad::vstack(std::vector<ad::Var>(static_cast<std::size_t>(m + 1), pre));
  if (m > 0) {
    // Row r of `prefix_sums` is the sum of the first r token rows.
    ad::Matrix lower = ad::Matrix::Zero(m + 1, m);
    for (Eigen::Index r = 1; r <= m; ++r) lower.row(r).head(r).setOnes();
    const ad::Var prefix_sums = ad::matmul(tape.constant(std::move(lower)), ad::rows(sequence, k, m));
    stacked = ad::add(stacked, ad::matmul(prefix_sums, tape.parameter(token_proj_)));
  }
  const ad::Var h = ad::tanh(ad::add_row(stacked, tape.parameter(hidden_bias_)));
  return ad::add_row(ad::matmul(h, tape.parameter(out_proj_)), tape.parameter(out_bias_));
}

std::vector<ad::Parameter*> ToyLanguageModel::parameters() {
  return {&embedding_, &prefix_proj_, &token_proj_, &hidden_bias_, &out_proj_, &out_bias_};
}

}  // namespace sslcap
