// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/captioner.hpp"

#include <algorithm>
#include <string>

#include "sslcap/error.hpp"
#include "sslcap/gumbel.hpp"

namespace sslcap {

void CaptionModelConfig::validate() const {
  mapper.validate();
  if (max_caption_length < 1) throw ParameterError("max_caption_length must be >= 1");
  if (end_token < 0) throw ParameterError("end_token must be a valid token id");
}

CaptionModel::CaptionModel(CaptionModelConfig config, std::unique_ptr<MappingNetwork> mapper,
                           std::unique_ptr<LanguageModel> lm)
    : config_(std::move(config)), mapper_(std::move(mapper)), lm_(std::move(lm)) {
  config_.validate();
  if (!mapper_ || !lm_) throw ParameterError("caption model needs a mapper and a language model");
  if (mapper_->config().lm_dim != lm_->lm_dim()) {
    throw ShapeError("mapper output width " + std::to_string(mapper_->config().lm_dim) +
                     " does not match the language model width " + std::to_string(lm_->lm_dim()));
  }
  if (static_cast<std::size_t>(config_.end_token) >= lm_->vocabulary_size()) {
    throw VocabularyError("end_token outside the language model vocabulary");
  }
  if (config_.finetune_lm && !lm_->finetunable()) {
    throw ParameterError("this language model cannot be finetuned");
  }
  for (ad::Parameter* p : lm_->parameters()) p->trainable = config_.finetune_lm;
  for (ad::Parameter* p : mapper_->parameters()) p->trainable = true;
}

std::vector<ad::Parameter*> CaptionModel::parameters() {
  std::vector<ad::Parameter*> out = mapper_->parameters();
  for (ad::Parameter* p : lm_->parameters()) out.push_back(p);
  return out;
}

std::vector<const ad::Parameter*> CaptionModel::parameters() const {
  auto* self = const_cast<CaptionModel*>(this);
  std::vector<const ad::Parameter*> out;
  for (ad::Parameter* p : self->parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> CaptionModel::trainable_parameters() {
  std::vector<ad::Parameter*> out;
  for (ad::Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

std::vector<const ad::Parameter*> CaptionModel::trainable_parameters() const {
  std::vector<const ad::Parameter*> out;
  for (const ad::Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

ad::Var CaptionModel::map_prefix(ad::Tape& tape, const EmbeddingVector& image) const {
  if (image.dim() != mapper_->config().input_dim) {
    throw ShapeError("image embedding has dimension " + std::to_string(image.dim()) + ", mapper expects " +
                     std::to_string(mapper_->config().input_dim));
  }
  return mapper_->forward(tape, tape.constant(image.as_row()));
}

PrefixEmbeddings CaptionModel::map_prefix(const EmbeddingVector& image) const {
  ad::Tape tape(false);
  return PrefixEmbeddings{map_prefix(tape, image).value()};
}

void CaptionModel::check_tokens(std::span<const TokenId> tokens) const {
  for (TokenId t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= lm_->vocabulary_size()) {
      throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of size " +
                            std::to_string(lm_->vocabulary_size()));
    }
  }
}

ad::Var CaptionModel::sequence_inputs(ad::Tape& tape, const ad::Var& prefix, std::span<const TokenId> tokens) const {
  if (static_cast<std::size_t>(prefix.rows()) != mapper_->config().prefix_length ||
      static_cast<std::size_t>(prefix.cols()) != lm_->lm_dim()) {
    throw ShapeError("prefix must be prefix_length x lm_dim");
  }
  check_tokens(tokens);
  if (tokens.empty()) return prefix;
  const ad::Var table = lm_->token_embeddings(tape);
  std::vector<ad::Var> parts{prefix};
  parts.reserve(tokens.size() + 1);
  for (TokenId t : tokens) parts.push_back(ad::rows(table, t, 1));
  return ad::vstack(parts);
}

ad::Var CaptionModel::next_token_logits(ad::Tape& tape, const ad::Var& prefix, std::span<const TokenId> tokens) const {
  return lm_->logits(tape, sequence_inputs(tape, prefix, tokens), mapper_->config().prefix_length);
}

Eigen::VectorXd CaptionModel::next_token_logits(const PrefixEmbeddings& prefix, std::span<const TokenId> tokens) const {
  ad::Tape tape(false);
  const ad::Var out = next_token_logits(tape, tape.constant(prefix.vectors), tokens);
  return out.value().row(0).transpose();
}

ad::Var CaptionModel::teacher_forced_logits(ad::Tape& tape, const ad::Var& prefix,
                                            std::span<const TokenId> tokens) const {
  if (tokens.empty()) throw EmptyCaptionError("teacher forcing needs at least one target token");
  // Inputs are every target but the last; row j then predicts tokens[j].
  const ad::Var seq = sequence_inputs(tape, prefix, tokens.first(tokens.size() - 1));
  return lm_->logits_all(tape, seq, mapper_->config().prefix_length);
}

TokenSequence CaptionModel::generate_greedy(const PrefixEmbeddings& prefix, std::size_t max_len) const {
  if (max_len < 1) throw ParameterError("generate_greedy: max_len must be >= 1");
  TokenSequence out;
  while (out.size() < max_len) {
    const Eigen::VectorXd logits = next_token_logits(prefix, out);
    const auto next = static_cast<TokenId>(gumbel::argmax(logits));
    if (next == config_.end_token) break;
    out.push_back(next);
  }
  return out;
}

namespace {

struct Hypothesis {
  TokenSequence tokens;
  double log_prob = 0.0;
};

struct Completed {
  TokenSequence tokens;  // without the end marker
  double score = 0.0;
};

Eigen::VectorXd log_softmax(const Eigen::VectorXd& x) {
  const double m = x.maxCoeff();
  const double lse = m + std::log((x.array() - m).exp().sum());
  return (x.array() - lse).matrix();
}

}  // namespace

TokenSequence CaptionModel::generate_beam(const PrefixEmbeddings& prefix, std::size_t beam_width,
                                          std::size_t max_len) const {
  if (beam_width < 1) throw ParameterError("generate_beam: beam_width must be >= 1");
  if (max_len < 1) throw ParameterError("generate_beam: max_len must be >= 1");
  const std::size_t vocab = lm_->vocabulary_size();

  std::vector<Hypothesis> beams(1);
  std::vector<Completed> completed;
  for (std::size_t step = 0; step < max_len && !beams.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(beams.size() * vocab);
    for (const Hypothesis& h : beams) {
      const Eigen::VectorXd lp = log_softmax(next_token_logits(prefix, h.tokens));
      for (std::size_t v = 0; v < vocab; ++v) {
        Hypothesis c{h.tokens, h.log_prob + lp(static_cast<Eigen::Index>(v))};
        c.tokens.push_back(static_cast<TokenId>(v));
        candidates.push_back(std::move(c));
      }
    }
    const std::size_t keep = std::min(beam_width, candidates.size());
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(keep), candidates.end(),
                      [](const Hypothesis& a, const Hypothesis& b) {
                        if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
                        return a.tokens < b.tokens;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t i = 0; i < keep; ++i) {
      Hypothesis& c = candidates[i];
      if (c.tokens.back() == config_.end_token) {
        const double scored = static_cast<double>(c.tokens.size());
        c.tokens.pop_back();
        completed.push_back(Completed{std::move(c.tokens), c.log_prob / scored});
      } else {
        next.push_back(std::move(c));
      }
    }
    beams = std::move(next);
  }
  // Hypotheses that hit the length cap complete without an end marker.
  for (Hypothesis& h : beams) {
    const double scored = static_cast<double>(h.tokens.size());
    completed.push_back(Completed{std::move(h.tokens), h.log_prob / scored});
  }
  const auto best = std::min_element(completed.begin(), completed.end(), [](const Completed& a, const Completed& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  });
  return best->tokens;
}

SoftTokenSequence CaptionModel::generate_differentiable(ad::Tape& tape, const ad::Var& prefix,
                                                        const DifferentiableDecodeOptions& options, Rng& rng) const {
  if (!(options.temperature > 0.0)) throw ParameterError("generate_differentiable: temperature must be > 0");
  if (options.max_len < 1) throw ParameterError("generate_differentiable: max_len must be >= 1");
  const std::size_t vocab = lm_->vocabulary_size();
  const std::size_t k = mapper_->config().prefix_length;
  if (static_cast<std::size_t>(prefix.rows()) != k || static_cast<std::size_t>(prefix.cols()) != lm_->lm_dim()) {
    throw ShapeError("prefix must be prefix_length x lm_dim");
  }

  const ad::Var table = lm_->token_embeddings(tape);
  std::vector<ad::Var> inputs{prefix};
  SoftTokenSequence out;
  for (std::size_t step = 0; step < options.max_len; ++step) {
    const ad::Var seq = inputs.size() == 1 ? prefix : ad::vstack(inputs);
    const ad::Var logits = lm_->logits(tape, seq, k);
    const gumbel::GumbelNoise noise = options.noise == NoiseMode::gumbel
                                          ? gumbel::sample_gumbel(vocab, rng)
                                          : gumbel::GumbelNoise{Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab))};
    const ad::Var y = gumbel::gumbel_softmax(logits, options.temperature, noise);
    const auto hard = static_cast<TokenId>(gumbel::argmax(Eigen::VectorXd(y.value().row(0).transpose())));
    if (hard == config_.end_token) {
      out.ended = true;
      break;
    }
    const ad::Var row = options.estimator == Estimator::straight_through ? gumbel::straight_through(y) : y;
    out.soft.push_back(y);
    out.rows.push_back(row);
    out.hard.push_back(hard);
    inputs.push_back(ad::matmul(row, table));
  }
  return out;
}

CaptionModel make_toy_caption_model(const ToyModelConfig& config, std::size_t vocabulary_size) {
  ToyLanguageModelConfig lm;
  lm.vocabulary_size = vocabulary_size;
  lm.lm_dim = config.model.mapper.lm_dim;
  lm.hidden = config.lm_hidden;
  lm.seed = config.seed + 1;
  return CaptionModel(config.model, make_mapping_network(config.model.mapper, config.seed),
                      std::make_unique<ToyLanguageModel>(lm));
}

}  // namespace sslcap
