// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// The caption model: a mapping network turns an image embedding into k
// prefix vectors in language-model space, and a language model continues
// the prefix token by token.

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sslcap/autograd.hpp"
#include "sslcap/embedding_backend.hpp"
#include "sslcap/rng.hpp"

namespace sslcap {

enum class MapperKind { mlp, transformer };
enum class Activation { tanh, relu, linear };

std::string_view to_string(MapperKind kind);
MapperKind parse_mapper_kind(std::string_view text);
std::string_view to_string(Activation act);
Activation parse_activation(std::string_view text);

struct MappingNetworkConfig {
  MapperKind kind = MapperKind::transformer;
  std::size_t prefix_length = 10;
  std::size_t input_dim = kClipEmbeddingDim;
  std::size_t lm_dim = 768;
  /// MLP only: width of the single hidden layer.
  std::size_t mlp_hidden = 3840;
  Activation mlp_activation = Activation::tanh;
  /// Transformer only.
  std::size_t tf_layers = 8;
  std::size_t tf_heads = 8;

  void validate() const;
};

/// k x lm_dim.
struct PrefixEmbeddings {
  ad::Matrix vectors;
};

/// Looks a parameter up by its full name; throws ParameterError if absent.
ad::Parameter& find_parameter(std::span<ad::Parameter* const> params, std::string_view name);

class MappingNetwork {
 public:
  explicit MappingNetwork(MappingNetworkConfig config) : config_(std::move(config)) {}
  virtual ~MappingNetwork() = default;

  const MappingNetworkConfig& config() const { return config_; }

  /// image: 1 x input_dim -> k x lm_dim.
  virtual ad::Var forward(ad::Tape& tape, const ad::Var& image) const = 0;
  virtual std::vector<ad::Parameter*> parameters() = 0;

 private:
  MappingNetworkConfig config_;
};

/// Seeded, f32-rounded initialization. Parameter names start with "mapper.".
std::unique_ptr<MappingNetwork> make_mapping_network(const MappingNetworkConfig& config, std::uint64_t seed);

/// A causal language model seen through embeddings: it consumes a sequence
/// of lm_dim vectors (the prefix followed by token embeddings) and scores
/// the next token.
class LanguageModel {
 public:
  virtual ~LanguageModel() = default;

  virtual std::size_t vocabulary_size() const = 0;
  virtual std::size_t lm_dim() const = 0;
  /// Whether parameters may be unfrozen by the trainer.
  virtual bool finetunable() const { return true; }

  /// V x lm_dim input embedding table.
  virtual ad::Var token_embeddings(ad::Tape& tape) const = 0;
  ad::Var token_embedding(ad::Tape& tape, TokenId token) const;

  /// sequence: n x lm_dim, the first `prefix_length` rows being the
  /// prefix. Returns 1 x V logits for the token after the last row.
  virtual ad::Var logits(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const = 0;
  /// Row r scores the token after position prefix_length - 1 + r, for
  /// every r in [0, n - prefix_length]. Default loops over logits().
  virtual ad::Var logits_all(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const;

  virtual std::vector<ad::Parameter*> parameters() = 0;
};

struct ToyLanguageModelConfig {
  std::size_t vocabulary_size = 16;
  std::size_t lm_dim = 16;
  std::size_t hidden = 32;
  std::uint64_t seed = 0;
};

/// Small trainable stand-in for a pretrained decoder:
///   h = tanh(sum(prefix) A + sum(tokens so far) B + b),  logits = h O + c.
/// Parameter names start with "lm.".
class ToyLanguageModel final : public LanguageModel {
 public:
  explicit ToyLanguageModel(const ToyLanguageModelConfig& config);

  const ToyLanguageModelConfig& config() const { return config_; }
  std::size_t vocabulary_size() const override { return config_.vocabulary_size; }
  std::size_t lm_dim() const override { return config_.lm_dim; }

  ad::Var token_embeddings(ad::Tape& tape) const override;
  ad::Var logits(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const override;
  ad::Var logits_all(ad::Tape& tape, const ad::Var& sequence, std::size_t prefix_length) const override;
  std::vector<ad::Parameter*> parameters() override;

 private:
  ToyLanguageModelConfig config_;
  ad::Parameter embedding_, prefix_proj_, token_proj_, hidden_bias_, out_proj_, out_bias_;
};

struct CaptionModelConfig {
  MappingNetworkConfig mapper;
  bool finetune_lm = false;
  std::size_t max_caption_length = 20;
  TokenId end_token = 0;

  void validate() const;
};

enum class Estimator { straight_through, soft };
enum class NoiseMode { gumbel, none };

struct DifferentiableDecodeOptions {
  std::size_t max_len = 20;
  double temperature = 1.0;
  Estimator estimator = Estimator::straight_through;
  NoiseMode noise = NoiseMode::gumbel;
};

struct SoftTokenSequence {
  /// Rows handed to the text encoder and fed back to the LM (1 x V each).
  /// Under straight-through these are one-hot forward, soft backward.
  std::vector<ad::Var> rows;
  /// The relaxed Gumbel-Softmax distributions behind `rows`.
  std::vector<ad::Var> soft;
  TokenSequence hard;
  /// True if decoding stopped on the end token rather than the length cap.
  bool ended = false;
};

class CaptionModel {
 public:
  CaptionModel(CaptionModelConfig config, std::unique_ptr<MappingNetwork> mapper,
               std::unique_ptr<LanguageModel> lm);

  CaptionModel(CaptionModel&&) noexcept = default;
  CaptionModel& operator=(CaptionModel&&) noexcept = default;

  const CaptionModelConfig& config() const { return config_; }
  const MappingNetwork& mapper() const { return *mapper_; }
  const LanguageModel& language_model() const { return *lm_; }
  std::size_t vocabulary_size() const { return lm_->vocabulary_size(); }

  /// mapper.* followed by lm.*; stable order.
  std::vector<ad::Parameter*> parameters();
  std::vector<const ad::Parameter*> parameters() const;
  /// mapper.* plus lm.* when finetune_lm.
  std::vector<ad::Parameter*> trainable_parameters();
  std::vector<const ad::Parameter*> trainable_parameters() const;

  ad::Var map_prefix(ad::Tape& tape, const EmbeddingVector& image) const;
  PrefixEmbeddings map_prefix(const EmbeddingVector& image) const;

  /// 1 x V logits for the token after `tokens`.
  ad::Var next_token_logits(ad::Tape& tape, const ad::Var& prefix, std::span<const TokenId> tokens) const;
  Eigen::VectorXd next_token_logits(const PrefixEmbeddings& prefix, std::span<const TokenId> tokens) const;
  /// Teacher-forced logits: row j scores tokens[j] given tokens[0..j).
  ad::Var teacher_forced_logits(ad::Tape& tape, const ad::Var& prefix, std::span<const TokenId> tokens) const;

  /// Repeated argmax (lowest id on ties); the end token is not included.
  TokenSequence generate_greedy(const PrefixEmbeddings& prefix, std::size_t max_len) const;
  /// Highest length-normalized log-probability completed hypothesis. The
  /// score divides by the number of scored tokens, counting the end token.
  TokenSequence generate_beam(const PrefixEmbeddings& prefix, std::size_t beam_width, std::size_t max_len) const;
  SoftTokenSequence generate_differentiable(ad::Tape& tape, const ad::Var& prefix,
                                            const DifferentiableDecodeOptions& options, Rng& rng) const;

  /// Count of completed supervised epochs; unsupervised training requires >= 1.
  std::size_t supervised_epochs() const { return supervised_epochs_; }
  void add_supervised_epochs(std::size_t n) { supervised_epochs_ += n; }
  void set_supervised_epochs(std::size_t n) { supervised_epochs_ = n; }

 private:
  void check_tokens(std::span<const TokenId> tokens) const;
  ad::Var sequence_inputs(ad::Tape& tape, const ad::Var& prefix, std::span<const TokenId> tokens) const;

  CaptionModelConfig config_;
  std::unique_ptr<MappingNetwork> mapper_;
  std::unique_ptr<LanguageModel> lm_;
  std::size_t supervised_epochs_ = 0;
};

/// Configuration for the desk-scale model built on ToyLanguageModel.
struct ToyModelConfig {
  CaptionModelConfig model;
  std::size_t lm_hidden = 32;
  std::uint64_t seed = 0;
};

/// Mapper seeded with `seed`, LM seeded with `seed + 1`.
CaptionModel make_toy_caption_model(const ToyModelConfig& config, std::size_t vocabulary_size);

}  // namespace sslcap
