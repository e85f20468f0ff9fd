// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Training objectives.
//
//   supervised:    L = -sum_i sum_j log p(c_j^i | prefix^i, c_<j^i)
//   unsupervised:  L = -sum_i cos(v^i, c^i)
//
// Both are sums over the batch, never means.

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "sslcap/autograd.hpp"
#include "sslcap/captioner.hpp"
#include "sslcap/embedding_backend.hpp"
#include "sslcap/rng.hpp"

namespace sslcap {

/// `targets` is the full predicted sequence; the trainer appends the end
/// token so that stopping is learned.
struct SupervisedExample {
  EmbeddingVector image;
  TokenSequence targets;
};

struct UnsupervisedPair {
  EmbeddingVector image;
  EmbeddingVector caption;
};

struct ImageEmbedding {
  std::string id;
  EmbeddingVector image;
};

/// Per-parameter gradient sums, accumulated in call order.
class Gradients {
 public:
  /// Adds tape gradients for each parameter in `params` that entered the tape.
  void add_from(const ad::Tape& tape, std::span<const ad::Parameter* const> params);
  /// nullptr when the parameter never received a gradient.
  const ad::Matrix* find(const ad::Parameter& p) const;
  bool all_finite() const;
  void clear() { entries_.clear(); }
  std::size_t size() const { return entries_.size(); }

 private:
  std::unordered_map<const ad::Parameter*, ad::Matrix> entries_;
};

/// -sum_j log p(targets[j] | prefix, targets[<j]) on `tape`.
ad::Var supervised_item_loss(ad::Tape& tape, const CaptionModel& model, const SupervisedExample& example);

/// Batch sum; accumulates into `grads` when given. Throws EmptyCaptionError
/// for an empty target sequence and ParameterError for an empty batch.
double supervised_loss(std::span<const SupervisedExample> batch, const CaptionModel& model,
                       Gradients* grads = nullptr);

/// -sum_i cos(v^i, c^i). Throws DegenerateVectorError on a zero vector.
double unsupervised_loss(std::span<const UnsupervisedPair> batch);
/// Tape form; images are constants (the encoder is frozen).
ad::Var unsupervised_loss(ad::Tape& tape, std::span<const EmbeddingVector> images,
                          std::span<const ad::Var> captions);

struct UnsupervisedStepResult {
  double loss = 0.0;
  /// Images that contributed, i.e. N for this step.
  std::size_t used = 0;
  std::vector<std::string> skipped;
  double mean_cosine = 0.0;
};

/// generate_differentiable -> encode_text_soft -> unsupervised_loss for each
/// image. Images whose generation is degenerate (empty caption) are skipped
/// and listed. Requires backend.descriptor().differentiable_text.
UnsupervisedStepResult batched_unsupervised_step(std::span<const ImageEmbedding> images, const CaptionModel& model,
                                                 const DifferentiableDecodeOptions& decode, Rng& rng,
                                                 const EmbeddingBackend& backend, Gradients* grads = nullptr);

}  // namespace sslcap
