// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/losses.hpp"

#include <string>

#include "sslcap/error.hpp"

namespace sslcap {

void Gradients::add_from(const ad::Tape& tape, std::span<const ad::Parameter* const> params) {
  for (const ad::Parameter* p : params) {
    const ad::Matrix* g = tape.parameter_grad(*p);
    if (g == nullptr || g->size() == 0) continue;
    auto [it, inserted] = entries_.try_emplace(p, *g);
    if (!inserted) it->second += *g;
  }
}

const ad::Matrix* Gradients::find(const ad::Parameter& p) const {
  auto it = entries_.find(&p);
  return it == entries_.end() ? nullptr : &it->second;
}

bool Gradients::all_finite() const {
  for (const auto& [p, g] : entries_) {
    if (!g.allFinite()) return false;
  }
  return true;
}

ad::Var supervised_item_loss(ad::Tape& tape, const CaptionModel& model, const SupervisedExample& example) {
  if (example.targets.empty()) throw EmptyCaptionError("supervised example has an empty caption");
  const ad::Var prefix = model.map_prefix(tape, example.image);
  const ad::Var logp = ad::log_softmax_rows(model.teacher_forced_logits(tape, prefix, example.targets));
  ad::Matrix pick = ad::Matrix::Zero(logp.rows(), logp.cols());
  for (std::size_t j = 0; j < example.targets.size(); ++j) {
    if (example.targets[j] < 0 || static_cast<Eigen::Index>(example.targets[j]) >= logp.cols()) {
      throw VocabularyError("target token " + std::to_string(example.targets[j]) + " outside vocabulary");
    }
    pick(static_cast<Eigen::Index>(j), example.targets[j]) = 1.0;
  }
  return ad::scale(ad::dot(logp, tape.constant(std::move(pick))), -1.0);
}

double supervised_loss(std::span<const SupervisedExample> batch, const CaptionModel& model, Gradients* grads) {
  if (batch.empty()) throw ParameterError("supervised_loss: empty batch");
  const std::vector<const ad::Parameter*> params = model.trainable_parameters();
  double total = 0.0;
  for (const SupervisedExample& ex : batch) {
    ad::Tape tape(grads != nullptr);
    const ad::Var loss = supervised_item_loss(tape, model, ex);
    total += loss.scalar();
    if (grads != nullptr) {
      tape.backward(loss);
      grads->add_from(tape, params);
    }
  }
  return total;
}

double unsupervised_loss(std::span<const UnsupervisedPair> batch) {
  double total = 0.0;
  for (const UnsupervisedPair& pair : batch) total -= cosine_similarity(pair.image, pair.caption);
  return total;
}

ad::Var unsupervised_loss(ad::Tape& tape, std::span<const EmbeddingVector> images, std::span<const ad::Var> captions) {
  if (images.size() != captions.size()) throw ShapeError("unsupervised_loss: images and captions differ in count");
  if (images.empty()) throw ParameterError("unsupervised_loss: empty batch");
  ad::Var total;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const ad::Var c = ad::cosine(tape.constant(images[i].as_row()), captions[i]);
    total = i == 0 ? c : ad::add(total, c);
  }
  return ad::scale(total, -1.0);
}

UnsupervisedStepResult batched_unsupervised_step(std::span<const ImageEmbedding> images, const CaptionModel& model,
                                                 const DifferentiableDecodeOptions& decode, Rng& rng,
                                                 const EmbeddingBackend& backend, Gradients* grads) {
  if (!backend.descriptor().differentiable_text) {
    throw CapabilityError("unsupervised training needs a backend with differentiable text encoding");
  }
  const std::vector<const ad::Parameter*> params = model.trainable_parameters();
  UnsupervisedStepResult result;
  double cos_sum = 0.0;
  for (const ImageEmbedding& item : images) {
    ad::Tape tape(grads != nullptr);
    const ad::Var prefix = model.map_prefix(tape, item.image);
    const SoftTokenSequence soft = model.generate_differentiable(tape, prefix, decode, rng);
    ad::Var loss;
    try {
      const ad::Var caption = backend.encode_text_soft(tape, soft.rows);
      loss = unsupervised_loss(tape, std::span(&item.image, 1), std::span(&caption, 1));
    } catch (const EmptyCaptionError&) {
      result.skipped.push_back(item.id);
      continue;
    } catch (const DegenerateVectorError&) {
      result.skipped.push_back(item.id);
      continue;
    }
    result.loss += loss.scalar();
    cos_sum -= loss.scalar();
    ++result.used;
    if (grads != nullptr) {
      tape.backward(loss);
      grads->add_from(tape, params);
    }
  }
  if (result.used > 0) result.mean_cosine = cos_sum / static_cast<double>(result.used);
  return result;
}

}  // namespace sslcap
