// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <map>

#include "sslcap/captioner.hpp"
#include "sslcap/error.hpp"
#include "test_support.hpp"

namespace sslcap {
namespace {

using testing::random_vector;

/// Next-token logits given directly as a function of the history. One-hot
/// token embeddings let the history be read back from the input rows.
class FunctionLanguageModel final : public LanguageModel {
 public:
  using Fn = std::function<Eigen::VectorXd(const TokenSequence&)>;
  FunctionLanguageModel(std::size_t vocab, Fn fn)
      : vocab_(vocab), fn_(std::move(fn)),
        table_{"lm.token_embedding", ad::Matrix::Identity(static_cast<Eigen::Index>(vocab), static_cast<Eigen::Index>(vocab)), false} {}

  std::size_t vocabulary_size() const override { return vocab_; }
  std::size_t lm_dim() const override { return vocab_; }
  ad::Var token_embeddings(ad::Tape& tape) const override { return tape.parameter(table_); }
  ad::Var logits(ad::Tape& tape, const ad::Var& seq, std::size_t k) const override {
    TokenSequence hist;
    for (Eigen::Index r = static_cast<Eigen::Index>(k); r < seq.rows(); ++r) {
      Eigen::Index best = 0;
      seq.value().row(r).maxCoeff(&best);
      hist.push_back(static_cast<TokenId>(best));
    }
    return tape.constant(fn_(hist).transpose());
  }
  std::vector<ad::Parameter*> parameters() override { return {&table_}; }

 private:
  std::size_t vocab_;
  Fn fn_;
  ad::Parameter table_;
};

CaptionModel function_model(std::size_t vocab, TokenId end, FunctionLanguageModel::Fn fn) {
  CaptionModelConfig cfg;
  cfg.mapper.kind = MapperKind::mlp;
  cfg.mapper.prefix_length = 1;
  cfg.mapper.input_dim = 3;
  cfg.mapper.lm_dim = vocab;
  cfg.mapper.mlp_hidden = 3;
  cfg.end_token = end;
  cfg.max_caption_length = 8;
  return CaptionModel(cfg, make_mapping_network(cfg.mapper, 1),
                      std::make_unique<FunctionLanguageModel>(vocab, std::move(fn)));
}

const EmbeddingVector kImage3{Eigen::Vector3d(0.3, -0.1, 0.8)};

TEST(MappingNetwork, ZeroWeightsGiveZeroPrefix) {
  CaptionModel model = make_toy_caption_model(testing::small_toy_config(6, 3), 10);
  for (ad::Parameter* p : model.parameters()) {
    if (p->name.rfind("mapper.", 0) == 0) p->value.setZero();
  }
  Rng rng(1);
  const PrefixEmbeddings pre = model.map_prefix(EmbeddingVector(random_vector(6, rng)));
  EXPECT_EQ(pre.vectors.rows(), 2);
  EXPECT_EQ(pre.vectors.cols(), 8);
  EXPECT_TRUE(pre.vectors.isZero(0.0));
}

TEST(MappingNetwork, IdentityMlpCopiesInput) {
  MappingNetworkConfig cfg;
  cfg.kind = MapperKind::mlp;
  cfg.prefix_length = 1;
  cfg.input_dim = cfg.lm_dim = cfg.mlp_hidden = 5;
  cfg.mlp_activation = Activation::linear;
  auto mapper = make_mapping_network(cfg, 0);
  for (ad::Parameter* p : mapper->parameters()) {
    if (p->name.find("weight") != std::string::npos) {
      p->value = ad::Matrix::Identity(5, 5);
    } else {
      p->value.setZero();
    }
  }
  Rng rng(2);
  const Eigen::VectorXd v = random_vector(5, rng);
  ad::Tape tape(false);
  const ad::Matrix out = mapper->forward(tape, tape.constant(v.transpose())).value();
  EXPECT_EQ(out, ad::Matrix(v.transpose()));
}

TEST(MappingNetwork, ShapesAndDeterminismForBothKinds) {
  Rng rng(3);
  const EmbeddingVector v(random_vector(12, rng));
  for (MapperKind kind : {MapperKind::mlp, MapperKind::transformer}) {
    ToyModelConfig c = testing::small_toy_config(12, 4);
    c.model.mapper.kind = kind;
    c.model.mapper.prefix_length = 3;
    c.model.mapper.tf_layers = 2;
    c.model.mapper.tf_heads = 2;
    const CaptionModel model = make_toy_caption_model(c, 9);
    const PrefixEmbeddings a = model.map_prefix(v), b = model.map_prefix(v);
    EXPECT_EQ(a.vectors.rows(), 3);
    EXPECT_EQ(a.vectors.cols(), 8);
    EXPECT_EQ(a.vectors, b.vectors);
    EXPECT_TRUE(a.vectors.allFinite());
    EXPECT_THROW(model.map_prefix(EmbeddingVector(random_vector(5, rng))), ShapeError);
  }
}

TEST(MappingNetwork, ConfigValidation) {
  MappingNetworkConfig cfg;
  cfg.lm_dim = 10;
  cfg.tf_heads = 4;
  EXPECT_THROW(cfg.validate(), ParameterError);
  cfg.tf_heads = 5;
  EXPECT_NO_THROW(cfg.validate());
  cfg.prefix_length = 0;
  EXPECT_THROW(cfg.validate(), ParameterError);
  EXPECT_THROW(parse_mapper_kind("rnn"), ParameterError);
}

TEST(MappingNetwork, GradientMatchesFiniteDifferences) {
  for (MapperKind kind : {MapperKind::mlp, MapperKind::transformer}) {
    ToyModelConfig c = testing::small_toy_config(5, 8);
    c.model.mapper.kind = kind;
    c.model.mapper.tf_layers = 1;
    c.model.mapper.tf_heads = 2;
    CaptionModel model = make_toy_caption_model(c, 6);
    Rng rng(4);
    const EmbeddingVector v(random_vector(5, rng));
    const ad::Matrix w = random_vector(16, rng).transpose();
    auto f = [&](ad::Tape& t) { return ad::dot(ad::reshape(model.map_prefix(t, v), 1, 16), t.constant(w)); };
    ad::Tape tape;
    tape.backward(f(tape));
    for (ad::Parameter* p : model.parameters()) {
      if (p->name.rfind("mapper.", 0) != 0) continue;
      const ad::Matrix g = *tape.parameter_grad(*p);
      for (Eigen::Index i = 0; i < p->value.size(); i += 3) {
        const double fd = testing::central_difference(*p, i, 1e-6, [&] {
          ad::Tape t(false);
          return f(t).scalar();
        });
        EXPECT_LT(testing::relative_error(g.data()[i], fd, 1e-6), 1e-4) << p->name << "[" << i << "]";
      }
    }
  }
}

TEST(LanguageModel, ZeroWeightsGiveZeroLogits) {
  CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 1), 7);
  for (ad::Parameter* p : model.parameters()) {
    if (p->name.rfind("lm.", 0) == 0) p->value.setZero();
  }
  Rng rng(5);
  const PrefixEmbeddings pre = model.map_prefix(EmbeddingVector(random_vector(4, rng)));
  EXPECT_TRUE(model.next_token_logits(pre, TokenSequence{1, 2}).isZero(0.0));
}

TEST(LanguageModel, SoftmaxNormalizedAndDeterministic) {
  Rng rng(6);
  for (int m = 0; m < 20; ++m) {
    const CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 100 + m), 11);
    const PrefixEmbeddings pre = model.map_prefix(EmbeddingVector(random_vector(4, rng)));
    const TokenSequence toks{3, 1};
    const Eigen::VectorXd l = model.next_token_logits(pre, toks);
    EXPECT_EQ(l.size(), 11);
    EXPECT_EQ(l, model.next_token_logits(pre, toks));
    const Eigen::ArrayXd e = (l.array() - l.maxCoeff()).exp();
    EXPECT_NEAR((e / e.sum()).sum(), 1.0, 1e-6);
  }
}

TEST(LanguageModel, TeacherForcedRowsMatchIncremental) {
  const CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 2), 9);
  Rng rng(7);
  const PrefixEmbeddings pre = model.map_prefix(EmbeddingVector(random_vector(4, rng)));
  const TokenSequence toks{4, 2, 8, 0};
  ad::Tape tape(false);
  const ad::Matrix all = model.teacher_forced_logits(tape, tape.constant(pre.vectors), toks).value();
  ASSERT_EQ(all.rows(), 4);
  for (std::size_t j = 0; j < toks.size(); ++j) {
    const Eigen::VectorXd inc = model.next_token_logits(pre, std::span(toks).first(j));
    EXPECT_LT((all.row(static_cast<Eigen::Index>(j)).transpose() - inc).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_THROW(model.next_token_logits(pre, TokenSequence{9}), VocabularyError);
}

TEST(CaptionModel, RejectsBadConfigs) {
  ToyModelConfig c = testing::small_toy_config(4, 0);
  c.model.end_token = 12;
  EXPECT_THROW(make_toy_caption_model(c, 10), VocabularyError);
  c = testing::small_toy_config(4, 0);
  c.model.max_caption_length = 0;
  EXPECT_THROW(make_toy_caption_model(c, 10), ParameterError);
}

TEST(CaptionModel, FrozenLanguageModelIsNotTrainable) {
  ToyModelConfig c = testing::small_toy_config(4, 0);
  c.model.finetune_lm = false;
  CaptionModel model = make_toy_caption_model(c, 10);
  for (ad::Parameter* p : model.trainable_parameters()) EXPECT_EQ(p->name.rfind("mapper.", 0), 0u) << p->name;
  c.model.finetune_lm = true;
  CaptionModel tuned = make_toy_caption_model(c, 10);
  EXPECT_GT(tuned.trainable_parameters().size(), model.trainable_parameters().size());
}

TEST(Greedy, ImmediateEndGivesEmptyCaption) {
  const CaptionModel model = function_model(4, 0, [](const TokenSequence&) {
    Eigen::VectorXd l = Eigen::VectorXd::Zero(4);
    l(0) = 5.0;
    return l;
  });
  EXPECT_TRUE(model.generate_greedy(model.map_prefix(kImage3), 5).empty());
}

TEST(Greedy, LengthCapAndTies) {
  const CaptionModel model = function_model(4, 0, [](const TokenSequence&) {
    Eigen::VectorXd l = Eigen::VectorXd::Zero(4);
    l(2) = l(3) = 1.0;
    return l;
  });
  EXPECT_EQ(model.generate_greedy(model.map_prefix(kImage3), 1), (TokenSequence{2}));
  EXPECT_EQ(model.generate_greedy(model.map_prefix(kImage3), 3), (TokenSequence{2, 2, 2}));
  EXPECT_THROW(model.generate_greedy(model.map_prefix(kImage3), 0), ParameterError);
}

TEST(Greedy, RiggedStepSequence) {
  const std::size_t v = 6;
  const CaptionModel model = function_model(v, 5, [v](const TokenSequence& h) {
    Eigen::VectorXd l = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(v));
    l(static_cast<Eigen::Index>(h.size() % v)) = 3.0;
    return l;
  });
  EXPECT_EQ(model.generate_greedy(model.map_prefix(kImage3), 8), (TokenSequence{0, 1, 2, 3, 4}));
}

// Tokens: end = 0, a = 1, b = 2.
Eigen::VectorXd two_step_logits(const TokenSequence& h) {
  Eigen::Vector3d p;
  if (h.empty()) {
    p << 0.1, 0.5, 0.4;
  } else if (h[0] == 1) {
    p << 0.33, 0.34, 0.33;
  } else {
    p << 0.05, 0.05, 0.9;
  }
  return p.array().log();
}

TEST(Beam, BeatsGreedyWhereGreedyIsSuboptimal) {
  const CaptionModel model = function_model(3, 0, two_step_logits);
  const PrefixEmbeddings pre = model.map_prefix(kImage3);
  EXPECT_EQ(model.generate_greedy(pre, 2), (TokenSequence{1, 1}));
  // Exhaustive ranking under the beam score.
  std::map<TokenSequence, double> scores;
  auto lp = [](const TokenSequence& h, TokenId t) {
    const Eigen::VectorXd l = two_step_logits(h);
    return l(t) - std::log(l.array().exp().sum());
  };
  scores[{}] = lp({}, 0);
  for (TokenId a : {1, 2}) {
    scores[{a}] = (lp({}, a) + lp({a}, 0)) / 2;
    for (TokenId b : {1, 2}) scores[{a, b}] = (lp({}, a) + lp({a}, b)) / 2;
  }
  auto best = scores.begin();
  for (auto it = scores.begin(); it != scores.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  EXPECT_EQ(best->first, (TokenSequence{2, 2}));
  EXPECT_EQ(model.generate_beam(pre, 2, 2), best->first);
  EXPECT_EQ(model.generate_beam(pre, 1, 2), model.generate_greedy(pre, 2));
}

TEST(Beam, WidthOneIsGreedyOnRandomModels) {
  Rng rng(8);
  for (int m = 0; m < 100; ++m) {
    const CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 300 + m, 5), 3 + m % 9);
    const PrefixEmbeddings pre = model.map_prefix(EmbeddingVector(random_vector(4, rng)));
    EXPECT_EQ(model.generate_beam(pre, 1, 5), model.generate_greedy(pre, 5)) << "model " << m;
  }
}

TEST(Beam, Errors) {
  const CaptionModel model = function_model(3, 0, two_step_logits);
  const PrefixEmbeddings pre = model.map_prefix(kImage3);
  EXPECT_THROW(model.generate_beam(pre, 0, 3), ParameterError);
  EXPECT_THROW(model.generate_beam(pre, 2, 0), ParameterError);
}

TEST(Differentiable, RowsNormalizedAndReproducible) {
  const CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 9, 6), 10);
  Rng img(9);
  const EmbeddingVector v(random_vector(4, img));
  for (Estimator est : {Estimator::straight_through, Estimator::soft}) {
    DifferentiableDecodeOptions opts;
    opts.max_len = 6;
    opts.estimator = est;
    ad::Tape t1, t2;
    Rng r1(5), r2(5);
    const SoftTokenSequence a = model.generate_differentiable(t1, model.map_prefix(t1, v), opts, r1);
    const SoftTokenSequence b = model.generate_differentiable(t2, model.map_prefix(t2, v), opts, r2);
    ASSERT_EQ(a.hard, b.hard);
    for (std::size_t i = 0; i < a.soft.size(); ++i) {
      EXPECT_NEAR(a.soft[i].value().sum(), 1.0, 1e-6);
      EXPECT_EQ(a.soft[i].value(), b.soft[i].value());
    }
    EXPECT_LE(a.hard.size(), 6u);
  }
}

TEST(Differentiable, NoiseFreeHardPathIsGreedy) {
  Rng rng(10);
  for (int m = 0; m < 20; ++m) {
    const CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 400 + m, 5), 8);
    const EmbeddingVector v(random_vector(4, rng));
    DifferentiableDecodeOptions opts;
    opts.max_len = 5;
    opts.temperature = 1e-3;
    opts.noise = NoiseMode::none;
    ad::Tape tape;
    Rng r(0);
    const SoftTokenSequence s = model.generate_differentiable(tape, model.map_prefix(tape, v), opts, r);
    EXPECT_EQ(s.hard, model.generate_greedy(model.map_prefix(v), 5));
  }
}

TEST(Differentiable, Errors) {
  const CaptionModel model = make_toy_caption_model(testing::small_toy_config(4, 9), 10);
  ad::Tape tape;
  Rng r(0);
  const ad::Var pre = model.map_prefix(tape, EmbeddingVector(Eigen::Vector4d(1, 0, 0, 0)));
  DifferentiableDecodeOptions opts;
  opts.temperature = 0.0;
  EXPECT_THROW(model.generate_differentiable(tape, pre, opts, r), ParameterError);
}

}  // namespace
}  // namespace sslcap
