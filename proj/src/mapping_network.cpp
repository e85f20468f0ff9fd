// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <string>

#include "sslcap/captioner.hpp"
#include "sslcap/error.hpp"

namespace sslcap {

std::string_view to_string(MapperKind kind) { return kind == MapperKind::mlp ? "mlp" : "transformer"; }

MapperKind parse_mapper_kind(std::string_view text) {
  if (text == "mlp") return MapperKind::mlp;
  if (text == "transformer") return MapperKind::transformer;
  throw ParameterError("unknown mapper kind '" + std::string(text) + "' (expected mlp|transformer)");
}

std::string_view to_string(Activation act) {
  switch (act) {
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::linear: return "linear";
  }
  return "tanh";
}

Activation parse_activation(std::string_view text) {
  if (text == "tanh") return Activation::tanh;
  if (text == "relu") return Activation::relu;
  if (text == "linear") return Activation::linear;
  throw ParameterError("unknown activation '" + std::string(text) + "'");
}

void MappingNetworkConfig::validate() const {
  if (prefix_length < 1) throw ParameterError("prefix_length must be >= 1");
  if (input_dim < 1 || lm_dim < 1) throw ParameterError("mapper dimensions must be >= 1");
  if (kind == MapperKind::mlp && mlp_hidden < 1) throw ParameterError("mlp_hidden must be >= 1");
  if (kind == MapperKind::transformer) {
    if (tf_layers < 1 || tf_heads < 1) throw ParameterError("transformer layers and heads must be >= 1");
    if (lm_dim % tf_heads != 0) {
      throw ParameterError("tf_heads (" + std::to_string(tf_heads) + ") must divide the transformer width (" +
                           std::to_string(lm_dim) + ")");
    }
  }
}

ad::Parameter& find_parameter(std::span<ad::Parameter* const> params, std::string_view name) {
  for (ad::Parameter* p : params) {
    if (p->name == name) return *p;
  }
  throw ParameterError("no parameter named '" + std::string(name) + "'");
}

namespace {

ad::Parameter make_param(std::string name, Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  ad::Parameter p{std::move(name), ad::Matrix(rows, cols), true};
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = stddev * rng.normal();
  ad::round_to_f32(p.value);
  return p;
}

ad::Parameter make_const(std::string name, Eigen::Index rows, Eigen::Index cols, double value) {
  return ad::Parameter{std::move(name), ad::Matrix::Constant(rows, cols, value), true};
}

ad::Var linear(ad::Tape& tape, const ad::Var& x, const ad::Parameter& w, const ad::Parameter& b) {
  return ad::add_row(ad::matmul(x, tape.parameter(w)), tape.parameter(b));
}

ad::Var activate(const ad::Var& x, Activation act) {
  switch (act) {
    case Activation::tanh: return ad::tanh(x);
    case Activation::relu: return ad::relu(x);
    case Activation::linear: return x;
  }
  return x;
}

/// fc1 -> activation -> fc2, output reshaped to k x lm_dim.
class MlpMapper final : public MappingNetwork {
 public:
  MlpMapper(const MappingNetworkConfig& c, Rng& rng) : MappingNetwork(c) {
    const auto in = static_cast<Eigen::Index>(c.input_dim);
    const auto hid = static_cast<Eigen::Index>(c.mlp_hidden);
    const auto out = static_cast<Eigen::Index>(c.prefix_length * c.lm_dim);
    fc1_w_ = make_param("mapper.fc1.weight", in, hid, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    fc1_b_ = make_const("mapper.fc1.bias", 1, hid, 0.0);
    fc2_w_ = make_param("mapper.fc2.weight", hid, out, 1.0 / std::sqrt(static_cast<double>(hid)), rng);
    fc2_b_ = make_const("mapper.fc2.bias", 1, out, 0.0);
  }

  ad::Var forward(ad::Tape& tape, const ad::Var& image) const override {
    const auto& c = config();
    if (image.rows() != 1 || static_cast<std::size_t>(image.cols()) != c.input_dim) {
      throw ShapeError("mapper expects a 1 x " + std::to_string(c.input_dim) + " image embedding, got " +
                       std::to_string(image.rows()) + " x " + std::to_string(image.cols()));
    }
    const ad::Var h = activate(linear(tape, image, fc1_w_, fc1_b_), c.mlp_activation);
    const ad::Var flat = linear(tape, h, fc2_w_, fc2_b_);
    return ad::reshape(flat, static_cast<Eigen::Index>(c.prefix_length), static_cast<Eigen::Index>(c.lm_dim));
  }

  std::vector<ad::Parameter*> parameters() override { return {&fc1_w_, &fc1_b_, &fc2_w_, &fc2_b_}; }

 private:
  ad::Parameter fc1_w_, fc1_b_, fc2_w_, fc2_b_;
};

/// The image embedding is projected to one position and concatenated with k
/// learned query rows; after the pre-norm self-attention stack the k query
/// positions are the prefix.
class TransformerMapper final : public MappingNetwork {
 public:
  TransformerMapper(const MappingNetworkConfig& c, Rng& rng) : MappingNetwork(c) {
    const auto in = static_cast<Eigen::Index>(c.input_dim);
    const auto w = static_cast<Eigen::Index>(c.lm_dim);
    const auto k = static_cast<Eigen::Index>(c.prefix_length);
    const double sw = 1.0 / std::sqrt(static_cast<double>(w));
    // Residual branches are damped so an 8-layer stack starts near identity.
    const double sres = sw / std::sqrt(2.0 * static_cast<double>(c.tf_layers));
    input_w_ = make_param("mapper.input_proj.weight", in, w, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    input_b_ = make_const("mapper.input_proj.bias", 1, w, 0.0);
    queries_ = make_param("mapper.queries", k, w, 1.0, rng);
    layers_.reserve(c.tf_layers);
    for (std::size_t l = 0; l < c.tf_layers; ++l) {
      const std::string p = "mapper.layers." + std::to_string(l) + ".";
      Layer L;
      L.ln1_g = make_const(p + "ln1.gain", 1, w, 1.0);
      L.ln1_b = make_const(p + "ln1.bias", 1, w, 0.0);
      L.wq = make_param(p + "attn.wq", w, w, sw, rng);
      L.wk = make_param(p + "attn.wk", w, w, sw, rng);
      L.wv = make_param(p + "attn.wv", w, w, sw, rng);
      L.wo = make_param(p + "attn.wo", w, w, sres, rng);
      L.ln2_g = make_const(p + "ln2.gain", 1, w, 1.0);
      L.ln2_b = make_const(p + "ln2.bias", 1, w, 0.0);
      L.ff1_w = make_param(p + "ff1.weight", w, 2 * w, sw, rng);
      L.ff1_b = make_const(p + "ff1.bias", 1, 2 * w, 0.0);
      L.ff2_w = make_param(p + "ff2.weight", 2 * w, w, sres / std::sqrt(2.0), rng);
      L.ff2_b = make_const(p + "ff2.bias", 1, w, 0.0);
      layers_.push_back(std::move(L));
    }
  }

  ad::Var forward(ad::Tape& tape, const ad::Var& image) const override {
    const auto& c = config();
    if (image.rows() != 1 || static_cast<std::size_t>(image.cols()) != c.input_dim) {
      throw ShapeError("mapper expects a 1 x " + std::to_string(c.input_dim) + " image embedding, got " +
                       std::to_string(image.rows()) + " x " + std::to_string(image.cols()));
    }
    const auto k = static_cast<Eigen::Index>(c.prefix_length);
    const auto heads = static_cast<Eigen::Index>(c.tf_heads);
    const Eigen::Index dh = static_cast<Eigen::Index>(c.lm_dim) / heads;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    ad::Var x = ad::vstack({linear(tape, image, input_w_, input_b_), tape.parameter(queries_)});
    for (const Layer& L : layers_) {
      const ad::Var n1 = ad::layer_norm_rows(x, tape.parameter(L.ln1_g), tape.parameter(L.ln1_b));
      const ad::Var q = ad::matmul(n1, tape.parameter(L.wq));
      const ad::Var kk = ad::matmul(n1, tape.parameter(L.wk));
      const ad::Var v = ad::matmul(n1, tape.parameter(L.wv));
      std::vector<ad::Var> head_out;
      head_out.reserve(static_cast<std::size_t>(heads));
      for (Eigen::Index h = 0; h < heads; ++h) {
        const ad::Var qh = ad::cols(q, h * dh, dh);
        const ad::Var kh = ad::cols(kk, h * dh, dh);
        const ad::Var vh = ad::cols(v, h * dh, dh);
        const ad::Var att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt_dh));
        head_out.push_back(ad::matmul(att, vh));
      }
      const ad::Var merged = heads == 1 ? head_out.front() : ad::hstack(head_out);
      x = ad::add(x, ad::matmul(merged, tape.parameter(L.wo)));
      const ad::Var n2 = ad::layer_norm_rows(x, tape.parameter(L.ln2_g), tape.parameter(L.ln2_b));
      const ad::Var ff = linear(tape, ad::relu(linear(tape, n2, L.ff1_w, L.ff1_b)), L.ff2_w, L.ff2_b);
      x = ad::add(x, ff);
    }
    return ad::rows(x, 1, k);
  }

  std::vector<ad::Parameter*> parameters() override {
    std::vector<ad::Parameter*> out = {&input_w_, &input_b_, &queries_};
    for (Layer& L : layers_) {
      for (ad::Parameter* p : {&L.ln1_g, &L.ln1_b, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_g, &L.ln2_b, &L.ff1_w,
                               &L.ff1_b, &L.ff2_w, &L.ff2_b}) {
        out.push_back(p);
      }
    }
    return out;
  }

 private:
  struct Layer {
    ad::Parameter ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b;
  };

  ad::Parameter input_w_, input_b_, queries_;
  std::vector<Layer> layers_;
};

}  // namespace

std::unique_ptr<MappingNetwork> make_mapping_network(const MappingNetworkConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  if (config.kind == MapperKind::mlp) return std::make_unique<MlpMapper>(config, rng);
  return std::make_unique<TransformerMapper>(config, rng);
}

}  // namespace sslcap
