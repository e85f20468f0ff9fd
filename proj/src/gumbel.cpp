// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/gumbel.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sslcap/error.hpp"

namespace sslcap::gumbel {

double gumbel_from_uniform(double u) {
  u = std::clamp(u, kUniformEpsilon, 1.0 - kUniformEpsilon);
  return -std::log(-std::log(u));
}

GumbelNoise sample_gumbel(std::size_t length, Rng& rng) {
  if (length == 0) throw ParameterError("sample_gumbel: length must be >= 1");
  GumbelNoise noise{Eigen::VectorXd(static_cast<Eigen::Index>(length))};
  for (Eigen::Index i = 0; i < noise.values.size(); ++i) noise.values(i) = gumbel_from_uniform(rng.uniform_open());
  return noise;
}

namespace {

void check_args(Eigen::Index n, double tau, const GumbelNoise& noise) {
  if (!(tau > 0.0)) throw ParameterError("gumbel_softmax: temperature must be > 0, got " + std::to_string(tau));
  if (noise.values.size() != n) {
    throw ShapeError("gumbel_softmax: " + std::to_string(n) + " logits but " +
                     std::to_string(noise.values.size()) + " noise entries");
  }
}

}  // namespace

Eigen::VectorXd gumbel_softmax(const Eigen::VectorXd& logits, double tau, const GumbelNoise& noise) {
  check_args(logits.size(), tau, noise);
  Eigen::ArrayXd z = (logits + noise.values).array() / tau;
  z = (z - z.maxCoeff()).exp();
  return (z / z.sum()).matrix();
}

Eigen::MatrixXd gumbel_softmax_jacobian(const Eigen::VectorXd& y, double tau) {
  Eigen::MatrixXd j = -y * y.transpose();
  j.diagonal() += y;
  return j / tau;
}

Eigen::Index argmax(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = i;
  }
  return best;
}

Eigen::VectorXd straight_through(const Eigen::VectorXd& soft) {
  if (soft.size() == 0 || std::abs(soft.sum() - 1.0) > 1e-4) {
    throw NormalizationError("straight_through: input does not sum to 1");
  }
  Eigen::VectorXd hard = Eigen::VectorXd::Zero(soft.size());
  hard(argmax(soft)) = 1.0;
  return hard;
}

ad::Var gumbel_softmax(const ad::Var& logits, double tau, const GumbelNoise& noise) {
  if (logits.rows() != 1) throw ShapeError("gumbel_softmax: logits must be a 1 x V row");
  check_args(logits.cols(), tau, noise);
  ad::Tape& tape = *logits.tape();
  const ad::Var perturbed = ad::add(logits, tape.constant(noise.values.transpose()));
  return ad::softmax_rows(ad::scale(perturbed, 1.0 / tau));
}

ad::Var straight_through(const ad::Var& soft) {
  if (soft.rows() != 1) throw ShapeError("straight_through: expected a 1 x V row");
  const Eigen::VectorXd hard = straight_through(Eigen::VectorXd(soft.value().row(0).transpose()));
  return ad::straight_through(soft, hard.transpose());
}

void TemperatureSchedule::validate() const {
  if (!(initial > 0.0)) throw ParameterError("temperature must be > 0");
  if (!(decay > 0.0) || decay > 1.0) throw ParameterError("temperature decay must lie in (0, 1]");
  if (minimum < 0.0 || minimum > initial) throw ParameterError("temperature minimum must lie in [0, initial]");
  if (decay < 1.0 && !(minimum > 0.0)) throw ParameterError("a decaying temperature needs a positive minimum");
}

double TemperatureSchedule::at(std::size_t epoch) const {
  if (decay >= 1.0) return initial;
  return std::max(minimum, initial * std::pow(decay, static_cast<double>(epoch)));
}

}  // namespace sslcap::gumbel
