// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Gumbel-Softmax relaxation of categorical sampling, with the
// straight-through hardening used by differentiable decoding.

#pragma once

#include <Eigen/Dense>

#include <cstddef>

#include "sslcap/autograd.hpp"
#include "sslcap/rng.hpp"

namespace sslcap::gumbel {

/// Lower/upper clamp applied to u before the double log.
inline constexpr double kUniformEpsilon = 1e-12;
inline constexpr double kDefaultTemperature = 1.0;

struct GumbelNoise {
  Eigen::VectorXd values;
};

/// -log(-log(u)) with u clamped to [eps, 1 - eps].
double gumbel_from_uniform(double u);

/// i.i.d. standard Gumbel noise. Throws ParameterError on length 0.
GumbelNoise sample_gumbel(std::size_t length, Rng& rng);

/// softmax((logits + noise) / tau), max-subtracted. Throws ParameterError
/// for tau <= 0 and ShapeError on a length mismatch.
Eigen::VectorXd gumbel_softmax(const Eigen::VectorXd& logits, double tau, const GumbelNoise& noise);

/// d y_i / d logit_j = (y_i (delta_ij - y_j)) / tau.
Eigen::MatrixXd gumbel_softmax_jacobian(const Eigen::VectorXd& y, double tau);

/// One-hot at argmax(soft), lowest index on ties. Throws NormalizationError
/// when |sum(soft) - 1| > 1e-4.
Eigen::VectorXd straight_through(const Eigen::VectorXd& soft);

/// First index of the maximum entry.
Eigen::Index argmax(const Eigen::VectorXd& v);

// Tape versions; `logits` / `soft` are 1 x V rows.
ad::Var gumbel_softmax(const ad::Var& logits, double tau, const GumbelNoise& noise);
/// Forward one-hot, backward identity.
ad::Var straight_through(const ad::Var& soft);

/// Epoch -> temperature. Constant unless decay < 1, in which case
/// tau_e = max(minimum, initial * decay^e). Always nonincreasing in e.
struct TemperatureSchedule {
  double initial = kDefaultTemperature;
  double decay = 1.0;
  double minimum = 0.0;

  void validate() const;
  double at(std::size_t epoch) const;
};

}  // namespace sslcap::gumbel
