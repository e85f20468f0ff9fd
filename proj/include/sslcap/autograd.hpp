// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

// Minimal reverse-mode differentiation over dense double matrices.
//
// A Tape records every operation performed on its Vars; backward() replays
// the record in reverse. Row vectors are 1 x n matrices throughout, and
// linear layers use the x * W convention (W is in_dim x out_dim).

#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

namespace sslcap::ad {

using Matrix = Eigen::MatrixXd;

/// A named trainable tensor. Values are kept representable in f32 so that
/// checkpoints (which store f32) round-trip without loss.
struct Parameter {
  std::string name;
  Matrix value;
  bool trainable = true;
};

/// Rounds every entry to the nearest f32.
void round_to_f32(Matrix& m);

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Matrix& out_grad)>;

  /// With gradients disabled, parameters bind as constants and no backward
  /// closures are kept; use for inference.
  explicit Tape(bool gradients = true) : gradients_(gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  /// A free input whose gradient can be read back with grad().
  Var leaf(Matrix value);
  /// Binds a parameter; untrainable parameters (or any parameter on a
  /// gradient-free tape) become constants. Binding the
  /// same parameter twice returns the same Var.
  Var parameter(const Parameter& p);

  /// Records an op. `backward` is dropped when no parent needs a gradient.
  Var record(Matrix value, bool requires_grad, Backward backward);

  bool requires_grad(const Var& v) const { return nodes_[idx(v)].requires_grad; }
  const Matrix& value(const Var& v) const { return nodes_[idx(v)].value; }

  /// Accumulates d(root)/d(node) for every recorded node. root must be 1 x 1.
  void backward(const Var& root);

  /// Gradient of the last backward() root w.r.t. v; zeros if v was unreached.
  Matrix grad(const Var& v) const;
  /// Gradient w.r.t. a bound parameter, or nullptr if it never entered the tape.
  const Matrix* parameter_grad(const Parameter& p) const;

  void accumulate(const Var& v, const Matrix& g);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Backward backward;
    bool requires_grad = false;
  };

  std::size_t idx(const Var& v) const { return static_cast<std::size_t>(v.id_); }

  bool gradients_ = true;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, int> bound_;
};

// ---- elementwise / shape ops ---------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var hadamard(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// m (r x c) + row (1 x c) broadcast over rows.
Var add_row(const Var& m, const Var& row);
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var tanh(const Var& a);
Var relu(const Var& a);

Var rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var vstack(const std::vector<Var>& parts);
Var hstack(const std::vector<Var>& parts);
/// Row-major reshape (element order is read row by row).
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);

// ---- reductions ------------------------------------------------------------

Var sum(const Var& a);
/// Column sums: r x c -> 1 x c.
Var sum_rows(const Var& a);
/// Single element (r, c) as 1 x 1.
Var element(const Var& a, Eigen::Index r, Eigen::Index c);
/// Frobenius inner product -> 1 x 1.
Var dot(const Var& a, const Var& b);
Var l2_normalize(const Var& a);
Var cosine(const Var& a, const Var& b);

// ---- normalisation ---------------------------------------------------------

Var softmax_rows(const Var& a);
Var log_softmax_rows(const Var& a);
/// Per-row layer norm with 1 x c gain and bias.
Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);

/// Forward value replaced by `forward`, gradient passed to `a` unchanged.
Var straight_through(const Var& a, Matrix forward);

}  // namespace sslcap::ad
