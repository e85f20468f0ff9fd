// Copyright (c) 2026, The sslcap Authors
// SPDX-License-Identifier: Apache-2.0

#include "sslcap/autograd.hpp"

#include <cmath>
#include <utility>

#include "sslcap/error.hpp"

namespace sslcap::ad {

void round_to_f32(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
  }
}

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("scalar() on a non-scalar Var");
  return v(0, 0);
}

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::leaf(Matrix value) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, true});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Tape::parameter(const Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  Var v = (p.trainable && gradients_) ? leaf(p.value) : constant(p.value);
  bound_.emplace(&p, v.id_);
  return v;
}

Var Tape::record(Matrix value, bool requires_grad, Backward backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

void Tape::accumulate(const Var& v, const Matrix& g) {
  Node& n = nodes_[idx(v)];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

void Tape::backward(const Var& root) {
  if (root.tape_ != this) throw ShapeError("backward: Var belongs to another tape");
  const Matrix& rv = nodes_[idx(root)].value;
  if (rv.rows() != 1 || rv.cols() != 1) throw ShapeError("backward: root must be 1 x 1");
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[idx(root)].requires_grad) return;
  nodes_[idx(root)].grad = Matrix::Ones(1, 1);
  for (int i = root.id_; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.backward || n.grad.size() == 0) continue;
    // Copy: the callback may not alias into the vector being traversed.
    const Matrix g = n.grad;
    n.backward(*this, g);
  }
}

Matrix Tape::grad(const Var& v) const {
  const Node& n = nodes_[idx(v)];
  if (n.grad.size() == 0) return Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

const Matrix* Tape::parameter_grad(const Parameter& p) const {
  auto it = bound_.find(&p);
  if (it == bound_.end()) return nullptr;
  const Node& n = nodes_[static_cast<std::size_t>(it->second)];
  if (!n.requires_grad) return nullptr;
  return &n.grad;
}

namespace {

Tape& tape_of(const Var& a) {
  if (!a.valid()) throw ShapeError("operation on an unbound Var");
  return *a.tape();
}

Tape& tape_of(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw ShapeError("operands live on different tapes");
  return tape_of(a);
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "add");
  return t.record(a.value() + b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, g);
                  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "sub");
  return t.record(a.value() - b.value(), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g);
                    tp.accumulate(b, -g);
                  });
}

Var hadamard(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "hadamard");
  return t.record(a.value().cwiseProduct(b.value()), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, g.cwiseProduct(tp.value(b)));
                    tp.accumulate(b, g.cwiseProduct(tp.value(a)));
                  });
}

Var scale(const Var& a, double s) {
  Tape& t = tape_of(a);
  return t.record(a.value() * s, t.requires_grad(a),
                  [a, s](Tape& tp, const Matrix& g) { tp.accumulate(a, g * s); });
}

Var add_row(const Var& m, const Var& row) {
  Tape& t = tape_of(m, row);
  if (row.rows() != 1 || row.cols() != m.cols()) throw ShapeError("add_row: bias shape mismatch");
  Matrix out = m.value();
  out.rowwise() += row.value().row(0);
  return t.record(std::move(out), t.requires_grad(m) || t.requires_grad(row),
                  [m, row](Tape& tp, const Matrix& g) {
                    tp.accumulate(m, g);
                    tp.accumulate(row, g.colwise().sum());
                  });
}

Var matmul(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()));
  }
  const bool ga = t.requires_grad(a);
  const bool gb = t.requires_grad(b);
  return t.record(a.value() * b.value(), ga || gb, [a, b, ga, gb](Tape& tp, const Matrix& g) {
    if (ga) tp.accumulate(a, g * tp.value(b).transpose());
    if (gb) tp.accumulate(b, tp.value(a).transpose() * g);
  });
}

Var transpose(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().transpose(), t.requires_grad(a),
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g.transpose()); });
}

Var tanh(const Var& a) {
  Tape& t = tape_of(a);
  Matrix y = a.value().array().tanh().matrix();
  Matrix slope = (1.0 - y.array().square()).matrix();
  return t.record(std::move(y), t.requires_grad(a), [a, slope](Tape& tp, const Matrix& g) {
    tp.accumulate(a, g.cwiseProduct(slope));
  });
}

Var relu(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().cwiseMax(0.0), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(a);
    tp.accumulate(a, (x.array() > 0.0).select(g, 0.0).matrix());
  });
}

Var rows(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("rows: out of range");
  return t.record(a.value().middleRows(start, count), t.requires_grad(a),
                  [a, start, count](Tape& tp, const Matrix& g) {
                    Matrix full = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
                    full.middleRows(start, count) = g;
                    tp.accumulate(a, full);
                  });
}

Var cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  Tape& t = tape_of(a);
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("cols: out of range");
  return t.record(a.value().middleCols(start, count), t.requires_grad(a),
                  [a, start, count](Tape& tp, const Matrix& g) {
                    Matrix full = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
                    full.middleCols(start, count) = g;
                    tp.accumulate(a, full);
                  });
}

Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vstack: no inputs");
  Tape& t = tape_of(parts.front());
  Eigen::Index total = 0;
  const Eigen::Index c = parts.front().cols();
  bool needs = false;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw ShapeError("vstack: operands live on different tapes");
    if (p.cols() != c) throw ShapeError("vstack: column mismatch");
    total += p.rows();
    needs = needs || t.requires_grad(p);
  }
  Matrix out(total, c);
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return t.record(std::move(out), needs, [parts](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      const Eigen::Index n = tp.value(p).rows();
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleRows(off, n));
      off += n;
    }
  });
}

Var hstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hstack: no inputs");
  Tape& t = tape_of(parts.front());
  Eigen::Index total = 0;
  const Eigen::Index r = parts.front().rows();
  bool needs = false;
  for (const auto& p : parts) {
    if (p.tape() != &t) throw ShapeError("hstack: operands live on different tapes");
    if (p.rows() != r) throw ShapeError("hstack: row mismatch");
    total += p.cols();
    needs = needs || t.requires_grad(p);
  }
  Matrix out(r, total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), needs, [parts](Tape& tp, const Matrix& g) {
    Eigen::Index off = 0;
    for (const auto& p : parts) {
      const Eigen::Index n = tp.value(p).cols();
      if (tp.requires_grad(p)) tp.accumulate(p, g.middleCols(off, n));
      off += n;
    }
  });
}

Var reshape(const Var& a, Eigen::Index r, Eigen::Index c) {
  Tape& t = tape_of(a);
  if (r * c != a.value().size()) throw ShapeError("reshape: element count mismatch");
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const RowMajor src = a.value();
  Matrix out = Eigen::Map<const RowMajor>(src.data(), r, c);
  const Eigen::Index ar = a.rows();
  const Eigen::Index ac = a.cols();
  return t.record(std::move(out), t.requires_grad(a), [a, ar, ac](Tape& tp, const Matrix& g) {
    const RowMajor gr = g;
    tp.accumulate(a, Matrix(Eigen::Map<const RowMajor>(gr.data(), ar, ac)));
  });
}

Var sum(const Var& a) {
  Tape& t = tape_of(a);
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    const Matrix& x = tp.value(a);
    tp.accumulate(a, Matrix::Constant(x.rows(), x.cols(), g(0, 0)));
  });
}

Var sum_rows(const Var& a) {
  Tape& t = tape_of(a);
  return t.record(a.value().colwise().sum(), t.requires_grad(a), [a](Tape& tp, const Matrix& g) {
    const Eigen::Index n = tp.value(a).rows();
    tp.accumulate(a, g.replicate(n, 1));
  });
}

Var element(const Var& a, Eigen::Index r, Eigen::Index c) {
  Tape& t = tape_of(a);
  if (r < 0 || c < 0 || r >= a.rows() || c >= a.cols()) throw ShapeError("element: out of range");
  Matrix out(1, 1);
  out(0, 0) = a.value()(r, c);
  return t.record(std::move(out), t.requires_grad(a), [a, r, c](Tape& tp, const Matrix& g) {
    Matrix full = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
    full(r, c) = g(0, 0);
    tp.accumulate(a, full);
  });
}

Var dot(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "dot");
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(b.value()).sum();
  return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                  [a, b](Tape& tp, const Matrix& g) {
                    tp.accumulate(a, tp.value(b) * g(0, 0));
                    tp.accumulate(b, tp.value(a) * g(0, 0));
                  });
}

Var l2_normalize(const Var& a) {
  Tape& t = tape_of(a);
  const double norm = a.value().norm();
  if (!(norm > 0.0)) throw DegenerateVectorError("l2_normalize: zero-norm vector");
  Matrix out = a.value() / norm;
  return t.record(out, t.requires_grad(a), [a, out, norm](Tape& tp, const Matrix& g) {
    const double proj = out.cwiseProduct(g).sum();
    tp.accumulate(a, (g - out * proj) / norm);
  });
}

Var cosine(const Var& a, const Var& b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a, b, "cosine");
  const double na = a.value().norm();
  const double nb = b.value().norm();
  if (!(na > 0.0) || !(nb > 0.0)) throw DegenerateVectorError("cosine: zero-norm vector");
  const double c = a.value().cwiseProduct(b.value()).sum() / (na * nb);
  Matrix out(1, 1);
  out(0, 0) = c;
  return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                  [a, b, na, nb, c](Tape& tp, const Matrix& g) {
                    const Matrix& av = tp.value(a);
                    const Matrix& bv = tp.value(b);
                    const double s = g(0, 0);
                    tp.accumulate(a, (bv / (na * nb) - av * (c / (na * na))) * s);
                    tp.accumulate(b, (av / (na * nb) - bv * (c / (nb * nb))) * s);
                  });
}

namespace {

Matrix softmax_value(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    out.row(r) = (x.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

}  // namespace

Var softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  Matrix y = softmax_value(a.value());
  return t.record(y, t.requires_grad(a), [a, y](Tape& tp, const Matrix& g) {
    Matrix dx = y.cwiseProduct(g);
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      dx.row(r) -= y.row(r) * dx.row(r).sum();
    }
    tp.accumulate(a, dx);
  });
}

Var log_softmax_rows(const Var& a) {
  Tape& t = tape_of(a);
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    out.row(r) = (x.row(r).array() - lse).matrix();
  }
  Matrix probs = out.array().exp().matrix();
  return t.record(std::move(out), t.requires_grad(a), [a, probs](Tape& tp, const Matrix& g) {
    Matrix dx = g;
    for (Eigen::Index r = 0; r < g.rows(); ++r) dx.row(r) -= probs.row(r) * g.row(r).sum();
    tp.accumulate(a, dx);
  });
}

Var layer_norm_rows(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& t = tape_of(x, gain);
  if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols()) {
    throw ShapeError("layer_norm_rows: gain/bias shape mismatch");
  }
  const Matrix& xv = x.value();
  const Eigen::Index n = xv.cols();
  Matrix xhat(xv.rows(), n);
  Eigen::VectorXd inv_std(xv.rows());
  for (Eigen::Index r = 0; r < xv.rows(); ++r) {
    const double mu = xv.row(r).mean();
    const double var = (xv.row(r).array() - mu).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = ((xv.row(r).array() - mu) * inv_std(r)).matrix();
  }
  Matrix out = xhat;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    out.row(r) = out.row(r).cwiseProduct(gain.value().row(0)) + bias.value().row(0);
  }
  const bool needs = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  return t.record(std::move(out), needs, [x, gain, bias, xhat, inv_std, n](Tape& tp, const Matrix& g) {
    const Matrix& gv = tp.value(gain);
    tp.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
    tp.accumulate(bias, g.colwise().sum());
    if (!tp.requires_grad(x)) return;
    Matrix dx(g.rows(), n);
    for (Eigen::Index r = 0; r < g.rows(); ++r) {
      const Eigen::RowVectorXd dxhat = g.row(r).cwiseProduct(gv.row(0));
      const double mean_d = dxhat.mean();
      const double mean_dx = dxhat.cwiseProduct(xhat.row(r)).mean();
      dx.row(r) = ((dxhat.array() - mean_d - xhat.row(r).array() * mean_dx) * inv_std(r)).matrix();
    }
    tp.accumulate(x, dx);
  });
}

Var straight_through(const Var& a, Matrix forward) {
  Tape& t = tape_of(a);
  if (forward.rows() != a.rows() || forward.cols() != a.cols()) {
    throw ShapeError("straight_through: forward shape mismatch");
  }
  return t.record(std::move(forward), t.requires_grad(a),
                  [a](Tape& tp, const Matrix& g) { tp.accumulate(a, g); });
}

}  // namespace sslcap::ad
