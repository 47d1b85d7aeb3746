#include "tar2/autodiff.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <utility>

#include "tar2/errors.hpp"

namespace tar2::ad {

const MatrixXd& Var::value() const { return tape_->value(id_); }

Var Tape::push(MatrixXd value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(MatrixXd value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(const MatrixXd& value, MatrixXd* grad_sink) {
  Var v = push(value, true, nullptr);
  nodes_.back().sink = grad_sink;
  return v;
}

MatrixXd& Tape::grad_acc(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(Var root, double seed) {
  if (root.tape() != this || root.rows() != 1 || root.cols() != 1) {
    throw DimensionError("autodiff: backward() needs a 1x1 root on this tape");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!requires_grad(root.id())) return;
  grad_acc(root.id())(0, 0) = seed;
  for (int id = root.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.sink != nullptr) *n.sink += n.grad;
  }
}

namespace {

bool any_grad(std::initializer_list<Var> vs) {
  for (const Var& v : vs) {
    if (v.tape()->requires_grad(v.id())) return true;
  }
  return false;
}

void check_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw DimensionError("autodiff: operands live on different tapes");
}

}  // namespace

double softplus(double x) {
  // log(1 + e^x) without overflow for large |x|
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.rows()) throw DimensionError("autodiff: matmul shape mismatch");
  Tape& tape = *a.tape();
  const int ia = a.id(), ib = b.id();
  return tape.push(a.value() * b.value(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const MatrixXd& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_acc(ia).noalias() += g * t.value(ib).transpose();
    if (t.requires_grad(ib)) t.grad_acc(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Var matmul_nt(Var a, Var b) {
  check_same_tape(a, b);
  if (a.cols() != b.cols()) throw DimensionError("autodiff: matmul_nt shape mismatch");
  Tape& tape = *a.tape();
  const int ia = a.id(), ib = b.id();
  return tape.push(a.value() * b.value().transpose(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    const MatrixXd& g = t.grad(self);
    if (t.requires_grad(ia)) t.grad_acc(ia).noalias() += g * t.value(ib);
    if (t.requires_grad(ib)) t.grad_acc(ib).noalias() += g.transpose() * t.value(ia);
  });
}

Var add(Var a, Var b) {
  check_same_tape(a, b);
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("autodiff: add shape mismatch");
  Tape& tape = *a.tape();
  const int ia = a.id(), ib = b.id();
  return tape.push(a.value() + b.value(), any_grad({a, b}), [ia, ib](Tape& t, int self) {
    if (t.requires_grad(ia)) t.grad_acc(ia) += t.grad(self);
    if (t.requires_grad(ib)) t.grad_acc(ib) += t.grad(self);
  });
}

Var add_row(Var a, Var row) {
  check_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw DimensionError("autodiff: add_row shape mismatch");
  Tape& tape = *a.tape();
  const int ia = a.id(), ir = row.id();
  MatrixXd out = a.value().rowwise() + row.value().row(0);
  return tape.push(std::move(out), any_grad({a, row}), [ia, ir](Tape& t, int self) {
    if (t.requires_grad(ia)) t.grad_acc(ia) += t.grad(self);
    if (t.requires_grad(ir)) t.grad_acc(ir) += t.grad(self).colwise().sum();
  });
}

Var scale(Var a, double s) {
  Tape& tape = *a.tape();
  const int ia = a.id();
  return tape.push(a.value() * s, any_grad({a}), [ia, s](Tape& t, int self) {
    t.grad_acc(ia) += t.grad(self) * s;
  });
}

Var tanh(Var a) {
  Tape& tape = *a.tape();
  const int ia = a.id();
  MatrixXd out = a.value().array().tanh().matrix();
  return tape.push(std::move(out), any_grad({a}), [ia](Tape& t, int self) {
    const auto y = t.value(self).array();
    t.grad_acc(ia).array() += t.grad(self).array() * (1.0 - y * y);
  });
}

Var softplus(Var a) {
  Tape& tape = *a.tape();
  const int ia = a.id();
  MatrixXd out = a.value().unaryExpr([](double x) { return softplus(x); });
  return tape.push(std::move(out), any_grad({a}), [ia](Tape& t, int self) {
    const MatrixXd d = t.value(ia).unaryExpr([](double x) { return sigmoid(x); });
    t.grad_acc(ia).array() += t.grad(self).array() * d.array();
  });
}

Var masked_softmax_rows(Var a, const BoolMatrix& mask) {
  if (mask.rows() != a.rows() || mask.cols() != a.cols()) {
    throw DimensionError("autodiff: softmax mask shape mismatch");
  }
  Tape& tape = *a.tape();
  const int ia = a.id();
  const MatrixXd& x = a.value();
  MatrixXd out = MatrixXd::Zero(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c)) m = std::max(m, x(r, c));
    }
    if (!std::isfinite(m)) throw NumericError("autodiff: softmax row has no finite allowed entry");
    double z = 0.0;
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      if (mask(r, c)) {
        out(r, c) = std::exp(x(r, c) - m);
        z += out(r, c);
      }
    }
    out.row(r) /= z;
  }
  return tape.push(std::move(out), any_grad({a}), [ia](Tape& t, int self) {
    const MatrixXd& y = t.value(self);
    const MatrixXd& g = t.grad(self);
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    t.grad_acc(ia).array() += y.array() * (g.colwise() - dot).array();
  });
}

Var gather_rows(Var a, std::vector<int> index) {
  Tape& tape = *a.tape();
  const int ia = a.id();
  MatrixXd out(static_cast<Eigen::Index>(index.size()), a.cols());
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] < 0 || index[r] >= a.rows()) throw DimensionError("autodiff: gather_rows index out of range");
    out.row(static_cast<Eigen::Index>(r)) = a.value().row(index[r]);
  }
  return tape.push(std::move(out), any_grad({a}), [ia, index = std::move(index)](Tape& t, int self) {
    MatrixXd& acc = t.grad_acc(ia);
    const MatrixXd& g = t.grad(self);
    for (std::size_t r = 0; r < index.size(); ++r) acc.row(index[r]) += g.row(static_cast<Eigen::Index>(r));
  });
}

Var sum(Var a) {
  Tape& tape = *a.tape();
  const int ia = a.id();
  MatrixXd out(1, 1);
  out(0, 0) = a.value().sum();
  return tape.push(std::move(out), any_grad({a}), [ia](Tape& t, int self) {
    t.grad_acc(ia).array() += t.grad(self)(0, 0);
  });
}

}  // namespace tar2::ad
