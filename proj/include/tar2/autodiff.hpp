#pragma once

// Minimal reverse-mode differentiation over dense Eigen matrices.
//
// A Tape records every intermediate matrix together with a closure that
// pushes the adjoint of that node back into its parents. Parameters are
// leaves bound to an external gradient buffer; backward() accumulates into
// those buffers. Nodes that do not depend on any parameter are never visited
// in the backward sweep.

#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace tar2::ad {

using Eigen::MatrixXd;
using BoolMatrix = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const MatrixXd& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Scalar value of a 1x1 node.
  double item() const { return value()(0, 0); }

  Tape* tape() const { return tape_; }
  int id() const { return id_; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(MatrixXd value);
  /// Leaf whose adjoint is added to `grad_sink` by backward().
  Var parameter(const MatrixXd& value, MatrixXd* grad_sink);

  /// Reverse sweep from a 1x1 node with the given seed adjoint.
  void backward(Var root, double seed = 1.0);

  std::size_t size() const { return nodes_.size(); }

  // Used by the op implementations.
  using Backward = std::function<void(Tape&, int self)>;
  Var push(MatrixXd value, bool requires_grad, Backward backward);
  const MatrixXd& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  const MatrixXd& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  /// Adjoint accumulator of a node; allocated on first use.
  MatrixXd& grad_acc(int id);

 private:
  struct Node {
    MatrixXd value;
    MatrixXd grad;
    bool requires_grad = false;
    Backward backward;
    MatrixXd* sink = nullptr;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x C row to every row of a.
Var add_row(Var a, Var row);
Var scale(Var a, double s);
Var tanh(Var a);
Var softplus(Var a);
/// Row-wise softmax restricted to entries where mask is true; masked entries
/// are exactly zero. Every row must have at least one allowed entry.
Var masked_softmax_rows(Var a, const BoolMatrix& mask);
/// out.row(r) = a.row(index[r])
Var gather_rows(Var a, std::vector<int> index);
/// 1x1 sum of all entries.
Var sum(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator*(Var a, Var b) { return matmul(a, b); }

double softplus(double x);
double sigmoid(double x);

}  // namespace tar2::ad
