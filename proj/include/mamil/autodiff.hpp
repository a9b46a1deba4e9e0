// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// Define-by-run reverse-mode differentiation over dense 2-D float64 arrays.
//
// A Graph records every operation in the order it is executed. Nodes are
// either leaves (constants, trainable parameters) or results of an op, and
// each result carries a closure that pushes its gradient back to its
// operands. Because operands are always recorded before their results,
// replaying the closures in reverse recording order is a valid topological
// order and no sorting is needed.
//
// Vectors are column vectors (rows x 1). Parameters may be bound by
// reference so that several graphs can share one read-only parameter set.

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace mamil::ad {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

std::string shape_str(const Matrix& m);

class Graph;

// Lightweight handle to a node inside a Graph. Copyable; valid while the
// owning Graph lives.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* graph, std::size_t index) : graph_(graph), index_(index) {}

  const Matrix& value() const;
  // Empty (0x0) when the node does not participate in differentiation.
  const Matrix& grad() const;
  bool requires_grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const;

  Graph& graph() const { return *graph_; }
  std::size_t index() const { return index_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t index_ = 0;
};

class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Tensor constant(Matrix value);
  Tensor constant_scalar(double value);
  // Trainable leaf owning its value.
  Tensor variable(Matrix value);
  // Leaf bound to external storage; `value` must outlive the graph and must
  // not change while the graph is in use.
  Tensor parameter(const Matrix& value, bool trainable = true);

  // Records an op result. `requires_grad` is true iff any operand requires it.
  Tensor record(Matrix value, std::initializer_list<Tensor> operands, BackwardFn backward);
  Tensor record(Matrix value, bool requires_grad, BackwardFn backward);

  void zero_grad();
  void backward(Tensor loss);

  std::size_t size() const { return nodes_.size(); }

  const Matrix& value(std::size_t i) const { return nodes_[i].value(); }
  const Matrix& grad(std::size_t i) const { return nodes_[i].grad; }
  bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }
  // Adds `delta` into node i's gradient; no-op for nodes outside the
  // differentiated subgraph.
  template <typename Expr>
  void accumulate(std::size_t i, const Expr& delta) {
    Node& n = nodes_[i];
    if (n.requires_grad) n.grad += delta;
  }

 private:
  struct Node {
    Matrix owned;
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    BackwardFn backward;
    const Matrix& value() const { return external ? *external : owned; }
  };

  Tensor push(Node node);

  // deque keeps node addresses stable while the graph grows.
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Operations. All operands must belong to the same Graph. Shape violations
// throw mamil::Error(ErrorKind::shape) naming both shapes.

Tensor matmul(Tensor a, Tensor b);    // a * b
Tensor matmul_t(Tensor a, Tensor b);  // a * b^T
Tensor transpose(Tensor a);
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);  // elementwise
Tensor scale(Tensor a, double s);
Tensor affine(Tensor a, double s, double shift);  // s * a + shift, elementwise
// a (m x n) plus the column vector b (n x 1) added to every row.
Tensor add_row_bias(Tensor a, Tensor b);
Tensor tanh(Tensor a);
Tensor sigmoid(Tensor a);
Tensor log(Tensor a);
// Clamp into [lo, hi]; gradient passes only where the input lies inside.
Tensor clamp(Tensor a, double lo, double hi);
Tensor square(Tensor a);
Tensor sum(Tensor a);  // 1x1
Tensor dot(Tensor a, Tensor b);  // vectors of equal length -> 1x1
// Appends two column vectors.
Tensor concat(Tensor a, Tensor b);
// Places b's columns to the right of a's; row counts must agree.
Tensor hconcat(Tensor a, Tensor b);
// Row k of the result is the transpose of column vector parts[k].
Tensor stack_rows(std::span<const Tensor> parts);
// Softmax of a non-empty column vector.
Tensor softmax(Tensor a);
// Row-wise softmax of a matrix.
Tensor row_softmax(Tensor a);
// Row-wise softmax where row i only ranges over column indices support[i];
// other entries are exactly zero and rows with an empty support are all zero.
Tensor row_softmax(Tensor a, const std::vector<std::vector<std::size_t>>& support);

// ---------------------------------------------------------------------------
// Central-difference gradient checking.

struct GradCheckReport {
  std::vector<double> per_param;  // max relative error per parameter
  double max_error = 0.0;
};

// Builds the scalar under test inside the given graph from the parameter
// leaves (one per entry of `params`, in order).
using ScalarFn = std::function<Tensor(Graph&, std::span<const Tensor>)>;

// Compares analytic gradients with central differences of step `eps`. The
// error of one coordinate is |analytic - numeric| / max(1, |numeric|).
// `params` is perturbed in place and restored before returning.
GradCheckReport grad_check(const ScalarFn& fn, std::vector<Matrix>& params, double eps);

}  // namespace mamil::ad
