// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "mamil/error.hpp"

namespace mamil::ad {

std::string shape_str(const Matrix& m) {
  std::ostringstream os;
  os << m.rows() << "x" << m.cols();
  return os.str();
}

namespace {

const Matrix kEmpty;

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  fail(ErrorKind::shape, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

Graph& same_graph(const char* op, Tensor a, Tensor b) {
  if (!a.valid() || !b.valid() || &a.graph() != &b.graph())
    fail(ErrorKind::invalid_argument, std::string(op) + ": operands belong to different graphs");
  return a.graph();
}

void require_same_shape(const char* op, Tensor a, Tensor b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a.value(), b.value());
}

void require_vector(const char* op, Tensor a) {
  if (a.cols() != 1)
    fail(ErrorKind::shape, std::string(op) + ": expected a column vector, got " + shape_str(a.value()));
}

// Softmax over a span of entries with max-subtraction.
template <typename In, typename Out>
void softmax_into(const In& in, Out&& out) {
  const double top = in.maxCoeff();
  out = (in.array() - top).exp();
  out /= out.sum();
}

}  // namespace

// ---------------------------------------------------------------------------
// Tensor

const Matrix& Tensor::value() const { return graph_->value(index_); }
const Matrix& Tensor::grad() const {
  return graph_->requires_grad(index_) ? graph_->grad(index_) : kEmpty;
}
bool Tensor::requires_grad() const { return graph_->requires_grad(index_); }
double Tensor::scalar() const {
  const Matrix& v = value();
  if (v.size() != 1) fail(ErrorKind::shape, "scalar(): tensor has shape " + shape_str(v));
  return v(0, 0);
}

// ---------------------------------------------------------------------------
// Graph

Tensor Graph::push(Node node) {
  if (node.requires_grad) node.grad = Matrix::Zero(node.value().rows(), node.value().cols());
  nodes_.push_back(std::move(node));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::constant(Matrix value) {
  Node n;
  n.owned = std::move(value);
  return push(std::move(n));
}

Tensor Graph::constant_scalar(double value) {
  Matrix m(1, 1);
  m(0, 0) = value;
  return constant(std::move(m));
}

Tensor Graph::variable(Matrix value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Tensor Graph::parameter(const Matrix& value, bool trainable) {
  Node n;
  n.external = &value;
  n.requires_grad = trainable;
  return push(std::move(n));
}

Tensor Graph::record(Matrix value, std::initializer_list<Tensor> operands, BackwardFn backward) {
  bool needs = false;
  for (const Tensor& t : operands) needs = needs || t.requires_grad();
  return record(std::move(value), needs, std::move(backward));
}

Tensor Graph::record(Matrix value, bool requires_grad, BackwardFn backward) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

void Graph::zero_grad() {
  for (Node& n : nodes_)
    if (n.requires_grad) n.grad.setZero();
}

void Graph::backward(Tensor loss) {
  if (&loss.graph() != this) fail(ErrorKind::invalid_argument, "backward: loss belongs to another graph");
  if (loss.value().size() != 1)
    fail(ErrorKind::shape, "backward: loss must be scalar, got " + shape_str(loss.value()));
  Node& root = nodes_[loss.index()];
  if (!root.requires_grad) return;
  root.grad(0, 0) = 1.0;
  for (std::size_t i = loss.index() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward) n.backward(*this, i);
  }
}

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(Tensor a, Tensor b) {
  Graph& g = same_graph("matmul", a, b);
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  Matrix out = a.value() * b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy * g.value(ib).transpose());
    if (g.requires_grad(ib)) g.accumulate(ib, g.value(ia).transpose() * gy);
  });
}

Tensor matmul_t(Tensor a, Tensor b) {
  Graph& g = same_graph("matmul_t", a, b);
  if (a.cols() != b.cols()) shape_error("matmul_t", a.value(), b.value());
  Matrix out = a.value() * b.value().transpose();
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy * g.value(ib));
    if (g.requires_grad(ib)) g.accumulate(ib, gy.transpose() * g.value(ia));
  });
}

Tensor transpose(Tensor a) {
  Graph& g = a.graph();
  Matrix out = a.value().transpose();
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    g.accumulate(ia, g.grad(self).transpose());
  });
}

Tensor add(Tensor a, Tensor b) {
  Graph& g = same_graph("add", a, b);
  require_same_shape("add", a, b);
  Matrix out = a.value() + b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    g.accumulate(ia, g.grad(self));
    g.accumulate(ib, g.grad(self));
  });
}

Tensor sub(Tensor a, Tensor b) {
  Graph& g = same_graph("sub", a, b);
  require_same_shape("sub", a, b);
  Matrix out = a.value() - b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    g.accumulate(ia, g.grad(self));
    g.accumulate(ib, -g.grad(self));
  });
}

Tensor mul(Tensor a, Tensor b) {
  Graph& g = same_graph("mul", a, b);
  require_same_shape("mul", a, b);
  Matrix out = a.value().cwiseProduct(b.value());
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    if (g.requires_grad(ia)) g.accumulate(ia, gy.cwiseProduct(g.value(ib)));
    if (g.requires_grad(ib)) g.accumulate(ib, gy.cwiseProduct(g.value(ia)));
  });
}

Tensor scale(Tensor a, double s) { return affine(a, s, 0.0); }

Tensor affine(Tensor a, double s, double shift) {
  Graph& g = a.graph();
  Matrix out = (a.value().array() * s + shift).matrix();
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia, s](Graph& g, std::size_t self) {
    g.accumulate(ia, g.grad(self) * s);
  });
}

Tensor add_row_bias(Tensor a, Tensor b) {
  Graph& g = same_graph("add_row_bias", a, b);
  if (b.cols() != 1 || b.rows() != a.cols()) shape_error("add_row_bias", a.value(), b.value());
  Matrix out = a.value().rowwise() + b.value().transpose().row(0);
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    g.accumulate(ia, gy);
    if (g.requires_grad(ib)) g.accumulate(ib, gy.colwise().sum().transpose());
  });
}

Tensor tanh(Tensor a) {
  Graph& g = a.graph();
  Matrix out = a.value().array().tanh().matrix();
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
#ifdef MAMIL_CORRUPT_TANH_GRAD
    // Deliberately wrong rule, compiled only into the harness-sanity build.
    g.accumulate(ia, g.grad(self).cwiseProduct((1.0 - 0.5 * y.array().square()).matrix()));
#else
    g.accumulate(ia, g.grad(self).cwiseProduct((1.0 - y.array().square()).matrix()));
#endif
  });
}

Tensor sigmoid(Tensor a) {
  Graph& g = a.graph();
  Matrix out = a.value().unaryExpr([](double x) {
    // Split by sign so exp never overflows.
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    g.accumulate(ia, g.grad(self).cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Tensor log(Tensor a) {
  Graph& g = a.graph();
  Matrix out = a.value().array().log().matrix();
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    g.accumulate(ia, g.grad(self).cwiseQuotient(g.value(ia)));
  });
}

Tensor clamp(Tensor a, double lo, double hi) {
  Graph& g = a.graph();
  Matrix out = a.value().cwiseMax(lo).cwiseMin(hi);
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia, lo, hi](Graph& g, std::size_t self) {
    const Matrix& x = g.value(ia);
    Matrix pass = g.grad(self);
    for (Eigen::Index k = 0; k < x.size(); ++k)
      if (x.data()[k] < lo || x.data()[k] > hi) pass.data()[k] = 0.0;
    g.accumulate(ia, pass);
  });
}

Tensor square(Tensor a) {
  Graph& g = a.graph();
  Matrix out = a.value().array().square().matrix();
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    g.accumulate(ia, 2.0 * g.grad(self).cwiseProduct(g.value(ia)));
  });
}

Tensor sum(Tensor a) {
  Graph& g = a.graph();
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Matrix& x = g.value(ia);
    g.accumulate(ia, Matrix::Constant(x.rows(), x.cols(), g.grad(self)(0, 0)));
  });
}

Tensor dot(Tensor a, Tensor b) {
  Graph& g = same_graph("dot", a, b);
  require_vector("dot", a);
  require_vector("dot", b);
  require_same_shape("dot", a, b);
  Matrix out(1, 1);
  out(0, 0) = a.value().col(0).dot(b.value().col(0));
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const double gy = g.grad(self)(0, 0);
    if (g.requires_grad(ia)) g.accumulate(ia, gy * g.value(ib));
    if (g.requires_grad(ib)) g.accumulate(ib, gy * g.value(ia));
  });
}

Tensor concat(Tensor a, Tensor b) {
  Graph& g = same_graph("concat", a, b);
  require_vector("concat", a);
  require_vector("concat", b);
  const Eigen::Index na = a.rows(), nb = b.rows();
  Matrix out(na + nb, 1);
  out.topRows(na) = a.value();
  out.bottomRows(nb) = b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib, na, nb](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    g.accumulate(ia, gy.topRows(na));
    g.accumulate(ib, gy.bottomRows(nb));
  });
}

Tensor hconcat(Tensor a, Tensor b) {
  Graph& g = same_graph("hconcat", a, b);
  if (a.rows() != b.rows()) shape_error("hconcat", a.value(), b.value());
  const Eigen::Index ca = a.cols(), cb = b.cols();
  Matrix out(a.rows(), ca + cb);
  out.leftCols(ca) = a.value();
  out.rightCols(cb) = b.value();
  const std::size_t ia = a.index(), ib = b.index();
  return g.record(std::move(out), {a, b}, [ia, ib, ca, cb](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    g.accumulate(ia, gy.leftCols(ca));
    g.accumulate(ib, gy.rightCols(cb));
  });
}

Tensor stack_rows(std::span<const Tensor> parts) {
  if (parts.empty()) fail(ErrorKind::shape, "stack_rows: no inputs");
  Graph& g = parts.front().graph();
  const Eigen::Index n = parts.front().rows();
  bool needs = false;
  std::vector<std::size_t> ids;
  ids.reserve(parts.size());
  for (const Tensor& p : parts) {
    same_graph("stack_rows", parts.front(), p);
    require_vector("stack_rows", p);
    if (p.rows() != n) shape_error("stack_rows", parts.front().value(), p.value());
    needs = needs || p.requires_grad();
    ids.push_back(p.index());
  }
  Matrix out(static_cast<Eigen::Index>(parts.size()), n);
  for (std::size_t k = 0; k < parts.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = parts[k].value().transpose();
  return g.record(std::move(out), needs, [ids = std::move(ids)](Graph& g, std::size_t self) {
    const Matrix& gy = g.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k)
      g.accumulate(ids[k], gy.row(static_cast<Eigen::Index>(k)).transpose());
  });
}

Tensor softmax(Tensor a) {
  require_vector("softmax", a);
  if (a.rows() == 0) fail(ErrorKind::shape, "softmax: empty input");
  Graph& g = a.graph();
  Matrix out(a.rows(), 1);
  softmax_into(a.value().col(0), out.col(0));
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    const Matrix& gy = g.grad(self);
    const double inner = gy.col(0).dot(y.col(0));
    g.accumulate(ia, y.cwiseProduct((gy.array() - inner).matrix()));
  });
}

Tensor row_softmax(Tensor a) {
  Graph& g = a.graph();
  if (a.cols() == 0) fail(ErrorKind::shape, "row_softmax: empty rows");
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) softmax_into(x.row(r), out.row(r));
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    const Matrix& gy = g.grad(self);
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double inner = gy.row(r).dot(y.row(r));
      gx.row(r) = y.row(r).cwiseProduct((gy.row(r).array() - inner).matrix());
    }
    g.accumulate(ia, gx);
  });
}

Tensor row_softmax(Tensor a, const std::vector<std::vector<std::size_t>>& support) {
  Graph& g = a.graph();
  const Matrix& x = a.value();
  if (static_cast<Eigen::Index>(support.size()) != x.rows())
    fail(ErrorKind::shape, "row_softmax: support has " + std::to_string(support.size()) + " rows, input is " +
                               shape_str(x));
  Matrix out = Matrix::Zero(x.rows(), x.cols());
  std::vector<double> buf;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const auto& idx = support[static_cast<std::size_t>(r)];
    if (idx.empty()) continue;
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j : idx) {
      if (static_cast<Eigen::Index>(j) >= x.cols())
        fail(ErrorKind::invalid_argument, "row_softmax: support index " + std::to_string(j) + " out of range for " +
                                              shape_str(x));
      top = std::max(top, x(r, static_cast<Eigen::Index>(j)));
    }
    double total = 0.0;
    for (std::size_t j : idx) total += (out(r, static_cast<Eigen::Index>(j)) = std::exp(x(r, static_cast<Eigen::Index>(j)) - top));
    for (std::size_t j : idx) out(r, static_cast<Eigen::Index>(j)) /= total;
  }
  // Off-support entries of y are zero, so the dense rule below already
  // leaves them with zero gradient.
  const std::size_t ia = a.index();
  return g.record(std::move(out), {a}, [ia](Graph& g, std::size_t self) {
    const Matrix& y = g.value(self);
    const Matrix& gy = g.grad(self);
    Matrix gx(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const double inner = gy.row(r).dot(y.row(r));
      gx.row(r) = y.row(r).cwiseProduct((gy.row(r).array() - inner).matrix());
    }
    g.accumulate(ia, gx);
  });
}

// ---------------------------------------------------------------------------
// Gradient checking

namespace {

double evaluate(const ScalarFn& fn, std::vector<Matrix>& params) {
  Graph g;
  std::vector<Tensor> leaves;
  leaves.reserve(params.size());
  for (const Matrix& p : params) leaves.push_back(g.constant(p));
  const double v = fn(g, leaves).scalar();
  if (!std::isfinite(v)) fail(ErrorKind::divergence, "grad_check: function returned a non-finite value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& fn, std::vector<Matrix>& params, double eps) {
  require(eps > 0.0, "grad_check: eps must be positive");
  std::vector<Matrix> analytic;
  {
    Graph g;
    std::vector<Tensor> leaves;
    for (const Matrix& p : params) leaves.push_back(g.parameter(p));
    Tensor out = fn(g, leaves);
    if (!std::isfinite(out.scalar())) fail(ErrorKind::divergence, "grad_check: function returned a non-finite value");
    g.backward(out);
    for (const Tensor& t : leaves) analytic.push_back(t.grad());
  }

  GradCheckReport report;
  report.per_param.assign(params.size(), 0.0);
  for (std::size_t p = 0; p < params.size(); ++p) {
    Matrix& m = params[p];
    for (Eigen::Index k = 0; k < m.size(); ++k) {
      const double saved = m.data()[k];
      m.data()[k] = saved + eps;
      const double up = evaluate(fn, params);
      m.data()[k] = saved - eps;
      const double down = evaluate(fn, params);
      m.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double err = std::abs(analytic[p].data()[k] - numeric) / std::max(1.0, std::abs(numeric));
      report.per_param[p] = std::max(report.per_param[p], err);
    }
    report.max_error = std::max(report.max_error, report.per_param[p]);
  }
  return report;
}

}  // namespace mamil::ad
