// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>

#include "mamil/error.hpp"
#include "mamil/rng.hpp"

namespace mamil {

// ---------------------------------------------------------------------------
// Config / params

void ModelConfig::validate() const {
  require(input_dim >= 1, "model: input_dim must be >= 1");
  require(templates >= 1, "model: templates (C) must be >= 1");
  require(dim_f >= 1, "model: dim_f must be >= 1");
  require(radius >= 1, "model: radius must be >= 1");
  for (std::size_t w : encoder_layers) require(w >= 1, "model: encoder layer widths must be >= 1");
  for (std::size_t w : classifier_layers) require(w >= 1, "model: classifier layer widths must be >= 1");
}

bool Params::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const Entry& e) { return e.name == name; });
}

std::size_t Params::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].name == name) return i;
  fail(ErrorKind::invalid_argument, "unknown parameter '" + std::string(name) + "'");
}

const Matrix& Params::at(std::string_view name) const { return entries_[index_of(name)].value; }
Matrix& Params::at(std::string_view name) { return entries_[index_of(name)].value; }

void Params::add(std::string name, Matrix value) {
  require(!contains(name), "duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), std::move(value)});
}

bool Params::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(), [](const Entry& e) { return e.value.allFinite(); });
}

bool operator==(const Params& a, const Params& b) {
  if (a.entries_.size() != b.entries_.size()) return false;
  for (std::size_t i = 0; i < a.entries_.size(); ++i) {
    const auto& x = a.entries_[i];
    const auto& y = b.entries_[i];
    if (x.name != y.name || x.value.rows() != y.value.rows() || x.value.cols() != y.value.cols()) return false;
    // Bitwise comparison so that -0.0 / NaN payloads are not glossed over.
    if (!std::equal(x.value.data(), x.value.data() + x.value.size(), y.value.data(),
                    [](double u, double v) { return std::memcmp(&u, &v, sizeof(double)) == 0; }))
      return false;
  }
  return true;
}

std::string template_name(std::size_t k) { return "P" + std::to_string(k); }

namespace {

Matrix uniform_matrix(std::size_t rows, std::size_t cols, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = dist(rng);
  return m;
}

std::uint64_t param_seed(std::uint64_t root, const std::string& name) {
  return derive_seed(derive_seed(root, "init"), name);
}

struct Shape {
  std::string name;
  std::size_t rows, cols;
};

std::vector<Shape> expected_shapes(const ModelConfig& c) {
  std::vector<Shape> out;
  std::size_t in = c.input_dim;
  std::vector<std::size_t> widths = c.encoder_layers;
  widths.push_back(c.dim_f);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    out.push_back({"enc.W" + std::to_string(l + 1), widths[l], in});
    out.push_back({"enc.b" + std::to_string(l + 1), widths[l], 1});
    in = widths[l];
  }
  if (c.neighborhood) out.push_back({"V_nb", c.dim_f, c.dim_f});
  const std::size_t dt = c.dim_t();
  for (std::size_t k = 1; k <= c.templates; ++k) out.push_back({template_name(k), dt, 1});
  out.push_back({"V_tp", dt, dt});
  out.push_back({"G", dt, 1});
  out.push_back({"V_fin", dt, dt});
  in = dt;
  widths = c.classifier_layers;
  widths.push_back(1);
  for (std::size_t l = 0; l < widths.size(); ++l) {
    out.push_back({"cls.W" + std::to_string(l + 1), widths[l], in});
    out.push_back({"cls.b" + std::to_string(l + 1), widths[l], 1});
    in = widths[l];
  }
  return out;
}

}  // namespace

std::vector<std::string> parameter_names(const ModelConfig& config) {
  std::vector<std::string> names;
  for (const Shape& s : expected_shapes(config)) names.push_back(s.name);
  return names;
}

Model Model::init(const ModelConfig& config) {
  config.validate();
  Model model;
  model.config = config;
  for (const Shape& s : expected_shapes(config)) {
    const bool is_bias = s.name.find(".b") != std::string::npos;
    if (is_bias) {
      model.params.add(s.name, Matrix::Zero(static_cast<Eigen::Index>(s.rows), 1));
    } else {
      // Templates and G are vectors scored against dim_t inputs.
      const std::size_t fan_in = s.cols == 1 ? s.rows : s.cols;
      model.params.add(s.name, uniform_matrix(s.rows, s.cols, fan_in, param_seed(config.seed, s.name)));
    }
  }
  return model;
}

void Model::validate() const {
  config.validate();
  const auto shapes = expected_shapes(config);
  if (shapes.size() != params.size())
    fail(ErrorKind::mismatch, "model has " + std::to_string(params.size()) + " parameters, config implies " +
                                  std::to_string(shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& e = params.entries()[i];
    const Shape& s = shapes[i];
    if (e.name != s.name)
      fail(ErrorKind::mismatch, "parameter " + std::to_string(i) + " is '" + e.name + "', expected '" + s.name + "'");
    if (e.value.rows() != static_cast<Eigen::Index>(s.rows) || e.value.cols() != static_cast<Eigen::Index>(s.cols))
      fail(ErrorKind::mismatch, "parameter '" + e.name + "' has shape " + ad::shape_str(e.value) + ", expected " +
                                    std::to_string(s.rows) + "x" + std::to_string(s.cols));
  }
  if (!params.all_finite()) fail(ErrorKind::mismatch, "model parameters contain non-finite values");
}

// ---------------------------------------------------------------------------
// Graph recording

ParamLeaves bind_params(ad::Graph& g, const Params& params, bool trainable) {
  ParamLeaves leaves;
  leaves.params = &params;
  leaves.tensors.reserve(params.size());
  for (const auto& e : params.entries()) leaves.tensors.push_back(g.parameter(e.value, trainable));
  return leaves;
}

Matrix bag_matrix(const Bag& bag) {
  require(!bag.instances.empty(), "bag " + std::to_string(bag.id) + " is empty");
  const std::size_t d = bag.instances.front().features.size();
  Matrix X(static_cast<Eigen::Index>(bag.size()), static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < bag.size(); ++i) {
    const auto& f = bag.instances[i].features;
    require(f.size() == d, "bag " + std::to_string(bag.id) + " has ragged instances");
    std::copy(f.begin(), f.end(), X.row(static_cast<Eigen::Index>(i)).data());
  }
  return X;
}

namespace {

// tanh MLP applied to every row of X.
ad::Tensor mlp_rows(const ParamLeaves& leaves, const std::string& prefix, std::size_t layers, ad::Tensor X) {
  ad::Tensor h = X;
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::string id = std::to_string(l);
    h = ad::tanh(ad::add_row_bias(ad::matmul_t(h, leaves.get(prefix + ".W" + id)), leaves.get(prefix + ".b" + id)));
  }
  return h;
}

ad::Tensor classifier_logit(const ParamLeaves& leaves, const ModelConfig& c, ad::Tensor Z) {
  ad::Tensor h = Z;
  const std::size_t layers = c.classifier_layers.size() + 1;
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::string id = std::to_string(l);
    h = ad::add(ad::matmul(leaves.get("cls.W" + id), h), leaves.get("cls.b" + id));
    if (l < layers) h = ad::tanh(h);
  }
  return h;
}

ad::Tensor encoder(const ParamLeaves& leaves, const ModelConfig& c, ad::Tensor X) {
  if (static_cast<std::size_t>(X.cols()) != c.input_dim)
    fail(ErrorKind::shape, "encoder: input has " + std::to_string(X.cols()) + " features, model expects " +
                               std::to_string(c.input_dim));
  return mlp_rows(leaves, "enc", c.encoder_layers.size() + 1, X);
}

}  // namespace

ForwardNodes record_forward(ad::Graph& g, const ModelConfig& c, const ParamLeaves& leaves, const Matrix& X,
                            const NeighborGraph& graph) {
  require(X.rows() >= 1, "forward: empty bag");
  const auto m = static_cast<std::size_t>(X.rows());
  ForwardNodes n;
  n.F = encoder(leaves, c, g.constant(X));

  if (c.neighborhood) {
    if (graph.size() != m)
      fail(ErrorKind::invalid_argument, "forward: neighbor graph has " + std::to_string(graph.size()) +
                                            " entries for a bag of " + std::to_string(m));
    for (const auto& set : graph.sets)
      for (std::size_t j : set)
        if (j >= m) fail(ErrorKind::invalid_argument, "forward: neighbor index " + std::to_string(j) + " out of range");
    ad::Tensor U = ad::tanh(ad::matmul_t(n.F, leaves.get("V_nb")));  // row j = tanh(V_nb F_j)
    ad::Tensor S = ad::matmul_t(n.F, U);                              // S_ij = F_i . tanh(V_nb F_j)
    n.A = ad::row_softmax(S, graph.sets);
    n.B = ad::matmul(n.A, n.F);
    n.T = ad::hconcat(n.F, n.B);
  } else {
    n.T = n.F;
  }

  n.templates.reserve(c.templates);
  for (std::size_t k = 1; k <= c.templates; ++k) n.templates.push_back(leaves.get(template_name(k)));
  ad::Tensor P = ad::stack_rows(n.templates);                          // C x dim_t
  ad::Tensor Ut = ad::tanh(ad::matmul_t(n.T, leaves.get("V_tp")));     // row i = tanh(V_tp T_i)
  n.beta = ad::row_softmax(ad::matmul_t(P, Ut));                       // C x m
  n.E = ad::matmul(n.beta, n.T);                                       // C x dim_t

  ad::Tensor Uf = ad::tanh(ad::matmul_t(n.E, leaves.get("V_fin")));    // row k = tanh(V_fin E_k)
  n.gamma = ad::softmax(ad::matmul(Uf, leaves.get("G")));              // C x 1
  n.Z = ad::matmul(ad::transpose(n.E), n.gamma);                       // dim_t x 1

  n.logit = classifier_logit(leaves, c, n.Z);
  n.p = ad::sigmoid(n.logit);
  return n;
}

ad::Tensor record_bce(ad::Graph& g, ad::Tensor p, int label) {
  (void)g;
  ad::Tensor q = ad::clamp(p, kProbFloor, 1.0 - kProbFloor);
  if (label == 1) return ad::scale(ad::log(q), -1.0);
  return ad::scale(ad::log(ad::affine(q, -1.0, 1.0)), -1.0);
}

ad::Tensor record_diversity(ad::Graph& g, std::span<const ad::Tensor> templates) {
  const std::size_t C = templates.size();
  if (C < 2) return g.constant_scalar(0.0);
  ad::Tensor P = ad::stack_rows(templates);
  ad::Tensor gram = ad::matmul_t(P, P);
  Matrix off = Matrix::Ones(static_cast<Eigen::Index>(C), static_cast<Eigen::Index>(C));
  off.diagonal().setZero();
  // Sum over ordered pairs counts every i<j twice.
  ad::Tensor total = ad::sum(ad::square(ad::mul(gram, g.constant(std::move(off)))));
  return ad::scale(total, 1.0 / static_cast<double>(C * (C - 1)));
}

ad::Tensor record_loss(ad::Graph& g, std::span<const std::pair<ad::Tensor, int>> batch,
                       std::span<const ad::Tensor> templates) {
  require(!batch.empty(), "loss: empty batch");
  ad::Tensor total = record_bce(g, batch.front().first, batch.front().second);
  for (std::size_t i = 1; i < batch.size(); ++i) total = ad::add(total, record_bce(g, batch[i].first, batch[i].second));
  ad::Tensor mean = ad::scale(total, 1.0 / static_cast<double>(batch.size()));
  return ad::add(mean, record_diversity(g, templates));
}

// ---------------------------------------------------------------------------
// Stand-alone operations

namespace {

Vector col(const Matrix& m) { return Eigen::Map<const Vector>(m.data(), m.size()); }

Matrix as_column(const Vector& v) { return Eigen::Map<const Matrix>(v.data(), v.size(), 1); }

std::vector<std::vector<double>> gather_alpha(const Matrix& A, const NeighborGraph& graph) {
  std::vector<std::vector<double>> alpha(graph.size());
  for (std::size_t i = 0; i < graph.size(); ++i)
    for (std::size_t j : graph.sets[i]) alpha[i].push_back(A(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)));
  return alpha;
}

}  // namespace

Vector encode(const Model& model, std::span<const double> features) {
  ad::Graph g;
  ParamLeaves leaves = bind_params(g, model.params, false);
  Matrix X(1, static_cast<Eigen::Index>(features.size()));
  std::copy(features.begin(), features.end(), X.data());
  return col(encoder(leaves, model.config, g.constant(std::move(X))).value());
}

std::pair<Matrix, std::vector<std::vector<double>>> neighborhood_attention(const Model& model, const Matrix& F,
                                                                          const NeighborGraph& graph) {
  require(model.config.neighborhood, "neighborhood_attention: model has neighborhoods disabled");
  require(graph.size() == static_cast<std::size_t>(F.rows()), "neighborhood_attention: graph size differs from F rows");
  ad::Graph g;
  ParamLeaves leaves = bind_params(g, model.params, false);
  ad::Tensor Ft = g.constant(F);
  ad::Tensor U = ad::tanh(ad::matmul_t(Ft, leaves.get("V_nb")));
  ad::Tensor A = ad::row_softmax(ad::matmul_t(Ft, U), graph.sets);
  Matrix B = A.value() * F;
  return {std::move(B), gather_alpha(A.value(), graph)};
}

Vector concat_embedding(const Vector& f, const Vector& b) {
  require(f.size() == b.size(), "concat_embedding: F and B differ in length");
  Vector t(f.size() + b.size());
  t << f, b;
  return t;
}

std::pair<Matrix, Matrix> template_attention(const Model& model, const Matrix& T) {
  require(T.rows() >= 1, "template_attention: empty bag");
  ad::Graph g;
  ParamLeaves leaves = bind_params(g, model.params, false);
  ad::Tensor Tt = g.constant(T);
  std::vector<ad::Tensor> ps;
  for (std::size_t k = 1; k <= model.config.templates; ++k) ps.push_back(leaves.get(template_name(k)));
  ad::Tensor Ut = ad::tanh(ad::matmul_t(Tt, leaves.get("V_tp")));
  ad::Tensor beta = ad::row_softmax(ad::matmul_t(ad::stack_rows(ps), Ut));
  Matrix E = beta.value() * T;
  return {std::move(E), beta.value()};
}

std::pair<Vector, Vector> final_attention(const Model& model, const Matrix& E) {
  ad::Graph g;
  ParamLeaves leaves = bind_params(g, model.params, false);
  ad::Tensor Et = g.constant(E);
  ad::Tensor Uf = ad::tanh(ad::matmul_t(Et, leaves.get("V_fin")));
  ad::Tensor gamma = ad::softmax(ad::matmul(Uf, leaves.get("G")));
  ad::Tensor Z = ad::matmul(ad::transpose(Et), gamma);
  return {col(Z.value()), col(gamma.value())};
}

double classify(const Model& model, const Vector& Z) {
  require(static_cast<std::size_t>(Z.size()) == model.config.dim_t(), "classify: Z has wrong length");
  ad::Graph g;
  ParamLeaves leaves = bind_params(g, model.params, false);
  return ad::sigmoid(classifier_logit(leaves, model.config, g.constant(as_column(Z)))).scalar();
}

ForwardTrace forward(const Model& model, const Bag& bag, const NeighborGraph& graph) {
  ad::Graph g;
  ParamLeaves leaves = bind_params(g, model.params, false);
  const Matrix X = bag_matrix(bag);
  ForwardNodes n = record_forward(g, model.config, leaves, X, graph);
  ForwardTrace t;
  t.F = n.F.value();
  const auto m = static_cast<Eigen::Index>(bag.size());
  if (model.config.neighborhood) {
    t.B = n.B.value();
    t.neighbor_attention = n.A.value();
    t.alpha = gather_alpha(t.neighbor_attention, graph);
  } else {
    t.B = Matrix::Zero(m, t.F.cols());
    t.neighbor_attention = Matrix::Zero(m, m);
    t.alpha.assign(bag.size(), {});
  }
  t.T = n.T.value();
  t.beta = n.beta.value();
  t.E = n.E.value();
  t.gamma = col(n.gamma.value());
  t.Z = col(n.Z.value());
  t.logit = n.logit.scalar();
  t.p = n.p.scalar();
  return t;
}

ForwardTrace forward(const Model& model, const Bag& bag) {
  if (!model.config.neighborhood) {
    NeighborGraph empty;
    empty.sets.resize(bag.size());
    return forward(model, bag, empty);
  }
  return forward(model, bag, neighbor_graph(bag, model.config.radius));
}

double diversity_penalty(std::span<const Matrix> templates) {
  const std::size_t C = templates.size();
  require(C >= 1, "diversity_penalty: no templates");
  if (C == 1) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = i + 1; j < C; ++j) {
      const double d = templates[i].col(0).dot(templates[j].col(0));
      total += d * d;
    }
  return 2.0 / static_cast<double>(C * (C - 1)) * total;
}

std::vector<Matrix> templates_of(const Model& model) {
  std::vector<Matrix> out;
  for (std::size_t k = 1; k <= model.config.templates; ++k) out.push_back(model.params.at(template_name(k)));
  return out;
}

double bce(double p, int label) {
  const double q = std::clamp(p, kProbFloor, 1.0 - kProbFloor);
  return label == 1 ? -std::log(q) : -std::log(1.0 - q);
}

double loss(std::span<const std::pair<double, int>> batch, const Model& model) {
  require(!batch.empty(), "loss: empty batch");
  double total = 0.0;
  for (const auto& [p, y] : batch) total += bce(p, y);
  const double value = total / static_cast<double>(batch.size()) + diversity_penalty(templates_of(model));
  if (!std::isfinite(value)) fail(ErrorKind::divergence, "loss is not finite");
  return value;
}

// ---------------------------------------------------------------------------
// Template management

PruneResult prune_templates(const Model& model, const Dataset& dataset, std::size_t keep) {
  const std::size_t C = model.config.templates;
  require(keep >= 1 && keep <= C, "prune: keep=" + std::to_string(keep) + " must lie in [1, " + std::to_string(C) + "]");
  require(!dataset.bags.empty(), "prune: empty dataset");

  PruneResult out;
  out.totals.assign(C, 0.0);
  for (const Bag& bag : dataset.bags) {
    const ForwardTrace t = forward(model, bag);
    for (std::size_t k = 0; k < C; ++k) out.totals[k] += t.gamma(static_cast<Eigen::Index>(k));
  }
  std::vector<std::size_t> order(C);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return out.totals[a] > out.totals[b]; });
  out.kept.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(out.kept.begin(), out.kept.end());

  out.model.config = model.config;
  out.model.config.templates = keep;
  bool templates_written = false;
  for (const auto& e : model.params.entries()) {
    if (e.name.size() > 1 && e.name[0] == 'P' && std::isdigit(static_cast<unsigned char>(e.name[1]))) {
      if (templates_written) continue;
      for (std::size_t r = 0; r < keep; ++r)
        out.model.params.add(template_name(r + 1), model.params.at(template_name(out.kept[r] + 1)));
      templates_written = true;
    } else {
      out.model.params.add(e.name, e.value);
    }
  }
  out.model.validate();
  return out;
}

AddResult add_template(const Model& model, std::uint64_t seed) {
  const std::size_t C = model.config.templates;
  const std::size_t dt = model.config.dim_t();
  AddResult out;
  out.model.config = model.config;
  out.model.config.templates = C + 1;
  const std::string fresh = template_name(C + 1);
  for (const auto& e : model.params.entries()) {
    out.model.params.add(e.name, e.value);
    out.frozen.push_back(e.name);
    if (e.name == template_name(C))
      out.model.params.add(fresh, uniform_matrix(dt, 1, dt, derive_seed(seed, "template", C + 1)));
  }
  out.model.validate();
  return out;
}

}  // namespace mamil
