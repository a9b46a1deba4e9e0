// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// The multi-attention MIL network.
//
//   F_i  = encoder(x_i)                                  tanh MLP, dim_f
//   s_ij = F_i . tanh(V_nb F_j)             j in N_i     neighborhood scores
//   B_i  = sum_j alpha_ij F_j, alpha_i = softmax(s_i)    (B_i = 0 if N_i empty)
//   T_i  = (F_i, B_i)                                    or F_i without neighbors
//   E_k  = sum_i beta_ki T_i, beta_k = softmax_i(P_k . tanh(V_tp T_i))
//   Z    = sum_k gamma_k E_k, gamma = softmax_k(G . tanh(V_fin E_k))
//   p    = sigmoid(classifier(Z))
//
// Everything is recorded on an ad::Graph so the same code path serves
// inference and training.

#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "mamil/autodiff.hpp"
#include "mamil/datasets.hpp"

namespace mamil {

using ad::Matrix;
using Vector = Eigen::VectorXd;

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t templates = 10;  // C
  int radius = 1;              // neighborhood radius d
  std::size_t dim_f = 128;
  std::vector<std::size_t> encoder_layers{256};  // hidden widths before the dim_f layer
  bool neighborhood = true;
  std::vector<std::size_t> classifier_layers;  // hidden widths; empty = linear head
  std::uint64_t seed = 0;

  std::size_t dim_t() const { return neighborhood ? 2 * dim_f : dim_f; }
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Ordered, named parameter storage. Names follow the checkpoint scheme:
// enc.W{l}, enc.b{l}, V_nb, P{k}, V_tp, G, V_fin, cls.W{l}, cls.b{l}
// (layers and templates are 1-based). V_nb exists only with neighborhoods on.
class Params {
 public:
  struct Entry {
    std::string name;
    Matrix value;
  };

  std::size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }

  bool contains(std::string_view name) const;
  const Matrix& at(std::string_view name) const;
  Matrix& at(std::string_view name);
  std::size_t index_of(std::string_view name) const;
  void add(std::string name, Matrix value);

  bool all_finite() const;

  friend bool operator==(const Params& a, const Params& b);

 private:
  std::vector<Entry> entries_;
};

std::string template_name(std::size_t k);  // 1-based: "P1", "P2", ...

// Parameter names in storage order for a config.
std::vector<std::string> parameter_names(const ModelConfig& config);

struct Model {
  ModelConfig config;
  Params params;

  // Fresh parameters: weights and templates uniform in +-1/sqrt(fan_in),
  // biases zero; every parameter draws from its own seeded stream.
  static Model init(const ModelConfig& config);
  // Shape and naming consistency of params against config.
  void validate() const;
};

// Per-bag record of the forward pass.
struct ForwardTrace {
  Matrix F;                               // m x dim_f
  Matrix B;                               // m x dim_f, zeros without neighborhoods
  Matrix T;                               // m x dim_t
  Matrix neighbor_attention;              // m x m, row i is alpha^(i) scattered over N_i
  std::vector<std::vector<double>> alpha; // alpha[i][r] weights neighbor graph.sets[i][r]
  Matrix beta;                            // C x m
  Matrix E;                               // C x dim_t
  Vector gamma;                           // C
  Vector Z;                               // dim_t
  double logit = 0.0;
  double p = 0.5;
};

// ---------------------------------------------------------------------------
// Graph-level building blocks (used by training)

struct ParamLeaves {
  std::vector<ad::Tensor> tensors;  // aligned with Params::entries()
  const Params* params = nullptr;

  ad::Tensor get(std::string_view name) const { return tensors[params->index_of(name)]; }
};

// `trainable` selects gradient-carrying leaves vs read-only references.
// Params must outlive the graph.
ParamLeaves bind_params(ad::Graph& g, const Params& params, bool trainable);

struct ForwardNodes {
  ad::Tensor F, B, A, T, beta, E, gamma, Z, logit, p;
  std::vector<ad::Tensor> templates;
};

Matrix bag_matrix(const Bag& bag);

ForwardNodes record_forward(ad::Graph& g, const ModelConfig& config, const ParamLeaves& leaves, const Matrix& X,
                            const NeighborGraph& graph);
ad::Tensor record_bce(ad::Graph& g, ad::Tensor p, int label);
ad::Tensor record_diversity(ad::Graph& g, std::span<const ad::Tensor> templates);
// Mean BCE over (p, label) pairs plus the template diversity penalty.
ad::Tensor record_loss(ad::Graph& g, std::span<const std::pair<ad::Tensor, int>> batch,
                       std::span<const ad::Tensor> templates);

// ---------------------------------------------------------------------------
// Stand-alone operations

inline constexpr double kProbFloor = 1e-12;

Vector encode(const Model& model, std::span<const double> features);
// Returns (B, alpha) for embeddings F (m x dim_f) and the bag's neighbor graph.
std::pair<Matrix, std::vector<std::vector<double>>> neighborhood_attention(const Model& model, const Matrix& F,
                                                                          const NeighborGraph& graph);
Vector concat_embedding(const Vector& f, const Vector& b);
// Returns (E, beta) for T (m x dim_t).
std::pair<Matrix, Matrix> template_attention(const Model& model, const Matrix& T);
// Returns (Z, gamma) for E (C x dim_t).
std::pair<Vector, Vector> final_attention(const Model& model, const Matrix& E);
double classify(const Model& model, const Vector& Z);

ForwardTrace forward(const Model& model, const Bag& bag, const NeighborGraph& graph);
// Uses neighbor_graph(bag, config.radius) when neighborhoods are enabled.
ForwardTrace forward(const Model& model, const Bag& bag);

// 2 / (C (C - 1)) * sum_{i<j} (P_i . P_j)^2, zero for a single template.
double diversity_penalty(std::span<const Matrix> templates);
std::vector<Matrix> templates_of(const Model& model);
double bce(double p, int label);
double loss(std::span<const std::pair<double, int>> batch, const Model& model);

// ---------------------------------------------------------------------------
// Template management

struct PruneResult {
  Model model;
  std::vector<double> totals;      // summed gamma per original template
  std::vector<std::size_t> kept;   // 0-based original indices, ascending
};

// Keeps the `keep` templates with the largest summed gamma over `dataset`.
PruneResult prune_templates(const Model& model, const Dataset& dataset, std::size_t keep);

struct AddResult {
  Model model;
  std::vector<std::string> frozen;  // every parameter except the new template
};

AddResult add_template(const Model& model, std::uint64_t seed);

}  // namespace mamil
