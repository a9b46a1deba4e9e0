// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/training.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>

#include "mamil/error.hpp"
#include "mamil/explain.hpp"
#include "mamil/rng.hpp"

namespace mamil {

void TrainConfig::validate() const {
  require(learning_rate > 0.0, "learning_rate must be > 0");
  require(beta1 >= 0.0 && beta1 < 1.0, "beta1 must lie in [0, 1)");
  require(beta2 >= 0.0 && beta2 < 1.0, "beta2 must lie in [0, 1)");
  require(eps_adam >= 0.0, "eps_adam must be >= 0");
  require(weight_decay >= 0.0, "weight_decay must be >= 0");
  require(epochs >= 1, "epochs must be >= 1");
}

OptimState OptimState::zeros_like(const Params& params) {
  OptimState s;
  for (const auto& e : params.entries()) {
    s.m.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
    s.v.push_back(Matrix::Zero(e.value.rows(), e.value.cols()));
  }
  return s;
}

void adam_step(Params& params, std::span<const Matrix> grads, OptimState& state, const TrainConfig& config) {
  auto& entries = params.entries();
  require(grads.size() == entries.size() && state.m.size() == entries.size(),
          "adam_step: gradients / state do not match the parameter list");
  for (std::size_t i = 0; i < entries.size(); ++i)
    if (!grads[i].allFinite()) fail(ErrorKind::divergence, "non-finite gradient for parameter '" + entries[i].name + "'");

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  const double lr = config.learning_rate;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (config.freeze.count(entries[i].name)) continue;
    Matrix& p = entries[i].value;
    const Matrix& g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g.cwiseProduct(g);
    if (config.weight_decay != 0.0) p *= 1.0 - lr * config.weight_decay;
    p.array() -= lr * (state.m[i].array() / c1) / ((state.v[i].array() / c2).sqrt() + config.eps_adam);
  }
}

void Metrics::add(int predicted, int label) {
  if (predicted == 1) {
    (label == 1 ? tp : fp) += 1;
  } else {
    (label == 1 ? fn : tn) += 1;
  }
}

double Metrics::accuracy() const {
  return total() == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total());
}

double Metrics::f1() const {
  const std::size_t denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

namespace {

NeighborGraph graph_for(const ModelConfig& c, const Bag& bag) {
  if (c.neighborhood) return neighbor_graph(bag, c.radius);
  NeighborGraph g;
  g.sets.resize(bag.size());
  return g;
}

void check_compatible(const Model& model, const Dataset& ds) {
  if (model.config.input_dim != ds.feature_dim)
    fail(ErrorKind::mismatch, "model expects " + std::to_string(model.config.input_dim) + " features, dataset has " +
                                  std::to_string(ds.feature_dim));
}

}  // namespace

TrainResult train(const Dataset& train_set, const Model& initial, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  initial.validate();
  require(!train_set.bags.empty(), "train: empty training set");
  check_compatible(initial, train_set);

  TrainResult result;
  result.model = initial;
  Model& model = result.model;
  for (const std::string& name : config.freeze)
    require(model.params.contains(name), "freeze: unknown parameter '" + name + "'");

  std::vector<NeighborGraph> graphs;
  graphs.reserve(train_set.size());
  for (const Bag& bag : train_set.bags) graphs.push_back(graph_for(model.config, bag));

  OptimState state = OptimState::zeros_like(model.params);
  Rng shuffle_rng(derive_seed(config.seed, "shuffle"));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<Matrix> grads(model.params.size());

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t step = 0; step < order.size(); ++step) {
      const Bag& bag = train_set.bags[order[step]];
      ad::Graph g;
      ParamLeaves leaves = bind_params(g, model.params, true);
      ForwardNodes n = record_forward(g, model.config, leaves, bag_matrix(bag), graphs[order[step]]);
      const std::pair<ad::Tensor, int> item{n.p, bag.label};
      ad::Tensor loss = record_loss(g, std::span(&item, 1), n.templates);
      const double value = loss.scalar();
      if (!std::isfinite(value))
        fail(ErrorKind::divergence, "non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      g.backward(loss);
      for (std::size_t i = 0; i < grads.size(); ++i) grads[i] = leaves.tensors[i].grad();
      try {
        adam_step(model.params, grads, state, config);
      } catch (const Error& e) {
        fail(e.kind(), std::string(e.what()) + " at epoch " + std::to_string(epoch) + " step " + std::to_string(step));
      }
      loss_sum += value;
      rec.train.add(n.p.scalar() >= 0.5 ? 1 : 0, bag.label);
      ++result.steps;
    }
    rec.mean_loss = loss_sum / static_cast<double>(order.size());
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return result;
}

TrainResult train(const Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  ModelConfig c = model_config;
  c.input_dim = train_set.feature_dim;
  return train(train_set, Model::init(c), config, on_epoch);
}

std::vector<double> predict(const Model& model, const Dataset& dataset) {
  check_compatible(model, dataset);
  std::vector<double> out;
  out.reserve(dataset.size());
  for (const Bag& bag : dataset.bags) out.push_back(forward(model, bag, graph_for(model.config, bag)).p);
  return out;
}

Metrics evaluate(const Model& model, const Dataset& dataset, double threshold) {
  require(!dataset.bags.empty(), "evaluate: empty dataset");
  const std::vector<double> p = predict(model, dataset);
  Metrics m;
  for (std::size_t i = 0; i < p.size(); ++i) m.add(p[i] >= threshold ? 1 : 0, dataset.bags[i].label);
  return m;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};
}

}  // namespace

CvResult cross_validate(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& config,
                        std::size_t k) {
  const auto folds = kfold_split(dataset, k, config.seed);
  CvResult out;
  std::vector<double> accs, f1s;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    TrainConfig fold_config = config;
    fold_config.seed = derive_seed(config.seed, "fold", f);
    ModelConfig fold_model = model_config;
    fold_model.seed = derive_seed(model_config.seed, "fold", f);
    const Dataset train_part = dataset.subset(folds[f].train);
    const Dataset test_part = dataset.subset(folds[f].test);
    const TrainResult trained = train(train_part, fold_model, fold_config);
    const Metrics m = evaluate(trained.model, test_part);
    out.folds.push_back(m);
    accs.push_back(m.accuracy());
    f1s.push_back(m.f1());
  }
  std::tie(out.mean_accuracy, out.std_accuracy) = mean_std(accs);
  std::tie(out.mean_f1, out.std_f1) = mean_std(f1s);
  return out;
}

void write_history(std::ostream& out, std::span<const EpochRecord> history) {
  out << "epoch,mean_loss,train_acc,train_f1\n";
  for (const EpochRecord& r : history)
    out << r.epoch << ',' << format_double(r.mean_loss) << ',' << format_double(r.train.accuracy()) << ','
        << format_double(r.train.f1()) << '\n';
}

bool InvariantReport::ok() const {
  return max_normalization_error < 1e-9 && min_weight >= 0.0 && max_decomposition_error < 1e-9 &&
         max_weight_sum_error < 1e-6 && max_permutation_shift < 1e-12;
}

InvariantReport check_invariants(const Model& model, const Dataset& dataset) {
  InvariantReport r;
  r.min_weight = std::numeric_limits<double>::infinity();
  auto note_weights = [&r](auto&& values) {
    double s = 0.0;
    for (double x : values) {
      s += x;
      r.min_weight = std::min(r.min_weight, x);
    }
    r.max_normalization_error = std::max(r.max_normalization_error, std::abs(s - 1.0));
  };
  for (const Bag& bag : dataset.bags) {
    const NeighborGraph graph = graph_for(model.config, bag);
    const ForwardTrace t = forward(model, bag, graph);
    for (const auto& a : t.alpha)
      if (!a.empty()) note_weights(a);
    for (Eigen::Index k = 0; k < t.beta.rows(); ++k)
      note_weights(std::vector<double>(t.beta.row(k).data(), t.beta.row(k).data() + t.beta.cols()));
    note_weights(std::vector<double>(t.gamma.data(), t.gamma.data() + t.gamma.size()));

    const std::vector<double> w = patch_importance(t);
    Vector recon = Vector::Zero(t.Z.size());
    double wsum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      recon += w[i] * t.T.row(static_cast<Eigen::Index>(i)).transpose();
      wsum += w[i];
    }
    r.max_decomposition_error = std::max(r.max_decomposition_error, (t.Z - recon).cwiseAbs().maxCoeff());
    r.max_weight_sum_error = std::max(r.max_weight_sum_error, std::abs(wsum - 1.0));

    Bag reversed = bag;
    std::reverse(reversed.instances.begin(), reversed.instances.end());
    const double p_rev = forward(model, reversed, graph_for(model.config, reversed)).p;
    r.max_permutation_shift = std::max(r.max_permutation_shift, std::abs(p_rev - t.p));
  }
  return r;
}

std::vector<SweepRow> sweep_templates(const Dataset& train_set, const Dataset& test_set, const ModelConfig& base,
                                      const TrainConfig& config, std::span<const std::size_t> counts) {
  std::vector<SweepRow> rows;
  for (std::size_t c : counts) {
    ModelConfig mc = base;
    mc.templates = c;
    const TrainResult trained = train(train_set, mc, config);
    SweepRow row;
    row.templates = c;
    row.metrics = evaluate(trained.model, test_set);
    row.invariants = check_invariants(trained.model, test_set);
    rows.push_back(row);
  }
  return rows;
}

void write_sweep(std::ostream& out, std::span<const SweepRow> rows) {
  out << "templates,accuracy,f1,max_normalization_error,max_decomposition_error,max_permutation_shift\n";
  for (const SweepRow& r : rows)
    out << r.templates << ',' << format_double(r.metrics.accuracy()) << ',' << format_double(r.metrics.f1()) << ','
        << format_double(r.invariants.max_normalization_error) << ','
        << format_double(r.invariants.max_decomposition_error) << ','
        << format_double(r.invariants.max_permutation_shift) << '\n';
}

std::string parameter_group(std::string_view name) {
  if (name.starts_with("enc.")) return "encoder";
  if (name.starts_with("cls.")) return "theta";
  if (name.size() > 1 && name[0] == 'P' && std::isdigit(static_cast<unsigned char>(name[1]))) return "P_k";
  return std::string(name);
}

std::vector<GroupError> gradient_check(const Model& model, const Bag& bag, double eps) {
  model.validate();
  const NeighborGraph graph = graph_for(model.config, bag);
  const Matrix X = bag_matrix(bag);
  std::vector<Matrix> values;
  for (const auto& e : model.params.entries()) values.push_back(e.value);
  const ad::ScalarFn fn = [&](ad::Graph& g, std::span<const ad::Tensor> leaves) {
    ParamLeaves bound;
    bound.tensors.assign(leaves.begin(), leaves.end());
    bound.params = &model.params;
    ForwardNodes n = record_forward(g, model.config, bound, X, graph);
    const std::pair<ad::Tensor, int> item{n.p, bag.label};
    return record_loss(g, std::span(&item, 1), n.templates);
  };
  const ad::GradCheckReport report = ad::grad_check(fn, values, eps);

  std::vector<GroupError> out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string group = parameter_group(model.params.entries()[i].name);
    auto it = std::find_if(out.begin(), out.end(), [&](const GroupError& g) { return g.group == group; });
    if (it == out.end()) {
      out.push_back({group, report.per_param[i]});
    } else {
      it->max_error = std::max(it->max_error, report.per_param[i]);
    }
  }
  return out;
}

}  // namespace mamil
