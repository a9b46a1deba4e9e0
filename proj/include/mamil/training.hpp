// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "mamil/datasets.hpp"
#include "mamil/model.hpp"

namespace mamil {

struct TrainConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 1e-4;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  std::set<std::string> freeze;  // parameter names excluded from updates

  void validate() const;
};

struct OptimState {
  std::vector<Matrix> m;  // first moments, aligned with Params::entries()
  std::vector<Matrix> v;  // second moments
  std::uint64_t t = 0;

  static OptimState zeros_like(const Params& params);
};

// One Adam update with bias correction. Decoupled weight decay multiplies
// each parameter by (1 - lr * wd) before the Adam delta. Parameters in
// config.freeze are left untouched. A non-finite gradient aborts with
// ErrorKind::divergence naming the parameter.
void adam_step(Params& params, std::span<const Matrix> grads, OptimState& state, const TrainConfig& config);

struct Metrics {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

  void add(int predicted, int label);
  std::size_t total() const { return tp + fp + tn + fn; }
  double accuracy() const;
  // Positive-class F1; zero when 2TP + FP + FN is zero.
  double f1() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double mean_loss = 0.0;
  Metrics train;          // from the per-step predictions of the epoch
};

struct TrainResult {
  Model model;
  std::vector<EpochRecord> history;
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Single-bag Adam steps over `epochs` passes; bag order reshuffled per epoch
// from the "shuffle" stream of config.seed. Deterministic given its inputs.
TrainResult train(const Dataset& train_set, const Model& initial, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});
TrainResult train(const Dataset& train_set, const ModelConfig& model_config, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

std::vector<double> predict(const Model& model, const Dataset& dataset);
Metrics evaluate(const Model& model, const Dataset& dataset, double threshold = 0.5);

struct CvResult {
  std::vector<Metrics> folds;
  double mean_accuracy = 0.0, std_accuracy = 0.0;
  double mean_f1 = 0.0, std_f1 = 0.0;
};

// Stratified k-fold: train a fresh model per fold and evaluate on the held-out
// fold. Standard deviations are population deviations over folds.
CvResult cross_validate(const Dataset& dataset, const ModelConfig& model_config, const TrainConfig& config,
                        std::size_t k);

// `epoch,mean_loss,train_acc,train_f1`
void write_history(std::ostream& out, std::span<const EpochRecord> history);

// Checks that must hold for any model on any bag.
struct InvariantReport {
  double max_normalization_error = 0.0;  // |sum - 1| over alpha rows, beta rows, gamma
  double min_weight = 0.0;               // smallest attention weight seen
  double max_decomposition_error = 0.0;  // ||Z - sum_i w_i T_i||_inf
  double max_weight_sum_error = 0.0;     // |sum_i w_i - 1|
  double max_permutation_shift = 0.0;    // |p - p(reversed bag)|

  bool ok() const;
};

InvariantReport check_invariants(const Model& model, const Dataset& dataset);

struct SweepRow {
  std::size_t templates = 0;
  Metrics metrics;
  InvariantReport invariants;
};

// Trains one model per template count and evaluates it on `test_set`.
std::vector<SweepRow> sweep_templates(const Dataset& train_set, const Dataset& test_set, const ModelConfig& base,
                                      const TrainConfig& config, std::span<const std::size_t> counts);

// `templates,accuracy,f1,max_normalization_error,max_decomposition_error,max_permutation_shift`
void write_sweep(std::ostream& out, std::span<const SweepRow> rows);

// Gradient of the per-bag loss (BCE + diversity) against central differences,
// reduced to the parameter groups encoder, V_nb, P_k, V_tp, G, V_fin, theta.
struct GroupError {
  std::string group;
  double max_error = 0.0;
};

std::string parameter_group(std::string_view name);
std::vector<GroupError> gradient_check(const Model& model, const Bag& bag, double eps = 1e-4);

}  // namespace mamil
