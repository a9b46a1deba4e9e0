// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// Hand-built models and bags shared by the test binaries.

#pragma once

#include <cmath>
#include <random>

#include "mamil/datasets.hpp"
#include "mamil/model.hpp"

namespace fixtures {

using mamil::Bag;
using mamil::Coord;
using mamil::Dataset;
using mamil::Instance;
using mamil::Matrix;
using mamil::Model;
using mamil::ModelConfig;

inline Bag random_bag(std::size_t m, std::size_t dim, std::mt19937_64& rng, bool line_coords = true) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Bag bag;
  bag.label = static_cast<int>(rng() % 2);
  for (std::size_t i = 0; i < m; ++i) {
    Instance inst;
    for (std::size_t k = 0; k < dim; ++k) inst.features.push_back(normal(rng));
    if (line_coords) inst.coord = Coord{static_cast<int>(i), 0};
    bag.instances.push_back(inst);
  }
  return bag;
}

// Random values in every parameter, scaled so attention is far from uniform.
inline Model random_model(ModelConfig c, std::mt19937_64& rng, double scale = 1.5) {
  Model model = Model::init(c);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& e : model.params.entries())
    for (Eigen::Index i = 0; i < e.value.size(); ++i) e.value.data()[i] = u(rng);
  return model;
}

inline Matrix column(std::initializer_list<double> v) {
  Matrix m(static_cast<Eigen::Index>(v.size()), 1);
  Eigen::Index i = 0;
  for (double x : v) m(i++, 0) = x;
  return m;
}

// Two instance types x=(1,0) and x=(0,1) mapped by an identity encoder to
// (a,0) and (0,a). P1 attends to the first type, P2 to the second, and P3 is
// zero so it averages both. The final attention scores the two pure views at
// about -g and the mixture at about -2g, so P3 receives gamma ~ exp(-g).
// G_weights skews the first two: G = -(g1, g2).
inline Model dormant_template_model(double g1 = 20.0, double g2 = 20.0) {
  ModelConfig c;
  c.input_dim = 2;
  c.templates = 3;
  c.dim_f = 2;
  c.encoder_layers = {};
  c.neighborhood = false;
  c.seed = 5;
  Model model = Model::init(c);
  model.params.at("enc.W1") = Matrix::Identity(2, 2);
  model.params.at("enc.b1") = Matrix::Zero(2, 1);
  model.params.at("P1") = column({30.0, 0.0});
  model.params.at("P2") = column({0.0, 30.0});
  model.params.at("P3") = column({0.0, 0.0});
  model.params.at("V_tp") = Matrix::Identity(2, 2);
  model.params.at("V_fin") = 10.0 * Matrix::Identity(2, 2);
  model.params.at("G") = column({-g1, -g2});
  model.params.at("cls.W1") = Matrix{{4.0, -3.0}};
  model.params.at("cls.b1") = column({0.2});
  return model;
}

// Bags mixing both instance types in varying proportions; the label follows
// the majority type so a classifier on Z can be right or wrong.
inline Dataset dormant_dataset(std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.feature_dim = 2;
  for (std::size_t b = 0; b < count; ++b) {
    Bag bag;
    bag.id = static_cast<std::int64_t>(b);
    const std::size_t first = 1 + rng() % 4, second = 1 + rng() % 4;
    for (std::size_t i = 0; i < first; ++i) bag.instances.push_back({{1.0, 0.0}, std::nullopt, std::nullopt});
    for (std::size_t i = 0; i < second; ++i) bag.instances.push_back({{0.0, 1.0}, std::nullopt, std::nullopt});
    std::shuffle(bag.instances.begin(), bag.instances.end(), rng);
    bag.label = first >= second ? 1 : 0;
    ds.bags.push_back(bag);
  }
  return ds;
}

}  // namespace fixtures
