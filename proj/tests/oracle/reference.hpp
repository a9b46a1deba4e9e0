// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations. Nothing here touches the autodiff
// graph or Eigen arithmetic: every quantity is recomputed with plain loops
// straight from its definition, so agreement with the library is evidence
// rather than tautology.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdlib>
#include <functional>
#include <string>
#include <vector>

#include "mamil/datasets.hpp"
#include "mamil/model.hpp"

namespace ref {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major rows

inline Mat to_mat(const mamil::Matrix& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[r][c] = m(r, c);
  return out;
}

inline Vec to_vec(const mamil::Matrix& m) {
  Vec out;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline Vec matvec(const Mat& W, const Vec& x) {
  Vec y(W.size(), 0.0);
  for (std::size_t r = 0; r < W.size(); ++r)
    for (std::size_t c = 0; c < x.size(); ++c) y[r] += W[r][c] * x[c];
  return y;
}

inline double dotp(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec tanh_v(Vec v) {
  for (double& x : v) x = std::tanh(x);
  return v;
}

// exp(s_i) / sum_j exp(s_j), written without the max shift.
inline Vec softmax_plain(const Vec& s) {
  Vec e(s.size());
  double total = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) total += (e[i] = std::exp(s[i]));
  for (double& x : e) x /= total;
  return e;
}

struct Trace {
  Mat F, B, T;
  std::vector<Vec> alpha;
  Mat beta;  // C rows over instances
  Mat E;
  Vec gamma, Z;
  double logit = 0.0;
  double p = 0.0;
};

inline Vec mlp(const mamil::Model& model, const std::string& prefix, std::size_t layers, Vec h, bool last_tanh) {
  for (std::size_t l = 1; l <= layers; ++l) {
    const Mat W = to_mat(model.params.at(prefix + ".W" + std::to_string(l)));
    const Vec b = to_vec(model.params.at(prefix + ".b" + std::to_string(l)));
    Vec z = matvec(W, h);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] += b[i];
    h = (l < layers || last_tanh) ? tanh_v(z) : z;
  }
  return h;
}

// Neighbors straight from the Chebyshev definition.
inline std::vector<std::vector<std::size_t>> neighbors(const std::vector<mamil::Coord>& coords, int d) {
  std::vector<std::vector<std::size_t>> out(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::size_t j = 0; j < coords.size(); ++j) {
      const int dist = std::max(std::abs(coords[i].x - coords[j].x), std::abs(coords[i].y - coords[j].y));
      if (dist > 0 && dist <= d) out[i].push_back(j);
    }
  return out;
}

inline Trace forward(const mamil::Model& model, const mamil::Bag& bag,
                     const std::vector<std::vector<std::size_t>>& nbrs) {
  const mamil::ModelConfig& c = model.config;
  Trace t;
  const std::size_t m = bag.size();
  for (const auto& inst : bag.instances) t.F.push_back(mlp(model, "enc", c.encoder_layers.size() + 1, inst.features, true));
  const std::size_t df = c.dim_f;

  t.B.assign(m, Vec(df, 0.0));
  t.alpha.assign(m, {});
  if (c.neighborhood) {
    const Mat Vnb = to_mat(model.params.at("V_nb"));
    for (std::size_t i = 0; i < m; ++i) {
      Vec s;
      for (std::size_t j : nbrs[i]) s.push_back(dotp(t.F[i], tanh_v(matvec(Vnb, t.F[j]))));
      if (s.empty()) continue;
      t.alpha[i] = softmax_plain(s);
      for (std::size_t r = 0; r < nbrs[i].size(); ++r)
        for (std::size_t q = 0; q < df; ++q) t.B[i][q] += t.alpha[i][r] * t.F[nbrs[i][r]][q];
    }
  }
  for (std::size_t i = 0; i < m; ++i) {
    Vec row = t.F[i];
    if (c.neighborhood) row.insert(row.end(), t.B[i].begin(), t.B[i].end());
    t.T.push_back(row);
  }

  const Mat Vtp = to_mat(model.params.at("V_tp"));
  for (std::size_t k = 1; k <= c.templates; ++k) {
    const Vec P = to_vec(model.params.at(mamil::template_name(k)));
    Vec s;
    for (std::size_t i = 0; i < m; ++i) s.push_back(dotp(P, tanh_v(matvec(Vtp, t.T[i]))));
    const Vec b = softmax_plain(s);
    Vec e(t.T[0].size(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t q = 0; q < e.size(); ++q) e[q] += b[i] * t.T[i][q];
    t.beta.push_back(b);
    t.E.push_back(e);
  }

  const Mat Vfin = to_mat(model.params.at("V_fin"));
  const Vec G = to_vec(model.params.at("G"));
  Vec s;
  for (const Vec& e : t.E) s.push_back(dotp(G, tanh_v(matvec(Vfin, e))));
  t.gamma = softmax_plain(s);
  t.Z.assign(t.E[0].size(), 0.0);
  for (std::size_t k = 0; k < t.E.size(); ++k)
    for (std::size_t q = 0; q < t.Z.size(); ++q) t.Z[q] += t.gamma[k] * t.E[k][q];

  t.logit = mlp(model, "cls", c.classifier_layers.size() + 1, t.Z, false)[0];
  t.p = 1.0 / (1.0 + std::exp(-t.logit));
  return t;
}

inline double bce(double p, int y) {
  const double q = std::min(std::max(p, 1e-12), 1.0 - 1e-12);
  return y == 1 ? -std::log(q) : -std::log(1.0 - q);
}

// (2 / (C (C-1))) * sum_{i<j} (P_i . P_j)^2, zero for one template.
inline double diversity(const std::vector<Vec>& P) {
  const std::size_t C = P.size();
  if (C < 2) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < C; ++i)
    for (std::size_t j = i + 1; j < C; ++j) s += dotp(P[i], P[j]) * dotp(P[i], P[j]);
  return 2.0 * s / static_cast<double>(C * (C - 1));
}

// Bag labels by scanning the digits as text.
inline int label(const std::vector<int>& digits, mamil::MilVariant v) {
  std::string s;
  for (int d : digits) s += static_cast<char>('0' + d);
  auto lonely = [&s](char a, char blocker) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] != a) continue;
      const bool left = i > 0 && s[i - 1] == blocker;
      const bool right = i + 1 < s.size() && s[i + 1] == blocker;
      if (!left && !right) return true;
    }
    return false;
  };
  switch (v) {
    case mamil::MilVariant::mil: return s.find('9') != std::string::npos;
    case mamil::MilVariant::mil1: return s.find("93") != std::string::npos || s.find("39") != std::string::npos;
    case mamil::MilVariant::mil2: return lonely('9', '3');
    case mamil::MilVariant::mil3: return lonely('9', '3') && lonely('7', '4');
  }
  return -1;
}

// Central differences of f at x, one coordinate at a time.
inline Vec numeric_grad(const std::function<double(const Vec&)>& f, Vec x, double eps) {
  Vec g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + eps;
    const double up = f(x);
    x[i] = keep - eps;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

}  // namespace ref
