// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// Per-instance importances read off a forward trace.
//
// Because Z = sum_k gamma_k E_k and E_k = sum_i beta_ki T_i, the bag
// embedding decomposes as Z = sum_i w_i T_i with w_i = sum_k gamma_k beta_ki.
// The final importance adds the credit an instance receives through the
// neighborhood attention: v_i = w_i + sum_{j in N_i} alpha_j^(i) w_j.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string_view>
#include <vector>

#include "mamil/datasets.hpp"
#include "mamil/model.hpp"

namespace mamil {

enum class CreditRule {
  own_neighborhood,  // alpha_j^(i): weights of i's own neighborhood (default)
  received,          // alpha_i^(j): how much i contributes to neighbor j's B_j
};

std::vector<double> patch_importance(const ForwardTrace& trace);
std::vector<double> final_importance(const ForwardTrace& trace, const NeighborGraph& graph,
                                     CreditRule rule = CreditRule::own_neighborhood);

struct ImportanceReport {
  std::int64_t bag_id = 0;
  double p = 0.0;
  std::vector<double> w;
  std::vector<double> v;
  std::vector<std::optional<Coord>> coords;
  std::vector<std::optional<int>> tags;  // ground truth, for inspection only

  std::size_t size() const { return w.size(); }
  // Instance indices ordered by decreasing v (ties: lower index first).
  std::vector<std::size_t> ranking() const;
};

ImportanceReport explain_bag(const Model& model, const Bag& bag, CreditRule rule = CreditRule::own_neighborhood);

enum class ReportFormat { csv, pgm, jsonl };

ReportFormat parse_report_format(std::string_view text);
std::string_view extension(ReportFormat f);

struct GridShape {
  std::size_t width = 0;
  std::size_t height = 0;
};

// Smallest grid holding every coordinate; nullopt when any is missing.
std::optional<GridShape> infer_grid(const ImportanceReport& report);

// `index,x,y,w,v`
void write_report_csv(const ImportanceReport& report, std::ostream& out);
void write_report_jsonl(const ImportanceReport& report, std::ostream& out);
// Binary P5, maxval 255; v rescaled so max(v) -> 255, cells without an
// instance stay 0. Requires coordinates.
void write_report_pgm(const ImportanceReport& report, const GridShape& grid, std::ostream& out);

void export_report(const ImportanceReport& report, std::optional<GridShape> grid, const std::filesystem::path& path,
                   ReportFormat format);

struct ReportRow {
  std::size_t index = 0;
  std::optional<Coord> coord;
  double w = 0.0;
  double v = 0.0;
};

std::vector<ReportRow> read_report_csv(std::istream& in);

}  // namespace mamil
