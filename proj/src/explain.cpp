// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "mamil/error.hpp"

namespace mamil {

std::vector<double> patch_importance(const ForwardTrace& trace) {
  // w = beta^T gamma
  const Vector w = trace.beta.transpose() * trace.gamma;
  return {w.data(), w.data() + w.size()};
}

std::vector<double> final_importance(const ForwardTrace& trace, const NeighborGraph& graph, CreditRule rule) {
  std::vector<double> w = patch_importance(trace);
  require(graph.size() == w.size(), "final_importance: neighbor graph does not match the trace");
  std::vector<double> v = w;
  const Matrix& A = trace.neighbor_attention;
  if (A.size() == 0) return v;
  for (std::size_t i = 0; i < w.size(); ++i)
    for (std::size_t j : graph.sets[i]) {
      const auto ii = static_cast<Eigen::Index>(i), jj = static_cast<Eigen::Index>(j);
      const double a = rule == CreditRule::own_neighborhood ? A(ii, jj) : A(jj, ii);
      v[i] += a * w[j];
    }
  return v;
}

std::vector<std::size_t> ImportanceReport::ranking() const {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });
  return order;
}

ImportanceReport explain_bag(const Model& model, const Bag& bag, CreditRule rule) {
  NeighborGraph graph;
  if (model.config.neighborhood) {
    graph = neighbor_graph(bag, model.config.radius);
  } else {
    graph.sets.resize(bag.size());
  }
  const ForwardTrace trace = forward(model, bag, graph);
  ImportanceReport r;
  r.bag_id = bag.id;
  r.p = trace.p;
  r.w = patch_importance(trace);
  r.v = final_importance(trace, graph, rule);
  for (const Instance& inst : bag.instances) {
    r.coords.push_back(inst.coord);
    r.tags.push_back(inst.source_tag);
  }
  return r;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "pgm") return ReportFormat::pgm;
  if (text == "jsonl" || text == "json-lines") return ReportFormat::jsonl;
  fail(ErrorKind::invalid_argument, "unknown report format '" + std::string(text) + "' (expected csv, pgm or jsonl)");
}

std::string_view extension(ReportFormat f) {
  switch (f) {
    case ReportFormat::csv: return ".csv";
    case ReportFormat::pgm: return ".pgm";
    case ReportFormat::jsonl: return ".jsonl";
  }
  return ".csv";
}

std::optional<GridShape> infer_grid(const ImportanceReport& report) {
  GridShape g;
  for (const auto& c : report.coords) {
    if (!c || c->x < 0 || c->y < 0) return std::nullopt;
    g.width = std::max(g.width, static_cast<std::size_t>(c->x) + 1);
    g.height = std::max(g.height, static_cast<std::size_t>(c->y) + 1);
  }
  if (report.coords.empty()) return std::nullopt;
  return g;
}

void write_report_csv(const ImportanceReport& report, std::ostream& out) {
  out << "index,x,y,w,v\n";
  for (std::size_t i = 0; i < report.size(); ++i) {
    out << i << ',';
    const auto& c = i < report.coords.size() ? report.coords[i] : std::nullopt;
    if (c) out << c->x;
    out << ',';
    if (c) out << c->y;
    out << ',' << format_double(report.w[i]) << ',' << format_double(report.v[i]) << '\n';
  }
}

void write_report_jsonl(const ImportanceReport& report, std::ostream& out) {
  for (std::size_t i = 0; i < report.size(); ++i) {
    nlohmann::ordered_json row;
    row["index"] = i;
    const auto& c = i < report.coords.size() ? report.coords[i] : std::nullopt;
    row["x"] = c ? nlohmann::ordered_json(c->x) : nlohmann::ordered_json(nullptr);
    row["y"] = c ? nlohmann::ordered_json(c->y) : nlohmann::ordered_json(nullptr);
    row["w"] = report.w[i];
    row["v"] = report.v[i];
    out << row.dump() << '\n';
  }
}

void write_report_pgm(const ImportanceReport& report, const GridShape& grid, std::ostream& out) {
  if (report.coords.size() != report.size() ||
      std::any_of(report.coords.begin(), report.coords.end(), [](const auto& c) { return !c.has_value(); }))
    fail(ErrorKind::invalid_argument, "pgm export requires grid coordinates for every instance");
  require(grid.width > 0 && grid.height > 0, "pgm export requires a non-empty grid");
  std::vector<unsigned char> pixels(grid.width * grid.height, 0);
  const double top = report.v.empty() ? 0.0 : *std::max_element(report.v.begin(), report.v.end());
  for (std::size_t i = 0; i < report.size(); ++i) {
    const Coord c = *report.coords[i];
    if (c.x < 0 || c.y < 0 || static_cast<std::size_t>(c.x) >= grid.width || static_cast<std::size_t>(c.y) >= grid.height)
      fail(ErrorKind::invalid_argument, "pgm export: coordinate outside the grid");
    const double level = top > 0.0 ? std::clamp(report.v[i] / top, 0.0, 1.0) * 255.0 : 0.0;
    pixels[static_cast<std::size_t>(c.y) * grid.width + static_cast<std::size_t>(c.x)] =
        static_cast<unsigned char>(std::lround(level));
  }
  out << "P5\n" << grid.width << ' ' << grid.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
}

void export_report(const ImportanceReport& report, std::optional<GridShape> grid, const std::filesystem::path& path,
                   ReportFormat format) {
  if (format == ReportFormat::pgm && !grid) grid = infer_grid(report);
  if (format == ReportFormat::pgm && !grid)
    fail(ErrorKind::invalid_argument, "pgm export requires grid coordinates for every instance");
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  switch (format) {
    case ReportFormat::csv: write_report_csv(report, out); break;
    case ReportFormat::jsonl: write_report_jsonl(report, out); break;
    case ReportFormat::pgm: write_report_pgm(report, *grid, out); break;
  }
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

std::vector<ReportRow> read_report_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("index,x,y,w,v", 0) != 0)
    fail(ErrorKind::format, "report csv: missing 'index,x,y,w,v' header");
  std::vector<ReportRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 5) fail(ErrorKind::format, "report csv: expected 5 fields in '" + line + "'");
    ReportRow r;
    r.index = static_cast<std::size_t>(parse_double(cells[0]));
    if (!cells[1].empty() && !cells[2].empty())
      r.coord = Coord{static_cast<int>(parse_double(cells[1])), static_cast<int>(parse_double(cells[2]))};
    r.w = parse_double(cells[3]);
    r.v = parse_double(cells[4]);
    rows.push_back(r);
  }
  return rows;
}

}  // namespace mamil
