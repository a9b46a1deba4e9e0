// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// MIL datasets: bag containers, neighbor graphs, the digit-bag generator and
// its label rule, MNIST IDX / tabular / image-patch ingestion, splitting and
// the MAMIL-DS v1 text container.

#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mamil {

struct Coord {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Coord&, const Coord&) = default;
};

struct Instance {
  std::vector<double> features;
  std::optional<Coord> coord;
  // Ground-truth annotation (e.g. the digit class). Kept for oracles and
  // reports only; the model never reads it.
  std::optional<int> source_tag;

  friend bool operator==(const Instance&, const Instance&) = default;
};

struct Bag {
  std::int64_t id = 0;
  std::vector<Instance> instances;
  int label = 0;

  std::size_t size() const { return instances.size(); }
  friend bool operator==(const Bag&, const Bag&) = default;
};

enum class CoordMode { none, line, grid };

std::string_view to_string(CoordMode mode);
CoordMode parse_coord_mode(std::string_view text);

struct Dataset {
  std::vector<Bag> bags;
  std::size_t feature_dim = 0;
  CoordMode coord_mode = CoordMode::none;
  std::string provenance;

  std::size_t size() const { return bags.size(); }
  std::size_t positives() const;
  // Throws ErrorKind::format when an invariant is violated.
  void validate() const;
  // Position of the bag with the given id, if any.
  std::optional<std::size_t> find(std::int64_t id) const;
  Dataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const Dataset& a, const Dataset& b) {
    return a.bags == b.bags && a.feature_dim == b.feature_dim && a.coord_mode == b.coord_mode;
  }
};

// ---------------------------------------------------------------------------
// Neighborhoods

// sets[i] lists the neighbors of instance i in increasing index order.
struct NeighborGraph {
  std::vector<std::vector<std::size_t>> sets;

  std::size_t size() const { return sets.size(); }
  bool empty_edges() const;
};

// Chebyshev neighborhoods: j is a neighbor of i iff 0 < max(|dx|, |dy|) <= d.
// Duplicate coordinates are rejected.
NeighborGraph neighbor_sets(std::span<const Coord> coords, int d);

// Neighborhoods of a bag; instances without coordinates get no neighbors.
NeighborGraph neighbor_graph(const Bag& bag, int d);

// ---------------------------------------------------------------------------
// Digit bags

enum class MilVariant { mil, mil1, mil2, mil3 };

std::string_view to_string(MilVariant v);
MilVariant parse_variant(std::string_view text);

// Bag label of a digit sequence. Adjacency means positions differing by one.
//   mil  : some 9 is present
//   mil1 : some 9 has a 3 directly left or right
//   mil2 : some 9 has no 3 directly left or right
//   mil3 : mil2 holds, and some 7 has no 4 directly left or right
int label_oracle(std::span<const int> digits, MilVariant variant);

struct DigitPool {
  std::vector<std::vector<double>> images;  // flattened, values in [0, 1]
  std::vector<int> labels;
  std::size_t feature_dim = 0;

  std::size_t size() const { return images.size(); }
};

DigitPool make_pool(std::span<const double> pixels, std::size_t feature_dim, std::span<const int> labels);

// Deterministically partitions a pool per class: the last `test_fraction` of
// each class's images (in file order) go to the second pool.
std::pair<DigitPool, DigitPool> split_pool(const DigitPool& pool, double test_fraction);

struct DigitBagSpec {
  MilVariant variant = MilVariant::mil;
  std::size_t count = 0;
  std::size_t min_size = 6;
  std::size_t max_size = 12;
  std::uint64_t seed = 0;
};

// Bags of digits drawn uniformly from `pool`, line coordinates (i, 0) and
// labels from label_oracle over the drawn classes.
Dataset generate_mnist_mil(const DigitPool& pool, const DigitBagSpec& spec);

// ---------------------------------------------------------------------------
// IDX (MNIST distribution format)

struct IdxImages {
  std::size_t count = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> pixels;  // count * rows * cols, scaled by 1/255
};

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes);
std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes);
IdxImages load_idx_images(const std::filesystem::path& path);
std::vector<int> load_idx_labels(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Tabular MIL (Musk-style): one instance per row, `bag_id,label,f1..fd`.

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 / stddev; 1 for constant features

  static Standardizer fit(const Dataset& ds);
  void apply(Dataset& ds) const;
};

struct TabularData {
  Dataset dataset;
  Standardizer standardizer;
};

// Parses and standardizes (zero mean, unit variance over all instances).
TabularData read_tabular_mil(std::istream& in, std::string_view source = "<stream>");
TabularData load_tabular_mil(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Images to patches

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;  // row-major, interleaved channels, values in [0, 1]
};

// A pixel counts as white when its channel mean is at least this value.
inline constexpr double kWhitePixel = 0.9;

// Non-overlapping patch x patch tiles with coords (column, row) in tile
// units; tiles whose white fraction exceeds `white_frac` are dropped.
std::vector<Instance> patchify(const Image& image, std::size_t patch, double white_frac);

// ---------------------------------------------------------------------------
// Splitting (bag granularity, label-stratified, seeded)

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// `train_ratio` of the bags go to train.
Split holdout_split(const Dataset& ds, double train_ratio, std::uint64_t seed);
// Fold f is the test side of the f-th split.
std::vector<Split> kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed);

// ---------------------------------------------------------------------------
// MAMIL-DS v1 container

inline constexpr std::string_view kDatasetMagic = "MAMIL-DS";
inline constexpr std::string_view kDatasetVersion = "v1";

void write_dataset(const Dataset& ds, std::ostream& out);
Dataset read_dataset(std::istream& in);
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// Shortest decimal text that parses back to exactly `v`.
std::string format_double(double v);
double parse_double(std::string_view text);

}  // namespace mamil
