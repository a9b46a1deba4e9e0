// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/datasets.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "mamil/error.hpp"
#include "mamil/rng.hpp"

namespace mamil {

// ---------------------------------------------------------------------------
// Small text helpers

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double v = 0.0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    fail(ErrorKind::format, "not a number: '" + std::string(text) + "'");
  return v;
}

namespace {

std::int64_t parse_int(std::string_view text) {
  while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
  while (!text.empty() && (text.back() == ' ' || text.back() == '\t' || text.back() == '\r')) text.remove_suffix(1);
  std::int64_t v = 0;
  auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    fail(ErrorKind::format, "not an integer: '" + std::string(text) + "'");
  return v;
}

std::vector<std::string_view> split_fields(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

std::string_view trim_cr(std::string_view s) {
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  return s;
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

// ---------------------------------------------------------------------------
// Dataset

std::string_view to_string(CoordMode mode) {
  switch (mode) {
    case CoordMode::none: return "none";
    case CoordMode::line: return "line";
    case CoordMode::grid: return "grid";
  }
  return "none";
}

CoordMode parse_coord_mode(std::string_view text) {
  if (text == "none") return CoordMode::none;
  if (text == "line") return CoordMode::line;
  if (text == "grid") return CoordMode::grid;
  fail(ErrorKind::format, "unknown coord mode '" + std::string(text) + "' (expected none, line or grid)");
}

std::size_t Dataset::positives() const {
  return static_cast<std::size_t>(std::count_if(bags.begin(), bags.end(), [](const Bag& b) { return b.label == 1; }));
}

void Dataset::validate() const {
  std::set<std::int64_t> ids;
  for (const Bag& bag : bags) {
    const std::string where = "bag " + std::to_string(bag.id);
    if (!ids.insert(bag.id).second) fail(ErrorKind::format, "duplicate bag id " + std::to_string(bag.id));
    if (bag.instances.empty()) fail(ErrorKind::format, where + " has no instances");
    if (bag.label != 0 && bag.label != 1) fail(ErrorKind::format, where + " has label " + std::to_string(bag.label));
    for (const Instance& inst : bag.instances) {
      if (inst.features.size() != feature_dim)
        fail(ErrorKind::format, where + ": instance has " + std::to_string(inst.features.size()) +
                                    " features, dataset declares " + std::to_string(feature_dim));
      if ((coord_mode == CoordMode::none) == inst.coord.has_value())
        fail(ErrorKind::format, where + ": coordinates inconsistent with coord mode " + std::string(to_string(coord_mode)));
    }
  }
}

std::optional<std::size_t> Dataset::find(std::int64_t id) const {
  for (std::size_t i = 0; i < bags.size(); ++i)
    if (bags[i].id == id) return i;
  return std::nullopt;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.feature_dim = feature_dim;
  out.coord_mode = coord_mode;
  out.provenance = provenance;
  out.bags.reserve(indices.size());
  for (std::size_t i : indices) out.bags.push_back(bags.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// Neighborhoods

bool NeighborGraph::empty_edges() const {
  return std::all_of(sets.begin(), sets.end(), [](const auto& s) { return s.empty(); });
}

NeighborGraph neighbor_sets(std::span<const Coord> coords, int d) {
  require(d >= 1, "neighbor radius must be >= 1, got " + std::to_string(d));
  {
    std::set<Coord> seen;
    for (const Coord& c : coords)
      if (!seen.insert(c).second)
        fail(ErrorKind::invalid_argument,
             "duplicate coordinate (" + std::to_string(c.x) + "," + std::to_string(c.y) + ")");
  }
  NeighborGraph g;
  g.sets.resize(coords.size());
  for (std::size_t i = 0; i < coords.size(); ++i)
    for (std::size_t j = 0; j < coords.size(); ++j) {
      if (i == j) continue;
      const int dist = std::max(std::abs(coords[i].x - coords[j].x), std::abs(coords[i].y - coords[j].y));
      if (dist <= d) g.sets[i].push_back(j);
    }
  return g;
}

NeighborGraph neighbor_graph(const Bag& bag, int d) {
  const bool has_coords = std::all_of(bag.instances.begin(), bag.instances.end(),
                                      [](const Instance& i) { return i.coord.has_value(); });
  if (!has_coords || bag.instances.empty()) {
    NeighborGraph g;
    g.sets.resize(bag.size());
    return g;
  }
  std::vector<Coord> coords;
  coords.reserve(bag.size());
  for (const Instance& i : bag.instances) coords.push_back(*i.coord);
  return neighbor_sets(coords, d);
}

// ---------------------------------------------------------------------------
// Digit bags

std::string_view to_string(MilVariant v) {
  switch (v) {
    case MilVariant::mil: return "mil";
    case MilVariant::mil1: return "mil1";
    case MilVariant::mil2: return "mil2";
    case MilVariant::mil3: return "mil3";
  }
  return "mil";
}

MilVariant parse_variant(std::string_view text) {
  if (text == "mil") return MilVariant::mil;
  if (text == "mil1") return MilVariant::mil1;
  if (text == "mil2") return MilVariant::mil2;
  if (text == "mil3") return MilVariant::mil3;
  fail(ErrorKind::invalid_argument, "unknown variant '" + std::string(text) + "' (expected mil, mil1, mil2 or mil3)");
}

namespace {

bool has_neighbor(std::span<const int> d, std::size_t i, int value) {
  return (i > 0 && d[i - 1] == value) || (i + 1 < d.size() && d[i + 1] == value);
}

bool some_without_neighbor(std::span<const int> d, int digit, int forbidden) {
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d[i] == digit && !has_neighbor(d, i, forbidden)) return true;
  return false;
}

}  // namespace

int label_oracle(std::span<const int> digits, MilVariant variant) {
  require(!digits.empty(), "label_oracle: empty digit sequence");
  for (int d : digits) require(d >= 0 && d <= 9, "label_oracle: digit out of range: " + std::to_string(d));
  switch (variant) {
    case MilVariant::mil:
      return std::find(digits.begin(), digits.end(), 9) != digits.end() ? 1 : 0;
    case MilVariant::mil1:
      for (std::size_t i = 0; i + 1 < digits.size(); ++i) {
        const int a = digits[i], b = digits[i + 1];
        if ((a == 9 && b == 3) || (a == 3 && b == 9)) return 1;
      }
      return 0;
    case MilVariant::mil2:
      return some_without_neighbor(digits, 9, 3) ? 1 : 0;
    case MilVariant::mil3:
      return some_without_neighbor(digits, 9, 3) && some_without_neighbor(digits, 7, 4) ? 1 : 0;
  }
  return 0;
}

DigitPool make_pool(std::span<const double> pixels, std::size_t feature_dim, std::span<const int> labels) {
  require(feature_dim > 0, "make_pool: zero feature dim");
  require(pixels.size() == feature_dim * labels.size(),
          "make_pool: " + std::to_string(pixels.size()) + " pixels do not match " + std::to_string(labels.size()) +
              " labels of dim " + std::to_string(feature_dim));
  DigitPool pool;
  pool.feature_dim = feature_dim;
  pool.labels.assign(labels.begin(), labels.end());
  pool.images.reserve(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * feature_dim);
    pool.images.emplace_back(first, first + static_cast<std::ptrdiff_t>(feature_dim));
  }
  return pool;
}

std::pair<DigitPool, DigitPool> split_pool(const DigitPool& pool, double test_fraction) {
  require(test_fraction >= 0.0 && test_fraction <= 1.0, "split_pool: test fraction outside [0, 1]");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < pool.size(); ++i) by_class[pool.labels[i]].push_back(i);
  std::vector<bool> to_test(pool.size(), false);
  for (auto& [cls, idx] : by_class) {
    const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(idx.size())));
    for (std::size_t k = idx.size() - n_test; k < idx.size(); ++k) to_test[idx[k]] = true;
  }
  DigitPool train, test;
  train.feature_dim = test.feature_dim = pool.feature_dim;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    DigitPool& dst = to_test[i] ? test : train;
    dst.images.push_back(pool.images[i]);
    dst.labels.push_back(pool.labels[i]);
  }
  return {std::move(train), std::move(test)};
}

Dataset generate_mnist_mil(const DigitPool& pool, const DigitBagSpec& spec) {
  require(spec.min_size >= 1 && spec.min_size <= spec.max_size,
          "bag size range [" + std::to_string(spec.min_size) + ", " + std::to_string(spec.max_size) + "] is invalid");
  require(pool.size() > 0 && pool.images.size() == pool.labels.size(), "digit pool is empty");
  for (int digit = 0; digit <= 9; ++digit)
    if (std::find(pool.labels.begin(), pool.labels.end(), digit) == pool.labels.end())
      fail(ErrorKind::invalid_argument, "digit pool has no images of class " + std::to_string(digit));

  Rng rng(derive_seed(spec.seed, "data"));
  std::uniform_int_distribution<std::size_t> size_dist(spec.min_size, spec.max_size);
  std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);

  Dataset ds;
  ds.feature_dim = pool.feature_dim;
  ds.coord_mode = CoordMode::line;
  ds.provenance = "mnist-" + std::string(to_string(spec.variant)) + " seed=" + std::to_string(spec.seed);
  ds.bags.reserve(spec.count);
  std::vector<int> digits;
  for (std::size_t b = 0; b < spec.count; ++b) {
    Bag bag;
    bag.id = static_cast<std::int64_t>(b);
    const std::size_t m = size_dist(rng);
    digits.clear();
    for (std::size_t i = 0; i < m; ++i) {
      const std::size_t k = pick(rng);
      Instance inst;
      inst.features = pool.images[k];
      inst.coord = Coord{static_cast<int>(i), 0};
      inst.source_tag = pool.labels[k];
      digits.push_back(pool.labels[k]);
      bag.instances.push_back(std::move(inst));
    }
    bag.label = label_oracle(digits, spec.variant);
    ds.bags.push_back(std::move(bag));
  }
  return ds;
}

// ---------------------------------------------------------------------------
// IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  if (bytes.size() < offset + 4)
    fail(ErrorKind::format, "idx: truncated header at byte offset " + std::to_string(offset));
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void check_magic(std::span<const std::uint8_t> bytes, std::uint32_t expected) {
  const std::uint32_t magic = read_be32(bytes, 0);
  if (magic != expected) {
    std::ostringstream os;
    os << "idx: bad magic 0x" << std::hex << magic << " at byte offset 0, expected 0x" << expected;
    fail(ErrorKind::format, os.str());
  }
}

void check_payload(std::span<const std::uint8_t> bytes, std::size_t offset, std::size_t need) {
  if (bytes.size() < offset + need)
    fail(ErrorKind::format, "idx: truncated payload at byte offset " + std::to_string(bytes.size()) + ", expected " +
                                std::to_string(offset + need) + " bytes");
}

}  // namespace

IdxImages parse_idx_images(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, 0x00000803);
  IdxImages out;
  out.count = read_be32(bytes, 4);
  out.rows = read_be32(bytes, 8);
  out.cols = read_be32(bytes, 12);
  const std::size_t n = out.count * out.rows * out.cols;
  check_payload(bytes, 16, n);
  out.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.pixels[i] = bytes[16 + i] / 255.0;
  return out;
}

std::vector<int> parse_idx_labels(std::span<const std::uint8_t> bytes) {
  check_magic(bytes, 0x00000801);
  const std::size_t n = read_be32(bytes, 4);
  check_payload(bytes, 8, n);
  return {bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n)};
}

IdxImages load_idx_images(const std::filesystem::path& path) { return parse_idx_images(read_bytes(path)); }
std::vector<int> load_idx_labels(const std::filesystem::path& path) { return parse_idx_labels(read_bytes(path)); }

// ---------------------------------------------------------------------------
// Tabular

Standardizer Standardizer::fit(const Dataset& ds) {
  Standardizer s;
  const std::size_t d = ds.feature_dim;
  s.mean.assign(d, 0.0);
  s.scale.assign(d, 1.0);
  std::vector<double> sq(d, 0.0);
  std::size_t n = 0;
  for (const Bag& b : ds.bags)
    for (const Instance& i : b.instances) {
      for (std::size_t f = 0; f < d; ++f) s.mean[f] += i.features[f];
      ++n;
    }
  if (n == 0) return s;
  for (double& m : s.mean) m /= static_cast<double>(n);
  for (const Bag& b : ds.bags)
    for (const Instance& i : b.instances)
      for (std::size_t f = 0; f < d; ++f) sq[f] += (i.features[f] - s.mean[f]) * (i.features[f] - s.mean[f]);
  for (std::size_t f = 0; f < d; ++f) {
    const double sd = std::sqrt(sq[f] / static_cast<double>(n));
    s.scale[f] = sd > 0.0 ? 1.0 / sd : 1.0;
  }
  return s;
}

void Standardizer::apply(Dataset& ds) const {
  require(mean.size() == ds.feature_dim, "standardizer dimension does not match dataset");
  for (Bag& b : ds.bags)
    for (Instance& i : b.instances)
      for (std::size_t f = 0; f < ds.feature_dim; ++f) i.features[f] = (i.features[f] - mean[f]) * scale[f];
}

TabularData read_tabular_mil(std::istream& in, std::string_view source) {
  Dataset ds;
  ds.coord_mode = CoordMode::none;
  ds.provenance = std::string(source);
  std::map<std::int64_t, std::size_t> index;  // bag id -> position
  std::string line;
  std::size_t row = 0;
  bool have_dim = false;
  while (std::getline(in, line)) {
    ++row;
    const std::string_view text = trim_cr(line);
    if (text.find_first_not_of(" \t") == std::string_view::npos) continue;
    const auto fields = text.find(',') != std::string_view::npos ? split_fields(text, ',') : split_whitespace(text);
    const std::string where = std::string(source) + " row " + std::to_string(row);
    if (fields.size() < 3) fail(ErrorKind::format, where + ": expected bag_id,label,features...");
    const std::size_t dim = fields.size() - 2;
    if (!have_dim) {
      ds.feature_dim = dim;
      have_dim = true;
    } else if (dim != ds.feature_dim) {
      fail(ErrorKind::format, where + ": ragged row with " + std::to_string(dim) + " features, expected " +
                                  std::to_string(ds.feature_dim));
    }
    std::int64_t id = 0, label = 0;
    Instance inst;
    try {
      id = parse_int(fields[0]);
      label = parse_int(fields[1]);
      inst.features.reserve(dim);
      for (std::size_t f = 2; f < fields.size(); ++f) inst.features.push_back(parse_double(fields[f]));
    } catch (const Error& e) {
      fail(ErrorKind::format, where + ": " + e.what());
    }
    if (label != 0 && label != 1) fail(ErrorKind::format, where + ": label must be 0 or 1");
    auto [it, fresh] = index.emplace(id, ds.bags.size());
    if (fresh) {
      Bag bag;
      bag.id = id;
      bag.label = static_cast<int>(label);
      ds.bags.push_back(std::move(bag));
    }
    Bag& bag = ds.bags[it->second];
    if (bag.label != label)
      fail(ErrorKind::format, where + ": label " + std::to_string(label) + " inconsistent with earlier rows of bag " +
                                  std::to_string(id));
    bag.instances.push_back(std::move(inst));
  }
  if (ds.bags.empty()) fail(ErrorKind::format, std::string(source) + ": no rows");
  TabularData out;
  out.standardizer = Standardizer::fit(ds);
  out.standardizer.apply(ds);
  out.dataset = std::move(ds);
  return out;
}

TabularData load_tabular_mil(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return read_tabular_mil(in, path.filename().string());
}

// ---------------------------------------------------------------------------
// Patches

std::vector<Instance> patchify(const Image& image, std::size_t patch, double white_frac) {
  require(patch > 0, "patch size must be positive");
  require(image.channels > 0, "image has no channels");
  require(image.pixels.size() == image.width * image.height * image.channels, "image pixel buffer has wrong size");
  if (image.width % patch != 0 || image.height % patch != 0)
    fail(ErrorKind::invalid_argument, "patch size " + std::to_string(patch) + " does not divide image " +
                                          std::to_string(image.width) + "x" + std::to_string(image.height));
  const std::size_t ch = image.channels;
  std::vector<Instance> out;
  for (std::size_t ty = 0; ty < image.height / patch; ++ty)
    for (std::size_t tx = 0; tx < image.width / patch; ++tx) {
      Instance inst;
      inst.features.reserve(patch * patch * ch);
      std::size_t white = 0;
      for (std::size_t y = ty * patch; y < (ty + 1) * patch; ++y)
        for (std::size_t x = tx * patch; x < (tx + 1) * patch; ++x) {
          const double* px = &image.pixels[(y * image.width + x) * ch];
          double mean = 0.0;
          for (std::size_t c = 0; c < ch; ++c) {
            inst.features.push_back(px[c]);
            mean += px[c];
          }
          if (mean / static_cast<double>(ch) >= kWhitePixel) ++white;
        }
      const double frac = static_cast<double>(white) / static_cast<double>(patch * patch);
      if (frac > white_frac) continue;
      inst.coord = Coord{static_cast<int>(tx), static_cast<int>(ty)};
      out.push_back(std::move(inst));
    }
  return out;
}

// ---------------------------------------------------------------------------
// Splits

namespace {

// Positive then negative bag indices, each shuffled.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> shuffled_by_class(const Dataset& ds,
                                                                                 std::uint64_t seed) {
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ds.size(); ++i) (ds.bags[i].label == 1 ? pos : neg).push_back(i);
  Rng rng(derive_seed(seed, "split"));
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  return {std::move(pos), std::move(neg)};
}

}  // namespace

Split holdout_split(const Dataset& ds, double train_ratio, std::uint64_t seed) {
  require(train_ratio > 0.0 && train_ratio < 1.0, "holdout ratio must lie in (0, 1)");
  auto [pos, neg] = shuffled_by_class(ds, seed);
  const auto total = static_cast<std::size_t>(std::llround(train_ratio * static_cast<double>(ds.size())));
  // Largest-remainder apportionment of the train quota across the classes.
  const double qp = train_ratio * static_cast<double>(pos.size());
  const double qn = train_ratio * static_cast<double>(neg.size());
  std::size_t np = static_cast<std::size_t>(std::floor(qp));
  std::size_t nn = static_cast<std::size_t>(std::floor(qn));
  while (np + nn < total) {
    const bool give_pos = np < pos.size() && (nn >= neg.size() || qp - np >= qn - nn);
    (give_pos ? np : nn) += 1;
  }
  Split s;
  s.train.insert(s.train.end(), pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(np));
  s.train.insert(s.train.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(nn));
  s.test.insert(s.test.end(), pos.begin() + static_cast<std::ptrdiff_t>(np), pos.end());
  s.test.insert(s.test.end(), neg.begin() + static_cast<std::ptrdiff_t>(nn), neg.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<Split> kfold_split(const Dataset& ds, std::size_t k, std::uint64_t seed) {
  require(k >= 2, "k-fold needs k >= 2");
  if (k > ds.size())
    fail(ErrorKind::invalid_argument, "k-fold: k=" + std::to_string(k) + " exceeds bag count " + std::to_string(ds.size()));
  auto [pos, neg] = shuffled_by_class(ds, seed);
  std::vector<std::size_t> order = std::move(pos);
  order.insert(order.end(), neg.begin(), neg.end());
  std::vector<std::size_t> fold_of(ds.size());
  for (std::size_t r = 0; r < order.size(); ++r) fold_of[order[r]] = r % k;
  std::vector<Split> folds(k);
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t f = 0; f < k; ++f) (fold_of[i] == f ? folds[f].test : folds[f].train).push_back(i);
  return folds;
}

// ---------------------------------------------------------------------------
// MAMIL-DS v1

void write_dataset(const Dataset& ds, std::ostream& out) {
  out << kDatasetMagic << ' ' << kDatasetVersion << ' ' << ds.feature_dim << ' ' << to_string(ds.coord_mode) << '\n';
  std::string line;
  for (const Bag& bag : ds.bags)
    for (const Instance& inst : bag.instances) {
      line.clear();
      line += std::to_string(bag.id);
      line += ',';
      line += std::to_string(bag.label);
      line += ',';
      if (inst.coord) line += std::to_string(inst.coord->x);
      line += ',';
      if (inst.coord) line += std::to_string(inst.coord->y);
      line += ',';
      if (inst.source_tag) line += std::to_string(*inst.source_tag);
      for (double f : inst.features) {
        line += ',';
        line += format_double(f);
      }
      line += '\n';
      out << line;
    }
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::format, "dataset: empty input, expected header token 'MAMIL-DS'");
  const auto header = split_whitespace(line);
  if (header.empty() || header[0] != kDatasetMagic)
    fail(ErrorKind::format, "dataset: expected header token '" + std::string(kDatasetMagic) + "', got '" +
                                (header.empty() ? std::string() : std::string(header[0])) + "'");
  if (header.size() < 2 || header[1] != kDatasetVersion)
    fail(ErrorKind::format, "dataset: unsupported version '" + (header.size() < 2 ? std::string() : std::string(header[1])) +
                                "', expected '" + std::string(kDatasetVersion) + "'");
  if (header.size() != 4) fail(ErrorKind::format, "dataset: header must be 'MAMIL-DS v1 <feature_dim> <coord_mode>'");
  Dataset ds;
  try {
    const std::int64_t dim = parse_int(header[2]);
    if (dim < 1) fail(ErrorKind::format, "feature dim must be positive");
    ds.feature_dim = static_cast<std::size_t>(dim);
  } catch (const Error& e) {
    fail(ErrorKind::format, std::string("dataset header: ") + e.what());
  }
  ds.coord_mode = parse_coord_mode(header[3]);

  std::size_t row = 1;
  std::set<std::int64_t> closed;  // ids whose records ended
  while (std::getline(in, line)) {
    ++row;
    const std::string_view text = trim_cr(line);
    if (text.empty()) continue;
    const std::string where = "dataset line " + std::to_string(row);
    const auto fields = split_fields(text, ',');
    if (fields.size() == 2) fail(ErrorKind::format, where + ": empty-bag record (no instance fields)");
    if (fields.size() != 5 + ds.feature_dim)
      fail(ErrorKind::format, where + ": expected " + std::to_string(5 + ds.feature_dim) + " fields, got " +
                                  std::to_string(fields.size()));
    try {
      const std::int64_t id = parse_int(fields[0]);
      const std::int64_t label = parse_int(fields[1]);
      if (label != 0 && label != 1) fail(ErrorKind::format, "label must be 0 or 1");
      Instance inst;
      const bool has_x = !fields[2].empty(), has_y = !fields[3].empty();
      if (has_x != has_y) fail(ErrorKind::format, "x and y must both be present or both empty");
      if (has_x) inst.coord = Coord{static_cast<int>(parse_int(fields[2])), static_cast<int>(parse_int(fields[3]))};
      if (!fields[4].empty()) inst.source_tag = static_cast<int>(parse_int(fields[4]));
      inst.features.reserve(ds.feature_dim);
      for (std::size_t f = 5; f < fields.size(); ++f) inst.features.push_back(parse_double(fields[f]));

      if (ds.bags.empty() || ds.bags.back().id != id) {
        if (!ds.bags.empty()) closed.insert(ds.bags.back().id);
        if (closed.count(id)) fail(ErrorKind::format, "bag id " + std::to_string(id) + " is not contiguous");
        Bag bag;
        bag.id = id;
        bag.label = static_cast<int>(label);
        ds.bags.push_back(std::move(bag));
      } else if (ds.bags.back().label != label) {
        fail(ErrorKind::format, "label inconsistent within bag " + std::to_string(id));
      }
      ds.bags.back().instances.push_back(std::move(inst));
    } catch (const Error& e) {
      fail(ErrorKind::format, where + ": " + e.what());
    }
  }
  ds.validate();
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  write_dataset(ds, out);
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  Dataset ds = read_dataset(in);
  ds.provenance = path.filename().string();
  return ds;
}

}  // namespace mamil
