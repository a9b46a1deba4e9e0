// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#include "mamil/checkpoint.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "mamil/error.hpp"

namespace mamil {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::size_t to_size(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(ErrorKind::format, "checkpoint: config key '" + key + "' has invalid value '" + text + "'");
  }
}

std::vector<std::size_t> to_sizes(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(text)) out.push_back(to_size(key, item));
  return out;
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out) {
  const ModelConfig& c = ckpt.model.config;
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  out << "input_dim=" << c.input_dim << '\n';
  out << "templates=" << c.templates << '\n';
  out << "radius=" << c.radius << '\n';
  out << "dim_f=" << c.dim_f << '\n';
  out << "encoder_layers=" << join_sizes(c.encoder_layers) << '\n';
  out << "neighborhood=" << (c.neighborhood ? 1 : 0) << '\n';
  out << "classifier_layers=" << join_sizes(c.classifier_layers) << '\n';
  out << "seed=" << c.seed << '\n';
  if (ckpt.coord_mode) out << "coord_mode=" << to_string(*ckpt.coord_mode) << '\n';
  if (!ckpt.frozen.empty()) {
    out << "frozen=";
    for (std::size_t i = 0; i < ckpt.frozen.size(); ++i) out << (i ? "," : "") << ckpt.frozen[i];
    out << '\n';
  }
  std::string line;
  for (const auto& e : ckpt.model.params.entries()) {
    out << e.name << " shape " << e.value.rows() << ' ' << e.value.cols() << '\n';
    for (Eigen::Index r = 0; r < e.value.rows(); ++r) {
      line.clear();
      for (Eigen::Index k = 0; k < e.value.cols(); ++k) {
        if (k) line += ' ';
        line += format_double(e.value(r, k));
      }
      line += '\n';
      out << line;
    }
  }
}

Checkpoint read_checkpoint(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::format, "checkpoint: empty input, expected 'MAMIL-CKPT v1'");
  {
    std::istringstream hs(line);
    std::string magic, version;
    hs >> magic >> version;
    if (magic != kCheckpointMagic)
      fail(ErrorKind::format, "checkpoint: expected header token '" + std::string(kCheckpointMagic) + "', got '" + magic + "'");
    if (version != kCheckpointVersion)
      fail(ErrorKind::mismatch, "checkpoint: unsupported version '" + version + "', expected '" +
                                  std::string(kCheckpointVersion) + "'");
  }

  Checkpoint ckpt;
  ModelConfig& c = ckpt.model.config;
  std::map<std::string, std::string> seen;
  std::string pending;  // first parameter header line
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      pending = line;
      break;
    }
    const std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    seen[key] = value;
    if (key == "input_dim") c.input_dim = to_size(key, value);
    else if (key == "templates") c.templates = to_size(key, value);
    else if (key == "radius") c.radius = static_cast<int>(to_size(key, value));
    else if (key == "dim_f") c.dim_f = to_size(key, value);
    else if (key == "encoder_layers") c.encoder_layers = to_sizes(key, value);
    else if (key == "neighborhood") c.neighborhood = to_size(key, value) != 0;
    else if (key == "classifier_layers") c.classifier_layers = to_sizes(key, value);
    else if (key == "seed") c.seed = static_cast<std::uint64_t>(std::stoull(value));
    else if (key == "frozen") ckpt.frozen = split_list(value);
    else if (key == "coord_mode") {
      try {
        ckpt.coord_mode = parse_coord_mode(value);
      } catch (const Error&) {
        fail(ErrorKind::format, "checkpoint: config key 'coord_mode' has invalid value '" + value + "'");
      }
    }
    else fail(ErrorKind::format, "checkpoint: unknown config key '" + key + "'");
  }
  for (const char* required : {"input_dim", "templates", "radius", "dim_f", "encoder_layers", "neighborhood",
                               "classifier_layers", "seed"})
    if (!seen.count(required)) fail(ErrorKind::format, std::string("checkpoint: config block lacks '") + required + "'");

  std::string last_complete = "<config>";
  while (!pending.empty()) {
    std::istringstream hs(pending);
    std::string name, tag;
    long long rows = -1, cols = -1;
    hs >> name >> tag >> rows >> cols;
    if (tag != "shape" || rows < 0 || cols < 0)
      fail(ErrorKind::format, "checkpoint: malformed block header '" + pending + "' after block '" + last_complete + "'");
    Matrix m(rows, cols);
    for (long long r = 0; r < rows; ++r) {
      if (!std::getline(in, line))
        fail(ErrorKind::format, "checkpoint: truncated in block '" + name + "'; last complete block is '" +
                                    last_complete + "'");
      std::istringstream rs(line);
      std::string tok;
      for (long long k = 0; k < cols; ++k) {
        if (!(rs >> tok))
          fail(ErrorKind::format, "checkpoint: truncated in block '" + name + "'; last complete block is '" +
                                      last_complete + "'");
        try {
          m(r, k) = parse_double(tok);
        } catch (const Error& e) {
          fail(ErrorKind::format, "checkpoint: block '" + name + "': " + e.what());
        }
      }
    }
    try {
      ckpt.model.params.add(name, std::move(m));
    } catch (const Error& e) {
      fail(ErrorKind::format, std::string("checkpoint: ") + e.what());
    }
    last_complete = name;
    pending.clear();
    while (std::getline(in, line)) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (!line.empty()) {
        pending = line;
        break;
      }
    }
  }
  const std::size_t expected = parameter_names(c).size();
  if (ckpt.model.params.size() < expected)
    fail(ErrorKind::format, "checkpoint: truncated, " + std::to_string(ckpt.model.params.size()) + " of " +
                                std::to_string(expected) + " blocks present; last complete block is '" + last_complete +
                                "'");
  try {
    ckpt.model.validate();
  } catch (const Error& e) {
    fail(e.kind(), std::string("checkpoint: ") + e.what() + " (last complete block '" + last_complete + "')");
  }
  for (const std::string& name : ckpt.frozen)
    if (!ckpt.model.params.contains(name)) fail(ErrorKind::format, "checkpoint: frozen name '" + name + "' is not a parameter");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  write_checkpoint(ckpt, out);
  if (!out) fail(ErrorKind::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open " + path.string());
  return read_checkpoint(in);
}

}  // namespace mamil
