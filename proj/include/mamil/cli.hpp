// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end. `run_cli` is the whole program minus process
// plumbing, so tests can drive it in-process.
//
// Exit codes: 0 ok, 2 bad flags or arguments, 3 I/O or malformed input,
// 4 divergence, 5 checkpoint/data mismatch, 6 unknown bag id, 7 gradcheck fail.

#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mamil/datasets.hpp"
#include "mamil/error.hpp"
#include "mamil/model.hpp"
#include "mamil/training.hpp"

namespace mamil::cli {

enum ExitCode : int {
  kOk = 0,
  kBadFlags = 2,
  kIoError = 3,
  kDivergence = 4,
  kMismatch = 5,
  kUnknownBag = 6,
  kGradcheckFailed = 7,
};

int exit_code(ErrorKind kind);

// Settings shared by the subcommands. Every key has a default except the
// paths, which are empty until set.
struct RunConfig {
  // model
  std::size_t templates = 10;
  int radius = 1;
  std::size_t dim_f = 128;
  std::vector<std::size_t> encoder_layers{256};
  std::vector<std::size_t> classifier_layers;
  bool neighborhood = true;
  // training
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_adam = 1e-8;
  double weight_decay = 1e-4;
  std::size_t epochs = 20;
  // randomness
  std::uint64_t seed = 0;
  // dataset generation
  MilVariant variant = MilVariant::mil;
  std::size_t bags = 0;  // 0: 2000 for the train/all pool, 500 for the test pool
  std::size_t min_size = 6;
  std::size_t max_size = 12;
  std::string pool = "train";  // train | test | all
  double test_fraction = 0.2;
  // paths
  std::string data;
  std::string ckpt;
  std::string out;

  static const std::vector<std::string>& keys();
  static bool is_key(std::string_view key);
  // Parses and stores one value; throws invalid_argument on bad values or keys.
  void set(std::string_view key, std::string_view value);
  // Canonical text of a value; set(key, get(key)) is a no-op.
  std::string get(std::string_view key) const;

  ModelConfig model_config() const;
  TrainConfig train_config() const;
  std::size_t bag_count() const;
};

// Flat `key = value` text; `#` starts a comment. Unknown keys, duplicate
// keys and lines without '=' are rejected with the line number.
std::map<std::string, std::string> parse_config_text(std::istream& in, std::string_view source);
std::map<std::string, std::string> load_config_file(const std::string& path);

// flag > config file > base
RunConfig resolve(RunConfig base, const std::map<std::string, std::string>& file_values,
                  const std::map<std::string, std::string>& flag_values);

// Command-line flag for a config key: dim_f -> --dim-f.
std::string flag_name(std::string_view key);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mamil::cli
