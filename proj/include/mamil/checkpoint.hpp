// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0
//
// MAMIL-CKPT v1: a text checkpoint.
//
//   MAMIL-CKPT v1
//   key=value            one line per ModelConfig field (plus optional `frozen`
//                        and `coord_mode` of the training data)
//   <name> shape <rows> <cols>
//   <row-major values, one matrix row per line, shortest round-trip decimals>
//   ...
//
// Parameters appear in Params order; values round-trip bit-exactly.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mamil/datasets.hpp"
#include "mamil/model.hpp"

namespace mamil {

inline constexpr std::string_view kCheckpointMagic = "MAMIL-CKPT";
inline constexpr std::string_view kCheckpointVersion = "v1";

struct Checkpoint {
  Model model;
  // Parameters to hold fixed in later training (set after adding templates).
  std::vector<std::string> frozen;
  std::optional<CoordMode> coord_mode;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace mamil
