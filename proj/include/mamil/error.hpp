// SPDX-FileCopyrightText: © 2026 The mamil authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace mamil {

// Broad failure classes; the CLI maps each to an exit code.
enum class ErrorKind {
  invalid_argument,  // bad flag, bad config value, violated precondition
  shape,             // tensor shape mismatch
  io,                // file cannot be opened / written
  format,            // malformed file contents
  divergence,        // non-finite loss or gradient during training
  mismatch,          // checkpoint incompatible with the data it is applied to
  not_found,         // requested bag id does not exist
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::invalid_argument, what);
}

}  // namespace mamil
