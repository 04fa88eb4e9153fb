// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace wnprobe {

// Error categories double as CLI exit codes.
enum class ErrorKind {
  input = 2,
  numerical = 3,
  search = 4,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  int exit_code() const noexcept { return static_cast<int>(kind_); }

 private:
  ErrorKind kind_;
};

inline Error input_error(const std::string& what) { return Error(ErrorKind::input, what); }
inline Error numerical_error(const std::string& what) { return Error(ErrorKind::numerical, what); }
inline Error search_error(const std::string& what) { return Error(ErrorKind::search, what); }

}  // namespace wnprobe
