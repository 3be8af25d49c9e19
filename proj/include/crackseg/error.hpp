// Copyright 2026 The crackseg Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace crackseg {

enum class Errc {
  shape,
  invalid_parameter,
  config,
  structure,
  calibration,
  missing_edge_stats,
  dtype,
  bad_magic,
  crc_mismatch,
  missing_tensor,
  shape_mismatch,
  truncated,
  parse,
  io,
  planning,
  deadlock,
  verification,
};

inline std::string_view errc_name(Errc e) {
  switch (e) {
    case Errc::shape: return "shape";
    case Errc::invalid_parameter: return "invalid_parameter";
    case Errc::config: return "config";
    case Errc::structure: return "structure";
    case Errc::calibration: return "calibration";
    case Errc::missing_edge_stats: return "missing_edge_stats";
    case Errc::dtype: return "dtype";
    case Errc::bad_magic: return "bad_magic";
    case Errc::crc_mismatch: return "crc_mismatch";
    case Errc::missing_tensor: return "missing_tensor";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::truncated: return "truncated";
    case Errc::parse: return "parse";
    case Errc::io: return "io";
    case Errc::planning: return "planning";
    case Errc::deadlock: return "deadlock";
    case Errc::verification: return "verification";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code),
        message_(what) {}

  Errc code() const noexcept { return code_; }
  /// The message without the error-code prefix.
  const std::string& message() const noexcept { return message_; }

 private:
  Errc code_;
  std::string message_;
};

namespace detail {

template <typename... Args>
[[noreturn]] void fail(Errc code, Args&&... args) {
  std::ostringstream oss;
  (oss << ... << std::forward<Args>(args));
  throw Error(code, oss.str());
}

}  // namespace detail

}  // namespace crackseg
