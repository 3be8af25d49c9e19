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

// Minimal header-addressed CSV tables: comma separated, no quoting, first
// line is the header, blank lines and lines starting with '#' are skipped.

#pragma once

#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "crackseg/error.hpp"

namespace crackseg::csv {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string> split(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view s, std::string_view what = "value") {
  s = trim(s);
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    detail::fail(Errc::parse, "cannot parse ", what, " '", s, "' as a number");
  return v;
}

inline long long parse_int(std::string_view s, std::string_view what = "value") {
  s = trim(s);
  long long v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || s.empty())
    detail::fail(Errc::parse, "cannot parse ", what, " '", s, "' as an integer");
  return v;
}

class Table {
 public:
  struct Row {
    int line = 0;
    std::vector<std::string> cells;
  };

  static Table parse(std::string_view text, std::string_view source = "<csv>") {
    Table t;
    t.source_ = std::string(source);
    std::size_t pos = 0;
    int line_no = 0;
    bool have_header = false;
    while (pos <= text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      const auto line = trim(text.substr(pos, end - pos));
      ++line_no;
      pos = end + 1;
      if (line.empty() || line.front() == '#') {
        if (end == text.size()) break;
        continue;
      }
      auto cells = split(line);
      if (!have_header) {
        t.header_ = std::move(cells);
        for (std::size_t i = 0; i < t.header_.size(); ++i) {
          if (t.index_.contains(t.header_[i]))
            detail::fail(Errc::parse, source, ":", line_no, ": duplicate column '", t.header_[i], "'");
          t.index_[t.header_[i]] = i;
        }
        have_header = true;
      } else {
        if (cells.size() != t.header_.size())
          detail::fail(Errc::parse, source, ":", line_no, ": expected ", t.header_.size(), " fields, got ",
                       cells.size());
        t.rows_.push_back({line_no, std::move(cells)});
      }
      if (end == text.size()) break;
    }
    if (!have_header) detail::fail(Errc::parse, source, ": missing header line");
    return t;
  }

  static Table read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) detail::fail(Errc::io, "cannot open '", path, "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path);
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<Row>& rows() const { return rows_; }
  bool has(const std::string& col) const { return index_.contains(col); }

  void require(std::initializer_list<const char*> cols) const {
    for (const char* c : cols)
      if (!has(c)) detail::fail(Errc::parse, source_, ": missing column '", c, "'");
  }

  const std::string& cell(const Row& r, const std::string& col) const {
    const auto it = index_.find(col);
    if (it == index_.end()) detail::fail(Errc::parse, source_, ": missing column '", col, "'");
    return r.cells[it->second];
  }

  double number(const Row& r, const std::string& col) const {
    try {
      return parse_double(cell(r, col), col);
    } catch (const Error& e) {
      detail::fail(Errc::parse, source_, ":", r.line, ": ", e.message());
    }
  }

  std::optional<double> optional_number(const Row& r, const std::string& col) const {
    if (!has(col) || cell(r, col).empty()) return std::nullopt;
    return number(r, col);
  }

 private:
  std::string source_;
  std::vector<std::string> header_;
  std::map<std::string, std::size_t> index_;
  std::vector<Row> rows_;
};

}  // namespace crackseg::csv
