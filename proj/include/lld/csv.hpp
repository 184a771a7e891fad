#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "lld/errors.hpp"

namespace lld {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::string fmt_tokens(const std::vector<int>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(tokens[i]);
  }
  return out;
}

// Minimal writer with a fixed column order; cells must not contain commas.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, std::vector<std::string> columns)
      : out_(path), columns_(std::move(columns)) {
    if (!out_) throw IoError("cannot open " + path);
    write_cells(columns_);
  }

  void row(const std::vector<std::string>& cells) {
    if (cells.size() != columns_.size())
      throw IoError("csv row width mismatch");
    write_cells(cells);
  }

  const std::vector<std::string>& columns() const { return columns_; }

 private:
  void write_cells(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << cells[i];
    }
    out_ << '\n';
  }

  std::ofstream out_;
  std::vector<std::string> columns_;
};

}  // namespace lld
