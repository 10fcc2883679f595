#pragma once

#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "mvd/common.hpp"

namespace mvd {

// Minimal CSV writer: header row then value rows, deterministic formatting.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& header)
      : out_(path), cols_(header.size()) {
    if (!out_) throw IoError("cannot write csv: " + path);
    for (size_t i = 0; i < header.size(); ++i) {
      if (i) out_ << ",";
      out_ << header[i];
    }
    out_ << "\n";
  }

  void row(const std::vector<std::string>& values) {
    check(values.size() == cols_, "csv row width mismatch");
    for (size_t i = 0; i < values.size(); ++i) {
      if (i) out_ << ",";
      out_ << values[i];
    }
    out_ << "\n";
  }

  static std::string num(double v) {
    std::ostringstream o;
    o << std::setprecision(10) << v;
    return o.str();
  }
  static std::string num(int64_t v) { return std::to_string(v); }

 private:
  std::ofstream out_;
  size_t cols_;
};

}  // namespace mvd
