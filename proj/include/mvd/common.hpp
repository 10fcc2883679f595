#pragma once

#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvd {

// Error categories surfaced by the CLI as machine-readable exit codes.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ContractError : Error {  // precondition / shape violations
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct IoError : Error {
  using Error::Error;
};
struct DataError : Error {  // corrupt/unknown file or vocab content
  using Error::Error;
};
struct NumericError : Error {  // NaN/Inf or divergence aborts
  using Error::Error;
};

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw ContractError(msg);
}

}  // namespace mvd
