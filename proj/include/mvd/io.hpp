#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "mvd/common.hpp"

namespace mvd {

// Little-endian binary stream helpers.  x86-64 memory order already is
// little-endian; the byte-level writes keep the formats explicit anyway.

class BinWriter {
 public:
  explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
    if (!out_) throw IoError("cannot open for writing: " + path);
    path_ = path;
  }

  void bytes(const void* p, size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out_) throw IoError("write failed: " + path_);
  }
  void u32(uint32_t v) { le(v); }
  void u64(uint64_t v) { le(v); }
  void i64(int64_t v) { le(static_cast<uint64_t>(v)); }
  void f32(float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  void f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    le(bits);
  }
  void f32_array(const float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) f32(p[i]);
  }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

 private:
  template <typename U>
  void le(U v) {
    unsigned char buf[sizeof(U)];
    for (size_t i = 0; i < sizeof(U); ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(U));
  }
  std::ofstream out_;
  std::string path_;
};

class BinReader {
 public:
  explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
    if (!in_) throw IoError("cannot open for reading: " + path);
    path_ = path;
  }

  void bytes(void* p, size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n))
      throw DataError("truncated or corrupt file: " + path_);
  }
  uint32_t u32() { return le<uint32_t>(); }
  uint64_t u64() { return le<uint64_t>(); }
  int64_t i64() { return static_cast<int64_t>(le<uint64_t>()); }
  float f32() {
    uint32_t bits = le<uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    uint64_t bits = le<uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  void f32_array(float* p, size_t n) {
    for (size_t i = 0; i < n; ++i) p[i] = f32();
  }
  std::string str() {
    uint32_t n = u32();
    if (n > (1u << 20)) throw DataError("unreasonable string length in " + path_);
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  template <typename U>
  U le() {
    unsigned char buf[sizeof(U)];
    bytes(buf, sizeof(U));
    U v = 0;
    for (size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(buf[i]) << (8 * i);
    return v;
  }
  std::ifstream in_;
  std::string path_;
};

}  // namespace mvd
