#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

// Animated 8-bit grayscale GIF89a export of a frame sequence; display-only.
// Frames are normalized jointly over the clip to [0,255].

namespace detail_gif {

// GIF-flavored LZW with the standard 4096-entry code table.
class LzwEncoder {
 public:
  LzwEncoder(std::vector<uint8_t>& out, int min_code_size)
      : out_(out), min_(min_code_size) {
    reset_table();
    emit(clear_code());
  }

  void encode(const std::vector<uint8_t>& indices) {
    for (uint8_t c : indices) {
      if (prefix_ < 0) {
        prefix_ = c;
        continue;
      }
      const uint32_t key = (static_cast<uint32_t>(prefix_) << 8) | c;
      auto it = table_.find(key);
      if (it != table_.end()) {
        prefix_ = it->second;
      } else {
        emit(prefix_);
        if (next_code_ < 4096) {
          table_[key] = next_code_++;
          if (next_code_ > (1 << width_) && width_ < 12) ++width_;
        } else {
          emit(clear_code());
          reset_table();
        }
        prefix_ = c;
      }
    }
  }

  void finish() {
    if (prefix_ >= 0) emit(prefix_);
    emit(end_code());
    if (nbits_ > 0) out_.push_back(static_cast<uint8_t>(acc_ & 0xFF));
  }

 private:
  int clear_code() const { return 1 << min_; }
  int end_code() const { return (1 << min_) + 1; }

  void reset_table() {
    table_.clear();
    next_code_ = end_code() + 1;
    width_ = min_ + 1;
    prefix_ = -1;
  }

  void emit(int code) {
    acc_ |= static_cast<uint32_t>(code) << nbits_;
    nbits_ += width_;
    while (nbits_ >= 8) {
      out_.push_back(static_cast<uint8_t>(acc_ & 0xFF));
      acc_ >>= 8;
      nbits_ -= 8;
    }
  }

  std::vector<uint8_t>& out_;
  int min_;
  std::unordered_map<uint32_t, int> table_;
  int next_code_ = 0;
  int width_ = 0;
  int prefix_ = -1;
  uint32_t acc_ = 0;
  int nbits_ = 0;
};

inline void put16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(static_cast<uint8_t>(x & 0xFF));
  v.push_back(static_cast<uint8_t>(x >> 8));
}

}  // namespace detail_gif

inline void save_gif(const std::vector<Tensor>& frames, const std::string& path,
                     int delay_cs = 12, int scale = 8) {
  check(!frames.empty(), "save_gif: no frames");
  const auto& shape = frames.front().shape();
  check(shape.size() == 3, "save_gif: frames must be {C,H,W}");
  const int64_t H = shape[1], W = shape[2];
  const uint16_t sw = static_cast<uint16_t>(W * scale), sh = static_cast<uint16_t>(H * scale);

  // joint normalization (channel 0 when multi-channel)
  float lo = frames[0].data()[0], hi = lo;
  for (const auto& f : frames)
    for (int64_t i = 0; i < H * W; ++i) {
      lo = std::min(lo, f.data()[i]);
      hi = std::max(hi, f.data()[i]);
    }
  const float span = hi - lo > 1e-9f ? hi - lo : 1.0f;

  std::vector<uint8_t> out;
  const char* hdr = "GIF89a";
  out.insert(out.end(), hdr, hdr + 6);
  detail_gif::put16(out, sw);
  detail_gif::put16(out, sh);
  out.push_back(0xF7);  // global color table, 256 entries, 8-bit color
  out.push_back(0);     // background
  out.push_back(0);     // aspect
  for (int i = 0; i < 256; ++i) {
    out.push_back(static_cast<uint8_t>(i));
    out.push_back(static_cast<uint8_t>(i));
    out.push_back(static_cast<uint8_t>(i));
  }
  // loop forever
  const uint8_t netscape[] = {0x21, 0xFF, 0x0B, 'N', 'E', 'T', 'S', 'C', 'A', 'P',
                              'E',  '2',  '.',  '0', 0x03, 0x01, 0x00, 0x00, 0x00};
  out.insert(out.end(), netscape, netscape + sizeof(netscape));

  for (const auto& f : frames) {
    check(f.shape() == shape, "save_gif: inconsistent frame shapes");
    // graphic control extension (frame delay)
    const uint8_t gce[] = {0x21, 0xF9, 0x04, 0x00,
                           static_cast<uint8_t>(delay_cs & 0xFF),
                           static_cast<uint8_t>(delay_cs >> 8), 0x00, 0x00};
    out.insert(out.end(), gce, gce + sizeof(gce));
    out.push_back(0x2C);  // image descriptor
    detail_gif::put16(out, 0);
    detail_gif::put16(out, 0);
    detail_gif::put16(out, sw);
    detail_gif::put16(out, sh);
    out.push_back(0x00);  // no local color table

    std::vector<uint8_t> indices;
    indices.reserve(static_cast<size_t>(sw) * sh);
    for (int64_t y = 0; y < sh; ++y)
      for (int64_t x = 0; x < sw; ++x) {
        const float v = f.data()[(y / scale) * W + (x / scale)];
        const int g = static_cast<int>(255.0f * (v - lo) / span + 0.5f);
        indices.push_back(static_cast<uint8_t>(std::clamp(g, 0, 255)));
      }

    out.push_back(8);  // LZW minimum code size
    std::vector<uint8_t> compressed;
    detail_gif::LzwEncoder enc(compressed, 8);
    enc.encode(indices);
    enc.finish();
    for (size_t off = 0; off < compressed.size(); off += 255) {
      const size_t n = std::min<size_t>(255, compressed.size() - off);
      out.push_back(static_cast<uint8_t>(n));
      out.insert(out.end(), compressed.begin() + off, compressed.begin() + off + n);
    }
    out.push_back(0x00);  // block terminator
  }
  out.push_back(0x3B);  // trailer

  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("cannot write gif: " + path);
  file.write(reinterpret_cast<const char*>(out.data()),
             static_cast<std::streamsize>(out.size()));
}

}  // namespace mvd
