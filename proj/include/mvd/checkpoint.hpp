#pragma once

#include <cstring>
#include <string>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/io.hpp"

namespace mvd {

// Checkpoint container: raw + EMA parameters, optimizer moments, step
// counter, RNG state and the config hash guarding resumes.  Save/load is a
// byte-exact round trip.

struct NamedBlob {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

struct OptStateBlob {
  int64_t step = 0;
  std::vector<std::vector<float>> m, v;
};

struct CheckpointData {
  uint64_t config_hash = 0;
  int64_t step = 0;
  uint64_t rng_key = 0, rng_counter = 0;
  std::vector<NamedBlob> dynamic, ema_dynamic, mask, ema_mask;
  OptStateBlob opt_dynamic, opt_mask;
};

constexpr char kCheckpointMagic[9] = "MVDCKPT1";
constexpr uint32_t kCheckpointVersion = 1;

namespace detail_ckpt {

inline void write_blobs(BinWriter& w, const std::vector<NamedBlob>& blobs) {
  w.u32(static_cast<uint32_t>(blobs.size()));
  for (const auto& b : blobs) {
    w.str(b.name);
    w.u32(static_cast<uint32_t>(b.shape.size()));
    for (int64_t d : b.shape) w.i64(d);
    w.u32(static_cast<uint32_t>(b.data.size()));
    w.f32_array(b.data.data(), b.data.size());
  }
}

inline std::vector<NamedBlob> read_blobs(BinReader& r) {
  const uint32_t n = r.u32();
  if (n > 100000) throw DataError("corrupt checkpoint: blob count");
  std::vector<NamedBlob> blobs(n);
  for (auto& b : blobs) {
    b.name = r.str();
    const uint32_t rank = r.u32();
    if (rank > 8) throw DataError("corrupt checkpoint: tensor rank");
    for (uint32_t i = 0; i < rank; ++i) b.shape.push_back(r.i64());
    const uint32_t len = r.u32();
    if (static_cast<int64_t>(len) != numel(b.shape))
      throw DataError("corrupt checkpoint: blob size mismatch for " + b.name);
    b.data.resize(len);
    r.f32_array(b.data.data(), len);
  }
  return blobs;
}

inline void write_opt(BinWriter& w, const OptStateBlob& o) {
  w.i64(o.step);
  w.u32(static_cast<uint32_t>(o.m.size()));
  for (size_t i = 0; i < o.m.size(); ++i) {
    w.u32(static_cast<uint32_t>(o.m[i].size()));
    w.f32_array(o.m[i].data(), o.m[i].size());
    w.f32_array(o.v[i].data(), o.v[i].size());
  }
}

inline OptStateBlob read_opt(BinReader& r) {
  OptStateBlob o;
  o.step = r.i64();
  const uint32_t n = r.u32();
  if (n > 100000) throw DataError("corrupt checkpoint: optimizer state count");
  o.m.resize(n);
  o.v.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    const uint32_t len = r.u32();
    if (len > (1u << 28)) throw DataError("corrupt checkpoint: moment size");
    o.m[i].resize(len);
    o.v[i].resize(len);
    r.f32_array(o.m[i].data(), len);
    r.f32_array(o.v[i].data(), len);
  }
  return o;
}

}  // namespace detail_ckpt

inline void save_checkpoint(const CheckpointData& ck, const std::string& path) {
  BinWriter w(path);
  w.bytes(kCheckpointMagic, 8);
  w.u32(kCheckpointVersion);
  w.u64(ck.config_hash);
  w.i64(ck.step);
  w.u64(ck.rng_key);
  w.u64(ck.rng_counter);
  detail_ckpt::write_blobs(w, ck.dynamic);
  detail_ckpt::write_blobs(w, ck.ema_dynamic);
  detail_ckpt::write_blobs(w, ck.mask);
  detail_ckpt::write_blobs(w, ck.ema_mask);
  detail_ckpt::write_opt(w, ck.opt_dynamic);
  detail_ckpt::write_opt(w, ck.opt_mask);
}

inline CheckpointData load_checkpoint(const std::string& path) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw DataError("not a checkpoint file: " + path);
  if (r.u32() != kCheckpointVersion)
    throw DataError("unsupported checkpoint version in " + path);
  CheckpointData ck;
  ck.config_hash = r.u64();
  ck.step = r.i64();
  ck.rng_key = r.u64();
  ck.rng_counter = r.u64();
  ck.dynamic = detail_ckpt::read_blobs(r);
  ck.ema_dynamic = detail_ckpt::read_blobs(r);
  ck.mask = detail_ckpt::read_blobs(r);
  ck.ema_mask = detail_ckpt::read_blobs(r);
  ck.opt_dynamic = detail_ckpt::read_opt(r);
  ck.opt_mask = detail_ckpt::read_opt(r);
  if (!r.at_eof()) throw DataError("trailing bytes in checkpoint: " + path);
  return ck;
}

}  // namespace mvd
