#pragma once

#include <cmath>
#include <cstdint>

#include "mvd/common.hpp"

namespace mvd {

// Counter-based pseudo-random generator (splitmix64 finalizer over a
// key/counter pair).  Streams derived with fork() are independent of the
// parent's position, so training, sampling and data generation can draw
// from disjoint sources that stay aligned across ablation arms.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) : key_(mix(seed ^ kKeyTag)), ctr_(0) {}

  static Rng from_state(uint64_t key, uint64_t ctr) {
    Rng r;
    r.key_ = key;
    r.ctr_ = ctr;
    return r;
  }

  // Child stream identified by `tag`; independent of this stream's counter.
  Rng fork(uint64_t tag) const {
    Rng r;
    r.key_ = mix(key_ ^ mix(tag + kForkTag));
    r.ctr_ = 0;
    return r;
  }

  uint64_t next_u64() { return mix(key_ + kGolden * ++ctr_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    check(lo <= hi, "uniform_int: empty range");
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller; two uniforms per draw, no cached spare,
  // so the stream state is just the counter.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // guard against log(0)
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    double r = std::sqrt(-2.0 * std::log(u1));
    return r * std::cos(2.0 * kPi * u2);
  }

  uint64_t key() const { return key_; }
  uint64_t counter() const { return ctr_; }

 private:
  static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;
  static constexpr uint64_t kKeyTag = 0xA02F3C855F9D6E42ull;
  static constexpr uint64_t kForkTag = 0xD1342543DE82EF95ull;
  static constexpr double kPi = 3.14159265358979323846;

  // splitmix64 finalizer
  static uint64_t mix(uint64_t z) {
    z += kGolden;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t ctr_;
};

// Purpose tags for derived streams; keeping them in one place makes the
// trainer's stream layout reproducible by independent reference paths.
namespace stream {
constexpr uint64_t kParamsDynamic = 1;
constexpr uint64_t kParamsMask = 2;
constexpr uint64_t kCorpus = 3;
constexpr uint64_t kTrain = 4;
constexpr uint64_t kSample = 5;
constexpr uint64_t kEval = 6;
// per-sample purposes inside a training step
constexpr uint64_t kPickClip = 10;
constexpr uint64_t kPickTime = 11;
constexpr uint64_t kNoise = 12;
constexpr uint64_t kAugLevel = 13;
constexpr uint64_t kAugNoise = 14;
constexpr uint64_t kDrop = 15;
constexpr uint64_t kAnchor = 16;
}  // namespace stream

}  // namespace mvd
