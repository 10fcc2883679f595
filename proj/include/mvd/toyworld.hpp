#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mvd/config.hpp"
#include "mvd/io.hpp"
#include "mvd/rng.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

// Synthetic latent videos: a gaussian blob translating on a torus with a
// prompt-determined velocity, over a fixed per-clip random texture.  The
// texture carries the clip's "appearance" (unpredictable from the prompt,
// copyable from reference frames); the blob carries the motion semantics.

struct PromptVocab {
  // ids dense from 0; null token id 0
  static constexpr int32_t kNull = 0;
  static constexpr int32_t kLeft = 1;
  static constexpr int32_t kRight = 2;
  static constexpr int32_t kUp = 3;
  static constexpr int32_t kDown = 4;
  static constexpr int32_t kSlow = 5;
  static constexpr int32_t kFast = 6;
  static constexpr int64_t kSize = 7;

  static const std::vector<std::string>& tokens() {
    static const std::vector<std::string> t{"null", "left", "right",
                                            "up",   "down", "slow", "fast"};
    return t;
  }

  static int32_t id(const std::string& tok) {
    const auto& t = tokens();
    for (size_t i = 0; i < t.size(); ++i)
      if (t[i] == tok) return static_cast<int32_t>(i);
    throw DataError("unknown prompt token: '" + tok + "'");
  }

  static std::vector<int32_t> parse(const std::string& text) {
    std::istringstream in(text);
    std::vector<int32_t> ids;
    std::string tok;
    while (in >> tok) ids.push_back(id(tok));
    if (ids.empty()) ids.push_back(kNull);
    return ids;
  }

  static std::string render(const std::vector<int32_t>& ids) {
    std::string out;
    for (size_t i = 0; i < ids.size(); ++i) {
      check(ids[i] >= 0 && ids[i] < kSize, "prompt id out of range");
      if (i) out += " ";
      out += tokens()[ids[i]];
    }
    return out;
  }
};

struct ClipMeta {
  uint64_t seed = 0;
  float start_x = 0, start_y = 0;
  float vx = 0, vy = 0;  // px per frame, before jitter
  float radius = 2.0f;
};

struct ToyClip {
  std::vector<Tensor> frames;  // each {C,H,W}
  std::vector<int32_t> prompt;
  ClipMeta meta;
};

// prompt -> velocity vector (direction tokens sum; speed multiplier applies;
// no direction token means a static clip)
inline void prompt_velocity(const std::vector<int32_t>& prompt, const Config& cfg,
                            double* vx, double* vy) {
  double dx = 0, dy = 0;
  double speed = cfg.speed_slow;
  for (int32_t id : prompt) {
    switch (id) {
      case PromptVocab::kLeft: dx -= 1; break;
      case PromptVocab::kRight: dx += 1; break;
      case PromptVocab::kUp: dy -= 1; break;
      case PromptVocab::kDown: dy += 1; break;
      case PromptVocab::kSlow: speed = cfg.speed_slow; break;
      case PromptVocab::kFast: speed = cfg.speed_fast; break;
      case PromptVocab::kNull: break;
      default: throw DataError("unknown prompt id: " + std::to_string(id));
    }
  }
  *vx = dx * speed;
  *vy = dy * speed;
}

namespace detail_toy {

inline double wrap_dist(double a, double b, double n) {
  double d = std::abs(a - b);
  d = std::fmod(d, n);
  return std::min(d, n - d);
}

// smooth random field: coarse gaussian grid, bilinear-interpolated 2x
inline std::vector<float> make_texture(int64_t H, int64_t W, double amp, Rng& rng) {
  const int64_t ch = H / 2 + 1, cw = W / 2 + 1;
  std::vector<double> coarse(static_cast<size_t>(ch * cw));
  for (auto& v : coarse) v = rng.normal();
  std::vector<float> tex(static_cast<size_t>(H * W));
  for (int64_t y = 0; y < H; ++y)
    for (int64_t x = 0; x < W; ++x) {
      const double fy = static_cast<double>(y) / 2.0, fx = static_cast<double>(x) / 2.0;
      const int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
      const double ty = fy - y0, tx = fx - x0;
      const int64_t y1 = std::min(y0 + 1, ch - 1), x1 = std::min(x0 + 1, cw - 1);
      const double v = coarse[y0 * cw + x0] * (1 - ty) * (1 - tx) +
                       coarse[y0 * cw + x1] * (1 - ty) * tx +
                       coarse[y1 * cw + x0] * ty * (1 - tx) +
                       coarse[y1 * cw + x1] * ty * tx;
      tex[y * W + x] = static_cast<float>(amp * v);
    }
  return tex;
}

inline void blob_into(std::vector<float>& px, int64_t C, int64_t H, int64_t W,
                      double cx, double cy, double r, const std::vector<float>& tex) {
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x) {
        const double dx = wrap_dist(static_cast<double>(x), cx, static_cast<double>(W));
        const double dy = wrap_dist(static_cast<double>(y), cy, static_cast<double>(H));
        const double v = std::exp(-(dx * dx + dy * dy) / (2 * r * r));
        px[(c * H + y) * W + x] = static_cast<float>(v) + tex[y * W + x];
      }
}

}  // namespace detail_toy

// Deterministic clip construction; identical rng state yields identical
// clips, so a stored (seed, prompt, length) triple reproduces the frames.
inline ToyClip gen_clip(const std::vector<int32_t>& prompt, int64_t length,
                        const Config& cfg, uint64_t seed) {
  check(length >= 1, "gen_clip: length must be >= 1");
  Rng rng(seed);
  const int64_t C = cfg.latent_channels, H = cfg.latent_h, W = cfg.latent_w;
  ToyClip clip;
  clip.prompt = prompt;
  clip.meta.seed = seed;
  clip.meta.start_x = static_cast<float>(rng.uniform() * W);
  clip.meta.start_y = static_cast<float>(rng.uniform() * H);
  clip.meta.radius = static_cast<float>(1.8 + rng.uniform() * 0.8);
  double vx = 0, vy = 0;
  prompt_velocity(prompt, cfg, &vx, &vy);
  clip.meta.vx = static_cast<float>(vx);
  clip.meta.vy = static_cast<float>(vy);
  auto tex = detail_toy::make_texture(H, W, cfg.texture_amp, rng);
  const bool moving = vx != 0.0 || vy != 0.0;
  double px = clip.meta.start_x, py = clip.meta.start_y;
  for (int64_t k = 0; k < length; ++k) {
    std::vector<float> buf(static_cast<size_t>(C * H * W));
    detail_toy::blob_into(buf, C, H, W, px, py, clip.meta.radius, tex);
    clip.frames.push_back(Tensor::from_data({C, H, W}, std::move(buf)));
    // static prompts make strictly identical frames, so jitter only applies
    // to moving clips
    const double jx = moving ? (rng.uniform() * 2 - 1) * cfg.jitter : 0.0;
    const double jy = moving ? (rng.uniform() * 2 - 1) * cfg.jitter : 0.0;
    px += vx + jx;
    py += vy + jy;
  }
  return clip;
}

// Fixed scale chosen so the fastest toy clip (speed_fast blob) scores the
// top of the paper's filter band (~20) and a static clip scores exactly 0.
constexpr double kMotionScoreScale = 225.0;

inline double motion_score(const ToyClip& clip) {
  check(clip.frames.size() >= 2, "motion_score: need at least 2 frames");
  double acc = 0;
  int64_t count = 0;
  for (size_t k = 1; k < clip.frames.size(); ++k) {
    auto a = clip.frames[k - 1].data();
    auto b = clip.frames[k].data();
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(static_cast<double>(b[i]) - a[i]);
    count += static_cast<int64_t>(a.size());
  }
  return kMotionScoreScale * acc / static_cast<double>(count);
}

// Center-of-mass track of the moving part (temporal-mean-subtracted frames)
// using circular means; used by the prompt-faithfulness check.
inline std::vector<std::pair<double, double>> com_track(const ToyClip& clip) {
  const auto& s = clip.frames.front().shape();
  const int64_t C = s[0], H = s[1], W = s[2];
  const int64_t n = static_cast<int64_t>(clip.frames.size());
  std::vector<double> tmean(static_cast<size_t>(C * H * W), 0.0);
  for (const auto& f : clip.frames) {
    auto d = f.data();
    for (size_t i = 0; i < d.size(); ++i) tmean[i] += d[i];
  }
  for (auto& v : tmean) v /= static_cast<double>(n);
  std::vector<std::pair<double, double>> coms;
  const double two_pi = 2.0 * 3.14159265358979323846;
  for (const auto& f : clip.frames) {
    auto d = f.data();
    double sx = 0, cxs = 0, sy = 0, cys = 0;
    for (int64_t c = 0; c < C; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
          const double w = std::max(0.0, static_cast<double>(d[(c * H + y) * W + x]) -
                                             tmean[(c * H + y) * W + x]);
          const double ax = two_pi * x / W, ay = two_pi * y / H;
          sx += w * std::sin(ax);
          cxs += w * std::cos(ax);
          sy += w * std::sin(ay);
          cys += w * std::cos(ay);
        }
    const double cx = std::fmod(std::atan2(sx, cxs) / two_pi * W + W, static_cast<double>(W));
    const double cy = std::fmod(std::atan2(sy, cys) / two_pi * H + H, static_cast<double>(H));
    coms.emplace_back(cx, cy);
  }
  return coms;
}

// Net displacement over the clip, unwrapped step by step.
inline std::pair<double, double> com_displacement(const ToyClip& clip) {
  auto coms = com_track(clip);
  const auto& s = clip.frames.front().shape();
  const double W = static_cast<double>(s[2]), H = static_cast<double>(s[1]);
  auto wrap_step = [](double d, double n) {
    while (d > n / 2) d -= n;
    while (d < -n / 2) d += n;
    return d;
  };
  double dx = 0, dy = 0;
  for (size_t k = 1; k < coms.size(); ++k) {
    dx += wrap_step(coms[k].first - coms[k - 1].first, W);
    dy += wrap_step(coms[k].second - coms[k - 1].second, H);
  }
  return {dx, dy};
}

// ---- corpus file ----
// header: magic, version, latent shape, clip count; per clip: metadata
// record, prompt ids, frame data as little-endian 32-bit floats.

constexpr char kCorpusMagic[9] = "MVDCORP1";
constexpr uint32_t kCorpusVersion = 1;

struct Corpus {
  Shape latent_shape;  // {C,H,W}
  std::vector<ToyClip> clips;
};

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  BinWriter w(path);
  w.bytes(kCorpusMagic, 8);
  w.u32(kCorpusVersion);
  check(corpus.latent_shape.size() == 3, "save_corpus: latent shape must be {C,H,W}");
  for (int64_t d : corpus.latent_shape) w.u32(static_cast<uint32_t>(d));
  w.u32(static_cast<uint32_t>(corpus.clips.size()));
  for (const auto& clip : corpus.clips) {
    w.u64(clip.meta.seed);
    w.f32(clip.meta.start_x);
    w.f32(clip.meta.start_y);
    w.f32(clip.meta.vx);
    w.f32(clip.meta.vy);
    w.f32(clip.meta.radius);
    w.u32(static_cast<uint32_t>(clip.frames.size()));
    w.u32(static_cast<uint32_t>(clip.prompt.size()));
    for (int32_t id : clip.prompt) w.u32(static_cast<uint32_t>(id));
    for (const auto& f : clip.frames) {
      check(f.shape() == corpus.latent_shape, "save_corpus: frame shape mismatch");
      w.f32_array(f.data().data(), f.data().size());
    }
  }
}

inline Corpus load_corpus(const std::string& path) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCorpusMagic, 8) != 0)
    throw DataError("not a corpus file: " + path);
  const uint32_t version = r.u32();
  if (version != kCorpusVersion)
    throw DataError("unsupported corpus version " + std::to_string(version));
  Corpus c;
  c.latent_shape = {r.u32(), r.u32(), r.u32()};
  const uint32_t n = r.u32();
  const int64_t frame_elems = numel(c.latent_shape);
  for (uint32_t i = 0; i < n; ++i) {
    ToyClip clip;
    clip.meta.seed = r.u64();
    clip.meta.start_x = r.f32();
    clip.meta.start_y = r.f32();
    clip.meta.vx = r.f32();
    clip.meta.vy = r.f32();
    clip.meta.radius = r.f32();
    const uint32_t frames = r.u32();
    const uint32_t plen = r.u32();
    if (plen > 64) throw DataError("corrupt corpus: prompt too long");
    for (uint32_t k = 0; k < plen; ++k)
      clip.prompt.push_back(static_cast<int32_t>(r.u32()));
    for (uint32_t k = 0; k < frames; ++k) {
      std::vector<float> buf(static_cast<size_t>(frame_elems));
      r.f32_array(buf.data(), buf.size());
      clip.frames.push_back(Tensor::from_data(Shape(c.latent_shape), std::move(buf)));
    }
    c.clips.push_back(std::move(clip));
  }
  return c;
}

struct CorpusBuildStats {
  int64_t kept = 0;
  int64_t dropped = 0;
};

// Generate n_clips candidates over the direction x speed grid, filter by
// motion score, write the corpus file.
inline CorpusBuildStats build_corpus(const Config& cfg, Rng rng, const std::string& path) {
  check(cfg.corpus_clips >= 1, "build_corpus: need at least one clip");
  Corpus corpus;
  corpus.latent_shape = {cfg.latent_channels, cfg.latent_h, cfg.latent_w};
  CorpusBuildStats stats;
  static const int32_t dirs[4] = {PromptVocab::kLeft, PromptVocab::kRight,
                                  PromptVocab::kUp, PromptVocab::kDown};
  static const int32_t speeds[2] = {PromptVocab::kSlow, PromptVocab::kFast};
  int64_t produced = 0;
  int64_t attempts = 0;
  while (produced < cfg.corpus_clips) {
    if (++attempts > cfg.corpus_clips * 100)
      throw DataError("build_corpus: motion filter rejected too many clips");
    std::vector<int32_t> prompt{dirs[rng.uniform_int(0, 3)], speeds[rng.uniform_int(0, 1)]};
    auto clip = gen_clip(prompt, cfg.clip_length, cfg, rng.next_u64());
    const double score = motion_score(clip);
    if (score < cfg.motion_lo || score > cfg.motion_hi) {
      ++stats.dropped;
      continue;
    }
    corpus.clips.push_back(std::move(clip));
    ++stats.kept;
    ++produced;
  }
  save_corpus(corpus, path);
  return stats;
}

}  // namespace mvd
