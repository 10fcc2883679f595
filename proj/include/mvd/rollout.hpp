#pragma once

#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mvd/sampler.hpp"
#include "mvd/toyworld.hpp"

namespace mvd {

struct FrameStats {
  double mean = 0, min = 0, max = 0, l2 = 0;
};

struct RolloutState {
  std::vector<Tensor> frames;  // each {C,H,W}
  Tensor anchor;
  std::vector<int32_t> prompt;
  std::vector<MaskTrace> traces;      // one per AR-generated frame
  std::vector<FrameStats> stats;      // one per frame
  std::vector<int64_t> segment_starts;  // frame index where each segment begins
};

struct SegmentPlan {
  struct Segment {
    std::vector<int32_t> prompt;
    int64_t frame_count = 0;
  };
  std::vector<Segment> segments;

  // plan file: one line per segment, "frame_count<TAB>prompt tokens"
  static SegmentPlan load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open plan file: " + path);
    SegmentPlan plan;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw DataError(path + ":" + std::to_string(lineno) +
                        ": expected 'frame_count<TAB>prompt'");
      Segment seg;
      try {
        seg.frame_count = std::stoll(line.substr(0, tab));
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(lineno) + ": bad frame count");
      }
      if (seg.frame_count < 1)
        throw DataError(path + ":" + std::to_string(lineno) + ": frame count must be >= 1");
      seg.prompt = PromptVocab::parse(line.substr(tab + 1));
      plan.segments.push_back(std::move(seg));
    }
    if (plan.segments.empty()) throw DataError("empty segment plan: " + path);
    return plan;
  }
};

struct RolloutOptions {
  SampleOptions sample;
  int64_t t_test = 200;
  bool augment_anchor = false;  // the anchor stays clean by default
  bool zero_anchor = false;     // ablation: zero frame in the anchor slot
};

// Uniform random anchor index in [max(0, target - window), target - 1];
// training-time policy.
inline int64_t select_train_anchor(int64_t target_index, int64_t window, Rng& rng) {
  check(target_index >= 1, "select_train_anchor: target must be >= 1");
  check(window >= 1, "select_train_anchor: window must be >= 1");
  const int64_t lo = std::max<int64_t>(0, target_index - window);
  return rng.uniform_int(lo, target_index - 1);
}

inline FrameStats frame_stats(const Tensor& f) {
  FrameStats st;
  st.min = std::numeric_limits<double>::infinity();
  st.max = -st.min;
  double acc = 0, sq = 0;
  for (float v : f.data()) {
    acc += v;
    sq += static_cast<double>(v) * v;
    st.min = std::min(st.min, static_cast<double>(v));
    st.max = std::max(st.max, static_cast<double>(v));
  }
  st.mean = acc / static_cast<double>(f.numel());
  st.l2 = std::sqrt(sq);
  return st;
}

// First frame: the provided latent, or a sample with blank reference and
// anchor slots (text-only conditioning).
inline Tensor bootstrap_first_frame(const std::vector<int32_t>& prompt,
                                    const MaskedDenoiser& model, const NoiseSchedule& s,
                                    const RolloutOptions& opt, Rng& rng,
                                    const std::optional<Tensor>& provided) {
  if (provided.has_value()) return *provided;
  ConditionSet cond;
  cond.prompt = prompt;
  cond.aug_level = opt.t_test;
  auto [frame, trace] = sample_frame(model, cond, s, opt.sample, rng);
  return frame;
}

namespace detail_rollout {

// References are noise-augmented at t_test; the anchor stays clean unless
// explicitly opted in (it is part of the t_test sweep surface).
inline ConditionSet augment_conditions_for_inference(const ConditionSet& cond,
                                                     const RolloutOptions& opt,
                                                     const NoiseSchedule& s, Rng& rng) {
  ConditionSet out = cond;
  if (opt.t_test > 0) {
    auto corrupt = [&](const Tensor& f) {
      auto eps = Tensor::randn(Shape(f.shape()), rng);
      return forward_sample(f, opt.t_test, eps, s);
    };
    if (out.ref_prev) out.ref_prev = corrupt(*out.ref_prev);
    if (out.ref_prev2) out.ref_prev2 = corrupt(*out.ref_prev2);
    if (opt.augment_anchor && out.anchor) out.anchor = corrupt(*out.anchor);
  }
  out.aug_level = opt.t_test;
  return out;
}

// Append `count` AR frames to the state under a fixed anchor.
inline void append_frames(RolloutState& st, const std::vector<int32_t>& prompt,
                          int64_t count, const MaskedDenoiser& model,
                          const NoiseSchedule& s, const RolloutOptions& opt, Rng& rng) {
  const int64_t C = model.c_latent, H = model.latent_h, W = model.latent_w;
  for (int64_t k = 0; k < count; ++k) {
    const size_t i = st.frames.size();
    ConditionSet cond;
    cond.ref_prev = st.frames[i - 1];
    cond.ref_prev2 = i >= 2 ? st.frames[i - 2] : st.frames[0];
    cond.anchor = opt.zero_anchor ? Tensor::zeros({C, H, W}) : st.anchor;
    cond.prompt = prompt;
    cond = augment_conditions_for_inference(cond, opt, s, rng);
    auto [frame, trace] = sample_frame(model, cond, s, opt.sample, rng);
    st.frames.push_back(frame);
    st.traces.push_back(std::move(trace));
    st.stats.push_back(frame_stats(frame));
  }
}

}  // namespace detail_rollout

// Auto-regressive rollout: frame 0 from the bootstrap, anchor fixed to the
// segment's first frame, references sliding over the last two frames (the
// missing second reference at i=1 duplicates frame 0).
inline RolloutState generate_video(const std::vector<int32_t>& prompt, int64_t n_frames,
                                   const MaskedDenoiser& model, const NoiseSchedule& s,
                                   const RolloutOptions& opt, Rng& rng,
                                   const std::optional<Tensor>& first = std::nullopt) {
  check(n_frames >= 1, "generate_video: n_frames must be >= 1");
  RolloutState st;
  st.prompt = prompt;
  st.segment_starts = {0};
  st.frames.push_back(bootstrap_first_frame(prompt, model, s, opt, rng, first));
  st.stats.push_back(frame_stats(st.frames[0]));
  st.anchor = st.frames[0];
  detail_rollout::append_frames(st, prompt, n_frames - 1, model, s, opt, rng);
  return st;
}

// Multi-prompt chaining: segment 0 is a plain rollout; every later segment
// anchors on the last frame of the previous segment and its leading
// references are the previous segment's final two frames.
inline RolloutState generate_multi_prompt(const SegmentPlan& plan,
                                          const MaskedDenoiser& model,
                                          const NoiseSchedule& s,
                                          const RolloutOptions& opt, Rng& rng,
                                          const std::optional<Tensor>& first = std::nullopt) {
  check(!plan.segments.empty(), "generate_multi_prompt: empty plan");
  RolloutState st =
      generate_video(plan.segments[0].prompt, plan.segments[0].frame_count, model, s,
                     opt, rng, first);
  for (size_t k = 1; k < plan.segments.size(); ++k) {
    st.segment_starts.push_back(static_cast<int64_t>(st.frames.size()));
    st.anchor = st.frames.back();
    st.prompt = plan.segments[k].prompt;
    detail_rollout::append_frames(st, plan.segments[k].prompt,
                                  plan.segments[k].frame_count, model, s, opt, rng);
  }
  return st;
}

// ---- rollout file (versioned binary, deterministic bytes) ----

constexpr char kRolloutMagic[9] = "MVDROLL1";

inline void save_rollout(const RolloutState& st, const std::string& path) {
  BinWriter w(path);
  w.bytes(kRolloutMagic, 8);
  w.u32(1);
  const auto& shape = st.frames.front().shape();
  for (int64_t d : shape) w.u32(static_cast<uint32_t>(d));
  w.u32(static_cast<uint32_t>(st.frames.size()));
  w.u32(static_cast<uint32_t>(st.prompt.size()));
  for (int32_t id : st.prompt) w.u32(static_cast<uint32_t>(id));
  for (const auto& f : st.frames) w.f32_array(f.data().data(), f.data().size());
  w.f32_array(st.anchor.data().data(), st.anchor.data().size());
  w.u32(static_cast<uint32_t>(st.traces.size()));
  for (const auto& tr : st.traces) {
    w.u32(static_cast<uint32_t>(tr.steps.size()));
    w.i64(tr.head_evals);
    for (const auto& ms : tr.steps) {
      w.f64(ms.mean);
      w.f64(ms.min);
      w.f64(ms.max);
    }
  }
  w.u32(static_cast<uint32_t>(st.stats.size()));
  for (const auto& fs : st.stats) {
    w.f64(fs.mean);
    w.f64(fs.min);
    w.f64(fs.max);
    w.f64(fs.l2);
  }
}

inline RolloutState load_rollout(const std::string& path) {
  BinReader r(path);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kRolloutMagic, 8) != 0)
    throw DataError("not a rollout file: " + path);
  if (r.u32() != 1) throw DataError("unsupported rollout version");
  Shape shape{r.u32(), r.u32(), r.u32()};
  const uint32_t n = r.u32();
  RolloutState st;
  const uint32_t plen = r.u32();
  for (uint32_t i = 0; i < plen; ++i) st.prompt.push_back(static_cast<int32_t>(r.u32()));
  for (uint32_t i = 0; i < n; ++i) {
    std::vector<float> buf(static_cast<size_t>(numel(shape)));
    r.f32_array(buf.data(), buf.size());
    st.frames.push_back(Tensor::from_data(Shape(shape), std::move(buf)));
  }
  std::vector<float> abuf(static_cast<size_t>(numel(shape)));
  r.f32_array(abuf.data(), abuf.size());
  st.anchor = Tensor::from_data(Shape(shape), std::move(abuf));
  const uint32_t ntr = r.u32();
  for (uint32_t i = 0; i < ntr; ++i) {
    MaskTrace tr;
    const uint32_t nsteps = r.u32();
    tr.head_evals = r.i64();
    for (uint32_t k = 0; k < nsteps; ++k) {
      MaskStep ms;
      ms.mean = r.f64();
      ms.min = r.f64();
      ms.max = r.f64();
      tr.steps.push_back(ms);
    }
    st.traces.push_back(std::move(tr));
  }
  const uint32_t nst = r.u32();
  for (uint32_t i = 0; i < nst; ++i) {
    FrameStats fs;
    fs.mean = r.f64();
    fs.min = r.f64();
    fs.max = r.f64();
    fs.l2 = r.f64();
    st.stats.push_back(fs);
  }
  return st;
}

}  // namespace mvd
