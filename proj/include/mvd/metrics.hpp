#pragma once

#include <cmath>
#include <vector>

#include "mvd/config.hpp"
#include "mvd/rollout.hpp"
#include "mvd/toyworld.hpp"

namespace mvd {

struct DriftReport {
  std::vector<double> mse;   // per frame
  std::vector<double> psnr;  // per frame, dB (MAX = 1, capped at 120)
  double slope = 0;          // least-squares fit of mse over frame index >= 1
  double intercept = 0;
};

inline double psnr_from_mse(double mse_v) {
  const double floor_v = 1e-12;
  return -10.0 * std::log10(std::max(mse_v, floor_v));
}

// Per-frame MSE/PSNR of a generated rollout against the deterministic toy
// continuation with the same first frame and prompt.
inline DriftReport drift_curve(const RolloutState& generated, const ToyClip& oracle) {
  check(generated.frames.size() <= oracle.frames.size(),
        "drift_curve: oracle clip shorter than rollout");
  check(!generated.frames.empty(), "drift_curve: empty rollout");
  DriftReport rep;
  const size_t n = generated.frames.size();
  for (size_t i = 0; i < n; ++i) {
    check(generated.frames[i].shape() == oracle.frames[i].shape(),
          "drift_curve: frame shape mismatch");
    auto a = generated.frames[i].data();
    auto b = oracle.frames[i].data();
    double acc = 0;
    for (size_t k = 0; k < a.size(); ++k) {
      const double d = static_cast<double>(a[k]) - b[k];
      acc += d * d;
    }
    const double m = acc / static_cast<double>(a.size());
    rep.mse.push_back(m);
    rep.psnr.push_back(psnr_from_mse(m));
  }
  // slope over frames >= 1
  if (n >= 3) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double cnt = static_cast<double>(n - 1);
    for (size_t i = 1; i < n; ++i) {
      const double x = static_cast<double>(i);
      sx += x;
      sy += rep.mse[i];
      sxx += x * x;
      sxy += x * rep.mse[i];
    }
    const double denom = cnt * sxx - sx * sx;
    rep.slope = denom != 0 ? (cnt * sxy - sx * sy) / denom : 0.0;
    rep.intercept = (sy - rep.slope * sx) / cnt;
  }
  return rep;
}

struct MaskTrendSummary {
  std::vector<double> mean_per_step;  // averaged over frames
  double first_decile_mean = 0;
  double last_decile_mean = 0;
  bool rising = false;
};

// Mean mask value per sampling step, averaged over frames; the headline
// statistic compares the first and last deciles of the step axis.
inline MaskTrendSummary mask_trend(const std::vector<MaskTrace>& traces) {
  check(!traces.empty(), "mask_trend: no traces");
  const size_t steps = traces.front().steps.size();
  check(steps > 0, "mask_trend: traces carry no mask records");
  for (const auto& tr : traces)
    check(tr.steps.size() == steps, "mask_trend: ragged traces");
  MaskTrendSummary out;
  out.mean_per_step.assign(steps, 0.0);
  for (const auto& tr : traces)
    for (size_t k = 0; k < steps; ++k) out.mean_per_step[k] += tr.steps[k].mean;
  for (auto& v : out.mean_per_step) v /= static_cast<double>(traces.size());
  const size_t dec = std::max<size_t>(1, steps / 10);
  double first = 0, last = 0;
  for (size_t k = 0; k < dec; ++k) first += out.mean_per_step[k];
  for (size_t k = steps - dec; k < steps; ++k) last += out.mean_per_step[k];
  out.first_decile_mean = first / static_cast<double>(dec);
  out.last_decile_mean = last / static_cast<double>(dec);
  out.rising = out.last_decile_mean > out.first_decile_mean;
  return out;
}

// ---- analytic FLOPs accounting (multiply-accumulates) ----

struct FlopsBreakdown {
  int64_t dynamic_forward = 0;  // one head evaluation
  int64_t mask_forward = 0;
  int64_t per_frame = 0;     // both heads x 4 CFG branches x sampling steps
  int64_t per_16_frames = 0;
};

namespace detail_flops {

// mirrors DenoiserHead::make
inline int64_t head_forward_macs(int64_t w, int64_t C, int64_t H, int64_t W,
                                 int64_t vocab) {
  const int64_t h2 = H / 2, w2 = W / 2, h4 = H / 4, w4 = W / 4;
  const int64_t emb = w;
  auto conv = [](int64_t ci, int64_t co, int64_t k, int64_t ho, int64_t wo) {
    return ci * co * k * k * ho * wo;
  };
  auto lin = [](int64_t di, int64_t dout) { return di * dout; };
  int64_t macs = 0;
  // embedding path
  macs += lin(emb, emb) * 2;          // emb1, emb2
  macs += conv(C, 8, 3, h2, w2);      // anc1
  macs += conv(8, 16, 3, h4, w4);     // anc2
  macs += lin(16 * h4 * w4, emb);     // anc_proj
  macs += emb;                        // prompt embedding mean (vocab-independent)
  (void)vocab;
  macs += lin(3, emb);                // flag_proj
  // adapter
  macs += conv(2 * C, w, 3, H, W) + conv(w, w, 3, H, W);
  macs += conv(w, 2 * w, 3, h2, w2) + conv(2 * w, 2 * w, 3, h2, w2);
  macs += conv(2 * w, 4 * w, 3, h4, w4) + conv(4 * w, 4 * w, 3, h4, w4);
  // trunk
  auto resblock = [&](int64_t c, int64_t ho, int64_t wo) {
    return 2 * conv(c, c, 3, ho, wo) + lin(emb, 2 * c);
  };
  macs += conv(C, w, 3, H, W);
  macs += resblock(w, H, W);
  macs += conv(w, 2 * w, 3, h2, w2);
  macs += resblock(2 * w, h2, w2);
  macs += conv(2 * w, 4 * w, 3, h4, w4);
  macs += resblock(4 * w, h4, w4);
  macs += resblock(4 * w, h4, w4);  // mid
  macs += conv(4 * w, 2 * w, 3, h2, w2);  // up1 after 2x upsample
  macs += resblock(2 * w, h2, w2);
  macs += conv(2 * w, w, 3, H, W);  // up2 after 2x upsample
  macs += resblock(w, H, W);
  macs += conv(w, C, 3, H, W);  // cout (dynamic head; mask head C_out=1)
  return macs;
}

}  // namespace detail_flops

inline FlopsBreakdown flops_estimate(const Config& cfg) {
  FlopsBreakdown f;
  f.dynamic_forward = detail_flops::head_forward_macs(
      cfg.width_dynamic, cfg.latent_channels, cfg.latent_h, cfg.latent_w,
      MaskedDenoiser::kVocabSize);
  if (cfg.use_mask) {
    // mask head emits one channel; subtract the output-conv delta
    const int64_t full = detail_flops::head_forward_macs(
        cfg.width_mask, cfg.latent_channels, cfg.latent_h, cfg.latent_w,
        MaskedDenoiser::kVocabSize);
    const int64_t cout_delta = (cfg.latent_channels - 1) * cfg.width_mask * 9 *
                               cfg.latent_h * cfg.latent_w;
    f.mask_forward = full - cout_delta;
  }
  f.per_frame = (f.dynamic_forward + f.mask_forward) * 4 * cfg.sample_steps;
  f.per_16_frames = f.per_frame * 16;
  return f;
}

}  // namespace mvd
