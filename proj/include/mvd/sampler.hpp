#pragma once

#include <limits>
#include <vector>

#include "mvd/denoiser.hpp"
#include "mvd/masked_noise.hpp"
#include "mvd/schedule.hpp"

namespace mvd {

struct GuidanceScales {
  double w_ref = 0.25;
  double w_anc = 0.25;
  double w_txt = 6.5;
};

struct MaskStep {
  double mean = 0, min = 0, max = 0;
};

// Per-sampling-step statistics of the full-condition mask, plus the
// network evaluation counter (4 condition branches per step per head).
struct MaskTrace {
  std::vector<MaskStep> steps;
  int64_t head_evals = 0;
};

// eps = full + w_ref*(full - no_ref) + w_anc*(full - no_anchor)
//            + w_txt*(full - no_text)
template <typename T>
BasicTensor<T> cfg_compose(const BasicTensor<T>& full, const BasicTensor<T>& no_ref,
                           const BasicTensor<T>& no_anchor, const BasicTensor<T>& no_text,
                           const GuidanceScales& g) {
  check(full.shape() == no_ref.shape() && full.shape() == no_anchor.shape() &&
            full.shape() == no_text.shape(),
        "cfg_compose: shape mismatch");
  auto out = full.detach();
  auto o = out.mutable_data();
  auto f = full.data();
  auto r = no_ref.data();
  auto a = no_anchor.data();
  auto x = no_text.data();
  const T wr = static_cast<T>(g.w_ref), wa = static_cast<T>(g.w_anc),
          wt = static_cast<T>(g.w_txt);
  for (size_t i = 0; i < o.size(); ++i)
    o[i] = f[i] + wr * (f[i] - r[i]) + wa * (f[i] - a[i]) + wt * (f[i] - x[i]);
  return out;
}

struct SampleOptions {
  int64_t n_steps = 50;
  GuidanceScales guidance;
  StaticForm static_form = StaticForm::kPaper;
  double divergence_abort = 1e4;
};

// One frame: start from pure gaussian noise and run the strided ancestral
// loop.  Each step evaluates the heads on the four condition branches
// (full, no_ref, no_anchor, no_text) in one batch, blends each branch's
// static/dynamic pair, and composes the guided noise.  The caller passes
// conditions already noise-augmented at the inference level.
inline std::pair<Tensor, MaskTrace> sample_frame(const MaskedDenoiser& model,
                                                 const ConditionSet& cond,
                                                 const NoiseSchedule& s,
                                                 const SampleOptions& opt, Rng& rng) {
  check(opt.n_steps >= 1 && opt.n_steps <= s.steps(), "sample_frame: bad step count");
  NoGradGuard ng;
  const int64_t C = model.c_latent, H = model.latent_h, W = model.latent_w;

  // the four classifier-free branches; dropping a slot that is already null
  // leaves that branch identical to full
  std::vector<ConditionSet> branches(4, cond);
  branches[1].ref_prev.reset();
  branches[1].ref_prev2.reset();
  branches[2].anchor.reset();
  branches[3].prompt.reset();
  auto rendered = render_conditions(branches, C, H, W);

  auto y = Tensor::randn({1, C, H, W}, rng);
  MaskTrace trace;
  auto steps = strided_steps(s.steps(), opt.n_steps);
  for (size_t k = 0; k < steps.size(); ++k) {
    const int64_t t = steps[k];
    const int64_t t_prev = k + 1 < steps.size() ? steps[k + 1] : 0;

    // replicate y over the four branches
    std::vector<float> ybuf;
    ybuf.reserve(static_cast<size_t>(4 * C * H * W));
    for (int br = 0; br < 4; ++br)
      ybuf.insert(ybuf.end(), y.data().begin(), y.data().end());
    auto y4 = Tensor::from_data({4, C, H, W}, std::move(ybuf));

    auto out = model.predict_rendered(rendered, y4, {t, t, t, t});
    trace.head_evals += 4;

    Tensor eps_hat4;
    if (model.use_mask) {
      auto ref_prev4 = slice_channels(rendered.refs, 0, C);
      auto stat4 = static_channel(ref_prev4, y4, t, s, opt.static_form);
      eps_hat4 = blend(out.mask, stat4, out.dynamic);
      MaskStep ms;
      ms.min = std::numeric_limits<double>::infinity();
      ms.max = -std::numeric_limits<double>::infinity();
      double acc = 0;
      auto md = out.mask.data().subspan(0, static_cast<size_t>(H * W));  // full branch
      for (float v : md) {
        acc += v;
        ms.min = std::min(ms.min, static_cast<double>(v));
        ms.max = std::max(ms.max, static_cast<double>(v));
      }
      ms.mean = acc / static_cast<double>(H * W);
      trace.steps.push_back(ms);
    } else {
      eps_hat4 = out.dynamic;
    }

    // rows of the batch: 0 full, 1 no_ref, 2 no_anchor, 3 no_text
    auto row = [&](int64_t i) {
      std::vector<float> buf(eps_hat4.data().begin() + i * C * H * W,
                             eps_hat4.data().begin() + (i + 1) * C * H * W);
      return Tensor::from_data({1, C, H, W}, std::move(buf));
    };
    auto eps = cfg_compose(row(0), row(1), row(2), row(3), opt.guidance);

    auto noise = t_prev > 0 ? Tensor::randn({1, C, H, W}, rng) : Tensor::zeros({1, C, H, W});
    y = ancestral_step(y, eps, t, t_prev, s, noise);
    if (!y.all_finite())
      throw NumericError("sample_frame: non-finite latent at t=" + std::to_string(t));
    for (float v : y.data())
      if (std::abs(v) > opt.divergence_abort)
        throw NumericError("sample_frame: divergence (|value| > " +
                           std::to_string(opt.divergence_abort) + ") at t=" +
                           std::to_string(t));
  }
  std::vector<float> buf(y.data().begin(), y.data().end());
  return {Tensor::from_data({C, H, W}, std::move(buf)), trace};
}

}  // namespace mvd
