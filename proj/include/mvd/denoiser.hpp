#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mvd/config.hpp"
#include "mvd/nn.hpp"
#include "mvd/schedule.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

// Conditioning for one frame prediction.  A disengaged optional means the
// slot was dropped; it renders as zeros plus a learned null-flag embedding.
struct ConditionSet {
  std::optional<Tensor> ref_prev;   // y^{i-1}, {C,H,W}
  std::optional<Tensor> ref_prev2;  // y^{i-2}
  std::optional<Tensor> anchor;
  std::optional<std::vector<int32_t>> prompt;
  int64_t aug_level = 0;
};

struct DenoiserOutput {
  Tensor dynamic;  // {N,C,H,W}
  Tensor mask;     // {N,1,H,W} in (0,1); undefined for single-head models
};

// Deterministic rendering of a batch of ConditionSets into network inputs.
struct RenderedConditions {
  Tensor refs;        // {N,2C,H,W}: ref_prev | ref_prev2, zeros when dropped
  Tensor anchor;      // {N,C,H,W}, zeros when dropped
  Tensor null_flags;  // {N,3}: refs, anchor, prompt
  std::vector<std::vector<int32_t>> prompts;  // null token when dropped
  std::vector<int64_t> aug_levels;
};

inline RenderedConditions render_conditions(const std::vector<ConditionSet>& conds,
                                            int64_t C, int64_t H, int64_t W) {
  const int64_t N = static_cast<int64_t>(conds.size());
  auto refs = Tensor::zeros({N, 2 * C, H, W});
  auto anchor = Tensor::zeros({N, C, H, W});
  auto flags = Tensor::zeros({N, 3});
  RenderedConditions out;
  out.prompts.resize(N);
  out.aug_levels.resize(N);
  auto rd = refs.mutable_data();
  auto ad = anchor.mutable_data();
  auto fd = flags.mutable_data();
  const int64_t chw = C * H * W;
  for (int64_t i = 0; i < N; ++i) {
    const auto& c = conds[i];
    const bool have_refs = c.ref_prev.has_value() && c.ref_prev2.has_value();
    check(have_refs == (c.ref_prev.has_value() || c.ref_prev2.has_value()),
          "render_conditions: reference frames drop as a pair");
    if (have_refs) {
      check(c.ref_prev->numel() == chw && c.ref_prev2->numel() == chw,
            "render_conditions: reference frame shape mismatch");
      std::copy(c.ref_prev->data().begin(), c.ref_prev->data().end(),
                rd.begin() + i * 2 * chw);
      std::copy(c.ref_prev2->data().begin(), c.ref_prev2->data().end(),
                rd.begin() + i * 2 * chw + chw);
    } else {
      fd[i * 3 + 0] = 1.0f;
    }
    if (c.anchor.has_value()) {
      check(c.anchor->numel() == chw, "render_conditions: anchor shape mismatch");
      std::copy(c.anchor->data().begin(), c.anchor->data().end(), ad.begin() + i * chw);
    } else {
      fd[i * 3 + 1] = 1.0f;
    }
    if (c.prompt.has_value() && !c.prompt->empty()) {
      out.prompts[i] = *c.prompt;
    } else {
      out.prompts[i] = {0};  // null token
      fd[i * 3 + 2] = 1.0f;
    }
    out.aug_levels[i] = c.aug_level;
  }
  out.refs = std::move(refs);
  out.anchor = std::move(anchor);
  out.null_flags = std::move(flags);
  return out;
}

// Sinusoidal timestep embedding plus sinusoidal augmentation-level
// embedding, summed.  Deterministic in (t, aug_level, dim).
inline Tensor embed_step(int64_t t, int64_t aug_level, int64_t dim, int64_t t_limit,
                         int64_t aug_limit) {
  check(t >= 0 && t <= t_limit, "embed_step: t out of range");
  check(aug_level >= 0 && aug_level <= aug_limit, "embed_step: aug_level out of range");
  std::vector<float> buf(static_cast<size_t>(dim));
  std::vector<float> aug(static_cast<size_t>(dim));
  write_sinusoid<float>(buf, static_cast<double>(t));
  write_sinusoid<float>(aug, static_cast<double>(aug_level));
  for (size_t i = 0; i < buf.size(); ++i) buf[i] += aug[i];
  return Tensor::from_data({1, dim}, std::move(buf));
}

// T2I-Adapter-style reference encoder: the two reference frames are
// concatenated along channels and reduced through a conv pyramid that emits
// one additive feature map per trunk stage.
template <typename T>
struct Adapter {
  Conv2d<T> cin, r1, d1, r2, d2, r3;

  static Adapter make(ParamSet<T>& ps, const std::string& name, int64_t c_latent,
                      const std::array<int64_t, 3>& widths, Rng& rng) {
    Adapter a;
    a.cin = Conv2d<T>::make(ps, name + ".cin", 2 * c_latent, widths[0], 3, 1, 1, rng);
    a.r1 = Conv2d<T>::make(ps, name + ".r1", widths[0], widths[0], 3, 1, 1, rng);
    a.d1 = Conv2d<T>::make(ps, name + ".d1", widths[0], widths[1], 3, 2, 1, rng);
    a.r2 = Conv2d<T>::make(ps, name + ".r2", widths[1], widths[1], 3, 1, 1, rng);
    a.d2 = Conv2d<T>::make(ps, name + ".d2", widths[1], widths[2], 3, 2, 1, rng);
    a.r3 = Conv2d<T>::make(ps, name + ".r3", widths[2], widths[2], 3, 1, 1, rng);
    return a;
  }

  std::array<BasicTensor<T>, 3> operator()(const BasicTensor<T>& refs) const {
    auto f1 = r1(silu(cin(refs)));
    auto f2 = r2(silu(d1(silu(f1))));
    auto f3 = r3(silu(d2(silu(f2))));
    return {f1, f2, f3};
  }
};

// One prediction head: three-stage conv trunk (channel multipliers 1/2/4,
// stride-2 downsampling), adapter injection per encoder stage, scale-shift
// conditioning from the summed embedding, symmetric decoder with skips.
template <typename T>
struct DenoiserHead {
  int64_t width = 0, emb_dim = 0, c_latent = 0, c_out = 0;
  Linear<T> emb1, emb2;
  Conv2d<T> anc1, anc2;
  Linear<T> anc_proj;
  BasicTensor<T> prompt_table;
  Linear<T> flag_proj;
  Adapter<T> adapter;
  Conv2d<T> cin, dn1, dn2, up1, up2, cout;
  ResBlock<T> rb1, rb2, rb3, mid, rb4, rb5;

  static DenoiserHead make(ParamSet<T>& ps, const std::string& name, int64_t width,
                           int64_t c_latent, int64_t c_out, int64_t h, int64_t w,
                           int64_t vocab, Rng& rng) {
    DenoiserHead d;
    d.width = width;
    d.emb_dim = width;
    d.c_latent = c_latent;
    d.c_out = c_out;
    const std::array<int64_t, 3> ws{width, 2 * width, 4 * width};
    d.emb1 = Linear<T>::make(ps, name + ".emb1", d.emb_dim, d.emb_dim, rng);
    d.emb2 = Linear<T>::make(ps, name + ".emb2", d.emb_dim, d.emb_dim, rng);
    d.anc1 = Conv2d<T>::make(ps, name + ".anc1", c_latent, 8, 3, 2, 1, rng);
    d.anc2 = Conv2d<T>::make(ps, name + ".anc2", 8, 16, 3, 2, 1, rng);
    d.anc_proj = Linear<T>::make(ps, name + ".anc_proj", 16 * (h / 4) * (w / 4),
                                 d.emb_dim, rng);
    {
      Rng tr = rng.fork(0x7ab1e);
      auto t = BasicTensor<T>::zeros({vocab, d.emb_dim});
      auto td = t.mutable_data();
      const double sd = 1.0 / std::sqrt(static_cast<double>(d.emb_dim));
      for (auto& v : td) v = static_cast<T>(tr.normal() * sd);
      d.prompt_table = t;
      ps.add(name + ".prompt_table", d.prompt_table);
    }
    d.flag_proj = Linear<T>::make(ps, name + ".flag_proj", 3, d.emb_dim, rng,
                                  /*zero_bias=*/true);
    d.adapter = Adapter<T>::make(ps, name + ".adapter", c_latent, ws, rng);
    d.cin = Conv2d<T>::make(ps, name + ".cin", c_latent, ws[0], 3, 1, 1, rng);
    d.rb1 = ResBlock<T>::make(ps, name + ".rb1", ws[0], d.emb_dim, rng);
    d.dn1 = Conv2d<T>::make(ps, name + ".dn1", ws[0], ws[1], 3, 2, 1, rng);
    d.rb2 = ResBlock<T>::make(ps, name + ".rb2", ws[1], d.emb_dim, rng);
    d.dn2 = Conv2d<T>::make(ps, name + ".dn2", ws[1], ws[2], 3, 2, 1, rng);
    d.rb3 = ResBlock<T>::make(ps, name + ".rb3", ws[2], d.emb_dim, rng);
    d.mid = ResBlock<T>::make(ps, name + ".mid", ws[2], d.emb_dim, rng);
    d.up1 = Conv2d<T>::make(ps, name + ".up1", ws[2], ws[1], 3, 1, 1, rng);
    d.rb4 = ResBlock<T>::make(ps, name + ".rb4", ws[1], d.emb_dim, rng);
    d.up2 = Conv2d<T>::make(ps, name + ".up2", ws[1], ws[0], 3, 1, 1, rng);
    d.rb5 = ResBlock<T>::make(ps, name + ".rb5", ws[0], d.emb_dim, rng);
    // zero-init the output projection: the head starts as the identity of
    // its residual target (zero noise / flat mask at sigmoid(0) = 0.5)
    d.cout = Conv2d<T>::make(ps, name + ".cout", ws[0], c_out, 3, 1, 1, rng,
                             /*zero_init=*/true);
    return d;
  }

  // y_t {N,C,H,W}; t per sample; rendered conditions aligned with the batch.
  BasicTensor<T> operator()(const BasicTensor<T>& y_t, const std::vector<int64_t>& ts,
                            const RenderedConditions& rc, int64_t t_limit,
                            int64_t aug_limit) const {
    const int64_t N = y_t.shape()[0];
    check(static_cast<int64_t>(ts.size()) == N, "denoiser: t count mismatch");
    check(rc.refs.shape()[0] == N, "denoiser: condition batch mismatch");

    // conditioning embedding: time+aug sinusoid -> MLP, plus anchor encoding,
    // prompt embedding and null-flag projection
    std::vector<T> emb_rows(static_cast<size_t>(N * emb_dim));
    for (int64_t i = 0; i < N; ++i) {
      check(ts[i] >= 0 && ts[i] <= t_limit, "denoiser: t out of range");
      check(rc.aug_levels[i] >= 0 && rc.aug_levels[i] <= aug_limit,
            "denoiser: aug_level out of range");
      std::span<T> row(emb_rows.data() + i * emb_dim, static_cast<size_t>(emb_dim));
      write_sinusoid<T>(row, static_cast<double>(ts[i]));
      std::vector<T> aug(static_cast<size_t>(emb_dim));
      write_sinusoid<T>(std::span<T>(aug), static_cast<double>(rc.aug_levels[i]));
      for (int64_t k = 0; k < emb_dim; ++k) row[k] += aug[k];
    }
    auto e = BasicTensor<T>::from_data({N, emb_dim}, std::move(emb_rows));
    e = emb2(silu(emb1(e)));
    auto av = anc_proj(reshape(silu(anc2(silu(anc1(rc.anchor)))),
                               {N, 16 * (y_t.shape()[2] / 4) * (y_t.shape()[3] / 4)}));
    e = add(e, av);
    e = add(e, embed_mean(prompt_table, rc.prompts));
    e = add(e, flag_proj(rc.null_flags));

    auto feats = adapter(rc.refs);
    auto h1 = rb1(add(cin(y_t), feats[0]), e);
    auto h2 = rb2(add(dn1(silu(h1)), feats[1]), e);
    auto h3 = rb3(add(dn2(silu(h2)), feats[2]), e);
    auto m = mid(h3, e);
    auto u2 = rb4(add(up1(upsample_nearest2(m)), h2), e);
    auto u1 = rb5(add(up2(upsample_nearest2(u2)), h1), e);
    return cout(silu(u1));
  }
};

// The pair of conditional networks.  Both heads receive the identical
// condition rendering but own independent parameters; the mask head is the
// narrower copy and emits one channel squashed to (0,1).
struct MaskedDenoiser {
  int64_t c_latent = 1, latent_h = 16, latent_w = 16;
  int64_t t_limit = 1000, aug_limit = 550;
  bool use_mask = true;
  DenoiserHead<float> dynamic_head;
  DenoiserHead<float> mask_head;
  ParamSet<float> dynamic_params;
  ParamSet<float> mask_params;

  static MaskedDenoiser make(const Config& cfg, const Rng& seed_rng) {
    MaskedDenoiser m;
    m.c_latent = cfg.latent_channels;
    m.latent_h = cfg.latent_h;
    m.latent_w = cfg.latent_w;
    m.t_limit = cfg.timesteps;
    m.aug_limit = cfg.timesteps;  // aug levels are schedule steps
    m.use_mask = cfg.use_mask;
    Rng rd = seed_rng.fork(stream::kParamsDynamic);
    m.dynamic_head = DenoiserHead<float>::make(
        m.dynamic_params, "dynamic", cfg.width_dynamic, cfg.latent_channels,
        cfg.latent_channels, cfg.latent_h, cfg.latent_w, kVocabSize, rd);
    if (cfg.use_mask) {
      Rng rm = seed_rng.fork(stream::kParamsMask);
      m.mask_head = DenoiserHead<float>::make(m.mask_params, "mask", cfg.width_mask,
                                              cfg.latent_channels, 1, cfg.latent_h,
                                              cfg.latent_w, kVocabSize, rm);
    }
    return m;
  }

  static constexpr int64_t kVocabSize = 7;  // toy vocabulary (see toyworld)

  DenoiserOutput predict(const std::vector<ConditionSet>& conds, const Tensor& y_t,
                         const std::vector<int64_t>& ts) const {
    check(y_t.shape().size() == 4 && y_t.shape()[1] == c_latent &&
              y_t.shape()[2] == latent_h && y_t.shape()[3] == latent_w,
          "predict: y_t shape mismatch, got " + shape_str(y_t.shape()));
    auto rc = render_conditions(conds, c_latent, latent_h, latent_w);
    return predict_rendered(rc, y_t, ts);
  }

  DenoiserOutput predict_rendered(const RenderedConditions& rc, const Tensor& y_t,
                                  const std::vector<int64_t>& ts) const {
    DenoiserOutput out;
    out.dynamic = dynamic_head(y_t, ts, rc, t_limit, aug_limit);
    if (!out.dynamic.all_finite())
      throw NumericError("predict: non-finite dynamic head output");
    if (use_mask) {
      out.mask = sigmoid(mask_head(y_t, ts, rc, t_limit, aug_limit));
      if (!out.mask.all_finite())
        throw NumericError("predict: non-finite mask head output");
    }
    return out;
  }

  int64_t param_count() const {
    return dynamic_params.total_elements() +
           (use_mask ? mask_params.total_elements() : 0);
  }
};

// Each condition group (reference pair, anchor, prompt) is independently
// nulled with probability `rate`.  Draw order: refs, anchor, prompt.
inline ConditionSet drop_conditions(const ConditionSet& cond, double rate, Rng& rng) {
  check(rate >= 0.0 && rate <= 1.0, "drop_conditions: rate outside [0,1]");
  ConditionSet out = cond;
  if (rng.uniform() < rate) {
    out.ref_prev.reset();
    out.ref_prev2.reset();
  }
  if (rng.uniform() < rate) out.anchor.reset();
  if (rng.uniform() < rate) out.prompt.reset();
  return out;
}

// Noise-augment every present conditioning frame with the forward process
// at level t_aug (fresh noise per frame); records the level in the output.
// Draw order: ref_prev, ref_prev2, anchor.
inline ConditionSet augment_conditions(const ConditionSet& cond, int64_t t_aug,
                                       const NoiseSchedule& s, Rng& rng) {
  check(t_aug >= 0 && t_aug <= s.steps(), "augment_conditions: t_aug out of range");
  ConditionSet out = cond;
  out.aug_level = t_aug;
  if (t_aug == 0) return out;  // identity, no draws
  auto corrupt = [&](const Tensor& f) {
    auto eps = Tensor::randn(Shape(f.shape()), rng);
    return forward_sample(f, t_aug, eps, s);
  };
  if (out.ref_prev) out.ref_prev = corrupt(*out.ref_prev);
  if (out.ref_prev2) out.ref_prev2 = corrupt(*out.ref_prev2);
  if (out.anchor) out.anchor = corrupt(*out.anchor);
  out.aug_level = t_aug;
  return out;
}

}  // namespace mvd
