#pragma once

#include <chrono>
#include <string>
#include <vector>

#include "mvd/checkpoint.hpp"
#include "mvd/config.hpp"
#include "mvd/denoiser.hpp"
#include "mvd/masked_noise.hpp"
#include "mvd/optim.hpp"
#include "mvd/rollout.hpp"
#include "mvd/sampler.hpp"
#include "mvd/toyworld.hpp"

namespace mvd {

struct TrainLogRow {
  int64_t step = 0;
  double loss = 0;
  double grad_norm = 0;
  double wall_seconds = 0;
};

// Stream derivation for one training sample.  Every random decision has
// its own purpose stream keyed on (seed, step, sample index), so a
// reference training path can reproduce any subset of the draws and
// ablations differ only in the intended dimension.
struct SampleStreams {
  Rng pick, time, noise, aug_level, aug_noise, drop, anchor;

  static SampleStreams make(const Rng& base, int64_t step, int64_t sample) {
    Rng s = base.fork(stream::kTrain).fork(static_cast<uint64_t>(step))
                .fork(static_cast<uint64_t>(sample));
    SampleStreams out{
        s.fork(stream::kPickClip), s.fork(stream::kPickTime), s.fork(stream::kNoise),
        s.fork(stream::kAugLevel), s.fork(stream::kAugNoise), s.fork(stream::kDrop),
        s.fork(stream::kAnchor)};
    return out;
  }
};

class Trainer {
 public:
  Trainer(const Config& cfg, Corpus corpus)
      : cfg_(cfg),
        corpus_(std::move(corpus)),
        schedule_(NoiseSchedule::linear(cfg.timesteps, cfg.beta_start, cfg.beta_end)),
        base_rng_(cfg.seed),
        model_(MaskedDenoiser::make(cfg, Rng(cfg.seed))) {
    check(!corpus_.clips.empty(), "trainer: empty corpus");
    for (const auto& clip : corpus_.clips)
      check(static_cast<int64_t>(clip.frames.size()) >= 2,
            "trainer: clips must have at least 2 frames");
    AdamWConfig oc;
    oc.lr = cfg.lr;
    oc.beta1 = cfg.adam_beta1;
    oc.beta2 = cfg.adam_beta2;
    oc.weight_decay = cfg.weight_decay;
    opt_dynamic_ = AdamW<float>(oc);
    oc.lr = cfg.lr * cfg.lr_mask_scale;
    opt_mask_ = AdamW<float>(oc);
    init_ema();
  }

  const Config& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  MaskedDenoiser& model() { return model_; }
  const MaskedDenoiser& model() const { return model_; }
  int64_t step() const { return step_; }
  const std::vector<TrainLogRow>& log() const { return log_; }

  // EMA weights materialized into a model for sampling.
  MaskedDenoiser ema_model() const {
    MaskedDenoiser m = MaskedDenoiser::make(cfg_, Rng(cfg_.seed));
    copy_params(ema_dynamic_, m.dynamic_params);
    if (cfg_.use_mask) copy_params(ema_mask_, m.mask_params);
    return m;
  }

  // One optimization step over a freshly assembled batch; returns the loss.
  double train_step() {
    const auto wall0 = std::chrono::steady_clock::now();
    const int64_t B = cfg_.batch_size;
    const int64_t C = cfg_.latent_channels, H = cfg_.latent_h, W = cfg_.latent_w;

    std::vector<ConditionSet> conds(B);
    std::vector<int64_t> ts(B);
    std::vector<float> ybuf(static_cast<size_t>(B * C * H * W));
    std::vector<float> ebuf(static_cast<size_t>(B * C * H * W));
    for (int64_t i = 0; i < B; ++i) {
      auto st = SampleStreams::make(base_rng_, step_, i);
      const auto& clip = corpus_.clips[st.pick.uniform_int(
          0, static_cast<int64_t>(corpus_.clips.size()) - 1)];
      const int64_t L = static_cast<int64_t>(clip.frames.size());
      const int64_t target = st.pick.uniform_int(1, L - 1);

      ConditionSet cond;
      cond.ref_prev = clip.frames[target - 1];
      cond.ref_prev2 = target >= 2 ? clip.frames[target - 2] : clip.frames[0];
      cond.anchor = clip.frames[select_train_anchor(target, cfg_.anchor_window, st.anchor)];
      cond.prompt = clip.prompt;

      const int64_t t = st.time.uniform_int(1, cfg_.timesteps);
      const int64_t t_aug = cfg_.t_max > 0 ? st.aug_level.uniform_int(0, cfg_.t_max) : 0;
      cond = augment_conditions(cond, t_aug, schedule_, st.aug_noise);
      if (cfg_.drop_rate > 0) cond = drop_conditions(cond, cfg_.drop_rate, st.drop);
      conds[i] = std::move(cond);
      ts[i] = t;

      auto eps = Tensor::randn({C, H, W}, st.noise);
      auto y_t = forward_sample(clip.frames[target], t, eps, schedule_);
      std::copy(y_t.data().begin(), y_t.data().end(), ybuf.begin() + i * C * H * W);
      std::copy(eps.data().begin(), eps.data().end(), ebuf.begin() + i * C * H * W);
    }
    auto y_t = Tensor::from_data({B, C, H, W}, std::move(ybuf));
    auto eps = Tensor::from_data({B, C, H, W}, std::move(ebuf));

    auto rendered = render_conditions(conds, C, H, W);
    auto out = model_.predict_rendered(rendered, y_t, ts);
    Tensor eps_hat;
    if (cfg_.use_mask) {
      auto ref_prev = slice_channels(rendered.refs, 0, C);
      // per-sample t static channel: paper form is t-independent; the
      // lambda-normalized variant needs per-sample scaling
      Tensor stat;
      if (cfg_.static_form == "paper") {
        stat = approx_static(ref_prev, y_t);
      } else {
        auto diff = approx_static(ref_prev, y_t);
        std::vector<float> buf(diff.data().begin(), diff.data().end());
        for (int64_t i = 0; i < B; ++i) {
          const float inv = static_cast<float>(1.0 / schedule_.lambda(ts[i]));
          for (int64_t k = 0; k < C * H * W; ++k) buf[i * C * H * W + k] *= inv;
        }
        stat = Tensor::from_data({B, C, H, W}, std::move(buf));
      }
      eps_hat = blend(out.mask, stat, out.dynamic);
    } else {
      eps_hat = out.dynamic;
    }
    auto loss = diffusion_loss(eps_hat, eps);
    const double loss_v = loss.item();
    if (!std::isfinite(loss_v))
      throw NumericError("train_step: non-finite loss at step " + std::to_string(step_));

    model_.dynamic_params.clear_grads();
    if (cfg_.use_mask) model_.mask_params.clear_grads();
    loss.backward();
    const double gnorm = model_.dynamic_params.grad_norm();
    opt_dynamic_.step(model_.dynamic_params);
    if (cfg_.use_mask) opt_mask_.step(model_.mask_params);
    ema_update(ema_dynamic_, model_.dynamic_params, cfg_.ema_decay);
    if (cfg_.use_mask) ema_update(ema_mask_, model_.mask_params, cfg_.ema_decay);

    ++step_;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
    log_.push_back({step_, loss_v, gnorm, wall});
    return loss_v;
  }

  void run(int64_t steps) {
    for (int64_t i = 0; i < steps; ++i) train_step();
  }

  void save(const std::string& path) const {
    CheckpointData ck;
    ck.config_hash = cfg_.hash();
    ck.step = step_;
    ck.rng_key = base_rng_.key();
    ck.rng_counter = base_rng_.counter();
    pack_params(model_.dynamic_params, ck.dynamic);
    pack_params(ema_dynamic_, ck.ema_dynamic);
    pack_opt(opt_dynamic_, ck.opt_dynamic);
    if (cfg_.use_mask) {
      pack_params(model_.mask_params, ck.mask);
      pack_params(ema_mask_, ck.ema_mask);
      pack_opt(opt_mask_, ck.opt_mask);
    }
    save_checkpoint(ck, path);
  }

  void load(const std::string& path) {
    CheckpointData ck = load_checkpoint(path);
    if (ck.config_hash != cfg_.hash())
      throw DataError("checkpoint config hash mismatch (saved " +
                      std::to_string(ck.config_hash) + ", current " +
                      std::to_string(cfg_.hash()) + ")");
    step_ = ck.step;
    base_rng_ = Rng::from_state(ck.rng_key, ck.rng_counter);
    unpack_params(ck.dynamic, model_.dynamic_params);
    unpack_params(ck.ema_dynamic, ema_dynamic_);
    unpack_opt(ck.opt_dynamic, opt_dynamic_, model_.dynamic_params);
    if (cfg_.use_mask) {
      unpack_params(ck.mask, model_.mask_params);
      unpack_params(ck.ema_mask, ema_mask_);
      unpack_opt(ck.opt_mask, opt_mask_, model_.mask_params);
    }
  }

 private:
  void init_ema() {
    copy_param_set(model_.dynamic_params, ema_dynamic_);
    if (cfg_.use_mask) copy_param_set(model_.mask_params, ema_mask_);
  }

  static void copy_param_set(const ParamSet<float>& src, ParamSet<float>& dst) {
    for (size_t i = 0; i < src.size(); ++i) dst.add(src.name(i), src.at(i).detach());
  }

  static void copy_params(const ParamSet<float>& src, ParamSet<float>& dst) {
    check(src.size() == dst.size(), "copy_params: layout mismatch");
    for (size_t i = 0; i < src.size(); ++i) {
      auto d = dst.at(i).mutable_data();
      auto s = src.at(i).data();
      std::copy(s.begin(), s.end(), d.begin());
    }
  }

  static void pack_params(const ParamSet<float>& ps, std::vector<NamedBlob>& out) {
    for (size_t i = 0; i < ps.size(); ++i) {
      NamedBlob b;
      b.name = ps.name(i);
      b.shape = ps.at(i).shape();
      b.data.assign(ps.at(i).data().begin(), ps.at(i).data().end());
      out.push_back(std::move(b));
    }
  }

  static void unpack_params(const std::vector<NamedBlob>& in, ParamSet<float>& ps) {
    check(in.size() == ps.size(), "checkpoint: parameter count mismatch");
    for (size_t i = 0; i < in.size(); ++i) {
      check(in[i].name == ps.name(i), "checkpoint: parameter name mismatch at " +
                                          in[i].name);
      check(in[i].shape == ps.at(i).shape(), "checkpoint: shape mismatch at " + in[i].name);
      auto d = ps.at(i).mutable_data();
      std::copy(in[i].data.begin(), in[i].data.end(), d.begin());
    }
  }

  static void pack_opt(const AdamW<float>& opt, OptStateBlob& out) {
    auto& o = const_cast<AdamW<float>&>(opt);
    out.step = opt.step_count();
    out.m = o.moments1();
    out.v = o.moments2();
  }

  static void unpack_opt(const OptStateBlob& in, AdamW<float>& opt,
                         const ParamSet<float>& ps) {
    opt.init_state(ps);
    if (in.m.empty()) {
      opt.set_step_count(in.step);
      return;
    }
    check(in.m.size() == ps.size() && in.v.size() == ps.size(),
          "checkpoint: optimizer state count mismatch");
    opt.moments1() = in.m;
    opt.moments2() = in.v;
    opt.set_step_count(in.step);
  }

  Config cfg_;
  Corpus corpus_;
  NoiseSchedule schedule_;
  Rng base_rng_;
  MaskedDenoiser model_;
  ParamSet<float> ema_dynamic_, ema_mask_;
  AdamW<float> opt_dynamic_, opt_mask_;
  int64_t step_ = 0;
  std::vector<TrainLogRow> log_;
};

}  // namespace mvd
