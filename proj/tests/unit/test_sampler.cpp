#include <catch2/catch_amalgamated.hpp>

#include "mvd/sampler.hpp"
#include "mvd/toyworld.hpp"

using namespace mvd;

namespace {
Config desk_config() {
  Config c;
  c.width_dynamic = 8;
  c.width_mask = 4;
  return c;
}
const NoiseSchedule& sched() {
  static NoiseSchedule s = NoiseSchedule::linear(1000, 0.00085, 0.0120);
  return s;
}
ConditionSet toy_condition(const Config& cfg, Rng& r) {
  auto clip = gen_clip(PromptVocab::parse("right slow"), 3, cfg, r.next_u64());
  ConditionSet cond;
  cond.ref_prev = clip.frames[1];
  cond.ref_prev2 = clip.frames[0];
  cond.anchor = clip.frames[0];
  cond.prompt = clip.prompt;
  cond.aug_level = 200;
  return cond;
}
}  // namespace

TEST_CASE("cfg_compose identities and arithmetic", "[sampler]") {
  Rng r(1);
  auto full = Tensor::randn({1, 1, 4, 4}, r);
  auto a = Tensor::randn({1, 1, 4, 4}, r);
  auto b = Tensor::randn({1, 1, 4, 4}, r);
  auto c = Tensor::randn({1, 1, 4, 4}, r);

  // all scales zero: bitwise equal to full
  GuidanceScales zero{0, 0, 0};
  auto out = cfg_compose(full, a, b, c, zero);
  REQUIRE(std::equal(out.data().begin(), out.data().end(), full.data().begin()));

  // all branches equal: identity for any scales
  GuidanceScales big{3.5, -1.25, 6.5};
  auto same = cfg_compose(full, full, full, full, big);
  for (int i = 0; i < 16; ++i)
    REQUIRE(same.data()[i] == Catch::Approx(full.data()[i]).margin(1e-6));

  // scalar example: 1 + 0.25*(1-0) = 1.25
  auto one = Tensor::scalar(1.0f);
  auto zero_t = Tensor::scalar(0.0f);
  GuidanceScales g{0.25, 0.0, 0.0};
  REQUIRE(cfg_compose(one, zero_t, one, one, g).item() == 1.25f);

  REQUIRE_THROWS_AS(cfg_compose(full, a, b, Tensor::zeros({1}), big), ContractError);

  // affine in the difference: scaling (full - no_text) by c scales the term by c
  GuidanceScales gt{0, 0, 2.0};
  auto base = cfg_compose(full, full, full, c, gt);
  // no_text' = full - 3*(full - c) gives difference 3*(full - c)
  std::vector<float> scaled_data(16);
  for (int i = 0; i < 16; ++i)
    scaled_data[i] = full.data()[i] - 3.0f * (full.data()[i] - c.data()[i]);
  auto c3 = Tensor::from_data({1, 1, 4, 4}, std::move(scaled_data));
  auto tripled = cfg_compose(full, full, full, c3, gt);
  for (int i = 0; i < 16; ++i) {
    const double term = base.data()[i] - full.data()[i];
    const double term3 = tripled.data()[i] - full.data()[i];
    REQUIRE(term3 == Catch::Approx(3.0 * term).margin(1e-4));
  }
}

TEST_CASE("sample_frame determinism and trace length", "[sampler]") {
  auto cfg = desk_config();
  auto model = MaskedDenoiser::make(cfg, Rng(5));
  Rng rc(6);
  auto cond = toy_condition(cfg, rc);

  SampleOptions opt;
  opt.n_steps = 50;
  Rng r1(77), r2(77);
  auto [f1, t1] = sample_frame(model, cond, sched(), opt, r1);
  auto [f2, t2] = sample_frame(model, cond, sched(), opt, r2);
  REQUIRE(std::equal(f1.data().begin(), f1.data().end(), f2.data().begin()));
  REQUIRE(t1.steps.size() == 50);
  REQUIRE(t1.head_evals == 4 * 50);
  for (const auto& ms : t1.steps) {
    REQUIRE(ms.mean >= 0.0);
    REQUIRE(ms.mean <= 1.0);
    REQUIRE(ms.min <= ms.mean);
    REQUIRE(ms.max >= ms.mean);
  }
  REQUIRE(f1.all_finite());
}

TEST_CASE("zero guidance with null conditions equals the unconditional path",
          "[sampler]") {
  auto cfg = desk_config();
  auto model = MaskedDenoiser::make(cfg, Rng(5));
  ConditionSet cond;  // everything null
  cond.aug_level = 0;

  SampleOptions opt;
  opt.n_steps = 10;
  opt.guidance = {0, 0, 0};
  Rng r1(9);
  auto [frame, trace] = sample_frame(model, cond, sched(), opt, r1);

  // reference: single-branch ancestral loop that never builds ablations
  Rng r2(9);
  NoGradGuard ng;
  auto rc = render_conditions({cond}, 1, 16, 16);
  auto y = Tensor::randn({1, 1, 16, 16}, r2);
  auto steps = strided_steps(1000, 10);
  for (size_t k = 0; k < steps.size(); ++k) {
    const int64_t t = steps[k];
    const int64_t tp = k + 1 < steps.size() ? steps[k + 1] : 0;
    auto out = model.predict_rendered(rc, y, {t});
    auto stat = approx_static(slice_channels(rc.refs, 0, 1), y);
    auto eps_hat = blend(out.mask, stat, out.dynamic);
    auto noise = tp > 0 ? Tensor::randn({1, 1, 16, 16}, r2) : Tensor::zeros({1, 1, 16, 16});
    y = ancestral_step(y, eps_hat, t, tp, sched(), noise);
  }
  for (int i = 0; i < 256; ++i)
    REQUIRE(frame.data()[i] == y.data()[i]);
}

TEST_CASE("single-head models skip the mask trace", "[sampler]") {
  auto cfg = desk_config();
  cfg.use_mask = false;
  auto model = MaskedDenoiser::make(cfg, Rng(5));
  Rng rc(10);
  auto cond = toy_condition(cfg, rc);
  SampleOptions opt;
  opt.n_steps = 5;
  Rng r(3);
  auto [frame, trace] = sample_frame(model, cond, sched(), opt, r);
  REQUIRE(trace.steps.empty());
  REQUIRE(trace.head_evals == 4 * 5);
  REQUIRE(frame.all_finite());
}

TEST_CASE("divergence aborts with a numeric error", "[sampler]") {
  auto cfg = desk_config();
  auto model = MaskedDenoiser::make(cfg, Rng(5));
  // blow up the output conv so predictions explode
  auto d = model.dynamic_params.find("dynamic.cout.w")->mutable_data();
  std::fill(d.begin(), d.end(), 1e6f);
  Rng rc(11);
  auto cond = toy_condition(cfg, rc);
  SampleOptions opt;
  opt.n_steps = 10;
  opt.divergence_abort = 1e4;
  Rng r(4);
  REQUIRE_THROWS_AS(sample_frame(model, cond, sched(), opt, r), NumericError);
}
