#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "mvd/masked_noise.hpp"
#include "mvd/rng.hpp"
#include "mvd/tensor.hpp"

using namespace mvd;
using DTensor = BasicTensor<double>;

namespace {

// Central finite differences against the tape, elementwise, in double.
// Returns the worst relative error over all probed elements.
double gradcheck(const std::function<DTensor()>& fn, std::vector<DTensor*> inputs,
                 double h = 1e-4, int max_probes_per_input = 10) {
  auto loss = fn();
  loss.backward();
  std::vector<std::vector<double>> grads;
  for (auto* in : inputs) {
    REQUIRE(in->has_grad());
    grads.emplace_back(in->grad().begin(), in->grad().end());
  }
  double worst = 0;
  Rng pick(999);
  for (size_t ii = 0; ii < inputs.size(); ++ii) {
    auto* in = inputs[ii];
    const int64_t n = in->numel();
    for (int probe = 0; probe < max_probes_per_input; ++probe) {
      const int64_t k = pick.uniform_int(0, n - 1);
      const double orig = in->data()[k];
      in->mutable_data()[k] = orig + h;
      const double fp = fn().item();
      in->mutable_data()[k] = orig - h;
      const double fm = fn().item();
      in->mutable_data()[k] = orig;
      const double fd = (fp - fm) / (2 * h);
      const double ad = grads[ii][k];
      const double denom = std::max({std::abs(fd), std::abs(ad), 1e-8});
      worst = std::max(worst, std::abs(fd - ad) / denom);
    }
  }
  return worst;
}

DTensor randn_d(Shape s, Rng& r) { return DTensor::randn(std::move(s), r); }

}  // namespace

TEST_CASE("grad of x*x is 2x and grad of sum is ones", "[autograd]") {
  auto x = Tensor::scalar(3.0f).set_requires_grad();
  auto y = mul(x, x);
  y.backward();
  REQUIRE(x.grad()[0] == 6.0f);

  Rng r(1);
  auto t = Tensor::randn({2, 3, 4}, r);
  t.set_requires_grad();
  sum_all(t).backward();
  for (float g : t.grad()) REQUIRE(g == 1.0f);
}

TEST_CASE("backward requires a scalar and only reaches used parameters", "[autograd]") {
  Rng r(2);
  auto a = Tensor::randn({2, 2}, r);
  a.set_requires_grad();
  REQUIRE_THROWS_AS(add(a, a).backward(), ContractError);

  auto used = Tensor::randn({3}, r).set_requires_grad();
  auto unused = Tensor::randn({3}, r).set_requires_grad();
  sum_all(used).backward();
  REQUIRE(used.has_grad());
  REQUIRE_FALSE(unused.has_grad());
}

TEST_CASE("finite differences validate every layer type", "[autograd]") {
  Rng r(42);

  SECTION("conv2d stride 1") {
    auto x = randn_d({2, 3, 6, 6}, r);
    auto w = randn_d({4, 3, 3, 3}, r);
    auto b = randn_d({4}, r);
    x.set_requires_grad();
    w.set_requires_grad();
    b.set_requires_grad();
    auto fn = [&] { return mean_all(silu(conv2d(x, w, b, 1, 1))); };
    REQUIRE(gradcheck(fn, {&x, &w, &b}) < 1e-3);
  }
  SECTION("conv2d stride 2") {
    auto x = randn_d({2, 2, 8, 8}, r);
    auto w = randn_d({3, 2, 3, 3}, r);
    auto b = randn_d({3}, r);
    x.set_requires_grad();
    w.set_requires_grad();
    b.set_requires_grad();
    auto fn = [&] { return mean_all(conv2d(x, w, b, 2, 1)); };
    REQUIRE(gradcheck(fn, {&x, &w, &b}) < 1e-3);
  }
  SECTION("linear") {
    auto x = randn_d({3, 5}, r);
    auto w = randn_d({4, 5}, r);
    auto b = randn_d({4}, r);
    x.set_requires_grad();
    w.set_requires_grad();
    b.set_requires_grad();
    auto fn = [&] { return mean_all(silu(linear(x, w, b))); };
    REQUIRE(gradcheck(fn, {&x, &w, &b}) < 1e-3);
  }
  SECTION("silu and sigmoid") {
    auto x = randn_d({4, 7}, r);
    x.set_requires_grad();
    auto fn = [&] { return mean_all(mul(silu(x), sigmoid(x))); };
    REQUIRE(gradcheck(fn, {&x}) < 1e-3);
  }
  SECTION("channel_affine") {
    auto h = randn_d({2, 3, 4, 4}, r);
    auto s = randn_d({2, 3}, r);
    auto b = randn_d({2, 3}, r);
    h.set_requires_grad();
    s.set_requires_grad();
    b.set_requires_grad();
    auto fn = [&] { return mean_all(silu(channel_affine(h, s, b))); };
    REQUIRE(gradcheck(fn, {&h, &s, &b}) < 1e-3);
  }
  SECTION("mul_channel_broadcast") {
    auto m = randn_d({2, 1, 4, 4}, r);
    auto x = randn_d({2, 3, 4, 4}, r);
    m.set_requires_grad();
    x.set_requires_grad();
    auto fn = [&] { return mean_all(mul_channel_broadcast(m, x)); };
    REQUIRE(gradcheck(fn, {&m, &x}) < 1e-3);
  }
  SECTION("upsample_nearest2") {
    auto x = randn_d({2, 3, 3, 3}, r);
    x.set_requires_grad();
    auto fn = [&] { return mean_all(silu(upsample_nearest2(x))); };
    REQUIRE(gradcheck(fn, {&x}) < 1e-3);
  }
  SECTION("concat_channels and slice_cols") {
    auto a = randn_d({2, 2, 3, 3}, r);
    auto b = randn_d({2, 3, 3, 3}, r);
    a.set_requires_grad();
    b.set_requires_grad();
    auto fn = [&] { return mean_all(silu(concat_channels(a, b))); };
    REQUIRE(gradcheck(fn, {&a, &b}) < 1e-3);

    auto m = randn_d({3, 6}, r);
    m.set_requires_grad();
    auto fn2 = [&] { return mean_all(mul(slice_cols(m, 0, 3), slice_cols(m, 3, 6))); };
    REQUIRE(gradcheck(fn2, {&m}) < 1e-3);
  }
  SECTION("embed_mean") {
    auto table = randn_d({5, 4}, r);
    table.set_requires_grad();
    std::vector<std::vector<int32_t>> ids{{0, 2}, {4, 4, 1}};
    auto fn = [&] { return mean_all(silu(embed_mean(table, ids))); };
    REQUIRE(gradcheck(fn, {&table}) < 1e-3);
  }
  SECTION("mse and reshape") {
    auto a = randn_d({2, 6}, r);
    auto b = randn_d({2, 6}, r);
    a.set_requires_grad();
    b.set_requires_grad();
    auto fn = [&] { return mse(reshape(a, {3, 4}), reshape(b, {3, 4})); };
    REQUIRE(gradcheck(fn, {&a, &b}) < 1e-3);
  }
  SECTION("blend composite") {
    auto logits = randn_d({2, 1, 4, 4}, r);
    auto st = randn_d({2, 3, 4, 4}, r);
    auto dy = randn_d({2, 3, 4, 4}, r);
    auto target = randn_d({2, 3, 4, 4}, r);
    logits.set_requires_grad();
    st.set_requires_grad();
    dy.set_requires_grad();
    auto fn = [&] { return diffusion_loss(blend(sigmoid(logits), st, dy), target); };
    REQUIRE(gradcheck(fn, {&logits, &st, &dy}) < 1e-3);
  }
}

TEST_CASE("random two-layer network passes finite differences", "[autograd]") {
  Rng r(2025);
  auto x = randn_d({2, 2, 6, 6}, r);
  auto w1 = randn_d({4, 2, 3, 3}, r);
  auto b1 = randn_d({4}, r);
  auto w2 = randn_d({1, 4, 3, 3}, r);
  auto b2 = randn_d({1}, r);
  auto target = randn_d({2, 1, 6, 6}, r);
  w1.set_requires_grad();
  b1.set_requires_grad();
  w2.set_requires_grad();
  b2.set_requires_grad();
  auto fn = [&] {
    auto h = silu(conv2d(x, w1, b1, 1, 1));
    return mse(conv2d(h, w2, b2, 1, 1), target);
  };
  REQUIRE(gradcheck(fn, {&w1, &b1, &w2, &b2}, 1e-4, 12) < 1e-3);
}

TEST_CASE("NoGradGuard suppresses tape recording", "[autograd]") {
  Rng r(6);
  auto x = Tensor::randn({3}, r).set_requires_grad();
  {
    NoGradGuard ng;
    auto y = sum_all(mul(x, x));
    REQUIRE_FALSE(y.requires_grad());
  }
  auto y = sum_all(mul(x, x));
  REQUIRE(y.requires_grad());
}
