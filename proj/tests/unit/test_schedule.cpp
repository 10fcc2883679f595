#include <catch2/catch_amalgamated.hpp>

#include "mvd/rng.hpp"
#include "mvd/schedule.hpp"

using namespace mvd;

namespace {
const NoiseSchedule& paper_schedule() {
  static NoiseSchedule s = NoiseSchedule::linear(1000, 0.00085, 0.0120);
  return s;
}
}  // namespace

TEST_CASE("linear schedule endpoints and derived arrays", "[schedule]") {
  const auto& s = paper_schedule();
  REQUIRE(s.steps() == 1000);
  REQUIRE(s.beta(1) == Catch::Approx(0.00085).epsilon(1e-12));
  REQUIRE(s.beta(1000) == Catch::Approx(0.0120).epsilon(1e-12));
  REQUIRE(s.alpha_bar(1) == Catch::Approx(0.99915).epsilon(1e-9));
  // cumulative-product reference value, pinned as a regression constant
  REQUIRE(s.alpha_bar(1000) == Catch::Approx(1.5789629306e-03).epsilon(1e-8));

  for (int64_t t = 2; t <= 1000; ++t) {
    REQUIRE(s.beta(t) > s.beta(t - 1));
    REQUIRE(s.alpha_bar(t) < s.alpha_bar(t - 1));
    REQUIRE(s.alpha_bar(t) > 0.0);
    REQUIRE(s.alpha_bar(t) < 1.0);
  }
  for (int64_t t = 1; t <= 1000; ++t) {
    const double ss = s.sigma(t) * s.sigma(t) + s.lambda(t) * s.lambda(t);
    REQUIRE(std::abs(ss - 1.0) < 1e-6);
  }
  // clean-data convention
  REQUIRE(s.alpha_bar(0) == 1.0);
  REQUIRE(s.sigma(0) == 1.0);
  REQUIRE(s.lambda(0) == 0.0);
}

TEST_CASE("schedule rejects invalid bounds", "[schedule]") {
  REQUIRE_THROWS_AS(NoiseSchedule::linear(0, 0.001, 0.01), ContractError);
  REQUIRE_THROWS_AS(NoiseSchedule::linear(10, 0.0, 0.01), ContractError);
  REQUIRE_THROWS_AS(NoiseSchedule::linear(10, 0.02, 0.01), ContractError);
  REQUIRE_THROWS_AS(NoiseSchedule::linear(10, 0.001, 1.0), ContractError);
  REQUIRE_THROWS_AS(paper_schedule().sigma(1001), ContractError);
}

TEST_CASE("forward_sample boundary forms", "[schedule]") {
  const auto& s = paper_schedule();
  Rng r(1);
  auto y0 = Tensor::randn({1, 4, 4}, r);
  auto eps = Tensor::randn({1, 4, 4}, r);
  auto zero = Tensor::zeros({1, 4, 4});

  auto yt = forward_sample(y0, 300, zero, s);
  for (int i = 0; i < 16; ++i)
    REQUIRE(yt.data()[i] == Catch::Approx(s.sigma(300) * y0.data()[i]).margin(1e-7));

  auto yn = forward_sample(zero, 300, eps, s);
  for (int i = 0; i < 16; ++i)
    REQUIRE(yn.data()[i] == Catch::Approx(s.lambda(300) * eps.data()[i]).margin(1e-7));

  // t = 0 is bit-identity
  auto y_same = forward_sample(y0, 0, eps, s);
  REQUIRE(std::equal(y0.data().begin(), y0.data().end(), y_same.data().begin()));

  REQUIRE_THROWS_AS(forward_sample(y0, 1001, eps, s), ContractError);
  REQUIRE_THROWS_AS(forward_sample(y0, 10, Tensor::zeros({2, 2}), s), ContractError);
}

TEST_CASE("forward marginals match Monte Carlo at t=500", "[schedule]") {
  const auto& s = paper_schedule();
  const int n = 100000;
  Rng r(500);
  const double sig = s.sigma(500);
  const double lam = s.lambda(500);
  double sum = 0, sq = 0;
  auto y0 = Tensor::scalar(1.0f);
  for (int i = 0; i < n; ++i) {
    auto eps = Tensor::randn({1}, r);
    double v = forward_sample(y0, 500, eps, s).item();
    sum += v;
    sq += v * v;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  const double se = lam / std::sqrt(static_cast<double>(n));
  REQUIRE(std::abs(mean - sig) < 3 * se);
  REQUIRE(std::abs(var - lam * lam) < 0.02 * lam * lam);
}

TEST_CASE("ancestral_step contracts", "[schedule]") {
  const auto& s = paper_schedule();
  Rng r(3);
  auto y0 = Tensor::randn({1, 4, 4}, r);
  auto zero = Tensor::zeros({1, 4, 4});

  REQUIRE_THROWS_AS(ancestral_step(y0, zero, 10, 10, s, zero), ContractError);
  REQUIRE_THROWS_AS(ancestral_step(y0, zero, 10, 12, s, zero), ContractError);

  // at t_prev = 0 the injected noise term is absent
  auto big = Tensor::filled({1, 4, 4}, 1e6f);
  auto a = ancestral_step(y0, zero, 1, 0, s, zero);
  auto b = ancestral_step(y0, zero, 1, 0, s, big);
  REQUIRE(std::equal(a.data().begin(), a.data().end(), b.data().begin()));

  // eps = 0 forward, eps_hat = 0: implied x0 equals y0
  auto yt = forward_sample(y0, 700, zero, s);
  const double lam = s.lambda(700), sig = s.sigma(700);
  for (int i = 0; i < 16; ++i) {
    const double x0 = (yt.data()[i] - lam * 0.0) / sig;
    REQUIRE(x0 == Catch::Approx(y0.data()[i]).margin(1e-5));
  }
}

TEST_CASE("oracle reverse passes reconstruct y0", "[schedule]") {
  const auto& s = paper_schedule();
  Rng r(77);
  auto y0 = Tensor::randn({1, 16, 16}, r);

  SECTION("deterministic full-resolution pass") {
    auto eps = Tensor::randn({1, 16, 16}, r);
    auto y = forward_sample(y0, 1000, eps, s);
    auto zero = Tensor::zeros({1, 16, 16});
    for (int64_t t = 1000; t >= 1; --t) {
      // oracle: exact noise implied by the true y0 at the current state
      auto eps_hat = scale(sub(y, scale(y0, static_cast<float>(s.sigma(t)))),
                           static_cast<float>(1.0 / s.lambda(t)));
      y = ancestral_step(y, eps_hat, t, t - 1, s, zero);
    }
    REQUIRE(mse(y, y0).item() < 1e-4);
  }

  SECTION("stochastic strided 50-step pass") {
    auto y = Tensor::randn({1, 16, 16}, r);
    auto steps = strided_steps(1000, 50);
    for (size_t k = 0; k < steps.size(); ++k) {
      const int64_t t = steps[k];
      const int64_t tp = k + 1 < steps.size() ? steps[k + 1] : 0;
      auto eps_hat = scale(sub(y, scale(y0, static_cast<float>(s.sigma(t)))),
                           static_cast<float>(1.0 / s.lambda(t)));
      auto noise = tp > 0 ? Tensor::randn({1, 16, 16}, r) : Tensor::zeros({1, 16, 16});
      y = ancestral_step(y, eps_hat, t, tp, s, noise);
    }
    REQUIRE(mse(y, y0).item() < 1e-2);
  }
}

TEST_CASE("strided schedules", "[schedule]") {
  auto s50 = strided_steps(1000, 50);
  REQUIRE(s50.size() == 50);
  REQUIRE(s50.front() == 1000);
  REQUIRE(s50.back() == 1);

  auto id = strided_steps(10, 10);
  for (int64_t i = 0; i < 10; ++i) REQUIRE(id[i] == 10 - i);

  REQUIRE(strided_steps(1000, 1) == std::vector<int64_t>{1000});
  REQUIRE_THROWS_AS(strided_steps(10, 11), ContractError);

  Rng r(4);
  for (int trial = 0; trial < 30; ++trial) {
    int64_t T = r.uniform_int(2, 2000);
    int64_t n = r.uniform_int(1, T);
    auto v = strided_steps(T, n);
    REQUIRE(static_cast<int64_t>(v.size()) == n);
    REQUIRE(v.front() == T);
    for (size_t i = 1; i < v.size(); ++i) REQUIRE(v[i] < v[i - 1]);
    REQUIRE(v.back() >= 1);
  }
}
