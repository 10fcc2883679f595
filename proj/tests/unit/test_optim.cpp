#include <catch2/catch_amalgamated.hpp>

#include "mvd/optim.hpp"
#include "mvd/rng.hpp"

using namespace mvd;

TEST_CASE("adamw leaves parameters unchanged for zero gradient", "[optim]") {
  ParamSet<float> ps;
  ps.add("w", Tensor::from_data({3}, {1.f, -2.f, 0.5f}));
  AdamWConfig cfg;
  cfg.weight_decay = 0.0;
  AdamW<float> opt(cfg);
  // populate zero grads
  sum_all(scale(ps.at(0), 0.0f)).backward();
  auto before = std::vector<float>(ps.at(0).data().begin(), ps.at(0).data().end());
  opt.step(ps);
  for (size_t i = 0; i < before.size(); ++i) REQUIRE(ps.at(0).data()[i] == before[i]);
  REQUIRE(opt.step_count() == 1);
}

TEST_CASE("default learning rate is 1e-5", "[optim]") {
  AdamWConfig cfg;
  REQUIRE(cfg.lr == 1e-5);
  REQUIRE(cfg.beta1 == 0.9);
  REQUIRE(cfg.beta2 == 0.999);
}

TEST_CASE("one adamw step on w^2 decreases it", "[optim]") {
  ParamSet<float> ps;
  ps.add("w", Tensor::scalar(1.0f));
  AdamWConfig cfg;
  cfg.lr = 1e-2;
  cfg.weight_decay = 0.0;
  AdamW<float> opt(cfg);
  auto loss0 = mul(ps.at(0), ps.at(0));
  loss0.backward();
  opt.step(ps);
  float w = ps.at(0).data()[0];
  REQUIRE(w * w < 1.0f);
}

TEST_CASE("adamw rejects mismatched state", "[optim]") {
  ParamSet<float> ps;
  ps.add("w", Tensor::scalar(1.0f));
  AdamW<float> opt;
  sum_all(ps.at(0)).backward();
  opt.step(ps);
  ps.add("extra", Tensor::scalar(2.0f));
  REQUIRE_THROWS_AS(opt.step(ps), ContractError);
}

TEST_CASE("ema boundary decays and arithmetic", "[optim]") {
  ParamSet<float> ema, cur;
  ema.add("w", Tensor::scalar(1.0f));
  cur.add("w", Tensor::scalar(0.0f));

  SECTION("decay 0 copies current params") {
    ema_update(ema, cur, 0.0);
    REQUIRE(ema.at(0).data()[0] == 0.0f);
  }
  SECTION("decay 1 keeps ema unchanged") {
    ema_update(ema, cur, 1.0);
    REQUIRE(ema.at(0).data()[0] == 1.0f);
  }
  SECTION("paper decay value") {
    ema_update(ema, cur, 0.9999);
    REQUIRE(ema.at(0).data()[0] == Catch::Approx(0.9999).margin(1e-7));
  }
  SECTION("decay outside [0,1] is rejected") {
    REQUIRE_THROWS_AS(ema_update(ema, cur, 1.5), ContractError);
    REQUIRE_THROWS_AS(ema_update(ema, cur, -0.1), ContractError);
  }
}

TEST_CASE("ema converges to frozen weights", "[optim]") {
  ParamSet<float> ema, cur;
  ema.add("w", Tensor::scalar(5.0f));
  cur.add("w", Tensor::scalar(2.0f));
  for (int i = 0; i < 20000; ++i) ema_update(ema, cur, 0.999);
  REQUIRE(ema.at(0).data()[0] == Catch::Approx(2.0).margin(5e-4));
}
