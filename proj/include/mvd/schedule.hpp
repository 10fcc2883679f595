#pragma once

#include <cmath>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

// Linear-beta DDPM schedule.  Index convention: t runs 1..T for noisy
// steps; t = 0 means clean data (alpha_bar_0 = 1), so augmentation level 0
// is exactly the identity.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule linear(int64_t T, double beta_start, double beta_end) {
    check(T >= 1, "schedule: T must be >= 1");
    check(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0,
          "schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T_ = T;
    s.beta_.resize(T);
    s.alpha_.resize(T);
    s.alpha_bar_.resize(T);
    s.sigma_.resize(T);
    s.lambda_.resize(T);
    double cum = 1.0;
    for (int64_t i = 0; i < T; ++i) {
      const double frac = T == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(T - 1);
      s.beta_[i] = beta_start + (beta_end - beta_start) * frac;
      s.alpha_[i] = 1.0 - s.beta_[i];
      cum *= s.alpha_[i];
      s.alpha_bar_[i] = cum;
      s.sigma_[i] = std::sqrt(cum);
      s.lambda_[i] = std::sqrt(1.0 - cum);
    }
    return s;
  }

  int64_t steps() const { return T_; }

  // Accessors take 1-based t; t = 0 returns the clean-data convention.
  double beta(int64_t t) const { return at(beta_, t, 0.0); }
  double alpha(int64_t t) const { return at(alpha_, t, 1.0); }
  double alpha_bar(int64_t t) const { return at(alpha_bar_, t, 1.0); }
  double sigma(int64_t t) const { return at(sigma_, t, 1.0); }
  double lambda(int64_t t) const { return at(lambda_, t, 0.0); }

 private:
  double at(const std::vector<double>& v, int64_t t, double at_zero) const {
    check(t >= 0 && t <= T_, "schedule: step index out of range");
    return t == 0 ? at_zero : v[t - 1];
  }

  int64_t T_ = 0;
  std::vector<double> beta_, alpha_, alpha_bar_, sigma_, lambda_;
};

// y_t = sigma_t*y0 + lambda_t*eps
template <typename T>
BasicTensor<T> forward_sample(const BasicTensor<T>& y0, int64_t t,
                              const BasicTensor<T>& eps, const NoiseSchedule& s) {
  check(y0.shape() == eps.shape(), "forward_sample: shape mismatch");
  check(t >= 0 && t <= s.steps(), "forward_sample: t out of range");
  if (t == 0) return y0.detach();  // alpha_bar_0 = 1 convention, bit-identical
  return add(scale(y0, static_cast<T>(s.sigma(t))),
             scale(eps, static_cast<T>(s.lambda(t))));
}

// One ancestral step t -> t_prev with the beta-tilde posterior variance.
// eps_hat is the model's noise prediction; `noise` supplies the injected
// gaussian (pass zeros for the deterministic variant).  No noise is added
// when t_prev == 0.
template <typename T>
BasicTensor<T> ancestral_step(const BasicTensor<T>& y_t, const BasicTensor<T>& eps_hat,
                              int64_t t, int64_t t_prev, const NoiseSchedule& s,
                              const BasicTensor<T>& noise) {
  check(y_t.shape() == eps_hat.shape() && y_t.shape() == noise.shape(),
        "ancestral_step: shape mismatch");
  check(t_prev < t, "ancestral_step: t_prev must be < t");
  check(t >= 1 && t <= s.steps() && t_prev >= 0, "ancestral_step: step out of range");
  const double ab_t = s.alpha_bar(t);
  const double ab_p = s.alpha_bar(t_prev);
  const double sig_t = s.sigma(t);
  const double lam_t = s.lambda(t);
  const double beta_eff = 1.0 - ab_t / ab_p;
  const double coef_x0 = std::sqrt(ab_p) * beta_eff / (1.0 - ab_t);
  const double coef_yt = std::sqrt(ab_t / ab_p) * (1.0 - ab_p) / (1.0 - ab_t);
  const double var = beta_eff * (1.0 - ab_p) / (1.0 - ab_t);

  // x0_hat = (y_t - lambda_t*eps_hat)/sigma_t
  auto x0_hat = scale(sub(y_t, scale(eps_hat, static_cast<T>(lam_t))),
                      static_cast<T>(1.0 / sig_t));
  auto mean = add(scale(x0_hat, static_cast<T>(coef_x0)),
                  scale(y_t, static_cast<T>(coef_yt)));
  if (t_prev == 0) return mean;
  return add(mean, scale(noise, static_cast<T>(std::sqrt(var))));
}

// n evenly spaced step indices, first = T, strictly decreasing; the final
// executed transition goes to 0.
inline std::vector<int64_t> strided_steps(int64_t T, int64_t n) {
  check(n >= 1 && n <= T, "strided_steps: need 1 <= n <= T");
  std::vector<int64_t> out;
  out.reserve(n);
  if (n == 1) return {T};
  for (int64_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(T) -
                     static_cast<double>(i) * static_cast<double>(T - 1) /
                         static_cast<double>(n - 1);
    int64_t t = static_cast<int64_t>(std::llround(x));
    if (t < 1) t = 1;
    if (!out.empty() && t >= out.back()) t = out.back() - 1;
    check(t >= 1, "strided_steps: schedule collapsed");
    out.push_back(t);
  }
  return out;
}

}  // namespace mvd
