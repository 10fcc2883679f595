#pragma once

#include "mvd/common.hpp"
#include "mvd/schedule.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

template <typename T>
struct NoisePair {
  BasicTensor<T> static_part;
  BasicTensor<T> dynamic_part;
};

// Exact decomposition of eps into static and dynamic components:
//   static  = (y_ref - sigma_t*y0)/lambda_t
//   dynamic = (sigma_t*y0 - y_ref + lambda_t*eps)/lambda_t
// static + dynamic == eps identically.  Used as a test oracle; the
// training path uses approx_static below.
template <typename T>
NoisePair<T> exact_decompose(const BasicTensor<T>& y0, const BasicTensor<T>& y_ref,
                             const BasicTensor<T>& eps, int64_t t,
                             const NoiseSchedule& s) {
  check(y0.shape() == y_ref.shape() && y0.shape() == eps.shape(),
        "exact_decompose: shape mismatch");
  check(t >= 1 && t <= s.steps(), "exact_decompose: t out of range");
  const T sig = static_cast<T>(s.sigma(t));
  const T lam = static_cast<T>(s.lambda(t));
  check(lam > T(0), "exact_decompose: lambda_t = 0 at t = " + std::to_string(t));
  auto sig_y0 = scale(y0, sig);
  auto residual = sub(y_ref, sig_y0);  // y_ref - sigma*y0
  NoisePair<T> out;
  out.static_part = scale(residual, T(1) / lam);
  // (sigma*y0 - y_ref + lambda*eps)/lambda == eps - static; the subtraction
  // form keeps the cancellation exact in floating point.
  out.dynamic_part = sub(eps, out.static_part);
  return out;
}

// The implementation short-cut: eps_static ~= y_ref - y_t.
template <typename T>
BasicTensor<T> approx_static(const BasicTensor<T>& y_ref, const BasicTensor<T>& y_t) {
  check(y_ref.shape() == y_t.shape(), "approx_static: shape mismatch");
  return sub(y_ref, y_t);
}

enum class StaticForm {
  kPaper,             // y_ref - y_t
  kLambdaNormalized,  // (y_ref - y_t)/lambda_t, for study only
};

template <typename T>
BasicTensor<T> static_channel(const BasicTensor<T>& y_ref, const BasicTensor<T>& y_t,
                              int64_t t, const NoiseSchedule& s, StaticForm form) {
  auto d = approx_static(y_ref, y_t);
  if (form == StaticForm::kLambdaNormalized) {
    const T lam = static_cast<T>(s.lambda(t));
    check(lam > T(0), "static_channel: lambda_t = 0");
    return scale(d, T(1) / lam);
  }
  return d;
}

// eps_hat = m*static + (1-m)*dynamic; m is {N,1,H,W} in [0,1], broadcast
// over channels.
template <typename T>
BasicTensor<T> blend(const BasicTensor<T>& m, const BasicTensor<T>& static_part,
                     const BasicTensor<T>& dynamic_part) {
  check(static_part.shape() == dynamic_part.shape(), "blend: shape mismatch");
  for (T v : m.data())
    check(v >= T(0) && v <= T(1), "blend: mask value outside [0,1]");
  return add(mul_channel_broadcast(m, static_part),
             mul_channel_broadcast(affine(m, T(-1), T(1)), dynamic_part));
}

// Eq.-style training objective: mean squared error over all elements.
template <typename T>
BasicTensor<T> diffusion_loss(const BasicTensor<T>& eps_hat, const BasicTensor<T>& eps) {
  return mse(eps_hat, eps);
}

}  // namespace mvd
