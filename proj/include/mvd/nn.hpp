#pragma once

#include <cmath>
#include <string>

#include "mvd/optim.hpp"
#include "mvd/rng.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

// Layers register their parameters into a ParamSet and keep shared handles,
// so optimizer updates are visible without re-wiring.

template <typename T>
BasicTensor<T> uniform_init(Shape shape, double bound, Rng& rng) {
  auto t = BasicTensor<T>::zeros(shape);
  auto d = t.mutable_data();
  for (auto& v : d) v = static_cast<T>((rng.uniform() * 2.0 - 1.0) * bound);
  return t;
}

template <typename T>
struct Conv2d {
  BasicTensor<T> w, b;
  int64_t stride = 1, pad = 1;

  static Conv2d make(ParamSet<T>& ps, const std::string& name, int64_t cin,
                     int64_t cout, int64_t k, int64_t stride, int64_t pad, Rng& rng,
                     bool zero_init = false) {
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    const double bound = zero_init ? 0.0 : 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    c.w = uniform_init<T>({cout, cin, k, k}, bound, rng);
    c.b = uniform_init<T>({cout}, bound, rng);
    ps.add(name + ".w", c.w);
    ps.add(name + ".b", c.b);
    return c;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return conv2d(x, w, b, stride, pad);
  }
};

template <typename T>
struct Linear {
  BasicTensor<T> w, b;

  static Linear make(ParamSet<T>& ps, const std::string& name, int64_t din,
                     int64_t dout, Rng& rng, bool zero_bias = false) {
    Linear l;
    const double bound = 1.0 / std::sqrt(static_cast<double>(din));
    l.w = uniform_init<T>({dout, din}, bound, rng);
    l.b = zero_bias ? BasicTensor<T>::zeros({dout}) : uniform_init<T>({dout}, bound, rng);
    ps.add(name + ".w", l.w);
    ps.add(name + ".b", l.b);
    return l;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const { return linear(x, w, b); }
};

// Residual block with scale-shift conditioning from an embedding vector.
template <typename T>
struct ResBlock {
  Conv2d<T> c1, c2;
  Linear<T> proj;  // emb -> (scale, shift)
  int64_t channels = 0;

  static ResBlock make(ParamSet<T>& ps, const std::string& name, int64_t c,
                       int64_t emb_dim, Rng& rng) {
    ResBlock r;
    r.channels = c;
    r.c1 = Conv2d<T>::make(ps, name + ".c1", c, c, 3, 1, 1, rng);
    r.c2 = Conv2d<T>::make(ps, name + ".c2", c, c, 3, 1, 1, rng);
    r.proj = Linear<T>::make(ps, name + ".proj", emb_dim, 2 * c, rng);
    return r;
  }

  BasicTensor<T> operator()(const BasicTensor<T>& x, const BasicTensor<T>& emb) const {
    auto h = c1(silu(x));
    auto sb = proj(silu(emb));
    auto s = slice_cols(sb, 0, channels);
    auto b2 = slice_cols(sb, channels, 2 * channels);
    h = channel_affine(h, s, b2);
    h = c2(silu(h));
    return add(x, h);
  }
};

// Sinusoidal position embedding of an integer index.
template <typename T>
void write_sinusoid(std::span<T> out, double pos) {
  const int64_t dim = static_cast<int64_t>(out.size());
  const int64_t half = dim / 2;
  for (int64_t i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                 static_cast<double>(half));
    out[i] = static_cast<T>(std::sin(pos * freq));
    out[half + i] = static_cast<T>(std::cos(pos * freq));
  }
  if (dim % 2 == 1) out[dim - 1] = T(0);
}

}  // namespace mvd
