#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <unordered_set>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/rng.hpp"

namespace mvd {

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated on demand
  bool tracked = false; // participates in the gradient tape
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  void ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
  }
};

inline thread_local bool g_grad_enabled = true;

}  // namespace detail

inline bool grad_enabled() { return detail::g_grad_enabled; }

// Disables tape recording for the current thread (inference paths).
struct NoGradGuard {
  NoGradGuard() : prev_(detail::g_grad_enabled) { detail::g_grad_enabled = false; }
  ~NoGradGuard() { detail::g_grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Dense n-d array of T with reverse-mode autodiff.  Values are immutable
// after construction except through mutable_data(), which the optimizer and
// EMA tracker use between training steps.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  BasicTensor() = default;

  static BasicTensor zeros(Shape shape) {
    return filled(std::move(shape), T(0));
  }

  static BasicTensor filled(Shape shape, T v) {
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->data.assign(static_cast<size_t>(mvd::numel(n->shape)), v);
    return BasicTensor(std::move(n));
  }

  static BasicTensor from_data(Shape shape, std::vector<T> values) {
    check(static_cast<int64_t>(values.size()) == mvd::numel(shape),
          "from_data: size does not match shape " + shape_str(shape));
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    return BasicTensor(std::move(n));
  }

  static BasicTensor scalar(T v) { return filled({1}, v); }

  static BasicTensor randn(Shape shape, Rng& rng) {
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = std::move(shape);
    n->data.resize(static_cast<size_t>(mvd::numel(n->shape)));
    for (auto& v : n->data) v = static_cast<T>(rng.normal());
    return BasicTensor(std::move(n));
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int64_t numel() const { return static_cast<int64_t>(node_->data.size()); }
  std::span<const T> data() const { return node_->data; }
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    check(numel() == 1, "item: tensor is not scalar, shape " + shape_str(shape()));
    return node_->data[0];
  }

  // Leaf parameter marking.
  BasicTensor& set_requires_grad(bool on = true) {
    node_->tracked = on;
    return *this;
  }
  bool requires_grad() const { return node_ && node_->tracked; }

  bool has_grad() const { return node_ && !node_->grad.empty(); }
  std::span<const T> grad() const {
    check(has_grad(), "grad: no gradient populated");
    return node_->grad;
  }
  void clear_grad() { node_->grad.clear(); }

  // Value copy detached from the tape.
  BasicTensor detach() const {
    auto n = std::make_shared<detail::Node<T>>();
    n->shape = node_->shape;
    n->data = node_->data;
    return BasicTensor(std::move(n));
  }

  bool all_finite() const {
    for (T v : node_->data)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  // Reverse pass from a scalar value; populates grads on every tracked
  // tensor reachable through the tape.
  void backward() const {
    check(numel() == 1, "backward: loss must be scalar, shape " + shape_str(shape()));
    check(node_->tracked, "backward: value does not require grad");
    std::vector<detail::Node<T>*> order;
    topo_sort(node_.get(), order);
    node_->ensure_grad();
    node_->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      detail::Node<T>* n = *it;
      if (n->backward && !n->grad.empty()) n->backward(*n);
    }
  }

  NodePtr node() const { return node_; }
  explicit BasicTensor(NodePtr n) : node_(std::move(n)) {}

 private:
  static void topo_sort(detail::Node<T>* root, std::vector<detail::Node<T>*>& order) {
    std::unordered_set<detail::Node<T>*> seen;
    std::vector<std::pair<detail::Node<T>*, size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
      auto& [n, i] = stack.back();
      if (i < n->parents.size()) {
        detail::Node<T>* p = n->parents[i++].get();
        if (p->tracked && !seen.count(p)) {
          seen.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  NodePtr node_;
};

using Tensor = BasicTensor<float>;

namespace detail {

template <typename T>
std::shared_ptr<Node<T>> make_result(Shape shape,
                                     std::vector<std::shared_ptr<Node<T>>> parents) {
  auto n = std::make_shared<Node<T>>();
  n->shape = std::move(shape);
  n->data.resize(static_cast<size_t>(mvd::numel(n->shape)));
  if (g_grad_enabled) {
    for (const auto& p : parents)
      if (p->tracked) {
        n->tracked = true;
        break;
      }
    if (n->tracked) n->parents = std::move(parents);
  }
  return n;
}

template <typename T>
void accumulate(Node<T>& dst, const T* src, size_t n) {
  dst.ensure_grad();
  T* g = dst.grad.data();
  for (size_t i = 0; i < n; ++i) g[i] += src[i];
}

}  // namespace detail

// ---- elementwise ----

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check(a.shape() == b.shape(), "add: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  const size_t len = n->data.size();
  for (size_t i = 0; i < len; ++i) out[i] = pa[i] + pb[i];
  if (n->tracked) {
    auto na = a.node(), nb = b.node();
    n->backward = [na, nb](const detail::Node<T>& self) {
      if (na->tracked) detail::accumulate(*na, self.grad.data(), self.grad.size());
      if (nb->tracked) detail::accumulate(*nb, self.grad.data(), self.grad.size());
    };
  }
  return BasicTensor<T>(std::move(n));
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check(a.shape() == b.shape(), "sub: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  const size_t len = n->data.size();
  for (size_t i = 0; i < len; ++i) out[i] = pa[i] - pb[i];
  if (n->tracked) {
    auto na = a.node(), nb = b.node();
    n->backward = [na, nb](const detail::Node<T>& self) {
      if (na->tracked) detail::accumulate(*na, self.grad.data(), self.grad.size());
      if (nb->tracked) {
        nb->ensure_grad();
        T* g = nb->grad.data();
        const T* s = self.grad.data();
        for (size_t i = 0; i < self.grad.size(); ++i) g[i] -= s[i];
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check(a.shape() == b.shape(), "mul: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  auto n = detail::make_result<T>(a.shape(), {a.node(), b.node()});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  const size_t len = n->data.size();
  for (size_t i = 0; i < len; ++i) out[i] = pa[i] * pb[i];
  if (n->tracked) {
    auto na = a.node(), nb = b.node();
    n->backward = [na, nb](const detail::Node<T>& self) {
      const T* s = self.grad.data();
      const size_t len2 = self.grad.size();
      if (na->tracked) {
        na->ensure_grad();
        T* g = na->grad.data();
        const T* vb = nb->data.data();
        for (size_t i = 0; i < len2; ++i) g[i] += s[i] * vb[i];
      }
      if (nb->tracked) {
        nb->ensure_grad();
        T* g = nb->grad.data();
        const T* va = na->data.data();
        for (size_t i = 0; i < len2; ++i) g[i] += s[i] * va[i];
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// out = a*x + b elementwise with scalar a, b.
template <typename T>
BasicTensor<T> affine(const BasicTensor<T>& x, T a, T b) {
  auto n = detail::make_result<T>(x.shape(), {x.node()});
  const T* px = x.data().data();
  T* out = n->data.data();
  const size_t len = n->data.size();
  for (size_t i = 0; i < len; ++i) out[i] = a * px[i] + b;
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx, a](const detail::Node<T>& self) {
      nx->ensure_grad();
      T* g = nx->grad.data();
      const T* s = self.grad.data();
      for (size_t i = 0; i < self.grad.size(); ++i) g[i] += a * s[i];
    };
  }
  return BasicTensor<T>(std::move(n));
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T a) {
  return affine(x, a, T(0));
}

template <typename T>
BasicTensor<T> silu(const BasicTensor<T>& x) {
  auto n = detail::make_result<T>(x.shape(), {x.node()});
  const T* px = x.data().data();
  T* out = n->data.data();
  const size_t len = n->data.size();
  for (size_t i = 0; i < len; ++i) {
    T s = T(1) / (T(1) + std::exp(-px[i]));
    out[i] = px[i] * s;
  }
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx](const detail::Node<T>& self) {
      nx->ensure_grad();
      T* g = nx->grad.data();
      const T* s = self.grad.data();
      const T* px = nx->data.data();
      for (size_t i = 0; i < self.grad.size(); ++i) {
        T sg = T(1) / (T(1) + std::exp(-px[i]));
        g[i] += s[i] * sg * (T(1) + px[i] * (T(1) - sg));
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x) {
  auto n = detail::make_result<T>(x.shape(), {x.node()});
  const T* px = x.data().data();
  T* out = n->data.data();
  const size_t len = n->data.size();
  for (size_t i = 0; i < len; ++i) out[i] = T(1) / (T(1) + std::exp(-px[i]));
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx](const detail::Node<T>& self) {
      nx->ensure_grad();
      T* g = nx->grad.data();
      const T* s = self.grad.data();
      const T* y = self.data.data();
      for (size_t i = 0; i < self.grad.size(); ++i)
        g[i] += s[i] * y[i] * (T(1) - y[i]);
    };
  }
  return BasicTensor<T>(std::move(n));
}

// ---- reductions ----

template <typename T>
BasicTensor<T> sum_all(const BasicTensor<T>& x) {
  auto n = detail::make_result<T>({1}, {x.node()});
  double acc = 0;
  for (T v : x.data()) acc += static_cast<double>(v);
  n->data[0] = static_cast<T>(acc);
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx](const detail::Node<T>& self) {
      nx->ensure_grad();
      T g = self.grad[0];
      for (auto& v : nx->grad) v += g;
    };
  }
  return BasicTensor<T>(std::move(n));
}

template <typename T>
BasicTensor<T> mean_all(const BasicTensor<T>& x) {
  auto n = detail::make_result<T>({1}, {x.node()});
  double acc = 0;
  for (T v : x.data()) acc += static_cast<double>(v);
  n->data[0] = static_cast<T>(acc / static_cast<double>(x.numel()));
  if (n->tracked) {
    auto nx = x.node();
    T inv = T(1) / static_cast<T>(x.numel());
    n->backward = [nx, inv](const detail::Node<T>& self) {
      nx->ensure_grad();
      T g = self.grad[0] * inv;
      for (auto& v : nx->grad) v += g;
    };
  }
  return BasicTensor<T>(std::move(n));
}

// ---- shape ops ----

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape) {
  check(mvd::numel(shape) == x.numel(), "reshape: element count mismatch");
  auto n = detail::make_result<T>(std::move(shape), {x.node()});
  std::copy(x.data().begin(), x.data().end(), n->data.begin());
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx](const detail::Node<T>& self) {
      detail::accumulate(*nx, self.grad.data(), self.grad.size());
    };
  }
  return BasicTensor<T>(std::move(n));
}

// Concatenate along dim 1 of NCHW tensors.
template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check(a.shape().size() == 4 && b.shape().size() == 4, "concat_channels: need NCHW");
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  check(sa[0] == sb[0] && sa[2] == sb[2] && sa[3] == sb[3],
        "concat_channels: incompatible shapes");
  const int64_t N = sa[0], Ca = sa[1], Cb = sb[1], H = sa[2], W = sa[3];
  auto n = detail::make_result<T>({N, Ca + Cb, H, W}, {a.node(), b.node()});
  const int64_t hw = H * W;
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N; ++i) {
    std::memcpy(out + i * (Ca + Cb) * hw, pa + i * Ca * hw, sizeof(T) * Ca * hw);
    std::memcpy(out + i * (Ca + Cb) * hw + Ca * hw, pb + i * Cb * hw, sizeof(T) * Cb * hw);
  }
  if (n->tracked) {
    auto na = a.node(), nb = b.node();
    n->backward = [na, nb, N, Ca, Cb, hw](const detail::Node<T>& self) {
      const T* s = self.grad.data();
      for (int64_t i = 0; i < N; ++i) {
        if (na->tracked) {
          na->ensure_grad();
          T* g = na->grad.data() + i * Ca * hw;
          const T* src = s + i * (Ca + Cb) * hw;
          for (int64_t k = 0; k < Ca * hw; ++k) g[k] += src[k];
        }
        if (nb->tracked) {
          nb->ensure_grad();
          T* g = nb->grad.data() + i * Cb * hw;
          const T* src = s + i * (Ca + Cb) * hw + Ca * hw;
          for (int64_t k = 0; k < Cb * hw; ++k) g[k] += src[k];
        }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// Channels [from, to) of an NCHW tensor.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& x, int64_t from, int64_t to) {
  check(x.shape().size() == 4, "slice_channels: need NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  check(0 <= from && from < to && to <= C, "slice_channels: bad range");
  auto n = detail::make_result<T>({N, to - from, x.shape()[2], x.shape()[3]}, {x.node()});
  const int64_t c = to - from;
  const T* px = x.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N; ++i)
    std::memcpy(out + i * c * hw, px + (i * C + from) * hw, sizeof(T) * c * hw);
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx, N, C, hw, from, c](const detail::Node<T>& self) {
      nx->ensure_grad();
      const T* s = self.grad.data();
      for (int64_t i = 0; i < N; ++i) {
        T* g = nx->grad.data() + (i * C + from) * hw;
        for (int64_t k = 0; k < c * hw; ++k) g[k] += s[i * c * hw + k];
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// Columns [from, to) of a {N, D} tensor.
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& x, int64_t from, int64_t to) {
  check(x.shape().size() == 2, "slice_cols: need 2-d tensor");
  const int64_t N = x.shape()[0], D = x.shape()[1];
  check(0 <= from && from < to && to <= D, "slice_cols: bad range");
  auto n = detail::make_result<T>({N, to - from}, {x.node()});
  const int64_t c = to - from;
  const T* px = x.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N; ++i)
    std::memcpy(out + i * c, px + i * D + from, sizeof(T) * c);
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx, N, D, from, c](const detail::Node<T>& self) {
      nx->ensure_grad();
      const T* s = self.grad.data();
      for (int64_t i = 0; i < N; ++i) {
        T* g = nx->grad.data() + i * D + from;
        for (int64_t k = 0; k < c; ++k) g[k] += s[i * c + k];
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// ---- broadcasting helpers used by the denoiser ----

// h {N,C,H,W} * (1 + s {N,C}) + b {N,C}
template <typename T>
BasicTensor<T> channel_affine(const BasicTensor<T>& h, const BasicTensor<T>& s,
                              const BasicTensor<T>& b) {
  check(h.shape().size() == 4 && s.shape().size() == 2 && b.shape().size() == 2,
        "channel_affine: bad ranks");
  const int64_t N = h.shape()[0], C = h.shape()[1], hw = h.shape()[2] * h.shape()[3];
  check(s.shape()[0] == N && s.shape()[1] == C && b.shape() == s.shape(),
        "channel_affine: shape mismatch");
  auto n = detail::make_result<T>(h.shape(), {h.node(), s.node(), b.node()});
  const T* ph = h.data().data();
  const T* ps = s.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N * C; ++i) {
    const T a = T(1) + ps[i];
    const T off = pb[i];
    const T* src = ph + i * hw;
    T* dst = out + i * hw;
    for (int64_t k = 0; k < hw; ++k) dst[k] = a * src[k] + off;
  }
  if (n->tracked) {
    auto nh = h.node();
    auto ns = s.node();
    auto nb = b.node();
    n->backward = [nh, ns, nb, N, C, hw](const detail::Node<T>& self) {
      const T* g = self.grad.data();
      for (int64_t i = 0; i < N * C; ++i) {
        const T* gi = g + i * hw;
        if (nh->tracked) {
          nh->ensure_grad();
          const T a = T(1) + ns->data[i];
          T* gh = nh->grad.data() + i * hw;
          for (int64_t k = 0; k < hw; ++k) gh[k] += a * gi[k];
        }
        if (ns->tracked) {
          ns->ensure_grad();
          const T* vh = nh->data.data() + i * hw;
          T acc = T(0);
          for (int64_t k = 0; k < hw; ++k) acc += gi[k] * vh[k];
          ns->grad[i] += acc;
        }
        if (nb->tracked) {
          nb->ensure_grad();
          T acc = T(0);
          for (int64_t k = 0; k < hw; ++k) acc += gi[k];
          nb->grad[i] += acc;
        }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// m {N,1,H,W} * x {N,C,H,W}, broadcasting m over channels.
template <typename T>
BasicTensor<T> mul_channel_broadcast(const BasicTensor<T>& m, const BasicTensor<T>& x) {
  check(m.shape().size() == 4 && x.shape().size() == 4, "mul_channel_broadcast: need NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
  check(m.shape()[0] == N && m.shape()[1] == 1 && m.shape()[2] == x.shape()[2] &&
            m.shape()[3] == x.shape()[3],
        "mul_channel_broadcast: mask must be {N,1,H,W} matching x");
  auto n = detail::make_result<T>(x.shape(), {m.node(), x.node()});
  const T* pm = m.data().data();
  const T* px = x.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N; ++i) {
    const T* mi = pm + i * hw;
    for (int64_t c = 0; c < C; ++c) {
      const T* xi = px + (i * C + c) * hw;
      T* oi = out + (i * C + c) * hw;
      for (int64_t k = 0; k < hw; ++k) oi[k] = mi[k] * xi[k];
    }
  }
  if (n->tracked) {
    auto nm = m.node();
    auto nx = x.node();
    n->backward = [nm, nx, N, C, hw](const detail::Node<T>& self) {
      const T* g = self.grad.data();
      for (int64_t i = 0; i < N; ++i) {
        if (nm->tracked) {
          nm->ensure_grad();
          T* gm = nm->grad.data() + i * hw;
          for (int64_t c = 0; c < C; ++c) {
            const T* xi = nx->data.data() + (i * C + c) * hw;
            const T* gi = g + (i * C + c) * hw;
            for (int64_t k = 0; k < hw; ++k) gm[k] += gi[k] * xi[k];
          }
        }
        if (nx->tracked) {
          nx->ensure_grad();
          const T* mi = nm->data.data() + i * hw;
          for (int64_t c = 0; c < C; ++c) {
            T* gx = nx->grad.data() + (i * C + c) * hw;
            const T* gi = g + (i * C + c) * hw;
            for (int64_t k = 0; k < hw; ++k) gx[k] += gi[k] * mi[k];
          }
        }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// ---- spatial ops ----

template <typename T>
BasicTensor<T> upsample_nearest2(const BasicTensor<T>& x) {
  check(x.shape().size() == 4, "upsample_nearest2: need NCHW");
  const int64_t N = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  auto n = detail::make_result<T>({N, C, 2 * H, 2 * W}, {x.node()});
  const T* px = x.data().data();
  T* out = n->data.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const T* src = px + nc * H * W;
    T* dst = out + nc * 4 * H * W;
    for (int64_t y = 0; y < H; ++y)
      for (int64_t xx = 0; xx < W; ++xx) {
        T v = src[y * W + xx];
        T* d = dst + (2 * y) * 2 * W + 2 * xx;
        d[0] = v;
        d[1] = v;
        d[2 * W] = v;
        d[2 * W + 1] = v;
      }
  }
  if (n->tracked) {
    auto nx = x.node();
    n->backward = [nx, N, C, H, W](const detail::Node<T>& self) {
      nx->ensure_grad();
      const T* g = self.grad.data();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        T* gx = nx->grad.data() + nc * H * W;
        const T* gs = g + nc * 4 * H * W;
        for (int64_t y = 0; y < H; ++y)
          for (int64_t xx = 0; xx < W; ++xx) {
            const T* d = gs + (2 * y) * 2 * W + 2 * xx;
            gx[y * W + xx] += d[0] + d[1] + d[2 * W] + d[2 * W + 1];
          }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// x {N,Cin,H,W} (*) w {Cout,Cin,K,K} + b {Cout}; zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b, int64_t stride, int64_t pad) {
  check(x.shape().size() == 4 && w.shape().size() == 4, "conv2d: need NCHW input and OIKK weight");
  const int64_t N = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
  const int64_t Co = w.shape()[0], K = w.shape()[2];
  check(w.shape()[1] == Ci && w.shape()[3] == K, "conv2d: weight shape mismatch");
  check(b.shape().size() == 1 && b.shape()[0] == Co, "conv2d: bias shape mismatch");
  const int64_t Ho = (H + 2 * pad - K) / stride + 1;
  const int64_t Wo = (W + 2 * pad - K) / stride + 1;
  check(Ho >= 1 && Wo >= 1, "conv2d: empty output");
  auto n = detail::make_result<T>({N, Co, Ho, Wo}, {x.node(), w.node(), b.node()});
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  for (int64_t in = 0; in < N; ++in) {
    for (int64_t co = 0; co < Co; ++co) {
      T* o = out + (in * Co + co) * Ho * Wo;
      const T bias = pb[co];
      for (int64_t k = 0; k < Ho * Wo; ++k) o[k] = bias;
      for (int64_t ci = 0; ci < Ci; ++ci) {
        const T* xc = px + (in * Ci + ci) * H * W;
        const T* wc = pw + (co * Ci + ci) * K * K;
        for (int64_t kh = 0; kh < K; ++kh) {
          for (int64_t kw = 0; kw < K; ++kw) {
            const T wv = wc[kh * K + kw];
            for (int64_t oh = 0; oh < Ho; ++oh) {
              const int64_t ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= H) continue;
              const T* xr = xc + ih * W;
              T* orow = o + oh * Wo;
              for (int64_t ow = 0; ow < Wo; ++ow) {
                const int64_t iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= W) continue;
                orow[ow] += wv * xr[iw];
              }
            }
          }
        }
      }
    }
  }
  if (n->tracked) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = b.node();
    n->backward = [nx, nw, nb, N, Ci, H, W, Co, K, Ho, Wo, stride,
                   pad](const detail::Node<T>& self) {
      const T* g = self.grad.data();
      if (nb->tracked) {
        nb->ensure_grad();
        for (int64_t in = 0; in < N; ++in)
          for (int64_t co = 0; co < Co; ++co) {
            const T* gi = g + (in * Co + co) * Ho * Wo;
            T acc = T(0);
            for (int64_t k = 0; k < Ho * Wo; ++k) acc += gi[k];
            nb->grad[co] += acc;
          }
      }
      if (nx->tracked) nx->ensure_grad();
      if (nw->tracked) nw->ensure_grad();
      for (int64_t in = 0; in < N; ++in) {
        for (int64_t co = 0; co < Co; ++co) {
          const T* gi = g + (in * Co + co) * Ho * Wo;
          for (int64_t ci = 0; ci < Ci; ++ci) {
            const T* xc = nx->data.data() + (in * Ci + ci) * H * W;
            const T* wc = nw->data.data() + (co * Ci + ci) * K * K;
            T* gxc = nx->tracked ? nx->grad.data() + (in * Ci + ci) * H * W : nullptr;
            T* gwc = nw->tracked ? nw->grad.data() + (co * Ci + ci) * K * K : nullptr;
            for (int64_t kh = 0; kh < K; ++kh) {
              for (int64_t kw = 0; kw < K; ++kw) {
                const T wv = wc[kh * K + kw];
                T wacc = T(0);
                for (int64_t oh = 0; oh < Ho; ++oh) {
                  const int64_t ih = oh * stride - pad + kh;
                  if (ih < 0 || ih >= H) continue;
                  const T* xr = xc + ih * W;
                  const T* gr = gi + oh * Wo;
                  T* gxr = gxc ? gxc + ih * W : nullptr;
                  for (int64_t ow = 0; ow < Wo; ++ow) {
                    const int64_t iw = ow * stride - pad + kw;
                    if (iw < 0 || iw >= W) continue;
                    if (gxr) gxr[iw] += wv * gr[ow];
                    if (gwc) wacc += xr[iw] * gr[ow];
                  }
                }
                if (gwc) gwc[kh * K + kw] += wacc;
              }
            }
          }
        }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// x {N,Din} * w {Dout,Din}^T + b {Dout}
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& w,
                      const BasicTensor<T>& b) {
  check(x.shape().size() == 2 && w.shape().size() == 2, "linear: need 2-d input and weight");
  const int64_t N = x.shape()[0], Di = x.shape()[1], Do = w.shape()[0];
  check(w.shape()[1] == Di, "linear: weight shape mismatch");
  check(b.shape().size() == 1 && b.shape()[0] == Do, "linear: bias shape mismatch");
  auto n = detail::make_result<T>({N, Do}, {x.node(), w.node(), b.node()});
  const T* px = x.data().data();
  const T* pw = w.data().data();
  const T* pb = b.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N; ++i) {
    const T* xi = px + i * Di;
    T* oi = out + i * Do;
    for (int64_t o = 0; o < Do; ++o) {
      const T* wo = pw + o * Di;
      T acc = pb[o];
      for (int64_t k = 0; k < Di; ++k) acc += wo[k] * xi[k];
      oi[o] = acc;
    }
  }
  if (n->tracked) {
    auto nx = x.node();
    auto nw = w.node();
    auto nb = b.node();
    n->backward = [nx, nw, nb, N, Di, Do](const detail::Node<T>& self) {
      const T* g = self.grad.data();
      if (nb->tracked) {
        nb->ensure_grad();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t o = 0; o < Do; ++o) nb->grad[o] += g[i * Do + o];
      }
      if (nx->tracked) {
        nx->ensure_grad();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t o = 0; o < Do; ++o) {
            const T gv = g[i * Do + o];
            const T* wo = nw->data.data() + o * Di;
            T* gx = nx->grad.data() + i * Di;
            for (int64_t k = 0; k < Di; ++k) gx[k] += gv * wo[k];
          }
      }
      if (nw->tracked) {
        nw->ensure_grad();
        for (int64_t i = 0; i < N; ++i)
          for (int64_t o = 0; o < Do; ++o) {
            const T gv = g[i * Do + o];
            const T* xi = nx->data.data() + i * Di;
            T* gw = nw->grad.data() + o * Di;
            for (int64_t k = 0; k < Di; ++k) gw[k] += gv * xi[k];
          }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// Mean of embedding rows per sample: table {V,D}, ids list per sample.
template <typename T>
BasicTensor<T> embed_mean(const BasicTensor<T>& table,
                          const std::vector<std::vector<int32_t>>& ids) {
  check(table.shape().size() == 2, "embed_mean: table must be {V,D}");
  const int64_t V = table.shape()[0], D = table.shape()[1];
  const int64_t N = static_cast<int64_t>(ids.size());
  auto n = detail::make_result<T>({N, D}, {table.node()});
  const T* pt = table.data().data();
  T* out = n->data.data();
  for (int64_t i = 0; i < N; ++i) {
    check(!ids[i].empty(), "embed_mean: empty id list");
    T* oi = out + i * D;
    std::fill(oi, oi + D, T(0));
    for (int32_t id : ids[i]) {
      check(id >= 0 && id < V, "embed_mean: token id out of range");
      const T* row = pt + static_cast<int64_t>(id) * D;
      for (int64_t k = 0; k < D; ++k) oi[k] += row[k];
    }
    const T inv = T(1) / static_cast<T>(ids[i].size());
    for (int64_t k = 0; k < D; ++k) oi[k] *= inv;
  }
  if (n->tracked) {
    auto nt = table.node();
    n->backward = [nt, ids, D](const detail::Node<T>& self) {
      nt->ensure_grad();
      const T* g = self.grad.data();
      for (size_t i = 0; i < ids.size(); ++i) {
        const T inv = T(1) / static_cast<T>(ids[i].size());
        for (int32_t id : ids[i]) {
          T* gr = nt->grad.data() + static_cast<int64_t>(id) * D;
          const T* gi = g + static_cast<int64_t>(i) * D;
          for (int64_t k = 0; k < D; ++k) gr[k] += inv * gi[k];
        }
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

// Mean squared error over all elements.
template <typename T>
BasicTensor<T> mse(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  check(a.shape() == b.shape(), "mse: shape mismatch " + shape_str(a.shape()) +
                                    " vs " + shape_str(b.shape()));
  auto n = detail::make_result<T>({1}, {a.node(), b.node()});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  const size_t len = a.data().size();
  double acc = 0;
  for (size_t i = 0; i < len; ++i) {
    const double d = static_cast<double>(pa[i]) - static_cast<double>(pb[i]);
    acc += d * d;
  }
  n->data[0] = static_cast<T>(acc / static_cast<double>(len));
  if (n->tracked) {
    auto na = a.node(), nb = b.node();
    n->backward = [na, nb, len](const detail::Node<T>& self) {
      const T g = self.grad[0] * T(2) / static_cast<T>(len);
      if (na->tracked) {
        na->ensure_grad();
        for (size_t i = 0; i < len; ++i)
          na->grad[i] += g * (na->data[i] - nb->data[i]);
      }
      if (nb->tracked) {
        nb->ensure_grad();
        for (size_t i = 0; i < len; ++i)
          nb->grad[i] -= g * (na->data[i] - nb->data[i]);
      }
    };
  }
  return BasicTensor<T>(std::move(n));
}

}  // namespace mvd
