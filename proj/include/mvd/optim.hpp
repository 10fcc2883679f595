#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mvd/common.hpp"
#include "mvd/tensor.hpp"

namespace mvd {

// Ordered name -> tensor registry; the order fixes checkpoint layout and
// optimizer state association.
template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, BasicTensor<T> t) {
    t.set_requires_grad(true);
    names_.push_back(name);
    params_.push_back(std::move(t));
  }

  size_t size() const { return params_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  BasicTensor<T>& at(size_t i) { return params_[i]; }
  const BasicTensor<T>& at(size_t i) const { return params_[i]; }

  BasicTensor<T>* find(const std::string& name) {
    for (size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return &params_[i];
    return nullptr;
  }

  void clear_grads() {
    for (auto& p : params_) p.clear_grad();
  }

  int64_t total_elements() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  double grad_norm() const {
    double acc = 0;
    for (const auto& p : params_)
      if (p.has_grad())
        for (T g : p.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
    return std::sqrt(acc);
  }

 private:
  std::vector<std::string> names_;
  std::vector<BasicTensor<T>> params_;
};

struct AdamWConfig {
  double lr = 1e-5;  // paper profile
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay.  Moment buffers are addressed by
// parameter index, so the ParamSet layout must not change between steps.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }
  int64_t step_count() const { return step_; }

  void step(ParamSet<T>& params) {
    if (m_.empty()) init_state(params);
    check(m_.size() == params.size(), "adamw: parameter count changed");
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t i = 0; i < params.size(); ++i) {
      auto& p = params.at(i);
      if (!p.has_grad()) continue;
      check(static_cast<int64_t>(m_[i].size()) == p.numel(), "adamw: moment shape mismatch");
      auto g = p.grad();
      auto w = p.mutable_data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        const double mhat = mk / bc1;
        const double vhat = vk / bc2;
        double upd = cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                cfg_.weight_decay * static_cast<double>(w[k]));
        w[k] = static_cast<T>(static_cast<double>(w[k]) - upd);
      }
    }
  }

  // Serialization access (checkpoint module).
  std::vector<std::vector<T>>& moments1() { return m_; }
  std::vector<std::vector<T>>& moments2() { return v_; }
  void set_step_count(int64_t s) { step_ = s; }

  void init_state(const ParamSet<T>& params) {
    m_.clear();
    v_.clear();
    for (size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params.at(i).numel(), T(0));
      v_.emplace_back(params.at(i).numel(), T(0));
    }
  }

 private:
  AdamWConfig cfg_;
  int64_t step_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

// ema <- decay*ema + (1-decay)*param, elementwise over two aligned sets.
template <typename T>
void ema_update(ParamSet<T>& ema, const ParamSet<T>& params, double decay) {
  check(decay >= 0.0 && decay <= 1.0, "ema_update: decay outside [0,1]");
  check(ema.size() == params.size(), "ema_update: parameter count mismatch");
  for (size_t i = 0; i < ema.size(); ++i) {
    check(ema.at(i).shape() == params.at(i).shape(), "ema_update: shape mismatch");
    auto dst = ema.at(i).mutable_data();
    auto src = params.at(i).data();
    for (size_t k = 0; k < dst.size(); ++k)
      dst[k] = static_cast<T>(decay * static_cast<double>(dst[k]) +
                              (1.0 - decay) * static_cast<double>(src[k]));
  }
}

}  // namespace mvd
