#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <utility>
#include <vector>

#include "dgm/param.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

enum class OptKind { Sgd, Adam };

struct OptConfig {
  OptKind kind = OptKind::Adam;
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// SGD/Adam over Parameter tensors. Entries whose gate is exactly zero are
/// skipped entirely: no moment update, no value update, so frozen entries are
/// bit-stable across any number of steps. A fully gated parameter keeps its
/// step counter too, making it bit-identical before and after step().
template <typename R>
class Optimizer {
 public:
  explicit Optimizer(OptConfig cfg = {}) : cfg_(cfg) {}

  const OptConfig& config() const { return cfg_; }

  void reset() { states_.clear(); }

  struct State {
    Tensor<R> m, v;
    std::int64_t t = 0;
  };

  void step(const std::vector<std::pair<Parameter<R>*, Tensor<R>>>& grads) {
    for (const auto& [p, g] : grads) step_one(*p, g);
  }

  void step_one(Parameter<R>& p, const Tensor<R>& grad) {
    check_same_shape(p.value, grad, "optimizer step");
    if (p.gate && !p.gate->same_shape(p.value))
      fail("optimizer: stale gate shape on " + p.name + " (" + p.gate->shape_str() + " vs " +
           p.value.shape_str() + ")");
    if (p.gate) {
      bool any_live = false;
      for (std::int64_t i = 0; i < p.value.size() && !any_live; ++i)
        if ((*p.gate)[i] != R(0)) any_live = true;
      if (!any_live) return;
    }
    if (cfg_.kind == OptKind::Sgd) {
      const R lr = static_cast<R>(cfg_.lr);
      for (std::int64_t i = 0; i < p.value.size(); ++i) {
        if (p.entry_frozen(i)) continue;
        p.value[i] -= lr * clipped(p, grad[i]);
      }
      return;
    }
    State& st = state(p);
    st.t += 1;
    const R b1 = static_cast<R>(cfg_.beta1), b2 = static_cast<R>(cfg_.beta2);
    const R corr1 = static_cast<R>(1.0 - std::pow(cfg_.beta1, static_cast<double>(st.t)));
    const R corr2 = static_cast<R>(1.0 - std::pow(cfg_.beta2, static_cast<double>(st.t)));
    const R lr = static_cast<R>(cfg_.lr), eps = static_cast<R>(cfg_.eps);
    for (std::int64_t i = 0; i < p.value.size(); ++i) {
      if (p.entry_frozen(i)) continue;
      const R g = clipped(p, grad[i]);
      st.m[i] = b1 * st.m[i] + (R(1) - b1) * g;
      st.v[i] = b2 * st.v[i] + (R(1) - b2) * g * g;
      const R mhat = st.m[i] / corr1;
      const R vhat = st.v[i] / corr2;
      p.value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }

  const State* peek_state(const Parameter<R>* p) const {
    auto it = states_.find(p);
    return it == states_.end() ? nullptr : &it->second;
  }
  State& state(Parameter<R>& p) {
    State& st = states_[&p];
    if (!st.m.same_shape(p.value)) {
      st.m = Tensor<R>(p.value.rows(), p.value.cols(), R(0));
      st.v = Tensor<R>(p.value.rows(), p.value.cols(), R(0));
      st.t = 0;
    }
    return st;
  }

 private:
  R clipped(const Parameter<R>& p, R g) const {
    if (p.clip_abs <= 0.0) return g;
    const R lim = static_cast<R>(p.clip_abs);
    if (g > lim) return lim;
    if (g < -lim) return -lim;
    return g;
  }

  OptConfig cfg_;
  std::map<const Parameter<R>*, State> states_;
};

}  // namespace dgm
