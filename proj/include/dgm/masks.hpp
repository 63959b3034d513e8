#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dgm/anneal.hpp"
#include "dgm/bitset.hpp"
#include "dgm/param.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

/// Learnable mask attached to one generator layer. The embedding is a fresh
/// parameter per task (re-zeroed by begin_task, giving soft mask 0.5); the
/// cumulated bitset is the elementwise max of all binarized task masks so far.
/// DGMa masks one value per output neuron (1 x p), DGMw one per weight (n x p).
template <typename R>
struct LayerMask {
  MaskVariant variant = MaskVariant::DGMa;
  std::int64_t in_dim = 0;   // n (DGMw rows); 1 for DGMa
  std::int64_t out_dim = 0;  // p
  bool regularized = true;   // the generator output mask is excluded from R^t
  Parameter<R> embedding;
  Bitset cumulated;
  std::vector<Bitset> snapshots;  // m^1 .. m^t, zero-padded on expansion

  std::int64_t mask_rows() const { return variant == MaskVariant::DGMa ? 1 : in_dim; }
  std::int64_t mask_cols() const { return out_dim; }
  std::int64_t mask_size() const { return mask_rows() * mask_cols(); }

  void init(MaskVariant v, std::int64_t n, std::int64_t p, const std::string& name,
            bool regularize = true) {
    variant = v;
    in_dim = n;
    out_dim = p;
    regularized = regularize;
    embedding = Parameter<R>(name + ".e", Tensor<R>(mask_rows(), mask_cols(), R(0)));
    embedding.clip_abs = 50.0;
    cumulated = Bitset(mask_size());
    snapshots.clear();
  }

  /// Fresh embedding for a new task: e = 0, soft mask 0.5 everywhere.
  void begin_task() { embedding.value = Tensor<R>(mask_rows(), mask_cols(), R(0)); }

  Tensor<R> soft_mask(double s) const { return mask_values(embedding.value, s); }

  Tensor<R> cumulated_tensor() const {
    Tensor<R> t(mask_rows(), mask_cols());
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = cumulated.get(i) ? R(1) : R(0);
    return t;
  }

  Tensor<R> snapshot_tensor(std::size_t task_index) const {
    if (task_index >= snapshots.size()) fail("LayerMask: no snapshot for requested task");
    const Bitset& b = snapshots[task_index];
    Tensor<R> t(mask_rows(), mask_cols());
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = b.get(i) ? R(1) : R(0);
    return t;
  }

  /// m = sigma(s * e) elementwise, the soft pseudo-step mask.
  static Tensor<R> mask_values(const Tensor<R>& e, double s) {
    if (!(s > 0.0)) fail("mask_values: scale must be positive");
    Tensor<R> m(e.rows(), e.cols());
    for (std::int64_t i = 0; i < e.size(); ++i)
      m[i] = R(1) / (R(1) + static_cast<R>(std::exp(-static_cast<double>(s) * e[i])));
    return m;
  }

  /// Binarizes at e > 0 (exact zero counts as free), records the per-task
  /// snapshot and folds it into the cumulated mask. Returns the snapshot.
  const Bitset& binarize_and_reserve() {
    Bitset m(mask_size());
    for (std::int64_t i = 0; i < embedding.value.size(); ++i)
      m.set(i, embedding.value[i] > R(0));
    cumulated.or_with(m);
    snapshots.push_back(std::move(m));
    return snapshots.back();
  }

  double occupation_fraction() const {
    return mask_size() == 0 ? 0.0
                            : static_cast<double>(cumulated.count()) /
                                  static_cast<double>(mask_size());
  }

  /// Free units: neurons for DGMa, weights for DGMw.
  std::int64_t free_count() const { return mask_size() - cumulated.count(); }
};

/// g' = (1 - m_cum) o g. A 1 x p gate against an n x p gradient broadcasts
/// over the input dimension (the DGMa column gate).
template <typename R>
inline Tensor<R> gate_gradient(const Tensor<R>& g, const Tensor<R>& m_cum) {
  Tensor<R> out(g.rows(), g.cols());
  if (m_cum.same_shape(g)) {
    for (std::int64_t i = 0; i < g.size(); ++i) out[i] = (R(1) - m_cum[i]) * g[i];
    return out;
  }
  if (m_cum.rows() == 1 && m_cum.cols() == g.cols()) {
    for (std::int64_t r = 0; r < g.rows(); ++r)
      for (std::int64_t c = 0; c < g.cols(); ++c)
        out.at(r, c) = (R(1) - m_cum[c]) * g.at(r, c);
    return out;
  }
  fail("gate_gradient: gate " + m_cum.shape_str() + " does not match gradient " + g.shape_str());
}

/// The reuse-aware sparsity term of the generator loss:
///   R^t = sum_l sum_i m^t (1 - m^{<t}) / sum_l sum_i (1 - m^{<t})
/// over the regularized layers. A fully reserved network (denominator 0)
/// yields 0; callers should treat that as capacity exhaustion.
template <typename R>
inline double regularizer_value(const std::vector<std::pair<Tensor<R>, Tensor<R>>>& layers) {
  double num = 0.0, den = 0.0;
  for (const auto& [m_t, m_prev] : layers) {
    check_same_shape(m_t, m_prev, "regularizer");
    for (std::int64_t i = 0; i < m_t.size(); ++i) {
      const double freeness = 1.0 - static_cast<double>(m_prev[i]);
      num += static_cast<double>(m_t[i]) * freeness;
      den += freeness;
    }
  }
  return den == 0.0 ? 0.0 : num / den;
}

}  // namespace dgm
