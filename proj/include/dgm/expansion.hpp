#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dgm/bitset.hpp"
#include "dgm/masks.hpp"
#include "dgm/param.hpp"
#include "dgm/rng.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

/// A dense layer plus its growth bookkeeping. base_free is the free capacity
/// the layer started with (p neurons for DGMa, n*p weights for DGMw) and is
/// the level expansion restores after every task.
template <typename R>
struct LayerSlot {
  Parameter<R> W;     // n x p
  Parameter<R> bias;  // 1 x p
  bool has_bias = true;
  MaskVariant variant = MaskVariant::DGMa;
  std::int64_t base_free = 0;

  struct Growth {
    std::int64_t task = 0;
    std::int64_t delta = 0;          // reserved units counted for the task
    std::int64_t neurons_added = 0;  // output-dimension growth
  };
  std::vector<Growth> growth_log;

  std::int64_t in_dim() const { return W.value.rows(); }
  std::int64_t out_dim() const { return W.value.cols(); }

  void init(MaskVariant v, std::int64_t n, std::int64_t p, const std::string& name, Rng& rng,
            bool with_bias = true) {
    variant = v;
    has_bias = with_bias;
    const double lim = glorot_limit(n, p);
    W = Parameter<R>(name + ".W", rng.template uniform_tensor<R>(n, p, -lim, lim));
    bias = Parameter<R>(name + ".b", Tensor<R>(1, with_bias ? p : 0, R(0)));
    base_free = v == MaskVariant::DGMa ? p : n * p;
    growth_log.clear();
  }

  static double glorot_limit(std::int64_t n, std::int64_t p) {
    return std::sqrt(6.0 / static_cast<double>(n + p));
  }
};

/// Count of entries newly reserved during the task: flips 0 -> 1 between the
/// two cumulated masks. Reservations never revert; a set bit disappearing is
/// a monotonicity violation and an error.
inline std::int64_t reserved_delta(const Bitset& cum_before, const Bitset& cum_after) {
  if (!cum_before.is_subset_of(cum_after))
    fail("reserved_delta: cumulated mask is not monotone (a reserved entry was released)");
  return cum_after.count() - cum_before.count();
}

/// Free capacity left under the cumulated mask: neurons (DGMa) or weights
/// (DGMw).
template <typename R>
inline std::int64_t free_capacity(const LayerSlot<R>& layer, const LayerMask<R>& mask) {
  if (mask.mask_size() !=
      (layer.variant == MaskVariant::DGMa ? layer.out_dim() : layer.in_dim() * layer.out_dim()))
    fail("free_capacity: mask shape inconsistent with layer");
  return mask.free_count();
}

namespace detail {

template <typename R>
inline Tensor<R> grow_cols(const Tensor<R>& t, std::int64_t extra, R fill = R(0)) {
  Tensor<R> out(t.rows(), t.cols() + extra, fill);
  for (std::int64_t r = 0; r < t.rows(); ++r)
    for (std::int64_t c = 0; c < t.cols(); ++c) out.at(r, c) = t.at(r, c);
  return out;
}

template <typename R>
inline Tensor<R> grow_rows(const Tensor<R>& t, std::int64_t extra, R fill = R(0)) {
  Tensor<R> out(t.rows() + extra, t.cols(), fill);
  for (std::int64_t r = 0; r < t.rows(); ++r)
    for (std::int64_t c = 0; c < t.cols(); ++c) out.at(r, c) = t.at(r, c);
  return out;
}

}  // namespace detail

/// Appends `added` output units to the layer: new weight columns drawn
/// fan-scaled uniform, new bias entries 0, new mask entries free (embedding 0,
/// cumulated 0, snapshots zero-padded). Appending—never reordering—keeps old
/// units' computations bit-identical.
template <typename R>
void add_output_units(LayerSlot<R>& layer, LayerMask<R>& mask, std::int64_t added, Rng& rng) {
  if (added < 0) fail("add_output_units: negative growth");
  if (added == 0) return;
  const std::int64_t n = layer.in_dim();
  const std::int64_t p_new = layer.out_dim() + added;
  const double lim = LayerSlot<R>::glorot_limit(n, p_new);
  Tensor<R> W = detail::grow_cols(layer.W.value, added);
  for (std::int64_t r = 0; r < n; ++r)
    for (std::int64_t c = layer.out_dim(); c < p_new; ++c)
      W.at(r, c) = static_cast<R>(rng.uniform(-lim, lim));
  layer.W.value = std::move(W);
  layer.W.clear_gate();
  if (layer.has_bias) {
    layer.bias.value = detail::grow_cols(layer.bias.value, added);
    layer.bias.clear_gate();
  }

  const std::int64_t mr_old = mask.mask_rows(), mc_old = mask.mask_cols();
  mask.out_dim = p_new;
  mask.embedding.value = detail::grow_cols(mask.embedding.value, added);
  mask.cumulated = resize_mask_2d(mask.cumulated, mr_old, mc_old, mask.mask_rows(), p_new);
  for (auto& snap : mask.snapshots)
    snap = resize_mask_2d(snap, mr_old, mc_old, mask.mask_rows(), p_new);
}

/// Grows the layer's input dimension after the previous layer gained units.
/// New DGMw weights are free (trainable, masked out of every stored snapshot).
/// For DGMa the column mask leaves new rows permanently gated wherever the
/// column is already reserved, so those entries are zero-initialized: a reused
/// neuron keeps computing exactly its original function of the original units.
template <typename R>
void add_input_units(LayerSlot<R>& layer, LayerMask<R>& mask, std::int64_t added, Rng& rng) {
  if (added < 0) fail("add_input_units: negative growth");
  if (added == 0) return;
  const std::int64_t n_new = layer.in_dim() + added;
  const std::int64_t p = layer.out_dim();
  const double lim = LayerSlot<R>::glorot_limit(n_new, p);
  Tensor<R> W = detail::grow_rows(layer.W.value, added);
  for (std::int64_t r = layer.in_dim(); r < n_new; ++r)
    for (std::int64_t c = 0; c < p; ++c) {
      const bool frozen_col =
          layer.variant == MaskVariant::DGMa && mask.cumulated.get(c);
      W.at(r, c) = frozen_col ? R(0) : static_cast<R>(rng.uniform(-lim, lim));
    }
  layer.W.value = std::move(W);
  layer.W.clear_gate();

  if (layer.variant == MaskVariant::DGMw) {
    const std::int64_t mr_old = mask.mask_rows(), mc_old = mask.mask_cols();
    mask.in_dim = n_new;
    mask.embedding.value = detail::grow_rows(mask.embedding.value, added);
    mask.cumulated = resize_mask_2d(mask.cumulated, mr_old, mc_old, n_new, p);
    for (auto& snap : mask.snapshots) snap = resize_mask_2d(snap, mr_old, mc_old, n_new, p);
  } else {
    mask.in_dim = n_new;  // mask stays 1 x p
  }
}

/// Post-task DGMa expansion: grow p by the number of neurons reserved this
/// task, restoring free capacity to exactly base_free.
template <typename R>
std::int64_t expand_dgma(LayerSlot<R>& layer, LayerMask<R>& mask, std::int64_t delta,
                         std::int64_t task, Rng& rng) {
  if (delta < 0) fail("expand_dgma: negative delta");
  add_output_units(layer, mask, delta, rng);
  layer.growth_log.push_back({task, delta, delta});
  return delta;
}

/// Post-task DGMw expansion: grow p by ceil(delta / n). Free weights return to
/// base plus a surplus of (n - delta mod n) mod n, per (p + delta/n)n - delta = np.
template <typename R>
std::int64_t expand_dgmw(LayerSlot<R>& layer, LayerMask<R>& mask, std::int64_t delta,
                         std::int64_t task, Rng& rng) {
  if (delta < 0) fail("expand_dgmw: negative delta");
  const std::int64_t n = layer.in_dim();
  const std::int64_t added = delta == 0 ? 0 : (delta + n - 1) / n;
  add_output_units(layer, mask, added, rng);
  layer.growth_log.push_back({task, delta, added});
  return added;
}

}  // namespace dgm
