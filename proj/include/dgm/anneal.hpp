#pragma once

#include <cstdint>
#include <string>

#include "dgm/tensor.hpp"

namespace dgm {

enum class MaskVariant { DGMa, DGMw };

inline const char* variant_name(MaskVariant v) { return v == MaskVariant::DGMa ? "dgma" : "dgmw"; }

/// Annealing of the mask temperature s. Globally (per epoch i of I) the
/// per-epoch ceiling rises from 1/s_max to s_max; for DGMw, s additionally
/// sweeps within each epoch over the B batches. DGMa uses the per-epoch value
/// directly. Degenerate cases I=1 (and B=1 for the local sweep) collapse to
/// the top endpoint so single-epoch runs still end with near-binary masks.
///
/// Note the local sweep is evaluated verbatim: in early epochs s_max^i < 1
/// makes 1/s_max^i the larger endpoint, so the within-epoch sweep runs
/// downward there.
struct AnnealSchedule {
  double s_max = 200.0;
  std::int64_t epochs = 1;   // I
  std::int64_t batches = 1;  // B
  MaskVariant variant = MaskVariant::DGMa;

  void validate() const {
    if (!(s_max > 1.0)) fail("AnnealSchedule: s_max must be > 1, got " + std::to_string(s_max));
    if (epochs < 1) fail("AnnealSchedule: epochs must be >= 1");
    if (batches < 1) fail("AnnealSchedule: batches must be >= 1");
  }

  double epoch_ceiling(std::int64_t i) const {
    if (i < 1 || i > epochs) fail("AnnealSchedule: epoch index out of range");
    if (epochs == 1) return s_max;
    const double lo = 1.0 / s_max;
    return lo + (s_max - lo) * static_cast<double>(i - 1) / static_cast<double>(epochs - 1);
  }

  double scale_at(std::int64_t i, std::int64_t b) const {
    validate();
    if (b < 1 || b > batches) fail("AnnealSchedule: batch index out of range");
    const double si = epoch_ceiling(i);
    if (variant == MaskVariant::DGMa) return si;
    if (batches == 1) return si;
    const double lo = 1.0 / si;
    return lo + (si - lo) * static_cast<double>(b - 1) / static_cast<double>(batches - 1);
  }

  /// True once any epoch ceiling below 1 is possible (the inverted local
  /// sweep noted above); used for one-shot run logging.
  bool has_inverted_sweep() const {
    return variant == MaskVariant::DGMw && epochs > 1;
  }
};

}  // namespace dgm
