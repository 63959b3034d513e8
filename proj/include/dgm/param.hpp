#pragma once

#include <optional>
#include <string>

#include "dgm/tensor.hpp"

namespace dgm {

/// A trainable tensor. `gate` is an elementwise multiplier applied to the
/// computed gradient before the optimizer sees it; entries with gate exactly 0
/// are frozen (the optimizer skips their moment and value updates entirely).
/// `clip_abs` > 0 clamps each delivered gradient entry to [-clip_abs, clip_abs].
template <typename R>
struct Parameter {
  std::string name;
  Tensor<R> value;
  std::optional<Tensor<R>> gate;
  double clip_abs = 0.0;

  Parameter() = default;
  Parameter(std::string n, Tensor<R> v) : name(std::move(n)), value(std::move(v)) {}

  void set_gate(Tensor<R> g) {
    if (!g.same_shape(value))
      fail("Parameter " + name + ": gate shape " + g.shape_str() +
           " does not match value shape " + value.shape_str());
    gate = std::move(g);
  }
  void clear_gate() { gate.reset(); }

  bool entry_frozen(std::int64_t i) const { return gate && (*gate)[i] == R(0); }
};

}  // namespace dgm
