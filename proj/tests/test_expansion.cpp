#include <catch2/catch_amalgamated.hpp>

#include "dgm/expansion.hpp"
#include "dgm/rng.hpp"

using dgm::Bitset;
using dgm::free_capacity;
using dgm::LayerMask;
using dgm::LayerSlot;
using dgm::MaskVariant;
using dgm::reserved_delta;
using dgm::Rng;
using dgm::Tensor;

using T = Tensor<double>;

TEST_CASE("reserved delta counts 0->1 flips") {
  SECTION("no new reservations") {
    Bitset a(8), b(8);
    a.set(1, true);
    b.set(1, true);
    CHECK(reserved_delta(a, b) == 0);
  }
  SECTION("DGMa flip count") {
    Bitset before(3), after(3);
    before.set(2, true);
    after.set(2, true);
    after.set(0, true);
    CHECK(reserved_delta(before, after) == 1);
  }
  SECTION("DGMw 4x4 with 6 new ones") {
    Bitset before(16), after(16);
    for (std::int64_t i : {0, 3, 5, 7, 9, 14}) after.set(i, true);
    CHECK(reserved_delta(before, after) == 6);
  }
  SECTION("monotonicity violation errors") {
    Bitset before(4), after(4);
    before.set(2, true);
    CHECK_THROWS_AS(reserved_delta(before, after), dgm::Error);
  }
}

TEST_CASE("DGMa expansion keeps free neurons at base capacity") {
  Rng rng(4);
  LayerSlot<double> layer;
  LayerMask<double> mask;
  layer.init(MaskVariant::DGMa, 16, 64, "l1", rng);
  mask.init(MaskVariant::DGMa, 16, 64, "l1");

  SECTION("p=64, delta=20 -> p=84, 64 free") {
    for (std::int64_t i = 0; i < 20; ++i) mask.cumulated.set(i, true);
    dgm::expand_dgma(layer, mask, 20, 1, rng);
    CHECK(layer.out_dim() == 84);
    CHECK(free_capacity(layer, mask) == 64);
    CHECK(layer.bias.value.cols() == 84);
  }
  SECTION("delta=0 leaves the layer unchanged") {
    const T w_before = layer.W.value;
    dgm::expand_dgma(layer, mask, 0, 1, rng);
    CHECK(layer.W.value.bit_equal(w_before));
  }
  SECTION("two consecutive expansions: 64 -> 69 -> 76, free stays 64") {
    for (std::int64_t i = 0; i < 5; ++i) mask.cumulated.set(i, true);
    dgm::expand_dgma(layer, mask, 5, 1, rng);
    CHECK(layer.out_dim() == 69);
    CHECK(free_capacity(layer, mask) == 64);
    for (std::int64_t i = 5; i < 12; ++i) mask.cumulated.set(i, true);
    dgm::expand_dgma(layer, mask, 7, 2, rng);
    CHECK(layer.out_dim() == 76);
    CHECK(free_capacity(layer, mask) == 64);
    REQUIRE(layer.growth_log.size() == 2);
    CHECK(layer.growth_log[0].neurons_added == 5);
    CHECK(layer.growth_log[1].neurons_added == 7);
  }
  SECTION("negative delta errors") {
    CHECK_THROWS_AS(dgm::expand_dgma(layer, mask, -1, 1, rng), dgm::Error);
  }
}

TEST_CASE("DGMw expansion restores free weights up to the sub-n surplus") {
  Rng rng(9);
  SECTION("n=4, p=3, delta=6 -> +2 neurons, 14 = np+2 free") {
    LayerSlot<double> layer;
    LayerMask<double> mask;
    layer.init(MaskVariant::DGMw, 4, 3, "l", rng);
    mask.init(MaskVariant::DGMw, 4, 3, "l");
    for (std::int64_t i = 0; i < 6; ++i) mask.cumulated.set(i, true);
    dgm::expand_dgmw(layer, mask, 6, 1, rng);
    CHECK(layer.out_dim() == 5);
    CHECK(free_capacity(layer, mask) == 14);
  }
  SECTION("divisible case lands exactly on np") {
    LayerSlot<double> layer;
    LayerMask<double> mask;
    layer.init(MaskVariant::DGMw, 4, 6, "l", rng);
    mask.init(MaskVariant::DGMw, 4, 6, "l");
    for (std::int64_t i = 0; i < 8; ++i) mask.cumulated.set(i, true);
    dgm::expand_dgmw(layer, mask, 8, 1, rng);
    CHECK(layer.out_dim() == 8);
    CHECK(free_capacity(layer, mask) == 24);
  }
  SECTION("delta=0 unchanged") {
    LayerSlot<double> layer;
    LayerMask<double> mask;
    layer.init(MaskVariant::DGMw, 4, 3, "l", rng);
    mask.init(MaskVariant::DGMw, 4, 3, "l");
    dgm::expand_dgmw(layer, mask, 0, 1, rng);
    CHECK(layer.out_dim() == 3);
  }
}

TEST_CASE("randomized expansion arithmetic over 1..64") {
  Rng rng(123);
  for (int trial = 0; trial < 400; ++trial) {
    const std::int64_t n = 1 + rng.below(64);
    const std::int64_t p = 1 + rng.below(64);
    {
      // DGMa: delta reserved neurons out of p.
      LayerSlot<double> layer;
      LayerMask<double> mask;
      layer.init(MaskVariant::DGMa, n, p, "a", rng);
      mask.init(MaskVariant::DGMa, n, p, "a");
      const std::int64_t delta = rng.below(p + 1);
      for (std::int64_t i = 0; i < delta; ++i) mask.cumulated.set(i, true);
      dgm::expand_dgma(layer, mask, delta, 1, rng);
      REQUIRE(free_capacity(layer, mask) == p);
    }
    {
      // DGMw: delta reserved weights out of n*p.
      LayerSlot<double> layer;
      LayerMask<double> mask;
      layer.init(MaskVariant::DGMw, n, p, "w", rng);
      mask.init(MaskVariant::DGMw, n, p, "w");
      const std::int64_t delta = rng.below(n * p + 1);
      for (std::int64_t i = 0; i < delta; ++i) mask.cumulated.set(i, true);
      dgm::expand_dgmw(layer, mask, delta, 1, rng);
      const std::int64_t surplus = (n - delta % n) % n;
      REQUIRE(free_capacity(layer, mask) == n * p + surplus);
    }
  }
}

TEST_CASE("mask snapshots stay zero on appended units after expansion") {
  Rng rng(5);
  LayerSlot<double> layer;
  LayerMask<double> mask;
  layer.init(MaskVariant::DGMw, 3, 2, "l", rng);
  mask.init(MaskVariant::DGMw, 3, 2, "l");
  mask.embedding.value = T(3, 2, {1, -1, 1, 1, -1, -1});
  mask.binarize_and_reserve();
  const std::int64_t delta = mask.cumulated.count();
  dgm::expand_dgmw(layer, mask, delta, 1, rng);
  dgm::add_input_units(layer, mask, 2, rng);
  REQUIRE(mask.snapshots.size() == 1);
  const Bitset& snap = mask.snapshots[0];
  // Original reserved positions survive the 2-D remap...
  CHECK(snap.get(0 * layer.out_dim() + 0));
  CHECK(snap.get(1 * layer.out_dim() + 0));
  CHECK(snap.get(1 * layer.out_dim() + 1));
  // ...and every appended row/column is free in the old snapshot.
  for (std::int64_t c = 2; c < layer.out_dim(); ++c)
    for (std::int64_t r = 0; r < layer.in_dim(); ++r)
      CHECK_FALSE(snap.get(r * layer.out_dim() + c));
  for (std::int64_t r = 3; r < layer.in_dim(); ++r)
    for (std::int64_t c = 0; c < layer.out_dim(); ++c)
      CHECK_FALSE(snap.get(r * layer.out_dim() + c));
}

TEST_CASE("DGMa input growth zero-initializes rows entering reserved columns") {
  Rng rng(6);
  LayerSlot<double> layer;
  LayerMask<double> mask;
  layer.init(MaskVariant::DGMa, 4, 3, "l", rng);
  mask.init(MaskVariant::DGMa, 4, 3, "l");
  mask.cumulated.set(1, true);  // column 1 reserved
  dgm::add_input_units(layer, mask, 2, rng);
  CHECK(layer.in_dim() == 6);
  for (std::int64_t r = 4; r < 6; ++r) {
    CHECK(layer.W.value.at(r, 1) == 0.0);
    CHECK(layer.W.value.at(r, 0) != 0.0);
    CHECK(layer.W.value.at(r, 2) != 0.0);
  }
}
