#include <catch2/catch_amalgamated.hpp>

#include "dgm/anneal.hpp"
#include "dgm/graph.hpp"
#include "dgm/masks.hpp"
#include "dgm/rng.hpp"
#include "test_util.hpp"

using dgm::AnnealSchedule;
using dgm::Bitset;
using dgm::gate_gradient;
using dgm::LayerMask;
using dgm::MaskVariant;
using dgm::regularizer_value;
using dgm::Rng;
using dgm::Tensor;

using T = Tensor<double>;
using LM = LayerMask<double>;

TEST_CASE("annealing endpoints reproduce the schedule exactly") {
  AnnealSchedule sched;
  sched.s_max = 200.0;
  sched.epochs = 10;
  sched.batches = 100;
  sched.variant = MaskVariant::DGMw;

  CHECK(sched.scale_at(10, 100) == Catch::Approx(200.0).margin(1e-12));
  CHECK(sched.epoch_ceiling(1) == Catch::Approx(0.005).margin(1e-12));
  CHECK(sched.scale_at(10, 1) == Catch::Approx(0.005).margin(1e-12));  // 1/s_max^10

  SECTION("DGMa ignores the batch index (global annealing only)") {
    sched.variant = MaskVariant::DGMa;
    CHECK(sched.scale_at(4, 1) == sched.scale_at(4, 100));
    CHECK(sched.scale_at(4, 50) == sched.epoch_ceiling(4));
  }
  SECTION("s is affine in b for fixed i") {
    sched.variant = MaskVariant::DGMw;
    for (std::int64_t i : {2, 5, 9}) {
      const double s1 = sched.scale_at(i, 1);
      const double s2 = sched.scale_at(i, 2);
      const double step = s2 - s1;
      for (std::int64_t b = 3; b <= 100; b += 13) {
        const double expect = s1 + step * static_cast<double>(b - 1);
        CHECK(sched.scale_at(i, b) == Catch::Approx(expect).margin(1e-9));
      }
    }
  }
  SECTION("degenerate single-epoch schedule uses the top endpoint") {
    AnnealSchedule one;
    one.s_max = 50.0;
    one.epochs = 1;
    one.batches = 10;
    one.variant = MaskVariant::DGMw;
    CHECK(one.epoch_ceiling(1) == 50.0);
  }
  SECTION("out-of-range indices error") {
    CHECK_THROWS_AS(sched.scale_at(0, 1), dgm::Error);
    CHECK_THROWS_AS(sched.scale_at(11, 1), dgm::Error);
    CHECK_THROWS_AS(sched.scale_at(1, 0), dgm::Error);
    CHECK_THROWS_AS(sched.scale_at(1, 101), dgm::Error);
  }
  SECTION("invalid s_max rejected") {
    AnnealSchedule bad;
    bad.s_max = 1.0;
    CHECK_THROWS_AS(bad.validate(), dgm::Error);
  }
}

TEST_CASE("soft mask values") {
  SECTION("zero embedding gives 0.5") {
    CHECK(LM::mask_values(T(1, 4, 0.0), 1.0)[2] == 0.5);
  }
  SECTION("saturation at large positive s*e") {
    const T m = LM::mask_values(T(1, 1, {10.0}), 100.0);
    CHECK(m[0] == Catch::Approx(1.0).margin(1e-9));
  }
  SECTION("hand value sigma(-2)") {
    const T m = LM::mask_values(T(1, 1, {-0.01}), 200.0);
    CHECK(m[0] == Catch::Approx(1.0 / (1.0 + std::exp(2.0))).margin(1e-12));
  }
  SECTION("non-positive scale rejected") {
    CHECK_THROWS_AS(LM::mask_values(T(1, 1, 0.0), 0.0), dgm::Error);
  }
}

TEST_CASE("soft mask gradient flow matches s*sig*(1-sig) and finite differences") {
  Rng rng(21);
  dgm::Parameter<double> e("e", rng.normal_tensor<double>(2, 3));
  const double s = 7.5;
  auto eval = [&] {
    dgm::Graph<double> g;
    return g.value(g.sum(g.sigmoid(g.scale(g.param(e), s))))[0];
  };
  dgm::Graph<double> g;
  auto grads = g.backward(g.sum(g.sigmoid(g.scale(g.param(e), s))));
  const T& tape = dgm::test::grad_for(grads, e);
  const T fd = dgm::test::fd_gradient(e, eval, 1e-6);
  CHECK(dgm::test::max_rel_err(tape, fd) < 1e-6);
  for (std::int64_t i = 0; i < e.value.size(); ++i) {
    const double sig = 1.0 / (1.0 + std::exp(-s * e.value[i]));
    CHECK(dgm::test::rel_err(tape[i], s * sig * (1.0 - sig)) < 1e-12);
  }
}

TEST_CASE("gradient gating") {
  SECTION("fully reserved freezes") {
    const T g(2, 2, {1, 2, 3, 4});
    const T gated = gate_gradient(g, T(2, 2, 1.0));
    for (std::int64_t i = 0; i < 4; ++i) CHECK(gated[i] == 0.0);
  }
  SECTION("fully free passes through") {
    const T g(2, 2, {1, 2, 3, 4});
    CHECK(gate_gradient(g, T(2, 2, 0.0)).bit_equal(g));
  }
  SECTION("elementwise hand case") {
    const T gated = gate_gradient(T(1, 2, {2, -3}), T(1, 2, {1.0, 0.25}));
    CHECK(gated[0] == 0.0);
    CHECK(gated[1] == Catch::Approx(-2.25).margin(1e-15));
  }
  SECTION("DGMa column gate broadcasts over the input dimension") {
    const T g(2, 2, {1, 1, 1, 1});
    const T gated = gate_gradient(g, T(1, 2, {1.0, 0.0}));
    CHECK(gated.at(0, 0) == 0.0);
    CHECK(gated.at(1, 0) == 0.0);
    CHECK(gated.at(0, 1) == 1.0);
    CHECK(gated.at(1, 1) == 1.0);
  }
  SECTION("shape mismatch errors") {
    CHECK_THROWS_AS(gate_gradient(T(2, 3, 0.0), T(2, 2, 0.0)), dgm::Error);
  }
}

TEST_CASE("reuse-aware sparsity regularizer") {
  SECTION("full reservation of an empty network gives 1") {
    CHECK(regularizer_value<double>({{T(2, 4, 1.0), T(2, 4, 0.0)}}) == 1.0);
  }
  SECTION("pure reuse is unpenalized") {
    const T prev(1, 4, {1, 1, 0, 1});
    const T cur(1, 4, {1, 0, 0, 1});
    CHECK(regularizer_value<double>({{cur, prev}}) == 0.0);
  }
  SECTION("hand case R = 1/3") {
    const T prev(1, 4, {1, 0, 0, 0});
    const T cur(1, 4, {1, 0.8, 0.2, 0});
    CHECK(regularizer_value<double>({{cur, prev}}) == Catch::Approx(1.0 / 3).margin(1e-12));
  }
  SECTION("fully reserved network returns 0 (capacity exhausted)") {
    CHECK(regularizer_value<double>({{T(1, 3, 0.5), T(1, 3, 1.0)}}) == 0.0);
  }
  SECTION("bounds and monotonicity over random masks") {
    Rng rng(17);
    for (int trial = 0; trial < 300; ++trial) {
      const std::int64_t n = 1 + rng.below(6), p = 1 + rng.below(6);
      T cur(n, p), prev(n, p);
      for (std::int64_t i = 0; i < cur.size(); ++i) {
        cur[i] = rng.uniform();
        prev[i] = rng.below(2) ? 1.0 : 0.0;
      }
      const double r = regularizer_value<double>({{cur, prev}});
      REQUIRE(r >= 0.0);
      REQUIRE(r <= 1.0);
      // Raising a current-mask entry never lowers R; entries under a reserved
      // prev-mask cell leave R unchanged.
      const std::int64_t i = rng.below(cur.size());
      T bumped = cur;
      bumped[i] = std::min(1.0, bumped[i] + 0.25);
      const double r2 = regularizer_value<double>({{bumped, prev}});
      if (prev[i] == 1.0)
        REQUIRE(r2 == Catch::Approx(r).margin(1e-12));
      else
        REQUIRE(r2 >= r - 1e-12);
    }
  }
}

TEST_CASE("binarize and reserve") {
  LM m;
  m.init(MaskVariant::DGMa, 4, 3, "l1");
  SECTION("threshold at zero with ties free") {
    m.embedding.value = T(1, 3, {0.3, -0.2, 0.0});
    const Bitset& snap = m.binarize_and_reserve();
    CHECK(snap.get(0));
    CHECK_FALSE(snap.get(1));
    CHECK_FALSE(snap.get(2));
  }
  SECTION("cumulated mask is the elementwise max across tasks") {
    m.embedding.value = T(1, 3, {-1, 1, -1});
    m.binarize_and_reserve();
    m.begin_task();
    m.embedding.value = T(1, 3, {1, -1, -1});
    m.binarize_and_reserve();
    CHECK(m.cumulated.get(0));
    CHECK(m.cumulated.get(1));
    CHECK_FALSE(m.cumulated.get(2));
    CHECK(m.snapshots[0].is_subset_of(m.cumulated));
    CHECK(m.snapshots[1].is_subset_of(m.cumulated));
  }
  SECTION("all-negative embeddings reserve nothing") {
    m.embedding.value = T(1, 3, {-0.5, -0.1, -2.0});
    m.binarize_and_reserve();
    CHECK(m.cumulated.count() == 0);
  }
}

TEST_CASE("occupation and free counts") {
  SECTION("fresh mask: occupation 0, everything free") {
    LM m;
    m.init(MaskVariant::DGMw, 4, 4, "l");
    CHECK(m.occupation_fraction() == 0.0);
    CHECK(m.free_count() == 16);
  }
  SECTION("DGMw 4x4 with 6 ones: 0.375 occupied, 10 free") {
    LM m;
    m.init(MaskVariant::DGMw, 4, 4, "l");
    for (std::int64_t i : {0, 3, 5, 7, 9, 14}) m.cumulated.set(i, true);
    CHECK(m.occupation_fraction() == Catch::Approx(0.375).margin(1e-15));
    CHECK(m.free_count() == 10);
  }
  SECTION("all reserved: occupation 1, zero free") {
    LM m;
    m.init(MaskVariant::DGMa, 4, 5, "l");
    for (std::int64_t i = 0; i < 5; ++i) m.cumulated.set(i, true);
    CHECK(m.occupation_fraction() == 1.0);
    CHECK(m.free_count() == 0);
  }
}
