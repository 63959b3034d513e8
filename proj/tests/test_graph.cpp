#include <catch2/catch_amalgamated.hpp>

#include "dgm/graph.hpp"
#include "dgm/rng.hpp"
#include "test_util.hpp"

using dgm::Graph;
using dgm::Parameter;
using dgm::Rng;
using dgm::Tensor;
using dgm::test::fd_gradient;
using dgm::test::grad_for;
using dgm::test::max_rel_err;
using dgm::test::rel_err;

using G = Graph<double>;
using T = Tensor<double>;

namespace {

int dense(G& g, int x, int w, int b) { return g.add_row_vec(g.matmul(x, w), b); }

}  // namespace

TEST_CASE("dense layer basics") {
  G g;
  SECTION("identity weights") {
    int x = g.input(T(1, 2, {1, 2}));
    int w = g.constant(T(2, 2, {1, 0, 0, 1}));
    int b = g.constant(T(1, 2, {0, 0}));
    auto y = g.value(dense(g, x, w, b));
    CHECK(y.at(0, 0) == 1.0);
    CHECK(y.at(0, 1) == 2.0);
  }
  SECTION("hand matrix product") {
    int x = g.input(T(1, 2, {1, 1}));
    int w = g.constant(T(2, 2, {2, 3, 4, 5}));
    int b = g.constant(T(1, 2, {1, 1}));
    auto y = g.value(dense(g, x, w, b));
    CHECK(y.at(0, 0) == 7.0);
    CHECK(y.at(0, 1) == 9.0);
  }
  SECTION("zero input passes bias") {
    int x = g.input(T(1, 2, {0, 0}));
    int w = g.constant(T(2, 2, {13, -7, 2, 9}));
    int b = g.constant(T(1, 2, {5, -5}));
    auto y = g.value(dense(g, x, w, b));
    CHECK(y.at(0, 0) == 5.0);
    CHECK(y.at(0, 1) == -5.0);
  }
  SECTION("shape mismatch names both shapes") {
    int x = g.input(T(1, 3, {1, 2, 3}));
    int w = g.constant(T(2, 2, {1, 0, 0, 1}));
    try {
      g.matmul(x, w);
      FAIL("expected shape error");
    } catch (const dgm::Error& e) {
      const std::string msg = e.what();
      CHECK(msg.find("[1x3]") != std::string::npos);
      CHECK(msg.find("[2x2]") != std::string::npos);
    }
  }
}

TEST_CASE("backward basics") {
  SECTION("quadratic form: d sum(W*W)/2 = W") {
    G g;
    Parameter<double> W("W", T(2, 3, {1, -2, 3, 0.5, 4, -1}));
    int w = g.param(W);
    int loss = g.scale(g.sum(g.mul(w, w)), 0.5);
    auto grads = g.backward(loss);
    REQUIRE(grads.size() == 1);
    CHECK(grads[0].second.bit_equal(W.value));
  }
  SECTION("dense then mean matches central differences to 1e-6 relative") {
    Rng rng(7);
    Parameter<double> W("W", rng.normal_tensor<double>(3, 4));
    Parameter<double> b("b", rng.normal_tensor<double>(1, 4));
    const T x = rng.normal_tensor<double>(5, 3);
    auto eval = [&] {
      G g;
      return g.value(g.mean(dense(g, g.input(x), g.param(W), g.param(b))))[0];
    };
    G g;
    int loss = g.mean(dense(g, g.input(x), g.param(W), g.param(b)));
    auto grads = g.backward(loss);
    CHECK(max_rel_err(grad_for(grads, W), fd_gradient(W, eval)) < 1e-6);
    CHECK(max_rel_err(grad_for(grads, b), fd_gradient(b, eval)) < 1e-6);
  }
  SECTION("all-zero gate annihilates the delivered gradient") {
    G g;
    Parameter<double> W("W", T(2, 2, {1, 2, 3, 4}));
    W.set_gate(T(2, 2, 0.0));
    int loss = g.sum(g.mul(g.param(W), g.param(W)));
    auto grads = g.backward(loss);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(grads[0].second[i] == 0.0);
  }
  SECTION("disconnected parameter gets a zero gradient, not an error") {
    G g;
    Parameter<double> W("W", T(2, 2, {1, 2, 3, 4}));
    Parameter<double> unused("U", T(1, 3, {9, 9, 9}));
    int w = g.param(W);
    g.param(unused);
    auto grads = g.backward(g.sum(w));
    REQUIRE(grads.size() == 2);
    CHECK(grads[1].second.same_shape(unused.value));
    for (std::int64_t i = 0; i < 3; ++i) CHECK(grads[1].second[i] == 0.0);
  }
  SECTION("non-scalar loss is an error") {
    G g;
    int x = g.input(T(2, 2, {1, 2, 3, 4}));
    CHECK_THROWS_AS(g.backward(g.mul(x, x)), dgm::Error);
  }
  SECTION("non-finite op result is surfaced") {
    G g;
    int a = g.input(T(1, 1, {1.0}));
    int z = g.input(T(1, 1, {0.0}));
    CHECK_THROWS_AS(g.div(a, z), dgm::Error);
  }
}

TEST_CASE("per-sample input gradient norms") {
  SECTION("constant function: norm 0") {
    G g;
    int x = g.input(T(3, 2, {1, 2, 3, 4, 5, 6}));
    int loss = g.scalar_const(42.0);
    auto norms = g.input_gradient_norms(loss, x);
    for (std::int64_t r = 0; r < 3; ++r) CHECK(norms[r] == 0.0);
  }
  SECTION("linear map w=[3,4]: norm 5 for every sample") {
    G g;
    int x = g.input(T(4, 2, {1, 0, 0, 1, -2, 3, 0.5, 0.5}));
    int w = g.constant(T(2, 1, {3, 4}));
    auto norms = g.input_gradient_norms(g.sum(g.matmul(x, w)), x);
    for (std::int64_t r = 0; r < 4; ++r) CHECK(norms[r] == Catch::Approx(5.0).margin(1e-12));
  }
  SECTION("sum over d dims: norm sqrt(d)") {
    const std::int64_t d = 7;
    G g;
    int x = g.input(T(2, d, 1.0));
    auto norms = g.input_gradient_norms(g.sum(x), x);
    for (std::int64_t r = 0; r < 2; ++r)
      CHECK(norms[r] == Catch::Approx(std::sqrt(static_cast<double>(d))).margin(1e-12));
  }
  SECTION("gradient w.r.t. a non-differentiable leaf is an error") {
    G g;
    int c = g.constant(T(1, 2, {1, 2}));
    int loss = g.sum(c);
    CHECK_THROWS_AS(g.grad_node(loss, loss), dgm::Error);
  }
}

TEST_CASE("analytic gradients match finite differences on random small nets") {
  Rng rng(2024);
  int trials_done = 0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::int64_t n = 1 + rng.below(8);
    const std::int64_t h = 1 + rng.below(8);
    const std::int64_t b = 1 + rng.below(6);
    Parameter<double> W1("W1", rng.normal_tensor<double>(n, h));
    Parameter<double> b1("b1", rng.normal_tensor<double>(1, h));
    Parameter<double> W2("W2", rng.normal_tensor<double>(h, 1));
    const T x = rng.normal_tensor<double>(b, n);
    const int act = static_cast<int>(rng.below(3));
    auto build = [&](G& g) {
      int hpre = dense(g, g.input(x), g.param(W1), g.param(b1));
      int hact = act == 0 ? g.leaky_relu(hpre, 0.2) : act == 1 ? g.sigmoid(hpre) : g.tanh(hpre);
      return g.mean(g.mul(g.matmul(hact, g.param(W2)), g.matmul(hact, g.param(W2))));
    };
    auto eval = [&] {
      G g;
      return g.value(build(g))[0];
    };
    G g;
    auto grads = g.backward(build(g));
    for (auto& [p, gv] : grads) {
      INFO("trial " << trial << " param " << p->name);
      CHECK(max_rel_err(gv, fd_gradient(*p, eval)) < 1e-5);
    }
    ++trials_done;
  }
  CHECK(trials_done >= 100);
}

TEST_CASE("second-order: gradient-penalty path differentiates correctly") {
  SECTION("analytic: penalty of a linear critic") {
    // f(x) = x.w, ||grad|| = ||w||; penalty (||w||-1)^2.
    auto penalty_for = [](double w0, double w1) {
      G g;
      int x = g.input(T(2, 2, {0.3, -0.7, 1.2, 0.4}));
      int w = g.constant(T(2, 1, {w0, w1}));
      int out = g.sum(g.matmul(x, w));
      int gx = g.grad_node(out, x);
      int norms = g.pow_const(g.row_sum(g.mul(gx, gx)), 0.5);
      int dev = g.add_const(norms, -1.0);
      return g.value(g.mean(g.mul(dev, dev)))[0];
    };
    CHECK(penalty_for(0.6, 0.8) == Catch::Approx(0.0).margin(1e-12));   // ||w|| = 1
    CHECK(penalty_for(1.2, 1.6) == Catch::Approx(1.0).margin(1e-12));   // ||w|| = 2
    CHECK(penalty_for(0.0, 0.0) == Catch::Approx(1.0).margin(1e-12));   // constant critic
  }
  SECTION("d(penalty)/d(theta) matches finite differences through the double backward") {
    Rng rng(99);
    for (int trial = 0; trial < 25; ++trial) {
      const std::int64_t d = 2 + rng.below(4);
      const std::int64_t h = 2 + rng.below(6);
      Parameter<double> W1("W1", rng.normal_tensor<double>(d, h));
      Parameter<double> b1("b1", rng.normal_tensor<double>(1, h));
      Parameter<double> W2("W2", rng.normal_tensor<double>(h, 1));
      const T x = rng.normal_tensor<double>(3, d);
      auto build = [&](G& g) {
        int xin = g.input(x);
        int hl = g.leaky_relu(dense(g, xin, g.param(W1), g.param(b1)), 0.2);
        int out = g.sum(g.matmul(hl, g.param(W2)));
        int gx = g.grad_node(out, xin);
        int norms = g.pow_const(g.row_sum(g.mul(gx, gx)), 0.5);
        int dev = g.add_const(norms, -1.0);
        return g.mean(g.mul(dev, dev));
      };
      auto eval = [&] {
        G g;
        return g.value(build(g))[0];
      };
      G g;
      auto grads = g.backward(build(g));
      for (auto& [p, gv] : grads) {
        INFO("trial " << trial << " param " << p->name);
        CHECK(max_rel_err(gv, fd_gradient(*p, eval)) < 1e-5);
      }
    }
  }
}

TEST_CASE("cross-entropy building blocks differentiate") {
  Rng rng(5);
  Parameter<double> W("W", rng.normal_tensor<double>(3, 4));
  Parameter<double> E("E", rng.normal_tensor<double>(4, 3));
  const T x = rng.normal_tensor<double>(5, 3);
  auto labels = std::make_shared<const std::vector<std::int64_t>>(
      std::vector<std::int64_t>{0, 2, 1, 3, 2});
  auto rows = std::make_shared<const std::vector<std::int64_t>>(
      std::vector<std::int64_t>{1, 1, 0, 3, 2});
  auto build = [&](G& g) {
    int emb = g.select_rows(g.param(E), rows);          // label embedding path
    int logits = g.matmul(g.add(g.input(x), emb), g.param(W));
    // log-softmax with detached row max for stability
    T zmax(5, 1);
    {
      G tmp;  // value-only rowmax; detached by construction
      const T& lv = g.value(logits);
      for (std::int64_t r = 0; r < 5; ++r) {
        double m = lv.at(r, 0);
        for (std::int64_t c = 1; c < 4; ++c) m = std::max(m, lv.at(r, c));
        zmax[r] = m;
      }
    }
    int zc = g.sub(logits, g.broadcast_cols(g.constant(zmax), 4));
    int lse = g.log(g.row_sum(g.exp(zc)));
    int nll = g.sub(lse, g.select_cols(zc, labels));
    return g.mean(nll);
  };
  auto eval = [&] {
    G g;
    return g.value(build(g))[0];
  };
  G g;
  auto grads = g.backward(build(g));
  CHECK(max_rel_err(grad_for(grads, E), fd_gradient(E, eval)) < 1e-5);
  CHECK(max_rel_err(grad_for(grads, W), fd_gradient(W, eval)) < 1e-5);
}

TEST_CASE("determinism: same seed and op sequence give bit-identical results") {
  auto run = [] {
    Rng rng(321);
    G g;
    Parameter<double> W("W", rng.normal_tensor<double>(6, 6));
    int x = g.input(rng.normal_tensor<double>(4, 6));
    int out = g.tanh(g.matmul(x, g.param(W)));
    auto grads = g.backward(g.mean(g.mul(out, out)));
    return std::make_pair(g.value(out), grads[0].second);
  };
  auto [o1, g1] = run();
  auto [o2, g2] = run();
  CHECK(o1.bit_equal(o2));
  CHECK(g1.bit_equal(g2));
}
