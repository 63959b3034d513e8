#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include "dgm/param.hpp"
#include "dgm/tensor.hpp"

namespace dgm {

/// Reverse-mode differentiation tape over dense rank-2 tensors.
///
/// Nodes are created eagerly (value computed on creation, checked finite).
/// backward() builds the gradient of a scalar node as *new graph nodes*, so a
/// scalar function of a gradient (the WGAN-GP penalty) can itself be
/// differentiated by running backward() again. Every op's derivative rule is
/// expressed through ops that are themselves on the tape, which closes the op
/// set under differentiation for the dense / LeakyReLU / sigmoid / tanh family.
template <typename R>
class Graph {
 public:
  enum class Op : std::uint8_t {
    Input, Const, Param,
    Add, Sub, Mul, Div,
    AddRowVec, MulRowVec,
    ColSum, BroadcastRows,
    RowSum, BroadcastCols,
    Sum, BroadcastFull,
    MatMul, MatMulNT, MatMulTN,
    Scale, AddConst,
    LeakyRelu, LeakyMask,
    Sigmoid, Tanh, Exp, Log, PowC,
    SelectCols, ScatterCols,
    SelectRows, ScatterRows,
    ConcatCols, SliceCols, PadCols,
  };

  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    double c = 0.0;                                   // scalar constant / alpha / exponent
    std::int64_t i0 = 0, i1 = 0;                      // dims / offsets
    std::shared_ptr<const std::vector<std::int64_t>> idx;  // labels for select/scatter
    Parameter<R>* param = nullptr;
    Tensor<R> val;
  };

  // ---- leaves ----

  int input(Tensor<R> v) { return push({Op::Input, -1, -1, 0, 0, 0, nullptr, nullptr, std::move(v)}); }
  int constant(Tensor<R> v) { return push({Op::Const, -1, -1, 0, 0, 0, nullptr, nullptr, std::move(v)}); }
  int scalar_const(R v) { return constant(Tensor<R>::scalar(v)); }

  /// Binds a parameter as a leaf node. A parameter already on this tape
  /// returns its existing node, so gradients accumulate across every use.
  int param(Parameter<R>& p) {
    for (int pid : params_)
      if (nodes_[static_cast<std::size_t>(pid)].param == &p) return pid;
    const int id = push({Op::Param, -1, -1, 0, 0, 0, nullptr, &p, p.value});
    params_.push_back(id);
    return id;
  }

  // ---- elementwise / broadcast ----

  int add(int a, int b) { return binary(Op::Add, a, b); }
  int sub(int a, int b) { return binary(Op::Sub, a, b); }
  int mul(int a, int b) { return binary(Op::Mul, a, b); }
  int div(int a, int b) { return binary(Op::Div, a, b); }

  int add_row_vec(int x, int v) { return rowvec(Op::AddRowVec, x, v); }
  int mul_row_vec(int x, int v) { return rowvec(Op::MulRowVec, x, v); }

  int col_sum(int x) { return push(make(Op::ColSum, x)); }
  int broadcast_rows(int v, std::int64_t n) {
    Node nd = make(Op::BroadcastRows, v);
    nd.i0 = n;
    return push(nd);
  }
  int row_sum(int x) { return push(make(Op::RowSum, x)); }
  int broadcast_cols(int v, std::int64_t d) {
    Node nd = make(Op::BroadcastCols, v);
    nd.i0 = d;
    return push(nd);
  }
  int sum(int x) { return push(make(Op::Sum, x)); }
  int broadcast_full(int s, std::int64_t r, std::int64_t c) {
    Node nd = make(Op::BroadcastFull, s);
    nd.i0 = r;
    nd.i1 = c;
    return push(nd);
  }

  int matmul(int a, int b) { return binary(Op::MatMul, a, b); }
  int matmul_nt(int a, int b) { return binary(Op::MatMulNT, a, b); }
  int matmul_tn(int a, int b) { return binary(Op::MatMulTN, a, b); }

  int scale(int x, double c) {
    Node nd = make(Op::Scale, x);
    nd.c = c;
    return push(nd);
  }
  int add_const(int x, double c) {
    Node nd = make(Op::AddConst, x);
    nd.c = c;
    return push(nd);
  }
  int neg(int x) { return scale(x, -1.0); }
  int one_minus(int x) { return add_const(scale(x, -1.0), 1.0); }

  int leaky_relu(int x, double alpha) {
    Node nd = make(Op::LeakyRelu, x);
    nd.c = alpha;
    return push(nd);
  }
  int sigmoid(int x) { return push(make(Op::Sigmoid, x)); }
  int tanh(int x) { return push(make(Op::Tanh, x)); }
  int exp(int x) { return push(make(Op::Exp, x)); }
  int log(int x) { return push(make(Op::Log, x)); }
  /// x^p elementwise with the safe convention 0^p := 0 for every p (keeps the
  /// gradient-norm path well defined when a gradient is exactly zero).
  int pow_const(int x, double p) {
    Node nd = make(Op::PowC, x);
    nd.c = p;
    return push(nd);
  }

  int select_cols(int z, std::shared_ptr<const std::vector<std::int64_t>> labels) {
    Node nd = make(Op::SelectCols, z);
    nd.idx = std::move(labels);
    return push(nd);
  }
  int select_rows(int e, std::shared_ptr<const std::vector<std::int64_t>> labels) {
    Node nd = make(Op::SelectRows, e);
    nd.idx = std::move(labels);
    return push(nd);
  }
  int concat_cols(int a, int b) { return binary(Op::ConcatCols, a, b); }
  int slice_cols(int x, std::int64_t off, std::int64_t len) {
    Node nd = make(Op::SliceCols, x);
    nd.i0 = off;
    nd.i1 = len;
    return push(nd);
  }

  int mean(int x) {
    const std::int64_t n = node(x).val.size();
    return scale(sum(x), n > 0 ? 1.0 / static_cast<double>(n) : 0.0);
  }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Tensor<R>& value(int id) const { return node(id).val; }
  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<int>& param_nodes() const { return params_; }

  // ---- differentiation ----

  /// Gradient of scalar node `loss` w.r.t. `target`, as a graph node
  /// (differentiable). A target unreachable from the loss yields a zero
  /// constant. `target` must be an Input or Param leaf.
  int grad_node(int loss, int target) {
    const Op top = node(target).op;
    if (top != Op::Input && top != Op::Param)
      fail("grad_node: target is not designated differentiable (Input or Param leaf)");
    BackwardPass bp = run_backward(loss, {target});
    const int g = bp.grad[static_cast<std::size_t>(target)];
    if (g >= 0) return g;
    const auto& tv = node(target).val;
    return constant(Tensor<R>(tv.rows(), tv.cols(), R(0)));
  }

  /// Per-sample L2 norms of d(scalar)/d(input): ||grad_x f||_2 row by row.
  Tensor<R> input_gradient_norms(int loss, int input) {
    const int g = grad_node(loss, input);
    const int norms = pow_const(row_sum(mul(g, g)), 0.5);
    return value(norms);
  }

  /// Value-level gradients for every registered parameter of this graph, with
  /// gate hooks already applied. A parameter disconnected from the loss gets a
  /// zero gradient (not an error).
  std::vector<std::pair<Parameter<R>*, Tensor<R>>> backward(int loss) {
    return backward_over(loss, params_);
  }

  /// Same as backward() but restricted to the given parameters (others act as
  /// constants for this pass; no gradient work is spent on them). A parameter
  /// that never entered this graph is disconnected: zero gradient.
  std::vector<std::pair<Parameter<R>*, Tensor<R>>> backward(
      int loss, const std::vector<Parameter<R>*>& subset) {
    std::vector<int> ids;
    std::vector<Parameter<R>*> absent;
    ids.reserve(subset.size());
    for (Parameter<R>* p : subset) {
      int found = -1;
      for (int pid : params_)
        if (nodes_[static_cast<std::size_t>(pid)].param == p) {
          found = pid;
          break;
        }
      if (found >= 0)
        ids.push_back(found);
      else
        absent.push_back(p);
    }
    auto out = backward_over(loss, ids);
    for (Parameter<R>* p : absent)
      out.emplace_back(p, Tensor<R>(p->value.rows(), p->value.cols(), R(0)));
    return out;
  }

 private:
  std::vector<std::pair<Parameter<R>*, Tensor<R>>> backward_over(int loss,
                                                                 const std::vector<int>& ids) {
    BackwardPass bp = run_backward(loss, ids);
    std::vector<std::pair<Parameter<R>*, Tensor<R>>> out;
    out.reserve(ids.size());
    for (int pid : ids) {
      Parameter<R>* p = nodes_[static_cast<std::size_t>(pid)].param;
      const int g = bp.grad[static_cast<std::size_t>(pid)];
      Tensor<R> gv = g >= 0 ? value(g) : Tensor<R>(p->value.rows(), p->value.cols(), R(0));
      if (p->gate) {
        check_same_shape(gv, *p->gate, "gate hook");
        for (std::int64_t i = 0; i < gv.size(); ++i) gv[i] *= (*p->gate)[i];
      }
      out.emplace_back(p, std::move(gv));
    }
    return out;
  }

  struct BackwardPass {
    std::vector<int> grad;      // node id -> grad node id (or -1), over [0, loss]
    std::vector<char> relevant;  // node id -> lies on a path from a target to the loss
  };

  BackwardPass run_backward(int loss, const std::vector<int>& targets) {
    const Node& ln = node(loss);
    if (ln.val.rows() != 1 || ln.val.cols() != 1)
      fail("backward: loss must be scalar, got " + ln.val.shape_str());
    BackwardPass bp;
    const std::size_t n = static_cast<std::size_t>(loss) + 1;
    bp.grad.assign(n, -1);
    bp.relevant.assign(n, 0);
    for (int t : targets)
      if (t <= loss) bp.relevant[static_cast<std::size_t>(t)] = 1;
    for (std::size_t nid = 0; nid < n; ++nid) {
      if (bp.relevant[nid]) continue;
      const Node& nd = nodes_[nid];
      if ((nd.a >= 0 && bp.relevant[static_cast<std::size_t>(nd.a)]) ||
          (nd.b >= 0 && bp.relevant[static_cast<std::size_t>(nd.b)]))
        bp.relevant[nid] = 1;
    }
    bp.grad[static_cast<std::size_t>(loss)] = constant(Tensor<R>(1, 1, R(1)));
    for (int nid = loss; nid >= 0; --nid) {
      const int g = bp.grad[static_cast<std::size_t>(nid)];
      if (g < 0) continue;
      vjp(nid, g, bp);
    }
    return bp;
  }

  // Gradient work is pruned to nodes that can actually reach a target: callers
  // must test want() before building a contribution node.
  bool want(const BackwardPass& bp, int target) const {
    return bp.relevant[static_cast<std::size_t>(target)] != 0;
  }

  void accumulate(BackwardPass& bp, int target, int contrib) {
    int& slot = bp.grad[static_cast<std::size_t>(target)];
    slot = slot < 0 ? contrib : add(slot, contrib);
  }

  // Emits the gradient contributions of node `nid` to its inputs. All
  // contributions are regular graph nodes, so a second backward pass through
  // them yields second-order derivatives.
  void vjp(int nid, int g, BackwardPass& bp) {
    // Copy POD fields up front: pushing nodes may reallocate the node vector.
    const Op op = node(nid).op;
    const int a = node(nid).a;
    const int b = node(nid).b;
    const double c = node(nid).c;
    const std::int64_t i0 = node(nid).i0;
    auto idx = node(nid).idx;
    const bool wa = a >= 0 && want(bp, a);
    const bool wb = b >= 0 && want(bp, b);
    if (!wa && !wb) return;
    switch (op) {
      case Op::Input:
      case Op::Const:
      case Op::Param:
        break;
      case Op::Add:
        if (wa) accumulate(bp, a, g);
        if (wb) accumulate(bp, b, g);
        break;
      case Op::Sub:
        if (wa) accumulate(bp, a, g);
        if (wb) accumulate(bp, b, neg(g));
        break;
      case Op::Mul:
        if (wa) accumulate(bp, a, mul(g, b));
        if (wb) accumulate(bp, b, mul(g, a));
        break;
      case Op::Div:
        if (wa) accumulate(bp, a, div(g, b));
        if (wb) accumulate(bp, b, neg(div(mul(g, nid), b)));
        break;
      case Op::AddRowVec:
        if (wa) accumulate(bp, a, g);
        if (wb) accumulate(bp, b, col_sum(g));
        break;
      case Op::MulRowVec:
        if (wa) accumulate(bp, a, mul_row_vec(g, b));
        if (wb) accumulate(bp, b, col_sum(mul(g, a)));
        break;
      case Op::ColSum:
        accumulate(bp, a, broadcast_rows(g, node(a).val.rows()));
        break;
      case Op::BroadcastRows:
        accumulate(bp, a, col_sum(g));
        break;
      case Op::RowSum:
        accumulate(bp, a, broadcast_cols(g, node(a).val.cols()));
        break;
      case Op::BroadcastCols:
        accumulate(bp, a, row_sum(g));
        break;
      case Op::Sum:
        accumulate(bp, a, broadcast_full(g, node(a).val.rows(), node(a).val.cols()));
        break;
      case Op::BroadcastFull:
        accumulate(bp, a, sum(g));
        break;
      case Op::MatMul:
        if (wa) accumulate(bp, a, matmul_nt(g, b));
        if (wb) accumulate(bp, b, matmul_tn(a, g));
        break;
      case Op::MatMulNT:
        if (wa) accumulate(bp, a, matmul(g, b));
        if (wb) accumulate(bp, b, matmul_tn(g, a));
        break;
      case Op::MatMulTN:
        if (wa) accumulate(bp, a, matmul_nt(b, g));
        if (wb) accumulate(bp, b, matmul(a, g));
        break;
      case Op::Scale:
        accumulate(bp, a, scale(g, c));
        break;
      case Op::AddConst:
        accumulate(bp, a, g);
        break;
      case Op::LeakyRelu: {
        Node m = make(Op::LeakyMask, a);
        m.c = c;
        accumulate(bp, a, mul(g, push(m)));
        break;
      }
      case Op::LeakyMask:
        break;  // piecewise constant: zero derivative a.e.
      case Op::Sigmoid:
        accumulate(bp, a, mul(g, mul(nid, one_minus(nid))));
        break;
      case Op::Tanh:
        accumulate(bp, a, mul(g, one_minus(mul(nid, nid))));
        break;
      case Op::Exp:
        accumulate(bp, a, mul(g, nid));
        break;
      case Op::Log:
        accumulate(bp, a, div(g, a));
        break;
      case Op::PowC:
        accumulate(bp, a, mul(g, scale(pow_const(a, c - 1.0), c)));
        break;
      case Op::SelectCols: {
        Node s = make_unary_raw(Op::ScatterCols, g);
        s.idx = idx;
        s.i0 = node(a).val.cols();
        accumulate(bp, a, push(s));
        break;
      }
      case Op::ScatterCols:
        accumulate(bp, a, select_cols(g, idx));
        break;
      case Op::SelectRows: {
        Node s = make_unary_raw(Op::ScatterRows, g);
        s.idx = idx;
        s.i0 = node(a).val.rows();
        accumulate(bp, a, push(s));
        break;
      }
      case Op::ScatterRows:
        accumulate(bp, a, select_rows(g, idx));
        break;
      case Op::ConcatCols: {
        const std::int64_t da = node(a).val.cols();
        const std::int64_t db = node(b).val.cols();
        if (wa) accumulate(bp, a, slice_cols(g, 0, da));
        if (wb) accumulate(bp, b, slice_cols(g, da, db));
        break;
      }
      case Op::SliceCols: {
        const std::int64_t total = node(a).val.cols();
        Node p = make_unary_raw(Op::PadCols, g);
        p.i0 = i0;                       // zeros on the left
        p.i1 = total - i0 - node(nid).val.cols();  // zeros on the right
        accumulate(bp, a, push(p));
        break;
      }
      case Op::PadCols:
        accumulate(bp, a, slice_cols(g, i0, node(a).val.cols()));
        break;
    }
  }

  Node make(Op op, int a) {
    require_id(a);
    Node nd;
    nd.op = op;
    nd.a = a;
    return nd;
  }
  Node make_unary_raw(Op op, int a) { return make(op, a); }

  int binary(Op op, int a, int b) {
    require_id(a);
    require_id(b);
    Node nd;
    nd.op = op;
    nd.a = a;
    nd.b = b;
    return push(nd);
  }
  int rowvec(Op op, int x, int v) {
    require_id(x);
    require_id(v);
    Node nd;
    nd.op = op;
    nd.a = x;
    nd.b = v;
    return push(nd);
  }

  void require_id(int id) {
    if (id < 0 || id >= size()) fail("graph: invalid node id");
  }

  int push(Node nd) {
    if (nd.op != Op::Input && nd.op != Op::Const && nd.op != Op::Param) eval(nd);
    if (!nd.val.all_finite())
      fail(std::string("graph: non-finite value produced by op ") + op_name(nd.op));
    nodes_.push_back(std::move(nd));
    return static_cast<int>(nodes_.size()) - 1;
  }

  static const char* op_name(Op op) {
    switch (op) {
      case Op::Input: return "Input";
      case Op::Const: return "Const";
      case Op::Param: return "Param";
      case Op::Add: return "Add";
      case Op::Sub: return "Sub";
      case Op::Mul: return "Mul";
      case Op::Div: return "Div";
      case Op::AddRowVec: return "AddRowVec";
      case Op::MulRowVec: return "MulRowVec";
      case Op::ColSum: return "ColSum";
      case Op::BroadcastRows: return "BroadcastRows";
      case Op::RowSum: return "RowSum";
      case Op::BroadcastCols: return "BroadcastCols";
      case Op::Sum: return "Sum";
      case Op::BroadcastFull: return "BroadcastFull";
      case Op::MatMul: return "MatMul";
      case Op::MatMulNT: return "MatMulNT";
      case Op::MatMulTN: return "MatMulTN";
      case Op::Scale: return "Scale";
      case Op::AddConst: return "AddConst";
      case Op::LeakyRelu: return "LeakyRelu";
      case Op::LeakyMask: return "LeakyMask";
      case Op::Sigmoid: return "Sigmoid";
      case Op::Tanh: return "Tanh";
      case Op::Exp: return "Exp";
      case Op::Log: return "Log";
      case Op::PowC: return "PowC";
      case Op::SelectCols: return "SelectCols";
      case Op::ScatterCols: return "ScatterCols";
      case Op::SelectRows: return "SelectRows";
      case Op::ScatterRows: return "ScatterRows";
      case Op::ConcatCols: return "ConcatCols";
      case Op::SliceCols: return "SliceCols";
      case Op::PadCols: return "PadCols";
    }
    return "?";
  }

  void eval(Node& nd) {
    const Tensor<R>& A = nd.a >= 0 ? node(nd.a).val : nd.val;
    switch (nd.op) {
      case Op::Input:
      case Op::Const:
      case Op::Param:
        break;
      case Op::Add:
      case Op::Sub:
      case Op::Mul:
      case Op::Div: {
        const Tensor<R>& B = node(nd.b).val;
        check_same_shape(A, B, op_name(nd.op));
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t i = 0; i < A.size(); ++i) {
          switch (nd.op) {
            case Op::Add: nd.val[i] = A[i] + B[i]; break;
            case Op::Sub: nd.val[i] = A[i] - B[i]; break;
            case Op::Mul: nd.val[i] = A[i] * B[i]; break;
            default: nd.val[i] = A[i] / B[i]; break;
          }
        }
        break;
      }
      case Op::AddRowVec:
      case Op::MulRowVec: {
        const Tensor<R>& V = node(nd.b).val;
        if (V.rows() != 1 || V.cols() != A.cols())
          fail(std::string(op_name(nd.op)) + ": row vector " + V.shape_str() +
               " does not match matrix " + A.shape_str());
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t r = 0; r < A.rows(); ++r)
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx)
            nd.val.at(r, cidx) = nd.op == Op::AddRowVec ? A.at(r, cidx) + V[cidx]
                                                        : A.at(r, cidx) * V[cidx];
        break;
      }
      case Op::ColSum: {
        nd.val = Tensor<R>(1, A.cols());
        for (std::int64_t r = 0; r < A.rows(); ++r)
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx) nd.val[cidx] += A.at(r, cidx);
        break;
      }
      case Op::BroadcastRows: {
        if (A.rows() != 1) fail("BroadcastRows: expected 1-row input, got " + A.shape_str());
        nd.val = Tensor<R>(nd.i0, A.cols());
        for (std::int64_t r = 0; r < nd.i0; ++r)
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx) nd.val.at(r, cidx) = A[cidx];
        break;
      }
      case Op::RowSum: {
        nd.val = Tensor<R>(A.rows(), 1);
        for (std::int64_t r = 0; r < A.rows(); ++r) {
          R s = R(0);
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx) s += A.at(r, cidx);
          nd.val[r] = s;
        }
        break;
      }
      case Op::BroadcastCols: {
        if (A.cols() != 1) fail("BroadcastCols: expected 1-col input, got " + A.shape_str());
        nd.val = Tensor<R>(A.rows(), nd.i0);
        for (std::int64_t r = 0; r < A.rows(); ++r)
          for (std::int64_t cidx = 0; cidx < nd.i0; ++cidx) nd.val.at(r, cidx) = A[r];
        break;
      }
      case Op::Sum: {
        R s = R(0);
        for (std::int64_t i = 0; i < A.size(); ++i) s += A[i];
        nd.val = Tensor<R>::scalar(s);
        break;
      }
      case Op::BroadcastFull: {
        if (A.size() != 1) fail("BroadcastFull: expected scalar input, got " + A.shape_str());
        nd.val = Tensor<R>(nd.i0, nd.i1, A[0]);
        break;
      }
      case Op::MatMul:
      case Op::MatMulNT:
      case Op::MatMulTN: {
        const Tensor<R>& B = node(nd.b).val;
        matmul_eval(nd, A, B);
        break;
      }
      case Op::Scale: {
        nd.val = A;
        for (std::int64_t i = 0; i < nd.val.size(); ++i)
          nd.val[i] = static_cast<R>(nd.val[i] * static_cast<R>(nd.c));
        break;
      }
      case Op::AddConst: {
        nd.val = A;
        for (std::int64_t i = 0; i < nd.val.size(); ++i)
          nd.val[i] = static_cast<R>(nd.val[i] + static_cast<R>(nd.c));
        break;
      }
      case Op::LeakyRelu: {
        nd.val = A;
        const R alpha = static_cast<R>(nd.c);
        for (std::int64_t i = 0; i < nd.val.size(); ++i)
          if (nd.val[i] < R(0)) nd.val[i] *= alpha;
        break;
      }
      case Op::LeakyMask: {
        nd.val = Tensor<R>(A.rows(), A.cols());
        const R alpha = static_cast<R>(nd.c);
        for (std::int64_t i = 0; i < A.size(); ++i) nd.val[i] = A[i] > R(0) ? R(1) : alpha;
        break;
      }
      case Op::Sigmoid: {
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t i = 0; i < A.size(); ++i)
          nd.val[i] = R(1) / (R(1) + std::exp(-A[i]));
        break;
      }
      case Op::Tanh: {
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t i = 0; i < A.size(); ++i) nd.val[i] = std::tanh(A[i]);
        break;
      }
      case Op::Exp: {
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t i = 0; i < A.size(); ++i) nd.val[i] = std::exp(A[i]);
        break;
      }
      case Op::Log: {
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t i = 0; i < A.size(); ++i) nd.val[i] = std::log(A[i]);
        break;
      }
      case Op::PowC: {
        nd.val = Tensor<R>(A.rows(), A.cols());
        for (std::int64_t i = 0; i < A.size(); ++i)
          nd.val[i] = A[i] == R(0) ? R(0) : static_cast<R>(std::pow(A[i], nd.c));
        break;
      }
      case Op::SelectCols: {
        const auto& labels = *nd.idx;
        if (static_cast<std::int64_t>(labels.size()) != A.rows())
          fail("SelectCols: label count does not match batch rows");
        nd.val = Tensor<R>(A.rows(), 1);
        for (std::int64_t r = 0; r < A.rows(); ++r) {
          const std::int64_t k = labels[static_cast<std::size_t>(r)];
          if (k < 0 || k >= A.cols()) fail("SelectCols: label out of range");
          nd.val[r] = A.at(r, k);
        }
        break;
      }
      case Op::ScatterCols: {
        const auto& labels = *nd.idx;
        if (A.cols() != 1) fail("ScatterCols: expected 1-col input");
        nd.val = Tensor<R>(A.rows(), nd.i0);
        for (std::int64_t r = 0; r < A.rows(); ++r)
          nd.val.at(r, labels[static_cast<std::size_t>(r)]) = A[r];
        break;
      }
      case Op::SelectRows: {
        const auto& labels = *nd.idx;
        nd.val = Tensor<R>(static_cast<std::int64_t>(labels.size()), A.cols());
        for (std::size_t r = 0; r < labels.size(); ++r) {
          const std::int64_t k = labels[r];
          if (k < 0 || k >= A.rows()) fail("SelectRows: row index out of range");
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx)
            nd.val.at(static_cast<std::int64_t>(r), cidx) = A.at(k, cidx);
        }
        break;
      }
      case Op::ScatterRows: {
        const auto& labels = *nd.idx;
        if (static_cast<std::int64_t>(labels.size()) != A.rows())
          fail("ScatterRows: label count does not match rows");
        nd.val = Tensor<R>(nd.i0, A.cols());
        for (std::size_t r = 0; r < labels.size(); ++r)
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx)
            nd.val.at(labels[r], cidx) += A.at(static_cast<std::int64_t>(r), cidx);
        break;
      }
      case Op::ConcatCols: {
        const Tensor<R>& B = node(nd.b).val;
        if (A.rows() != B.rows())
          fail("ConcatCols: row mismatch " + A.shape_str() + " vs " + B.shape_str());
        nd.val = Tensor<R>(A.rows(), A.cols() + B.cols());
        for (std::int64_t r = 0; r < A.rows(); ++r) {
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx) nd.val.at(r, cidx) = A.at(r, cidx);
          for (std::int64_t cidx = 0; cidx < B.cols(); ++cidx)
            nd.val.at(r, A.cols() + cidx) = B.at(r, cidx);
        }
        break;
      }
      case Op::SliceCols: {
        if (nd.i0 < 0 || nd.i1 < 0 || nd.i0 + nd.i1 > A.cols())
          fail("SliceCols: range out of bounds for " + A.shape_str());
        nd.val = Tensor<R>(A.rows(), nd.i1);
        for (std::int64_t r = 0; r < A.rows(); ++r)
          for (std::int64_t cidx = 0; cidx < nd.i1; ++cidx)
            nd.val.at(r, cidx) = A.at(r, nd.i0 + cidx);
        break;
      }
      case Op::PadCols: {
        nd.val = Tensor<R>(A.rows(), nd.i0 + A.cols() + nd.i1);
        for (std::int64_t r = 0; r < A.rows(); ++r)
          for (std::int64_t cidx = 0; cidx < A.cols(); ++cidx)
            nd.val.at(r, nd.i0 + cidx) = A.at(r, cidx);
        break;
      }
    }
  }

  void matmul_eval(Node& nd, const Tensor<R>& A, const Tensor<R>& B) {
    std::int64_t m, k, k2, n;
    if (nd.op == Op::MatMul) {
      m = A.rows(); k = A.cols(); k2 = B.rows(); n = B.cols();
    } else if (nd.op == Op::MatMulNT) {
      m = A.rows(); k = A.cols(); k2 = B.cols(); n = B.rows();
    } else {  // MatMulTN
      m = A.cols(); k = A.rows(); k2 = B.rows(); n = B.cols();
    }
    if (k != k2)
      fail(std::string(op_name(nd.op)) + ": inner dimension mismatch " + A.shape_str() +
           " vs " + B.shape_str());
    nd.val = Tensor<R>(m, n);
    // Accumulation runs in ascending inner index; appended (zero) units from
    // expansion therefore never change earlier partial sums bit-for-bit.
    if (nd.op == Op::MatMul) {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t kk = 0; kk < k; ++kk) {
          const R a = A.at(i, kk);
          if (a == R(0)) continue;
          for (std::int64_t j = 0; j < n; ++j) nd.val.at(i, j) += a * B.at(kk, j);
        }
    } else if (nd.op == Op::MatMulNT) {
      for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) {
          R s = R(0);
          for (std::int64_t kk = 0; kk < k; ++kk) s += A.at(i, kk) * B.at(j, kk);
          nd.val.at(i, j) = s;
        }
    } else {
      for (std::int64_t kk = 0; kk < k; ++kk)
        for (std::int64_t i = 0; i < m; ++i) {
          const R a = A.at(kk, i);
          if (a == R(0)) continue;
          for (std::int64_t j = 0; j < n; ++j) nd.val.at(i, j) += a * B.at(kk, j);
        }
    }
  }

  std::vector<Node> nodes_;
  std::vector<int> params_;
};

}  // namespace dgm
