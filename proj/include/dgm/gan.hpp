#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "dgm/anneal.hpp"
#include "dgm/expansion.hpp"
#include "dgm/graph.hpp"
#include "dgm/masks.hpp"
#include "dgm/optim.hpp"
#include "dgm/rng.hpp"

namespace dgm {

/// How the generator's masks enter a forward pass: the current task's soft
/// mask sigma(s*e), or a stored binary snapshot for replaying task j.
struct MaskMode {
  bool soft = true;
  double s = 1.0;
  std::size_t task_index = 0;
  static MaskMode training(double s) { return {true, s, 0}; }
  static MaskMode snapshot(std::size_t j) { return {false, 0.0, j}; }
};

/// Mean cross-entropy of softmax(logits) against integer labels, built on the
/// tape (log-sum-exp with a detached row max; exact gradient either way since
/// LSE is shift invariant).
template <typename R>
int softmax_ce_mean(Graph<R>& g, int logits, std::shared_ptr<const std::vector<std::int64_t>> labels) {
  const Tensor<R>& lv = g.value(logits);
  const std::int64_t batch = lv.rows(), k = lv.cols();
  Tensor<R> zmax(batch, 1);
  for (std::int64_t r = 0; r < batch; ++r) {
    R m = lv.at(r, 0);
    for (std::int64_t c = 1; c < k; ++c) m = std::max(m, lv.at(r, c));
    zmax[r] = m;
  }
  const int zc = g.sub(logits, g.broadcast_cols(g.constant(zmax), k));
  const int lse = g.log(g.row_sum(g.exp(zc)));
  const int nll = g.sub(lse, g.select_cols(zc, std::move(labels)));
  return g.scale(g.sum(nll), 1.0 / static_cast<double>(batch));
}

/// Label-conditional generator with per-task masks on every layer. Hidden
/// layers are LeakyReLU; DGMa masks multiply the activations (one value per
/// neuron), DGMw masks multiply the weights entrywise, including the tanh
/// output layer (which carries no bias and, like the paper's Eq. 7, stays out
/// of the sparsity regularizer).
template <typename R>
class Generator {
 public:
  MaskVariant variant = MaskVariant::DGMa;
  double leaky_alpha = 0.2;
  std::int64_t latent_dim = 0, label_dim = 0, data_dim = 0;

  Parameter<R> label_embed;  // classes x label_dim; rows freeze as tasks finish
  std::vector<LayerSlot<R>> hidden;
  std::vector<LayerMask<R>> hmasks;
  LayerSlot<R> output;
  LayerMask<R> omask;  // meaningful for DGMw only

  std::vector<std::vector<std::int64_t>> task_classes;  // classes per task (current last)
  std::int64_t completed_tasks = 0;

  void init(MaskVariant v, std::int64_t latent, std::int64_t label_emb,
            const std::vector<std::int64_t>& hidden_sizes, std::int64_t out_dim, Rng& rng) {
    variant = v;
    latent_dim = latent;
    label_dim = label_emb;
    data_dim = out_dim;
    label_embed = Parameter<R>("g.embed", Tensor<R>(0, label_emb));
    hidden.clear();
    hmasks.clear();
    std::int64_t in = latent + label_emb;
    for (std::size_t l = 0; l < hidden_sizes.size(); ++l) {
      LayerSlot<R> slot;
      LayerMask<R> mask;
      const std::string name = "g.h" + std::to_string(l);
      slot.init(v, in, hidden_sizes[l], name, rng);
      mask.init(v, in, hidden_sizes[l], name);
      hidden.push_back(std::move(slot));
      hmasks.push_back(std::move(mask));
      in = hidden_sizes[l];
    }
    output.init(v, in, out_dim, "g.out", rng, /*with_bias=*/false);
    omask.init(v, in, out_dim, "g.out", /*regularize=*/false);
    task_classes.clear();
    completed_tasks = 0;
  }

  bool output_masked() const { return variant == MaskVariant::DGMw; }

  std::int64_t num_classes() const { return label_embed.value.rows(); }

  /// Registers a new task's classes: embedding rows appear for unseen class
  /// ids and every mask gets a fresh zero embedding (soft mask 0.5).
  void begin_task(const std::vector<std::int64_t>& classes, Rng& rng) {
    std::int64_t max_id = num_classes() - 1;
    for (std::int64_t c : classes) max_id = std::max(max_id, c);
    if (max_id + 1 > num_classes()) {
      const double lim = LayerSlot<R>::glorot_limit(1, label_dim);
      Tensor<R> grown(max_id + 1, label_dim);
      for (std::int64_t r = 0; r < label_embed.value.rows(); ++r)
        for (std::int64_t c = 0; c < label_dim; ++c) grown.at(r, c) = label_embed.value.at(r, c);
      for (std::int64_t r = label_embed.value.rows(); r < max_id + 1; ++r)
        for (std::int64_t c = 0; c < label_dim; ++c)
          grown.at(r, c) = static_cast<R>(rng.uniform(-lim, lim));
      label_embed.value = std::move(grown);
    }
    label_embed.clear_gate();
    task_classes.push_back(classes);
    for (auto& m : hmasks) m.begin_task();
    omask.begin_task();
  }

  int mask_node(Graph<R>& g, LayerMask<R>& m, const MaskMode& mode) {
    if (mode.soft) return g.sigmoid(g.scale(g.param(m.embedding), mode.s));
    return g.constant(m.snapshot_tensor(mode.task_index));
  }

  /// Builds the masked forward pass. `z` is an existing graph node
  /// (batch x latent_dim); labels are global class ids.
  int forward(Graph<R>& g, int z,
              std::shared_ptr<const std::vector<std::int64_t>> labels, const MaskMode& mode) {
    validate_labels(*labels, mode);
    const int emb = g.select_rows(g.param(label_embed), labels);
    int x = g.concat_cols(z, emb);
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      const int m = mask_node(g, hmasks[l], mode);
      if (variant == MaskVariant::DGMw) {
        const int wm = g.mul(g.param(hidden[l].W), m);
        x = g.leaky_relu(g.add_row_vec(g.matmul(x, wm), g.param(hidden[l].bias)), leaky_alpha);
      } else {
        const int h =
            g.leaky_relu(g.add_row_vec(g.matmul(x, g.param(hidden[l].W)), g.param(hidden[l].bias)),
                         leaky_alpha);
        x = g.mul_row_vec(h, m);
      }
    }
    if (output_masked()) {
      const int wm = g.mul(g.param(output.W), mask_node(g, omask, mode));
      return g.tanh(g.matmul(x, wm));
    }
    return g.tanh(g.matmul(x, g.param(output.W)));
  }

  /// Samples under a stored task mask with explicit inputs (the replay path;
  /// bit-deterministic given (z, y)).
  Tensor<R> sample_given(std::size_t task_index, const Tensor<R>& z,
                         const std::vector<std::int64_t>& labels) {
    if (task_index >= task_classes.size()) fail("sample: unknown task index");
    Graph<R> g;
    auto lab = std::make_shared<const std::vector<std::int64_t>>(labels);
    return g.value(forward(g, g.input(z), lab, MaskMode::snapshot(task_index)));
  }

  /// Samples `count` items for task j: z ~ N(0,1), labels uniform over the
  /// task's classes unless an explicit list is given.
  std::pair<Tensor<R>, std::vector<std::int64_t>> sample(std::size_t task_index,
                                                         std::int64_t count, Rng& rng,
                                                         const std::vector<std::int64_t>* labels =
                                                             nullptr) {
    if (task_index >= task_classes.size()) fail("sample: unknown task index");
    std::vector<std::int64_t> y;
    if (labels) {
      y = *labels;
      if (static_cast<std::int64_t>(y.size()) != count) fail("sample: label count mismatch");
    } else {
      const auto& cls = task_classes[task_index];
      y.reserve(static_cast<std::size_t>(count));
      for (std::int64_t i = 0; i < count; ++i)
        y.push_back(cls[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(cls.size())))]);
    }
    const Tensor<R> z = rng.template normal_tensor<R>(count, latent_dim);
    return {sample_given(task_index, z, y), std::move(y)};
  }

  /// Per-task binarization of every mask; returns reserved deltas per hidden
  /// layer (for expansion) and marks the task complete.
  std::vector<std::int64_t> binarize_and_reserve() {
    std::vector<std::int64_t> deltas;
    for (auto& m : hmasks) {
      const Bitset before = m.cumulated;
      m.binarize_and_reserve();
      deltas.push_back(reserved_delta(before, m.cumulated));
    }
    omask.binarize_and_reserve();  // output mask reserved but never expanded
    completed_tasks += 1;
    return deltas;
  }

  /// Post-task growth restoring per-layer free capacity; the next layer's
  /// input (and the output layer) grows along. Stored snapshots zero-pad, so
  /// earlier tasks' functions are untouched.
  void expand(const std::vector<std::int64_t>& deltas, std::int64_t task, Rng& rng) {
    for (std::size_t l = 0; l < hidden.size(); ++l) {
      std::int64_t added = 0;
      if (variant == MaskVariant::DGMa)
        added = expand_dgma(hidden[l], hmasks[l], deltas[l], task, rng);
      else
        added = expand_dgmw(hidden[l], hmasks[l], deltas[l], task, rng);
      if (added > 0) {
        if (l + 1 < hidden.size())
          add_input_units(hidden[l + 1], hmasks[l + 1], added, rng);
        else
          add_input_units(output, omask, added, rng);
      }
    }
  }

  /// Refreshes every gate hook from the current soft masks (Eq. 6 style:
  /// 1 - max(m_soft, m_cum)). Under DGMw, biases are gated by unit occupancy
  /// (max over the unit's incoming and outgoing mask entries); under DGMa the
  /// neuron's own gate applies. The unmasked DGMa output layer is gated on the
  /// input side by the last hidden mask, and label-embedding rows of finished
  /// tasks are frozen. Together these make every parameter reachable by a
  /// stored snapshot's forward pass exactly frozen once its task completes.
  void refresh_gates(double s) {
    std::vector<Tensor<R>> eff;  // max(soft, cum) per hidden mask
    for (auto& m : hmasks) eff.push_back(effective_mask(m, s));
    const Tensor<R> eff_out = effective_mask(omask, s);

    for (std::size_t l = 0; l < hidden.size(); ++l) {
      LayerSlot<R>& slot = hidden[l];
      const Tensor<R>& m = eff[l];
      Tensor<R> wgate(slot.in_dim(), slot.out_dim());
      if (variant == MaskVariant::DGMw) {
        for (std::int64_t i = 0; i < wgate.size(); ++i) wgate[i] = R(1) - m[i];
      } else {
        for (std::int64_t r = 0; r < wgate.rows(); ++r)
          for (std::int64_t c = 0; c < wgate.cols(); ++c) wgate.at(r, c) = R(1) - m[c];
      }
      slot.W.set_gate(std::move(wgate));

      Tensor<R> bgate(1, slot.out_dim());
      for (std::int64_t c = 0; c < slot.out_dim(); ++c) {
        R occ;
        if (variant == MaskVariant::DGMa) {
          occ = m[c];
        } else {
          occ = R(0);
          for (std::int64_t r = 0; r < slot.in_dim(); ++r) occ = std::max(occ, m.at(r, c));
          const Tensor<R>& mout = l + 1 < hidden.size() ? eff[l + 1] : eff_out;
          for (std::int64_t k = 0; k < mout.cols(); ++k) occ = std::max(occ, mout.at(c, k));
        }
        bgate[c] = R(1) - occ;
      }
      slot.bias.set_gate(std::move(bgate));
    }

    Tensor<R> ogate(output.in_dim(), output.out_dim());
    if (output_masked()) {
      for (std::int64_t i = 0; i < ogate.size(); ++i) ogate[i] = R(1) - eff_out[i];
    } else {
      const Tensor<R>& last = eff.back();  // 1 x p of the last hidden layer
      for (std::int64_t r = 0; r < ogate.rows(); ++r)
        for (std::int64_t c = 0; c < ogate.cols(); ++c) ogate.at(r, c) = R(1) - last[r];
    }
    output.W.set_gate(std::move(ogate));

    Tensor<R> egate(label_embed.value.rows(), label_dim, R(1));
    for (std::int64_t t = 0; t < completed_tasks; ++t)
      for (std::int64_t c : task_classes[static_cast<std::size_t>(t)])
        for (std::int64_t j = 0; j < label_dim; ++j) egate.at(c, j) = R(0);
    label_embed.set_gate(std::move(egate));
  }

  std::vector<Parameter<R>*> weight_params() {
    std::vector<Parameter<R>*> out{&label_embed, &output.W};
    for (auto& h : hidden) {
      out.push_back(&h.W);
      out.push_back(&h.bias);
    }
    return out;
  }
  std::vector<Parameter<R>*> mask_params() {
    std::vector<Parameter<R>*> out;
    for (auto& m : hmasks) out.push_back(&m.embedding);
    if (output_masked()) out.push_back(&omask.embedding);
    return out;
  }

  /// Regularized masks (hidden layers only) paired with prior-cumulated
  /// tensors; used by both the loss builder and the metrics path.
  std::vector<LayerMask<R>*> regularized_masks() {
    std::vector<LayerMask<R>*> out;
    for (auto& m : hmasks) out.push_back(&m);
    return out;
  }

 private:
  Tensor<R> effective_mask(const LayerMask<R>& m, double s) const {
    Tensor<R> soft = m.soft_mask(s);
    for (std::int64_t i = 0; i < soft.size(); ++i)
      if (m.cumulated.get(i)) soft[i] = R(1);
    return soft;
  }

  void validate_labels(const std::vector<std::int64_t>& labels, const MaskMode& mode) const {
    const std::size_t t = mode.soft ? task_classes.size() - 1 : mode.task_index;
    if (task_classes.empty()) fail("generator: no task started");
    const auto& cls = task_classes[t];
    for (std::int64_t y : labels)
      if (std::find(cls.begin(), cls.end(), y) == cls.end())
        fail("generator: label " + std::to_string(y) + " does not belong to task " +
             std::to_string(t + 1));
  }
};

/// WGAN critic + auxiliary classifier sharing one trunk. The trunk is
/// unmasked and never expands; the auxiliary head gains zero-initialized
/// columns as classes arrive, which leaves existing logits untouched.
template <typename R>
class Discriminator {
 public:
  double leaky_alpha = 0.2;
  std::vector<LayerSlot<R>> hidden;
  LayerSlot<R> adv_head;
  Parameter<R> aux_W, aux_b;

  void init(std::int64_t in_dim, const std::vector<std::int64_t>& hidden_sizes, Rng& rng) {
    hidden.clear();
    std::int64_t in = in_dim;
    for (std::size_t l = 0; l < hidden_sizes.size(); ++l) {
      LayerSlot<R> slot;
      slot.init(MaskVariant::DGMa, in, hidden_sizes[l], "d.h" + std::to_string(l), rng);
      hidden.push_back(std::move(slot));
      in = hidden_sizes[l];
    }
    adv_head.init(MaskVariant::DGMa, in, 1, "d.adv", rng);
    aux_W = Parameter<R>("d.aux.W", Tensor<R>(in, 0));
    aux_b = Parameter<R>("d.aux.b", Tensor<R>(1, 0));
  }

  std::int64_t trunk_dim() const { return adv_head.in_dim(); }
  std::int64_t num_classes() const { return aux_W.value.cols(); }

  void grow_classes(std::int64_t total) {
    if (total < num_classes()) fail("discriminator: class count cannot shrink");
    if (total == num_classes()) return;
    aux_W.value = detail::grow_cols(aux_W.value, total - num_classes());
    aux_b.value = detail::grow_cols(aux_b.value, total - aux_b.value.cols());
  }

  int trunk(Graph<R>& g, int x) {
    int h = x;
    for (auto& slot : hidden)
      h = g.leaky_relu(g.add_row_vec(g.matmul(h, g.param(slot.W)), g.param(slot.bias)),
                       leaky_alpha);
    return h;
  }
  int adv_out(Graph<R>& g, int t) {
    return g.add_row_vec(g.matmul(t, g.param(adv_head.W)), g.param(adv_head.bias));
  }
  int aux_logits(Graph<R>& g, int t) {
    return g.add_row_vec(g.matmul(t, g.param(aux_W)), g.param(aux_b));
  }

  /// Argmax class prediction (evaluation path, no tape bookkeeping kept).
  std::vector<std::int64_t> predict(const Tensor<R>& x) {
    Graph<R> g;
    const Tensor<R>& logits = g.value(aux_logits(g, trunk(g, g.input(x))));
    std::vector<std::int64_t> out(static_cast<std::size_t>(x.rows()));
    for (std::int64_t r = 0; r < logits.rows(); ++r) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < logits.cols(); ++c)
        if (logits.at(r, c) > logits.at(r, best)) best = c;
      out[static_cast<std::size_t>(r)] = best;
    }
    return out;
  }

  std::vector<Parameter<R>*> params() {
    std::vector<Parameter<R>*> out;
    for (auto& h : hidden) {
      out.push_back(&h.W);
      out.push_back(&h.bias);
    }
    out.push_back(&adv_head.W);
    out.push_back(&adv_head.bias);
    out.push_back(&aux_W);
    out.push_back(&aux_b);
    return out;
  }
};

enum class GpPoint { Interpolate, Fake };

struct LossWeights {
  double lambda_ru = 2.0;
  double lambda_gp = 10.0;
  std::int64_t n_critic = 5;
  GpPoint gp_point = GpPoint::Interpolate;
};

/// A batch of generator samples replayed for a previously learned task.
template <typename R>
struct ReplayBatch {
  std::size_t task_index = 0;  // 0-based source task
  Tensor<R> x;
  std::vector<std::int64_t> labels;
};

struct StepMetrics {
  double l_d = 0, l_s_d = 0, l_c_d = 0, l_gp = 0;
  double l_g = 0, l_s_g = 0, l_c_g = 0;
  double r = 0, alpha = 0, s = 0;
};

/// Generator + discriminator + their optimizers; owns the alternating
/// optimization step and the loss assembly.
template <typename R>
class DgmModel {
 public:
  Generator<R> gen;
  Discriminator<R> disc;
  Optimizer<R> opt_g, opt_d, opt_e;
  LossWeights weights;
  double alpha_ratio = 1.0;  // S_t / S_free, refreshed per task
  std::int64_t d_updates = 0, g_updates = 0;
  bool gate_bypass = false;  // fault-injection hook for the selftest harness

  struct DLossParts {
    int total = -1, adv = -1, cls = -1, gp = -1;
  };
  struct GLossParts {
    int total = -1, adv = -1, cls = -1, reg = -1;
  };

  /// L_D = [-E_r adv + E_f adv] + [CE(real) + sum_j CE(replay_j)] + lambda_gp GP.
  DLossParts build_d_loss(Graph<R>& g, const Tensor<R>& real_x,
                          const std::vector<std::int64_t>& real_y, const Tensor<R>& fake_x,
                          const std::vector<ReplayBatch<R>>& replays, Rng& rng) {
    if (gen.task_classes.empty()) fail("build_d_loss: no task started");
    const std::size_t current = gen.task_classes.size() - 1;
    for (const auto& rb : replays) {
      if (rb.task_index >= current)
        fail("discriminator loss: replay batch labeled with task " +
             std::to_string(rb.task_index + 1) + " which is not a previous task");
      for (std::int64_t y : rb.labels) {
        const auto& cls = gen.task_classes[rb.task_index];
        if (std::find(cls.begin(), cls.end(), y) == cls.end())
          fail("discriminator loss: replay label " + std::to_string(y) +
               " outside its source task");
      }
    }

    DLossParts parts;
    const int xr = g.input(real_x);
    const int xf = g.input(fake_x);
    const int tr = disc.trunk(g, xr);
    const int tf = disc.trunk(g, xf);
    parts.adv = g.add(g.neg(g.mean(disc.adv_out(g, tr))), g.mean(disc.adv_out(g, tf)));

    auto ry = std::make_shared<const std::vector<std::int64_t>>(real_y);
    int cls = softmax_ce_mean(g, disc.aux_logits(g, tr), ry);
    for (const auto& rb : replays) {
      const int trep = disc.trunk(g, g.input(rb.x));
      auto ly = std::make_shared<const std::vector<std::int64_t>>(rb.labels);
      cls = g.add(cls, softmax_ce_mean(g, disc.aux_logits(g, trep), ly));
    }
    parts.cls = cls;

    parts.gp = build_gradient_penalty(g, real_x, fake_x, rng);
    parts.total = g.add(g.add(parts.adv, parts.cls), g.scale(parts.gp, weights.lambda_gp));
    return parts;
  }

  /// L_gp = E[(||grad_xhat adv(xhat)|| - 1)^2], xhat per-sample interpolates
  /// (or literally the fakes under GpPoint::Fake).
  int build_gradient_penalty(Graph<R>& g, const Tensor<R>& real_x, const Tensor<R>& fake_x,
                             Rng& rng) {
    check_same_shape(real_x, fake_x, "gradient penalty");
    Tensor<R> xhat = fake_x;
    if (weights.gp_point == GpPoint::Interpolate) {
      for (std::int64_t r = 0; r < xhat.rows(); ++r) {
        const R eps = static_cast<R>(rng.uniform());
        for (std::int64_t c = 0; c < xhat.cols(); ++c)
          xhat.at(r, c) = eps * real_x.at(r, c) + (R(1) - eps) * fake_x.at(r, c);
      }
    }
    const int xh = g.input(xhat);
    const int adv = disc.adv_out(g, disc.trunk(g, xh));
    const int gx = g.grad_node(g.sum(adv), xh);
    const int norms = g.pow_const(g.row_sum(g.mul(gx, gx)), 0.5);
    const int dev = g.add_const(norms, -1.0);
    return g.mean(g.mul(dev, dev));
  }

  /// L_G = -E adv(G) + CE_aux(G) + alpha lambda_RU R^t. The appendix writes
  /// the classification term as "- L_c^G" with L_c^G = E[y log L_aux], i.e.
  /// minus a log-likelihood; adding the cross-entropy implements exactly that.
  GLossParts build_g_loss(Graph<R>& g, int fake, const std::vector<std::int64_t>& labels,
                          double s) {
    GLossParts parts;
    const int tf = disc.trunk(g, fake);
    parts.adv = g.neg(g.mean(disc.adv_out(g, tf)));
    auto ly = std::make_shared<const std::vector<std::int64_t>>(labels);
    parts.cls = softmax_ce_mean(g, disc.aux_logits(g, tf), ly);
    parts.reg = build_regularizer(g, s);
    parts.total =
        g.add(g.add(parts.adv, parts.cls), g.scale(parts.reg, alpha_ratio * weights.lambda_ru));
    return parts;
  }

  /// R^t over the regularized (hidden) masks, differentiable in the mask
  /// embeddings. Denominator is the free-entry count under m^{<t}; an
  /// exhausted network returns constant 0.
  int build_regularizer(Graph<R>& g, double s) {
    double denom = 0.0;
    int num = -1;
    for (LayerMask<R>* m : gen.regularized_masks()) {
      Tensor<R> freeness(m->mask_rows(), m->mask_cols());
      for (std::int64_t i = 0; i < freeness.size(); ++i)
        freeness[i] = m->cumulated.get(i) ? R(0) : R(1);
      denom += static_cast<double>(m->free_count());
      const int soft = g.sigmoid(g.scale(g.param(m->embedding), s));
      const int term = g.sum(g.mul(soft, g.constant(std::move(freeness))));
      num = num < 0 ? term : g.add(num, term);
    }
    if (denom == 0.0 || num < 0) return g.scalar_const(R(0));
    return g.scale(num, 1.0 / denom);
  }

  using ReplaySource = std::function<std::vector<ReplayBatch<R>>()>;

  /// One alternating cycle: n_critic discriminator updates on (real, fake,
  /// replay) batches, then one generator update under the soft mask at s.
  /// Each critic sub-step draws fresh fakes and fresh replay batches; the real
  /// minibatch is shared so an epoch remains one pass over the data. G's
  /// weight gradients are gated per Eq. 6; mask embeddings train freely.
  StepMetrics alternate_step(const Tensor<R>& real_x, const std::vector<std::int64_t>& real_y,
                             const ReplaySource& replay_source, double s, Rng& rng) {
    StepMetrics out;
    out.s = s;
    out.alpha = alpha_ratio;
    const std::int64_t batch = real_x.rows();
    const std::size_t current = gen.task_classes.size() - 1;

    for (std::int64_t c = 0; c < weights.n_critic; ++c) {
      auto [fake_x, fake_y] = sample_current(batch, s, rng);
      (void)fake_y;
      const auto replays = replay_source ? replay_source() : std::vector<ReplayBatch<R>>{};
      Graph<R> g;
      auto parts = build_d_loss(g, real_x, real_y, fake_x, replays, rng);
      auto grads = g.backward(parts.total, disc.params());
      opt_d.step(grads);
      d_updates += 1;
      if (c == weights.n_critic - 1) {
        out.l_d = static_cast<double>(g.value(parts.total)[0]);
        out.l_s_d = static_cast<double>(g.value(parts.adv)[0]);
        out.l_c_d = static_cast<double>(g.value(parts.cls)[0]);
        out.l_gp = static_cast<double>(g.value(parts.gp)[0]);
      }
    }

    {
      Graph<R> g;
      const auto& cls = gen.task_classes[current];
      std::vector<std::int64_t> y(static_cast<std::size_t>(batch));
      for (auto& v : y)
        v = cls[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(cls.size())))];
      const int z = g.input(rng.template normal_tensor<R>(batch, gen.latent_dim));
      auto ylab = std::make_shared<const std::vector<std::int64_t>>(y);
      const int fake = gen.forward(g, z, ylab, MaskMode::training(s));
      auto parts = build_g_loss(g, fake, y, s);

      if (gate_bypass) {
        for (Parameter<R>* p : gen.weight_params()) p->clear_gate();
      } else {
        gen.refresh_gates(s);
      }
      auto wparams = gen.weight_params();
      auto eparams = gen.mask_params();
      std::vector<Parameter<R>*> all = wparams;
      all.insert(all.end(), eparams.begin(), eparams.end());
      auto grads = g.backward(parts.total, all);
      const auto split = grads.begin() + static_cast<std::ptrdiff_t>(wparams.size());
      opt_g.step(std::vector<std::pair<Parameter<R>*, Tensor<R>>>(grads.begin(), split));
      opt_e.step(std::vector<std::pair<Parameter<R>*, Tensor<R>>>(split, grads.end()));
      g_updates += 1;

      out.l_g = static_cast<double>(g.value(parts.total)[0]);
      out.l_s_g = static_cast<double>(g.value(parts.adv)[0]);
      out.l_c_g = static_cast<double>(g.value(parts.cls)[0]);
      out.r = static_cast<double>(g.value(parts.reg)[0]);
    }
    return out;
  }

  /// Fakes for the current task under the soft mask (values only).
  std::pair<Tensor<R>, std::vector<std::int64_t>> sample_current(std::int64_t count, double s,
                                                                 Rng& rng) {
    const std::size_t current = gen.task_classes.size() - 1;
    const auto& cls = gen.task_classes[current];
    std::vector<std::int64_t> y(static_cast<std::size_t>(count));
    for (auto& v : y)
      v = cls[static_cast<std::size_t>(rng.below(static_cast<std::int64_t>(cls.size())))];
    Graph<R> g;
    const int z = g.input(rng.template normal_tensor<R>(count, gen.latent_dim));
    auto ylab = std::make_shared<const std::vector<std::int64_t>>(y);
    const int fake = gen.forward(g, z, ylab, MaskMode::training(s));
    return {g.value(fake), std::move(y)};
  }
};

}  // namespace dgm
