#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dgm/checkpoint.hpp"
#include "dgm/csv.hpp"
#include "dgm/data.hpp"
#include "dgm/gan.hpp"
#include "dgm/imageio.hpp"

namespace dgm {

inline constexpr const char* kDgmVersion = "0.1.0";

/// Every knob of a run, by value; echoed into the manifest verbatim.
struct RunConfig {
  // model
  std::string variant = "dgma";  // dgma | dgmw
  std::int64_t latent_dim = 8;
  std::int64_t label_dim = 8;
  std::vector<std::int64_t> g_hidden{48, 48};
  std::vector<std::int64_t> d_hidden{48, 48};
  std::string precision = "f64";  // f64 | f32

  // masks
  double s_max = 200.0;

  // losses
  double lambda_ru = 2.0;
  double lambda_gp = 10.0;
  std::int64_t n_critic = 5;
  std::string gp_point = "interpolate";  // interpolate | fake

  // schedule
  std::int64_t epochs = 10;
  std::int64_t batch_size = 64;
  double epochs_growth = 1.0;  // per-task multiplier on epochs (1.0 = constant)
  double lr_g = 1e-3;
  double lr_d = 1e-3;
  double lr_e = 0.1;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  std::uint64_t seed = 1;
  bool eval_every_epoch = false;
  std::int64_t jt_epochs = 0;  // > 0: run the joint-training baseline afterwards

  // replay
  bool replay_enabled = true;
  std::int64_t replay_total = 64;  // generated samples per D step, split over past tasks

  // expansion
  bool expansion_enabled = true;

  // data
  std::string data_kind = "gaussian2d";  // gaussian2d | idx
  std::int64_t tasks = 5;
  std::int64_t classes_per_task = 2;
  std::int64_t samples_per_class = 300;  // gaussian2d
  std::string idx_train_images = "train-images-idx3-ubyte.gz";
  std::string idx_train_labels = "train-labels-idx1-ubyte.gz";
  std::string idx_test_images = "t10k-images-idx3-ubyte.gz";
  std::string idx_test_labels = "t10k-labels-idx1-ubyte.gz";
  bool downsample2x = true;
  std::int64_t per_class_cap = 0;
  std::uint64_t permutation_seed = 0;  // 0 = identity class order

  // test hooks (not part of the config file surface)
  bool test_gate_bypass = false;

  MaskVariant mask_variant() const {
    if (variant == "dgma") return MaskVariant::DGMa;
    if (variant == "dgmw") return MaskVariant::DGMw;
    fail("config: masks.variant must be dgma or dgmw, got '" + variant + "'");
  }

  static RunConfig from_json(const nlohmann::json& j) {
    RunConfig c;
    const auto& m = j.at("model");
    c.variant = m.at("variant");
    c.latent_dim = m.at("latent_dim");
    c.label_dim = m.at("label_dim");
    c.g_hidden = m.at("g_hidden").get<std::vector<std::int64_t>>();
    c.d_hidden = m.at("d_hidden").get<std::vector<std::int64_t>>();
    c.precision = m.at("precision");
    c.s_max = j.at("masks").at("s_max");
    const auto& l = j.at("losses");
    c.lambda_ru = l.at("lambda_ru");
    c.lambda_gp = l.at("lambda_gp");
    c.n_critic = l.at("n_critic");
    c.gp_point = l.at("gp_point");
    const auto& s = j.at("schedule");
    c.epochs = s.at("epochs");
    c.batch_size = s.at("batch_size");
    c.epochs_growth = s.at("epochs_growth");
    c.lr_g = s.at("lr_g");
    c.lr_d = s.at("lr_d");
    c.lr_e = s.at("lr_e");
    c.adam_beta1 = s.at("adam_beta1");
    c.adam_beta2 = s.at("adam_beta2");
    c.seed = s.at("seed");
    c.eval_every_epoch = s.at("eval_every_epoch");
    c.jt_epochs = s.at("jt_epochs");
    c.replay_enabled = j.at("replay").at("enabled");
    c.replay_total = j.at("replay").at("batch_total");
    c.expansion_enabled = j.at("expansion").at("enabled");
    const auto& d = j.at("data");
    c.data_kind = d.at("kind");
    c.tasks = d.at("tasks");
    c.classes_per_task = d.at("classes_per_task");
    c.samples_per_class = d.at("samples_per_class");
    c.idx_train_images = d.at("train_images");
    c.idx_train_labels = d.at("train_labels");
    c.idx_test_images = d.at("test_images");
    c.idx_test_labels = d.at("test_labels");
    c.downsample2x = d.at("downsample2x");
    c.per_class_cap = d.at("per_class_cap");
    c.permutation_seed = d.at("permutation_seed");
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = {{"variant", variant},       {"latent_dim", latent_dim},
                  {"label_dim", label_dim},   {"g_hidden", g_hidden},
                  {"d_hidden", d_hidden},     {"precision", precision}};
    j["masks"] = {{"s_max", s_max}};
    j["losses"] = {{"lambda_ru", lambda_ru},
                   {"lambda_gp", lambda_gp},
                   {"n_critic", n_critic},
                   {"gp_point", gp_point}};
    j["schedule"] = {{"epochs", epochs},
                     {"batch_size", batch_size},
                     {"epochs_growth", epochs_growth},
                     {"lr_g", lr_g},
                     {"lr_d", lr_d},
                     {"lr_e", lr_e},
                     {"adam_beta1", adam_beta1},
                     {"adam_beta2", adam_beta2},
                     {"seed", seed},
                     {"eval_every_epoch", eval_every_epoch},
                     {"jt_epochs", jt_epochs}};
    j["replay"] = {{"enabled", replay_enabled}, {"batch_total", replay_total}};
    j["expansion"] = {{"enabled", expansion_enabled}};
    j["data"] = {{"kind", data_kind},
                 {"tasks", tasks},
                 {"classes_per_task", classes_per_task},
                 {"samples_per_class", samples_per_class},
                 {"train_images", idx_train_images},
                 {"train_labels", idx_train_labels},
                 {"test_images", idx_test_images},
                 {"test_labels", idx_test_labels},
                 {"downsample2x", downsample2x},
                 {"per_class_cap", per_class_cap},
                 {"permutation_seed", permutation_seed}};
    return j;
  }
};

/// Evaluation snapshot after a task: overall accuracy over all classes seen,
/// the confusion matrix (rows = true class, cols = predicted), and per-class /
/// per-task-block accuracies.
struct EvalResult {
  std::int64_t after_task = 0;  // 1-based
  std::int64_t classes_seen = 0;
  double accuracy = 0.0;
  std::vector<std::vector<std::int64_t>> confusion;
  std::vector<double> per_class_accuracy;
  std::vector<double> per_task_accuracy;  // over each task's class block
};

struct GrowthRow {
  std::int64_t task, layer, delta, neurons_added, total_p, free_capacity;
};

struct MetricsLedger {
  std::vector<EvalResult> checkpoints;
  std::vector<GrowthRow> growth;
  double jt_accuracy = -1.0;

  double forgetting_of_task(std::size_t task_index) const {
    double peak = 0.0, last = 0.0;
    for (const auto& ev : checkpoints) {
      if (ev.per_task_accuracy.size() > task_index) {
        peak = std::max(peak, ev.per_task_accuracy[task_index]);
        last = ev.per_task_accuracy[task_index];
      }
    }
    return peak - last;
  }
};

/// Computes accuracy + confusion of the discriminator's auxiliary head over
/// the union of test sets of tasks 1..t (single-head evaluation).
template <typename R>
EvalResult evaluate(Discriminator<R>& disc, const TaskStream<R>& stream, std::size_t upto_task) {
  if (upto_task == 0 || upto_task > stream.tasks.size()) fail("evaluate: bad task index");
  std::int64_t classes = 0, total = 0;
  for (std::size_t t = 0; t < upto_task; ++t) {
    classes += static_cast<std::int64_t>(stream.tasks[t].classes.size());
    total += stream.tasks[t].test.size();
    if (stream.tasks[t].test.size() == 0) fail("evaluate: empty test set for task " +
                                               std::to_string(t + 1));
  }
  EvalResult ev;
  ev.after_task = static_cast<std::int64_t>(upto_task);
  ev.classes_seen = classes;
  ev.confusion.assign(static_cast<std::size_t>(classes),
                      std::vector<std::int64_t>(static_cast<std::size_t>(classes), 0));
  std::int64_t correct = 0;
  for (std::size_t t = 0; t < upto_task; ++t) {
    const Dataset<R>& ds = stream.tasks[t].test;
    const auto pred = disc.predict(ds.x);
    for (std::size_t i = 0; i < pred.size(); ++i) {
      const auto truth = static_cast<std::size_t>(ds.y[i]);
      const auto guess = static_cast<std::size_t>(
          std::min<std::int64_t>(pred[i], classes - 1));
      ev.confusion[truth][guess] += 1;
      if (static_cast<std::int64_t>(truth) == pred[i]) ++correct;
    }
  }
  ev.accuracy = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  ev.per_class_accuracy.assign(static_cast<std::size_t>(classes), 0.0);
  for (std::size_t c = 0; c < static_cast<std::size_t>(classes); ++c) {
    std::int64_t row_total = 0;
    for (auto v : ev.confusion[c]) row_total += v;
    ev.per_class_accuracy[c] =
        row_total > 0 ? static_cast<double>(ev.confusion[c][c]) / static_cast<double>(row_total)
                      : 0.0;
  }
  for (std::size_t t = 0; t < upto_task; ++t) {
    double acc = 0.0;
    std::int64_t n = 0;
    for (std::int64_t c : stream.tasks[t].classes) {
      std::int64_t row_total = 0;
      for (auto v : ev.confusion[static_cast<std::size_t>(c)]) row_total += v;
      acc += static_cast<double>(ev.confusion[static_cast<std::size_t>(c)]
                                              [static_cast<std::size_t>(c)]);
      n += row_total;
    }
    ev.per_task_accuracy.push_back(n > 0 ? acc / static_cast<double>(n) : 0.0);
  }
  return ev;
}

/// Joint-training upper bound: the same discriminator architecture trained
/// once on all tasks' data pooled (classification loss only).
template <typename R>
double joint_train_baseline(const RunConfig& cfg, const TaskStream<R>& stream,
                            std::int64_t epochs) {
  Rng rng(cfg.seed + 9000);
  Discriminator<R> disc;
  disc.init(stream.feature_dim, cfg.d_hidden, rng);
  disc.grow_classes(stream.total_classes());
  OptConfig oc;
  oc.kind = OptKind::Adam;
  oc.lr = cfg.lr_d;
  oc.beta1 = 0.9;  // plain classification: standard Adam moments
  oc.beta2 = 0.999;
  Optimizer<R> opt(oc);

  std::int64_t total = 0;
  for (const auto& t : stream.tasks) total += t.train.size();
  Tensor<R> x(total, stream.feature_dim);
  std::vector<std::int64_t> y(static_cast<std::size_t>(total));
  std::int64_t row = 0;
  for (const auto& t : stream.tasks)
    for (std::int64_t i = 0; i < t.train.size(); ++i) {
      for (std::int64_t c = 0; c < stream.feature_dim; ++c) x.at(row, c) = t.train.x.at(i, c);
      y[static_cast<std::size_t>(row)] = t.train.y[static_cast<std::size_t>(i)];
      ++row;
    }

  std::vector<std::int64_t> order(static_cast<std::size_t>(total));
  for (std::int64_t i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
  auto params = disc.params();
  for (std::int64_t e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::int64_t start = 0; start < total; start += cfg.batch_size) {
      const std::int64_t n = std::min(cfg.batch_size, total - start);
      Tensor<R> bx(n, stream.feature_dim);
      std::vector<std::int64_t> by(static_cast<std::size_t>(n));
      for (std::int64_t i = 0; i < n; ++i) {
        const std::int64_t src = order[static_cast<std::size_t>(start + i)];
        for (std::int64_t c = 0; c < stream.feature_dim; ++c) bx.at(i, c) = x.at(src, c);
        by[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(src)];
      }
      Graph<R> g;
      auto labels = std::make_shared<const std::vector<std::int64_t>>(by);
      const int ce = softmax_ce_mean(g, disc.aux_logits(g, disc.trunk(g, g.input(bx))), labels);
      opt.step(g.backward(ce, params));
    }
  }
  const auto ev = evaluate(disc, stream, stream.tasks.size());
  return ev.accuracy;
}

namespace detail {

template <typename R>
void save_mask_records(Checkpoint& ck, const LayerMask<R>& m) {
  const std::string base = m.embedding.name;  // "<layer>.e"
  ck.put_tensor(base, m.embedding.value);
  ck.put_bits(base + ".cum", m.cumulated);
  ck.put_i64s(base + ".shape", {m.mask_rows(), m.mask_cols()});
  for (std::size_t j = 0; j < m.snapshots.size(); ++j)
    ck.put_bits(base + ".snap" + std::to_string(j), m.snapshots[j]);
  ck.put_i64s(base + ".nsnaps", {static_cast<std::int64_t>(m.snapshots.size())});
}

template <typename R>
void load_mask_records(const Checkpoint& ck, LayerMask<R>& m) {
  const std::string base = m.embedding.name;
  m.embedding.value = ck.get_tensor<R>(base);
  m.cumulated = ck.get_bits(base + ".cum");
  const auto shape = ck.get_i64s(base + ".shape");
  if (m.variant == MaskVariant::DGMw) m.in_dim = shape[0];
  m.out_dim = shape[1];
  m.snapshots.clear();
  const auto n = ck.get_i64s(base + ".nsnaps")[0];
  for (std::int64_t j = 0; j < n; ++j)
    m.snapshots.push_back(ck.get_bits(base + ".snap" + std::to_string(j)));
}

template <typename R>
void save_slot_records(Checkpoint& ck, const LayerSlot<R>& slot) {
  std::vector<std::int64_t> growth{slot.base_free};
  for (const auto& g : slot.growth_log) {
    growth.push_back(g.task);
    growth.push_back(g.delta);
    growth.push_back(g.neurons_added);
  }
  ck.put_i64s(slot.W.name + ".growth", growth);
}

template <typename R>
void load_slot_records(const Checkpoint& ck, LayerSlot<R>& slot) {
  if (!ck.has(slot.W.name + ".growth")) return;
  const auto growth = ck.get_i64s(slot.W.name + ".growth");
  slot.base_free = growth[0];
  slot.growth_log.clear();
  for (std::size_t i = 1; i + 3 <= growth.size(); i += 3)
    slot.growth_log.push_back({growth[i], growth[i + 1], growth[i + 2]});
}

}  // namespace detail

/// Serializes every parameter, the mask state (embeddings, cumulated masks,
/// per-task snapshots), Adam moments, growth logs, and the RNG into the
/// length-prefixed container. Exact round trip: reloading reproduces the
/// model bit for bit.
template <typename R>
void save_dgm_checkpoint(const std::string& path, DgmModel<R>& model, const Rng& rng,
                         const std::string& precision) {
  Checkpoint ck;
  nlohmann::json meta;
  meta["variant"] = variant_name(model.gen.variant);
  meta["latent_dim"] = model.gen.latent_dim;
  meta["label_dim"] = model.gen.label_dim;
  meta["data_dim"] = model.gen.data_dim;
  meta["completed_tasks"] = model.gen.completed_tasks;
  meta["precision"] = precision;
  std::vector<std::int64_t> gh, dh;
  for (const auto& h : model.gen.hidden) gh.push_back(h.out_dim());
  for (const auto& h : model.disc.hidden) dh.push_back(h.out_dim());
  meta["g_hidden"] = gh;
  meta["d_hidden"] = dh;
  meta["num_classes"] = model.disc.num_classes();
  nlohmann::json tc = nlohmann::json::array();
  for (const auto& cls : model.gen.task_classes) tc.push_back(cls);
  meta["task_classes"] = tc;
  ck.put_str("meta", meta.dump());
  ck.put_str("rng", rng.save_state());

  auto put_param = [&ck, &model](const Parameter<R>& p) {
    ck.put_tensor(p.name, p.value);
    for (auto* opt : {&model.opt_g, &model.opt_d, &model.opt_e}) {
      if (const auto* st = opt->peek_state(&p)) {
        ck.put_tensor("adam.m." + p.name, st->m);
        ck.put_tensor("adam.v." + p.name, st->v);
        ck.put_i64s("adam.t." + p.name, {st->t});
      }
    }
  };
  put_param(model.gen.label_embed);
  put_param(model.gen.output.W);
  detail::save_slot_records(ck, model.gen.output);
  for (std::size_t l = 0; l < model.gen.hidden.size(); ++l) {
    put_param(model.gen.hidden[l].W);
    put_param(model.gen.hidden[l].bias);
    detail::save_slot_records(ck, model.gen.hidden[l]);
    detail::save_mask_records(ck, model.gen.hmasks[l]);
  }
  detail::save_mask_records(ck, model.gen.omask);
  for (auto* p : model.disc.params()) put_param(*p);
  ck.write(path);
}

template <typename R>
void load_dgm_checkpoint(const std::string& path, DgmModel<R>& model, Rng& rng) {
  const auto ck = Checkpoint::read(path);
  const auto meta = nlohmann::json::parse(ck.get_str("meta"));
  rng.load_state(ck.get_str("rng"));
  model.gen.completed_tasks = meta["completed_tasks"].get<std::int64_t>();
  model.gen.task_classes.clear();
  for (const auto& cls : meta["task_classes"])
    model.gen.task_classes.push_back(cls.get<std::vector<std::int64_t>>());
  model.disc.grow_classes(meta["num_classes"].get<std::int64_t>());

  auto get_param = [&ck, &model](Parameter<R>& p) {
    p.value = ck.get_tensor<R>(p.name);
    if (ck.has("adam.m." + p.name)) {
      // Moments reattach to whichever optimizer steps this parameter next.
      for (auto* opt : {&model.opt_g, &model.opt_d, &model.opt_e}) {
        auto& st = opt->state(p);
        st.m = ck.get_tensor<R>("adam.m." + p.name);
        st.v = ck.get_tensor<R>("adam.v." + p.name);
        st.t = ck.get_i64s("adam.t." + p.name)[0];
      }
    }
  };
  get_param(model.gen.label_embed);
  for (std::size_t l = 0; l < model.gen.hidden.size(); ++l) {
    get_param(model.gen.hidden[l].W);
    get_param(model.gen.hidden[l].bias);
    detail::load_slot_records(ck, model.gen.hidden[l]);
    detail::load_mask_records(ck, model.gen.hmasks[l]);
    model.gen.hidden[l].variant = model.gen.variant;
  }
  get_param(model.gen.output.W);
  detail::load_slot_records(ck, model.gen.output);
  detail::load_mask_records(ck, model.gen.omask);
  for (auto* p : model.disc.params()) get_param(*p);

  for (std::size_t l = 0; l < model.gen.hidden.size(); ++l) {
    model.gen.hmasks[l].in_dim = model.gen.hidden[l].in_dim();
    model.gen.hmasks[l].out_dim = model.gen.hidden[l].out_dim();
  }
  model.gen.omask.in_dim = model.gen.output.in_dim();
  model.gen.omask.out_dim = model.gen.output.out_dim();
}

/// Rebuilds a model shell from a checkpoint's structural metadata and loads
/// the state into it (the eval-from-artifacts path).
template <typename R>
DgmModel<R> model_from_checkpoint(const std::string& path, Rng& rng) {
  const auto ck = Checkpoint::read(path);
  const auto meta = nlohmann::json::parse(ck.get_str("meta"));
  DgmModel<R> model;
  const MaskVariant v =
      meta["variant"].get<std::string>() == "dgmw" ? MaskVariant::DGMw : MaskVariant::DGMa;
  model.gen.init(v, meta["latent_dim"].get<std::int64_t>(), meta["label_dim"].get<std::int64_t>(),
                 meta["g_hidden"].get<std::vector<std::int64_t>>(),
                 meta["data_dim"].get<std::int64_t>(), rng);
  model.disc.init(meta["data_dim"].get<std::int64_t>(),
                  meta["d_hidden"].get<std::vector<std::int64_t>>(), rng);
  load_dgm_checkpoint(path, model, rng);
  return model;
}

/// Drives the class-incremental loop over a TaskStream, writing all artifacts
/// into a run directory. Single-threaded; bit-deterministic under the seed.
template <typename R>
class ContinualTrainer {
 public:
  ContinualTrainer(RunConfig cfg, TaskStream<R> stream, std::string out_dir)
      : cfg_(std::move(cfg)), stream_(std::move(stream)), dir_(std::move(out_dir)),
        rng_(cfg_.seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir_);
    model_.gen.init(cfg_.mask_variant(), cfg_.latent_dim, cfg_.label_dim, cfg_.g_hidden,
                    stream_.feature_dim, rng_);
    model_.disc.init(stream_.feature_dim, cfg_.d_hidden, rng_);
    model_.weights.lambda_ru = cfg_.lambda_ru;
    model_.weights.lambda_gp = cfg_.lambda_gp;
    model_.weights.n_critic = cfg_.n_critic;
    model_.weights.gp_point =
        cfg_.gp_point == "fake" ? GpPoint::Fake : GpPoint::Interpolate;
    model_.gate_bypass = cfg_.test_gate_bypass;
    OptConfig g{OptKind::Adam, cfg_.lr_g, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8};
    OptConfig d{OptKind::Adam, cfg_.lr_d, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8};
    OptConfig e{OptKind::Adam, cfg_.lr_e, cfg_.adam_beta1, cfg_.adam_beta2, 1e-8};
    model_.opt_g = Optimizer<R>(g);
    model_.opt_d = Optimizer<R>(d);
    model_.opt_e = Optimizer<R>(e);

    losses_.open(dir_ + "/losses.csv",
                 {"task", "epoch", "batch", "L_D", "L_s_D", "L_c_D", "L_gp", "L_G", "L_s_G",
                  "L_c_G", "R", "alpha", "s"});
    occupation_.open(dir_ + "/occupation.csv",
                     {"task", "epoch", "layer", "fraction", "s_value", "flipped_count"});
    growth_csv_.open(dir_ + "/growth.csv",
                     {"task", "layer", "delta", "neurons_added", "total_p", "free_capacity"});
    metrics_.open(dir_ + "/metrics.csv",
                  {"task", "classes_seen", "accuracy", "avg_forgetting", "size_neurons",
                   "size_weights"});
    write_manifest();
  }

  DgmModel<R>& model() { return model_; }
  const MetricsLedger& ledger() const { return ledger_; }
  const TaskStream<R>& stream() const { return stream_; }
  Rng& rng() { return rng_; }
  const std::string& dir() const { return dir_; }

  /// Runs all tasks; on error the CSV ledgers are flushed before rethrowing.
  MetricsLedger run_stream() {
    try {
      for (std::size_t t = 0; t < stream_.tasks.size(); ++t) train_task(t);
      if (cfg_.jt_epochs > 0) {
        ledger_.jt_accuracy = joint_train_baseline(cfg_, stream_, cfg_.jt_epochs);
        nlohmann::json j;
        std::ifstream is(dir_ + "/manifest.json");
        is >> j;
        is.close();
        j["jt_accuracy"] = ledger_.jt_accuracy;
        std::ofstream os(dir_ + "/manifest.json");
        os << j.dump(2) << "\n";
      }
    } catch (...) {
      flush_all();
      throw;
    }
    flush_all();
    return ledger_;
  }

  /// One task of the loop: I_t epochs of alternating optimization with replay
  /// from the frozen snapshots, then binarization, occupation bookkeeping,
  /// expansion, checkpoint, and evaluation.
  void train_task(std::size_t t) {
    const Task<R>& task = stream_.tasks[t];
    model_.gen.begin_task(task.classes, rng_);
    std::int64_t classes_seen = 0;
    for (std::size_t j = 0; j <= t; ++j)
      classes_seen += static_cast<std::int64_t>(stream_.tasks[j].classes.size());
    model_.disc.grow_classes(classes_seen);
    model_.opt_g.reset();
    model_.opt_d.reset();
    model_.opt_e.reset();
    model_.alpha_ratio = capacity_alpha();

    const std::int64_t n = task.train.size();
    const std::int64_t epochs_t = std::max<std::int64_t>(
        1, std::llround(static_cast<double>(cfg_.epochs) *
                        std::pow(cfg_.epochs_growth, static_cast<double>(t))));
    const std::int64_t batches = std::max<std::int64_t>(1, (n + cfg_.batch_size - 1) / cfg_.batch_size);
    AnnealSchedule sched{cfg_.s_max, epochs_t, batches, cfg_.mask_variant()};
    sched.validate();
    if (sched.has_inverted_sweep() && !warned_inverted_) {
      std::cerr << "note: local annealing sweeps downward while the epoch ceiling is below 1\n";
      warned_inverted_ = true;
    }

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::vector<Bitset> prev_sign = sign_bits();

    for (std::int64_t epoch = 1; epoch <= epochs_t; ++epoch) {
      rng_.shuffle(order);
      double s = sched.scale_at(epoch, 1);
      for (std::int64_t b = 1; b <= batches; ++b) {
        s = sched.scale_at(epoch, b);
        const std::int64_t start = (b - 1) * cfg_.batch_size;
        const std::int64_t count = std::min(cfg_.batch_size, n - start);
        Tensor<R> bx(count, stream_.feature_dim);
        std::vector<std::int64_t> by(static_cast<std::size_t>(count));
        for (std::int64_t i = 0; i < count; ++i) {
          const std::int64_t src = order[static_cast<std::size_t>(start + i)];
          for (std::int64_t c = 0; c < stream_.feature_dim; ++c)
            bx.at(i, c) = task.train.x.at(src, c);
          by[static_cast<std::size_t>(i)] = task.train.y[static_cast<std::size_t>(src)];
        }
        assert_replay_isolation(by, task.classes, t);
        const auto replay_source = [this, t] { return make_replay_batches(t); };
        const StepMetrics sm = model_.alternate_step(bx, by, replay_source, s, rng_);
        losses_.row() << static_cast<std::int64_t>(t + 1) << epoch << b << sm.l_d << sm.l_s_d
                      << sm.l_c_d << sm.l_gp << sm.l_g << sm.l_s_g << sm.l_c_g << sm.r
                      << sm.alpha << sm.s;
      }
      write_occupation_rows(t, epoch, s, prev_sign);
      prev_sign = sign_bits();
      if (cfg_.eval_every_epoch) {
        const auto ev = evaluate(model_.disc, stream_, t + 1);
        std::cerr << "task " << t + 1 << " epoch " << epoch << " acc " << ev.accuracy << "\n";
      }
    }

    finish_task(t);
  }

 private:
  void finish_task(std::size_t t) {
    std::vector<Bitset> cum_before;
    for (const auto& m : model_.gen.hmasks) cum_before.push_back(m.cumulated);
    const auto deltas = model_.gen.binarize_and_reserve();

    if (capacity_free() == 0 && !cfg_.expansion_enabled)
      std::cerr << "warning: generator capacity exhausted and expansion is disabled\n";

    if (cfg_.expansion_enabled)
      model_.gen.expand(deltas, static_cast<std::int64_t>(t + 1), rng_);
    for (std::size_t l = 0; l < model_.gen.hidden.size(); ++l) {
      GrowthRow row;
      row.task = static_cast<std::int64_t>(t + 1);
      row.layer = static_cast<std::int64_t>(l + 1);
      row.delta = deltas[l];
      row.neurons_added =
          cfg_.expansion_enabled
              ? (model_.gen.variant == MaskVariant::DGMa
                     ? deltas[l]
                     : (deltas[l] == 0 ? 0
                                       : (deltas[l] + model_.gen.hidden[l].in_dim() - 1) /
                                             model_.gen.hidden[l].in_dim()))
              : 0;
      row.total_p = model_.gen.hidden[l].out_dim();
      row.free_capacity = free_capacity(model_.gen.hidden[l], model_.gen.hmasks[l]);
      ledger_.growth.push_back(row);
      growth_csv_.row() << row.task << row.layer << row.delta << row.neurons_added
                        << row.total_p << row.free_capacity;
    }

    const auto ev = evaluate(model_.disc, stream_, t + 1);
    write_checkpoint_files(t, ev);
  }

  void write_checkpoint_files(std::size_t t, EvalResult ev) {
    ledger_.checkpoints.push_back(ev);
    double avg_forget = 0.0;
    if (t > 0) {
      for (std::size_t j = 0; j < t; ++j) avg_forget += ledger_.forgetting_of_task(j);
      avg_forget /= static_cast<double>(t);
    }
    metrics_.row() << ev.after_task << ev.classes_seen << ev.accuracy << avg_forget
                   << size_neurons() << size_weights();

    CsvWriter conf(dir_ + "/confusion_t" + std::to_string(t + 1) + ".csv", confusion_header(ev));
    for (std::size_t r = 0; r < ev.confusion.size(); ++r) {
      auto row = conf.row();
      row << static_cast<std::int64_t>(r);
      for (std::int64_t v : ev.confusion[r]) row << v;
    }

    dump_samples(t);
    // Saved last so the stored RNG state is the exact handoff point for the
    // next task; loading checkpoint_t{t} and continuing replays the run.
    save_model_checkpoint(dir_ + "/checkpoint_t" + std::to_string(t + 1) + ".bin");
    flush_all();
  }

  std::vector<std::string> confusion_header(const EvalResult& ev) const {
    std::vector<std::string> h{"true"};
    for (std::int64_t c = 0; c < ev.classes_seen; ++c) h.push_back("pred_" + std::to_string(c));
    return h;
  }

  /// Generated points (2-D) or image grids for visual inspection of replay.
  void dump_samples(std::size_t t) {
    const std::int64_t per_task = stream_.image_side > 0 ? 8 : 40;
    if (stream_.image_side > 0) {
      std::vector<Tensor<R>> rows;
      for (std::size_t j = 0; j <= t; ++j) {
        auto [x, y] = model_.gen.sample(j, per_task, rng_);
        (void)y;
        rows.push_back(std::move(x));
      }
      Tensor<R> all(static_cast<std::int64_t>(rows.size()) * per_task, stream_.feature_dim);
      std::int64_t r = 0;
      for (const auto& block : rows)
        for (std::int64_t i = 0; i < block.rows(); ++i, ++r)
          for (std::int64_t c = 0; c < block.cols(); ++c) all.at(r, c) = block.at(i, c);
      write_sample_grid(dir_ + "/samples_t" + std::to_string(t + 1) + ".png", all,
                        stream_.image_side, per_task);
    } else {
      CsvWriter pts(dir_ + "/samples_t" + std::to_string(t + 1) + ".csv", {"x0", "x1", "label"});
      for (std::size_t j = 0; j <= t; ++j) {
        auto [x, y] = model_.gen.sample(j, per_task, rng_);
        for (std::int64_t i = 0; i < x.rows(); ++i)
          pts.row() << static_cast<double>(x.at(i, 0)) << static_cast<double>(x.at(i, 1))
                    << y[static_cast<std::size_t>(i)];
      }
    }
  }

  std::vector<ReplayBatch<R>> make_replay_batches(std::size_t t) {
    std::vector<ReplayBatch<R>> replays;
    if (!cfg_.replay_enabled || t == 0) return replays;
    const std::int64_t per =
        std::max<std::int64_t>(1, cfg_.replay_total / static_cast<std::int64_t>(t));
    for (std::size_t j = 0; j < t; ++j) {
      auto [x, y] = model_.gen.sample(j, per, rng_);
      replays.push_back({j, std::move(x), std::move(y)});
    }
    return replays;
  }

  /// The strictly incremental contract: real samples presented during task t
  /// must carry task-t labels only.
  void assert_replay_isolation(const std::vector<std::int64_t>& labels,
                               const std::vector<std::int64_t>& classes, std::size_t t) const {
    for (std::int64_t y : labels)
      if (std::find(classes.begin(), classes.end(), y) == classes.end())
        fail("replay isolation violated: real sample of class " + std::to_string(y) +
             " presented during task " + std::to_string(t + 1));
  }

  double capacity_alpha() {
    const std::int64_t total = capacity_total();
    const std::int64_t free = capacity_free();
    if (free == 0) {
      std::cerr << "warning: no free capacity; regularizer ratio forced to 0\n";
      return 0.0;
    }
    return static_cast<double>(total) / static_cast<double>(free);
  }
  std::int64_t capacity_total() {
    std::int64_t v = 0;
    for (auto* m : model_.gen.regularized_masks()) v += m->mask_size();
    return v;
  }
  std::int64_t capacity_free() {
    std::int64_t v = 0;
    for (auto* m : model_.gen.regularized_masks()) v += m->free_count();
    return v;
  }
  std::int64_t size_neurons() {
    std::int64_t v = 0;
    for (const auto& h : model_.gen.hidden) v += h.out_dim();
    return v;
  }
  std::int64_t size_weights() {
    std::int64_t v = 0;
    for (const auto& h : model_.gen.hidden) v += h.in_dim() * h.out_dim();
    v += model_.gen.output.in_dim() * model_.gen.output.out_dim();
    return v;
  }

  /// Sign bitsets of the current embeddings (the would-be binarization),
  /// used for the flipped-count trajectory.
  std::vector<Bitset> sign_bits() const {
    std::vector<Bitset> out;
    for (const auto& m : model_.gen.hmasks) {
      Bitset b(m.mask_size());
      for (std::int64_t i = 0; i < m.embedding.value.size(); ++i)
        b.set(i, m.embedding.value[i] > R(0));
      out.push_back(std::move(b));
    }
    return out;
  }

  void write_occupation_rows(std::size_t t, std::int64_t epoch, double s,
                             const std::vector<Bitset>& prev_sign) {
    const auto now = sign_bits();
    for (std::size_t l = 0; l < model_.gen.hmasks.size(); ++l) {
      const auto& m = model_.gen.hmasks[l];
      std::int64_t occupied = 0, flipped = 0;
      for (std::int64_t i = 0; i < m.mask_size(); ++i) {
        if (m.cumulated.get(i) || now[l].get(i)) ++occupied;
        if (now[l].get(i) != prev_sign[l].get(i)) ++flipped;
      }
      occupation_.row() << static_cast<std::int64_t>(t + 1) << epoch
                        << static_cast<std::int64_t>(l + 1)
                        << static_cast<double>(occupied) /
                               static_cast<double>(std::max<std::int64_t>(1, m.mask_size()))
                        << s << flipped;
    }
  }

  void write_manifest() {
    nlohmann::json j;
    j["dgm_version"] = kDgmVersion;
    j["checkpoint_container_version"] = Checkpoint::kVersion;
    j["config"] = cfg_.to_json();
    j["stream"] = {{"tasks", stream_.tasks.size()},
                   {"feature_dim", stream_.feature_dim},
                   {"image_side", stream_.image_side}};
    std::ofstream os(dir_ + "/manifest.json");
    if (!os) fail("trainer: cannot write manifest.json in " + dir_);
    os << j.dump(2) << "\n";
  }

  void flush_all() {
    losses_.flush();
    occupation_.flush();
    growth_csv_.flush();
    metrics_.flush();
  }

 public:
  void save_model_checkpoint(const std::string& path) {
    save_dgm_checkpoint(path, model_, rng_, cfg_.precision);
  }
  void load_model_checkpoint(const std::string& path) {
    load_dgm_checkpoint(path, model_, rng_);
  }

 private:
  RunConfig cfg_;
  TaskStream<R> stream_;
  std::string dir_;
  Rng rng_;
  DgmModel<R> model_;
  MetricsLedger ledger_;
  CsvWriter losses_, occupation_, growth_csv_, metrics_;
  bool warned_inverted_ = false;
};

/// Builds the stream described by the config ([data] section). IDX paths are
/// resolved against DGM_DATA_DIR when set.
template <typename R>
TaskStream<R> build_stream(const RunConfig& cfg) {
  if (cfg.data_kind == "gaussian2d")
    return gaussian_tasks<R>(cfg.tasks, cfg.classes_per_task, cfg.samples_per_class, cfg.seed);
  if (cfg.data_kind != "idx")
    fail("config: data.kind must be gaussian2d or idx, got '" + cfg.data_kind + "'");

  const char* env = std::getenv("DGM_DATA_DIR");
  const std::string root = env ? std::string(env) + "/" : std::string("data/");
  auto train = read_idx_images<R>(root + cfg.idx_train_images, cfg.downsample2x);
  train.y = read_idx_labels(root + cfg.idx_train_labels);
  auto test = read_idx_images<R>(root + cfg.idx_test_images, cfg.downsample2x);
  test.y = read_idx_labels(root + cfg.idx_test_labels);
  if (train.size() != static_cast<std::int64_t>(train.y.size()) ||
      test.size() != static_cast<std::int64_t>(test.y.size()))
    fail("idx data: image/label counts do not match");
  train.split = "train";
  test.split = "test";

  TaskSplitSpec spec;
  spec.classes_per_task = cfg.classes_per_task;
  const std::int64_t k = cfg.tasks * cfg.classes_per_task;
  for (std::int64_t c = 0; c < k; ++c) spec.ordering.push_back(c);
  if (cfg.permutation_seed != 0) {
    Rng prng(cfg.permutation_seed);
    prng.shuffle(spec.ordering);
  }
  spec.per_class_cap = cfg.per_class_cap;
  return make_stream(train, test, spec);
}

}  // namespace dgm
