#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "dgm/trainer.hpp"

using dgm::ContinualTrainer;
using dgm::Dataset;
using dgm::Discriminator;
using dgm::evaluate;
using dgm::MaskVariant;
using dgm::Rng;
using dgm::RunConfig;
using dgm::Task;
using dgm::TaskStream;
using dgm::Tensor;

using T = Tensor<double>;

namespace {

std::string fresh_dir(const std::string& name) {
  const std::string d = "/tmp/dgm_run_" + name;
  std::filesystem::remove_all(d);
  return d;
}

RunConfig tiny_config(const std::string& variant) {
  RunConfig cfg;
  cfg.variant = variant;
  cfg.latent_dim = 4;
  cfg.label_dim = 4;
  cfg.g_hidden = {10};
  cfg.d_hidden = {12};
  cfg.epochs = 2;
  cfg.batch_size = 32;
  cfg.n_critic = 2;
  cfg.tasks = 2;
  cfg.classes_per_task = 2;
  cfg.samples_per_class = 40;
  cfg.replay_total = 16;
  cfg.seed = 5;
  return cfg;
}

/// Stream whose features are the one-hot of the class: linearly separable.
TaskStream<double> onehot_stream(std::int64_t tasks, std::int64_t classes_per_task,
                                 std::int64_t per_class) {
  const std::int64_t k = tasks * classes_per_task;
  TaskStream<double> stream;
  stream.feature_dim = k;
  for (std::int64_t t = 0; t < tasks; ++t) {
    Task<double> task;
    for (std::int64_t c = 0; c < classes_per_task; ++c)
      task.classes.push_back(t * classes_per_task + c);
    auto fill = [&](Dataset<double>& ds, const char* split) {
      ds.split = split;
      ds.x = T(per_class * classes_per_task, k);
      for (std::int64_t c = 0; c < classes_per_task; ++c)
        for (std::int64_t i = 0; i < per_class; ++i) {
          const std::int64_t row = c * per_class + i;
          ds.x.at(row, t * classes_per_task + c) = 1.0;
          ds.y.push_back(t * classes_per_task + c);
        }
    };
    fill(task.train, "train");
    fill(task.test, "test");
    stream.tasks.push_back(std::move(task));
  }
  return stream;
}

}  // namespace

TEST_CASE("evaluate") {
  SECTION("perfect classifier: accuracy 1 and diagonal confusion") {
    auto stream = onehot_stream(2, 2, 5);
    Rng rng(1);
    Discriminator<double> disc;
    disc.init(4, {}, rng);  // trunk = identity
    disc.grow_classes(4);
    T eye(4, 4);
    for (int i = 0; i < 4; ++i) eye.at(i, i) = 10.0;
    disc.aux_W.value = eye;
    const auto ev = evaluate(disc, stream, 2);
    CHECK(ev.accuracy == 1.0);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c)
        CHECK(ev.confusion[r][c] == (r == c ? 5 : 0));
    CHECK(ev.per_task_accuracy == std::vector<double>{1.0, 1.0});
  }
  SECTION("label-independent predictor lands near chance over 10 classes") {
    // Features are noise, so predictions carry no label information.
    TaskStream<double> stream;
    stream.feature_dim = 6;
    Rng rng(777);
    Task<double> task;
    const std::int64_t per = 1000, k = 10;
    task.train.x = T(1, 6);
    task.train.y = {0};
    task.test.x = rng.normal_tensor<double>(per * k, 6);
    for (std::int64_t c = 0; c < k; ++c) {
      task.classes.push_back(c);
      for (std::int64_t i = 0; i < per; ++i) task.test.y.push_back(c);
    }
    stream.tasks.push_back(std::move(task));
    Discriminator<double> disc;
    disc.init(6, {}, rng);
    disc.grow_classes(10);
    disc.aux_W.value = rng.normal_tensor<double>(6, 10);
    const auto ev = evaluate(disc, stream, 1);
    CHECK(ev.accuracy == Catch::Approx(0.1).margin(0.02));
  }
  SECTION("confusion rows sum to per-class test counts") {
    auto stream = onehot_stream(2, 2, 7);
    Rng rng(2);
    Discriminator<double> disc;
    disc.init(4, {5}, rng);
    disc.grow_classes(4);
    const auto ev = evaluate(disc, stream, 2);
    for (std::size_t r = 0; r < 4; ++r) {
      std::int64_t total = 0;
      for (auto v : ev.confusion[r]) total += v;
      CHECK(total == 7);
    }
  }
  SECTION("empty test set is an error") {
    auto stream = onehot_stream(1, 2, 3);
    stream.tasks[0].test.x = T(0, 4);
    stream.tasks[0].test.y.clear();
    Rng rng(3);
    Discriminator<double> disc;
    disc.init(4, {}, rng);
    disc.grow_classes(2);
    CHECK_THROWS_AS(evaluate(disc, stream, 1), dgm::Error);
  }
}

TEST_CASE("joint training baseline") {
  SECTION("single-class dataset is classified perfectly") {
    auto stream = onehot_stream(1, 1, 10);
    RunConfig cfg = tiny_config("dgma");
    const double acc = dgm::joint_train_baseline(cfg, stream, 2);
    CHECK(acc == 1.0);
  }
  SECTION("separable stream trains to high accuracy") {
    auto stream = onehot_stream(2, 2, 30);
    RunConfig cfg = tiny_config("dgma");
    const double acc = dgm::joint_train_baseline(cfg, stream, 30);
    CHECK(acc >= 0.95);
  }
}

TEST_CASE("tiny streams run end to end and are deterministic") {
  for (const char* variant : {"dgma", "dgmw"}) {
    RunConfig cfg = tiny_config(variant);
    auto stream = dgm::build_stream<double>(cfg);
    const auto d1 = fresh_dir(std::string("det1_") + variant);
    const auto d2 = fresh_dir(std::string("det2_") + variant);
    ContinualTrainer<double> tr1(cfg, stream, d1);
    tr1.run_stream();
    ContinualTrainer<double> tr2(cfg, stream, d2);
    tr2.run_stream();
    for (const char* f : {"/metrics.csv", "/losses.csv", "/growth.csv", "/occupation.csv"}) {
      std::ifstream a(d1 + f), b(d2 + f);
      std::stringstream sa, sb;
      sa << a.rdbuf();
      sb << b.rdbuf();
      INFO(variant << f);
      CHECK(sa.str() == sb.str());
      CHECK_FALSE(sa.str().empty());
    }
  }
}

TEST_CASE("replay isolation instrumentation rejects foreign real samples") {
  RunConfig cfg = tiny_config("dgma");
  auto stream = dgm::build_stream<double>(cfg);
  // Poison task 2's training labels with a task-1 class.
  stream.tasks[1].train.y[0] = 0;
  ContinualTrainer<double> tr(cfg, stream, fresh_dir("poison"));
  CHECK_THROWS_WITH(tr.run_stream(), Catch::Matchers::ContainsSubstring("replay isolation"));
}

TEST_CASE("freeze exactness and replay stability on a mini DGMw run") {
  RunConfig cfg = tiny_config("dgmw");
  cfg.tasks = 2;
  auto stream = dgm::build_stream<double>(cfg);
  ContinualTrainer<double> tr(cfg, stream, fresh_dir("freeze"));
  tr.train_task(0);

  auto& gen = tr.model().gen;
  const T w_after_1 = gen.hidden[0].W.value;
  const dgm::Bitset cum_after_1 = gen.hmasks[0].cumulated;
  const T z = Rng(99).normal_tensor<double>(6, cfg.latent_dim);
  const std::vector<std::int64_t> y{0, 1, 0, 1, 1, 0};
  const T replay_before = gen.sample_given(0, z, y);

  tr.train_task(1);

  SECTION("weights reserved at end of task 1 are bit-identical after task 2") {
    std::int64_t checked = 0;
    for (std::int64_t i = 0; i < cum_after_1.size(); ++i) {
      if (!cum_after_1.get(i)) continue;
      // Index layout survives expansion via the 2-D remap.
      const std::int64_t r = i / w_after_1.cols(), c = i % w_after_1.cols();
      CHECK(gen.hidden[0].W.value.at(r, c) == w_after_1.at(r, c));
      ++checked;
    }
    INFO("reserved entries checked: " << checked);
    CHECK(checked > 0);
  }
  SECTION("task-1 samples under m^1 are bit-identical after task 2") {
    const T replay_after = gen.sample_given(0, z, y);
    CHECK(replay_after.bit_equal(replay_before));
  }
}

TEST_CASE("checkpoint round trip restores the model exactly") {
  RunConfig cfg = tiny_config("dgmw");
  auto stream = dgm::build_stream<double>(cfg);
  const auto dir = fresh_dir("ckpt");
  ContinualTrainer<double> tr(cfg, stream, dir);
  tr.run_stream();

  const T z = Rng(123).normal_tensor<double>(5, cfg.latent_dim);
  const std::vector<std::int64_t> y{0, 1, 1, 0, 1};
  const T samples = tr.model().gen.sample_given(0, z, y);

  ContinualTrainer<double> fresh(cfg, stream, fresh_dir("ckpt2"));
  fresh.load_model_checkpoint(dir + "/checkpoint_t2.bin");
  CHECK(fresh.model().gen.hidden[0].W.value.bit_equal(tr.model().gen.hidden[0].W.value));
  CHECK(fresh.model().gen.output.W.value.bit_equal(tr.model().gen.output.W.value));
  CHECK(fresh.model().disc.aux_W.value.bit_equal(tr.model().disc.aux_W.value));
  CHECK(fresh.model().gen.sample_given(0, z, y).bit_equal(samples));
  CHECK(fresh.rng().save_state() == tr.rng().save_state());

  SECTION("a second save is byte-identical") {
    fresh.save_model_checkpoint(dir + "/resaved.bin");
    tr.save_model_checkpoint(dir + "/orig2.bin");
    std::ifstream a(dir + "/resaved.bin", std::ios::binary), b(dir + "/orig2.bin", std::ios::binary);
    std::stringstream sa, sb;
    sa << a.rdbuf();
    sb << b.rdbuf();
    CHECK(sa.str() == sb.str());
  }
}

TEST_CASE("expansion ablation leaves shapes constant") {
  RunConfig cfg = tiny_config("dgma");
  cfg.expansion_enabled = false;
  auto stream = dgm::build_stream<double>(cfg);
  ContinualTrainer<double> tr(cfg, stream, fresh_dir("noexp"));
  const std::int64_t p_before = tr.model().gen.hidden[0].out_dim();
  tr.run_stream();
  CHECK(tr.model().gen.hidden[0].out_dim() == p_before);
  for (const auto& row : tr.ledger().growth) CHECK(row.neurons_added == 0);
}
