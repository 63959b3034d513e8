// Command-line front end: configure, run, inspect, and self-check DGM
// experiments. Exit codes: 0 success, 1 test/assertion failure, 2 usage or
// config error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "dgm/config.hpp"
#include "dgm/trainer.hpp"
#include "tests_selftest.hpp"

namespace fs = std::filesystem;

namespace {

template <typename R>
int do_run(dgm::RunConfig cfg, const std::string& out_dir) {
  auto stream = dgm::build_stream<R>(cfg);
  dgm::ContinualTrainer<R> trainer(cfg, std::move(stream), out_dir);
  const auto ledger = trainer.run_stream();
  std::cout << "run complete: " << out_dir << "\n";
  for (const auto& ev : ledger.checkpoints)
    std::cout << "  A_" << ev.classes_seen << " = " << ev.accuracy << " (after task "
              << ev.after_task << ")\n";
  if (ledger.jt_accuracy >= 0.0)
    std::cout << "  JT upper bound = " << ledger.jt_accuracy << "\n";
  return 0;
}

int cmd_run(const std::string& config_path, const std::string& out_dir,
            const std::vector<std::string>& overrides, std::int64_t seed_flag) {
  dgm::RunConfig cfg = dgm::load_config(config_path);
  for (const auto& kv : overrides) dgm::apply_override(cfg, kv);
  if (seed_flag >= 0) cfg.seed = static_cast<std::uint64_t>(seed_flag);
  if (cfg.precision == "f32") return do_run<float>(cfg, out_dir);
  return do_run<double>(cfg, out_dir);
}

int cmd_eval(const std::string& run_dir, std::int64_t task) {
  std::ifstream mf(run_dir + "/manifest.json");
  if (!mf) {
    std::cerr << "eval: no manifest.json in " << run_dir << "\n";
    return 2;
  }
  nlohmann::json manifest;
  mf >> manifest;
  auto cfg = dgm::RunConfig::from_json(manifest.at("config"));
  if (task <= 0) task = cfg.tasks;
  const std::string ckpt = run_dir + "/checkpoint_t" + std::to_string(task) + ".bin";
  if (!fs::exists(ckpt)) {
    std::cerr << "eval: missing " << ckpt << "\n";
    return 2;
  }
  dgm::Rng rng(0);
  auto model = dgm::model_from_checkpoint<double>(ckpt, rng);
  auto stream = dgm::build_stream<double>(cfg);
  const auto ev = dgm::evaluate(model.disc, stream, static_cast<std::size_t>(task));
  std::cout << "checkpoint after task " << task << ": accuracy " << ev.accuracy << " over "
            << ev.classes_seen << " classes\n";
  for (std::size_t t = 0; t < ev.per_task_accuracy.size(); ++t)
    std::cout << "  task " << t + 1 << " block accuracy: " << ev.per_task_accuracy[t] << "\n";
  return 0;
}

int cmd_report(const std::string& run_dir) {
  using dgm::CsvTable;
  bool complete = true;
  if (!fs::exists(run_dir + "/manifest.json")) {
    std::cerr << "warning: " << run_dir << " has no manifest.json; nothing to report\n";
    return 0;
  }
  nlohmann::json manifest;
  {
    std::ifstream mf(run_dir + "/manifest.json");
    mf >> manifest;
  }
  const auto cfg = dgm::RunConfig::from_json(manifest.at("config"));

  std::cout << "== accuracy over seen classes ==\n";
  std::vector<std::int64_t> tasks_present;
  if (fs::exists(run_dir + "/metrics.csv")) {
    const auto metrics = CsvTable::read(run_dir + "/metrics.csv");
    const auto ct = metrics.col("task"), cc = metrics.col("classes_seen"),
               ca = metrics.col("accuracy");
    for (const auto& row : metrics.rows) {
      std::cout << "  A_" << row[cc] << " = " << row[ca] << " (after task " << row[ct] << ")\n";
      tasks_present.push_back(std::stoll(row[ct]));
    }
    if (static_cast<std::int64_t>(metrics.rows.size()) < cfg.tasks) {
      std::cerr << "warning: run incomplete (" << metrics.rows.size() << " of " << cfg.tasks
                << " checkpoints)\n";
      complete = false;
    }
  } else {
    std::cerr << "warning: metrics.csv missing\n";
    complete = false;
  }
  if (manifest.contains("jt_accuracy"))
    std::cout << "  JT upper bound = " << manifest["jt_accuracy"].get<double>() << "\n";

  // Tidy accuracy-vs-task table from the confusion matrices.
  dgm::CsvWriter acc_out(run_dir + "/report_accuracy_vs_task.csv",
                         {"checkpoint", "task_block", "accuracy"});
  for (std::int64_t t : tasks_present) {
    const std::string path = run_dir + "/confusion_t" + std::to_string(t) + ".csv";
    if (!fs::exists(path)) {
      std::cerr << "warning: missing " << path << "\n";
      complete = false;
      continue;
    }
    const auto conf = CsvTable::read(path);
    const std::int64_t classes = static_cast<std::int64_t>(conf.rows.size());
    for (std::int64_t block = 0; block * cfg.classes_per_task < classes; ++block) {
      std::int64_t correct = 0, total = 0;
      for (std::int64_t c = block * cfg.classes_per_task;
           c < std::min(classes, (block + 1) * cfg.classes_per_task); ++c) {
        for (std::size_t p = 1; p < conf.rows[static_cast<std::size_t>(c)].size(); ++p)
          total += std::stoll(conf.rows[static_cast<std::size_t>(c)][p]);
        correct += std::stoll(conf.rows[static_cast<std::size_t>(c)][static_cast<std::size_t>(c + 1)]);
      }
      acc_out.row() << t << (block + 1)
                    << (total > 0 ? static_cast<double>(correct) / static_cast<double>(total)
                                  : 0.0);
    }
  }

  if (!tasks_present.empty()) {
    const std::string last =
        run_dir + "/confusion_t" + std::to_string(tasks_present.back()) + ".csv";
    if (fs::exists(last)) {
      const auto conf = CsvTable::read(last);
      std::cout << "== final confusion summary ==\n";
      for (std::size_t r = 0; r < conf.rows.size(); ++r) {
        std::int64_t total = 0, best_c = 0, best_v = -1, correct = 0;
        for (std::size_t p = 1; p < conf.rows[r].size(); ++p) {
          const std::int64_t v = std::stoll(conf.rows[r][p]);
          total += v;
          if (v > best_v) {
            best_v = v;
            best_c = static_cast<std::int64_t>(p - 1);
          }
          if (p - 1 == r) correct = v;
        }
        std::cout << "  class " << r << ": acc "
                  << (total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0)
                  << ", most predicted " << best_c << "\n";
      }
    }
  }

  std::cout << "== growth ==\n";
  if (fs::exists(run_dir + "/growth.csv")) {
    const auto growth = CsvTable::read(run_dir + "/growth.csv");
    std::int64_t added = 0;
    const auto cn = growth.col("neurons_added");
    std::string final_p;
    for (const auto& row : growth.rows) {
      added += std::stoll(row[cn]);
      final_p = row[growth.col("total_p")];
    }
    std::cout << "  total neurons added: " << added << "\n";
    // Tidy occupation curve for plotting lives in occupation.csv already;
    // point the reader there.
    std::cout << "  occupation trajectory: " << run_dir << "/occupation.csv\n";
  } else {
    std::cerr << "warning: growth.csv missing\n";
    complete = false;
  }
  if (!complete) std::cerr << "warning: report generated from a partial run directory\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic generative memory: continual class-incremental learning with a "
               "label-conditional GAN, per-task binary masks, and dynamic expansion"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/out", run_dir;
  std::vector<std::string> overrides;
  std::int64_t seed_flag = -1, task_flag = -1;
  std::string inject;

  auto* run = app.add_subcommand("run", "Execute a configured experiment");
  run->add_option("--config", config_path, "Run configuration file")->required();
  run->add_option("--out", out_dir, "Output directory for run artifacts");
  run->add_option("--set", overrides, "Override a config key: section.key=value (repeatable)");
  run->add_option("--seed", seed_flag, "Override the run seed");

  auto* eval = app.add_subcommand("eval", "Re-evaluate a stored checkpoint");
  eval->add_option("--run", run_dir, "Run directory")->required();
  eval->add_option("--task", task_flag, "Checkpoint index (default: last task)");

  auto* report = app.add_subcommand("report", "Summarize a run directory");
  report->add_option("--run", run_dir, "Run directory")->required();

  auto* selftest = app.add_subcommand("selftest", "Run the built-in invariant suites");
  selftest->add_option("--inject", inject,
                       "Fault-injection hook for harness testing (gate-bypass)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (run->parsed()) return cmd_run(config_path, out_dir, overrides, seed_flag);
    if (eval->parsed()) return cmd_eval(run_dir, task_flag);
    if (report->parsed()) return cmd_report(run_dir);
    if (selftest->parsed()) return dgm::selftest::run_all(inject);
  } catch (const dgm::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const dgm::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
