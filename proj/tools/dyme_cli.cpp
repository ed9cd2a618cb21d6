// Command-line front end: train, suite, eval, export, tasks.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error, 3 NaN abort.

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "dyme/checkpoint.hpp"
#include "dyme/harness.hpp"

namespace {

int run_guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const dyme::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const dyme::NanAbort& e) {
    std::cerr << "aborted at step " << e.step() << ": " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DyME: dynamic switching between SFT and GRPO on synthetic chart QA"};
  app.require_subcommand(1);

  std::string config_path, out_dir, paradigm, checkpoint_path, tasks_path, metrics_path;
  std::uint64_t seed = 0;
  int count = 100;

  auto* train = app.add_subcommand("train", "train one run and print its summary");
  train->add_option("--config", config_path, "experiment config (JSON)")->required();
  auto* seed_opt = train->add_option("--seed", seed, "override the config seed");
  train->add_option("--paradigm", paradigm, "override the config paradigm");
  train->add_option("--out", out_dir, "output directory");

  auto* suite = app.add_subcommand("suite", "run every suite entry for every suite seed");
  suite->add_option("--config", config_path, "suite config (JSON)")->required();
  suite->add_option("--out", out_dir, "output directory");

  auto* eval = app.add_subcommand("eval", "greedy evaluation of a checkpoint on a task file");
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint.bin from a run")->required();
  eval->add_option("--tasks", tasks_path, "tasks as JSON lines")->required();

  auto* exp = app.add_subcommand("export", "split a metrics file into per-signal CSVs");
  exp->add_option("--metrics", metrics_path, "metrics.jsonl")->required();
  exp->add_option("--out", out_dir, "directory for the CSVs (default: next to the metrics)");

  auto* tasks = app.add_subcommand("tasks", "write held-out tasks as JSON lines");
  tasks->add_option("--config", config_path, "experiment config (JSON)");
  tasks->add_option("--count", count, "number of tasks");
  tasks->add_option("--out", tasks_path, "output file")->required();

  CLI11_PARSE(app, argc, argv);

  auto load = [&] {
    dyme::ExperimentConfig c =
        config_path.empty() ? dyme::ExperimentConfig{} : dyme::ExperimentConfig::load(config_path);
    if (!out_dir.empty()) c.out_dir = out_dir;
    return c;
  };

  if (*train) {
    return run_guarded([&] {
      auto c = load();
      if (*seed_opt) c.seed = seed;
      if (!paradigm.empty()) c = dyme::ExperimentConfig::apply(c, {{"paradigm", paradigm}});
      const auto summary = dyme::run_experiment(c);
      std::cout << summary.to_json().dump() << '\n';
    });
  }
  if (*suite) {
    return run_guarded([&] {
      const auto rows = dyme::run_baseline_suite(load());
      for (const auto& row : rows)
        std::printf("%-24s mean %.3f  min %.3f  max %.3f\n", row.name.c_str(), row.mean_final(),
                    row.min_final(), row.max_final());
    });
  }
  if (*eval) {
    return run_guarded([&] {
      const auto ck = dyme::load_checkpoint(checkpoint_path);
      const auto report = dyme::evaluate(ck.params, dyme::read_tasks_jsonl(tasks_path));
      std::cout << report.to_json().dump() << '\n';
    });
  }
  if (*exp) {
    return run_guarded([&] {
      const std::string dir =
          out_dir.empty() ? std::filesystem::path(metrics_path).parent_path().string() : out_dir;
      dyme::export_curves(metrics_path, dir.empty() ? "." : dir);
    });
  }
  if (*tasks) {
    return run_guarded([&] {
      auto c = load();
      c.eval_size = count;
      dyme::write_tasks_jsonl(tasks_path, dyme::evaluation_tasks(c));
    });
  }
  return 0;
}
