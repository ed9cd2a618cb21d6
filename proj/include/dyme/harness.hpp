#pragma once

// Experiment configuration, training runs under every paradigm, held-out
// evaluation, baseline suites and curve export.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dyme/optimization.hpp"
#include "dyme/tasks.hpp"
#include "json.hpp"

namespace dyme {

enum class Paradigm { Sft, Grpo, TwoStage, RewardThreshold, SftAnneal, SftBudget, Dyme };

std::string to_string(Paradigm p);
std::optional<Paradigm> parse_paradigm(const std::string& name);

struct ExperimentConfig {
  Paradigm paradigm = Paradigm::Dyme;
  std::uint64_t seed = 0;
  long steps = 5000;
  int K = 8;
  double learning_rate = 2e-3;
  std::optional<double> grpo_learning_rate;  // policy-gradient updates; unset means learning_rate
  double temperature = 1.0;
  double lambda = 0.5;
  double kappa = 0.5;
  double epsilon = 1e-4;
  double clip_epsilon = 0.2;
  double kl_beta = 0.04;  // baselines only; the DyME branch never uses it
  int inner_epochs = 1;
  bool refine_enabled = true;
  std::size_t pool_capacity = 64;
  CheckerConfig checker;

  // Task distribution.
  double hard_fraction = 0.8;
  TaskConfig tasks;

  // Evaluation.
  int eval_size = 300;
  std::uint64_t eval_seed = 999;
  long eval_every = 500;

  // Switching-strategy baselines.
  double threshold = 0.8;       // reward-threshold
  double anneal_weight = 1.0;   // initial SFT weight of the cosine schedule
  int budget_size = 8;          // all-fail prompts per concentrated SFT pass
  long stage1_steps = 1000;     // two-stage: SFT steps before GRPO

  // Policy shape.
  int dim = 16;
  int window = 8;
  int hidden = 96;

  std::string out_dir = "runs/default";

  // Suite only: named overrides applied on top of this config, and seeds.
  std::vector<std::pair<std::string, nlohmann::json>> suite;
  std::vector<std::uint64_t> suite_seeds = {0, 1, 2};

  PolicyConfig policy_config() const;
  StepConfig step_config() const;

  /// Every field as JSON (the shape accepted by from_json).
  nlohmann::json to_json() const;
  /// Starts from defaults and applies `j`. Unknown keys, wrong types and
  /// out-of-range values raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  /// Same, applied on top of `base`.
  static ExperimentConfig apply(const ExperimentConfig& base, const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

  /// FNV-1a of the canonical JSON without out_dir, as 16 hex digits.
  std::string hash() const;
};

/// splitmix64-based mixing of a seed with stream identifiers.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

/// Training task for `step`; a pure function of (seed, step, config).
TaskInstance training_task(const ExperimentConfig& config, long step);
/// Held-out tasks drawn from the eval seed.
std::vector<TaskInstance> evaluation_tasks(const ExperimentConfig& config);

struct EvalReport {
  double accuracy = 0.0;
  double parse_rate = 0.0;
  double mean_r_t = 0.0;
  std::map<std::string, int> grades;             // low / medium / high
  std::map<std::string, double> kind_accuracy;   // per question kind
  int count = 0;

  nlohmann::json to_json() const;
};

/// Greedy decoding (or sampling at temperature 1 with `seed` when not
/// greedy), scored by relaxed correctness against each task's gold answer.
EvalReport evaluate(const PolicyParameters<double>& params, const std::vector<TaskInstance>& tasks,
                    bool greedy = true, std::uint64_t seed = 0);

/// Fraction of groups of size K (sampled at temperature 1) containing at
/// least one correct response.
double group_success_rate(const PolicyParameters<double>& params,
                          const std::vector<TaskInstance>& tasks, int K, std::uint64_t seed);

struct RunSummary {
  std::string paradigm;
  std::uint64_t seed = 0;
  double final_accuracy = 0.0;
  double initial_accuracy = 0.0;
  double peak_accuracy = 0.0;
  long steps_to_first_success = -1;
  double sft_fraction = 0.0;
  std::vector<std::pair<long, double>> eval_curve;
  std::vector<std::pair<long, double>> sft_fraction_curve;  // windowed, per eval interval
  std::vector<char> modes;                                  // 'S', 'G', 'A' per step
  EvalReport final_report;
  double seconds = 0.0;

  /// Window fraction of SFT steps among steps [from, to).
  double sft_window(long from, long to) const;
  nlohmann::json to_json() const;
};

/// Trains from a seeded initialization and writes into config.out_dir:
/// metrics.jsonl (one record per step), summary.json, timing.json,
/// checkpoint.bin and, when refinement is on, pool.json. Only timing.json
/// depends on the machine. Throws NanAbort with the failing step.
RunSummary run_experiment(const ExperimentConfig& config);

struct SuiteRow {
  std::string name;
  std::vector<RunSummary> runs;  // one per seed

  double mean_final() const;
  double min_final() const;
  double max_final() const;
};

/// Runs every named override for every suite seed under
/// out_dir/<name>/seed<N>/ and writes out_dir/suite.json.
std::vector<SuiteRow> run_baseline_suite(const ExperimentConfig& config);

/// Splits a metrics file into reward.csv, mode_fraction.csv and
/// advantage_std.csv in `out_dir`. Malformed lines raise InvalidInput
/// naming the line.
void export_curves(const std::string& metrics_path, const std::string& out_dir);

}  // namespace dyme
