#include "dyme/harness.hpp"

#include <chrono>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "dyme/checkpoint.hpp"

namespace dyme {

using nlohmann::json;

namespace {

constexpr const char* kParadigmNames[] = {"sft",        "grpo",       "two_stage", "reward_threshold",
                                          "sft_anneal", "sft_budget", "dyme"};

template <typename T>
T get(const json& j, const std::string& key) {
  try {
    return j.get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + key + "' has the wrong type");
  }
}

std::vector<QuestionKind> kinds_from(const json& j, const std::string& key) {
  std::vector<QuestionKind> out;
  for (const auto& name : get<std::vector<std::string>>(j, key)) {
    const auto k = parse_question_kind(name);
    if (!k) throw ConfigError("unknown question kind '" + name + "' in " + key);
    out.push_back(*k);
  }
  return out;
}

json kinds_to(const std::vector<QuestionKind>& kinds) {
  json out = json::array();
  for (auto k : kinds) out.push_back(to_string(k));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const json&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
#define DYME_FIELD(name, member, type) \
  t[name] = [](ExperimentConfig& c, const json& v, const std::string& k) { c.member = get<type>(v, k); }
    DYME_FIELD("seed", seed, std::uint64_t);
    DYME_FIELD("steps", steps, long);
    DYME_FIELD("K", K, int);
    DYME_FIELD("learning_rate", learning_rate, double);
    t["grpo_learning_rate"] = [](ExperimentConfig& c, const json& v, const std::string& k) {
      c.grpo_learning_rate =
          v.is_null() ? std::nullopt : std::optional<double>(get<double>(v, k));
    };
    DYME_FIELD("temperature", temperature, double);
    DYME_FIELD("lambda", lambda, double);
    DYME_FIELD("kappa", kappa, double);
    DYME_FIELD("epsilon", epsilon, double);
    DYME_FIELD("clip_epsilon", clip_epsilon, double);
    DYME_FIELD("kl_beta", kl_beta, double);
    DYME_FIELD("inner_epochs", inner_epochs, int);
    DYME_FIELD("refine_enabled", refine_enabled, bool);
    DYME_FIELD("pool_capacity", pool_capacity, std::size_t);
    DYME_FIELD("coverage_low", checker.coverage_low, double);
    DYME_FIELD("coverage_high", checker.coverage_high, double);
    DYME_FIELD("style_min", checker.style_min, double);
    DYME_FIELD("hard_fraction", hard_fraction, double);
    DYME_FIELD("min_value", tasks.min_value, std::int64_t);
    DYME_FIELD("max_value", tasks.max_value, std::int64_t);
    DYME_FIELD("reference_shows_arithmetic", tasks.reference_shows_arithmetic, bool);
    DYME_FIELD("eval_size", eval_size, int);
    DYME_FIELD("eval_seed", eval_seed, std::uint64_t);
    DYME_FIELD("eval_every", eval_every, long);
    DYME_FIELD("threshold", threshold, double);
    DYME_FIELD("anneal_weight", anneal_weight, double);
    DYME_FIELD("budget_size", budget_size, int);
    DYME_FIELD("stage1_steps", stage1_steps, long);
    DYME_FIELD("dim", dim, int);
    DYME_FIELD("window", window, int);
    DYME_FIELD("hidden", hidden, int);
    DYME_FIELD("out_dir", out_dir, std::string);
    DYME_FIELD("seeds", suite_seeds, std::vector<std::uint64_t>);
#undef DYME_FIELD
    t["paradigm"] = [](ExperimentConfig& c, const json& v, const std::string& k) {
      const auto p = parse_paradigm(get<std::string>(v, k));
      if (!p) throw ConfigError("unknown paradigm '" + v.dump() + "'");
      c.paradigm = *p;
    };
    t["easy_kinds"] = [](ExperimentConfig& c, const json& v, const std::string& k) {
      c.tasks.easy_kinds = kinds_from(v, k);
    };
    t["hard_kinds"] = [](ExperimentConfig& c, const json& v, const std::string& k) {
      c.tasks.hard_kinds = kinds_from(v, k);
    };
    t["suite"] = [](ExperimentConfig& c, const json& v, const std::string&) {
      if (!v.is_array()) throw ConfigError("'suite' must be an array");
      c.suite.clear();
      for (const auto& entry : v) {
        if (!entry.is_object() || !entry.contains("name") || !entry["name"].is_string())
          throw ConfigError("every suite entry needs a string 'name'");
        json overrides = entry;
        overrides.erase("name");
        for (const char* forbidden : {"suite", "seeds", "seed", "out_dir"})
          if (overrides.contains(forbidden))
            throw ConfigError(std::string("suite entries cannot set '") + forbidden + "'");
        c.suite.emplace_back(entry["name"].get<std::string>(), overrides);
      }
    };
    return t;
  }();
  return table;
}

void validate(const ExperimentConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(c.steps >= 0, "steps must be >= 0");
  require(c.K >= 2 || c.paradigm == Paradigm::Sft, "K must be >= 2 for sampling paradigms");
  require(c.K >= 1, "K must be >= 1");
  require(c.learning_rate >= 0.0, "learning_rate must be >= 0");
  require(c.grpo_learning_rate.value_or(0.0) >= 0.0, "grpo_learning_rate must be >= 0");
  require(c.temperature > 0.0, "temperature must be > 0");
  require(c.epsilon > 0.0, "epsilon must be > 0");
  require(c.lambda >= 0.0 && c.kappa >= 0.0, "reward weights must be >= 0");
  require(c.clip_epsilon >= 0.0, "clip_epsilon must be >= 0");
  require(c.kl_beta >= 0.0, "kl_beta must be >= 0");
  require(c.inner_epochs >= 1, "inner_epochs must be >= 1");
  require(c.pool_capacity >= 1, "pool_capacity must be >= 1");
  require(c.checker.coverage_low <= c.checker.coverage_high, "coverage_low must be <= coverage_high");
  require(c.hard_fraction >= 0.0 && c.hard_fraction <= 1.0, "hard_fraction must be in [0,1]");
  require(c.tasks.min_value >= 0 && c.tasks.max_value - c.tasks.min_value >= Vocabulary::kMaxLabels - 1,
          "value range must hold six distinct non-negative values");
  require(c.tasks.max_value < 1000000000, "max_value too large");
  require(!c.tasks.easy_kinds.empty() && !c.tasks.hard_kinds.empty(), "question kinds must be nonempty");
  require(c.eval_size >= 0, "eval_size must be >= 0");
  require(c.eval_every >= 1, "eval_every must be >= 1");
  require(c.budget_size >= 1, "budget_size must be >= 1");
  require(c.stage1_steps >= 0, "stage1_steps must be >= 0");
  require(c.dim >= 1 && c.window >= 1 && c.hidden >= 1, "policy sizes must be positive");
  require(c.policy_config().parameter_count() < 100000, "policy must have fewer than 100000 parameters");
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

json nullable(bool present, double value) { return present ? json(value) : json(nullptr); }

json reward_trace(const std::vector<RewardBreakdown>& rewards) {
  json out = json::array();
  for (std::size_t k = 0; k < rewards.size(); ++k) {
    const auto& r = rewards[k];
    out.push_back({{"k", k},
                   {"r_a", r.r_a},
                   {"r_t", r.r_t},
                   {"grade", to_string(r.grade)},
                   {"combined", r.combined},
                   {"advantage", r.advantage}});
  }
  return out;
}

std::string mode_name(char m) {
  switch (m) {
    case 'S': return "sft";
    case 'G': return "grpo";
    default: return "anneal";
  }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

// Written when a run aborts on a non-finite value, next to the partial metrics.
void write_abort_dump(const std::filesystem::path& path, const NanAbort& e,
                      const PolicyParameters<double>& params, const std::string& hash) {
  const auto& theta = params.theta();
  long non_finite = 0;
  double max_abs = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    if (!std::isfinite(theta[i])) ++non_finite;
    else max_abs = std::max(max_abs, std::abs(theta[i]));
  }
  write_text(path, json{{"step", e.step()},
                        {"error", e.what()},
                        {"non_finite_parameters", non_finite},
                        {"max_abs_finite_parameter", max_abs},
                        {"config_hash", hash}}
                       .dump(2) + "\n");
}

}  // namespace

std::string to_string(Paradigm p) { return kParadigmNames[static_cast<int>(p)]; }

std::optional<Paradigm> parse_paradigm(const std::string& name) {
  for (int i = 0; i < 7; ++i)
    if (name == kParadigmNames[i]) return static_cast<Paradigm>(i);
  return std::nullopt;
}

PolicyConfig ExperimentConfig::policy_config() const {
  PolicyConfig p;
  p.vocab_size = Vocabulary::standard().size();
  p.dim = dim;
  p.window = window;
  p.hidden = hidden;
  p.prompt_slots = tasks.prompt_length();
  // Longest structured trace: six records, each read, compared and carried.
  p.max_length = std::max(64, 16 + 19 * (1 + tasks.value_digits()));
  p.pad = Vocabulary::standard().pad();
  return p;
}

StepConfig ExperimentConfig::step_config() const {
  StepConfig s;
  s.K = K;
  s.temperature = temperature;
  s.epsilon = epsilon;
  s.weights = {lambda, kappa};
  s.checker = checker;
  s.refine = refine_enabled;
  s.grpo = paradigm == Paradigm::Dyme ? GrpoConfig::simplified(inner_epochs)
                                      : GrpoConfig::clipped(clip_epsilon, kl_beta, inner_epochs);
  s.grpo.learning_rate = grpo_learning_rate;
  return s;
}

json ExperimentConfig::to_json() const {
  json suite_json = json::array();
  for (const auto& [name, overrides] : suite) {
    json e = overrides;
    e["name"] = name;
    suite_json.push_back(e);
  }
  return {{"paradigm", to_string(paradigm)},
          {"seed", seed},
          {"steps", steps},
          {"K", K},
          {"learning_rate", learning_rate},
          {"grpo_learning_rate", grpo_learning_rate ? json(*grpo_learning_rate) : json(nullptr)},
          {"temperature", temperature},
          {"lambda", lambda},
          {"kappa", kappa},
          {"epsilon", epsilon},
          {"clip_epsilon", clip_epsilon},
          {"kl_beta", kl_beta},
          {"inner_epochs", inner_epochs},
          {"refine_enabled", refine_enabled},
          {"pool_capacity", pool_capacity},
          {"coverage_low", checker.coverage_low},
          {"coverage_high", checker.coverage_high},
          {"style_min", checker.style_min},
          {"hard_fraction", hard_fraction},
          {"min_value", tasks.min_value},
          {"max_value", tasks.max_value},
          {"easy_kinds", kinds_to(tasks.easy_kinds)},
          {"hard_kinds", kinds_to(tasks.hard_kinds)},
          {"reference_shows_arithmetic", tasks.reference_shows_arithmetic},
          {"eval_size", eval_size},
          {"eval_seed", eval_seed},
          {"eval_every", eval_every},
          {"threshold", threshold},
          {"anneal_weight", anneal_weight},
          {"budget_size", budget_size},
          {"stage1_steps", stage1_steps},
          {"dim", dim},
          {"window", window},
          {"hidden", hidden},
          {"out_dir", out_dir},
          {"suite", suite_json},
          {"seeds", suite_seeds}};
}

ExperimentConfig ExperimentConfig::apply(const ExperimentConfig& base, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  ExperimentConfig c = base;
  for (const auto& [key, value] : j.items()) {
    const auto it = setters().find(key);
    if (it == setters().end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(c, value, key);
  }
  validate(c);
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) { return apply(ExperimentConfig{}, j); }

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  j.erase("out_dir");
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a(j.dump()));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

namespace {

TaskInstance draw_task(const ExperimentConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Difficulty d = uniform01(rng) < c.hard_fraction ? Difficulty::Hard : Difficulty::Easy;
  return generate_task(rng(), d, c.tasks);
}

}  // namespace

TaskInstance training_task(const ExperimentConfig& config, long step) {
  return draw_task(config, derive_seed(config.seed, 1, static_cast<std::uint64_t>(step)));
}

std::vector<TaskInstance> evaluation_tasks(const ExperimentConfig& config) {
  std::vector<TaskInstance> out;
  for (int i = 0; i < config.eval_size; ++i)
    out.push_back(draw_task(config, derive_seed(config.eval_seed, 7, static_cast<std::uint64_t>(i))));
  return out;
}

json EvalReport::to_json() const {
  return {{"accuracy", accuracy},   {"parse_rate", parse_rate},       {"mean_r_t", mean_r_t},
          {"grades", grades},       {"kind_accuracy", kind_accuracy}, {"count", count}};
}

EvalReport evaluate(const PolicyParameters<double>& params, const std::vector<TaskInstance>& tasks,
                    bool greedy, std::uint64_t seed) {
  EvalReport r;
  r.grades = {{"low", 0}, {"medium", 0}, {"high", 0}};
  std::map<std::string, std::pair<int, int>> per_kind;
  const TokenId eos = Vocabulary::standard().eos();
  int correct = 0, parsed = 0;
  double rt = 0.0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto& task = tasks[i];
    const auto group =
        sample_group(params, std::span<const TokenId>(task.prompt), 1, 1.0, derive_seed(seed, 9, i), eos, greedy);
    const ParsedResponse p = parse_response(group[0].tokens);
    const int ok = answer_reward(p, task.gold);
    Grade g = Grade::Low;
    if (p.parse_ok) {
      ++parsed;
      rt += thinking_reward(p.trace_tokens, parse_response(task.reference_trace).trace_tokens);
      g = check_trace(p.trace_tokens, required_facts(task), {});
    }
    ++r.grades[to_string(g)];
    correct += ok;
    auto& k = per_kind[to_string(task.question.kind)];
    k.first += ok;
    ++k.second;
  }
  r.count = static_cast<int>(tasks.size());
  if (r.count > 0) {
    r.accuracy = double(correct) / r.count;
    r.parse_rate = double(parsed) / r.count;
    r.mean_r_t = rt / r.count;
  }
  for (const auto& [kind, c] : per_kind) r.kind_accuracy[kind] = double(c.first) / c.second;
  return r;
}

double group_success_rate(const PolicyParameters<double>& params,
                          const std::vector<TaskInstance>& tasks, int K, std::uint64_t seed) {
  if (tasks.empty()) return 0.0;
  int hits = 0;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    const auto group = sample_group(params, std::span<const TokenId>(tasks[i].prompt), K, 1.0,
                                    derive_seed(seed, 11, i), Vocabulary::standard().eos());
    for (const auto& r : group)
      if (answer_reward(parse_response(r.tokens), tasks[i].gold)) {
        ++hits;
        break;
      }
  }
  return double(hits) / double(tasks.size());
}

double RunSummary::sft_window(long from, long to) const {
  from = std::max(0L, from);
  to = std::min<long>(to, static_cast<long>(modes.size()));
  if (to <= from) return 0.0;
  long n = 0;
  for (long i = from; i < to; ++i) n += modes[i] == 'S';
  return double(n) / double(to - from);
}

json RunSummary::to_json() const {
  json curve = json::array(), sft_curve = json::array();
  for (const auto& [s, a] : eval_curve) curve.push_back({{"step", s}, {"accuracy", a}});
  for (const auto& [s, f] : sft_fraction_curve) sft_curve.push_back({{"step", s}, {"sft_fraction", f}});
  return {{"paradigm", paradigm},
          {"seed", seed},
          {"final_accuracy", final_accuracy},
          {"initial_accuracy", initial_accuracy},
          {"peak_accuracy", peak_accuracy},
          {"steps_to_first_success", steps_to_first_success},
          {"sft_fraction", sft_fraction},
          {"eval_curve", curve},
          {"sft_fraction_curve", sft_curve},
          {"final_report", final_report.to_json()}};
}

RunSummary run_experiment(const ExperimentConfig& cfg) {
  validate(cfg);
  namespace fs = std::filesystem;
  const auto start = std::chrono::steady_clock::now();
  const fs::path dir(cfg.out_dir);
  fs::create_directories(dir);
  const std::string hash = cfg.hash();

  PolicyParameters<double> params =
      PolicyParameters<double>::random(cfg.policy_config(), derive_seed(cfg.seed, 0, 0));
  TrainingState state(params, cfg.learning_rate, cfg.pool_capacity);
  const StepConfig step_cfg = cfg.step_config();
  const std::vector<TaskInstance> evals = evaluation_tasks(cfg);

  RunSummary summary;
  summary.paradigm = to_string(cfg.paradigm);
  summary.seed = cfg.seed;
  summary.final_report = evaluate(params, evals);
  summary.initial_accuracy = summary.final_report.accuracy;
  summary.peak_accuracy = summary.initial_accuracy;
  summary.eval_curve.emplace_back(0, summary.initial_accuracy);

  std::ofstream metrics(dir / "metrics.jsonl", std::ios::binary);
  if (!metrics) throw std::runtime_error("cannot write metrics in " + dir.string());

  std::deque<double> recent_success;
  std::vector<TaskInstance> budget_queue;
  long sft_steps = 0;

  auto admit = [&](const ScoredGroup& g, const TaskInstance& task) {
    if (!cfg.refine_enabled) return;
    for (const auto& trace : g.high_traces) state.pool.admit(trace, Grade::High, task.id, state.steps);
  };

  for (long s = 0; s < cfg.steps; ++s) {
    const TaskInstance task = training_task(cfg, s);
    const std::uint64_t rollout_seed = derive_seed(cfg.seed, 2, static_cast<std::uint64_t>(s));
    StepOutcome out;
    char mode = 'S';

    try {
      switch (cfg.paradigm) {
        case Paradigm::Sft: {
          const Tokens target = supervision_target(task, state.pool, cfg.refine_enabled);
          sft_update(params, state, task.prompt, target, out);
          break;
        }
        case Paradigm::Grpo: {
          const Tokens target = supervision_target(task, state.pool, cfg.refine_enabled);
          const ScoredGroup g = sample_and_score(params, task, target, state.pool, step_cfg, rollout_seed);
          summarize_group(g, out);
          admit(g, task);
          grpo_update(params, state, task.prompt, g, step_cfg.grpo, out);
          mode = 'G';
          break;
        }
        case Paradigm::TwoStage: {
          if (s == cfg.stage1_steps) state.reference = snapshot(params);
          const Tokens target = supervision_target(task, state.pool, cfg.refine_enabled);
          if (s < cfg.stage1_steps) {
            sft_update(params, state, task.prompt, target, out);
          } else {
            const ScoredGroup g = sample_and_score(params, task, target, state.pool, step_cfg, rollout_seed);
            summarize_group(g, out);
            admit(g, task);
            grpo_update(params, state, task.prompt, g, step_cfg.grpo, out);
            mode = 'G';
          }
          break;
        }
        case Paradigm::RewardThreshold: {
          const Tokens target = supervision_target(task, state.pool, cfg.refine_enabled);
          const ScoredGroup g = sample_and_score(params, task, target, state.pool, step_cfg, rollout_seed);
          summarize_group(g, out);
          admit(g, task);
          // Combined reward scaled to [0, 1] so the threshold reads as a fraction.
          const double normalized = out.mean_reward / (1.0 + cfg.lambda + cfg.kappa);
          if (normalized > cfg.threshold) {
            grpo_update(params, state, task.prompt, g, step_cfg.grpo, out);
            mode = 'G';
          } else {
            sft_update(params, state, task.prompt, target, out);
          }
          break;
        }
        case Paradigm::SftAnneal: {
          const Tokens target = supervision_target(task, state.pool, cfg.refine_enabled);
          const ScoredGroup g = sample_and_score(params, task, target, state.pool, step_cfg, rollout_seed);
          summarize_group(g, out);
          admit(g, task);
          auto rl = grpo_loss_and_grad(params, std::span<const TokenId>(task.prompt), g.rollouts,
                                       std::span<const double>(g.advantages.advantages), step_cfg.grpo,
                                       &state.reference);
          const auto sft = sft_loss_and_grad(params, std::span<const TokenId>(task.prompt),
                                             std::span<const TokenId>(target));
          const double w = cfg.anneal_weight * 0.5 *
                           (1.0 + std::cos(std::numbers::pi * double(s) / double(std::max(1L, cfg.steps))));
          rl.grad.theta() += w * sft.grad.theta();
          out.loss = rl.loss + w * sft.loss;
          if (!std::isfinite(out.loss)) throw NanAbort("non-finite annealed loss", s);
          out.grad_norm = rl.grad.theta().norm();
          out.updated = state.optimizer.step(params, rl.grad, s, step_cfg.grpo.learning_rate);
          mode = 'A';
          break;
        }
        case Paradigm::SftBudget: {
          const Tokens target = supervision_target(task, state.pool, cfg.refine_enabled);
          const ScoredGroup g = sample_and_score(params, task, target, state.pool, step_cfg, rollout_seed);
          summarize_group(g, out);
          admit(g, task);
          if (mode_select(g.answer_rewards) == Mode::Memorize) budget_queue.push_back(task);
          if (static_cast<int>(budget_queue.size()) >= cfg.budget_size) {
            PolicyParameters<double> grad(params.config());
            double loss = 0.0;
            const double n = double(budget_queue.size());
            for (const auto& queued : budget_queue) {
              const Tokens t = supervision_target(queued, state.pool, cfg.refine_enabled);
              const auto lg = sft_loss_and_grad(params, std::span<const TokenId>(queued.prompt),
                                                std::span<const TokenId>(t));
              grad.theta() += lg.grad.theta() / n;
              loss += lg.loss / n;
            }
            budget_queue.clear();
            if (!std::isfinite(loss)) throw NanAbort("non-finite SFT loss", s);
            out.loss = loss;
            out.grad_norm = grad.theta().norm();
            out.updated = state.optimizer.step(params, grad, s);
          } else {
            grpo_update(params, state, task.prompt, g, step_cfg.grpo, out);
            mode = 'G';
          }
          break;
        }
        case Paradigm::Dyme: {
          out = dyme_step(params, state, task, step_cfg, rollout_seed);
          mode = out.mode == Mode::Memorize ? 'S' : 'G';
          break;
        }
      }
    } catch (const NanAbort& e) {
      metrics.close();
      write_abort_dump(dir / "abort.json", e, params, hash);
      throw;
    }
    if (cfg.paradigm != Paradigm::Dyme)  // dyme_step keeps its own count
      out.sft_fraction_running = state.record(mode == 'S' ? Mode::Memorize : Mode::Explore);
    sft_steps += mode == 'S';
    summary.modes.push_back(mode);

    if (out.sampled) {
      recent_success.push_back(out.group_success_rate);
      if (recent_success.size() > 100) recent_success.pop_front();
      if (summary.steps_to_first_success < 0 && out.group_success_rate > 0.0)
        summary.steps_to_first_success = s;
    }
    double rolling = 0.0;
    for (double v : recent_success) rolling += v;
    if (!recent_success.empty()) rolling /= double(recent_success.size());

    json record = {{"step", s},
                   {"paradigm", summary.paradigm},
                   {"mode", mode_name(mode)},
                   {"loss", out.loss},
                   {"grad_norm", out.grad_norm},
                   {"mean_reward", nullable(out.sampled, out.mean_reward)},
                   {"reward_std", nullable(out.sampled, out.reward_std)},
                   {"advantage_std", nullable(out.sampled, out.advantage_std)},
                   {"advantage_max", nullable(out.sampled, out.advantage_max)},
                   {"group_success_rate", nullable(out.sampled, out.group_success_rate)},
                   {"train_accuracy", nullable(!recent_success.empty(), rolling)},
                   {"sft_fraction_running", out.sft_fraction_running},
                   {"updated", out.updated},
                   {"rewards", reward_trace(out.rewards)},
                   {"config_hash", hash}};
    metrics << record.dump() << '\n';

    if ((s + 1) % cfg.eval_every == 0 || s + 1 == cfg.steps) {
      summary.final_report = evaluate(params, evals);
      const double acc = summary.final_report.accuracy;
      summary.eval_curve.emplace_back(s + 1, acc);
      summary.peak_accuracy = std::max(summary.peak_accuracy, acc);
      const long from = summary.sft_fraction_curve.empty() ? 0 : summary.sft_fraction_curve.back().first;
      summary.sft_fraction_curve.emplace_back(s + 1, summary.sft_window(from, s + 1));
    }
  }
  metrics.close();

  summary.final_accuracy = summary.final_report.accuracy;
  summary.sft_fraction = cfg.steps > 0 ? double(sft_steps) / double(cfg.steps) : 0.0;
  summary.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  save_checkpoint((dir / "checkpoint.bin").string(), params, {params.config(), cfg.seed, hash, cfg.steps});
  if (cfg.refine_enabled) write_text(dir / "pool.json", state.pool.to_json() + "\n");
  json summary_json = summary.to_json();
  summary_json["config"] = cfg.to_json();
  summary_json["config"].erase("out_dir");  // keeps the file identical across output locations
  summary_json["config_hash"] = hash;
  write_text(dir / "summary.json", summary_json.dump(2) + "\n");
  write_text(dir / "timing.json",
             json{{"seconds", summary.seconds},
                  {"seconds_per_step", cfg.steps > 0 ? summary.seconds / double(cfg.steps) : 0.0}}
                     .dump() + "\n");
  return summary;
}

double SuiteRow::mean_final() const {
  double s = 0.0;
  for (const auto& r : runs) s += r.final_accuracy;
  return runs.empty() ? 0.0 : s / double(runs.size());
}

double SuiteRow::min_final() const {
  double m = 1.0;
  for (const auto& r : runs) m = std::min(m, r.final_accuracy);
  return m;
}

double SuiteRow::max_final() const {
  double m = 0.0;
  for (const auto& r : runs) m = std::max(m, r.final_accuracy);
  return m;
}

std::vector<SuiteRow> run_baseline_suite(const ExperimentConfig& config) {
  namespace fs = std::filesystem;
  if (config.suite.empty()) throw ConfigError("suite config lists no runs");
  std::vector<SuiteRow> rows;
  json table = json::array();
  for (const auto& [name, overrides] : config.suite) {
    SuiteRow row;
    row.name = name;
    json per_seed = json::array();
    for (std::uint64_t seed : config.suite_seeds) {
      ExperimentConfig c = ExperimentConfig::apply(config, overrides);
      c.seed = seed;
      c.suite.clear();
      c.out_dir = (fs::path(config.out_dir) / name / ("seed" + std::to_string(seed))).string();
      row.runs.push_back(run_experiment(c));
      const auto& r = row.runs.back();
      per_seed.push_back({{"seed", seed},
                          {"final_accuracy", r.final_accuracy},
                          {"peak_accuracy", r.peak_accuracy},
                          {"steps_to_first_success", r.steps_to_first_success},
                          {"sft_fraction", r.sft_fraction}});
    }
    table.push_back({{"name", name},
                     {"paradigm", row.runs.empty() ? "" : row.runs.front().paradigm},
                     {"mean_final_accuracy", row.mean_final()},
                     {"runs", per_seed}});
    rows.push_back(std::move(row));
  }
  fs::create_directories(config.out_dir);
  write_text(fs::path(config.out_dir) / "suite.json",
             json{{"config_hash", config.hash()}, {"rows", table}}.dump(2) + "\n");
  return rows;
}

void export_curves(const std::string& metrics_path, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::ifstream in(metrics_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + metrics_path);
  fs::create_directories(out_dir);
  std::ofstream reward(fs::path(out_dir) / "reward.csv", std::ios::binary);
  std::ofstream mode(fs::path(out_dir) / "mode_fraction.csv", std::ios::binary);
  std::ofstream adv(fs::path(out_dir) / "advantage_std.csv", std::ios::binary);
  reward << "step,mean_reward,group_success_rate\n";
  mode << "step,mode,sft_fraction_running\n";
  adv << "step,advantage_std\n";

  auto num = [](const json& v) -> std::string {
    if (v.is_null()) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v.get<double>());
    return buf;
  };
  std::string line;
  for (long n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      const json r = json::parse(line);
      const long step = r.at("step").get<long>();
      reward << step << ',' << num(r.at("mean_reward")) << ',' << num(r.at("group_success_rate")) << '\n';
      mode << step << ',' << r.at("mode").get<std::string>() << ',' << num(r.at("sft_fraction_running"))
           << '\n';
      adv << step << ',' << num(r.at("advantage_std")) << '\n';
    } catch (const json::exception& e) {
      throw InvalidInput(metrics_path + ":" + std::to_string(n) + ": malformed metrics record (" +
                         e.what() + ")");
    }
  }
}

}  // namespace dyme
