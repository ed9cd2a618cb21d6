#include "dyme/optimization.hpp"

namespace dyme {

std::string to_string(Mode m) { return m == Mode::Memorize ? "sft" : "grpo"; }

Mode mode_select(std::span<const int> answer_rewards) {
  if (answer_rewards.empty()) throw InvalidInput("empty reward group");
  for (int r : answer_rewards)
    if (r == 1) return Mode::Explore;
  return Mode::Memorize;
}

ScoredGroup sample_and_score(const PolicyParameters<double>& params, const TaskInstance& task,
                             std::span<const TokenId> target, const ExemplarPool& pool,
                             const StepConfig& config, std::uint64_t seed) {
  ScoredGroup g;
  g.rollouts = sample_group(params, std::span<const TokenId>(task.prompt), config.K,
                            config.temperature, seed, Vocabulary::standard().eos());
  const std::vector<Tokens> exemplars = pool.traces();
  std::vector<double> combined;
  for (const auto& r : g.rollouts) {
    g.rewards.push_back(score_response(r.tokens, task, target, exemplars, config.weights,
                                       config.checker));
    combined.push_back(g.rewards.back().combined);
    g.answer_rewards.push_back(g.rewards.back().r_a);
    if (g.rewards.back().grade == Grade::High)
      g.high_traces.push_back(parse_response(r.tokens).trace_tokens);
  }
  g.advantages = group_advantage(std::span<const double>(combined), config.epsilon);
  for (std::size_t k = 0; k < g.rewards.size(); ++k)
    g.rewards[k].advantage = g.advantages.advantages[k];
  return g;
}

void summarize_group(const ScoredGroup& group, StepOutcome& out) {
  out.sampled = true;
  out.rewards = group.rewards;
  out.mean_reward = group.advantages.mean;
  out.reward_std = group.advantages.std;
  double sum = 0.0, sq = 0.0;
  for (double a : group.advantages.advantages) sum += a;
  const double K = double(group.advantages.advantages.size());
  out.advantage_mean = sum / K;
  for (double a : group.advantages.advantages) sq += (a - out.advantage_mean) * (a - out.advantage_mean);
  out.advantage_std = std::sqrt(sq / K);
  out.advantage_max = group.advantages.max_advantage();
  int hits = 0;
  for (int r : group.answer_rewards) hits += r;
  out.group_success_rate = hits / K;
}

double sft_update(PolicyParameters<double>& params, TrainingState& state,
                  std::span<const TokenId> prompt, std::span<const TokenId> target,
                  StepOutcome& out) {
  auto lg = sft_loss_and_grad(params, prompt, target);
  if (!std::isfinite(lg.loss)) throw NanAbort("non-finite SFT loss", state.steps);
  out.grad_norm = lg.grad.theta().norm();
  out.updated = state.optimizer.step(params, lg.grad, state.steps);
  out.loss = lg.loss;
  return lg.loss;
}

double grpo_update(PolicyParameters<double>& params, TrainingState& state,
                   std::span<const TokenId> prompt, const ScoredGroup& group,
                   const GrpoConfig& grpo, StepOutcome& out) {
  const std::span<const double> adv(group.advantages.advantages);
  for (int e = 0; e < std::max(1, grpo.inner_epochs); ++e) {
    auto lg = grpo_loss_and_grad(params, prompt, group.rollouts, adv, grpo, &state.reference);
    if (!std::isfinite(lg.loss)) throw NanAbort("non-finite GRPO loss", state.steps);
    if (e == 0) out.grad_norm = lg.grad.theta().norm();
    out.updated = state.optimizer.step(params, lg.grad, state.steps, grpo.learning_rate) || out.updated;
    out.loss = lg.loss;
  }
  return out.loss;
}

StepOutcome dyme_step(PolicyParameters<double>& params, TrainingState& state,
                      const TaskInstance& task, const StepConfig& config, std::uint64_t seed) {
  StepOutcome out;
  const Tokens target = supervision_target(task, state.pool, config.refine);
  const ScoredGroup group = sample_and_score(params, task, target, state.pool, config, seed);
  summarize_group(group, out);
  if (config.refine)
    for (const auto& trace : group.high_traces)
      state.pool.admit(trace, Grade::High, task.id, state.steps);

  out.mode = mode_select(group.answer_rewards);
  if (out.mode == Mode::Memorize)
    sft_update(params, state, task.prompt, target, out);
  else
    grpo_update(params, state, task.prompt, group, config.grpo, out);
  out.sft_fraction_running = state.record(out.mode);
  return out;
}

}  // namespace dyme
