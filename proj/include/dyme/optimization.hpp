#pragma once

// Losses, gradients, group advantages, the mode rule and the optimizer.
//
// Sign convention: every *_loss_and_grad returns the gradient of the loss,
// so the optimizer descends along it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dyme/errors.hpp"
#include "dyme/policy.hpp"
#include "dyme/rewards.hpp"
#include "dyme/supervision.hpp"

namespace dyme {

enum class Mode { Memorize, Explore };
std::string to_string(Mode m);

/// Explore iff some response in the group verified correct.
Mode mode_select(std::span<const int> answer_rewards);

template <typename Scalar>
struct LossGrad {
  Scalar loss{0};
  PolicyParameters<Scalar> grad;
};

/// Negative log-likelihood of the whole target and its gradient.
template <typename Scalar>
LossGrad<Scalar> sft_loss_and_grad(const PolicyParameters<Scalar>& params,
                                   std::span<const TokenId> prompt,
                                   std::span<const TokenId> target) {
  if (target.empty()) throw InvalidInput("empty supervision target");
  LossGrad<Scalar> out{Scalar(0), PolicyParameters<Scalar>(params.config())};
  out.loss = -accumulate_logprob_gradient(params, prompt, target, Scalar(-1), out.grad);
  return out;
}

template <typename Scalar>
struct GroupAdvantages {
  std::vector<Scalar> rewards;
  Scalar mean{0};
  Scalar std{0};  // population convention (divide by K)
  std::vector<Scalar> advantages;
  Scalar epsilon{0};

  Scalar max_advantage() const {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Scalar a : advantages) m = std::max(m, a);
    return m;
  }
};

/// A_k = (r_k - mean) / (std + epsilon). Equal rewards give exact zeros.
template <typename Scalar>
GroupAdvantages<Scalar> group_advantage(std::span<const Scalar> rewards, Scalar epsilon) {
  if (rewards.empty()) throw InvalidInput("empty reward group");
  if (!(epsilon > Scalar(0))) throw InvalidInput("epsilon must be positive");
  GroupAdvantages<Scalar> g;
  g.rewards.assign(rewards.begin(), rewards.end());
  g.epsilon = epsilon;
  const auto K = static_cast<Scalar>(rewards.size());
  for (Scalar r : rewards) g.mean += r;
  g.mean /= K;
  Scalar var{0};
  for (Scalar r : rewards) var += (r - g.mean) * (r - g.mean);
  g.std = std::sqrt(var / K);
  const bool equal = std::all_of(rewards.begin(), rewards.end(),
                                 [&](Scalar r) { return r == rewards[0]; });
  g.advantages.resize(rewards.size());
  for (std::size_t k = 0; k < rewards.size(); ++k)
    g.advantages[k] = equal ? Scalar(0) : (rewards[k] - g.mean) / (g.std + epsilon);
  return g;
}

/// p_theta(y|x) / p_old(y|x) for a whole sequence.
template <typename Scalar>
Scalar importance_ratio(const PolicyParameters<Scalar>& params, Scalar old_logprob,
                        std::span<const TokenId> prompt, std::span<const TokenId> response) {
  return std::exp(sequence_logprob(params, prompt, response).total - old_logprob);
}

/// Exact categorical KL(p_theta || p_ref) summed over the next-token
/// distributions at every position of `response`.
template <typename Scalar>
Scalar kl_to_reference(const PolicyParameters<Scalar>& params,
                       const PolicyParameters<Scalar>& ref, std::span<const TokenId> prompt,
                       std::span<const TokenId> response) {
  const Mat<Scalar> lp = log_softmax(forward_sequence(params, prompt, response).logits);
  const Mat<Scalar> lq = log_softmax(forward_sequence(ref, prompt, response).logits);
  return (lp.array().exp() * (lp - lq).array()).sum();
}

struct GrpoConfig {
  double clip_epsilon = 0.2;
  double kl_beta = 0.0;
  int inner_epochs = 1;
  bool use_clip = false;
  bool use_kl = false;
  std::optional<double> learning_rate;  // step size for these updates, if not the optimizer's

  /// Clip and KL switched off, as DyME's exploration branch requires.
  static GrpoConfig simplified(int inner_epochs = 1) {
    GrpoConfig c;
    c.inner_epochs = inner_epochs;
    return c;
  }
  static GrpoConfig clipped(double clip_epsilon, double kl_beta, int inner_epochs = 1) {
    GrpoConfig c{clip_epsilon, kl_beta, inner_epochs, true, kl_beta > 0.0, std::nullopt};
    return c;
  }
};

/// Surrogate loss over any number of rollouts with given advantages:
///   -(1/K) sum_k s_k + beta (1/K) sum_k KL_k,
/// s_k = ratio_k A_k, or min(ratio_k A_k, clip(ratio_k) A_k) with clipping.
/// A sample whose clipped branch is the smaller one contributes no gradient.
/// `ref` is required when the KL term is on.
template <typename Scalar>
LossGrad<Scalar> surrogate_loss_and_grad(const PolicyParameters<Scalar>& params,
                                         std::span<const TokenId> prompt,
                                         const std::vector<Rollout<Scalar>>& rollouts,
                                         std::span<const Scalar> advantages,
                                         const GrpoConfig& config,
                                         const PolicyParameters<Scalar>* ref = nullptr) {
  if (rollouts.empty() || rollouts.size() != advantages.size())
    throw InvalidInput("rollouts and advantages must be nonempty and the same length");
  if (config.use_kl && !ref) throw InvalidInput("KL term needs a reference policy");
  const auto K = static_cast<Scalar>(rollouts.size());
  LossGrad<Scalar> out{Scalar(0), PolicyParameters<Scalar>(params.config())};
  for (std::size_t k = 0; k < rollouts.size(); ++k) {
    const Tokens& y = rollouts[k].tokens;
    const Scalar A = advantages[k];
    const auto acts = forward_sequence(params, prompt, std::span<const TokenId>(y));
    const Mat<Scalar> lp = log_softmax(acts.logits);
    Scalar logp{0};
    for (std::size_t t = 0; t < y.size(); ++t) logp += lp(y[t], static_cast<Eigen::Index>(t));
    const Scalar ratio = std::exp(logp - rollouts[k].total_logprob());

    Scalar term = ratio * A;
    bool active = true;
    if (config.use_clip) {
      const Scalar lo = Scalar(1 - config.clip_epsilon), hi = Scalar(1 + config.clip_epsilon);
      const Scalar clipped = std::clamp(ratio, lo, hi) * A;
      if (clipped < term) {
        term = clipped;
        active = false;
      }
    }
    out.loss -= term / K;

    // d loss / d logits, column by column.
    Mat<Scalar> upstream = Mat<Scalar>::Zero(lp.rows(), lp.cols());
    bool any = false;
    if (active && A != Scalar(0)) {
      const Scalar w = -ratio * A / K;  // d loss / d log p
      upstream = -w * lp.array().exp().matrix();
      for (std::size_t t = 0; t < y.size(); ++t) upstream(y[t], static_cast<Eigen::Index>(t)) += w;
      any = true;
    }
    if (config.use_kl && config.kl_beta != 0.0) {
      const Mat<Scalar> lq =
          log_softmax(forward_sequence(*ref, prompt, std::span<const TokenId>(y)).logits);
      const Scalar beta = Scalar(config.kl_beta) / K;
      for (Eigen::Index t = 0; t < lp.cols(); ++t) {
        const Vec<Scalar> p = lp.col(t).array().exp();
        const Vec<Scalar> diff = lp.col(t) - lq.col(t);
        const Scalar kl = p.dot(diff);
        out.loss += beta * kl;
        upstream.col(t) += beta * (p.array() * (diff.array() - kl)).matrix();
      }
      any = true;
    }
    if (any) backpropagate(params, acts, upstream, out.grad);
  }
  return out;
}

/// GRPO loss for a sampled group. Groups need at least two members for the
/// advantage to mean anything.
template <typename Scalar>
LossGrad<Scalar> grpo_loss_and_grad(const PolicyParameters<Scalar>& params,
                                    std::span<const TokenId> prompt,
                                    const std::vector<Rollout<Scalar>>& rollouts,
                                    std::span<const Scalar> advantages, const GrpoConfig& config,
                                    const PolicyParameters<Scalar>* ref = nullptr) {
  if (rollouts.size() < 2) throw InvalidInput("GRPO needs a group of at least two");
  return surrogate_loss_and_grad(params, prompt, rollouts, advantages, config, ref);
}

/// Adam. A gradient of exact zeros leaves parameters and moments untouched,
/// so a collapsed group is a true no-op.
template <typename Scalar>
class Adam {
 public:
  Adam() = default;
  Adam(Eigen::Index size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps),
        m_(Vec<Scalar>::Zero(size)), v_(Vec<Scalar>::Zero(size)) {}

  /// Returns false when the step was skipped for a zero gradient. `lr`
  /// overrides the configured rate for this step only; the moments are
  /// shared either way.
  bool step(PolicyParameters<Scalar>& params, const PolicyParameters<Scalar>& grad,
            long at_step = -1, std::optional<double> lr = std::nullopt) {
    const Vec<Scalar>& g = grad.theta();
    if (g.size() != params.size() || g.size() != m_.size())
      throw InvalidInput("gradient shape does not match parameters");
    if (!g.allFinite()) throw NanAbort("non-finite gradient", at_step);
    if ((g.array() == Scalar(0)).all()) return false;
    ++t_;
    m_ = Scalar(beta1_) * m_ + Scalar(1 - beta1_) * g;
    v_ = Scalar(beta2_) * v_ + Scalar(1 - beta2_) * g.cwiseAbs2();
    const Scalar c1 = Scalar(1) - std::pow(Scalar(beta1_), Scalar(t_));
    const Scalar c2 = Scalar(1) - std::pow(Scalar(beta2_), Scalar(t_));
    params.theta().array() -=
        Scalar(lr.value_or(lr_)) * (m_.array() / c1) / ((v_.array() / c2).sqrt() + Scalar(eps_));
    if (!params.all_finite()) throw NanAbort("non-finite parameters after update", at_step);
    return true;
  }

  long steps_taken() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Vec<Scalar> m_, v_;
};

/// Per-step knobs shared by every paradigm.
struct StepConfig {
  int K = 8;
  double temperature = 1.0;
  double epsilon = 1e-4;
  RewardWeights weights;
  CheckerConfig checker;
  GrpoConfig grpo = GrpoConfig::simplified();
  bool refine = false;
};

struct StepOutcome {
  Mode mode = Mode::Memorize;
  double loss = 0.0;
  double grad_norm = 0.0;
  double advantage_mean = 0.0, advantage_std = 0.0, advantage_max = 0.0;
  double reward_std = 0.0;
  double mean_reward = 0.0;
  double group_success_rate = 0.0;
  double sft_fraction_running = 0.0;
  bool sampled = false;
  bool updated = false;
  std::vector<RewardBreakdown> rewards;
};

/// Mutable state of a training run besides the parameters.
struct TrainingState {
  Adam<double> optimizer;
  ExemplarPool pool;
  PolicyParameters<double> reference;
  long steps = 0;
  long sft_steps = 0;

  TrainingState(const PolicyParameters<double>& init, double lr, std::size_t pool_capacity = 64)
      : optimizer(init.size(), lr), pool(pool_capacity), reference(snapshot(init)) {}

  /// Counts the step and returns the running SFT fraction.
  double record(Mode m) {
    ++steps;
    if (m == Mode::Memorize) ++sft_steps;
    return double(sft_steps) / double(steps);
  }
};

/// A sampled, scored group with its advantages filled in.
struct ScoredGroup {
  std::vector<Rollout<double>> rollouts;
  std::vector<RewardBreakdown> rewards;
  GroupAdvantages<double> advantages;
  std::vector<int> answer_rewards;
  std::vector<Tokens> high_traces;  // parsed traces graded High
};

ScoredGroup sample_and_score(const PolicyParameters<double>& params, const TaskInstance& task,
                             std::span<const TokenId> target, const ExemplarPool& pool,
                             const StepConfig& config, std::uint64_t seed);

/// Fills the reward and advantage statistics of `out` from `group`.
void summarize_group(const ScoredGroup& group, StepOutcome& out);

/// One SFT update toward `target`.
double sft_update(PolicyParameters<double>& params, TrainingState& state,
                  std::span<const TokenId> prompt, std::span<const TokenId> target,
                  StepOutcome& out);

/// `inner_epochs` GRPO updates on a scored group.
double grpo_update(PolicyParameters<double>& params, TrainingState& state,
                   std::span<const TokenId> prompt, const ScoredGroup& group,
                   const GrpoConfig& grpo, StepOutcome& out);

/// Sample, score, pick the mode, then run exactly one of the two updates.
/// With `config.refine` the target comes from the refiner and High traces
/// feed the exemplar pool.
StepOutcome dyme_step(PolicyParameters<double>& params, TrainingState& state,
                      const TaskInstance& task, const StepConfig& config, std::uint64_t seed);

}  // namespace dyme
