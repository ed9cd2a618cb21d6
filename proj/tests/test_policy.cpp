#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dyme/policy.hpp"

using namespace dyme;

namespace {

PolicyConfig small(int vocab = 16) {
  PolicyConfig c;
  c.vocab_size = vocab;
  c.dim = 4;
  c.window = 3;
  c.hidden = 12;
  c.prompt_slots = 6;
  c.max_length = 16;
  return c;
}

Tokens random_tokens(std::mt19937_64& rng, int n, int vocab) {
  Tokens t;
  for (int i = 0; i < n; ++i) t.push_back(static_cast<TokenId>(rng() % vocab));
  return t;
}

}  // namespace

TEST(Policy, ParameterCountStaysBelowBudget) {
  EXPECT_LT(PolicyConfig{}.parameter_count(), 100000);
}

TEST(Policy, ZeroParamsGiveZeroLogits) {
  PolicyParameters<double> p(small());
  const Tokens prompt{1, 2, 3}, prefix{4, 5};
  EXPECT_TRUE(forward_logits(p, prompt, prefix).isZero(0.0));
}

TEST(Policy, SeededParamsAreBitReproducible) {
  const auto a = PolicyParameters<double>::random(small(), 42);
  const auto b = PolicyParameters<double>::random(small(), 42);
  const Tokens prompt{1, 2, 3}, prefix{4, 5};
  const Vec<double> la = forward_logits(a, prompt, prefix), lb = forward_logits(b, prompt, prefix);
  for (Eigen::Index i = 0; i < la.size(); ++i) EXPECT_EQ(la[i], lb[i]);
}

TEST(Policy, SoftmaxSumsToOne) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = PolicyParameters<double>::random(small(), rng());
    const Tokens prompt = random_tokens(rng, 1 + rng() % 6, 16);
    const Tokens prefix = random_tokens(rng, rng() % 15, 16);
    const Vec<double> logits = forward_logits(p, prompt, prefix);
    double sum = 0.0;  // direct summation, independent of log_softmax
    const double m = logits.maxCoeff();
    double z = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - m);
    for (Eigen::Index i = 0; i < logits.size(); ++i) sum += std::exp(logits[i] - m) / z;
    EXPECT_NEAR(sum, 1.0, 1e-9);
    EXPECT_NEAR(log_softmax(logits).array().exp().sum(), 1.0, 1e-9);
  }
}

TEST(Policy, UniformLogProbClosedForm) {
  PolicyParameters<double> p(small(16));
  const Tokens prompt{1, 2}, response{3, 4, 5};
  const auto lp = sequence_logprob(p, prompt, response);
  EXPECT_NEAR(lp.total, 3.0 * std::log(1.0 / 16.0), 1e-12);
  EXPECT_NEAR(lp.total, -8.3178, 1e-4);
}

TEST(Policy, ArgmaxTokenBeatsUniform) {
  PolicyParameters<double> p(small());
  p.out_bias()[7] = 2.0;
  const Tokens prompt{1}, response{7};
  EXPECT_GT(sequence_logprob(p, prompt, response).per_token[0], std::log(1.0 / 16.0));
}

TEST(Policy, LogProbIsAdditiveAndNonPositive) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const auto p = PolicyParameters<double>::random(small(), rng());
    const Tokens prompt = random_tokens(rng, 4, 16), response = random_tokens(rng, 1 + rng() % 16, 16);
    const auto lp = sequence_logprob(p, prompt, response);
    double sum = 0.0;
    for (double v : lp.per_token) {
      EXPECT_LE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(lp.total, sum, 1e-9);
    const auto again = sequence_logprob(p, prompt, response);
    EXPECT_EQ(again.total, lp.total);
  }
}

TEST(Policy, PerTokenMatchesForwardLogits) {
  std::mt19937_64 rng(6);
  const auto p = PolicyParameters<double>::random(small(), 9);
  const Tokens prompt = random_tokens(rng, 5, 16), response = random_tokens(rng, 10, 16);
  const auto lp = sequence_logprob(p, prompt, response);
  for (std::size_t i = 0; i < response.size(); ++i) {
    const Tokens prefix(response.begin(), response.begin() + static_cast<long>(i));
    const Vec<double> ls = log_softmax(forward_logits(p, prompt, prefix));
    EXPECT_NEAR(lp.per_token[i], ls[response[i]], 1e-12);
  }
}

// Differences are taken in long double so cancellation does not swamp
// small gradient entries.
TEST(Policy, GradientMatchesCentralDifferences) {
  std::mt19937_64 rng(11);
  const long double h = 1e-5L;
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = PolicyParameters<double>::random(PolicyConfig{}, rng());
    auto wide = p.cast<long double>();
    const Tokens prompt = random_tokens(rng, 16, 48), response = random_tokens(rng, 20, 48);
    const auto grad = logprob_gradient(p, prompt, response);
    for (int n = 0; n < 64; ++n) {
      const auto i = static_cast<Eigen::Index>(rng() % p.size());
      const long double saved = wide.theta()[i];
      wide.theta()[i] = saved + h;
      const long double up = sequence_logprob(wide, prompt, response).total;
      wide.theta()[i] = saved - h;
      const long double down = sequence_logprob(wide, prompt, response).total;
      wide.theta()[i] = saved;
      const double fd = static_cast<double>((up - down) / (2 * h)), an = grad.theta()[i];
      EXPECT_LT(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}), 1e-4)
          << "param " << i << " fd " << fd << " analytic " << an;
    }
  }
}

TEST(Policy, GradientShapeMatchesParameters) {
  const auto p = PolicyParameters<double>::random(small(), 1);
  const Tokens prompt{1}, response{2, 3};
  const auto g = logprob_gradient(p, prompt, response);
  EXPECT_EQ(g.size(), p.size());
  EXPECT_EQ(g.config(), p.config());
}

TEST(Policy, SaturatedSoftmaxHasVanishingGradient) {
  PolicyParameters<double> p(small());
  p.out_bias()[3] = 60.0;
  const Tokens prompt{1}, response{3};
  EXPECT_LT(logprob_gradient(p, prompt, response).theta().norm(), 1e-20);
}

TEST(Policy, SnapshotIsImmutableCopy) {
  auto live = PolicyParameters<double>::random(small(), 2);
  const auto frozen = snapshot(live);
  const Tokens prompt{1, 2}, prefix{3};
  const Vec<double> before = forward_logits(frozen, prompt, prefix);
  live.theta().array() += 0.5;
  EXPECT_EQ(forward_logits(frozen, prompt, prefix), before);
  EXPECT_EQ(snapshot(frozen).theta(), frozen.theta());
}

TEST(Policy, SampleGroupCardinalityAndLength) {
  const auto p = PolicyParameters<double>::random(small(), 4);
  const Tokens prompt{1, 2, 3};
  const auto group = sample_group(p, prompt, 4, 1.0, 77, /*eos=*/1);
  ASSERT_EQ(group.size(), 4u);
  for (const auto& r : group) {
    EXPECT_GE(r.tokens.size(), 1u);
    EXPECT_LE(static_cast<int>(r.tokens.size()), p.config().max_length);
    EXPECT_EQ(r.tokens.size(), r.logprobs.size());
    const bool ended = r.tokens.back() == 1;
    EXPECT_TRUE(ended || static_cast<int>(r.tokens.size()) == p.config().max_length);
  }
}

TEST(Policy, GreedyGroupIsIdentical) {
  const auto p = PolicyParameters<double>::random(small(), 4);
  const Tokens prompt{1, 2, 3};
  const auto group = sample_group(p, prompt, 5, 1.0, 1, 1, /*greedy=*/true);
  for (const auto& r : group) EXPECT_EQ(r.tokens, group[0].tokens);
}

TEST(Policy, SeededSamplingIsReproducible) {
  const auto p = PolicyParameters<double>::random(small(), 8);
  const Tokens prompt{1, 2, 3};
  const auto a = sample_group(p, prompt, 8, 1.0, 123, 1);
  const auto b = sample_group(p, prompt, 8, 1.0, 123, 1);
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].tokens, b[k].tokens);
    EXPECT_EQ(a[k].logprobs, b[k].logprobs);
  }
}

TEST(Policy, CachedLogProbsMatchScoring) {
  const auto p = PolicyParameters<double>::random(small(), 8);
  const Tokens prompt{1, 2, 3};
  for (const auto& r : sample_group(p, prompt, 6, 1.0, 5, 1)) {
    const auto lp = sequence_logprob(p, prompt, r.tokens);
    for (std::size_t t = 0; t < r.tokens.size(); ++t) EXPECT_NEAR(lp.per_token[t], r.logprobs[t], 1e-12);
  }
}

TEST(Policy, RejectsBadInputs) {
  const auto p = PolicyParameters<double>::random(small(), 1);
  const Tokens ok{1};
  EXPECT_THROW(forward_logits(p, Tokens{16}, ok), InvalidInput);
  EXPECT_THROW(forward_logits(p, ok, Tokens{-1}), InvalidInput);
  EXPECT_THROW(forward_logits(p, Tokens(7, 1), ok), InvalidInput);
  EXPECT_THROW(forward_logits(p, ok, Tokens(16, 1)), InvalidInput);
  EXPECT_THROW(sequence_logprob(p, ok, Tokens{}), InvalidInput);
  EXPECT_THROW(sample_group(p, ok, 0, 1.0, 1, 1), InvalidInput);
  EXPECT_THROW(sample_group(p, ok, 2, 0.0, 1, 1), InvalidInput);
}

TEST(Policy, WorksWithLongDouble) {
  const auto p = PolicyParameters<long double>::random(small(), 3);
  const Tokens prompt{1, 2}, response{3, 4};
  const auto lp = sequence_logprob(p, prompt, response);
  const auto g = logprob_gradient(p, prompt, response);
  EXPECT_LT(lp.total, 0.0L);
  EXPECT_TRUE(g.all_finite());
}
