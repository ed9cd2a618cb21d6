#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "dyme/rewards.hpp"

using namespace dyme;

namespace {

const Vocabulary& V() { return Vocabulary::standard(); }

AnswerValue num(std::int64_t v) { return v; }

// F1 over sorted multisets, computed by merging.
double merge_f1(Tokens a, Tokens b) {
  auto drop = [](Tokens& t) {
    t.erase(std::remove_if(t.begin(), t.end(), [](TokenId x) { return V().is_control(x); }),
            t.end());
    std::sort(t.begin(), t.end());
  };
  drop(a);
  drop(b);
  if (a.empty() || b.empty()) return 0.0;
  Tokens common;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(common));
  if (common.empty()) return 0.0;
  const double p = double(common.size()) / a.size(), r = double(common.size()) / b.size();
  return 2 * p * r / (p + r);
}

Tokens random_tokens(std::mt19937_64& rng, int n) {
  Tokens t;
  for (int i = 0; i < n; ++i) t.push_back(static_cast<TokenId>(rng() % V().size()));
  return t;
}

Tokens wrap(Tokens trace, Tokens answer) {
  Tokens out{V().think_open()};
  out.insert(out.end(), trace.begin(), trace.end());
  out.push_back(V().answer_open());
  out.insert(out.end(), answer.begin(), answer.end());
  out.push_back(V().answer_close());
  out.push_back(V().think_close());
  return out;
}

}  // namespace

TEST(Parse, ReferenceTraceParses) {
  const auto t = generate_task(4, Difficulty::Hard);
  const auto p = parse_response(t.reference_trace);
  ASSERT_TRUE(p.parse_ok);
  EXPECT_EQ(*p.answer, t.gold);
  for (auto tok : p.trace_tokens) {
    EXPECT_NE(tok, V().answer_open());
    EXPECT_NE(tok, V().answer_close());
  }
}

TEST(Parse, MissingAnswerCloseFails) {
  auto t = generate_task(4, Difficulty::Easy).reference_trace;
  t.erase(std::find(t.begin(), t.end(), V().answer_close()));
  EXPECT_FALSE(parse_response(t).parse_ok);
}

TEST(Parse, EveryOneTokenSpan) {
  for (TokenId tok = 0; tok < V().size(); ++tok) {
    const auto p = parse_response(wrap({}, {tok}));
    EXPECT_EQ(p.parse_ok, V().is_digit(tok) || V().is_label(tok)) << V().symbol(tok);
  }
}

TEST(Parse, EmptyOrMixedSpansFail) {
  EXPECT_FALSE(parse_response(wrap({}, {})).parse_ok);
  EXPECT_FALSE(parse_response(wrap({}, {V().label(0), V().digit(1)})).parse_ok);
  EXPECT_FALSE(parse_response(wrap({}, {V().label(0), V().label(1)})).parse_ok);
  EXPECT_EQ(*parse_response(wrap({}, {V().digit(4), V().digit(2)})).answer, num(42));
}

TEST(Parse, AnswerOutsideThinkFails) {
  Tokens t{V().think_open(), V().think_close(), V().answer_open(), V().digit(3),
           V().answer_close()};
  EXPECT_FALSE(parse_response(t).parse_ok);
}

TEST(Parse, FuzzNeverThrows) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20000; ++i) {
    const auto t = random_tokens(rng, static_cast<int>(rng() % 65));
    ParsedResponse p;
    EXPECT_NO_THROW(p = parse_response(t));
    if (!p.parse_ok) EXPECT_FALSE(answer_reward(p, num(1)));
  }
}

// With 48 symbols the rate is about 1e-3 (it is below 1e-4 only for larger
// vocabularies), so the bound here is 5e-3.
TEST(Parse, UniformSamplesAlmostNeverParse) {
  std::mt19937_64 rng(2);
  int ok = 0;
  for (int i = 0; i < 100000; ++i) ok += parse_response(random_tokens(rng, 64)).parse_ok;
  EXPECT_LT(ok, 500);
}

TEST(Relaxed, BoundaryTable) {
  EXPECT_TRUE(relaxed_correct(num(100), num(100)));
  EXPECT_TRUE(relaxed_correct(num(95), num(100)));
  EXPECT_FALSE(relaxed_correct(num(94), num(100)));
  EXPECT_TRUE(relaxed_correct(num(105), num(100)));
  EXPECT_FALSE(relaxed_correct(num(106), num(100)));
}

TEST(Relaxed, MatchesRationalRule) {
  for (std::int64_t g = 0; g <= 300; ++g)
    for (std::int64_t p = 0; p <= 330; ++p)
      ASSERT_EQ(relaxed_correct(num(p), num(g)), 100 * (p > g ? p - g : g - p) <= 5 * g)
          << p << " vs " << g;
}

TEST(Relaxed, Labels) {
  EXPECT_TRUE(relaxed_correct(Label{1}, Label{1}));
  EXPECT_FALSE(relaxed_correct(Label{1}, Label{2}));
  EXPECT_FALSE(relaxed_correct(num(1), Label{1}));
  EXPECT_FALSE(relaxed_correct(Label{1}, num(1)));
}

TEST(AnswerReward, Cases) {
  const auto t = generate_task(9, Difficulty::Easy);
  EXPECT_EQ(answer_reward(parse_response(t.reference_trace), t.gold), 1);
  EXPECT_EQ(answer_reward(parse_response(Tokens{V().digit(1)}), num(1)), 0);
  EXPECT_EQ(answer_reward(parse_response(wrap({}, {V().digit(1), V().digit(1), V().digit(0)})),
                          num(100)),
            0);
}

TEST(AnswerReward, ReferenceTracesScoreOneOn10k) {
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto t = generate_task(s, s % 3 ? Difficulty::Hard : Difficulty::Easy);
    ASSERT_EQ(answer_reward(parse_response(t.reference_trace), t.gold), 1);
  }
}

TEST(ThinkingReward, Examples) {
  const TokenId a = V().digit(1), b = V().digit(2), c = V().digit(3), d = V().digit(4);
  EXPECT_DOUBLE_EQ(thinking_reward(Tokens{a, b, c}, Tokens{a, b, c}), 1.0);
  EXPECT_DOUBLE_EQ(thinking_reward(Tokens{a, b}, Tokens{c, d}), 0.0);
  EXPECT_NEAR(thinking_reward(Tokens{a, b, c}, Tokens{b, c, d}), 2.0 / 3.0, 1e-15);
  EXPECT_DOUBLE_EQ(thinking_reward(Tokens{}, Tokens{a}), 0.0);
  EXPECT_DOUBLE_EQ(thinking_reward(Tokens{a, V().eos(), V().pad()}, Tokens{a}), 1.0);
}

TEST(ThinkingReward, PropertiesAgainstMergeOracle) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 5000; ++i) {
    const auto x = random_tokens(rng, static_cast<int>(rng() % 12));
    const auto y = random_tokens(rng, static_cast<int>(rng() % 12));
    const double f = thinking_reward(x, y);
    EXPECT_NEAR(f, merge_f1(x, y), 1e-12);
    EXPECT_EQ(f, thinking_reward(y, x));
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    auto xs = x;
    std::shuffle(xs.begin(), xs.end(), rng);
    const bool nonempty = merge_f1(x, x) > 0;
    EXPECT_EQ(thinking_reward(xs, x) == 1.0, nonempty);
  }
}

TEST(Checker, SelfGradingIsHigh) {
  const auto t = generate_task(5, Difficulty::Hard);
  const auto trace = parse_response(t.reference_trace).trace_tokens;
  EXPECT_EQ(check_trace(trace, required_facts(t), {trace}), Grade::High);
}

TEST(Checker, StructureWithoutFactsIsLow) {
  const VisualFacts f{0, {{0, 3}, {1, 7}}};
  const Tokens trace{V().extraction(), V().phrase(0, 0), V().calculation(), V().conclusion()};
  EXPECT_DOUBLE_EQ(fact_coverage(trace, f), 0.0);
  EXPECT_EQ(check_trace(trace, f, {}), Grade::Low);
}

TEST(Checker, HalfCoverageIsMedium) {
  const VisualFacts f{0, {{0, 3}, {1, 7}}};
  const Tokens trace{V().extraction(), V().label(0), V().digit(3), V().calculation(),
                     V().conclusion()};
  EXPECT_DOUBLE_EQ(fact_coverage(trace, f), 0.5);
  EXPECT_EQ(check_trace(trace, f, {}), Grade::Medium);
}

TEST(Checker, MissingStructureIsLow) {
  const VisualFacts f{0, {{0, 3}}};
  EXPECT_EQ(check_trace(Tokens{V().label(0), V().digit(3)}, f, {}), Grade::Low);
  const Tokens reversed{V().calculation(), V().extraction(), V().label(0), V().digit(3),
                        V().conclusion()};
  EXPECT_EQ(check_trace(reversed, f, {}), Grade::Low);
}

TEST(Checker, StyleMismatchCapsAtMedium) {
  const VisualFacts f{0, {{0, 3}}};
  const Tokens trace{V().extraction(), V().label(0), V().digit(3), V().calculation(),
                     V().conclusion()};
  const Tokens exemplar{V().phrase(0, 1), V().phrase(1, 1), V().phrase(2, 1), V().result_word(4)};
  EXPECT_EQ(check_trace(trace, f, {exemplar}), Grade::Medium);
  EXPECT_EQ(check_trace(trace, f, {exemplar, trace}), Grade::High);
}

TEST(Checker, MonotoneInFactCoverage) {
  std::mt19937_64 rng(4);
  for (int i = 0; i < 3000; ++i) {
    const auto t = generate_task(rng(), Difficulty::Hard);
    const auto facts = required_facts(t);
    const auto exemplar = parse_response(t.reference_trace).trace_tokens;
    Tokens trace{V().extraction(), V().calculation(), V().conclusion()};
    const auto extra = random_tokens(rng, static_cast<int>(rng() % 10));
    trace.insert(trace.end(), extra.begin(), extra.end());
    Tokens required;
    for (const auto& r : facts.records) {
      required.push_back(V().label(r.label));
      for (auto d : number_tokens(r.value)) required.push_back(d);
    }
    const auto add = required[rng() % required.size()];
    Tokens more = trace;
    more.insert(more.begin() + 1 + static_cast<long>(rng() % (more.size() - 1)), add);
    for (const auto& pool : {std::vector<Tokens>{}, std::vector<Tokens>{exemplar}})
      EXPECT_GE(check_trace(more, facts, pool), check_trace(trace, facts, pool));
  }
}

TEST(Score, CombinedFollowsWeights) {
  const auto t = generate_task(6, Difficulty::Easy);
  const RewardWeights w{0.3, 0.7};
  const auto b = score_response(t.reference_trace, t, t.reference_trace, {}, w);
  EXPECT_EQ(b.r_a, 1);
  EXPECT_DOUBLE_EQ(b.r_t, 1.0);
  EXPECT_EQ(b.grade, Grade::High);
  EXPECT_DOUBLE_EQ(b.combined, 1.0 + 0.3 + 0.7);
  const auto bad = score_response(Tokens{V().eos()}, t, t.reference_trace, {}, w);
  EXPECT_EQ(bad.r_a, 0);
  EXPECT_EQ(bad.r_t, 0.0);
  EXPECT_EQ(bad.grade, Grade::Low);
  EXPECT_EQ(bad.combined, 0.0);
}

TEST(Score, GradeValues) {
  EXPECT_EQ(grade_value(Grade::Low), 0.0);
  EXPECT_EQ(grade_value(Grade::Medium), 0.5);
  EXPECT_EQ(grade_value(Grade::High), 1.0);
}
