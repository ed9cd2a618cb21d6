#include <gtest/gtest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <map>

#include "dyme/errors.hpp"
#include "dyme/rewards.hpp"
#include "dyme/tasks.hpp"

using namespace dyme;

namespace {

const Vocabulary& V() { return Vocabulary::standard(); }

VisualFacts products() { return {0, {{0, 120}, {1, 150}, {2, 90}}}; }

// Brute force over the records, written without reference to solve().
AnswerValue brute_force(const VisualFacts& f, const Question& q) {
  auto value_of = [&](int label) {
    for (const auto& r : f.records)
      if (r.label == label) return r.value;
    ADD_FAILURE() << "missing label";
    return std::int64_t{0};
  };
  switch (q.kind) {
    case QuestionKind::MaxLabel:
    case QuestionKind::MinLabel: {
      int best = -1;
      for (const auto& r : f.records) {
        const bool wins = best < 0 || (q.kind == QuestionKind::MaxLabel ? r.value > value_of(best)
                                                                        : r.value < value_of(best));
        if (wins) best = r.label;
      }
      return Label{best};
    }
    case QuestionKind::Sum: {
      std::int64_t s = 0;
      for (const auto& r : f.records) s += r.value;
      return s;
    }
    case QuestionKind::Difference: {
      const auto d = value_of(q.args[0]) - value_of(q.args[1]);
      return d < 0 ? -d : d;
    }
    case QuestionKind::ValueLookup: return value_of(q.args[0]);
  }
  return std::int64_t{-1};
}

Difficulty nth_difficulty(std::uint64_t i) { return i % 2 ? Difficulty::Hard : Difficulty::Easy; }

}  // namespace

TEST(Tasks, GenerationIsDeterministic) {
  const auto a = generate_task(7, Difficulty::Easy), b = generate_task(7, Difficulty::Easy);
  EXPECT_EQ(a.facts, b.facts);
  EXPECT_EQ(a.question, b.question);
  EXPECT_EQ(a.prompt, b.prompt);
  EXPECT_EQ(a.reference_trace, b.reference_trace);
}

TEST(Tasks, GoldMatchesBruteForceOn10kTasks) {
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto t = generate_task(s, nth_difficulty(s));
    ASSERT_EQ(t.gold, brute_force(t.facts, t.question)) << "seed " << s;
  }
}

TEST(Tasks, RecordCountsFollowDifficulty) {
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto n = generate_task(s, nth_difficulty(s)).facts.records.size();
    if (nth_difficulty(s) == Difficulty::Easy) {
      EXPECT_TRUE(n >= 2 && n <= 3);
    } else {
      EXPECT_TRUE(n >= 4 && n <= 6);
    }
  }
}

TEST(Tasks, LabelsUniqueAndValuesInRange) {
  TaskConfig wide;
  wide.max_value = 999;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto t = generate_task(s, nth_difficulty(s), wide);
    std::set<int> labels;
    for (const auto& r : t.facts.records) {
      labels.insert(r.label);
      EXPECT_GE(r.value, 1);
      EXPECT_LE(r.value, 999);
    }
    EXPECT_EQ(labels.size(), t.facts.records.size());
  }
}

TEST(Tasks, SumOfProducts) {
  EXPECT_EQ(solve(products(), {QuestionKind::Sum, {}}), AnswerValue{std::int64_t{360}});
}

TEST(Tasks, MaxTraceNamesLargestValueAndConcludesLabel) {
  const auto f = products();
  const Question q{QuestionKind::MaxLabel, {}};
  const auto gold = solve(f, q);
  ASSERT_EQ(gold, AnswerValue{Label{1}});
  const auto trace = build_reference_trace(f, q, gold, TraceTemplate::canonical(true));
  // result word, then label B and its value 150
  const Tokens expect{V().result_word(0), V().label(1), V().digit(1), V().digit(5), V().digit(0)};
  EXPECT_NE(std::search(trace.begin(), trace.end(), expect.begin(), expect.end()), trace.end());
  const auto parsed = parse_response(trace);
  ASSERT_TRUE(parsed.parse_ok);
  EXPECT_EQ(*parsed.answer, AnswerValue{Label{1}});
}

TEST(Tasks, SingleRecordLookup) {
  const VisualFacts f{2, {{3, 42}}};
  const Question q{QuestionKind::ValueLookup, {3}};
  const auto trace = build_reference_trace(f, q, solve(f, q), TraceTemplate::canonical(false));
  const auto parsed = parse_response(trace);
  ASSERT_TRUE(parsed.parse_ok);
  EXPECT_EQ(*parsed.answer, AnswerValue{std::int64_t{42}});
  // Extraction reads exactly one record.
  const auto ext = std::find(trace.begin(), trace.end(), V().extraction());
  const auto calc = std::find(trace.begin(), trace.end(), V().calculation());
  EXPECT_EQ(std::count_if(ext, calc, [](TokenId t) { return V().is_label(t); }), 1);
}

TEST(Tasks, ReferenceTraceAnswerMatchesGold) {
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto t = generate_task(s, nth_difficulty(s));
    const auto parsed = parse_response(t.reference_trace);
    ASSERT_TRUE(parsed.parse_ok);
    ASSERT_EQ(answer_reward(parsed, t.gold), 1) << "seed " << s;
  }
}

TEST(Tasks, ReferenceTraceMentionsRequiredFacts) {
  for (bool show : {false, true}) {
    TaskConfig c;
    c.reference_shows_arithmetic = show;
    for (std::uint64_t s = 0; s < 2000; ++s) {
      const auto t = generate_task(s, nth_difficulty(s), c);
      EXPECT_DOUBLE_EQ(fact_coverage(t.reference_trace, required_facts(t)), 1.0);
    }
  }
}

TEST(Tasks, TraceSegmentsInOrder) {
  const auto t = generate_task(3, Difficulty::Hard);
  std::vector<TokenId> markers;
  for (auto tok : t.reference_trace)
    if (V().is_segment_marker(tok)) markers.push_back(tok);
  const std::vector<TokenId> expect{V().extraction(),
                                    V().calculation(),
                                    V().conclusion()};
  EXPECT_EQ(markers, expect);
  EXPECT_EQ(t.reference_trace.back(), V().eos());
}

TEST(Tasks, InvalidTemplatesRejected) {
  const auto f = products();
  const Question q{QuestionKind::Sum, {}};
  TraceTemplate missing = TraceTemplate::canonical(true);
  missing.segments.pop_back();
  EXPECT_THROW(build_reference_trace(f, q, solve(f, q), missing), InvalidTemplate);
  TraceTemplate swapped = TraceTemplate::canonical(true);
  std::swap(swapped.segments[0], swapped.segments[1]);
  EXPECT_THROW(swapped.validate(), InvalidTemplate);
  TraceTemplate bad_variant = TraceTemplate::canonical(true, {0, 7, 0});
  EXPECT_THROW(bad_variant.validate(), InvalidTemplate);
}

TEST(Tasks, PromptRoundTrips) {
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto t = generate_task(s, nth_difficulty(s));
    const auto back = parse_prompt(t.prompt);
    EXPECT_EQ(back.facts, t.facts);
    EXPECT_EQ(back.question, t.question);
    const auto bare = parse_prompt(serialize_prompt(t.facts, t.question));
    EXPECT_EQ(bare.facts, t.facts);
  }
}

TEST(Tasks, DistinctInstancesGiveDistinctPrompts) {
  std::map<Tokens, std::pair<VisualFacts, Question>> seen;
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto t = generate_task(s, nth_difficulty(s));
    const auto [it, fresh] = seen.emplace(t.prompt, std::make_pair(t.facts, t.question));
    if (!fresh) {
      EXPECT_EQ(it->second.first, t.facts);
      EXPECT_EQ(it->second.second, t.question);
    }
  }
}

TEST(Tasks, PromptLeavesRoomForLongestResponse) {
  const TaskConfig c;
  int longest = 0;
  for (std::uint64_t s = 0; s < 2000; ++s) {
    const auto t = generate_task(s, nth_difficulty(s));
    EXPECT_EQ(static_cast<int>(t.prompt.size()), c.prompt_length());
    const auto f = t.facts;
    const auto refined = build_reference_trace(f, t.question, t.gold, TraceTemplate::canonical(true));
    longest = std::max(longest, static_cast<int>(refined.size()));
  }
  EXPECT_LE(longest, 64);
}

TEST(Tasks, MalformedPromptsRejected) {
  EXPECT_THROW(parse_prompt(Tokens{}), InvalidInput);
  EXPECT_THROW(parse_prompt(Tokens{V().digit(1), V().digit(2)}), InvalidInput);
}

TEST(Tasks, JsonLinesRoundTrip) {
  std::vector<TaskInstance> tasks;
  for (std::uint64_t s = 0; s < 50; ++s) tasks.push_back(generate_task(s, nth_difficulty(s)));
  const auto path = std::filesystem::temp_directory_path() / "dyme_tasks_roundtrip.jsonl";
  write_tasks_jsonl(path.string(), tasks);
  const auto back = read_tasks_jsonl(path.string());
  ASSERT_EQ(back.size(), tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    EXPECT_EQ(back[i].id, tasks[i].id);
    EXPECT_EQ(back[i].facts, tasks[i].facts);
    EXPECT_EQ(back[i].question, tasks[i].question);
    EXPECT_EQ(back[i].gold, tasks[i].gold);
    EXPECT_EQ(back[i].reference_trace, tasks[i].reference_trace);
    EXPECT_EQ(back[i].prompt, tasks[i].prompt);
  }
  std::filesystem::remove(path);
}

TEST(Tasks, JsonLinesErrorNamesLine) {
  const auto path = std::filesystem::temp_directory_path() / "dyme_tasks_bad.jsonl";
  write_tasks_jsonl(path.string(), {generate_task(1, Difficulty::Easy)});
  {
    std::FILE* f = std::fopen(path.string().c_str(), "a");
    std::fputs("{not json\n", f);
    std::fclose(f);
  }
  try {
    read_tasks_jsonl(path.string());
    FAIL() << "expected an error";
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find(".jsonl:2:"), std::string::npos) << e.what();
  }
  std::filesystem::remove(path);
}
