#pragma once

// Synthetic chart-style question answering with verifiable answers.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dyme/vocabulary.hpp"

namespace dyme {

enum class QuestionKind { MaxLabel, MinLabel, Sum, Difference, ValueLookup };
enum class Difficulty { Easy, Hard };
enum class Segment { Extraction, Calculation, Conclusion };

constexpr std::array<QuestionKind, 5> kQuestionKinds = {
    QuestionKind::MaxLabel, QuestionKind::MinLabel, QuestionKind::Sum, QuestionKind::Difference,
    QuestionKind::ValueLookup};

std::string to_string(QuestionKind kind);
std::optional<QuestionKind> parse_question_kind(const std::string& name);
std::string to_string(Difficulty difficulty);

struct Label {
  int index = 0;
  bool operator==(const Label&) const = default;
};

/// Either a numeric answer or a bar label; never both.
using AnswerValue = std::variant<std::int64_t, Label>;

struct FactRecord {
  int label = 0;
  std::int64_t value = 0;
  bool operator==(const FactRecord&) const = default;
};

/// The chart: a title and 1-6 labelled bars.
struct VisualFacts {
  int title = 0;
  std::vector<FactRecord> records;
  bool operator==(const VisualFacts&) const = default;
};

struct Question {
  QuestionKind kind = QuestionKind::ValueLookup;
  std::vector<int> args;  // label indices: two for Difference, one for ValueLookup
  bool operator==(const Question&) const = default;
};

/// Answer that follows from the facts. Throws InvalidInput if the question
/// names a label that is not on the chart.
AnswerValue solve(const VisualFacts& facts, const Question& question);

/// Records a solver has to read: all of them for max/min/sum, the named
/// ones otherwise.
std::vector<FactRecord> required_records(const VisualFacts& facts, const Question& question);

struct TraceSegment {
  Segment kind = Segment::Extraction;
  int variant = 0;  // phrasing variant, 0..Vocabulary::kVariants-1
};

/// Skeleton of a thinking trace. `show_arithmetic` adds the intermediate
/// steps of the calculation (running best, running total, operands); without
/// it the calculation segment states only the result.
struct TraceTemplate {
  std::vector<TraceSegment> segments;
  bool show_arithmetic = true;

  /// Extraction, Calculation, Conclusion with the given phrasings.
  static TraceTemplate canonical(bool show_arithmetic, std::array<int, 3> variants = {0, 0, 0});

  /// Throws InvalidTemplate unless every segment appears once, in order,
  /// with a valid variant.
  void validate() const;
};

struct TaskInstance {
  std::uint64_t id = 0;  // generation seed, or a caller-chosen tag
  VisualFacts facts;
  Question question;
  AnswerValue gold;
  Tokens reference_trace;
  Tokens prompt;
};

/// Shape of the generated task distribution.
struct TaskConfig {
  std::int64_t min_value = 1;
  std::int64_t max_value = 9;
  /// Question kinds drawn for each difficulty.
  std::vector<QuestionKind> easy_kinds = {QuestionKind::Sum, QuestionKind::Difference,
                                          QuestionKind::ValueLookup};
  std::vector<QuestionKind> hard_kinds = {QuestionKind::MaxLabel, QuestionKind::MinLabel,
                                          QuestionKind::ValueLookup};
  /// Template used for the static reference trace.
  bool reference_shows_arithmetic = false;

  /// Digits of the widest value; fixes the prompt layout.
  int value_digits() const;
  /// Length of every serialized prompt.
  int prompt_length() const;

  bool operator==(const TaskConfig&) const = default;
};

/// Deterministic in (seed, difficulty, config). Easy charts have 2-3 bars,
/// hard ones 4-6. Max/min questions only get charts with distinct values.
TaskInstance generate_task(std::uint64_t seed, Difficulty difficulty,
                           const TaskConfig& config = {});

/// Flat token form: title, `label value-digits` pairs padded to the widest
/// chart, then the question token, its label arguments and padding. With
/// `config` given, the layout is fixed; without it no padding is added.
Tokens serialize_prompt(const VisualFacts& facts, const Question& question,
                        const TaskConfig* config = nullptr);

struct ParsedPrompt {
  VisualFacts facts;
  Question question;
};

/// Inverse of serialize_prompt. Throws InvalidInput on malformed prompts.
ParsedPrompt parse_prompt(std::span<const TokenId> prompt);

/// Tokens of a number, most significant digit first.
Tokens number_tokens(std::int64_t value);
Tokens answer_tokens(const AnswerValue& answer);

/// `<think> [Extraction] ... [Calculation] ... [Conclusion] so <answer> x
/// </answer> </think> <eos>`.
Tokens build_reference_trace(const VisualFacts& facts, const Question& question,
                             const AnswerValue& gold, const TraceTemplate& tmpl);

/// JSON-lines task sets.
void write_tasks_jsonl(const std::string& path, const std::vector<TaskInstance>& tasks);
std::vector<TaskInstance> read_tasks_jsonl(const std::string& path);

}  // namespace dyme
