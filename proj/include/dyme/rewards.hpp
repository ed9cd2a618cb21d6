#pragma once

// Response parsing, answer verification and trace scoring.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dyme/tasks.hpp"

namespace dyme {

enum class Grade { Low, Medium, High };

/// Low 0, Medium 0.5, High 1.
double grade_value(Grade g);
std::string to_string(Grade g);

struct ParsedResponse {
  Tokens trace_tokens;  // inside the think span, answer markers removed
  std::optional<AnswerValue> answer;
  bool parse_ok = false;
};

/// Accepts any token sequence. Requires a think span that encloses an
/// answer span; the answer is one label token or a run of digits.
ParsedResponse parse_response(std::span<const TokenId> tokens);

/// Numbers match within 5% of the gold value, boundary included; labels
/// must be identical; a number never matches a label.
bool relaxed_correct(const AnswerValue& predicted, const AnswerValue& gold);

/// 1 iff the response parsed and its answer is relaxed-correct.
int answer_reward(const ParsedResponse& response, const AnswerValue& gold);

/// Multiset token F1 with control markers ignored; 0 if either side is
/// empty.
double thinking_reward(std::span<const TokenId> trace, std::span<const TokenId> reference);

struct CheckerConfig {
  double coverage_low = 0.25;
  double coverage_high = 0.75;
  double style_min = 0.5;
};

/// Fraction of the facts' label and digit tokens found in the trace,
/// counted as multisets.
double fact_coverage(std::span<const TokenId> trace, const VisualFacts& facts);

/// True iff the three segment markers appear, first occurrences in order.
bool has_structure(std::span<const TokenId> trace);

/// Token F1 restricted to the skeleton (segment markers, phrasings and
/// result words). This is what "style" means for exemplar matching.
double style_similarity(std::span<const TokenId> trace, std::span<const TokenId> exemplar);

/// Rule-based grader. `facts` are the records the trace must mention.
/// The style test is skipped while there are no exemplars.
Grade check_trace(std::span<const TokenId> trace, const VisualFacts& facts,
                  const std::vector<Tokens>& exemplars, const CheckerConfig& config = {});

struct RewardWeights {
  double lambda = 0.5;  // thinking reward
  double kappa = 0.5;   // checker grade
};

struct RewardBreakdown {
  int r_a = 0;
  double r_t = 0.0;
  Grade grade = Grade::Low;
  double combined = 0.0;
  double advantage = 0.0;
};

/// Facts a trace for this task has to cover.
VisualFacts required_facts(const TaskInstance& task);

/// Scores one response against `target`, the supervision target of the
/// step (its thinking span is the r_t reference).
RewardBreakdown score_response(std::span<const TokenId> response, const TaskInstance& task,
                               std::span<const TokenId> target,
                               const std::vector<Tokens>& exemplars, const RewardWeights& weights,
                               const CheckerConfig& checker = {});

}  // namespace dyme
