#pragma once

// Checker-refiner loop: a FIFO pool of high-graded traces and a refiner that
// builds structured, fact-grounded supervision targets.

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "dyme/rewards.hpp"
#include "dyme/tasks.hpp"

namespace dyme {

struct ExemplarEntry {
  Tokens trace;
  std::uint64_t task_id = 0;
  Grade grade = Grade::High;
  long step = 0;
};

class ExemplarPool {
 public:
  explicit ExemplarPool(std::size_t capacity = 64);

  /// Admits the trace iff `grade` is High, evicting the oldest entry when
  /// full. Returns whether it was admitted.
  bool admit(const Tokens& trace, Grade grade, std::uint64_t task_id, long step);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::deque<ExemplarEntry>& entries() const { return entries_; }
  std::vector<Tokens> traces() const;

  /// Newest entry whose result word marks it as answering `kind`.
  const ExemplarEntry* latest_for(QuestionKind kind) const;

  /// Most common phrasing per segment among entries answering `kind`, ties
  /// going to the newer entry. Empty when no entry answers `kind`.
  std::optional<std::array<int, 3>> preferred_variants(QuestionKind kind) const;
  /// Same vote over every entry. Empty only for an empty pool.
  std::optional<std::array<int, 3>> preferred_variants() const;

  std::string to_json() const;
  static ExemplarPool from_json(const std::string& text);

 private:
  std::size_t capacity_;
  std::deque<ExemplarEntry> entries_;
};

/// Question kind a trace answers, read from its result word.
std::optional<QuestionKind> trace_question_kind(std::span<const TokenId> trace);

/// Phrasing variant per segment (0 where the segment has no phrasing word).
std::array<int, 3> trace_variants(std::span<const TokenId> trace);

/// Structured target from `tmpl` with the arithmetic spelled out. When the
/// pool holds exemplars for the same question kind, their preferred
/// phrasings replace the template's.
Tokens refine_ground_truth(const VisualFacts& facts, const Question& question,
                           const AnswerValue& gold, const TraceTemplate& tmpl,
                           const ExemplarPool& pool);

/// The static reference trace, or the refined target when `refine` is set.
Tokens supervision_target(const TaskInstance& task, const ExemplarPool& pool, bool refine);

}  // namespace dyme
