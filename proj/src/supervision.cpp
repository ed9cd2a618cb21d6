#include "dyme/supervision.hpp"

#include "dyme/errors.hpp"
#include "json.hpp"

namespace dyme {

ExemplarPool::ExemplarPool(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidInput("pool capacity must be positive");
}

bool ExemplarPool::admit(const Tokens& trace, Grade grade, std::uint64_t task_id, long step) {
  if (grade != Grade::High) return false;
  if (entries_.size() == capacity_) entries_.pop_front();
  entries_.push_back({trace, task_id, grade, step});
  return true;
}

std::vector<Tokens> ExemplarPool::traces() const {
  std::vector<Tokens> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.trace);
  return out;
}

const ExemplarEntry* ExemplarPool::latest_for(QuestionKind kind) const {
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it)
    if (trace_question_kind(it->trace) == kind) return &*it;
  return nullptr;
}

namespace {

template <typename Entries>
std::optional<std::array<int, 3>> vote(const Entries& entries, std::optional<QuestionKind> kind) {
  std::array<std::array<int, Vocabulary::kVariants>, 3> votes{};
  std::array<int, 3> newest{};
  bool any = false;
  for (const auto& e : entries) {
    if (kind && trace_question_kind(e.trace) != kind) continue;
    const auto v = trace_variants(e.trace);
    for (int s = 0; s < 3; ++s) ++votes[s][v[s]];
    newest = v;
    any = true;
  }
  if (!any) return std::nullopt;
  std::array<int, 3> out = newest;
  for (int s = 0; s < 3; ++s)
    for (int k = 0; k < Vocabulary::kVariants; ++k)
      if (votes[s][k] > votes[s][out[s]]) out[s] = k;
  return out;
}

}  // namespace

std::optional<std::array<int, 3>> ExemplarPool::preferred_variants(QuestionKind kind) const {
  return vote(entries_, kind);
}

std::optional<std::array<int, 3>> ExemplarPool::preferred_variants() const {
  return vote(entries_, std::nullopt);
}

std::string ExemplarPool::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : entries_)
    entries.push_back({{"trace", e.trace},
                       {"task_id", e.task_id},
                       {"grade", dyme::to_string(e.grade)},
                       {"step", e.step}});
  return nlohmann::json{{"capacity", capacity_}, {"entries", entries}}.dump();
}

ExemplarPool ExemplarPool::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  ExemplarPool pool(j.at("capacity").get<std::size_t>());
  for (const auto& e : j.at("entries")) {
    if (e.at("grade").get<std::string>() != "high")
      throw InvalidInput("pool entries must be graded high");
    const auto trace = e.at("trace").get<Tokens>();
    for (TokenId t : trace) Vocabulary::standard().symbol(t);
    pool.admit(trace, Grade::High, e.at("task_id").get<std::uint64_t>(),
               e.at("step").get<long>());
  }
  return pool;
}

std::optional<QuestionKind> trace_question_kind(std::span<const TokenId> trace) {
  const auto& v = Vocabulary::standard();
  for (TokenId t : trace)
    if (v.is_result_word(t))
      for (QuestionKind k : kQuestionKinds)
        if (v.result_word(static_cast<int>(k)) == t) return k;
  return std::nullopt;
}

std::array<int, 3> trace_variants(std::span<const TokenId> trace) {
  const auto& v = Vocabulary::standard();
  std::array<int, 3> variants{0, 0, 0};
  std::array<bool, 3> seen{false, false, false};
  for (TokenId t : trace)
    if (const auto slot = v.phrase_slot(t); slot && !seen[slot->first]) {
      seen[slot->first] = true;
      variants[slot->first] = slot->second;
    }
  return variants;
}

Tokens refine_ground_truth(const VisualFacts& facts, const Question& question,
                           const AnswerValue& gold, const TraceTemplate& tmpl,
                           const ExemplarPool& pool) {
  tmpl.validate();
  TraceTemplate t = tmpl;
  t.show_arithmetic = true;
  // Same-kind exemplars decide the phrasing; failing those, the whole pool.
  auto variants = pool.preferred_variants(question.kind);
  if (!variants) variants = pool.preferred_variants();
  if (variants)
    for (int s = 0; s < 3; ++s) t.segments[s].variant = (*variants)[s];
  return build_reference_trace(facts, question, gold, t);
}

Tokens supervision_target(const TaskInstance& task, const ExemplarPool& pool, bool refine) {
  if (!refine) return task.reference_trace;
  return refine_ground_truth(task.facts, task.question, task.gold,
                             TraceTemplate::canonical(true), pool);
}

}  // namespace dyme
