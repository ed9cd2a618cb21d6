#include "dyme/rewards.hpp"

#include <algorithm>
#include <cstdlib>
#include <map>

namespace dyme {

namespace {

const Vocabulary& vocab() { return Vocabulary::standard(); }

template <typename Keep>
std::map<TokenId, int> counts(std::span<const TokenId> tokens, Keep keep) {
  std::map<TokenId, int> c;
  for (TokenId t : tokens)
    if (keep(t)) ++c[t];
  return c;
}

int overlap(const std::map<TokenId, int>& a, const std::map<TokenId, int>& b) {
  int n = 0;
  for (const auto& [tok, k] : a)
    if (auto it = b.find(tok); it != b.end()) n += std::min(k, it->second);
  return n;
}

int total(const std::map<TokenId, int>& c) {
  int n = 0;
  for (const auto& kv : c) n += kv.second;
  return n;
}

double f1(const std::map<TokenId, int>& pred, const std::map<TokenId, int>& ref) {
  const int np = total(pred), nr = total(ref);
  if (np == 0 || nr == 0) return 0.0;
  const int ov = overlap(pred, ref);
  if (ov == 0) return 0.0;
  const double p = double(ov) / np, r = double(ov) / nr;
  return 2.0 * p * r / (p + r);
}

bool is_skeleton(TokenId t) {
  const auto& v = vocab();
  return v.is_segment_marker(t) || v.is_phrase(t) || v.is_result_word(t);
}

std::ptrdiff_t find_from(std::span<const TokenId> s, std::ptrdiff_t from, TokenId t) {
  for (auto i = from; i < static_cast<std::ptrdiff_t>(s.size()); ++i)
    if (s[i] == t) return i;
  return -1;
}

}  // namespace

double grade_value(Grade g) {
  switch (g) {
    case Grade::Low: return 0.0;
    case Grade::Medium: return 0.5;
    case Grade::High: return 1.0;
  }
  return 0.0;
}

std::string to_string(Grade g) {
  switch (g) {
    case Grade::Low: return "low";
    case Grade::Medium: return "medium";
    case Grade::High: return "high";
  }
  return "?";
}

ParsedResponse parse_response(std::span<const TokenId> tokens) {
  const auto& v = vocab();
  ParsedResponse out;
  const auto open = find_from(tokens, 0, v.think_open());
  if (open < 0) return out;
  const auto close = find_from(tokens, open + 1, v.think_close());
  if (close < 0) return out;
  const auto a_open = find_from(tokens, open + 1, v.answer_open());
  if (a_open < 0 || a_open > close) return out;
  const auto a_close = find_from(tokens, a_open + 1, v.answer_close());
  if (a_close < 0 || a_close > close) return out;

  const auto span = tokens.subspan(a_open + 1, a_close - a_open - 1);
  if (span.empty()) return out;
  if (span.size() == 1 && v.is_label(span[0])) {
    out.answer = Label{*v.label_index(span[0])};
  } else {
    if (span.size() > 18) return out;
    std::int64_t value = 0;
    for (TokenId t : span) {
      const auto d = v.digit_value(t);
      if (!d) return out;
      value = value * 10 + *d;
    }
    out.answer = value;
  }
  for (auto i = open + 1; i < close; ++i)
    if (tokens[i] != v.answer_open() && tokens[i] != v.answer_close())
      out.trace_tokens.push_back(tokens[i]);
  out.parse_ok = true;
  return out;
}

bool relaxed_correct(const AnswerValue& predicted, const AnswerValue& gold) {
  if (predicted.index() != gold.index()) return false;
  if (const auto* g = std::get_if<Label>(&gold)) return std::get<Label>(predicted) == *g;
  // Integer form of |p - g| <= 0.05 |g|, so the boundary is exact.
  const std::int64_t p = std::get<std::int64_t>(predicted), g = std::get<std::int64_t>(gold);
  return 20 * std::llabs(p - g) <= std::llabs(g);
}

int answer_reward(const ParsedResponse& response, const AnswerValue& gold) {
  return response.parse_ok && response.answer && relaxed_correct(*response.answer, gold) ? 1 : 0;
}

double thinking_reward(std::span<const TokenId> trace, std::span<const TokenId> reference) {
  auto content = [](TokenId t) { return !vocab().is_control(t); };
  return f1(counts(trace, content), counts(reference, content));
}

double fact_coverage(std::span<const TokenId> trace, const VisualFacts& facts) {
  Tokens required;
  for (const auto& r : facts.records) {
    required.push_back(vocab().label(r.label));
    const Tokens digits = number_tokens(r.value);
    required.insert(required.end(), digits.begin(), digits.end());
  }
  if (required.empty()) return 1.0;
  auto all = [](TokenId) { return true; };
  const auto need = counts(std::span<const TokenId>(required), all);
  return double(overlap(need, counts(trace, all))) / double(required.size());
}

bool has_structure(std::span<const TokenId> trace) {
  const auto& v = vocab();
  const auto e = find_from(trace, 0, v.extraction());
  const auto c = find_from(trace, 0, v.calculation());
  const auto k = find_from(trace, 0, v.conclusion());
  return e >= 0 && c > e && k > c;
}

double style_similarity(std::span<const TokenId> trace, std::span<const TokenId> exemplar) {
  return f1(counts(trace, is_skeleton), counts(exemplar, is_skeleton));
}

Grade check_trace(std::span<const TokenId> trace, const VisualFacts& facts,
                  const std::vector<Tokens>& exemplars, const CheckerConfig& config) {
  if (!has_structure(trace)) return Grade::Low;
  const double coverage = fact_coverage(trace, facts);
  if (coverage < config.coverage_low) return Grade::Low;
  if (coverage < config.coverage_high) return Grade::Medium;
  if (exemplars.empty()) return Grade::High;
  double best = 0.0;
  for (const auto& e : exemplars) best = std::max(best, style_similarity(trace, e));
  return best >= config.style_min ? Grade::High : Grade::Medium;
}

VisualFacts required_facts(const TaskInstance& task) {
  return {task.facts.title, required_records(task.facts, task.question)};
}

RewardBreakdown score_response(std::span<const TokenId> response, const TaskInstance& task,
                               std::span<const TokenId> target,
                               const std::vector<Tokens>& exemplars, const RewardWeights& weights,
                               const CheckerConfig& checker) {
  const ParsedResponse parsed = parse_response(response);
  const ParsedResponse reference = parse_response(target);
  RewardBreakdown b;
  b.r_a = answer_reward(parsed, task.gold);
  if (parsed.parse_ok) {
    b.r_t = thinking_reward(parsed.trace_tokens, reference.trace_tokens);
    b.grade = check_trace(parsed.trace_tokens, required_facts(task), exemplars, checker);
  }
  b.combined = b.r_a + weights.lambda * b.r_t + weights.kappa * grade_value(b.grade);
  return b;
}

}  // namespace dyme
