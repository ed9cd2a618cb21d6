#include "dyme/tasks.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <random>
#include <set>

#include "dyme/errors.hpp"
#include "dyme/policy.hpp"
#include "json.hpp"

namespace dyme {

namespace {

const Vocabulary& vocab() { return Vocabulary::standard(); }

constexpr int kMaxRecords = Vocabulary::kMaxLabels;
constexpr int kQuestionSlots = 3;  // kind token plus up to two label arguments

int kind_index(QuestionKind k) { return static_cast<int>(k); }

int draw(std::mt19937_64& rng, int n) {
  return std::min(n - 1, static_cast<int>(uniform01(rng) * n));
}

std::int64_t draw_value(std::mt19937_64& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<double>(hi - lo + 1);
  return std::min(hi, lo + static_cast<std::int64_t>(uniform01(rng) * span));
}

void append(Tokens& out, const Tokens& more) { out.insert(out.end(), more.begin(), more.end()); }

const FactRecord& record_for(const VisualFacts& facts, int label) {
  for (const auto& r : facts.records)
    if (r.label == label) return r;
  throw InvalidInput("question refers to a label missing from the chart");
}

int expected_args(QuestionKind k) {
  switch (k) {
    case QuestionKind::Difference: return 2;
    case QuestionKind::ValueLookup: return 1;
    default: return 0;
  }
}

}  // namespace

std::string to_string(QuestionKind kind) {
  switch (kind) {
    case QuestionKind::MaxLabel: return "max-label";
    case QuestionKind::MinLabel: return "min-label";
    case QuestionKind::Sum: return "sum";
    case QuestionKind::Difference: return "difference";
    case QuestionKind::ValueLookup: return "value-lookup";
  }
  return "?";
}

std::optional<QuestionKind> parse_question_kind(const std::string& name) {
  for (QuestionKind k : kQuestionKinds)
    if (to_string(k) == name) return k;
  return std::nullopt;
}

std::string to_string(Difficulty difficulty) {
  return difficulty == Difficulty::Easy ? "easy" : "hard";
}

AnswerValue solve(const VisualFacts& facts, const Question& q) {
  if (facts.records.empty()) throw InvalidInput("chart without records");
  if (static_cast<int>(q.args.size()) != expected_args(q.kind))
    throw InvalidInput("wrong number of question arguments");
  const auto& rs = facts.records;
  switch (q.kind) {
    case QuestionKind::MaxLabel:
      return Label{std::max_element(rs.begin(), rs.end(), [](auto& a, auto& b) {
                     return a.value < b.value;
                   })->label};
    case QuestionKind::MinLabel:
      return Label{std::min_element(rs.begin(), rs.end(), [](auto& a, auto& b) {
                     return a.value < b.value;
                   })->label};
    case QuestionKind::Sum: {
      std::int64_t s = 0;
      for (const auto& r : rs) s += r.value;
      return s;
    }
    case QuestionKind::Difference:
      return std::llabs(record_for(facts, q.args[0]).value - record_for(facts, q.args[1]).value);
    case QuestionKind::ValueLookup:
      return record_for(facts, q.args[0]).value;
  }
  throw InvalidInput("unknown question kind");
}

std::vector<FactRecord> required_records(const VisualFacts& facts, const Question& q) {
  if (q.kind == QuestionKind::Difference || q.kind == QuestionKind::ValueLookup) {
    std::vector<FactRecord> out;
    for (int a : q.args) out.push_back(record_for(facts, a));
    return out;
  }
  return facts.records;
}

TraceTemplate TraceTemplate::canonical(bool show_arithmetic, std::array<int, 3> variants) {
  TraceTemplate t;
  t.show_arithmetic = show_arithmetic;
  t.segments = {{Segment::Extraction, variants[0]},
                {Segment::Calculation, variants[1]},
                {Segment::Conclusion, variants[2]}};
  return t;
}

void TraceTemplate::validate() const {
  if (segments.size() != 3) throw InvalidTemplate("template needs exactly three segments");
  const Segment order[3] = {Segment::Extraction, Segment::Calculation, Segment::Conclusion};
  for (int i = 0; i < 3; ++i) {
    if (segments[i].kind != order[i])
      throw InvalidTemplate("segments missing, repeated or out of order");
    if (segments[i].variant < 0 || segments[i].variant >= Vocabulary::kVariants)
      throw InvalidTemplate("phrasing variant out of range");
  }
}

int TaskConfig::value_digits() const {
  return static_cast<int>(number_tokens(max_value).size());
}

int TaskConfig::prompt_length() const {
  return 1 + kMaxRecords * (1 + value_digits()) + kQuestionSlots;
}

Tokens number_tokens(std::int64_t value) {
  if (value < 0) throw InvalidInput("negative values are not representable");
  const std::string s = std::to_string(value);
  Tokens out;
  for (char c : s) out.push_back(vocab().digit(c - '0'));
  return out;
}

Tokens answer_tokens(const AnswerValue& answer) {
  if (const auto* label = std::get_if<Label>(&answer)) return {vocab().label(label->index)};
  return number_tokens(std::get<std::int64_t>(answer));
}

Tokens serialize_prompt(const VisualFacts& facts, const Question& q, const TaskConfig* config) {
  const auto& v = vocab();
  Tokens out{v.title(facts.title)};
  for (const auto& r : facts.records) {
    out.push_back(v.label(r.label));
    append(out, number_tokens(r.value));
  }
  if (config) {
    const std::size_t region = 1 + kMaxRecords * (1 + config->value_digits());
    if (out.size() < region) out.resize(region, v.pad());
  }
  out.push_back(v.question(kind_index(q.kind)));
  for (int a : q.args) out.push_back(v.label(a));
  if (config) out.resize(static_cast<std::size_t>(config->prompt_length()), v.pad());
  return out;
}

ParsedPrompt parse_prompt(std::span<const TokenId> prompt) {
  const auto& v = vocab();
  if (prompt.empty() || !v.is_title(prompt[0])) throw InvalidInput("prompt must start with a title");
  ParsedPrompt p;
  p.facts.title = static_cast<int>(prompt[0] - v.title(0));
  std::size_t i = 1;
  while (i < prompt.size() && !v.is_question(prompt[i])) {
    if (prompt[i] == v.pad()) {
      ++i;
      continue;
    }
    const auto label = v.label_index(prompt[i]);
    if (!label) throw InvalidInput("expected a label in the record list");
    std::int64_t value = 0;
    std::size_t digits = 0;
    for (++i; i < prompt.size() && v.is_digit(prompt[i]); ++i, ++digits)
      value = value * 10 + *v.digit_value(prompt[i]);
    if (digits == 0) throw InvalidInput("label without a value");
    p.facts.records.push_back({*label, value});
  }
  if (i == prompt.size()) throw InvalidInput("prompt has no question");
  p.question.kind = static_cast<QuestionKind>(*v.question_kind(prompt[i]));
  for (++i; i < prompt.size(); ++i) {
    if (prompt[i] == v.pad()) continue;
    const auto label = v.label_index(prompt[i]);
    if (!label) throw InvalidInput("unexpected token after the question");
    p.question.args.push_back(*label);
  }
  return p;
}

Tokens build_reference_trace(const VisualFacts& facts, const Question& q, const AnswerValue& gold,
                             const TraceTemplate& tmpl) {
  tmpl.validate();
  const auto& v = vocab();
  const auto needed = required_records(facts, q);
  Tokens t{v.think_open()};

  t.push_back(v.extraction());
  t.push_back(v.phrase(0, tmpl.segments[0].variant));
  for (const auto& r : needed) {
    t.push_back(v.label(r.label));
    append(t, number_tokens(r.value));
  }

  t.push_back(v.calculation());
  t.push_back(v.phrase(1, tmpl.segments[1].variant));
  const bool is_max = q.kind == QuestionKind::MaxLabel;
  if (tmpl.show_arithmetic) {
    switch (q.kind) {
      case QuestionKind::MaxLabel:
      case QuestionKind::MinLabel: {
        const FactRecord* best = nullptr;
        for (const auto& r : needed) {
          if (!best || (is_max ? r.value > best->value : r.value < best->value)) best = &r;
          t.push_back(v.label(r.label));
          append(t, number_tokens(r.value));
          t.push_back(v.label(best->label));
          append(t, number_tokens(best->value));
        }
        break;
      }
      case QuestionKind::Sum: {
        std::int64_t running = 0;
        for (const auto& r : needed) {
          running += r.value;
          append(t, number_tokens(r.value));
          append(t, number_tokens(running));
        }
        break;
      }
      case QuestionKind::Difference:
        append(t, number_tokens(needed[0].value));
        append(t, number_tokens(needed[1].value));
        break;
      case QuestionKind::ValueLookup:
        break;
    }
  }
  t.push_back(v.result_word(kind_index(q.kind)));
  if (const auto* label = std::get_if<Label>(&gold)) {
    t.push_back(v.label(label->index));
    append(t, number_tokens(record_for(facts, label->index).value));
  } else {
    append(t, number_tokens(std::get<std::int64_t>(gold)));
  }

  t.push_back(v.conclusion());
  t.push_back(v.phrase(2, tmpl.segments[2].variant));
  t.push_back(v.answer_open());
  append(t, answer_tokens(gold));
  t.push_back(v.answer_close());
  t.push_back(v.think_close());
  t.push_back(v.eos());
  return t;
}

TaskInstance generate_task(std::uint64_t seed, Difficulty difficulty, const TaskConfig& config) {
  if (config.min_value < 0 || config.max_value < config.min_value + kMaxRecords - 1)
    throw InvalidInput("value range too narrow for distinct chart values");
  const auto& kinds = difficulty == Difficulty::Easy ? config.easy_kinds : config.hard_kinds;
  if (kinds.empty()) throw InvalidInput("no question kinds configured");

  std::mt19937_64 rng(seed);
  TaskInstance task;
  task.id = seed;
  const int n = difficulty == Difficulty::Easy ? 2 + draw(rng, 2) : 4 + draw(rng, 3);
  task.question.kind = kinds[static_cast<std::size_t>(draw(rng, static_cast<int>(kinds.size())))];
  task.facts.title = draw(rng, Vocabulary::kTitles);
  const bool distinct = task.question.kind == QuestionKind::MaxLabel ||
                        task.question.kind == QuestionKind::MinLabel;
  for (;;) {
    task.facts.records.clear();
    std::set<std::int64_t> seen;
    for (int i = 0; i < n; ++i) {
      const auto value = draw_value(rng, config.min_value, config.max_value);
      seen.insert(value);
      task.facts.records.push_back({i, value});
    }
    if (!distinct || static_cast<int>(seen.size()) == n) break;
  }
  if (task.question.kind == QuestionKind::Difference) {
    const int i = draw(rng, n);
    const int j = (i + 1 + draw(rng, n - 1)) % n;
    task.question.args = {i, j};
  } else if (task.question.kind == QuestionKind::ValueLookup) {
    task.question.args = {draw(rng, n)};
  }
  task.gold = solve(task.facts, task.question);
  task.prompt = serialize_prompt(task.facts, task.question, &config);
  task.reference_trace = build_reference_trace(
      task.facts, task.question, task.gold,
      TraceTemplate::canonical(config.reference_shows_arithmetic));
  return task;
}

namespace {

nlohmann::json to_json(const TaskInstance& t) {
  nlohmann::json records = nlohmann::json::array();
  for (const auto& r : t.facts.records)
    records.push_back({{"label", vocab().symbol(vocab().label(r.label))}, {"value", r.value}});
  nlohmann::json gold;
  if (const auto* l = std::get_if<Label>(&t.gold))
    gold = {{"label", vocab().symbol(vocab().label(l->index))}};
  else
    gold = {{"numeric", std::get<std::int64_t>(t.gold)}};
  nlohmann::json args = nlohmann::json::array();
  for (int a : t.question.args) args.push_back(vocab().symbol(vocab().label(a)));
  return {{"id", t.id},
          {"title", t.facts.title},
          {"records", records},
          {"question", to_string(t.question.kind)},
          {"args", args},
          {"gold", gold},
          {"reference_trace", t.reference_trace},
          {"prompt", t.prompt}};
}

int label_from(const nlohmann::json& j) {
  const auto idx = vocab().label_index(vocab().id(j.get<std::string>()));
  if (!idx) throw InvalidInput("not a label: " + j.dump());
  return *idx;
}

TaskInstance from_json(const nlohmann::json& j) {
  TaskInstance t;
  t.id = j.at("id").get<std::uint64_t>();
  t.facts.title = j.at("title").get<int>();
  if (t.facts.title < 0 || t.facts.title >= Vocabulary::kTitles) throw InvalidInput("bad title");
  for (const auto& r : j.at("records"))
    t.facts.records.push_back({label_from(r.at("label")), r.at("value").get<std::int64_t>()});
  const auto kind = parse_question_kind(j.at("question").get<std::string>());
  if (!kind) throw InvalidInput("unknown question kind");
  t.question.kind = *kind;
  for (const auto& a : j.at("args")) t.question.args.push_back(label_from(a));
  const auto& gold = j.at("gold");
  if (gold.contains("label"))
    t.gold = Label{label_from(gold.at("label"))};
  else
    t.gold = gold.at("numeric").get<std::int64_t>();
  if (!(solve(t.facts, t.question) == t.gold)) throw InvalidInput("gold answer disagrees with facts");
  t.reference_trace = j.at("reference_trace").get<Tokens>();
  t.prompt = j.at("prompt").get<Tokens>();
  for (TokenId id : t.reference_trace) vocab().symbol(id);
  for (TokenId id : t.prompt) vocab().symbol(id);
  return t;
}

}  // namespace

void write_tasks_jsonl(const std::string& path, const std::vector<TaskInstance>& tasks) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& t : tasks) out << to_json(t).dump() << '\n';
}

std::vector<TaskInstance> read_tasks_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<TaskInstance> tasks;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      tasks.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw InvalidInput(path + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return tasks;
}

}  // namespace dyme
