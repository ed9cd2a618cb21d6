#include "dyme/vocabulary.hpp"

#include <algorithm>

#include "dyme/errors.hpp"

namespace dyme {

namespace {

bool in(const std::vector<TokenId>& group, TokenId t) {
  return std::find(group.begin(), group.end(), t) != group.end();
}

std::optional<int> position(const std::vector<TokenId>& group, TokenId t) {
  auto it = std::find(group.begin(), group.end(), t);
  if (it == group.end()) return std::nullopt;
  return static_cast<int>(it - group.begin());
}

}  // namespace

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

Vocabulary::Vocabulary() {
  pad_ = add("<pad>");
  eos_ = add("<eos>");
  think_open_ = add("<think>");
  think_close_ = add("</think>");
  answer_open_ = add("<answer>");
  answer_close_ = add("</answer>");
  extraction_ = add("[Extraction]");
  calculation_ = add("[Calculation]");
  conclusion_ = add("[Conclusion]");
  for (const char* q : {"max-label?", "min-label?", "sum?", "difference?", "value-lookup?"})
    question_.push_back(add(q));
  for (int i = 0; i < kMaxLabels; ++i) labels_.push_back(add(std::string(1, char('A' + i))));
  for (int i = 0; i < kTitles; ++i) titles_.push_back(add("title" + std::to_string(i)));
  for (int i = 0; i < 10; ++i) digits_.push_back(add(std::to_string(i)));
  // Three phrasings per segment, in segment order.
  for (const char* w : {"reads", "shows", "lists",              //
                        "compare", "compute", "check",          //
                        "so", "thus", "hence"})
    phrases_.push_back(add(w));
  for (const char* w : {"largest", "smallest", "total", "minus", "equals"})
    result_words_.push_back(add(w));
}

TokenId Vocabulary::add(std::string symbol) {
  const auto id = static_cast<TokenId>(symbols_.size());
  index_.emplace(symbol, id);
  symbols_.push_back(std::move(symbol));
  return id;
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (!contains(id)) throw InvalidInput("token id out of range: " + std::to_string(id));
  return symbols_[static_cast<std::size_t>(id)];
}

std::optional<TokenId> Vocabulary::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocabulary::id(std::string_view symbol) const {
  if (auto t = find(symbol)) return *t;
  throw InvalidInput("unknown symbol: " + std::string(symbol));
}

bool Vocabulary::is_control(TokenId t) const noexcept {
  return t == pad_ || t == eos_ || t == think_open_ || t == think_close_ ||
         t == answer_open_ || t == answer_close_;
}

bool Vocabulary::is_segment_marker(TokenId t) const noexcept {
  return t == extraction_ || t == calculation_ || t == conclusion_;
}

bool Vocabulary::is_question(TokenId t) const noexcept { return in(question_, t); }
bool Vocabulary::is_digit(TokenId t) const noexcept { return in(digits_, t); }
bool Vocabulary::is_label(TokenId t) const noexcept { return in(labels_, t); }
bool Vocabulary::is_title(TokenId t) const noexcept { return in(titles_, t); }
bool Vocabulary::is_phrase(TokenId t) const noexcept { return in(phrases_, t); }
bool Vocabulary::is_result_word(TokenId t) const noexcept { return in(result_words_, t); }

std::optional<int> Vocabulary::digit_value(TokenId t) const noexcept { return position(digits_, t); }
std::optional<int> Vocabulary::label_index(TokenId t) const noexcept { return position(labels_, t); }
std::optional<int> Vocabulary::question_kind(TokenId t) const noexcept {
  return position(question_, t);
}

std::optional<std::pair<int, int>> Vocabulary::phrase_slot(TokenId t) const noexcept {
  auto p = position(phrases_, t);
  if (!p) return std::nullopt;
  return std::make_pair(*p / kVariants, *p % kVariants);
}

std::string Vocabulary::render(std::span<const TokenId> tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out += ' ';
    out += contains(t) ? symbols_[static_cast<std::size_t>(t)] : "<?>";
  }
  return out;
}

}  // namespace dyme
