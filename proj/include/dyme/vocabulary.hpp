#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dyme {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;

/// Closed symbol inventory shared by the task generator, the policy and the
/// reward rules. Ids are dense in [0, size()).
///
/// The standard vocabulary is laid out in groups: control markers, segment
/// markers, question kinds, bar labels, chart titles, digits, phrasing words
/// and result words. Helper predicates classify ids by group.
class Vocabulary {
 public:
  static constexpr int kMaxLabels = 6;
  static constexpr int kTitles = 4;
  static constexpr int kVariants = 3;

  /// The vocabulary used throughout the project (48 symbols).
  static const Vocabulary& standard();

  int size() const noexcept { return static_cast<int>(symbols_.size()); }
  const std::string& symbol(TokenId id) const;
  std::optional<TokenId> find(std::string_view symbol) const;
  TokenId id(std::string_view symbol) const;  // throws InvalidInput
  bool contains(TokenId id) const noexcept { return id >= 0 && id < size(); }

  // Control markers.
  TokenId pad() const noexcept { return pad_; }
  TokenId eos() const noexcept { return eos_; }
  TokenId think_open() const noexcept { return think_open_; }
  TokenId think_close() const noexcept { return think_close_; }
  TokenId answer_open() const noexcept { return answer_open_; }
  TokenId answer_close() const noexcept { return answer_close_; }

  // Segment markers.
  TokenId extraction() const noexcept { return extraction_; }
  TokenId calculation() const noexcept { return calculation_; }
  TokenId conclusion() const noexcept { return conclusion_; }

  TokenId question(int kind) const { return question_.at(kind); }
  TokenId label(int index) const { return labels_.at(index); }
  TokenId title(int index) const { return titles_.at(index); }
  TokenId digit(int value) const { return digits_.at(value); }
  /// Phrasing word introducing segment `segment` (0..2) in variant `variant`.
  TokenId phrase(int segment, int variant) const {
    return phrases_.at(segment * kVariants + variant);
  }
  TokenId result_word(int kind) const { return result_words_.at(kind); }

  bool is_control(TokenId t) const noexcept;
  bool is_segment_marker(TokenId t) const noexcept;
  bool is_question(TokenId t) const noexcept;
  bool is_digit(TokenId t) const noexcept;
  bool is_label(TokenId t) const noexcept;
  bool is_title(TokenId t) const noexcept;
  bool is_phrase(TokenId t) const noexcept;
  bool is_result_word(TokenId t) const noexcept;

  std::optional<int> digit_value(TokenId t) const noexcept;
  std::optional<int> label_index(TokenId t) const noexcept;
  std::optional<int> question_kind(TokenId t) const noexcept;
  /// (segment, variant) for a phrasing word.
  std::optional<std::pair<int, int>> phrase_slot(TokenId t) const noexcept;

  std::string render(std::span<const TokenId> tokens) const;

 private:
  Vocabulary();
  TokenId add(std::string symbol);

  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_{}, eos_{}, think_open_{}, think_close_{}, answer_open_{}, answer_close_{};
  TokenId extraction_{}, calculation_{}, conclusion_{};
  std::vector<TokenId> question_, labels_, titles_, digits_, phrases_, result_words_;
};

}  // namespace dyme
