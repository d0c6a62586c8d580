#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace rvlm {

/// The four warehouse question families.
enum class QuestionType { LeftRight, Count, Distance, MultiChoice };

inline constexpr std::array<QuestionType, 4> kAllQuestionTypes = {
    QuestionType::LeftRight, QuestionType::Count, QuestionType::Distance, QuestionType::MultiChoice};

constexpr std::string_view to_string(QuestionType t) noexcept {
  switch (t) {
    case QuestionType::LeftRight: return "left_right";
    case QuestionType::Count: return "count";
    case QuestionType::Distance: return "distance";
    case QuestionType::MultiChoice: return "multi_choice";
  }
  return "unknown";
}

constexpr std::optional<QuestionType> parse_question_type(std::string_view s) noexcept {
  for (QuestionType t : kAllQuestionTypes)
    if (to_string(t) == s) return t;
  return std::nullopt;
}

}  // namespace rvlm
