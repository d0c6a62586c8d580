#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rvlm/data.hpp"
#include "rvlm/question_type.hpp"

namespace rvlm {

class RegionVlm;

/// Rule cascade, first match wins:
///   MultiChoice  "which region", "which of", "which one", "choose", "option"
///   LeftRight    the words "left" or "right" (covers "right-hand side")
///   Count        "how many"
///   Distance     "distance", "how far"
/// Throws UnclassifiableQuestion when nothing matches.
QuestionType classify_question(std::string_view text);

enum class AnswerShape { Directional, Numeric, Choice, Sentence };
std::string_view to_string(AnswerShape s) noexcept;
std::optional<AnswerShape> parse_answer_shape(std::string_view s) noexcept;

/// Whole-answer shape: a bare "left"/"right", a bare number with optional
/// unit, a bare "[Region k]"/"Region k", otherwise a sentence.
AnswerShape classify_answer(std::string_view text);

enum class Direction { Left, Right };
struct CountValue {
  int value = 0;
  friend bool operator==(const CountValue&, const CountValue&) = default;
};
struct Meters {
  double value = 0.0;
  friend bool operator==(const Meters&, const Meters&) = default;
};
struct Choice {
  int index = 0;
  friend bool operator==(const Choice&, const Choice&) = default;
};
using NormalizedAnswer = std::variant<Direction, CountValue, Meters, Choice>;

/// The question type a normalized value belongs to.
QuestionType answer_type(const NormalizedAnswer& a) noexcept;
nlohmann::json to_json(const NormalizedAnswer& a);
NormalizedAnswer normalized_from_json(const nlohmann::json& j, QuestionType qtype);
std::string to_string(const NormalizedAnswer& a);

/// Per-type extraction:
///   LeftRight    last "left"/"right"; flipped when the first region mentioned
///                has a higher index than the second ("[Region 1] is right of
///                [Region 0]" answers "left" for Region 0)
///   Count        first integer or number word (zero..twenty), region
///                references ignored
///   Distance     first decimal number, region references ignored; "cm" and
///                "mm" are converted to meters
///   MultiChoice  first "[Region k]" or "Region k"
/// Throws ExtractionFailure.
NormalizedAnswer normalize_answer(std::string_view text, QuestionType qtype);
std::optional<NormalizedAnswer> try_normalize_answer(std::string_view text, QuestionType qtype);

/// Relative tolerance for distance answers.
inline constexpr double kDistanceTolerance = 0.25;
inline constexpr double kDistanceEps = 1e-9;

/// Exact match except for distances: |p - g| / max(g, eps) <= 0.25.
bool is_correct(const NormalizedAnswer& predicted, const NormalizedAnswer& gold);

struct EvalPair {
  QuestionType qtype = QuestionType::LeftRight;
  std::optional<NormalizedAnswer> predicted;  ///< nullopt = extraction failed
  NormalizedAnswer gold;
};

struct CategoryMetrics {
  std::size_t total = 0;
  std::size_t parsed = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;        ///< correct / total; unparseable answers count as wrong
  std::optional<double> rmse;   ///< Count and Distance only, over parsed pairs
};

struct MetricsReport {
  std::map<QuestionType, CategoryMetrics> categories;  ///< all four, possibly empty
  std::size_t total = 0;
  std::size_t unparseable = 0;
  /// Unweighted mean of the accuracies of non-empty categories, times 100.
  double aggregate = 0.0;
};

/// Throws VariantMismatch when a gold or predicted value does not match its
/// pair's question type. The result does not depend on pair order.
MetricsReport compute_metrics(std::span<const EvalPair> pairs);

struct TraceRecord {
  std::string id;
  QuestionType qtype = QuestionType::LeftRight;
  std::string raw;
  std::optional<NormalizedAnswer> extracted;
  NormalizedAnswer gold;
  bool correct = false;
};

nlohmann::json to_json(const TraceRecord& r);
TraceRecord trace_record_from_json(const nlohmann::json& j);
/// One JSON object per line.
std::string serialize_trace(std::span<const TraceRecord> trace);
std::vector<TraceRecord> parse_trace(std::string_view text);
std::vector<EvalPair> pairs_from_trace(std::span<const TraceRecord> trace);

std::string render_report_text(const MetricsReport& report);
nlohmann::json report_to_json(const MetricsReport& report);

struct EvalResult {
  MetricsReport report;
  std::vector<TraceRecord> trace;
};

/// Produces the model's answer text for a sample whose final assistant turn
/// is the gold answer.
using Responder = std::function<std::string(const ConversationSample&)>;

/// generate -> classify -> normalize -> compute_metrics. The question is the
/// last user turn, the gold answer the last assistant turn. Throws
/// MalformedRecord when a gold answer cannot be normalized.
EvalResult evaluate(const std::vector<ConversationSample>& dataset, const Responder& respond);
EvalResult evaluate_model(const RegionVlm& model, const std::vector<ConversationSample>& dataset, int max_new);

/// Writes <dir>/trace.jsonl, <dir>/report.txt and <dir>/report.json.
void write_eval_outputs(const EvalResult& result, const std::filesystem::path& dir);
/// Recomputes report.txt content from a trace file.
std::string regenerate_report_text(const std::filesystem::path& trace_path);

}  // namespace rvlm
