#include "rvlm/evaluator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>

#include "rvlm/errors.hpp"
#include "rvlm/model.hpp"

namespace rvlm {
namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string trim(std::string_view s) {
  auto space = [](char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; };
  while (!s.empty() && space(s.front())) s.remove_prefix(1);
  while (!s.empty() && space(s.back())) s.remove_suffix(1);
  return std::string(s);
}

constexpr std::array<std::string_view, 21> kNumberWords = {
    "zero",    "one",     "two",       "three",    "four",     "five",    "six",
    "seven",   "eight",   "nine",      "ten",      "eleven",   "twelve",  "thirteen",
    "fourteen", "fifteen", "sixteen",  "seventeen", "eighteen", "nineteen", "twenty"};

std::string number_word_alternation() {
  std::string alt;
  for (auto w : kNumberWords) {
    if (!alt.empty()) alt += '|';
    alt += w;
  }
  return alt;
}

const std::regex& re_multi_choice() {
  static const std::regex re(R"(\bwhich\s+(region|of|one)\b|\bchoose\b|\boptions?\b)");
  return re;
}
const std::regex& re_direction() {
  static const std::regex re(R"(\b(left|right)\b)");
  return re;
}
const std::regex& re_region() {
  static const std::regex re(R"(\[?\bregion\s*(\d+)\s*\]?)");
  return re;
}
const std::regex& re_count() {
  static const std::regex re("\\b(\\d+|" + number_word_alternation() + ")\\b");
  return re;
}
const std::regex& re_distance() {
  static const std::regex re(
      R"((\d+(?:\.\d+)?|\.\d+)\s*(centimet(?:er|re)s?|cm|millimet(?:er|re)s?|mm|met(?:er|re)s?|m)?\b)");
  return re;
}
const std::regex& re_bare_number() {
  static const std::regex re("^-?(\\d+(\\.\\d+)?|\\.\\d+)\\s*(m|met(er|re)s?|cm|mm)?$|^(" +
                             number_word_alternation() + ")$");
  return re;
}
const std::regex& re_bare_choice() {
  static const std::regex re(R"(^\[?region\s*\d+\]?$)");
  return re;
}

[[noreturn]] void extraction_failure(std::string_view text, QuestionType qtype) {
  std::string shown(text.substr(0, 80));
  if (text.size() > 80) shown += "...";
  throw Error(Errc::ExtractionFailure, "no " + std::string(to_string(qtype)) + " answer in \"" + shown + "\"");
}

std::optional<int> small_int(const std::string& digits) {
  if (digits.empty() || digits.size() > 9) return std::nullopt;
  return std::stoi(digits);
}

std::vector<int> region_indices(const std::string& s) {
  std::vector<int> out;
  for (auto it = std::sregex_iterator(s.begin(), s.end(), re_region()); it != std::sregex_iterator(); ++it)
    if (auto v = small_int((*it)[1].str())) out.push_back(*v);
  return out;
}

std::string strip_regions(const std::string& s) { return std::regex_replace(s, re_region(), " "); }

}  // namespace

QuestionType classify_question(std::string_view text) {
  const std::string s = lower(text);
  if (std::regex_search(s, re_multi_choice())) return QuestionType::MultiChoice;
  if (std::regex_search(s, re_direction())) return QuestionType::LeftRight;
  if (s.find("how many") != std::string::npos) return QuestionType::Count;
  if (s.find("distance") != std::string::npos || s.find("how far") != std::string::npos)
    return QuestionType::Distance;
  std::string shown(text.substr(0, 80));
  throw Error(Errc::UnclassifiableQuestion, "no rule matches \"" + shown + "\"");
}

std::string_view to_string(AnswerShape s) noexcept {
  switch (s) {
    case AnswerShape::Directional: return "directional";
    case AnswerShape::Numeric: return "numeric";
    case AnswerShape::Choice: return "choice";
    case AnswerShape::Sentence: return "sentence";
  }
  return "sentence";
}

std::optional<AnswerShape> parse_answer_shape(std::string_view s) noexcept {
  for (auto a : {AnswerShape::Directional, AnswerShape::Numeric, AnswerShape::Choice, AnswerShape::Sentence})
    if (to_string(a) == s) return a;
  return std::nullopt;
}

AnswerShape classify_answer(std::string_view text) {
  std::string s = trim(lower(text));
  while (!s.empty() && (s.back() == '.' || s.back() == '!')) s.pop_back();
  s = trim(s);
  if (s == "left" || s == "right") return AnswerShape::Directional;
  if (std::regex_match(s, re_bare_number())) return AnswerShape::Numeric;
  if (std::regex_match(s, re_bare_choice())) return AnswerShape::Choice;
  return AnswerShape::Sentence;
}

QuestionType answer_type(const NormalizedAnswer& a) noexcept {
  switch (a.index()) {
    case 0: return QuestionType::LeftRight;
    case 1: return QuestionType::Count;
    case 2: return QuestionType::Distance;
    default: return QuestionType::MultiChoice;
  }
}

nlohmann::json to_json(const NormalizedAnswer& a) {
  if (const auto* d = std::get_if<Direction>(&a)) return *d == Direction::Left ? "left" : "right";
  if (const auto* c = std::get_if<CountValue>(&a)) return c->value;
  if (const auto* m = std::get_if<Meters>(&a)) return m->value;
  return std::get<Choice>(a).index;
}

NormalizedAnswer normalized_from_json(const nlohmann::json& j, QuestionType qtype) {
  try {
    switch (qtype) {
      case QuestionType::LeftRight: {
        const auto s = j.get<std::string>();
        if (s == "left") return Direction::Left;
        if (s == "right") return Direction::Right;
        break;
      }
      case QuestionType::Count: return CountValue{j.get<int>()};
      case QuestionType::Distance: return Meters{j.get<double>()};
      case QuestionType::MultiChoice: return Choice{j.get<int>()};
    }
  } catch (const nlohmann::json::exception&) {
  }
  throw Error(Errc::VariantMismatch, "value " + j.dump() + " is not a " + std::string(to_string(qtype)) + " answer");
}

std::string to_string(const NormalizedAnswer& a) {
  if (const auto* m = std::get_if<Meters>(&a)) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", m->value);
    return buf;
  }
  const auto j = to_json(a);
  return j.is_string() ? j.get<std::string>() : j.dump();
}

NormalizedAnswer normalize_answer(std::string_view text, QuestionType qtype) {
  const std::string s = lower(text);
  switch (qtype) {
    case QuestionType::LeftRight: {
      std::string last;
      for (auto it = std::sregex_iterator(s.begin(), s.end(), re_direction()); it != std::sregex_iterator(); ++it)
        last = (*it)[1].str();
      if (last.empty()) break;
      bool left = last == "left";
      const auto regions = region_indices(s);
      if (regions.size() >= 2 && regions[0] > regions[1]) left = !left;
      return left ? Direction::Left : Direction::Right;
    }
    case QuestionType::Count: {
      const std::string t = strip_regions(s);
      std::smatch m;
      if (!std::regex_search(t, m, re_count())) break;
      const std::string tok = m[1].str();
      for (std::size_t i = 0; i < kNumberWords.size(); ++i)
        if (tok == kNumberWords[i]) return CountValue{static_cast<int>(i)};
      if (auto v = small_int(tok)) return CountValue{*v};
      break;
    }
    case QuestionType::Distance: {
      const std::string t = strip_regions(s);
      std::smatch m;
      if (!std::regex_search(t, m, re_distance())) break;
      double v = std::strtod(m[1].str().c_str(), nullptr);
      const std::string unit = m[2].str();
      if (unit.starts_with("c")) v /= 100.0;
      if (unit.starts_with("mm") || unit.starts_with("mi")) v /= 1000.0;
      if (!std::isfinite(v)) break;
      return Meters{v};
    }
    case QuestionType::MultiChoice: {
      const auto regions = region_indices(s);
      if (regions.empty()) break;
      return Choice{regions.front()};
    }
  }
  extraction_failure(text, qtype);
}

std::optional<NormalizedAnswer> try_normalize_answer(std::string_view text, QuestionType qtype) {
  try {
    return normalize_answer(text, qtype);
  } catch (const Error& e) {
    if (e.code() != Errc::ExtractionFailure) throw;
    return std::nullopt;
  }
}

bool is_correct(const NormalizedAnswer& predicted, const NormalizedAnswer& gold) {
  if (predicted.index() != gold.index()) return false;
  if (const auto* g = std::get_if<Meters>(&gold)) {
    const double p = std::get<Meters>(predicted).value;
    return std::abs(p - g->value) / std::max(g->value, kDistanceEps) <= kDistanceTolerance;
  }
  return predicted == gold;
}

MetricsReport compute_metrics(std::span<const EvalPair> pairs) {
  MetricsReport r;
  std::map<QuestionType, std::vector<double>> squared;
  for (QuestionType t : kAllQuestionTypes) r.categories[t] = {};
  for (const EvalPair& p : pairs) {
    if (answer_type(p.gold) != p.qtype)
      throw Error(Errc::VariantMismatch, "gold answer is a " + std::string(to_string(answer_type(p.gold))) +
                                             " value for a " + std::string(to_string(p.qtype)) + " question");
    if (p.predicted && answer_type(*p.predicted) != p.qtype)
      throw Error(Errc::VariantMismatch, "prediction is a " + std::string(to_string(answer_type(*p.predicted))) +
                                             " value for a " + std::string(to_string(p.qtype)) + " question");
    CategoryMetrics& c = r.categories[p.qtype];
    ++c.total;
    ++r.total;
    if (!p.predicted) {
      ++r.unparseable;
      continue;
    }
    ++c.parsed;
    if (is_correct(*p.predicted, p.gold)) ++c.correct;
    if (p.qtype == QuestionType::Count) {
      const double d = std::get<CountValue>(*p.predicted).value - std::get<CountValue>(p.gold).value;
      squared[p.qtype].push_back(d * d);
    } else if (p.qtype == QuestionType::Distance) {
      const double d = std::get<Meters>(*p.predicted).value - std::get<Meters>(p.gold).value;
      squared[p.qtype].push_back(d * d);
    }
  }
  double acc_sum = 0.0;
  int non_empty = 0;
  for (auto& [t, c] : r.categories) {
    if (c.total == 0) continue;
    c.accuracy = static_cast<double>(c.correct) / static_cast<double>(c.total);
    acc_sum += c.accuracy;
    ++non_empty;
    auto it = squared.find(t);
    if (it != squared.end() && !it->second.empty()) {
      // Sorted summation keeps the result independent of sample order.
      std::sort(it->second.begin(), it->second.end());
      double sum = 0.0;
      for (double v : it->second) sum += v;
      c.rmse = std::sqrt(sum / static_cast<double>(it->second.size()));
    }
  }
  r.aggregate = non_empty > 0 ? 100.0 * acc_sum / non_empty : 0.0;
  return r;
}

nlohmann::json to_json(const TraceRecord& r) {
  return {{"id", r.id},
          {"qtype", std::string(to_string(r.qtype))},
          {"raw", r.raw},
          {"extracted", r.extracted ? to_json(*r.extracted) : nlohmann::json(nullptr)},
          {"gold", to_json(r.gold)},
          {"verdict", r.extracted ? (r.correct ? "correct" : "wrong") : "unparseable"}};
}

TraceRecord trace_record_from_json(const nlohmann::json& j) {
  TraceRecord r;
  try {
    r.id = j.at("id").get<std::string>();
    const auto qt = parse_question_type(j.at("qtype").get<std::string>());
    if (!qt) throw Error(Errc::MalformedRecord, "unknown qtype in trace record '" + r.id + "'");
    r.qtype = *qt;
    r.raw = j.at("raw").get<std::string>();
    if (!j.at("extracted").is_null()) r.extracted = normalized_from_json(j.at("extracted"), r.qtype);
    r.gold = normalized_from_json(j.at("gold"), r.qtype);
    r.correct = j.at("verdict").get<std::string>() == "correct";
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::MalformedRecord, std::string("bad trace record: ") + e.what());
  }
  return r;
}

std::string serialize_trace(std::span<const TraceRecord> trace) {
  std::string out;
  for (const auto& r : trace) {
    out += to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<TraceRecord> parse_trace(std::string_view text) {
  std::vector<TraceRecord> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::MalformedRecord, std::string("trace line is not JSON: ") + e.what());
    }
    out.push_back(trace_record_from_json(j));
  }
  return out;
}

std::vector<EvalPair> pairs_from_trace(std::span<const TraceRecord> trace) {
  std::vector<EvalPair> pairs;
  pairs.reserve(trace.size());
  for (const auto& r : trace) pairs.push_back(EvalPair{r.qtype, r.extracted, r.gold});
  return pairs;
}

std::string render_report_text(const MetricsReport& r) {
  std::string out;
  char line[160];
  out += "evaluation report\n";
  out += "aggregate = unweighted mean of non-empty category accuracies x 100 (repo convention, not a leaderboard S1)\n";
  out += "distance correct iff |pred - gold| / gold <= 0.25; unparseable answers count as wrong\n\n";
  std::snprintf(line, sizeof line, "%-14s %6s %7s %8s %9s %9s\n", "category", "n", "parsed", "correct", "accuracy",
                "rmse");
  out += line;
  for (const auto& [t, c] : r.categories) {
    const std::string rmse = c.rmse ? [&] {
      char b[32];
      std::snprintf(b, sizeof b, "%.4f", *c.rmse);
      return std::string(b);
    }()
                                    : std::string("-");
    std::snprintf(line, sizeof line, "%-14s %6zu %7zu %8zu %9.4f %9s\n", std::string(to_string(t)).c_str(), c.total,
                  c.parsed, c.correct, c.accuracy, rmse.c_str());
    out += line;
  }
  std::snprintf(line, sizeof line, "\ntotal %zu, unparseable %zu\naggregate %.2f\n", r.total, r.unparseable,
                r.aggregate);
  out += line;
  return out;
}

nlohmann::json report_to_json(const MetricsReport& r) {
  nlohmann::json cats = nlohmann::json::object();
  for (const auto& [t, c] : r.categories) {
    cats[std::string(to_string(t))] = {{"n", c.total},
                                       {"parsed", c.parsed},
                                       {"correct", c.correct},
                                       {"accuracy", c.accuracy},
                                       {"rmse", c.rmse ? nlohmann::json(*c.rmse) : nlohmann::json(nullptr)}};
  }
  return {{"categories", cats},
          {"total", r.total},
          {"unparseable", r.unparseable},
          {"aggregate", r.aggregate},
          {"aggregate_formula", "unweighted mean of non-empty category accuracies x 100"}};
}

EvalResult evaluate(const std::vector<ConversationSample>& dataset, const Responder& respond) {
  EvalResult res;
  for (const auto& sample : dataset) {
    if (sample.turns.size() < 2 || sample.turns.back().role != Role::Assistant)
      throw Error(Errc::MalformedRecord, "sample '" + sample.id + "' has no gold assistant answer");
    const std::string& question = sample.turns[sample.turns.size() - 2].text;
    const std::string& gold_text = sample.turns.back().text;
    TraceRecord rec;
    rec.id = sample.id;
    try {
      rec.qtype = classify_question(question);
    } catch (const Error& e) {
      throw Error(e.code(), "sample '" + sample.id + "': " + e.detail());
    }
    auto gold = try_normalize_answer(gold_text, rec.qtype);
    if (!gold)
      throw Error(Errc::MalformedRecord, "sample '" + sample.id + "': gold answer \"" + gold_text +
                                             "\" does not normalize as " + std::string(to_string(rec.qtype)));
    rec.gold = *gold;
    rec.raw = respond(sample);
    rec.extracted = try_normalize_answer(rec.raw, rec.qtype);
    rec.correct = rec.extracted && is_correct(*rec.extracted, rec.gold);
    res.trace.push_back(std::move(rec));
  }
  const auto pairs = pairs_from_trace(res.trace);
  res.report = compute_metrics(pairs);
  return res;
}

EvalResult evaluate_model(const RegionVlm& model, const std::vector<ConversationSample>& dataset, int max_new) {
  return evaluate(dataset, [&](const ConversationSample& s) { return model.answer(s, max_new); });
}

void write_eval_outputs(const EvalResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(Errc::IoError, "cannot write '" + (dir / name).string() + "'");
    f << content;
  };
  write("trace.jsonl", serialize_trace(result.trace));
  write("report.txt", render_report_text(result.report));
  write("report.json", report_to_json(result.report).dump(2) + "\n");
}

std::string regenerate_report_text(const std::filesystem::path& trace_path) {
  std::ifstream f(trace_path, std::ios::binary);
  if (!f) throw Error(Errc::IoError, "cannot open trace '" + trace_path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  const auto trace = parse_trace(ss.str());
  const auto pairs = pairs_from_trace(trace);
  return render_report_text(compute_metrics(pairs));
}

}  // namespace rvlm
