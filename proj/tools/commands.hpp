#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rvlm/curriculum.hpp"
#include "rvlm/errors.hpp"

namespace rvlm::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericFailure = 3 };

ExitCode exit_code_for(Errc code) noexcept;

struct SynthArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out;
  std::optional<long long> n;
  std::optional<std::vector<std::string>> categories;
};

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  /// "N" for every stage or "a,b,c" per stage.
  std::optional<std::string> steps;
  std::optional<int> stage;
};

struct EvalArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path checkpoint;
  std::optional<std::filesystem::path> dataset;
  std::optional<std::filesystem::path> out;
};

struct GenerateArgs {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path checkpoint;
  std::filesystem::path samples;
  std::optional<int> max_new;
};

/// Each command reports progress on `out`, diagnostics on `err`, and returns
/// an exit code instead of throwing.
int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err);
int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err);
int cmd_generate(const GenerateArgs& args, std::ostream& out, std::ostream& err);

/// Parses the --steps override.
std::array<int, 3> parse_steps(const std::string& text);

/// Loss curve as an SVG polyline per stage (log-scale loss axis).
std::string render_loss_svg(const std::vector<TrainReport>& reports);

}  // namespace rvlm::cli
