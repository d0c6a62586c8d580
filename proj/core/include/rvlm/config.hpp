#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "rvlm/curriculum.hpp"
#include "rvlm/model.hpp"
#include "rvlm/question_type.hpp"
#include "rvlm/synth.hpp"

namespace rvlm {

inline constexpr int kConfigSchemaVersion = 1;

struct SynthOptions {
  std::size_t n_samples = 64;
  std::set<QuestionType> categories{kAllQuestionTypes.begin(), kAllQuestionTypes.end()};
  SynthConfig scene;
};

struct EvalOptions {
  std::string dataset;
  int max_new = 32;
};

/// Everything a run needs. Stage trainable sets are not configurable; they
/// follow from stage_id.
struct RunConfig {
  int schema_version = kConfigSchemaVersion;
  std::uint64_t seed = 1;
  ModelConfig model;
  std::array<StagePlan, 3> stages{default_stage_plan(1), default_stage_plan(2), default_stage_plan(3)};
  std::array<std::string, 3> stage_datasets;
  EvalOptions eval;
  SynthOptions synth;
  std::string output_dir = "runs/default";
};

/// Throws InvalidConfig on the first inconsistency, before anything is allocated.
void validate(const RunConfig& cfg);

/// Pushes the global seed into the model, LM and per-stage shuffling seeds.
void apply_seed(RunConfig& cfg, std::uint64_t seed);

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& cfg);
/// Relative dataset and output paths are resolved against `base_dir`.
/// Unknown keys are rejected. The result is validated.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
/// Reads, parses and validates; IoError when unreadable, InvalidConfig otherwise.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace rvlm
