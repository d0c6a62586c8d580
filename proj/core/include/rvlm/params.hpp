#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "rvlm/tensor.hpp"

namespace rvlm {

namespace groups {
inline constexpr std::string_view kVisionEncoder = "vision_encoder";
inline constexpr std::string_view kRgbConnector = "rgb_connector";
inline constexpr std::string_view kDepthConnector = "depth_connector";
inline constexpr std::string_view kRgbRefiner = "rgb_refiner";
inline constexpr std::string_view kDepthRefiner = "depth_refiner";
inline constexpr std::string_view kLanguageModel = "lm";

/// Every group in registration order.
const std::vector<std::string>& all();
}  // namespace groups

using GroupSet = std::set<std::string, std::less<>>;

struct Parameter {
  std::string name;
  std::string group;
  Mat value;
  Mat grad;
};

/// Owns every parameter of a model in a fixed registration order. That order
/// is the checkpoint order and the optimizer-state order.
class ParamStore {
 public:
  ParamStore() = default;
  ParamStore(const ParamStore& other);
  ParamStore& operator=(const ParamStore& other);
  ParamStore(ParamStore&&) noexcept = default;
  ParamStore& operator=(ParamStore&&) noexcept = default;

  Parameter& add(std::string name, std::string group, int rows, int cols);

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& at(std::size_t i) { return *params_[i]; }
  const Parameter& at(std::size_t i) const { return *params_[i]; }
  Parameter* find(std::string_view name);
  const Parameter* find(std::string_view name) const;

  std::vector<Parameter*> in_group(std::string_view group);
  std::size_t count_values(std::string_view group = {}) const;

  void zero_grad();

  /// FNV-1a over the group's parameter values, in registration order.
  std::uint64_t group_fingerprint(std::string_view group) const;
  std::map<std::string, std::uint64_t> fingerprints() const;

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

/// Fills `m` with N(0, stddev^2) draws.
void init_normal(Mat& m, double stddev, std::mt19937_64& rng);

}  // namespace rvlm
