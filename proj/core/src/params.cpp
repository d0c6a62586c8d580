#include "rvlm/params.hpp"

#include <stdexcept>

namespace rvlm {

const std::vector<std::string>& groups::all() {
  static const std::vector<std::string> kAll = {
      std::string(kVisionEncoder), std::string(kRgbConnector), std::string(kDepthConnector),
      std::string(kRgbRefiner),    std::string(kDepthRefiner), std::string(kLanguageModel)};
  return kAll;
}

ParamStore::ParamStore(const ParamStore& other) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(std::make_unique<Parameter>(*p));
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
  if (this != &other) {
    ParamStore copy(other);
    params_ = std::move(copy.params_);
  }
  return *this;
}

Parameter& ParamStore::add(std::string name, std::string group, int rows, int cols) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  auto p = std::make_unique<Parameter>();
  p->name = std::move(name);
  p->group = std::move(group);
  p->value = Mat(rows, cols);
  p->grad = Mat(rows, cols);
  params_.push_back(std::move(p));
  return *params_.back();
}

Parameter* ParamStore::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

const Parameter* ParamStore::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::vector<Parameter*> ParamStore::in_group(std::string_view group) {
  std::vector<Parameter*> out;
  for (auto& p : params_)
    if (p->group == group) out.push_back(p.get());
  return out;
}

std::size_t ParamStore::count_values(std::string_view group) const {
  std::size_t n = 0;
  for (const auto& p : params_)
    if (group.empty() || p->group == group) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->grad.fill(0.0);
}

std::uint64_t ParamStore::group_fingerprint(std::string_view group) const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& p : params_)
    if (p->group == group) h = fingerprint(p->value.flat(), h);
  return h;
}

std::map<std::string, std::uint64_t> ParamStore::fingerprints() const {
  std::map<std::string, std::uint64_t> out;
  for (const auto& g : groups::all()) out[g] = group_fingerprint(g);
  return out;
}

void init_normal(Mat& m, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : m.flat()) v = dist(rng);
}

}  // namespace rvlm
