#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rvlm/data.hpp"
#include "rvlm/model.hpp"
#include "rvlm/params.hpp"

namespace rvlm {

struct StagePlan {
  int stage_id = 1;
  GroupSet trainable;
  double base_lr = 1e-4;
  int steps = 100;
  int batch_size = 8;
  int grad_accum = 1;
  double warmup_frac = 0.03;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;  ///< sample-order shuffling
};

/// Groups unfrozen at each stage. Throws UnknownStage outside {1, 2, 3}.
GroupSet stage_trainable(int stage_id);

/// Learning rates 1e-4 / 1e-4 / 5e-5, weight decay 0.01, 3% warmup. Step and
/// batch counts are small desk-scale defaults.
StagePlan default_stage_plan(int stage_id);

/// Throws InvalidConfig (or UnknownStage) when the plan cannot run.
void validate(const StagePlan& plan);

/// Linear warmup over ceil(warmup_frac * total) steps, then cosine decay to 0.
/// Optimizer update k (1-based) of a stage uses lr_at(k, total, ...).
double lr_at(int step, int total, double base_lr, double warmup_frac);

/// AdamW with decoupled weight decay:
///   theta *= 1 - lr*wd;  theta -= lr * m_hat / (sqrt(v_hat) + eps)
/// State is kept only for the parameters handed to the constructor.
class AdamW {
 public:
  AdamW(std::vector<Parameter*> params, double beta1, double beta2, double eps, double weight_decay);
  void step(double lr);
  int steps_taken() const noexcept { return t_; }

 private:
  std::vector<Parameter*> params_;
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  double beta1_, beta2_, eps_, wd_;
  int t_ = 0;
};

struct TrainReport {
  int stage_id = 0;
  StagePlan plan;
  std::vector<double> losses;  ///< mean masked cross-entropy per update
  std::vector<double> lrs;
  std::map<std::string, std::uint64_t> fingerprints_before;
  std::map<std::string, std::uint64_t> fingerprints_after;
  double wall_seconds = 0.0;
  std::string checkpoint;  ///< empty when nothing was written
};

/// Called after every update with (step, loss, lr); step is 1-based.
using StepCallback = std::function<void(int stage, int step, double loss, double lr)>;

/// One stage of training. Samples are visited in a per-epoch shuffled order
/// drawn from plan.seed; each update consumes batch_size * grad_accum samples.
/// The loss is summed over every micro-batch and divided by the total number
/// of supervised positions before the update.
///
/// Throws EmptyDataset, EmptyLossMask when a sample supervises nothing, and
/// NonFiniteLoss naming the failing step.
TrainReport train_stage(const StagePlan& plan, RegionVlm& model, const std::vector<PreparedSample>& dataset,
                        const StepCallback& on_step = {});

/// Prepares every sample for training (encoder features, tokens).
std::vector<PreparedSample> prepare_all(const RegionVlm& model, const std::vector<ConversationSample>& samples);

struct CurriculumOptions {
  /// When set, stage k writes <output_dir>/stage<k>.ckpt and the next stage
  /// resumes by reloading it.
  std::optional<std::string> output_dir;
  StepCallback on_step;
};

/// Runs the plans in order with a fresh optimizer per stage. Plans must be
/// ordered 1, 2, 3.
std::vector<TrainReport> run_curriculum(const std::array<StagePlan, 3>& plans,
                                        const std::array<std::vector<ConversationSample>, 3>& datasets,
                                        RegionVlm& model, const CurriculumOptions& options = {});

}  // namespace rvlm
