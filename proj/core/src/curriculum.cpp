#include "rvlm/curriculum.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "rvlm/checkpoint.hpp"
#include "rvlm/errors.hpp"

namespace rvlm {

GroupSet stage_trainable(int stage_id) {
  switch (stage_id) {
    case 1:
      return {std::string(groups::kRgbConnector)};
    case 2:
      return {std::string(groups::kDepthConnector), std::string(groups::kRgbRefiner),
              std::string(groups::kDepthRefiner)};
    case 3: {
      GroupSet all;
      for (const auto& g : groups::all())
        if (g != groups::kVisionEncoder) all.insert(g);
      return all;
    }
    default:
      throw Error(Errc::UnknownStage, "stage " + std::to_string(stage_id) + " is not one of 1, 2, 3");
  }
}

StagePlan default_stage_plan(int stage_id) {
  StagePlan p;
  p.stage_id = stage_id;
  p.trainable = stage_trainable(stage_id);
  p.base_lr = stage_id == 3 ? 5e-5 : 1e-4;
  p.weight_decay = 0.01;
  p.warmup_frac = 0.03;
  p.steps = stage_id == 3 ? 200 : 100;
  p.batch_size = 8;
  p.grad_accum = 1;
  p.seed = static_cast<std::uint64_t>(stage_id);
  return p;
}

void validate(const StagePlan& p) {
  const std::string where = "stage " + std::to_string(p.stage_id) + ": ";
  auto fail = [&](const std::string& what) { throw Error(Errc::InvalidConfig, where + what); };
  if (p.trainable != stage_trainable(p.stage_id)) fail("trainable groups differ from the stage definition");
  if (!(p.base_lr >= 0.0) || !std::isfinite(p.base_lr)) fail("base_lr must be finite and >= 0");
  if (p.steps < 1) fail("steps must be >= 1");
  if (p.batch_size < 1) fail("batch_size must be >= 1");
  if (p.grad_accum < 1) fail("grad_accum must be >= 1");
  if (!(p.warmup_frac >= 0.0 && p.warmup_frac <= 1.0)) fail("warmup_frac must lie in [0, 1]");
  if (!(p.weight_decay >= 0.0) || !std::isfinite(p.weight_decay)) fail("weight_decay must be finite and >= 0");
  if (!(p.beta1 >= 0.0 && p.beta1 < 1.0) || !(p.beta2 >= 0.0 && p.beta2 < 1.0)) fail("betas must lie in [0, 1)");
  if (!(p.eps > 0.0)) fail("eps must be > 0");
}

double lr_at(int step, int total, double base_lr, double warmup_frac) {
  const int warm = static_cast<int>(std::ceil(warmup_frac * total));
  if (step >= total) return 0.0;
  if (step < warm) return base_lr * step / warm;
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * (step - warm) / (total - warm)));
}

AdamW::AdamW(std::vector<Parameter*> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), wd_(weight_decay) {
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.rows(), p->value.cols());
    v_.emplace_back(p->value.rows(), p->value.cols());
  }
}

void AdamW::step(double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  const double decay = 1.0 - lr * wd_;
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto theta = params_[k]->value.flat();
    auto grad = params_[k]->grad.flat();
    auto m = m_[k].flat();
    auto v = v_[k].flat();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * grad[i];
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * grad[i] * grad[i];
      theta[i] *= decay;
      theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
  }
}

std::vector<PreparedSample> prepare_all(const RegionVlm& model, const std::vector<ConversationSample>& samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(model.prepare(s));
  return out;
}

namespace {

std::size_t supervised_positions(const PreparedSample& s) {
  // Position i supervises token i+1, so every assistant token except a
  // leading one contributes; the chat template never starts with one.
  return static_cast<std::size_t>(std::count(s.tokens.assistant.begin(), s.tokens.assistant.end(), 1));
}

/// Endless stream of sample indices, reshuffled at every epoch boundary.
class SampleOrder {
 public:
  SampleOrder(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) { reshuffle(); }
  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::shuffle(order_.begin(), order_.end(), rng_);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace

TrainReport train_stage(const StagePlan& plan, RegionVlm& model, const std::vector<PreparedSample>& dataset,
                        const StepCallback& on_step) {
  validate(plan);
  if (dataset.empty())
    throw Error(Errc::EmptyDataset, "stage " + std::to_string(plan.stage_id) + " has no training samples");
  for (const auto& s : dataset)
    if (supervised_positions(s) == 0)
      throw Error(Errc::EmptyLossMask, "sample '" + s.id + "' has no assistant tokens to supervise");

  const auto t0 = std::chrono::steady_clock::now();
  ParamStore& params = model.params();
  TrainReport report;
  report.stage_id = plan.stage_id;
  report.plan = plan;
  report.fingerprints_before = params.fingerprints();

  std::vector<Parameter*> trainable;
  for (std::size_t i = 0; i < params.size(); ++i)
    if (plan.trainable.contains(params.at(i).group)) trainable.push_back(&params.at(i));
  AdamW opt(trainable, plan.beta1, plan.beta2, plan.eps, plan.weight_decay);
  SampleOrder order(dataset.size(), plan.seed);

  for (int step = 1; step <= plan.steps; ++step) {
    params.zero_grad();
    double loss_sum = 0.0;
    std::size_t count = 0;
    for (int micro = 0; micro < plan.grad_accum; ++micro) {
      for (int b = 0; b < plan.batch_size; ++b) {
        const PreparedSample& s = dataset[order.next()];
        Graph g(plan.trainable);
        auto fwd = model.forward(g, s);
        Var ce = masked_cross_entropy_sum(fwd.logits, fwd.layout);
        loss_sum += ce.value()(0, 0);
        count += static_cast<std::size_t>(std::count(fwd.layout.loss_mask.begin(), fwd.layout.loss_mask.end(), 1));
        g.backward(ce);
      }
    }
    const double loss = loss_sum / static_cast<double>(count);
    bool finite = std::isfinite(loss);
    const double inv = 1.0 / static_cast<double>(count);
    for (Parameter* p : trainable) {
      for (double& gv : p->grad.flat()) {
        gv *= inv;
        finite = finite && std::isfinite(gv);
      }
    }
    if (!finite) {
      throw Error(Errc::NonFiniteLoss, "stage " + std::to_string(plan.stage_id) + " step " + std::to_string(step) +
                                           ": loss or gradient is not finite (loss=" + std::to_string(loss) + ")");
    }
    const double lr = lr_at(step, plan.steps, plan.base_lr, plan.warmup_frac);
    opt.step(lr);
    report.losses.push_back(loss);
    report.lrs.push_back(lr);
    if (on_step) on_step(plan.stage_id, step, loss, lr);
  }
  params.zero_grad();

  report.fingerprints_after = params.fingerprints();
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

std::vector<TrainReport> run_curriculum(const std::array<StagePlan, 3>& plans,
                                        const std::array<std::vector<ConversationSample>, 3>& datasets,
                                        RegionVlm& model, const CurriculumOptions& options) {
  for (int k = 0; k < 3; ++k) {
    if (plans[k].stage_id != k + 1)
      throw Error(Errc::InvalidConfig, "curriculum plans must be ordered 1, 2, 3");
    validate(plans[k]);
  }
  std::vector<TrainReport> reports;
  std::optional<std::filesystem::path> previous;
  for (int k = 0; k < 3; ++k) {
    if (previous) restore_checkpoint(model, *previous);
    const auto prepared = prepare_all(model, datasets[k]);
    TrainReport r = train_stage(plans[k], model, prepared, options.on_step);
    if (options.output_dir) {
      std::filesystem::create_directories(*options.output_dir);
      const auto path = std::filesystem::path(*options.output_dir) / ("stage" + std::to_string(k + 1) + ".ckpt");
      save_checkpoint(model, path, {{"stage", k + 1}, {"steps", plans[k].steps}});
      r.checkpoint = path.string();
      previous = path;
    }
    reports.push_back(std::move(r));
  }
  return reports;
}

}  // namespace rvlm
