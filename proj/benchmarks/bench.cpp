#include <random>

#include <benchmark/benchmark.h>

#include "rvlm/connector.hpp"
#include "rvlm/curriculum.hpp"
#include "rvlm/lm.hpp"
#include "rvlm/model.hpp"
#include "rvlm/synth.hpp"

namespace rvlm {
namespace {

Mat random_mat(int rows, int cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (double& v : m.flat()) v = n(rng);
  return m;
}

// Reference shapes: 32x32 images, patch 4, encoder dim 32, lm_dim 64.
ModelConfig reference_model() {
  ModelConfig cfg;
  cfg.image_height = 32;
  cfg.image_width = 32;
  cfg.encoder = EncoderConfig{4, 32, 7};
  cfg.shuffle_factor = 2;
  cfg.refiner_layers = 2;
  cfg.refiner_hidden = 32;
  cfg.lm.lm_dim = 64;
  cfg.lm.n_layers = 2;
  cfg.lm.n_heads = 4;
  cfg.lm.max_seq = 192;
  return cfg;
}

void BM_PixelShuffle(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const FeatureGrid g{Modality::Rgb, side, side, random_mat(side * side, 32, 1)};
  for (auto _ : state) benchmark::DoNotOptimize(pixel_shuffle(g, 2));
  state.SetItemsProcessed(state.iterations() * side * side * 32);
}
BENCHMARK(BM_PixelShuffle)->Arg(8)->Arg(32);

void BM_RefineAndPool(benchmark::State& state) {
  RegionVlm model(reference_model());
  const auto sample = generate_toy_dataset(1, 1, {QuestionType::Distance}, SynthConfig{}).front();
  const auto p = model.prepare(sample);
  for (auto _ : state) benchmark::DoNotOptimize(model.embed(p));
}
BENCHMARK(BM_RefineAndPool)->Unit(benchmark::kMillisecond);

void BM_LmForward(benchmark::State& state) {
  ParamStore ps;
  LanguageModel lm(reference_model().lm, ps);
  const int len = static_cast<int>(state.range(0));
  const Mat emb = random_mat(len, 64, 2);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(lm.forward(g, g.constant(emb)).value());
  }
  state.SetItemsProcessed(state.iterations() * len);
}
BENCHMARK(BM_LmForward)->Arg(32)->Arg(96)->Arg(192)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  RegionVlm model(reference_model());
  const auto data = prepare_all(model, generate_toy_dataset(3, 8, {kAllQuestionTypes.begin(), kAllQuestionTypes.end()}, SynthConfig{}));
  StagePlan plan = default_stage_plan(3);
  plan.steps = 1;
  plan.batch_size = 8;
  for (auto _ : state) benchmark::DoNotOptimize(train_stage(plan, model, data).losses);
}
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace rvlm

BENCHMARK_MAIN();
