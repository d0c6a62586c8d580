#include <iostream>

#include <CLI11.hpp>

#include "commands.hpp"

int main(int argc, char** argv) {
  using namespace rvlm::cli;
  CLI::App app{"rvlm: region-aware vision-language model toolkit"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "generate a synthetic warehouse-style dataset");
  s->add_option("--config", synth.config, "run config (JSON)")->check(CLI::ExistingFile);
  s->add_option("--seed", synth.seed, "global seed");
  s->add_option("--out", synth.out, "output dataset (.jsonl)")->required();
  s->add_option("--n", synth.n, "number of samples");
  s->add_option("--categories", synth.categories, "left_right, count, distance, multi_choice")->delimiter(',');

  TrainArgs train;
  auto* t = app.add_subcommand("train", "run the three-stage curriculum");
  t->add_option("--config", train.config, "run config (JSON)")->required()->check(CLI::ExistingFile);
  t->add_option("--seed", train.seed, "global seed");
  t->add_option("--out", train.out, "output directory (overrides output_dir)");
  t->add_option("--steps", train.steps, "steps per stage: N or a,b,c");
  t->add_option("--stage", train.stage, "run a single stage (1-3), resuming from the previous stage checkpoint");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint and write trace + report");
  e->add_option("--config", eval.config, "run config (JSON)")->check(CLI::ExistingFile);
  e->add_option("--seed", eval.seed, "global seed");
  e->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
  e->add_option("--dataset", eval.dataset, "evaluation dataset (overrides eval.dataset)");
  e->add_option("--out", eval.out, "output directory for trace and report");

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "answer every sample in a file");
  g->add_option("--config", gen.config, "run config (JSON)")->check(CLI::ExistingFile);
  g->add_option("--seed", gen.seed, "global seed");
  g->add_option("--checkpoint", gen.checkpoint, "model checkpoint")->required();
  g->add_option("--dataset,--samples", gen.samples, "samples (.jsonl)")->required();
  g->add_option("--max-new", gen.max_new, "maximum generated tokens");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kOk : kUsage;
  }

  if (s->parsed()) return cmd_synth(synth, std::cout, std::cerr);
  if (t->parsed()) return cmd_train(train, std::cout, std::cerr);
  if (e->parsed()) return cmd_eval(eval, std::cout, std::cerr);
  return cmd_generate(gen, std::cout, std::cerr);
}
