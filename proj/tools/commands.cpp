#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "rvlm/checkpoint.hpp"
#include "rvlm/config.hpp"
#include "rvlm/data.hpp"
#include "rvlm/evaluator.hpp"
#include "rvlm/synth.hpp"

namespace rvlm::cli {
namespace fs = std::filesystem;

ExitCode exit_code_for(Errc code) noexcept {
  switch (code) {
    case Errc::InvalidConfig:
    case Errc::UnknownStage:
      return kUsage;
    case Errc::NonFiniteLoss:
    case Errc::NonFiniteInput:
      return kNumericFailure;
    default:
      return kDataError;
  }
}

namespace {

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  }
}

RunConfig config_or_default(const std::optional<fs::path>& path) {
  RunConfig cfg = path ? load_run_config(*path) : RunConfig{};
  validate(cfg);
  return cfg;
}

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(Errc::IoError, "cannot write '" + path.string() + "'");
  f << content;
  if (!f) throw Error(Errc::IoError, "short write to '" + path.string() + "'");
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::vector<ConversationSample> load_stage_dataset(int stage, const std::string& path) {
  if (path.empty())
    throw Error(Errc::InvalidConfig, "stage " + std::to_string(stage) + ": no dataset path configured");
  try {
    return load_dataset(path);
  } catch (const Error& e) {
    throw Error(e.code(), "stage " + std::to_string(stage) + " dataset '" + path + "': " + e.detail());
  }
}

nlohmann::json report_json(const TrainReport& r) {
  nlohmann::json before = nlohmann::json::object(), after = nlohmann::json::object();
  for (const auto& [g, h] : r.fingerprints_before) before[g] = hex(h);
  for (const auto& [g, h] : r.fingerprints_after) after[g] = hex(h);
  const StagePlan& p = r.plan;
  return {{"stage", r.stage_id},
          {"plan",
           {{"trainable", p.trainable},
            {"base_lr", p.base_lr},
            {"steps", p.steps},
            {"batch_size", p.batch_size},
            {"grad_accum", p.grad_accum},
            {"warmup_frac", p.warmup_frac},
            {"weight_decay", p.weight_decay},
            {"budget", "desk-scale step and batch counts"}}},
          {"losses", r.losses},
          {"lrs", r.lrs},
          {"fingerprints_before", before},
          {"fingerprints_after", after},
          {"wall_seconds", r.wall_seconds},
          {"checkpoint", r.checkpoint}};
}

std::string loss_csv(const std::vector<TrainReport>& reports) {
  std::string out = "stage,step,loss,lr\n";
  char line[96];
  for (const auto& r : reports)
    for (std::size_t i = 0; i < r.losses.size(); ++i) {
      std::snprintf(line, sizeof line, "%d,%zu,%.17g,%.17g\n", r.stage_id, i + 1, r.losses[i], r.lrs[i]);
      out += line;
    }
  return out;
}

}  // namespace

std::array<int, 3> parse_steps(const std::string& text) {
  std::vector<int> values;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, ',')) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != part.size() || v < 1)
      throw Error(Errc::InvalidConfig, "--steps expects N or a,b,c with positive integers, got '" + text + "'");
    values.push_back(v);
  }
  if (values.size() == 1) return {values[0], values[0], values[0]};
  if (values.size() == 3) return {values[0], values[1], values[2]};
  throw Error(Errc::InvalidConfig, "--steps expects N or a,b,c with positive integers, got '" + text + "'");
}

std::string render_loss_svg(const std::vector<TrainReport>& reports) {
  const double width = 640, height = 360, pad = 40;
  std::size_t total = 0;
  double lo = 1e300, hi = -1e300;
  for (const auto& r : reports) {
    total += r.losses.size();
    for (double l : r.losses) {
      if (!(l > 0.0) || !std::isfinite(l)) continue;
      lo = std::min(lo, std::log10(l));
      hi = std::max(hi, std::log10(l));
    }
  }
  if (total == 0 || lo > hi) throw std::runtime_error("no finite positive losses to plot");
  if (hi - lo < 1e-9) hi = lo + 1.0;
  const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c"};
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<line x1=\"" << pad << "\" y1=\"" << height - pad << "\" x2=\"" << width - pad << "\" y2=\""
      << height - pad << "\" stroke=\"black\"/>\n";
  svg << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << height - pad
      << "\" stroke=\"black\"/>\n";
  std::size_t offset = 0;
  for (std::size_t k = 0; k < reports.size(); ++k) {
    svg << "<polyline fill=\"none\" stroke=\"" << colors[k % 3] << "\" points=\"";
    for (std::size_t i = 0; i < reports[k].losses.size(); ++i) {
      const double l = reports[k].losses[i];
      if (!(l > 0.0) || !std::isfinite(l)) continue;
      const double x = pad + (width - 2 * pad) * static_cast<double>(offset + i) / std::max<std::size_t>(total - 1, 1);
      const double y = height - pad - (height - 2 * pad) * (std::log10(l) - lo) / (hi - lo);
      svg << x << ',' << y << ' ';
    }
    svg << "\"/>\n";
    svg << "<text x=\"" << width - pad - 80 << "\" y=\"" << pad + 16 * k << "\" fill=\"" << colors[k % 3]
        << "\" font-size=\"12\">stage " << reports[k].stage_id << "</text>\n";
    offset += reports[k].losses.size();
  }
  svg << "<text x=\"" << pad << "\" y=\"" << pad - 10 << "\" font-size=\"12\">log10 loss: " << lo << " .. " << hi
      << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

int cmd_synth(const SynthArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(args.config);
    if (args.seed) apply_seed(cfg, *args.seed);
    std::size_t n = cfg.synth.n_samples;
    if (args.n) {
      if (*args.n < 1) {
        err << "error: --n must be >= 1\n";
        return static_cast<int>(kUsage);
      }
      n = static_cast<std::size_t>(*args.n);
    }
    std::set<QuestionType> cats = cfg.synth.categories;
    if (args.categories) {
      cats.clear();
      for (const auto& name : *args.categories) {
        auto t = parse_question_type(name);
        if (!t) {
          err << "error: unknown category '" << name << "' (expected left_right, count, distance, multi_choice)\n";
          return static_cast<int>(kUsage);
        }
        cats.insert(*t);
      }
    }
    const auto data = generate_toy_dataset(cfg.seed, n, cats, cfg.synth.scene);
    write_text(args.out, serialize_dataset(data));
    std::map<QuestionType, std::size_t> counts;
    for (const auto& s : data) ++counts[*s.category];
    out << "wrote " << data.size() << " samples to " << args.out.string() << "\n";
    for (const auto& [t, c] : counts) out << "  " << to_string(t) << ": " << c << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = load_run_config(args.config);
    if (args.seed) apply_seed(cfg, *args.seed);
    if (args.out) cfg.output_dir = args.out->string();
    if (args.steps) {
      const auto steps = parse_steps(*args.steps);
      for (int k = 0; k < 3; ++k) cfg.stages[k].steps = steps[k];
    }
    validate(cfg);
    if (args.stage && (*args.stage < 1 || *args.stage > 3))
      throw Error(Errc::UnknownStage, "--stage must be 1, 2 or 3, got " + std::to_string(*args.stage));

    const int first = args.stage ? *args.stage : 1;
    const int last = args.stage ? *args.stage : 3;
    std::array<std::vector<ConversationSample>, 3> datasets;
    for (int k = first; k <= last; ++k) datasets[k - 1] = load_stage_dataset(k, cfg.stage_datasets[k - 1]);

    const fs::path dir = cfg.output_dir;
    fs::create_directories(dir);
    RegionVlm model(cfg.model);
    out << "model: " << model.params().count_values() << " parameters, output " << dir.string() << "\n";

    StepCallback on_step = [&](int stage, int step, double loss, double lr) {
      const int total = cfg.stages[stage - 1].steps;
      if (step == 1 || step == total || step % std::max(1, total / 10) == 0) {
        char line[128];
        std::snprintf(line, sizeof line, "stage %d step %d/%d loss %.5f lr %.3e\n", stage, step, total, loss, lr);
        out << line << std::flush;
      }
    };

    std::vector<TrainReport> reports;
    if (!args.stage) {
      CurriculumOptions opts;
      opts.output_dir = dir.string();
      opts.on_step = on_step;
      reports = run_curriculum(cfg.stages, datasets, model, opts);
    } else {
      const int k = *args.stage;
      if (k > 1) {
        const fs::path prev = dir / ("stage" + std::to_string(k - 1) + ".ckpt");
        if (!fs::exists(prev))
          throw Error(Errc::IoError, "stage " + std::to_string(k) + " resumes from '" + prev.string() +
                                         "', which does not exist; run stage " + std::to_string(k - 1) + " first");
        restore_checkpoint(model, prev);
      }
      TrainReport r = train_stage(cfg.stages[k - 1], model, prepare_all(model, datasets[k - 1]), on_step);
      const fs::path path = dir / ("stage" + std::to_string(k) + ".ckpt");
      save_checkpoint(model, path, {{"stage", k}, {"steps", cfg.stages[k - 1].steps}});
      r.checkpoint = path.string();
      reports.push_back(std::move(r));
    }
    if (last == 3) fs::copy_file(dir / "stage3.ckpt", dir / "final.ckpt", fs::copy_options::overwrite_existing);

    nlohmann::json rep = nlohmann::json::array();
    for (const auto& r : reports) rep.push_back(report_json(r));
    write_text(dir / "train_report.json", rep.dump(2) + "\n");
    write_text(dir / "loss_curve.csv", loss_csv(reports));
    try {
      write_text(dir / "loss_curve.svg", render_loss_svg(reports));
    } catch (const std::exception& e) {
      err << "warning: loss plot skipped: " << e.what() << "\n";
    }
    for (const auto& r : reports) {
      char line[160];
      std::snprintf(line, sizeof line, "stage %d done: %zu steps, final loss %.5f, %.1f s -> %s\n", r.stage_id,
                    r.losses.size(), r.losses.empty() ? 0.0 : r.losses.back(), r.wall_seconds,
                    r.checkpoint.c_str());
      out << line;
    }
    return static_cast<int>(kOk);
  });
}

int cmd_eval(const EvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(args.config);
    if (args.seed) apply_seed(cfg, *args.seed);
    const std::string dataset = args.dataset ? args.dataset->string() : cfg.eval.dataset;
    if (dataset.empty()) throw Error(Errc::InvalidConfig, "no evaluation dataset (use --dataset or eval.dataset)");
    const auto model = load_checkpoint(args.checkpoint);
    const auto data = load_dataset(dataset);
    const auto result = evaluate_model(*model, data, cfg.eval.max_new);
    const fs::path dir = args.out ? *args.out : fs::path(cfg.output_dir) / "eval";
    write_eval_outputs(result, dir);
    out << render_report_text(result.report);
    out << "trace and report written to " << dir.string() << "\n";
    return static_cast<int>(kOk);
  });
}

int cmd_generate(const GenerateArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    RunConfig cfg = config_or_default(args.config);
    if (args.seed) apply_seed(cfg, *args.seed);
    const int max_new = args.max_new ? *args.max_new : cfg.eval.max_new;
    if (max_new < 1) throw Error(Errc::InvalidConfig, "--max-new must be >= 1");
    const auto model = load_checkpoint(args.checkpoint);
    const auto samples = load_dataset(args.samples);
    for (const auto& s : samples) {
      std::string raw;
      try {
        raw = model->answer(s, max_new);
      } catch (const Error& e) {
        throw Error(e.code(), "sample '" + s.id + "': " + e.detail());
      }
      out << "[" << s.id << "] raw: " << raw << "\n";
      std::string question;
      for (const auto& t : s.turns)
        if (t.role == Role::User) question = t.text;
      std::string extracted;
      try {
        const QuestionType qt = classify_question(question);
        const auto v = try_normalize_answer(raw, qt);
        extracted = std::string(to_string(qt)) + " " + (v ? to_string(*v) : std::string("<extraction failed>"));
      } catch (const Error& e) {
        if (e.code() != Errc::UnclassifiableQuestion) throw;
        extracted = "<unclassifiable question>";
      }
      out << "[" << s.id << "] extracted: " << extracted << "\n";
    }
    return static_cast<int>(kOk);
  });
}

}  // namespace rvlm::cli
