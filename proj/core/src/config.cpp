#include "rvlm/config.hpp"

#include <fstream>
#include <initializer_list>

#include "rvlm/errors.hpp"

namespace rvlm {
namespace {

using nlohmann::json;

[[noreturn]] void invalid(const std::string& what) { throw Error(Errc::InvalidConfig, what); }

/// Rejects keys outside `allowed` so typos never fall back to defaults.
const json& object(const json& j, const std::string& ctx, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) invalid(ctx + " must be an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (auto a : allowed) known = known || key == a;
    if (!known) invalid("unknown key '" + ctx + "." + key + "'");
  }
  return j;
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& ctx) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    invalid("'" + ctx + "." + key + "' has the wrong type");
  }
}

EncoderConfig encoder_from_json(const json& j) {
  object(j, "model.encoder", {"patch", "dim", "seed"});
  EncoderConfig c;
  read(j, "patch", c.patch, "model.encoder");
  read(j, "dim", c.dim, "model.encoder");
  read(j, "seed", c.seed, "model.encoder");
  return c;
}

LmConfig lm_from_json(const json& j) {
  const std::string ctx = "model.lm";
  object(j, ctx, {"lm_dim", "n_layers", "n_heads", "ffn_mult", "vocab_size", "max_seq", "seed", "tie_embeddings"});
  LmConfig c;
  read(j, "lm_dim", c.lm_dim, ctx);
  read(j, "n_layers", c.n_layers, ctx);
  read(j, "n_heads", c.n_heads, ctx);
  read(j, "ffn_mult", c.ffn_mult, ctx);
  read(j, "vocab_size", c.vocab_size, ctx);
  read(j, "max_seq", c.max_seq, ctx);
  read(j, "seed", c.seed, ctx);
  read(j, "tie_embeddings", c.tie_embeddings, ctx);
  return c;
}

json to_json(const StagePlan& p, const std::string& dataset) {
  return {{"stage_id", p.stage_id},     {"base_lr", p.base_lr},     {"steps", p.steps},
          {"batch_size", p.batch_size}, {"grad_accum", p.grad_accum}, {"warmup_frac", p.warmup_frac},
          {"weight_decay", p.weight_decay}, {"beta1", p.beta1},     {"beta2", p.beta2},
          {"eps", p.eps},               {"dataset", dataset}};
}

std::string resolve(const std::string& path, const std::filesystem::path& base) {
  if (path.empty() || base.empty() || std::filesystem::path(path).is_absolute()) return path;
  return (base / path).lexically_normal().string();
}

}  // namespace

json to_json(const ModelConfig& c) {
  return {{"image_height", c.image_height},
          {"image_width", c.image_width},
          {"encoder", {{"patch", c.encoder.patch}, {"dim", c.encoder.dim}, {"seed", c.encoder.seed}}},
          {"shuffle_factor", c.shuffle_factor},
          {"refiner_layers", c.refiner_layers},
          {"refiner_hidden", c.refiner_hidden},
          {"lm",
           {{"lm_dim", c.lm.lm_dim},
            {"n_layers", c.lm.n_layers},
            {"n_heads", c.lm.n_heads},
            {"ffn_mult", c.lm.ffn_mult},
            {"vocab_size", c.lm.vocab_size},
            {"max_seq", c.lm.max_seq},
            {"seed", c.lm.seed},
            {"tie_embeddings", c.lm.tie_embeddings}}},
          {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string ctx = "model";
  object(j, ctx,
         {"image_height", "image_width", "encoder", "shuffle_factor", "refiner_layers", "refiner_hidden", "lm",
          "seed"});
  ModelConfig c;
  read(j, "image_height", c.image_height, ctx);
  read(j, "image_width", c.image_width, ctx);
  if (j.contains("encoder")) c.encoder = encoder_from_json(j.at("encoder"));
  read(j, "shuffle_factor", c.shuffle_factor, ctx);
  read(j, "refiner_layers", c.refiner_layers, ctx);
  read(j, "refiner_hidden", c.refiner_hidden, ctx);
  if (j.contains("lm")) c.lm = lm_from_json(j.at("lm"));
  read(j, "seed", c.seed, ctx);
  validate(c);
  return c;
}

json to_json(const RunConfig& c) {
  json stages = json::array();
  for (int k = 0; k < 3; ++k) stages.push_back(to_json(c.stages[k], c.stage_datasets[k]));
  json categories = json::array();
  for (auto t : c.synth.categories) categories.push_back(std::string(to_string(t)));
  const SynthConfig& s = c.synth.scene;
  return {{"schema_version", c.schema_version},
          {"seed", c.seed},
          {"model", to_json(c.model)},
          {"stages", stages},
          {"eval", {{"dataset", c.eval.dataset}, {"max_new", c.eval.max_new}}},
          {"synth",
           {{"n_samples", c.synth.n_samples},
            {"categories", categories},
            {"scene",
             {{"canvas_height", s.canvas_height},
              {"canvas_width", s.canvas_width},
              {"min_objects", s.min_objects},
              {"max_objects", s.max_objects},
              {"min_size", s.min_size},
              {"max_size", s.max_size},
              {"pixels_per_meter", s.pixels_per_meter},
              {"background_depth", s.background_depth},
              {"min_depth_offset", s.min_depth_offset},
              {"max_depth_offset", s.max_depth_offset},
              {"min_lr_separation", s.min_lr_separation}}}}},
          {"output_dir", c.output_dir}};
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  object(j, "config", {"schema_version", "seed", "model", "stages", "eval", "synth", "output_dir"});
  RunConfig c;
  if (!j.contains("schema_version")) invalid("config is missing 'schema_version'");
  read(j, "schema_version", c.schema_version, "config");
  if (c.schema_version != kConfigSchemaVersion)
    invalid("unsupported schema_version " + std::to_string(c.schema_version));
  read(j, "seed", c.seed, "config");
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));

  if (j.contains("stages")) {
    const json& st = j.at("stages");
    if (!st.is_array() || st.size() != 3) invalid("'stages' must list exactly three stages");
    for (int k = 0; k < 3; ++k) {
      const std::string ctx = "stages[" + std::to_string(k) + "]";
      object(st[k], ctx,
             {"stage_id", "base_lr", "steps", "batch_size", "grad_accum", "warmup_frac", "weight_decay", "beta1",
              "beta2", "eps", "dataset"});
      int id = k + 1;
      read(st[k], "stage_id", id, ctx);
      if (id != k + 1) invalid(ctx + ".stage_id must be " + std::to_string(k + 1));
      StagePlan p = default_stage_plan(id);
      read(st[k], "base_lr", p.base_lr, ctx);
      read(st[k], "steps", p.steps, ctx);
      read(st[k], "batch_size", p.batch_size, ctx);
      read(st[k], "grad_accum", p.grad_accum, ctx);
      read(st[k], "warmup_frac", p.warmup_frac, ctx);
      read(st[k], "weight_decay", p.weight_decay, ctx);
      read(st[k], "beta1", p.beta1, ctx);
      read(st[k], "beta2", p.beta2, ctx);
      read(st[k], "eps", p.eps, ctx);
      c.stages[k] = p;
      read(st[k], "dataset", c.stage_datasets[k], ctx);
      c.stage_datasets[k] = resolve(c.stage_datasets[k], base_dir);
    }
  }
  if (j.contains("eval")) {
    object(j.at("eval"), "eval", {"dataset", "max_new"});
    read(j.at("eval"), "dataset", c.eval.dataset, "eval");
    read(j.at("eval"), "max_new", c.eval.max_new, "eval");
    c.eval.dataset = resolve(c.eval.dataset, base_dir);
  }
  if (j.contains("synth")) {
    const json& sj = object(j.at("synth"), "synth", {"n_samples", "categories", "scene"});
    read(sj, "n_samples", c.synth.n_samples, "synth");
    if (sj.contains("categories")) {
      std::vector<std::string> names;
      read(sj, "categories", names, "synth");
      c.synth.categories.clear();
      for (const auto& n : names) {
        auto t = parse_question_type(n);
        if (!t) invalid("unknown question category '" + n + "'");
        c.synth.categories.insert(*t);
      }
    }
    if (sj.contains("scene")) {
      const std::string ctx = "synth.scene";
      const json& s = object(sj.at("scene"), ctx,
                             {"canvas_height", "canvas_width", "min_objects", "max_objects", "min_size", "max_size",
                              "pixels_per_meter", "background_depth", "min_depth_offset", "max_depth_offset",
                              "min_lr_separation"});
      SynthConfig& sc = c.synth.scene;
      read(s, "canvas_height", sc.canvas_height, ctx);
      read(s, "canvas_width", sc.canvas_width, ctx);
      read(s, "min_objects", sc.min_objects, ctx);
      read(s, "max_objects", sc.max_objects, ctx);
      read(s, "min_size", sc.min_size, ctx);
      read(s, "max_size", sc.max_size, ctx);
      read(s, "pixels_per_meter", sc.pixels_per_meter, ctx);
      read(s, "background_depth", sc.background_depth, ctx);
      read(s, "min_depth_offset", sc.min_depth_offset, ctx);
      read(s, "max_depth_offset", sc.max_depth_offset, ctx);
      read(s, "min_lr_separation", sc.min_lr_separation, ctx);
    }
  }
  read(j, "output_dir", c.output_dir, "config");
  c.output_dir = resolve(c.output_dir, base_dir);
  apply_seed(c, c.seed);
  validate(c);
  return c;
}

void apply_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.seed = seed;
  cfg.model.seed = seed;
  cfg.model.lm.seed = seed * 0x9e3779b97f4a7c15ULL + 1;
  for (int k = 0; k < 3; ++k) cfg.stages[k].seed = seed * 0x9e3779b97f4a7c15ULL + 11 + k;
}

void validate(const RunConfig& c) {
  if (c.schema_version != kConfigSchemaVersion)
    invalid("unsupported schema_version " + std::to_string(c.schema_version));
  validate(c.model);
  for (int k = 0; k < 3; ++k) {
    if (c.stages[k].stage_id != k + 1) invalid("stages must be ordered 1, 2, 3");
    validate(c.stages[k]);
  }
  if (c.eval.max_new < 1) invalid("eval.max_new must be >= 1");
  if (c.eval.max_new + c.model.n_vis() > c.model.lm.max_seq) invalid("eval.max_new leaves no room for the prompt");
  if (c.synth.n_samples == 0) invalid("synth.n_samples must be >= 1");
  if (c.synth.categories.empty()) invalid("synth.categories must not be empty");
  const SynthConfig& s = c.synth.scene;
  if (s.canvas_height != c.model.image_height || s.canvas_width != c.model.image_width)
    invalid("synth.scene canvas must match the model image size");
  if (s.min_objects < 3 || s.max_objects < s.min_objects)
    invalid("synth.scene needs 3 <= min_objects <= max_objects");
  if (s.min_size < 1 || s.max_size < s.min_size) invalid("synth.scene needs 1 <= min_size <= max_size");
  if (!(s.pixels_per_meter > 0.0)) invalid("synth.scene.pixels_per_meter must be > 0");
  if (!(s.min_depth_offset > 0.0) || s.max_depth_offset < s.min_depth_offset ||
      s.max_depth_offset >= s.background_depth)
    invalid("synth.scene depth offsets must satisfy 0 < min <= max < background_depth");
  if (c.output_dir.empty()) invalid("output_dir must not be empty");
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(Errc::IoError, "cannot open config '" + path.string() + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::exception& e) {
    invalid("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

}  // namespace rvlm
