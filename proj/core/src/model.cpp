#include "rvlm/model.hpp"

#include <cmath>
#include <random>

#include "rvlm/errors.hpp"

namespace rvlm {
namespace {

constexpr const char* kEncoderParam = "vision_encoder.projection";

Connector make_connector(ParamStore& store, const ModelConfig& cfg, Modality m, std::mt19937_64& rng) {
  const std::string group(m == Modality::Rgb ? groups::kRgbConnector : groups::kDepthConnector);
  const int in = cfg.encoder.dim * cfg.shuffle_factor * cfg.shuffle_factor;
  Parameter& w = store.add(group + ".weight", group, in, cfg.lm.lm_dim);
  Parameter& b = store.add(group + ".bias", group, 1, cfg.lm.lm_dim);
  init_normal(w.value, 1.0 / std::sqrt(static_cast<double>(in)), rng);
  return Connector(m, cfg.shuffle_factor, w, b);
}

Refiner make_refiner(ParamStore& store, const ModelConfig& cfg, Modality m, std::mt19937_64& rng) {
  const std::string group(m == Modality::Rgb ? groups::kRgbRefiner : groups::kDepthRefiner);
  std::vector<RefinerLayer> layers;
  int in = cfg.lm.lm_dim;
  for (int l = 0; l < cfg.refiner_layers; ++l) {
    const int out = (l + 1 == cfg.refiner_layers) ? cfg.lm.lm_dim : cfg.refiner_hidden;
    const std::string pre = group + ".layer" + std::to_string(l) + ".";
    Parameter& w = store.add(pre + "weight", group, 16 * in, out);
    Parameter& b = store.add(pre + "bias", group, 1, out);
    init_normal(w.value, 1.0 / std::sqrt(4.0 * in), rng);
    layers.push_back(RefinerLayer{&w, &b});
    in = out;
  }
  return Refiner(m, std::move(layers));
}

VisionEncoder make_encoder(ParamStore& store, const ModelConfig& cfg) {
  VisionEncoder enc(cfg.encoder);
  Parameter& p = store.add(kEncoderParam, std::string(groups::kVisionEncoder), enc.projection().rows(),
                           enc.projection().cols());
  p.value = enc.projection();
  return enc;
}

}  // namespace

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, what); };
  if (c.image_height <= 0 || c.image_width <= 0) fail("image dimensions must be positive");
  if (c.encoder.patch <= 0 || c.encoder.dim <= 0) fail("encoder patch and dim must be positive");
  if (c.image_height % c.encoder.patch != 0 || c.image_width % c.encoder.patch != 0)
    fail("image " + std::to_string(c.image_height) + "x" + std::to_string(c.image_width) +
         " is not divisible by encoder patch " + std::to_string(c.encoder.patch));
  if (c.shuffle_factor < 1) fail("connector shuffle_factor must be >= 1");
  if (c.grid_height() % c.shuffle_factor != 0 || c.grid_width() % c.shuffle_factor != 0)
    fail("shuffle_factor " + std::to_string(c.shuffle_factor) + " does not divide the encoder grid " +
         std::to_string(c.grid_height()) + "x" + std::to_string(c.grid_width()));
  if (c.refiner_layers < 1) fail("refiner needs at least one layer");
  if (c.refiner_layers > 1 && c.refiner_hidden <= 0) fail("refiner_hidden must be positive");
  if (c.refined_height() > c.image_height || c.refined_width() > c.image_width)
    fail("refined resolution exceeds the image (mask) resolution");
  validate(c.lm);
  if (c.lm.max_seq < c.n_vis() + 4) fail("lm.max_seq cannot hold the visual tokens");
}

RegionVlm::RegionVlm(ModelConfig cfg)
    : cfg_(std::move(cfg)),
      params_(),
      encoder_((validate(cfg_), make_encoder(params_, cfg_))),
      rgb_connector_([this] {
        std::mt19937_64 rng(cfg_.seed);
        return make_connector(params_, cfg_, Modality::Rgb, rng);
      }()),
      depth_connector_([this] {
        std::mt19937_64 rng(cfg_.seed + 1);
        return make_connector(params_, cfg_, Modality::Depth, rng);
      }()),
      rgb_refiner_([this] {
        std::mt19937_64 rng(cfg_.seed + 2);
        return make_refiner(params_, cfg_, Modality::Rgb, rng);
      }()),
      depth_refiner_([this] {
        std::mt19937_64 rng(cfg_.seed + 3);
        return make_refiner(params_, cfg_, Modality::Depth, rng);
      }()),
      lm_(cfg_.lm, params_) {}

void RegionVlm::sync_encoder() { encoder_ = VisionEncoder(cfg_.encoder, params_.find(kEncoderParam)->value); }

PreparedSample RegionVlm::prepare(const ConversationSample& sample, bool generation_prompt) const {
  PreparedSample p;
  p.id = sample.id;
  std::vector<Turn> turns = sample.turns;
  if (generation_prompt)
    while (!turns.empty() && turns.back().role == Role::Assistant) turns.pop_back();
  p.tokens = tokenize_conversation(turns, generation_prompt);
  std::size_t masks_used = 0;
  for (const auto& t : turns) {
    p.has_image = p.has_image || count_occurrences(t.text, kImagePlaceholder) > 0;
    masks_used += count_occurrences(t.text, kMaskPlaceholder);
  }
  if (masks_used != sample.masks.size()) {
    throw Error(Errc::MaskCountMismatch, "sample '" + sample.id + "' has " + std::to_string(masks_used) +
                                             " <mask> tokens but " + std::to_string(sample.masks.size()) + " masks");
  }
  if (masks_used > 0 && !sample.depth)
    throw Error(Errc::MissingDepth, "sample '" + sample.id + "' uses <mask> without a depth map");
  if (p.has_image || masks_used > 0) {
    if (sample.image.height != cfg_.image_height || sample.image.width != cfg_.image_width) {
      throw Error(Errc::ShapeError, "sample '" + sample.id + "' image is " + std::to_string(sample.image.height) +
                                        "x" + std::to_string(sample.image.width) + ", model expects " +
                                        std::to_string(cfg_.image_height) + "x" + std::to_string(cfg_.image_width));
    }
    p.rgb = encoder_.encode_rgb(sample.image);
  }
  if (masks_used > 0) {
    p.depth = encoder_.encode_depth(*sample.depth);
    for (std::size_t k = 0; k < masks_used; ++k) p.masks.push_back(decode_mask(sample.masks[k]));
  }
  return p;
}

AssembledSequence RegionVlm::build(Graph& g, const PreparedSample& s, Var table) const {
  std::optional<Var> rgb_tokens;
  const int th = cfg_.token_height(), tw = cfg_.token_width();
  if (s.rgb)
    rgb_tokens = rgb_connector_.forward(g, g.constant(s.rgb->values), s.rgb->modality, s.rgb->height, s.rgb->width);
  std::vector<std::pair<Var, Var>> regions;
  if (!s.masks.empty()) {
    Var depth_tokens =
        depth_connector_.forward(g, g.constant(s.depth->values), s.depth->modality, s.depth->height, s.depth->width);
    Var rgb_refined = rgb_refiner_.forward(g, *rgb_tokens, Modality::Rgb, th, tw);
    Var depth_refined = depth_refiner_.forward(g, depth_tokens, Modality::Depth, th, tw);
    const int rh = cfg_.refined_height(), rw = cfg_.refined_width();
    for (const auto& m : s.masks)
      regions.emplace_back(mask_pool(rgb_refined, m, rh, rw), mask_pool(depth_refined, m, rh, rw));
  }
  return assemble(s.tokens, s.has_image ? rgb_tokens : std::nullopt, regions, table);
}

RegionVlm::Forward RegionVlm::forward(Graph& g, const PreparedSample& s) const {
  // The table leaf is shared by lookup and the tied head so its gradient
  // accumulates from both.
  Var table = g.param(const_cast<Parameter&>(lm_.token_embedding()));
  auto assembled = build(g, s, table);
  Var logits = lm_.forward(g, assembled.embeddings, table);
  return Forward{logits, std::move(assembled.layout)};
}

EmbeddingSequence RegionVlm::embed(const PreparedSample& s) const {
  Graph g;
  auto assembled = build(g, s, g.constant(lm_.token_embedding().value));
  return EmbeddingSequence{assembled.embeddings.value(), std::move(assembled.layout)};
}

std::vector<int> RegionVlm::generate(const PreparedSample& prompt, int max_new) const {
  return lm_.generate(embed(prompt).embeddings, max_new);
}

std::string RegionVlm::answer(const ConversationSample& sample, int max_new) const {
  auto ids = generate(prepare(sample, true), max_new);
  if (!ids.empty() && ids.back() == vocab::kEnd) ids.pop_back();
  return detokenize(ids);
}

}  // namespace rvlm
