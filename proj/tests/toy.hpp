#pragma once

// Small model and dataset shapes shared by the training-related tests.

#include <set>
#include <vector>

#include "rvlm/model.hpp"
#include "rvlm/synth.hpp"

namespace rvlm::testing {

/// 16 x 16 images, 2 x 2 visual tokens, 8 x 8 refined grid, lm_dim 16.
inline ModelConfig tiny_model_config(std::uint64_t seed = 1) {
  ModelConfig cfg;
  cfg.image_height = 16;
  cfg.image_width = 16;
  cfg.encoder = EncoderConfig{4, 8, 7};
  cfg.shuffle_factor = 2;
  cfg.refiner_layers = 2;
  cfg.refiner_hidden = 8;
  cfg.lm.lm_dim = 16;
  cfg.lm.n_layers = 2;
  cfg.lm.n_heads = 2;
  cfg.lm.ffn_mult = 2;
  cfg.lm.max_seq = 128;
  cfg.lm.seed = seed + 100;
  cfg.seed = seed;
  return cfg;
}

inline SynthConfig tiny_scene_config() {
  SynthConfig s;
  s.canvas_height = 16;
  s.canvas_width = 16;
  s.min_objects = 3;
  s.max_objects = 4;
  s.min_size = 3;
  s.max_size = 4;
  return s;
}

inline std::vector<ConversationSample> tiny_dataset(std::uint64_t seed, std::size_t n,
                                                    std::set<QuestionType> categories = {kAllQuestionTypes.begin(),
                                                                                         kAllQuestionTypes.end()}) {
  return generate_toy_dataset(seed, n, categories, tiny_scene_config());
}

}  // namespace rvlm::testing
