#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rvlm/autograd.hpp"
#include "rvlm/connector.hpp"
#include "rvlm/data.hpp"
#include "rvlm/lm.hpp"
#include "rvlm/refiner.hpp"
#include "rvlm/sequence.hpp"
#include "rvlm/vision_encoder.hpp"

namespace rvlm {

/// Shapes of every module. Cross-module consistency is enforced by validate().
struct ModelConfig {
  int image_height = 32;
  int image_width = 32;
  EncoderConfig encoder;
  int shuffle_factor = 2;
  int refiner_layers = 2;
  int refiner_hidden = 32;
  LmConfig lm;
  std::uint64_t seed = 1;  ///< connector and refiner initialization

  int grid_height() const { return image_height / encoder.patch; }
  int grid_width() const { return image_width / encoder.patch; }
  int token_height() const { return grid_height() / shuffle_factor; }
  int token_width() const { return grid_width() / shuffle_factor; }
  int n_vis() const { return token_height() * token_width(); }
  int refined_height() const { return token_height() << refiner_layers; }
  int refined_width() const { return token_width() << refiner_layers; }
};

/// Throws InvalidConfig naming the first inconsistency found.
void validate(const ModelConfig& cfg);

/// A sample with its frozen-encoder features computed and its conversation
/// tokenized, ready for repeated forward passes.
struct PreparedSample {
  std::string id;
  std::optional<FeatureGrid> rgb;
  std::optional<FeatureGrid> depth;
  std::vector<BinaryGrid> masks;
  ChatTokens tokens;
  bool has_image = false;
};

/// The full region-aware model: frozen patch encoder, per-modality connectors
/// and refiners, mask pooling, placeholder substitution and the decoder.
class RegionVlm {
 public:
  explicit RegionVlm(ModelConfig cfg);
  RegionVlm(const RegionVlm&) = delete;
  RegionVlm& operator=(const RegionVlm&) = delete;

  const ModelConfig& config() const noexcept { return cfg_; }
  ParamStore& params() noexcept { return params_; }
  const ParamStore& params() const noexcept { return params_; }
  const VisionEncoder& encoder() const noexcept { return encoder_; }
  const Connector& connector(Modality m) const { return m == Modality::Rgb ? rgb_connector_ : depth_connector_; }
  const Refiner& refiner(Modality m) const { return m == Modality::Rgb ? rgb_refiner_ : depth_refiner_; }
  const LanguageModel& lm() const noexcept { return lm_; }

  /// With `generation_prompt`, trailing assistant turns are dropped and the
  /// tokens end with "<|assistant|>".
  PreparedSample prepare(const ConversationSample& sample, bool generation_prompt = false) const;

  struct Forward {
    Var logits;
    SequenceLayout layout;
  };
  Forward forward(Graph& g, const PreparedSample& sample) const;

  /// Assembled prompt embeddings (values only).
  EmbeddingSequence embed(const PreparedSample& sample) const;
  std::vector<int> generate(const PreparedSample& prompt, int max_new) const;
  /// Greedy answer to the final user turn of `sample`, "<|end|>" stripped.
  std::string answer(const ConversationSample& sample, int max_new) const;

  /// Rebuilds the encoder from the stored projection (after loading values).
  void sync_encoder();

 private:
  AssembledSequence build(Graph& g, const PreparedSample& s, Var table) const;

  ModelConfig cfg_;
  ParamStore params_;
  VisionEncoder encoder_;
  Connector rgb_connector_;
  Connector depth_connector_;
  Refiner rgb_refiner_;
  Refiner depth_refiner_;
  LanguageModel lm_;
};

}  // namespace rvlm
