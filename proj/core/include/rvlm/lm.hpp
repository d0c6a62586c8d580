#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "rvlm/autograd.hpp"
#include "rvlm/sequence.hpp"

namespace rvlm {

struct LmConfig {
  int lm_dim = 64;
  int n_layers = 2;
  int n_heads = 4;
  int ffn_mult = 4;
  int vocab_size = vocab::kSize;
  int max_seq = 192;
  std::uint64_t seed = 1;
  bool tie_embeddings = true;
};

/// Throws InvalidConfig on inconsistent shapes.
void validate(const LmConfig& cfg);

/// Pre-norm decoder-only transformer: learned absolute positions, RMSNorm,
/// causal multi-head attention and a SiLU feed-forward block per layer.
class LanguageModel {
 public:
  /// Registers and initializes every parameter under the "lm" group.
  LanguageModel(const LmConfig& cfg, ParamStore& store);

  const LmConfig& config() const noexcept { return cfg_; }
  Parameter& token_embedding() noexcept { return *tok_; }
  const Parameter& token_embedding() const noexcept { return *tok_; }

  /// `embeddings` is length x lm_dim; returns length x vocab logits. Pass the
  /// node used for text lookup as `table` so both uses share one leaf.
  Var forward(Graph& g, Var embeddings, std::optional<Var> table = std::nullopt) const;
  Mat forward(const Mat& embeddings) const;

  /// Greedy decoding, lowest id wins ties. Returns every produced token,
  /// including a final "<|end|>" when one is produced.
  std::vector<int> generate(const Mat& prefix, int max_new) const;

 private:
  struct Layer {
    Parameter* attn_norm;
    Parameter* wqkv;
    Parameter* wo;
    Parameter* ffn_norm;
    Parameter* w1;
    Parameter* b1;
    Parameter* w2;
    Parameter* b2;
  };

  LmConfig cfg_;
  Parameter* tok_;
  Parameter* pos_;
  Parameter* head_ = nullptr;
  Parameter* final_norm_;
  std::vector<Layer> layers_;
};

/// Sum of next-token cross-entropy over masked positions.
Var masked_cross_entropy_sum(Var logits, const SequenceLayout& layout);
/// Mean cross-entropy over positions with mask = 1. Throws EmptyLossMask.
double loss(const Mat& logits, std::span<const int> targets, std::span<const std::uint8_t> loss_mask);

/// Index of the largest value; the lowest index wins ties.
int argmax_lowest(std::span<const double> row);

}  // namespace rvlm
