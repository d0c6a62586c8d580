#pragma once

#include <vector>

#include "rvlm/autograd.hpp"
#include "rvlm/connector.hpp"
#include "rvlm/data.hpp"

namespace rvlm {

struct RefinerLayer {
  Parameter* weight = nullptr;  ///< (16*in_ch) x out_ch
  Parameter* bias = nullptr;    ///< 1 x out_ch
  int in_ch() const { return weight->value.rows() / 16; }
  int out_ch() const { return weight->value.cols(); }
};

/// Pooled region feature, 1 x lm_dim.
struct RegionEmbedding {
  Modality modality = Modality::Rgb;
  Mat values;
};

/// Stack of stride-2 transposed convolutions (kernel 4, padding 1). Every
/// layer doubles both grid sides; all but the last are followed by ReLU.
class Refiner {
 public:
  Refiner(Modality modality, std::vector<RefinerLayer> layers);

  Modality modality() const noexcept { return modality_; }
  const std::vector<RefinerLayer>& layers() const noexcept { return layers_; }
  int upsample() const noexcept { return 1 << static_cast<int>(layers_.size()); }
  int out_dim() const { return layers_.back().out_ch(); }

  /// `tokens` is an (h*w) x in_ch node; returns (h*2^L * w*2^L) x out_dim.
  Var forward(Graph& g, Var tokens, Modality modality, int h, int w) const;
  FeatureGrid refine(const TokenEmbeddings& tokens) const;

 private:
  Modality modality_;
  std::vector<RefinerLayer> layers_;
};

/// Nearest-neighbour resampling: target cell i reads source row
/// floor((2i+1) * H / (2h)), same for columns.
BinaryGrid resample_mask(const BinaryGrid& mask, int height, int width);
/// Row indices (y*width + x) of the active cells of `mask` resampled to
/// height x width. Throws EmptyRegion when none survive.
std::vector<int> pooling_rows(const BinaryGrid& mask, int height, int width);

/// Mean of the refined cells selected by the resampled mask.
Var mask_pool(Var refined, const BinaryGrid& mask, int height, int width);
RegionEmbedding mask_pool(const FeatureGrid& refined, const RegionMask& mask);

}  // namespace rvlm
