#pragma once

#include <vector>

#include "rvlm/autograd.hpp"
#include "rvlm/vision_encoder.hpp"

namespace rvlm {

/// Moves each r x r block of cells into the channel axis:
///   out[i][j][(di*r + dj)*dim + c] = in[i*r + di][j*r + dj][c]
/// Throws IndivisibleFactor unless r divides both grid sides.
FeatureGrid pixel_shuffle(const FeatureGrid& grid, int r);
/// Inverse of pixel_shuffle; throws IndivisibleChannels unless r*r divides dim.
FeatureGrid pixel_unshuffle(const FeatureGrid& grid, int r);
/// Flat source index of every output element of pixel_shuffle on an h x w x dim grid.
std::vector<int> pixel_shuffle_index(int h, int w, int dim, int r);

/// Projected visual tokens, (grid_h*grid_w) x lm_dim, in row-major grid order.
struct TokenEmbeddings {
  Modality modality = Modality::Rgb;
  int grid_h = 0;
  int grid_w = 0;
  Mat values;

  int count() const noexcept { return values.rows(); }
  int lm_dim() const noexcept { return values.cols(); }
};

/// Pixel shuffle followed by one affine layer into the language-model width.
/// Weight and bias live in a ParamStore under the modality's group.
class Connector {
 public:
  Connector(Modality modality, int shuffle_factor, Parameter& weight, Parameter& bias);

  Modality modality() const noexcept { return modality_; }
  int shuffle_factor() const noexcept { return r_; }
  int in_dim() const noexcept { return weight_->value.rows(); }
  int out_dim() const noexcept { return weight_->value.cols(); }
  Parameter& weight() noexcept { return *weight_; }
  Parameter& bias() noexcept { return *bias_; }

  /// Differentiable path. `grid` is the (h*w) x dim node of a grid tagged
  /// `modality`; returns the (h/r * w/r) x lm_dim token node.
  Var forward(Graph& g, Var grid, Modality modality, int h, int w) const;
  TokenEmbeddings connect(const FeatureGrid& grid) const;

 private:
  void check(Modality modality, int h, int w, int dim) const;

  Modality modality_;
  int r_;
  Parameter* weight_;
  Parameter* bias_;
};

}  // namespace rvlm
