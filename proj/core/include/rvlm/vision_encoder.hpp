#pragma once

#include <cstdint>
#include <string_view>

#include "rvlm/data.hpp"
#include "rvlm/tensor.hpp"

namespace rvlm {

enum class Modality { Rgb, Depth };

constexpr std::string_view to_string(Modality m) noexcept { return m == Modality::Rgb ? "rgb" : "depth"; }

/// A patch grid of feature vectors stored as (height*width) x dim.
struct FeatureGrid {
  Modality modality = Modality::Rgb;
  int height = 0;
  int width = 0;
  Mat values;

  int dim() const noexcept { return values.cols(); }
  const double* cell(int y, int x) const { return values.row(y * width + x); }
  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;
};

struct EncoderConfig {
  int patch = 4;
  int dim = 32;
  std::uint64_t seed = 7;
};

/// Frozen patch encoder: each patch is flattened (row, column, channel order)
/// and multiplied by a fixed Gaussian projection drawn from `cfg.seed`.
/// Nothing here is ever trained.
class VisionEncoder {
 public:
  explicit VisionEncoder(EncoderConfig cfg);
  /// Rebuilds an encoder around a previously drawn projection.
  VisionEncoder(EncoderConfig cfg, Mat projection);

  const EncoderConfig& config() const noexcept { return cfg_; }
  /// (patch*patch*3) x dim projection.
  const Mat& projection() const noexcept { return projection_; }

  FeatureGrid encode_rgb(const Image& image) const;
  FeatureGrid encode_depth(const DepthMap& depth) const;

 private:
  FeatureGrid encode(const Image& image, Modality modality) const;

  EncoderConfig cfg_;
  Mat projection_;
};

/// Min-max normalizes to [0, 1] and copies into all three channels. A
/// constant map normalizes to all zeros.
Image depth_to_image(const DepthMap& depth);

}  // namespace rvlm
