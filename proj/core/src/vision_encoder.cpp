#include "rvlm/vision_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "rvlm/errors.hpp"

namespace rvlm {

VisionEncoder::VisionEncoder(EncoderConfig cfg) : cfg_(cfg) {
  if (cfg_.patch <= 0 || cfg_.dim <= 0) throw Error(Errc::ShapeError, "encoder patch and dim must be positive");
  const int fan_in = cfg_.patch * cfg_.patch * 3;
  projection_ = Mat(fan_in, cfg_.dim);
  std::mt19937_64 rng(cfg_.seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(fan_in)));
  for (double& v : projection_.flat()) v = dist(rng);
}

VisionEncoder::VisionEncoder(EncoderConfig cfg, Mat projection) : cfg_(cfg), projection_(std::move(projection)) {
  if (projection_.rows() != cfg_.patch * cfg_.patch * 3 || projection_.cols() != cfg_.dim)
    throw Error(Errc::ShapeError, "encoder projection does not match its config");
}

FeatureGrid VisionEncoder::encode(const Image& image, Modality modality) const {
  const int p = cfg_.patch;
  if (image.values.size() != static_cast<std::size_t>(image.height) * image.width * 3)
    throw Error(Errc::ShapeError, "image must have exactly 3 channels");
  if (image.height <= 0 || image.width <= 0 || image.height % p != 0 || image.width % p != 0) {
    throw Error(Errc::ShapeError, "image " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                      " is not divisible by patch " + std::to_string(p));
  }
  const int gh = image.height / p;
  const int gw = image.width / p;
  Mat patches(gh * gw, p * p * 3);
  for (int py = 0; py < gh; ++py) {
    for (int px = 0; px < gw; ++px) {
      double* dst = patches.row(py * gw + px);
      for (int y = 0; y < p; ++y)
        for (int x = 0; x < p; ++x)
          for (int c = 0; c < 3; ++c) *dst++ = image.at(py * p + y, px * p + x, c);
    }
  }
  return FeatureGrid{modality, gh, gw, matmul(patches, projection_)};
}

FeatureGrid VisionEncoder::encode_rgb(const Image& image) const { return encode(image, Modality::Rgb); }

FeatureGrid VisionEncoder::encode_depth(const DepthMap& depth) const {
  if (std::any_of(depth.values.begin(), depth.values.end(), [](double v) { return !std::isfinite(v); }))
    throw Error(Errc::NonFiniteInput, "depth map contains non-finite values");
  if (depth.values.size() != static_cast<std::size_t>(depth.height) * depth.width)
    throw Error(Errc::ShapeError, "depth map must be H x W");
  return encode(depth_to_image(depth), Modality::Depth);
}

Image depth_to_image(const DepthMap& depth) {
  Image img{depth.height, depth.width, std::vector<double>(depth.values.size() * 3, 0.0)};
  if (depth.values.empty()) return img;
  const auto [lo, hi] = std::minmax_element(depth.values.begin(), depth.values.end());
  const double range = *hi - *lo;
  if (range <= 0.0) return img;
  for (std::size_t i = 0; i < depth.values.size(); ++i) {
    const double v = (depth.values[i] - *lo) / range;
    img.values[3 * i] = img.values[3 * i + 1] = img.values[3 * i + 2] = v;
  }
  return img;
}

}  // namespace rvlm
