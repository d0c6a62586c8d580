#pragma once

#include <cstdint>
#include <set>
#include <vector>

#include "rvlm/data.hpp"

namespace rvlm {

/// Axis-aligned box drawn into a synthetic scene.
struct SceneObject {
  int top = 0;
  int left = 0;
  int height = 1;
  int width = 1;
  double intensity = 1.0;  ///< red-channel value; distinct per object
  double depth_offset = 1.0;  ///< meters in front of the background plane

  double centroid_x() const { return left + width / 2.0; }
  double centroid_y() const { return top + height / 2.0; }
};

struct SceneSpec {
  int canvas_height = 32;
  int canvas_width = 32;
  std::vector<SceneObject> objects;
  double pixels_per_meter = 10.0;
  double background_depth = 6.0;
  std::uint64_t seed = 0;
};

/// Pixel rectangle used for count queries.
struct PixelRect {
  int top = 0;
  int left = 0;
  int height = 1;
  int width = 1;

  bool contains(double x, double y) const { return x >= left && x < left + width && y >= top && y < top + height; }
};

/// Generator knobs. Defaults produce 32 x 32 scenes with 3-5 boxes.
struct SynthConfig {
  int canvas_height = 32;
  int canvas_width = 32;
  int min_objects = 3;
  int max_objects = 5;
  int min_size = 4;
  int max_size = 8;
  double pixels_per_meter = 10.0;
  double background_depth = 6.0;
  double min_depth_offset = 0.5;
  double max_depth_offset = 4.5;
  /// Minimum horizontal centroid separation for left/right pairs, in pixels.
  double min_lr_separation = 3.0;
};

/// Throws ShapeError when an object leaves the canvas and MalformedRecord on
/// duplicate intensities or depth offsets.
void validate_scene(const SceneSpec& scene);

/// Red channel holds object intensity (0 elsewhere); green and blue carry a
/// horizontal and vertical illumination ramp over the whole canvas.
Image render_rgb(const SceneSpec& scene);
/// Background plane minus each object's offset inside its footprint.
DepthMap render_depth(const SceneSpec& scene);
RegionMask object_mask(const SceneSpec& scene, std::size_t object);
RegionMask rect_mask(int height, int width, const PixelRect& rect);

/// Euclidean centroid distance in pixels divided by pixels_per_meter.
double centroid_distance_m(double ax, double ay, double bx, double by, double pixels_per_meter);
/// Decimal rendering used in distance answers (two decimals).
std::string format_meters(double meters);

// Question builders. Each returns a validated single-exchange sample whose
// assistant answer follows from the scene geometry.
ConversationSample make_left_right_sample(const SceneSpec& scene, std::size_t a, std::size_t b, std::string id);
ConversationSample make_count_sample(const SceneSpec& scene, const PixelRect& region, std::string id);
ConversationSample make_distance_sample(const SceneSpec& scene, std::size_t a, std::size_t b, std::string id);
ConversationSample make_multi_choice_sample(const SceneSpec& scene, const std::vector<std::size_t>& choices,
                                            std::string id);

SceneSpec random_scene(std::uint64_t seed, const SynthConfig& cfg = {});

/// Deterministic in `seed`; categories are assigned round-robin in enum order.
/// Throws UnsupportedCategory on an empty category set and InvalidConfig when
/// n_samples == 0.
std::vector<ConversationSample> generate_toy_dataset(std::uint64_t seed, std::size_t n_samples,
                                                     const std::set<QuestionType>& categories,
                                                     const SynthConfig& cfg = {});

}  // namespace rvlm
