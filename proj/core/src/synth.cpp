#include "rvlm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "rvlm/errors.hpp"

namespace rvlm {
namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

bool overlaps(const SceneObject& a, const SceneObject& b, int gap) {
  return a.left < b.left + b.width + gap && b.left < a.left + a.width + gap && a.top < b.top + b.height + gap &&
         b.top < a.top + a.height + gap;
}

ConversationSample base_sample(const SceneSpec& scene, std::string id, QuestionType category) {
  validate_scene(scene);
  ConversationSample s;
  s.id = std::move(id);
  s.image = render_rgb(scene);
  s.depth = render_depth(scene);
  s.category = category;
  return s;
}

void finish(ConversationSample& s, std::string question, std::string answer) {
  s.turns = {Turn{Role::User, std::string(kImagePlaceholder) + std::move(question)},
             Turn{Role::Assistant, std::move(answer)}};
  validate_sample(s);
}

void check_index(const SceneSpec& scene, std::size_t i) {
  if (i >= scene.objects.size()) throw Error(Errc::ShapeError, "object index out of range");
}

}  // namespace

void validate_scene(const SceneSpec& scene) {
  if (scene.canvas_height <= 0 || scene.canvas_width <= 0) throw Error(Errc::ShapeError, "empty canvas");
  if (!(scene.pixels_per_meter > 0.0)) throw Error(Errc::ShapeError, "pixels_per_meter must be > 0");
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& o = scene.objects[i];
    if (o.height <= 0 || o.width <= 0 || o.top < 0 || o.left < 0 || o.top + o.height > scene.canvas_height ||
        o.left + o.width > scene.canvas_width)
      throw Error(Errc::ShapeError, "object " + std::to_string(i) + " is not inside the canvas");
    if (o.depth_offset < 0.0 || o.depth_offset > scene.background_depth)
      throw Error(Errc::ShapeError, "object " + std::to_string(i) + " depth offset outside [0, background]");
    for (std::size_t j = 0; j < i; ++j) {
      if (scene.objects[j].intensity == o.intensity)
        throw Error(Errc::MalformedRecord, "objects " + std::to_string(j) + " and " + std::to_string(i) +
                                               " share an intensity");
    }
  }
}

Image render_rgb(const SceneSpec& scene) {
  Image img{scene.canvas_height, scene.canvas_width, {}};
  img.values.assign(static_cast<std::size_t>(img.height) * img.width * 3, 0.0);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::size_t px = (static_cast<std::size_t>(y) * img.width + x) * 3;
      img.values[px + 1] = (x + 0.5) / img.width;
      img.values[px + 2] = (y + 0.5) / img.height;
    }
  }
  for (const auto& o : scene.objects)
    for (int y = o.top; y < o.top + o.height; ++y)
      for (int x = o.left; x < o.left + o.width; ++x)
        img.values[(static_cast<std::size_t>(y) * img.width + x) * 3] = o.intensity;
  return img;
}

DepthMap render_depth(const SceneSpec& scene) {
  DepthMap d{scene.canvas_height, scene.canvas_width, {}};
  d.values.assign(static_cast<std::size_t>(d.height) * d.width, scene.background_depth);
  for (const auto& o : scene.objects)
    for (int y = o.top; y < o.top + o.height; ++y)
      for (int x = o.left; x < o.left + o.width; ++x)
        d.values[static_cast<std::size_t>(y) * d.width + x] =
            std::min(d.values[static_cast<std::size_t>(y) * d.width + x], scene.background_depth - o.depth_offset);
  return d;
}

RegionMask rect_mask(int height, int width, const PixelRect& rect) {
  BinaryGrid g{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
  for (int y = std::max(0, rect.top); y < std::min(height, rect.top + rect.height); ++y)
    for (int x = std::max(0, rect.left); x < std::min(width, rect.left + rect.width); ++x)
      g.cells[static_cast<std::size_t>(y) * width + x] = 1;
  return encode_mask(g);
}

RegionMask object_mask(const SceneSpec& scene, std::size_t object) {
  check_index(scene, object);
  const auto& o = scene.objects[object];
  return rect_mask(scene.canvas_height, scene.canvas_width, PixelRect{o.top, o.left, o.height, o.width});
}

double centroid_distance_m(double ax, double ay, double bx, double by, double pixels_per_meter) {
  return std::hypot(ax - bx, ay - by) / pixels_per_meter;
}

std::string format_meters(double meters) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", meters);
  return buf;
}

ConversationSample make_left_right_sample(const SceneSpec& scene, std::size_t a, std::size_t b, std::string id) {
  check_index(scene, a);
  check_index(scene, b);
  auto s = base_sample(scene, std::move(id), QuestionType::LeftRight);
  s.masks = {object_mask(scene, a), object_mask(scene, b)};
  const bool left = scene.objects[a].centroid_x() < scene.objects[b].centroid_x();
  finish(s, "Does the box <mask> appear on the right-hand side of the box <mask>?", left ? "left" : "right");
  return s;
}

ConversationSample make_count_sample(const SceneSpec& scene, const PixelRect& region, std::string id) {
  auto s = base_sample(scene, std::move(id), QuestionType::Count);
  s.masks = {rect_mask(scene.canvas_height, scene.canvas_width, region)};
  int count = 0;
  for (const auto& o : scene.objects)
    if (region.contains(o.centroid_x(), o.centroid_y())) ++count;
  finish(s, "How many boxes are in the region <mask>?", std::to_string(count));
  return s;
}

ConversationSample make_distance_sample(const SceneSpec& scene, std::size_t a, std::size_t b, std::string id) {
  check_index(scene, a);
  check_index(scene, b);
  auto s = base_sample(scene, std::move(id), QuestionType::Distance);
  s.masks = {object_mask(scene, a), object_mask(scene, b)};
  const auto& oa = scene.objects[a];
  const auto& ob = scene.objects[b];
  const double d =
      centroid_distance_m(oa.centroid_x(), oa.centroid_y(), ob.centroid_x(), ob.centroid_y(), scene.pixels_per_meter);
  finish(s, "What is the distance between the box <mask> and the box <mask>?", format_meters(d));
  return s;
}

ConversationSample make_multi_choice_sample(const SceneSpec& scene, const std::vector<std::size_t>& choices,
                                            std::string id) {
  if (choices.size() < 2) throw Error(Errc::ShapeError, "multiple choice needs at least two regions");
  auto s = base_sample(scene, std::move(id), QuestionType::MultiChoice);
  std::string question = "Which region is closest to the camera:";
  std::size_t best = 0;
  for (std::size_t k = 0; k < choices.size(); ++k) {
    check_index(scene, choices[k]);
    s.masks.push_back(object_mask(scene, choices[k]));
    if (scene.objects[choices[k]].depth_offset > scene.objects[choices[best]].depth_offset) best = k;
    question += (k == 0) ? " <mask>" : (k + 1 == choices.size() ? " or <mask>" : ", <mask>");
  }
  question += "?";
  finish(s, std::move(question), "Region " + std::to_string(best));
  return s;
}

SceneSpec random_scene(std::uint64_t seed, const SynthConfig& cfg) {
  std::mt19937_64 rng(seed);
  SceneSpec scene;
  scene.canvas_height = cfg.canvas_height;
  scene.canvas_width = cfg.canvas_width;
  scene.pixels_per_meter = cfg.pixels_per_meter;
  scene.background_depth = cfg.background_depth;
  scene.seed = seed;

  std::uniform_int_distribution<int> n_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> size_dist(cfg.min_size, cfg.max_size);
  // Intensities on a 0.05 grid in [0.30, 1.00].
  std::vector<int> intensity_slots(15);
  for (int i = 0; i < 15; ++i) intensity_slots[i] = 6 + i;
  std::shuffle(intensity_slots.begin(), intensity_slots.end(), rng);
  // Depth offsets on a 0.25 m grid.
  const int n_offsets = static_cast<int>(std::floor((cfg.max_depth_offset - cfg.min_depth_offset) / 0.25)) + 1;
  std::vector<int> offset_slots(n_offsets);
  for (int i = 0; i < n_offsets; ++i) offset_slots[i] = i;
  std::shuffle(offset_slots.begin(), offset_slots.end(), rng);

  const int target = std::min({n_dist(rng), 15, n_offsets});
  for (int attempt = 0; attempt < 1000 && static_cast<int>(scene.objects.size()) < target; ++attempt) {
    SceneObject o;
    o.height = size_dist(rng);
    o.width = size_dist(rng);
    o.top = std::uniform_int_distribution<int>(0, cfg.canvas_height - o.height)(rng);
    o.left = std::uniform_int_distribution<int>(0, cfg.canvas_width - o.width)(rng);
    if (std::any_of(scene.objects.begin(), scene.objects.end(), [&](const SceneObject& p) { return overlaps(o, p, 1); }))
      continue;
    const std::size_t k = scene.objects.size();
    o.intensity = intensity_slots[k] * 0.05;
    o.depth_offset = cfg.min_depth_offset + offset_slots[k] * 0.25;
    scene.objects.push_back(o);
  }
  return scene;
}

std::vector<ConversationSample> generate_toy_dataset(std::uint64_t seed, std::size_t n_samples,
                                                     const std::set<QuestionType>& categories,
                                                     const SynthConfig& cfg) {
  if (categories.empty()) throw Error(Errc::UnsupportedCategory, "no question categories requested");
  if (n_samples == 0) throw Error(Errc::InvalidConfig, "n_samples must be positive");
  const std::vector<QuestionType> cats(categories.begin(), categories.end());
  std::vector<ConversationSample> out;
  out.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const QuestionType cat = cats[i % cats.size()];
    const std::string id = "synth-" + std::to_string(seed) + "-" + std::to_string(i);
    for (std::uint64_t attempt = 0;; ++attempt) {
      const std::uint64_t sub = splitmix64(seed ^ splitmix64(i * 1000003ULL + attempt));
      SceneSpec scene = random_scene(sub, cfg);
      std::mt19937_64 rng(splitmix64(sub));
      const std::size_t n = scene.objects.size();
      if (n < 2 || (cat == QuestionType::MultiChoice && n < 3)) continue;
      std::vector<std::size_t> order(n);
      for (std::size_t k = 0; k < n; ++k) order[k] = k;
      std::shuffle(order.begin(), order.end(), rng);

      if (cat == QuestionType::LeftRight) {
        const auto& a = scene.objects[order[0]];
        const auto& b = scene.objects[order[1]];
        if (std::abs(a.centroid_x() - b.centroid_x()) < cfg.min_lr_separation) continue;
        out.push_back(make_left_right_sample(scene, order[0], order[1], id));
      } else if (cat == QuestionType::Distance) {
        out.push_back(make_distance_sample(scene, order[0], order[1], id));
      } else if (cat == QuestionType::MultiChoice) {
        out.push_back(make_multi_choice_sample(scene, {order[0], order[1], order[2]}, id));
      } else {
        std::uniform_int_distribution<int> hd(8, std::min(20, cfg.canvas_height));
        std::uniform_int_distribution<int> wd(8, std::min(20, cfg.canvas_width));
        PixelRect r;
        r.height = hd(rng);
        r.width = wd(rng);
        r.top = std::uniform_int_distribution<int>(0, cfg.canvas_height - r.height)(rng);
        r.left = std::uniform_int_distribution<int>(0, cfg.canvas_width - r.width)(rng);
        out.push_back(make_count_sample(scene, r, id));
      }
      break;
    }
  }
  return out;
}

}  // namespace rvlm
