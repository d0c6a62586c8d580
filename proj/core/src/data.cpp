#include "rvlm/data.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rvlm/errors.hpp"

namespace rvlm {
namespace {

using nlohmann::json;

[[noreturn]] void malformed(std::size_t line_no, const std::string& reason) {
  throw Error(Errc::MalformedRecord, "line " + std::to_string(line_no) + ": " + reason);
}

}  // namespace

std::size_t BinaryGrid::active() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), std::uint8_t{1}));
}

BinaryGrid decode_mask(const RegionMask& mask) {
  if (mask.height <= 0 || mask.width <= 0) throw Error(Errc::ShapeError, "mask dimensions must be positive");
  const std::size_t n = static_cast<std::size_t>(mask.height) * mask.width;
  BinaryGrid grid{mask.height, mask.width, {}};
  if (const auto* rle = std::get_if<RleCounts>(&mask.payload)) {
    std::int64_t sum = 0;
    for (std::int64_t c : rle->counts) {
      if (c < 0) throw Error(Errc::MalformedRecord, "negative run length");
      sum += c;
    }
    if (sum != static_cast<std::int64_t>(n)) {
      throw Error(Errc::LengthMismatch,
                  "run lengths sum to " + std::to_string(sum) + ", expected " + std::to_string(n));
    }
    grid.cells.reserve(n);
    std::uint8_t value = 0;
    for (std::int64_t c : rle->counts) {
      grid.cells.insert(grid.cells.end(), static_cast<std::size_t>(c), value);
      value ^= 1U;
    }
  } else {
    const auto& bm = std::get<Bitmap>(mask.payload);
    if (bm.cells.size() != n) {
      throw Error(Errc::LengthMismatch,
                  "bitmap has " + std::to_string(bm.cells.size()) + " cells, expected " + std::to_string(n));
    }
    if (std::any_of(bm.cells.begin(), bm.cells.end(), [](std::uint8_t v) { return v > 1; }))
      throw Error(Errc::MalformedRecord, "bitmap cells must be 0 or 1");
    grid.cells = bm.cells;
  }
  return grid;
}

RegionMask encode_mask(const BinaryGrid& grid) {
  RleCounts rle;
  std::uint8_t current = 0;
  std::int64_t run = 0;
  for (std::uint8_t v : grid.cells) {
    if (v != current) {
      rle.counts.push_back(run);
      current = v;
      run = 0;
    }
    ++run;
  }
  rle.counts.push_back(run);
  return RegionMask{grid.height, grid.width, std::move(rle)};
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
  std::size_t n = 0;
  for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
       pos = text.find(needle, pos + needle.size()))
    ++n;
  return n;
}

void validate_sample(const ConversationSample& s, std::size_t line_no) {
  const std::string where = "sample '" + s.id + "'";
  if (s.turns.empty()) malformed(line_no, where + " has no turns");
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    const Role expected = (i % 2 == 0) ? Role::User : Role::Assistant;
    if (s.turns[i].role != expected) malformed(line_no, where + ": roles must alternate starting with user");
  }
  std::size_t images = 0;
  std::size_t mask_tokens = 0;
  for (std::size_t i = 0; i < s.turns.size(); ++i) {
    const std::size_t n_img = count_occurrences(s.turns[i].text, kImagePlaceholder);
    if (n_img > 0 && i != 0) malformed(line_no, where + ": <image> must appear in the first user turn");
    images += n_img;
    const std::size_t n_mask = count_occurrences(s.turns[i].text, kMaskPlaceholder);
    if (s.turns[i].role == Role::Assistant && n_mask > 0)
      malformed(line_no, where + ": <mask> in an assistant turn");
    mask_tokens += n_mask;
  }
  if (images > 1) malformed(line_no, where + ": more than one <image> placeholder");

  if (s.image.height <= 0 || s.image.width <= 0 ||
      s.image.values.size() != static_cast<std::size_t>(s.image.height) * s.image.width * 3)
    malformed(line_no, where + ": image must be H x W x 3");
  if (std::any_of(s.image.values.begin(), s.image.values.end(),
                  [](double v) { return !std::isfinite(v) || v < 0.0 || v > 1.0; }))
    malformed(line_no, where + ": image values must lie in [0, 1]");
  if (s.depth) {
    if (s.depth->height != s.image.height || s.depth->width != s.image.width ||
        s.depth->values.size() != static_cast<std::size_t>(s.depth->height) * s.depth->width)
      malformed(line_no, where + ": depth must match image height and width");
    if (std::any_of(s.depth->values.begin(), s.depth->values.end(),
                    [](double v) { return !std::isfinite(v) || v < 0.0; }))
      malformed(line_no, where + ": depth values must be finite and >= 0");
  }

  if (mask_tokens != s.masks.size()) {
    throw Error(Errc::MaskCountMismatch, where + " has " + std::to_string(mask_tokens) + " <mask> tokens but " +
                                             std::to_string(s.masks.size()) + " masks");
  }
  if (mask_tokens > 0 && !s.depth) throw Error(Errc::MissingDepth, where + " uses <mask> without a depth map");
  for (std::size_t k = 0; k < s.masks.size(); ++k) {
    try {
      (void)decode_mask(s.masks[k]);
    } catch (const Error& e) {
      malformed(line_no, where + ": mask " + std::to_string(k) + ": " + e.what());
    }
  }
}

namespace {

Image parse_inline_image(const json& j, std::size_t line_no) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    malformed(line_no, "image array must be H x W x 3");
  Image img;
  img.height = static_cast<int>(j.size());
  img.width = static_cast<int>(j[0].size());
  img.values.reserve(static_cast<std::size_t>(img.height) * img.width * 3);
  for (const auto& row : j) {
    if (!row.is_array() || static_cast<int>(row.size()) != img.width) malformed(line_no, "ragged image rows");
    for (const auto& px : row) {
      if (!px.is_array() || px.size() != 3) malformed(line_no, "image pixels must have 3 channels");
      for (const auto& v : px) {
        if (!v.is_number()) malformed(line_no, "image values must be numbers");
        img.values.push_back(v.get<double>());
      }
    }
  }
  return img;
}

DepthMap parse_inline_depth(const json& j, std::size_t line_no) {
  if (!j.is_array() || j.empty() || !j[0].is_array() || j[0].empty())
    malformed(line_no, "depth array must be H x W");
  DepthMap d;
  d.height = static_cast<int>(j.size());
  d.width = static_cast<int>(j[0].size());
  d.values.reserve(static_cast<std::size_t>(d.height) * d.width);
  for (const auto& row : j) {
    if (!row.is_array() || static_cast<int>(row.size()) != d.width) malformed(line_no, "ragged depth rows");
    for (const auto& v : row) {
      if (!v.is_number()) malformed(line_no, "depth values must be numbers");
      d.values.push_back(v.get<double>());
    }
  }
  return d;
}

RegionMask parse_mask(const json& j, std::size_t line_no) {
  if (!j.is_object() || !j.contains("h") || !j.contains("w")) malformed(line_no, "mask needs h and w");
  RegionMask m;
  m.height = j.at("h").get<int>();
  m.width = j.at("w").get<int>();
  if (m.height <= 0 || m.width <= 0) malformed(line_no, "mask dimensions must be positive");
  if (j.contains("counts")) {
    m.payload = RleCounts{j.at("counts").get<std::vector<std::int64_t>>()};
  } else if (j.contains("bitmap")) {
    Bitmap bm;
    for (const auto& v : j.at("bitmap")) {
      if (v.is_array()) {
        for (const auto& c : v) bm.cells.push_back(static_cast<std::uint8_t>(c.get<int>()));
      } else {
        bm.cells.push_back(static_cast<std::uint8_t>(v.get<int>()));
      }
    }
    m.payload = std::move(bm);
  } else {
    malformed(line_no, "mask needs counts or bitmap");
  }
  return m;
}

}  // namespace

ConversationSample parse_record(const json& j, const std::filesystem::path& base_dir, std::size_t line_no) {
  ConversationSample s;
  try {
    if (!j.is_object()) malformed(line_no, "record must be an object");
    if (!j.contains("id") || !j.at("id").is_string()) malformed(line_no, "missing string field 'id'");
    s.id = j.at("id").get<std::string>();
    if (!j.contains("image")) malformed(line_no, "missing field 'image'");
    const json& img = j.at("image");
    s.image = img.is_string() ? load_png_rgb(base_dir / img.get<std::string>()) : parse_inline_image(img, line_no);
    if (j.contains("depth") && !j.at("depth").is_null()) {
      const json& d = j.at("depth");
      s.depth = d.is_string() ? load_png_depth(base_dir / d.get<std::string>()) : parse_inline_depth(d, line_no);
    }
    if (j.contains("masks")) {
      for (const auto& m : j.at("masks")) s.masks.push_back(parse_mask(m, line_no));
    }
    if (!j.contains("turns") || !j.at("turns").is_array()) malformed(line_no, "missing array field 'turns'");
    for (const auto& t : j.at("turns")) {
      const auto role = t.at("role").get<std::string>();
      if (role != "user" && role != "assistant") malformed(line_no, "unknown role '" + role + "'");
      s.turns.push_back(Turn{role == "user" ? Role::User : Role::Assistant, t.at("text").get<std::string>()});
    }
    if (j.contains("category") && !j.at("category").is_null()) {
      const auto cat = j.at("category").get<std::string>();
      s.category = parse_question_type(cat);
      if (!s.category) malformed(line_no, "unknown category '" + cat + "'");
    }
  } catch (const json::exception& e) {
    malformed(line_no, e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::IoError) malformed(line_no, e.what());
    throw;
  }
  validate_sample(s, line_no);
  return s;
}

std::vector<ConversationSample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open dataset " + path.string());
  const auto base = path.parent_path();
  std::vector<ConversationSample> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c) != 0; })) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      malformed(line_no, e.what());
    }
    out.push_back(parse_record(j, base, line_no));
  }
  return out;
}

json to_json(const ConversationSample& s) {
  json j;
  j["id"] = s.id;
  json img = json::array();
  for (int y = 0; y < s.image.height; ++y) {
    json row = json::array();
    for (int x = 0; x < s.image.width; ++x) row.push_back({s.image.at(y, x, 0), s.image.at(y, x, 1), s.image.at(y, x, 2)});
    img.push_back(std::move(row));
  }
  j["image"] = std::move(img);
  if (s.depth) {
    json d = json::array();
    for (int y = 0; y < s.depth->height; ++y) {
      json row = json::array();
      for (int x = 0; x < s.depth->width; ++x) row.push_back(s.depth->at(y, x));
      d.push_back(std::move(row));
    }
    j["depth"] = std::move(d);
  }
  json masks = json::array();
  for (const auto& m : s.masks) {
    json jm{{"h", m.height}, {"w", m.width}};
    if (const auto* rle = std::get_if<RleCounts>(&m.payload)) {
      jm["counts"] = rle->counts;
    } else {
      jm["bitmap"] = std::get<Bitmap>(m.payload).cells;
    }
    masks.push_back(std::move(jm));
  }
  j["masks"] = std::move(masks);
  json turns = json::array();
  for (const auto& t : s.turns) turns.push_back({{"role", t.role == Role::User ? "user" : "assistant"}, {"text", t.text}});
  j["turns"] = std::move(turns);
  if (s.category) j["category"] = std::string(to_string(*s.category));
  return j;
}

std::string serialize_dataset(const std::vector<ConversationSample>& samples) {
  std::string out;
  for (const auto& s : samples) {
    out += to_json(s).dump();
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const std::vector<ConversationSample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(Errc::IoError, "cannot write dataset " + path.string());
  out << serialize_dataset(samples);
  if (!out) throw Error(Errc::IoError, "short write to " + path.string());
}

Image load_png_rgb(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.c_str()) == 0)
    throw Error(Errc::IoError, "cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(png));
  if (png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr) == 0)
    throw Error(Errc::IoError, "cannot decode PNG " + path.string() + ": " + png.message);
  Image img{static_cast<int>(png.height), static_cast<int>(png.width), {}};
  img.values.reserve(buf.size());
  for (png_byte b : buf) img.values.push_back(static_cast<double>(b) / 255.0);
  return img;
}

void save_png_rgb(const std::filesystem::path& path, const Image& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf;
  buf.reserve(image.values.size());
  for (double v : image.values) buf.push_back(static_cast<png_byte>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  if (png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr) == 0)
    throw Error(Errc::IoError, "cannot write PNG " + path.string() + ": " + png.message);
}

DepthMap load_png_depth(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (png_image_begin_read_from_file(&png, path.c_str()) == 0)
    throw Error(Errc::IoError, "cannot read PNG " + path.string() + ": " + png.message);
  png.format = PNG_FORMAT_LINEAR_Y;
  std::vector<png_uint_16> buf(PNG_IMAGE_SIZE(png) / sizeof(png_uint_16));
  if (png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr) == 0)
    throw Error(Errc::IoError, "cannot decode PNG " + path.string() + ": " + png.message);
  DepthMap d{static_cast<int>(png.height), static_cast<int>(png.width), {}};
  d.values.reserve(buf.size());
  for (png_uint_16 v : buf) d.values.push_back(static_cast<double>(v) / 1000.0);
  return d;
}

void save_png_depth(const std::filesystem::path& path, const DepthMap& depth) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(depth.width);
  png.height = static_cast<png_uint_32>(depth.height);
  png.format = PNG_FORMAT_LINEAR_Y;
  std::vector<png_uint_16> buf;
  buf.reserve(depth.values.size());
  for (double v : depth.values) buf.push_back(static_cast<png_uint_16>(std::lround(std::clamp(v * 1000.0, 0.0, 65535.0))));
  if (png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr) == 0)
    throw Error(Errc::IoError, "cannot write PNG " + path.string() + ": " + png.message);
}

}  // namespace rvlm
