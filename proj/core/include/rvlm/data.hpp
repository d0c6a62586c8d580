#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "rvlm/question_type.hpp"

namespace rvlm {

/// H x W x 3 image, interleaved channels, values in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x, int c) const { return values[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  friend bool operator==(const Image&, const Image&) = default;
};

/// H x W metric depth in meters.
struct DepthMap {
  int height = 0;
  int width = 0;
  std::vector<double> values;

  double at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const DepthMap&, const DepthMap&) = default;
};

/// Row-major run lengths; the first run counts zeros and may be empty.
struct RleCounts {
  std::vector<std::int64_t> counts;
  friend bool operator==(const RleCounts&, const RleCounts&) = default;
};

/// Dense 0/1 cells, row-major.
struct Bitmap {
  std::vector<std::uint8_t> cells;
  friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

struct RegionMask {
  int height = 0;
  int width = 0;
  std::variant<RleCounts, Bitmap> payload;
  friend bool operator==(const RegionMask&, const RegionMask&) = default;
};

/// Decoded binary mask.
struct BinaryGrid {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> cells;

  std::uint8_t at(int y, int x) const { return cells[static_cast<std::size_t>(y) * width + x]; }
  std::size_t active() const;
  friend bool operator==(const BinaryGrid&, const BinaryGrid&) = default;
};

/// Throws Errc::LengthMismatch when runs do not cover height*width, and
/// Errc::MalformedRecord for negative runs or non-binary bitmap cells.
BinaryGrid decode_mask(const RegionMask& mask);
/// Canonical run-length form: every run after the first is non-empty.
RegionMask encode_mask(const BinaryGrid& grid);

enum class Role { User, Assistant };

struct Turn {
  Role role = Role::User;
  std::string text;
  friend bool operator==(const Turn&, const Turn&) = default;
};

struct ConversationSample {
  std::string id;
  Image image;
  std::optional<DepthMap> depth;
  std::vector<RegionMask> masks;
  std::vector<Turn> turns;
  std::optional<QuestionType> category;
  friend bool operator==(const ConversationSample&, const ConversationSample&) = default;
};

inline constexpr std::string_view kImagePlaceholder = "<image>";
inline constexpr std::string_view kMaskPlaceholder = "<mask>";

std::size_t count_occurrences(std::string_view text, std::string_view needle);

/// Checks every sample invariant; throws MaskCountMismatch, MissingDepth or
/// MalformedRecord (line 0 when the sample did not come from a file).
void validate_sample(const ConversationSample& sample, std::size_t line_no = 0);

/// Line-delimited records. Blank lines are skipped; relative image/depth paths
/// resolve against `base_dir`.
ConversationSample parse_record(const nlohmann::json& record, const std::filesystem::path& base_dir,
                                std::size_t line_no);
std::vector<ConversationSample> load_dataset(const std::filesystem::path& path);

nlohmann::json to_json(const ConversationSample& sample);
/// One record per line, images and depth inline, trailing newline.
std::string serialize_dataset(const std::vector<ConversationSample>& samples);
void save_dataset(const std::filesystem::path& path, const std::vector<ConversationSample>& samples);

/// 8-bit RGB PNG -> values / 255.
Image load_png_rgb(const std::filesystem::path& path);
void save_png_rgb(const std::filesystem::path& path, const Image& image);
/// 16-bit grayscale PNG holding millimeters -> meters.
DepthMap load_png_depth(const std::filesystem::path& path);
void save_png_depth(const std::filesystem::path& path, const DepthMap& depth);

}  // namespace rvlm
