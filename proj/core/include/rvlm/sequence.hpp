#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rvlm/autograd.hpp"
#include "rvlm/connector.hpp"
#include "rvlm/data.hpp"
#include "rvlm/refiner.hpp"

namespace rvlm {

/// Byte-level vocabulary: ids 0-255 are raw bytes, specials follow.
namespace vocab {
inline constexpr int kImage = 256;
inline constexpr int kMaskRgb = 257;
inline constexpr int kMaskDepth = 258;
inline constexpr int kBos = 259;
inline constexpr int kEos = 260;
inline constexpr int kUser = 261;
inline constexpr int kAssistant = 262;
inline constexpr int kEnd = 263;
inline constexpr int kPad = 264;
inline constexpr int kSize = 265;

inline constexpr std::array<std::string_view, 9> kSpecialText = {
    "<image>", "<mask_rgb>", "<mask_depth>", "<bos>", "<eos>", "<|user|>", "<|assistant|>", "<|end|>", "<pad>"};

constexpr bool is_special(int id) noexcept { return id >= kImage && id < kSize; }
std::string_view special_text(int id);
}  // namespace vocab

/// Special markers are matched as whole units before falling back to bytes.
std::vector<int> tokenize(std::string_view text);
std::string detokenize(std::span<const int> ids);

/// "<bos>" then "<|user|>"/"<|assistant|>" + text + "<|end|>" per turn.
/// Throws RoleOrderError unless roles alternate starting with the user.
std::string render_chat(const std::vector<Turn>& turns);
/// Replaces every "<mask>" with "<mask_rgb><mask_depth>", left to right.
std::string expand_mask_placeholders(std::string_view text);

/// Tokenized conversation with a per-token flag marking assistant content
/// (assistant text and the "<|end|>" closing each assistant turn).
struct ChatTokens {
  std::vector<int> ids;
  std::vector<std::uint8_t> assistant;
};

/// Same ids as tokenize(expand_mask_placeholders(render_chat(turns))). With
/// `generation_prompt`, the turns must end on a user turn and "<|assistant|>"
/// is appended.
ChatTokens tokenize_conversation(const std::vector<Turn>& turns, bool generation_prompt = false);

struct PositionTag {
  enum class Kind { Text, ImageToken, RegionRgb, RegionDepth };
  Kind kind = Kind::Text;
  int region = -1;
  friend bool operator==(const PositionTag&, const PositionTag&) = default;
};

/// Everything about an assembled sequence except the embedding values.
/// targets[i] is the token at position i+1 and is meaningful only where
/// loss_mask[i] == 1.
struct SequenceLayout {
  std::vector<PositionTag> provenance;
  std::vector<int> token_ids;  ///< token at each text position, -1 elsewhere
  std::vector<std::uint8_t> loss_mask;
  std::vector<int> targets;
  int n_vis = 0;
  int n_masks = 0;

  int length() const noexcept { return static_cast<int>(provenance.size()); }
};

/// Expands placeholders into positions. Throws MissingImageTokens when an
/// "<image>" has no visual tokens (or tokens arrive without "<image>") and
/// RegionCountMismatch when the region count differs from the marker pairs.
SequenceLayout layout_sequence(const ChatTokens& tokens, int n_vis, int n_regions);

struct AssembledSequence {
  Var embeddings;
  SequenceLayout layout;
};

/// Differentiable assembly. `image_tokens` is n_vis x lm_dim, each region is
/// an (rgb, depth) pair of 1 x lm_dim nodes, `text_table` is vocab x lm_dim.
AssembledSequence assemble(const ChatTokens& tokens, std::optional<Var> image_tokens,
                           std::span<const std::pair<Var, Var>> regions, Var text_table);

struct EmbeddingSequence {
  Mat embeddings;
  SequenceLayout layout;

  int length() const noexcept { return embeddings.rows(); }
  int lm_dim() const noexcept { return embeddings.cols(); }
};

EmbeddingSequence assemble(const ConversationSample& sample, const TokenEmbeddings* image_tokens,
                           const std::vector<std::pair<RegionEmbedding, RegionEmbedding>>& regions,
                           const Mat& text_table);

}  // namespace rvlm
