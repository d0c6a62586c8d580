#include "rvlm/sequence.hpp"

#include "rvlm/errors.hpp"

namespace rvlm {

std::string_view vocab::special_text(int id) {
  if (!is_special(id)) throw std::out_of_range("not a special token id: " + std::to_string(id));
  return kSpecialText[static_cast<std::size_t>(id - kImage)];
}

std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    int match = -1;
    std::size_t match_len = 0;
    if (text[pos] == '<') {
      for (int id = vocab::kImage; id < vocab::kSize; ++id) {
        const auto marker = vocab::special_text(id);
        if (marker.size() > match_len && text.substr(pos, marker.size()) == marker) {
          match = id;
          match_len = marker.size();
        }
      }
    }
    if (match >= 0) {
      ids.push_back(match);
      pos += match_len;
    } else {
      ids.push_back(static_cast<unsigned char>(text[pos]));
      ++pos;
    }
  }
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id >= 0 && id < 256) {
      out.push_back(static_cast<char>(static_cast<unsigned char>(id)));
    } else {
      out += vocab::special_text(id);
    }
  }
  return out;
}

namespace {

void check_roles(const std::vector<Turn>& turns) {
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Role expected = (i % 2 == 0) ? Role::User : Role::Assistant;
    if (turns[i].role != expected)
      throw Error(Errc::RoleOrderError, "turn " + std::to_string(i) + " breaks user/assistant alternation");
  }
}

}  // namespace

std::string render_chat(const std::vector<Turn>& turns) {
  check_roles(turns);
  std::string out(vocab::special_text(vocab::kBos));
  for (const auto& t : turns) {
    out += vocab::special_text(t.role == Role::User ? vocab::kUser : vocab::kAssistant);
    out += t.text;
    out += vocab::special_text(vocab::kEnd);
  }
  return out;
}

std::string expand_mask_placeholders(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  std::size_t pos = 0;
  for (std::size_t hit = text.find(kMaskPlaceholder); hit != std::string_view::npos;
       hit = text.find(kMaskPlaceholder, pos)) {
    out.append(text.substr(pos, hit - pos));
    out += "<mask_rgb><mask_depth>";
    pos = hit + kMaskPlaceholder.size();
  }
  out.append(text.substr(pos));
  return out;
}

ChatTokens tokenize_conversation(const std::vector<Turn>& turns, bool generation_prompt) {
  check_roles(turns);
  if (generation_prompt && (turns.empty() || turns.back().role != Role::User))
    throw Error(Errc::RoleOrderError, "generation prompt needs the conversation to end on a user turn");
  ChatTokens out;
  auto push = [&out](int id, bool assistant) {
    out.ids.push_back(id);
    out.assistant.push_back(assistant ? 1 : 0);
  };
  push(vocab::kBos, false);
  for (const auto& t : turns) {
    const bool is_assistant = t.role == Role::Assistant;
    push(is_assistant ? vocab::kAssistant : vocab::kUser, false);
    for (int id : tokenize(expand_mask_placeholders(t.text))) push(id, is_assistant);
    push(vocab::kEnd, is_assistant);
  }
  if (generation_prompt) push(vocab::kAssistant, false);
  return out;
}

SequenceLayout layout_sequence(const ChatTokens& tokens, int n_vis, int n_regions) {
  SequenceLayout lay;
  int n_rgb = 0, n_depth = 0, n_images = 0;
  std::vector<std::uint8_t> is_assistant_text;
  for (std::size_t t = 0; t < tokens.ids.size(); ++t) {
    const int id = tokens.ids[t];
    if (id == vocab::kImage) {
      ++n_images;
      if (n_vis <= 0) throw Error(Errc::MissingImageTokens, "<image> present but no visual tokens supplied");
      for (int k = 0; k < n_vis; ++k) {
        lay.provenance.push_back({PositionTag::Kind::ImageToken, -1});
        lay.token_ids.push_back(-1);
        is_assistant_text.push_back(0);
      }
    } else if (id == vocab::kMaskRgb || id == vocab::kMaskDepth) {
      const bool rgb = id == vocab::kMaskRgb;
      const int k = rgb ? n_rgb++ : n_depth++;
      if (k >= n_regions) {
        throw Error(Errc::RegionCountMismatch,
                    "more region markers than the " + std::to_string(n_regions) + " region embeddings supplied");
      }
      lay.provenance.push_back({rgb ? PositionTag::Kind::RegionRgb : PositionTag::Kind::RegionDepth, k});
      lay.token_ids.push_back(-1);
      is_assistant_text.push_back(0);
    } else {
      lay.provenance.push_back({PositionTag::Kind::Text, -1});
      lay.token_ids.push_back(id);
      is_assistant_text.push_back(tokens.assistant[t]);
    }
  }
  if (n_images == 0 && n_vis > 0) throw Error(Errc::MissingImageTokens, "visual tokens supplied without <image>");
  if (n_rgb != n_regions || n_depth != n_regions) {
    throw Error(Errc::RegionCountMismatch, std::to_string(n_rgb) + " rgb / " + std::to_string(n_depth) +
                                               " depth markers for " + std::to_string(n_regions) + " regions");
  }
  const int len = lay.length();
  lay.loss_mask.assign(len, 0);
  lay.targets.assign(len, -1);
  for (int i = 0; i + 1 < len; ++i) {
    if (is_assistant_text[i + 1] != 0) {
      lay.loss_mask[i] = 1;
      lay.targets[i] = lay.token_ids[i + 1];
    }
  }
  lay.n_vis = n_images > 0 ? n_vis : 0;
  lay.n_masks = n_regions;
  return lay;
}

AssembledSequence assemble(const ChatTokens& tokens, std::optional<Var> image_tokens,
                           std::span<const std::pair<Var, Var>> regions, Var text_table) {
  const int n_vis = image_tokens ? image_tokens->rows() : 0;
  SequenceLayout lay = layout_sequence(tokens, n_vis, static_cast<int>(regions.size()));
  const int dim = text_table.cols();

  std::vector<int> text_ids;
  for (int id : lay.token_ids)
    if (id >= 0) text_ids.push_back(id);
  std::optional<Var> text_rows;
  if (!text_ids.empty()) text_rows = ag::gather_rows(text_table, text_ids);

  std::vector<ag::RowRef> refs;
  refs.reserve(lay.provenance.size());
  int text_k = 0, vis_k = 0;
  for (const auto& tag : lay.provenance) {
    switch (tag.kind) {
      case PositionTag::Kind::Text: refs.push_back({*text_rows, text_k++}); break;
      case PositionTag::Kind::ImageToken: refs.push_back({*image_tokens, vis_k++}); break;
      case PositionTag::Kind::RegionRgb: refs.push_back({regions[tag.region].first, 0}); break;
      case PositionTag::Kind::RegionDepth: refs.push_back({regions[tag.region].second, 0}); break;
    }
  }
  return AssembledSequence{ag::stack_rows(refs, dim), std::move(lay)};
}

EmbeddingSequence assemble(const ConversationSample& sample, const TokenEmbeddings* image_tokens,
                           const std::vector<std::pair<RegionEmbedding, RegionEmbedding>>& regions,
                           const Mat& text_table) {
  Graph g;
  std::optional<Var> img;
  if (image_tokens != nullptr) {
    if (image_tokens->modality != Modality::Rgb)
      throw Error(Errc::ModalityMismatch, "image tokens must come from the rgb pathway");
    img = g.constant(image_tokens->values);
  }
  std::vector<std::pair<Var, Var>> reg;
  for (const auto& [rgb, depth] : regions) {
    if (rgb.modality != Modality::Rgb || depth.modality != Modality::Depth)
      throw Error(Errc::ModalityMismatch, "region pairs must be (rgb, depth)");
    reg.emplace_back(g.constant(rgb.values), g.constant(depth.values));
  }
  auto out = assemble(tokenize_conversation(sample.turns), img, reg, g.constant(text_table));
  return EmbeddingSequence{out.embeddings.value(), std::move(out.layout)};
}

}  // namespace rvlm
