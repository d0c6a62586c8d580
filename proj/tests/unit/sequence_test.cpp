#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "rvlm/errors.hpp"
#include "rvlm/lm.hpp"
#include "rvlm/sequence.hpp"
#include "support.hpp"

namespace rvlm {
namespace {

using testing::random_mat;
using Kind = PositionTag::Kind;

template <class F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an rvlm::Error";
  return Errc::IoError;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Turn user(std::string t) { return Turn{Role::User, std::move(t)}; }
Turn assistant(std::string t) { return Turn{Role::Assistant, std::move(t)}; }

// Random valid UTF-8 over 1-4 byte code points, sprinkled with markers and
// marker-like fragments.
std::string random_utf8(std::mt19937_64& rng) {
  static const std::vector<std::string> pieces = {"<image>", "<mask>", "<|end|>", "<|user", "<mask_rgb>", "<", ">", "|"};
  std::string s;
  const int n = static_cast<int>(rng() % 40);
  for (int i = 0; i < n; ++i) {
    const auto kind = rng() % 6;
    if (kind == 0) {
      s += pieces[rng() % pieces.size()];
      continue;
    }
    std::uint32_t cp;
    switch (kind) {
      case 1: cp = 0x80 + rng() % (0x800 - 0x80); break;
      case 2: cp = 0x800 + rng() % (0xD800 - 0x800); break;
      case 3: cp = 0x10000 + rng() % (0x110000 - 0x10000); break;
      default: cp = rng() % 0x80; break;
    }
    if (cp < 0x80) {
      s += static_cast<char>(cp);
    } else if (cp < 0x800) {
      s += static_cast<char>(0xC0 | (cp >> 6));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
      s += static_cast<char>(0xE0 | (cp >> 12));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
      s += static_cast<char>(0xF0 | (cp >> 18));
      s += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
      s += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
      s += static_cast<char>(0x80 | (cp & 0x3F));
    }
  }
  return s;
}

TEST(Tokenize, EmptyAndWholeUnitSpecials) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(tokenize("<image>"), std::vector<int>{vocab::kImage});
  EXPECT_EQ(tokenize("a<|end|>"), (std::vector<int>{'a', vocab::kEnd}));
  // "<mask>" is not a vocabulary entry; it stays bytes until expanded.
  EXPECT_EQ(tokenize("<mask>").size(), 6u);
  EXPECT_EQ(tokenize("<mask_rgb><mask_depth>"), (std::vector<int>{vocab::kMaskRgb, vocab::kMaskDepth}));
}

TEST(Tokenize, SpecialIdsAreStableAndDisjointFromBytes) {
  for (int id = vocab::kImage; id < vocab::kSize; ++id) {
    EXPECT_TRUE(vocab::is_special(id));
    EXPECT_EQ(tokenize(vocab::special_text(id)), std::vector<int>{id});
  }
  for (int b = 0; b < 256; ++b) EXPECT_FALSE(vocab::is_special(b));
  EXPECT_EQ(vocab::kSize, 256 + 9);
}

TEST(Tokenize, RandomUtf8RoundTrips) {
  std::mt19937_64 rng(2024);
  for (int i = 0; i < 1000; ++i) {
    const std::string s = random_utf8(rng);
    const auto ids = tokenize(s);
    EXPECT_EQ(detokenize(ids), s);
    for (int id : ids) EXPECT_TRUE(id >= 0 && id < vocab::kSize);
  }
}

TEST(RenderChat, TwoTurns) {
  EXPECT_EQ(render_chat({user("hi"), assistant("yo")}), "<bos><|user|>hi<|end|><|assistant|>yo<|end|>");
}

TEST(RenderChat, SingleUserTurn) {
  const auto s = render_chat({user("where?")});
  EXPECT_EQ(s, "<bos><|user|>where?<|end|>");
  EXPECT_EQ(s.find("<|assistant|>"), std::string::npos);
}

TEST(RenderChat, GoldenThreeTurnFile) {
  const auto j = nlohmann::json::parse(read_file(RVLM_FIXTURE_DIR "/chat_three_turns.json"));
  std::vector<Turn> turns;
  for (const auto& t : j) turns.push_back(Turn{t.at("role") == "user" ? Role::User : Role::Assistant, t.at("text")});
  EXPECT_EQ(render_chat(turns), read_file(RVLM_FIXTURE_DIR "/chat_three_turns.golden"));
}

TEST(RenderChat, RoleOrder) {
  EXPECT_EQ(code_of([] { render_chat({assistant("x")}); }), Errc::RoleOrderError);
  EXPECT_EQ(code_of([] { render_chat({user("a"), user("b")}); }), Errc::RoleOrderError);
  EXPECT_EQ(code_of([] { tokenize_conversation({user("a"), assistant("b")}, true); }), Errc::RoleOrderError);
}

TEST(ExpandMasks, Rules) {
  EXPECT_EQ(expand_mask_placeholders("a <mask> b"), "a <mask_rgb><mask_depth> b");
  EXPECT_EQ(expand_mask_placeholders("plain text"), "plain text");
  EXPECT_EQ(expand_mask_placeholders("p <mask> q <mask>"), "p <mask_rgb><mask_depth> q <mask_rgb><mask_depth>");
}

TEST(TokenizeConversation, AgreesWithComposedPipelineAndMasksAssistant) {
  const std::vector<Turn> turns = {user("<image>Is <mask> left?"), assistant("yes"), user("sure?"), assistant("no")};
  const auto ct = tokenize_conversation(turns);
  EXPECT_EQ(ct.ids, tokenize(expand_mask_placeholders(render_chat(turns))));
  ASSERT_EQ(ct.assistant.size(), ct.ids.size());
  std::string flagged;
  for (std::size_t i = 0; i < ct.ids.size(); ++i)
    if (ct.assistant[i]) flagged += detokenize(std::span<const int>(&ct.ids[i], 1));
  EXPECT_EQ(flagged, "yes<|end|>no<|end|>");
  const auto prompt = tokenize_conversation({user("hi")}, true);
  EXPECT_EQ(prompt.ids.back(), vocab::kAssistant);
}

TEST(Layout, NoPlaceholdersIsAllText) {
  const auto ct = tokenize_conversation({user("hello"), assistant("ok")});
  const auto lay = layout_sequence(ct, 0, 0);
  EXPECT_EQ(lay.length(), static_cast<int>(ct.ids.size()));
  for (const auto& t : lay.provenance) EXPECT_EQ(t.kind, Kind::Text);
}

TEST(Layout, LengthFormulaExample) {
  // 20 tokens before expansion: <bos> <|user|> <image> "Is the " <mask> " near " <mask> "?" <|end|>
  const auto ct = tokenize_conversation({user("<image>Is the <mask> near <mask>?")});
  ASSERT_EQ(ct.ids.size(), 20u + 2u);
  const auto lay = layout_sequence(ct, 64, 2);
  EXPECT_EQ(lay.length(), 20 - 3 + 64 + 4);
  int text = 0, img = 0, rgb = 0, depth = 0;
  int first_img = -1, last_img = -1;
  for (int i = 0; i < lay.length(); ++i) {
    switch (lay.provenance[i].kind) {
      case Kind::Text: ++text; break;
      case Kind::ImageToken:
        ++img;
        if (first_img < 0) first_img = i;
        last_img = i;
        break;
      case Kind::RegionRgb:
        ++rgb;
        EXPECT_EQ(lay.provenance[i + 1], (PositionTag{Kind::RegionDepth, lay.provenance[i].region}));
        break;
      case Kind::RegionDepth: ++depth; break;
    }
  }
  EXPECT_EQ(text, 17);
  EXPECT_EQ(img, 64);
  EXPECT_EQ(last_img - first_img + 1, 64);
  EXPECT_EQ(rgb, 2);
  EXPECT_EQ(depth, 2);
}

TEST(Layout, Errors) {
  const auto with_img = tokenize_conversation({user("<image><mask>")});
  EXPECT_EQ(code_of([&] { layout_sequence(with_img, 0, 1); }), Errc::MissingImageTokens);
  EXPECT_EQ(code_of([&] { layout_sequence(with_img, 4, 2); }), Errc::RegionCountMismatch);
  const auto no_img = tokenize_conversation({user("text")});
  EXPECT_EQ(code_of([&] { layout_sequence(no_img, 4, 0); }), Errc::MissingImageTokens);
}

TEST(Layout, LossMaskCoversAssistantContentAndEnd) {
  const std::vector<Turn> turns = {user("<image>q <mask>"), assistant("ab"), user("c"), assistant("d")};
  const auto lay = layout_sequence(tokenize_conversation(turns), 3, 1);
  std::string predicted;
  for (int i = 0; i < lay.length(); ++i) {
    if (!lay.loss_mask[i]) continue;
    ASSERT_EQ(lay.provenance[i + 1].kind, Kind::Text);
    EXPECT_EQ(lay.targets[i], lay.token_ids[i + 1]);
    predicted += detokenize(std::span<const int>(&lay.targets[i], 1));
  }
  EXPECT_EQ(predicted, "ab<|end|>d<|end|>");
}

struct AssembleFixture {
  ConversationSample sample;
  TokenEmbeddings image;
  std::vector<std::pair<RegionEmbedding, RegionEmbedding>> regions;
  Mat table;
  AssembleFixture() {
    std::mt19937_64 rng(5);
    sample.turns = {user("<image>Is <mask> left of <mask>?"), assistant("yes")};
    image = TokenEmbeddings{Modality::Rgb, 2, 2, random_mat(4, 6, rng)};
    for (int k = 0; k < 2; ++k)
      regions.emplace_back(RegionEmbedding{Modality::Rgb, random_mat(1, 6, rng)},
                           RegionEmbedding{Modality::Depth, random_mat(1, 6, rng)});
    table = random_mat(vocab::kSize, 6, rng);
  }
};

TEST(Assemble, RowsComeFromTheirSources) {
  AssembleFixture f;
  const auto seq = assemble(f.sample, &f.image, f.regions, f.table);
  ASSERT_EQ(seq.length(), seq.layout.length());
  int vis = 0;
  for (int i = 0; i < seq.length(); ++i) {
    const auto& tag = seq.layout.provenance[i];
    const double* want = nullptr;
    switch (tag.kind) {
      case Kind::Text: want = f.table.row(seq.layout.token_ids[i]); break;
      case Kind::ImageToken: want = f.image.values.row(vis++); break;
      case Kind::RegionRgb: want = f.regions[tag.region].first.values.row(0); break;
      case Kind::RegionDepth: want = f.regions[tag.region].second.values.row(0); break;
    }
    EXPECT_TRUE(std::equal(want, want + 6, seq.embeddings.row(i))) << i;
  }
}

TEST(Assemble, PerturbingOneRegionTouchesOnePosition) {
  AssembleFixture f;
  const auto base = assemble(f.sample, &f.image, f.regions, f.table);
  f.regions[1].first.values(0, 3) += 0.5;
  const auto moved = assemble(f.sample, &f.image, f.regions, f.table);
  int changed = 0;
  for (int i = 0; i < base.length(); ++i) {
    if (std::equal(base.embeddings.row(i), base.embeddings.row(i) + 6, moved.embeddings.row(i))) continue;
    ++changed;
    EXPECT_EQ(base.layout.provenance[i], (PositionTag{Kind::RegionRgb, 1}));
  }
  EXPECT_EQ(changed, 1);
}

TEST(Assemble, ModalityAndCountChecks) {
  AssembleFixture f;
  std::swap(f.regions[0].first, f.regions[0].second);
  EXPECT_EQ(code_of([&] { assemble(f.sample, &f.image, f.regions, f.table); }), Errc::ModalityMismatch);
  AssembleFixture g;
  g.regions.pop_back();
  EXPECT_EQ(code_of([&] { assemble(g.sample, &g.image, g.regions, g.table); }), Errc::RegionCountMismatch);
  EXPECT_EQ(code_of([&] { assemble(g.sample, nullptr, {}, g.table); }), Errc::MissingImageTokens);
}

TEST(Assemble, GradientsRouteToSubstitutedSources) {
  AssembleFixture f;
  const auto ct = tokenize_conversation(f.sample.turns);
  std::mt19937_64 rng(9);
  Graph g;
  const Var img = g.input(f.image.values);
  std::vector<std::pair<Var, Var>> regs;
  for (const auto& [r, d] : f.regions) regs.emplace_back(g.input(r.values), g.input(d.values));
  const auto out = assemble(ct, img, regs, g.constant(f.table));
  const Mat probe = random_mat(out.embeddings.rows(), 6, rng);
  g.backward(ag::weighted_sum(out.embeddings, probe));
  int vis = 0;
  for (int i = 0; i < out.layout.length(); ++i) {
    const auto& tag = out.layout.provenance[i];
    Mat grad;
    int row = 0;
    if (tag.kind == Kind::ImageToken) {
      grad = g.grad(img);
      row = vis++;
    } else if (tag.kind == Kind::RegionRgb) {
      grad = g.grad(regs[tag.region].first);
    } else if (tag.kind == Kind::RegionDepth) {
      grad = g.grad(regs[tag.region].second);
    } else {
      continue;
    }
    for (int c = 0; c < 6; ++c) EXPECT_EQ(grad(row, c), probe(i, c));
  }
}

TEST(Assemble, NoGradientAtUnmaskedLogits) {
  const auto lay = layout_sequence(tokenize_conversation({user("ab"), assistant("cd"), user("e")}), 0, 0);
  std::mt19937_64 rng(10);
  Graph g;
  const Var logits = g.input(random_mat(lay.length(), vocab::kSize, rng));
  g.backward(masked_cross_entropy_sum(logits, lay));
  const Mat grad = g.grad(logits);
  for (int i = 0; i < lay.length(); ++i) {
    double norm = 0.0;
    for (int v = 0; v < vocab::kSize; ++v) norm += std::abs(grad(i, v));
    if (lay.loss_mask[i])
      EXPECT_GT(norm, 0.0);
    else
      EXPECT_EQ(norm, 0.0) << i;
  }
}

}  // namespace
}  // namespace rvlm
