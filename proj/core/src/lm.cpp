#include "rvlm/lm.hpp"

#include <cmath>

#include "rvlm/errors.hpp"

namespace rvlm {

void validate(const LmConfig& c) {
  auto fail = [](const std::string& what) { throw Error(Errc::InvalidConfig, "lm: " + what); };
  if (c.lm_dim <= 0 || c.n_layers <= 0 || c.n_heads <= 0 || c.ffn_mult <= 0 || c.max_seq <= 0)
    fail("dimensions must be positive");
  if (c.lm_dim % c.n_heads != 0) fail("n_heads must divide lm_dim");
  if (c.vocab_size < vocab::kSize) fail("vocab_size must be >= " + std::to_string(vocab::kSize));
}

LanguageModel::LanguageModel(const LmConfig& cfg, ParamStore& store) : cfg_(cfg) {
  validate(cfg_);
  const std::string group(groups::kLanguageModel);
  const int d = cfg_.lm_dim;
  const int f = d * cfg_.ffn_mult;
  std::mt19937_64 rng(cfg_.seed);
  // Embedding rows start near unit RMS so positions stay visible next to
  // connector outputs, which arrive at roughly unit scale.
  const double std_embed = 1.0 / std::sqrt(static_cast<double>(d));
  // Hidden weights use 1/sqrt(fan_in); residual outputs are further scaled by
  // 1/sqrt(2 * n_layers). At this width a fixed 0.02 leaves attention almost
  // uniform at init and region slots indistinguishable for hundreds of steps.
  const double std_w = 1.0 / std::sqrt(static_cast<double>(d));
  const double depth_scale = 1.0 / std::sqrt(2.0 * cfg_.n_layers);
  const double std_wo = depth_scale / std::sqrt(static_cast<double>(d));
  const double std_w2 = depth_scale / std::sqrt(static_cast<double>(f));

  auto make = [&](const std::string& name, int rows, int cols, double stddev) {
    Parameter& p = store.add("lm." + name, group, rows, cols);
    if (stddev > 0.0) init_normal(p.value, stddev, rng);
    return &p;
  };
  auto ones = [&](const std::string& name, int cols) {
    Parameter* p = make(name, 1, cols, 0.0);
    p->value.fill(1.0);
    return p;
  };

  tok_ = make("tok_embed", cfg_.vocab_size, d, std_embed);
  pos_ = make("pos_embed", cfg_.max_seq, d, std_embed);
  for (int l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = "layer" + std::to_string(l) + ".";
    Layer layer{};
    layer.attn_norm = ones(pre + "attn_norm", d);
    layer.wqkv = make(pre + "wqkv", d, 3 * d, std_w);
    layer.wo = make(pre + "wo", d, d, std_wo);
    layer.ffn_norm = ones(pre + "ffn_norm", d);
    layer.w1 = make(pre + "w1", d, f, std_w);
    layer.b1 = make(pre + "b1", 1, f, 0.0);
    layer.w2 = make(pre + "w2", f, d, std_w2);
    layer.b2 = make(pre + "b2", 1, d, 0.0);
    layers_.push_back(layer);
  }
  final_norm_ = ones("final_norm", d);
  if (!cfg_.tie_embeddings) head_ = make("head", cfg_.vocab_size, d, std_w);
}

Var LanguageModel::forward(Graph& g, Var embeddings, std::optional<Var> table) const {
  const int len = embeddings.rows();
  const int d = cfg_.lm_dim;
  if (len > cfg_.max_seq) {
    throw Error(Errc::SequenceTooLong,
                "sequence of length " + std::to_string(len) + " exceeds max_seq " + std::to_string(cfg_.max_seq));
  }
  if (len == 0 || embeddings.cols() != d) throw Error(Errc::ShapeError, "embeddings must be length x lm_dim");

  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  Var x = ag::add(embeddings, ag::gather_rows(g.param(*pos_), positions));

  const int heads = cfg_.n_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const Layer& layer : layers_) {
    Var h = ag::rms_norm(x, g.param(*layer.attn_norm));
    Var qkv = ag::matmul(h, g.param(*layer.wqkv));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int hd = 0; hd < heads; ++hd) {
      Var q = ag::col_slice(qkv, hd * dh, dh);
      Var k = ag::col_slice(qkv, d + hd * dh, dh);
      Var v = ag::col_slice(qkv, 2 * d + hd * dh, dh);
      Var p = ag::causal_softmax(ag::matmul_nt(q, k), scale);
      outs.push_back(ag::matmul(p, v));
    }
    Var attn = heads == 1 ? outs.front() : ag::concat_cols(outs);
    x = ag::add(x, ag::matmul(attn, g.param(*layer.wo)));

    Var h2 = ag::rms_norm(x, g.param(*layer.ffn_norm));
    Var hidden = ag::silu(ag::add_row(ag::matmul(h2, g.param(*layer.w1)), g.param(*layer.b1)));
    x = ag::add(x, ag::add_row(ag::matmul(hidden, g.param(*layer.w2)), g.param(*layer.b2)));
  }
  Var out = ag::rms_norm(x, g.param(*final_norm_));
  Var head = head_ != nullptr ? g.param(*head_) : (table ? *table : g.param(*tok_));
  return ag::matmul_nt(out, head);
}

Mat LanguageModel::forward(const Mat& embeddings) const {
  Graph g;
  return forward(g, g.constant(embeddings)).value();
}

int argmax_lowest(std::span<const double> row) {
  int best = 0;
  for (int i = 1; i < static_cast<int>(row.size()); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

std::vector<int> LanguageModel::generate(const Mat& prefix, int max_new) const {
  if (max_new < 1) throw Error(Errc::ShapeError, "max_new must be >= 1");
  const int d = cfg_.lm_dim;
  std::vector<double> rows(prefix.storage());
  int len = prefix.rows();
  std::vector<int> out;
  for (int step = 0; step < max_new; ++step) {
    const Mat logits = forward(Mat(len, d, rows));
    const int next = argmax_lowest(std::span<const double>(logits.row(len - 1), logits.cols()));
    out.push_back(next);
    if (next == vocab::kEnd) break;
    const double* e = tok_->value.row(next);
    rows.insert(rows.end(), e, e + d);
    ++len;
  }
  return out;
}

Var masked_cross_entropy_sum(Var logits, const SequenceLayout& layout) {
  std::vector<int> targets(layout.targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) targets[i] = layout.loss_mask[i] != 0 ? layout.targets[i] : 0;
  return ag::cross_entropy_sum(logits, targets, layout.loss_mask);
}

double loss(const Mat& logits, std::span<const int> targets, std::span<const std::uint8_t> loss_mask) {
  if (static_cast<int>(targets.size()) != logits.rows() || static_cast<int>(loss_mask.size()) != logits.rows())
    throw Error(Errc::ShapeError, "targets and loss mask must have one entry per logits row");
  std::size_t active = 0;
  for (auto m : loss_mask) active += m != 0 ? 1 : 0;
  if (active == 0) throw Error(Errc::EmptyLossMask, "no position carries a loss");
  Graph g;
  Var total = ag::cross_entropy_sum(g.constant(logits), targets, loss_mask);
  return total.value()(0, 0) / static_cast<double>(active);
}

}  // namespace rvlm
