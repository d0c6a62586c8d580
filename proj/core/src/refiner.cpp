#include "rvlm/refiner.hpp"

#include "rvlm/errors.hpp"

namespace rvlm {

Refiner::Refiner(Modality modality, std::vector<RefinerLayer> layers)
    : modality_(modality), layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(Errc::ShapeError, "refiner needs at least one layer");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight->value.rows() % 16 != 0) throw Error(Errc::ShapeError, "refiner weight rows must be 16*in_ch");
    if (l.bias->value.rows() != 1 || l.bias->value.cols() != l.out_ch())
      throw Error(Errc::ShapeError, "refiner bias must be 1 x out_ch");
    if (i > 0 && layers_[i - 1].out_ch() != l.in_ch())
      throw Error(Errc::ShapeError, "refiner channel chain broken at layer " + std::to_string(i));
  }
}

Var Refiner::forward(Graph& g, Var tokens, Modality modality, int h, int w) const {
  if (modality != modality_) {
    throw Error(Errc::ModalityMismatch, std::string(to_string(modality)) + " tokens sent to " +
                                            std::string(to_string(modality_)) + " refiner");
  }
  if (tokens.rows() != h * w || tokens.cols() != layers_.front().in_ch())
    throw Error(Errc::ShapeError, "refiner input does not match its grid shape or channel count");
  Var x = tokens;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = ag::transpose_conv2d(x, h, w, g.param(*layers_[i].weight), g.param(*layers_[i].bias));
    h *= 2;
    w *= 2;
    if (i + 1 < layers_.size()) x = ag::relu(x);
  }
  return x;
}

FeatureGrid Refiner::refine(const TokenEmbeddings& tokens) const {
  Graph g;
  Var out = forward(g, g.constant(tokens.values), tokens.modality, tokens.grid_h, tokens.grid_w);
  return FeatureGrid{modality_, tokens.grid_h * upsample(), tokens.grid_w * upsample(), out.value()};
}

BinaryGrid resample_mask(const BinaryGrid& mask, int height, int width) {
  BinaryGrid out{height, width, std::vector<std::uint8_t>(static_cast<std::size_t>(height) * width, 0)};
  for (int i = 0; i < height; ++i) {
    const int sy = static_cast<int>((2LL * i + 1) * mask.height / (2LL * height));
    for (int j = 0; j < width; ++j) {
      const int sx = static_cast<int>((2LL * j + 1) * mask.width / (2LL * width));
      out.cells[static_cast<std::size_t>(i) * width + j] = mask.at(sy, sx);
    }
  }
  return out;
}

std::vector<int> pooling_rows(const BinaryGrid& mask, int height, int width) {
  const BinaryGrid r = resample_mask(mask, height, width);
  std::vector<int> rows;
  for (int k = 0; k < height * width; ++k)
    if (r.cells[k] != 0) rows.push_back(k);
  if (rows.empty()) {
    throw Error(Errc::EmptyRegion, "mask " + std::to_string(mask.height) + "x" + std::to_string(mask.width) +
                                       " has no active cell at " + std::to_string(height) + "x" +
                                       std::to_string(width));
  }
  return rows;
}

Var mask_pool(Var refined, const BinaryGrid& mask, int height, int width) {
  if (refined.rows() != height * width) throw Error(Errc::ShapeError, "refined grid rows != height*width");
  const auto rows = pooling_rows(mask, height, width);
  return ag::row_mean(refined, rows);
}

RegionEmbedding mask_pool(const FeatureGrid& refined, const RegionMask& mask) {
  Graph g;
  Var out = mask_pool(g.constant(refined.values), decode_mask(mask), refined.height, refined.width);
  return RegionEmbedding{refined.modality, out.value()};
}

}  // namespace rvlm
