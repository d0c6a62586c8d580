#include "rvlm/connector.hpp"

#include "rvlm/errors.hpp"

namespace rvlm {

std::vector<int> pixel_shuffle_index(int h, int w, int dim, int r) {
  const int oh = h / r, ow = w / r;
  std::vector<int> idx(static_cast<std::size_t>(h) * w * dim);
  std::size_t k = 0;
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (int di = 0; di < r; ++di)
        for (int dj = 0; dj < r; ++dj)
          for (int c = 0; c < dim; ++c) idx[k++] = ((i * r + di) * w + (j * r + dj)) * dim + c;
  return idx;
}

FeatureGrid pixel_shuffle(const FeatureGrid& grid, int r) {
  if (r < 1 || grid.height % r != 0 || grid.width % r != 0) {
    throw Error(Errc::IndivisibleFactor, "factor " + std::to_string(r) + " does not divide grid " +
                                             std::to_string(grid.height) + "x" + std::to_string(grid.width));
  }
  const int dim = grid.dim();
  const auto idx = pixel_shuffle_index(grid.height, grid.width, dim, r);
  FeatureGrid out{grid.modality, grid.height / r, grid.width / r, Mat((grid.height / r) * (grid.width / r), dim * r * r)};
  auto src = grid.values.flat();
  auto dst = out.values.flat();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = src[idx[i]];
  return out;
}

FeatureGrid pixel_unshuffle(const FeatureGrid& grid, int r) {
  if (r < 1 || grid.dim() % (r * r) != 0) {
    throw Error(Errc::IndivisibleChannels,
                "dim " + std::to_string(grid.dim()) + " is not divisible by " + std::to_string(r * r));
  }
  const int dim = grid.dim() / (r * r);
  const int h = grid.height * r, w = grid.width * r;
  const auto idx = pixel_shuffle_index(h, w, dim, r);
  FeatureGrid out{grid.modality, h, w, Mat(h * w, dim)};
  auto src = grid.values.flat();
  auto dst = out.values.flat();
  for (std::size_t i = 0; i < src.size(); ++i) dst[idx[i]] = src[i];
  return out;
}

Connector::Connector(Modality modality, int shuffle_factor, Parameter& weight, Parameter& bias)
    : modality_(modality), r_(shuffle_factor), weight_(&weight), bias_(&bias) {
  if (r_ < 1) throw Error(Errc::IndivisibleFactor, "shuffle factor must be >= 1");
  if (bias.value.rows() != 1 || bias.value.cols() != weight.value.cols())
    throw Error(Errc::ShapeError, "connector bias must be 1 x lm_dim");
}

void Connector::check(Modality modality, int h, int w, int dim) const {
  if (modality != modality_) {
    throw Error(Errc::ModalityMismatch, std::string(to_string(modality)) + " grid sent to " +
                                            std::string(to_string(modality_)) + " connector");
  }
  if (h % r_ != 0 || w % r_ != 0)
    throw Error(Errc::ShapeError, "connector factor " + std::to_string(r_) + " does not divide the grid");
  if (dim * r_ * r_ != in_dim())
    throw Error(Errc::ShapeError, "grid dim " + std::to_string(dim) + " incompatible with connector input " +
                                      std::to_string(in_dim()));
}

Var Connector::forward(Graph& g, Var grid, Modality modality, int h, int w) const {
  const int dim = grid.cols();
  check(modality, h, w, dim);
  Var shuffled = r_ == 1 ? grid : ag::permute(grid, (h / r_) * (w / r_), dim * r_ * r_, pixel_shuffle_index(h, w, dim, r_));
  return ag::add_row(ag::matmul(shuffled, g.param(*weight_)), g.param(*bias_));
}

TokenEmbeddings Connector::connect(const FeatureGrid& grid) const {
  check(grid.modality, grid.height, grid.width, grid.dim());
  Graph g;
  Var out = forward(g, g.constant(grid.values), grid.modality, grid.height, grid.width);
  return TokenEmbeddings{modality_, grid.height / r_, grid.width / r_, out.value()};
}

}  // namespace rvlm
