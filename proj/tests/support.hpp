#pragma once

// Independent reference implementations used as test oracles, plus a
// central-difference gradient checker. Nothing here calls the library's
// kernels for the quantity under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "rvlm/autograd.hpp"
#include "rvlm/data.hpp"
#include "rvlm/params.hpp"
#include "rvlm/tensor.hpp"

namespace rvlm::testing {

inline Mat random_mat(int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Mat m(rows, cols);
  for (double& v : m.flat()) v = dist(rng);
  return m;
}

/// Plain nested loops over (i, j, di, dj, c) for an h x w x c grid stored as
/// (h*w) x c.
inline std::vector<double> shuffle_oracle(const std::vector<double>& in, int h, int w, int c, int r) {
  const int oh = h / r, ow = w / r, oc = c * r * r;
  std::vector<double> out(static_cast<std::size_t>(oh) * ow * oc);
  for (int i = 0; i < oh; ++i)
    for (int j = 0; j < ow; ++j)
      for (int di = 0; di < r; ++di)
        for (int dj = 0; dj < r; ++dj)
          for (int k = 0; k < c; ++k) {
            const int y = i * r + di, x = j * r + dj;
            out[(static_cast<std::size_t>(i) * ow + j) * oc + (di * r + dj) * c + k] =
                in[(static_cast<std::size_t>(y) * w + x) * c + k];
          }
  return out;
}

/// Gather form of a stride-2, padding-1, 4x4 transposed convolution: each
/// output cell searches for the input cells and taps that reach it.
inline Mat tconv_oracle(const Mat& x, int h, int w, const Mat& weight, const Mat& bias) {
  const int cin = x.cols(), cout = weight.cols();
  Mat out(4 * h * w, cout);
  for (int oy = 0; oy < 2 * h; ++oy)
    for (int ox = 0; ox < 2 * w; ++ox)
      for (int co = 0; co < cout; ++co) {
        double s = bias(0, co);
        for (int ky = 0; ky < 4; ++ky)
          for (int kx = 0; kx < 4; ++kx) {
            const int ny = oy + 1 - ky, nx = ox + 1 - kx;
            if (ny % 2 != 0 || nx % 2 != 0) continue;
            const int iy = ny / 2, ix = nx / 2;
            if (ny < 0 || nx < 0 || iy >= h || ix >= w) continue;
            for (int ci = 0; ci < cin; ++ci) s += x(iy * w + ix, ci) * weight((ky * 4 + kx) * cin + ci, co);
          }
        out(oy * 2 * w + ox, co) = s;
      }
  return out;
}

/// Nearest-neighbour resample written from the cell-centre definition.
inline std::vector<std::uint8_t> resample_oracle(const BinaryGrid& m, int h, int w) {
  std::vector<std::uint8_t> out(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double cy = (i + 0.5) * m.height / h;
      const double cx = (j + 0.5) * m.width / w;
      out[static_cast<std::size_t>(i) * w + j] = m.at(static_cast<int>(std::floor(cy)), static_cast<int>(std::floor(cx)));
    }
  return out;
}

/// Masked mean visiting the selected cells in a shuffled order.
inline std::vector<double> masked_mean_oracle(const Mat& grid, const std::vector<std::uint8_t>& sel,
                                              std::mt19937_64& rng) {
  std::vector<int> idx;
  for (int k = 0; k < static_cast<int>(sel.size()); ++k)
    if (sel[k] != 0) idx.push_back(k);
  std::shuffle(idx.begin(), idx.end(), rng);
  std::vector<double> out(grid.cols(), 0.0);
  for (int k : idx)
    for (int c = 0; c < grid.cols(); ++c) out[c] += grid(k, c);
  for (double& v : out) v /= static_cast<double>(idx.size());
  return out;
}

/// -log(exp(z_t) / sum exp(z)) computed with long double and no shift.
inline double ce_oracle(const double* row, int n, int target) {
  long double sum = 0.0L;
  for (int k = 0; k < n; ++k) sum += std::exp(static_cast<long double>(row[k]));
  return static_cast<double>(-(static_cast<long double>(row[target]) - std::log(sum)));
}

inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
};

/// Compares analytic parameter gradients with central differences on a random
/// `fraction` of the entries of every parameter in `groups` (at least one
/// entry per parameter). `loss` must build a 1x1 node from scratch.
inline GradCheck check_param_grads(ParamStore& ps, const GroupSet& groups, const std::function<Var(Graph&)>& loss,
                                   double fraction, std::uint64_t seed, double step = 1e-5) {
  ps.zero_grad();
  {
    Graph g(groups);
    g.backward(loss(g));
  }
  auto eval = [&] {
    Graph g;
    return loss(g).value()(0, 0);
  };
  std::mt19937_64 rng(seed);
  GradCheck out;
  for (std::size_t p = 0; p < ps.size(); ++p) {
    Parameter& par = ps.at(p);
    if (!groups.contains(par.group)) continue;
    const std::size_t n = par.value.size();
    const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * n)));
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t s = 0; s < k; ++s) {
      double& v = par.value.flat()[idx[s]];
      const double saved = v;
      v = saved + step;
      const double up = eval();
      v = saved - step;
      const double down = eval();
      v = saved;
      const double numeric = (up - down) / (2.0 * step);
      out.max_rel = std::max(out.max_rel, rel_error(par.grad.flat()[idx[s]], numeric));
      ++out.checked;
    }
  }
  ps.zero_grad();
  return out;
}

/// Same comparison for a free input leaf.
inline GradCheck check_input_grads(const Mat& x0, const std::function<Var(Graph&, Var)>& loss, double step = 1e-5) {
  Mat analytic;
  {
    Graph g;
    Var x = g.input(x0);
    Var l = loss(g, x);
    g.backward(l);
    analytic = g.grad(x);
  }
  GradCheck out;
  Mat x = x0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.flat()[i];
    auto eval = [&](double v) {
      x.flat()[i] = v;
      Graph g;
      return loss(g, g.constant(x)).value()(0, 0);
    };
    const double numeric = (eval(saved + step) - eval(saved - step)) / (2.0 * step);
    x.flat()[i] = saved;
    out.max_rel = std::max(out.max_rel, rel_error(analytic.flat()[i], numeric));
    ++out.checked;
  }
  return out;
}

}  // namespace rvlm::testing
