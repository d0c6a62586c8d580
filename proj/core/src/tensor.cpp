#include "rvlm/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace rvlm {

Mat::Mat(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != static_cast<std::size_t>(rows) * cols) {
    throw std::invalid_argument("Mat: data size does not match shape");
  }
}

void Mat::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool Mat::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void gemm_acc(const Mat& a, const Mat& b, Mat& out) {
  assert(a.cols() == b.rows() && out.rows() == a.rows() && out.cols() == b.cols());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    double* __restrict o = out.row(i);
    const double* ar = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double av = ar[p];
      const double* __restrict br = b.row(p);
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void gemm_nt_acc(const Mat& a, const Mat& b, Mat& out) {
  assert(a.cols() == b.cols() && out.rows() == a.rows() && out.cols() == b.rows());
  const int m = a.rows(), k = a.cols(), n = b.rows();
  for (int i = 0; i < m; ++i) {
    const double* ar = a.row(i);
    double* o = out.row(i);
    for (int j = 0; j < n; ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ar[p] * br[p];
      o[j] += s;
    }
  }
}

void gemm_tn_acc(const Mat& a, const Mat& b, Mat& out) {
  assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int r = 0; r < m; ++r) {
    const double* ar = a.row(r);
    const double* __restrict br = b.row(r);
    for (int i = 0; i < k; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* __restrict o = out.row(i);
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  Mat out(a.rows(), b.cols());
  gemm_acc(a, b, out);
  return out;
}

std::uint64_t fingerprint(std::span<const double> values, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (double v : values) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int byte = 0; byte < 8; ++byte) {
      h ^= (bits >> (8 * byte)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace rvlm
