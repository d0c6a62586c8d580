#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace rvlm {

/// Dense row-major matrix of doubles. Feature grids, token blocks and weights
/// all live in this one type; a grid of h x w cells with c channels is stored
/// as (h*w) x c with cells in row-major order.
class Mat {
 public:
  Mat() = default;
  Mat(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {}
  Mat(int rows, int cols, std::vector<double> data);

  int rows() const noexcept { return rows_; }
  int cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(int r, int c) noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
  double operator()(int r, int c) const noexcept { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  double* row(int r) noexcept { return data_.data() + static_cast<std::size_t>(r) * cols_; }
  const double* row(int r) const noexcept { return data_.data() + static_cast<std::size_t>(r) * cols_; }

  std::span<double> flat() noexcept { return data_; }
  std::span<const double> flat() const noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  void fill(double v);
  bool same_shape(const Mat& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const noexcept;

  friend bool operator==(const Mat& a, const Mat& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

// Dense kernels. Every output element is accumulated in a fixed order over the
// contraction index, so a row of the result depends only on the matching input
// row and never on how many rows the operand has.

/// out += a * b
void gemm_acc(const Mat& a, const Mat& b, Mat& out);
/// out += a * b^T
void gemm_nt_acc(const Mat& a, const Mat& b, Mat& out);
/// out += a^T * b
void gemm_tn_acc(const Mat& a, const Mat& b, Mat& out);

Mat matmul(const Mat& a, const Mat& b);

/// FNV-1a over the raw little-endian bytes of the values.
std::uint64_t fingerprint(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace rvlm
