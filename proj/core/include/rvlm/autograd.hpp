#pragma once

#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "rvlm/params.hpp"
#include "rvlm/tensor.hpp"

namespace rvlm {

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
struct Var {
  Graph* graph = nullptr;
  int id = -1;

  bool valid() const noexcept { return graph != nullptr && id >= 0; }
  const Mat& value() const;
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, so the tape is
/// already topologically sorted and backward is a single reverse sweep.
///
/// Parameters enter through `param()`. A parameter node requires gradients
/// only when its group is in the trainable set handed to the constructor;
/// nodes that depend on no gradient-requiring input skip their backward.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int)>;

  explicit Graph(GroupSet trainable = {}) : trainable_(std::move(trainable)) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Mat value);
  /// A free leaf that requires gradients (used to differentiate w.r.t. inputs).
  Var input(Mat value);
  Var param(Parameter& p);

  const Mat& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  /// Gradient accumulated for `v` by the last backward(); zeros if none reached it.
  Mat grad(Var v) const;
  /// Mutable gradient buffer, allocated on first use.
  Mat& grad_ref(int id);
  bool has_grad(int id) const { return nodes_[id].has_grad; }

  /// Seeds d(root)/d(root) = 1 for a 1x1 root and sweeps backward. Parameter
  /// gradients are added into Parameter::grad.
  void backward(Var root);

  Var make(Mat value, std::span<const Var> inputs, BackwardFn fn);
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  GroupSet trainable_;
};

namespace ag {

Var matmul(Var a, Var b);
/// a * b^T
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
/// Adds a 1 x n row vector to every row of `a`.
Var add_row(Var a, Var bias);
Var scale(Var a, double s);
Var relu(Var a);
Var silu(Var a);
/// Row-wise x / sqrt(mean(x^2) + eps) * gain, gain is 1 x n.
Var rms_norm(Var x, Var gain, double eps = 1e-5);
/// Row-wise softmax of scale * s with entries j > i excluded.
Var causal_softmax(Var s, double scale);
Var col_slice(Var x, int col0, int ncols);
Var concat_cols(std::span<const Var> parts);
/// out[i] = table[ids[i]]
Var gather_rows(Var table, std::span<const int> ids);

struct RowRef {
  Var source;
  int row;
};
/// out[i] = refs[i].source[refs[i].row]; sources may differ per row.
Var stack_rows(std::span<const RowRef> refs, int cols);
/// 1 x cols mean over the listed rows.
Var row_mean(Var x, std::span<const int> rows);
/// out.flat()[i] = x.flat()[source_index[i]] for a bijective index map.
Var permute(Var x, int rows, int cols, std::vector<int> source_index);
/// Stride-2, padding-1, 4x4 transposed convolution on an h x w grid stored as
/// (h*w) x in_ch. `weight` is (16*in_ch) x out_ch with row tap*in_ch + ci and
/// tap = ky*4 + kx; `bias` is 1 x out_ch. Output grid is (2h) x (2w).
Var transpose_conv2d(Var x, int h, int w, Var weight, Var bias);
/// Sum over positions with mask=1 of -log softmax(logits[i])[targets[i]].
Var cross_entropy_sum(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask);
/// sum(x .* weights) as a 1x1 node.
Var weighted_sum(Var x, const Mat& weights);

}  // namespace ag
}  // namespace rvlm
