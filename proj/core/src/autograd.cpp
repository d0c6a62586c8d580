#include "rvlm/autograd.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <stdexcept>

namespace rvlm {

const Mat& Var::value() const { return graph->value(id); }

Var Graph::constant(Mat value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::input(Mat value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Graph::param(Parameter& p) {
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = trainable_.contains(p.group);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Mat Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.has_grad) return n.grad;
  return Mat(n.value.rows(), n.value.cols());
}

Mat& Graph::grad_ref(int id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Mat(n.value.rows(), n.value.cols());
    n.has_grad = true;
  }
  return n.grad;
}

Var Graph::make(Mat value, std::span<const Var> inputs, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (const Var& in : inputs) {
    assert(in.graph == this);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Graph::backward(Var root) {
  if (root.graph != this) throw std::invalid_argument("backward: root belongs to another graph");
  if (nodes_[root.id].value.size() != 1) throw std::invalid_argument("backward: root must be 1x1");
  if (!nodes_[root.id].requires_grad) return;
  grad_ref(root.id)(0, 0) += 1.0;
  for (int id = root.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.has_grad) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      auto dst = n.param->grad.flat();
      auto src = n.grad.flat();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }
}

namespace ag {
namespace {

void check(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(what);
}

void add_into(Mat& dst, const Mat& src) {
  auto d = dst.flat();
  auto s = src.flat();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var matmul(Var a, Var b) {
  check(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Graph& g = *a.graph;
  Var in[] = {a, b};
  return g.make(rvlm::matmul(a.value(), b.value()), in, [a, b](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    if (g.requires_grad(a)) gemm_nt_acc(go, b.value(), g.grad_ref(a.id));
    if (g.requires_grad(b)) gemm_tn_acc(a.value(), go, g.grad_ref(b.id));
  });
}

Var matmul_nt(Var a, Var b) {
  check(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
  Graph& g = *a.graph;
  Mat out(a.rows(), b.rows());
  gemm_nt_acc(a.value(), b.value(), out);
  Var in[] = {a, b};
  return g.make(std::move(out), in, [a, b](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    if (g.requires_grad(a)) gemm_acc(go, b.value(), g.grad_ref(a.id));
    if (g.requires_grad(b)) gemm_tn_acc(go, a.value(), g.grad_ref(b.id));
  });
}

Var add(Var a, Var b) {
  check(a.value().same_shape(b.value()), "add: shape mismatch");
  Mat out = a.value();
  add_into(out, b.value());
  Var in[] = {a, b};
  return a.graph->make(std::move(out), in, [a, b](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    if (g.requires_grad(a)) add_into(g.grad_ref(a.id), go);
    if (g.requires_grad(b)) add_into(g.grad_ref(b.id), go);
  });
}

Var add_row(Var a, Var bias) {
  check(bias.rows() == 1 && bias.cols() == a.cols(), "add_row: bias must be 1 x cols");
  Mat out = a.value();
  const double* bv = bias.value().row(0);
  for (int r = 0; r < out.rows(); ++r) {
    double* o = out.row(r);
    for (int c = 0; c < out.cols(); ++c) o[c] += bv[c];
  }
  Var in[] = {a, bias};
  return a.graph->make(std::move(out), in, [a, bias](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    if (g.requires_grad(a)) add_into(g.grad_ref(a.id), go);
    if (g.requires_grad(bias)) {
      double* db = g.grad_ref(bias.id).row(0);
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < go.cols(); ++c) db[c] += go(r, c);
    }
  });
}

Var scale(Var a, double s) {
  Mat out = a.value();
  for (double& v : out.flat()) v *= s;
  Var in[] = {a};
  return a.graph->make(std::move(out), in, [a, s](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    auto d = g.grad_ref(a.id).flat();
    auto src = go.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * src[i];
  });
}

Var relu(Var a) {
  Mat out = a.value();
  for (double& v : out.flat()) v = v > 0.0 ? v : 0.0;
  Var in[] = {a};
  return a.graph->make(std::move(out), in, [a](Graph& g, int self) {
    auto go = g.grad_ref(self).flat();
    auto x = a.value().flat();
    auto d = g.grad_ref(a.id).flat();
    for (std::size_t i = 0; i < d.size(); ++i)
      if (x[i] > 0.0) d[i] += go[i];
  });
}

Var silu(Var a) {
  Mat out = a.value();
  for (double& v : out.flat()) v = v * sigmoid(v);
  Var in[] = {a};
  return a.graph->make(std::move(out), in, [a](Graph& g, int self) {
    auto go = g.grad_ref(self).flat();
    auto x = a.value().flat();
    auto d = g.grad_ref(a.id).flat();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double s = sigmoid(x[i]);
      d[i] += go[i] * (s + x[i] * s * (1.0 - s));
    }
  });
}

Var rms_norm(Var x, Var gain, double eps) {
  check(gain.rows() == 1 && gain.cols() == x.cols(), "rms_norm: gain must be 1 x cols");
  const Mat& xv = x.value();
  const int n = xv.cols();
  Mat out(xv.rows(), n);
  std::vector<double> inv(xv.rows());
  const double* gv = gain.value().row(0);
  for (int r = 0; r < xv.rows(); ++r) {
    const double* xr = xv.row(r);
    double ss = 0.0;
    for (int c = 0; c < n; ++c) ss += xr[c] * xr[c];
    inv[r] = 1.0 / std::sqrt(ss / n + eps);
    double* o = out.row(r);
    for (int c = 0; c < n; ++c) o[c] = xr[c] * inv[r] * gv[c];
  }
  Var in[] = {x, gain};
  return x.graph->make(std::move(out), in, [x, gain, inv = std::move(inv)](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    const Mat& xv = x.value();
    const double* gv = gain.value().row(0);
    const int n = xv.cols();
    if (g.requires_grad(gain)) {
      double* dg = g.grad_ref(gain.id).row(0);
      for (int r = 0; r < xv.rows(); ++r)
        for (int c = 0; c < n; ++c) dg[c] += go(r, c) * xv(r, c) * inv[r];
    }
    if (g.requires_grad(x)) {
      Mat& dx = g.grad_ref(x.id);
      for (int r = 0; r < xv.rows(); ++r) {
        const double* xr = xv.row(r);
        const double* gr = go.row(r);
        double dot = 0.0;
        for (int c = 0; c < n; ++c) dot += gr[c] * gv[c] * xr[c];
        const double k = inv[r] * inv[r] * inv[r] * dot / n;
        double* d = dx.row(r);
        for (int c = 0; c < n; ++c) d[c] += inv[r] * gr[c] * gv[c] - k * xr[c];
      }
    }
  });
}

Var causal_softmax(Var s, double scale) {
  const Mat& sv = s.value();
  check(sv.rows() == sv.cols(), "causal_softmax: scores must be square");
  const int n = sv.rows();
  Mat out(n, n);
  for (int i = 0; i < n; ++i) {
    const double* sr = sv.row(i);
    double* o = out.row(i);
    double m = scale * sr[0];
    for (int j = 1; j <= i; ++j) m = std::max(m, scale * sr[j]);
    double z = 0.0;
    for (int j = 0; j <= i; ++j) {
      o[j] = std::exp(scale * sr[j] - m);
      z += o[j];
    }
    for (int j = 0; j <= i; ++j) o[j] /= z;
  }
  Var in[] = {s};
  return s.graph->make(std::move(out), in, [s, scale](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    const Mat& p = g.value(self);
    Mat& ds = g.grad_ref(s.id);
    for (int i = 0; i < p.rows(); ++i) {
      const double* pr = p.row(i);
      const double* gr = go.row(i);
      double dot = 0.0;
      for (int j = 0; j <= i; ++j) dot += pr[j] * gr[j];
      double* d = ds.row(i);
      for (int j = 0; j <= i; ++j) d[j] += scale * pr[j] * (gr[j] - dot);
    }
  });
}

Var col_slice(Var x, int col0, int ncols) {
  const Mat& xv = x.value();
  check(col0 >= 0 && ncols >= 0 && col0 + ncols <= xv.cols(), "col_slice: out of range");
  Mat out(xv.rows(), ncols);
  for (int r = 0; r < xv.rows(); ++r) std::copy_n(xv.row(r) + col0, ncols, out.row(r));
  Var in[] = {x};
  return x.graph->make(std::move(out), in, [x, col0, ncols](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    Mat& dx = g.grad_ref(x.id);
    for (int r = 0; r < go.rows(); ++r) {
      double* d = dx.row(r) + col0;
      const double* s = go.row(r);
      for (int c = 0; c < ncols; ++c) d[c] += s[c];
    }
  });
}

Var concat_cols(std::span<const Var> parts) {
  check(!parts.empty(), "concat_cols: no inputs");
  const int rows = parts[0].rows();
  int cols = 0;
  for (const Var& p : parts) {
    check(p.rows() == rows, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  int c0 = 0;
  for (const Var& p : parts) {
    for (int r = 0; r < rows; ++r) std::copy_n(p.value().row(r), p.cols(), out.row(r) + c0);
    c0 += p.cols();
  }
  std::vector<Var> ins(parts.begin(), parts.end());
  return parts[0].graph->make(std::move(out), ins, [ins](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    int c0 = 0;
    for (const Var& p : ins) {
      const int pc = p.cols();
      if (g.requires_grad(p)) {
        Mat& d = g.grad_ref(p.id);
        for (int r = 0; r < go.rows(); ++r) {
          const double* s = go.row(r) + c0;
          double* dr = d.row(r);
          for (int c = 0; c < pc; ++c) dr[c] += s[c];
        }
      }
      c0 += pc;
    }
  });
}

Var gather_rows(Var table, std::span<const int> ids) {
  const Mat& tv = table.value();
  Mat out(static_cast<int>(ids.size()), tv.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    check(ids[i] >= 0 && ids[i] < tv.rows(), "gather_rows: id out of range");
    std::copy_n(tv.row(ids[i]), tv.cols(), out.row(static_cast<int>(i)));
  }
  std::vector<int> idv(ids.begin(), ids.end());
  Var in[] = {table};
  return table.graph->make(std::move(out), in, [table, idv = std::move(idv)](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    Mat& dt = g.grad_ref(table.id);
    for (std::size_t i = 0; i < idv.size(); ++i) {
      const double* s = go.row(static_cast<int>(i));
      double* d = dt.row(idv[i]);
      for (int c = 0; c < go.cols(); ++c) d[c] += s[c];
    }
  });
}

Var stack_rows(std::span<const RowRef> refs, int cols) {
  check(!refs.empty(), "stack_rows: no rows");
  Mat out(static_cast<int>(refs.size()), cols);
  std::vector<Var> ins;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const Mat& src = refs[i].source.value();
    check(src.cols() == cols, "stack_rows: column mismatch");
    check(refs[i].row >= 0 && refs[i].row < src.rows(), "stack_rows: row out of range");
    std::copy_n(src.row(refs[i].row), cols, out.row(static_cast<int>(i)));
    if (std::none_of(ins.begin(), ins.end(), [&](const Var& v) { return v.id == refs[i].source.id; }))
      ins.push_back(refs[i].source);
  }
  std::vector<RowRef> rv(refs.begin(), refs.end());
  return refs[0].source.graph->make(std::move(out), ins, [rv = std::move(rv)](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    for (std::size_t i = 0; i < rv.size(); ++i) {
      if (!g.requires_grad(rv[i].source)) continue;
      double* d = g.grad_ref(rv[i].source.id).row(rv[i].row);
      const double* s = go.row(static_cast<int>(i));
      for (int c = 0; c < go.cols(); ++c) d[c] += s[c];
    }
  });
}

Var row_mean(Var x, std::span<const int> rows) {
  check(!rows.empty(), "row_mean: no rows");
  const Mat& xv = x.value();
  Mat out(1, xv.cols());
  double* o = out.row(0);
  for (int r : rows) {
    const double* xr = xv.row(r);
    for (int c = 0; c < xv.cols(); ++c) o[c] += xr[c];
  }
  const double inv = 1.0 / static_cast<double>(rows.size());
  for (int c = 0; c < xv.cols(); ++c) o[c] *= inv;
  std::vector<int> rv(rows.begin(), rows.end());
  Var in[] = {x};
  return x.graph->make(std::move(out), in, [x, rv = std::move(rv), inv](Graph& g, int self) {
    const double* go = g.grad_ref(self).row(0);
    Mat& dx = g.grad_ref(x.id);
    for (int r : rv) {
      double* d = dx.row(r);
      for (int c = 0; c < dx.cols(); ++c) d[c] += inv * go[c];
    }
  });
}

Var permute(Var x, int rows, int cols, std::vector<int> source_index) {
  const Mat& xv = x.value();
  check(source_index.size() == xv.size() && static_cast<std::size_t>(rows) * cols == xv.size(),
        "permute: size mismatch");
  Mat out(rows, cols);
  auto o = out.flat();
  auto s = xv.flat();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = s[source_index[i]];
  Var in[] = {x};
  return x.graph->make(std::move(out), in, [x, idx = std::move(source_index)](Graph& g, int self) {
    auto go = g.grad_ref(self).flat();
    auto d = g.grad_ref(x.id).flat();
    for (std::size_t i = 0; i < go.size(); ++i) d[idx[i]] += go[i];
  });
}

Var transpose_conv2d(Var x, int h, int w, Var weight, Var bias) {
  const Mat& xv = x.value();
  const Mat& wv = weight.value();
  const int cin = xv.cols();
  const int cout = wv.cols();
  check(xv.rows() == h * w, "transpose_conv2d: input rows != h*w");
  check(wv.rows() == 16 * cin, "transpose_conv2d: weight rows != 16*in_ch");
  check(bias.rows() == 1 && bias.cols() == cout, "transpose_conv2d: bias must be 1 x out_ch");
  const int oh = 2 * h, ow = 2 * w;
  Mat out(oh * ow, cout);
  const double* bv = bias.value().row(0);
  for (int r = 0; r < out.rows(); ++r) std::copy_n(bv, cout, out.row(r));
  for (int iy = 0; iy < h; ++iy) {
    for (int ix = 0; ix < w; ++ix) {
      const double* xr = xv.row(iy * w + ix);
      for (int ky = 0; ky < 4; ++ky) {
        const int oy = 2 * iy - 1 + ky;
        if (oy < 0 || oy >= oh) continue;
        for (int kx = 0; kx < 4; ++kx) {
          const int ox = 2 * ix - 1 + kx;
          if (ox < 0 || ox >= ow) continue;
          double* __restrict o = out.row(oy * ow + ox);
          const int base = (ky * 4 + kx) * cin;
          for (int ci = 0; ci < cin; ++ci) {
            const double a = xr[ci];
            const double* __restrict wr = wv.row(base + ci);
            for (int co = 0; co < cout; ++co) o[co] += a * wr[co];
          }
        }
      }
    }
  }
  Var in[] = {x, weight, bias};
  return x.graph->make(std::move(out), in, [x, weight, bias, h, w](Graph& g, int self) {
    const Mat& go = g.grad_ref(self);
    const Mat& xv = x.value();
    const Mat& wv = weight.value();
    const int cin = xv.cols();
    const int cout = wv.cols();
    const int oh = 2 * h, ow = 2 * w;
    const bool need_x = g.requires_grad(x);
    const bool need_w = g.requires_grad(weight);
    if (g.requires_grad(bias)) {
      double* db = g.grad_ref(bias.id).row(0);
      for (int r = 0; r < go.rows(); ++r)
        for (int c = 0; c < cout; ++c) db[c] += go(r, c);
    }
    if (!need_x && !need_w) return;
    Mat* dx = need_x ? &g.grad_ref(x.id) : nullptr;
    Mat* dw = need_w ? &g.grad_ref(weight.id) : nullptr;
    for (int iy = 0; iy < h; ++iy) {
      for (int ix = 0; ix < w; ++ix) {
        const int cell = iy * w + ix;
        const double* xr = xv.row(cell);
        for (int ky = 0; ky < 4; ++ky) {
          const int oy = 2 * iy - 1 + ky;
          if (oy < 0 || oy >= oh) continue;
          for (int kx = 0; kx < 4; ++kx) {
            const int ox = 2 * ix - 1 + kx;
            if (ox < 0 || ox >= ow) continue;
            const double* __restrict gr = go.row(oy * ow + ox);
            const int base = (ky * 4 + kx) * cin;
            for (int ci = 0; ci < cin; ++ci) {
              if (dx != nullptr) {
                const double* __restrict wr = wv.row(base + ci);
                double s = 0.0;
                for (int co = 0; co < cout; ++co) s += gr[co] * wr[co];
                (*dx)(cell, ci) += s;
              }
              if (dw != nullptr) {
                const double a = xr[ci];
                double* __restrict dr = dw->row(base + ci);
                for (int co = 0; co < cout; ++co) dr[co] += a * gr[co];
              }
            }
          }
        }
      }
    }
  });
}

Var cross_entropy_sum(Var logits, std::span<const int> targets, std::span<const std::uint8_t> mask) {
  const Mat& lv = logits.value();
  check(static_cast<int>(targets.size()) == lv.rows() && static_cast<int>(mask.size()) == lv.rows(),
        "cross_entropy_sum: targets/mask length != rows");
  const int v = lv.cols();
  Mat probs(lv.rows(), v);
  double total = 0.0;
  for (int i = 0; i < lv.rows(); ++i) {
    if (mask[i] == 0) continue;
    check(targets[i] >= 0 && targets[i] < v, "cross_entropy_sum: target out of range");
    const double* l = lv.row(i);
    double m = l[0];
    for (int c = 1; c < v; ++c) m = std::max(m, l[c]);
    double z = 0.0;
    double* p = probs.row(i);
    for (int c = 0; c < v; ++c) {
      p[c] = std::exp(l[c] - m);
      z += p[c];
    }
    for (int c = 0; c < v; ++c) p[c] /= z;
    total += m + std::log(z) - l[targets[i]];
  }
  std::vector<int> tv(targets.begin(), targets.end());
  std::vector<std::uint8_t> mv(mask.begin(), mask.end());
  Var in[] = {logits};
  return logits.graph->make(
      Mat(1, 1, total), in,
      [logits, probs = std::move(probs), tv = std::move(tv), mv = std::move(mv)](Graph& g, int self) {
        const double go = g.grad_ref(self)(0, 0);
        Mat& dl = g.grad_ref(logits.id);
        for (int i = 0; i < dl.rows(); ++i) {
          if (mv[i] == 0) continue;
          const double* p = probs.row(i);
          double* d = dl.row(i);
          for (int c = 0; c < dl.cols(); ++c) d[c] += go * p[c];
          d[tv[i]] -= go;
        }
      });
}

Var weighted_sum(Var x, const Mat& weights) {
  check(x.value().same_shape(weights), "weighted_sum: shape mismatch");
  double s = 0.0;
  auto xv = x.value().flat();
  auto wv = weights.flat();
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * wv[i];
  Var in[] = {x};
  return x.graph->make(Mat(1, 1, s), in, [x, weights](Graph& g, int self) {
    const double go = g.grad_ref(self)(0, 0);
    auto d = g.grad_ref(x.id).flat();
    auto wv = weights.flat();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += go * wv[i];
  });
}

}  // namespace ag
}  // namespace rvlm
