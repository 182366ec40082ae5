#include <algorithm>
#include <cmath>

#include "pelta/autograd.hpp"
#include "pelta/kernels.hpp"

namespace pelta {

namespace {

// adjoint accumulation; contributions arrive in a fixed order so results are
// reproducible bitwise
void accumulate(std::map<NodeId, Tensor>& sink, NodeId id, const Tensor& contrib) {
  auto it = sink.find(id);
  if (it == sink.end()) {
    sink.emplace(id, contrib);
  } else {
    Tensor& t = it->second;
    for (int64_t i = 0; i < t.size(); ++i) t[i] += contrib[i];
  }
}

// treats [k] as a row [1,k]
std::pair<int, int> as_matrix(const Shape& s) {
  if (s.size() == 1) return {1, s[0]};
  return {s[0], s[1]};
}

Tensor matmul_t(const Tensor& a, const Tensor& b, bool ta, bool tb) {
  auto [am, ak] = as_matrix(a.shape());
  auto [bm, bk] = as_matrix(b.shape());
  int m = ta ? ak : am, k = ta ? am : ak;
  int k2 = tb ? bk : bm, n = tb ? bm : bk;
  if (k != k2) throw ShapeError("matmul inner dimension mismatch");
  Tensor at = a, bt = b;
  if (ta) {
    at = Tensor({m, k});
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < k; ++j) at[static_cast<int64_t>(i) * k + j] = a[static_cast<int64_t>(j) * m + i];
  }
  if (tb) {
    bt = Tensor({k, n});
    for (int i = 0; i < k; ++i)
      for (int j = 0; j < n; ++j) bt[static_cast<int64_t>(i) * n + j] = b[static_cast<int64_t>(j) * k + i];
  }
  Tensor c({m, n});
  kernels::matmul(at.data(), bt.data(), c.data(), m, k, n);
  return c;
}

// weight standardization per output channel: zero mean, unit variance
// (population), guarded by eps for constant kernels
Tensor standardize_kernel(const Tensor& w, double eps) {
  Tensor out(w.shape());
  int co = w.dim(0);
  int64_t m = w.size() / co;
  for (int c = 0; c < co; ++c) {
    const double* src = w.data() + static_cast<int64_t>(c) * m;
    double* dst = out.data() + static_cast<int64_t>(c) * m;
    double mean = 0.0;
    for (int64_t i = 0; i < m; ++i) mean += src[i];
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (int64_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
    var /= static_cast<double>(m);
    double inv_s = 1.0 / std::sqrt(var + eps);
    for (int64_t i = 0; i < m; ++i) dst[i] = (src[i] - mean) * inv_s;
  }
  return out;
}

// backward of y = (x - mean(x)) / sqrt(var(x) + eps) over one block of m
// values: dx = (g - mean(g) - y * mean(g .* y)) / sqrt(var + eps)
void standardize_backward_block(const double* g, const double* y, double inv_s, int64_t m,
                                double* dx) {
  double mean_g = 0.0, mean_gy = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    mean_g += g[i];
    mean_gy += g[i] * y[i];
  }
  mean_g /= static_cast<double>(m);
  mean_gy /= static_cast<double>(m);
  for (int64_t i = 0; i < m; ++i) dx[i] = inv_s * (g[i] - mean_g - y[i] * mean_gy);
}

void softmax_rows(const double* x, double* y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* xi = x + static_cast<int64_t>(r) * cols;
    double* yi = y + static_cast<int64_t>(r) * cols;
    double mx = xi[0];
    for (int j = 1; j < cols; ++j) mx = std::max(mx, xi[j]);
    double denom = 0.0;
    for (int j = 0; j < cols; ++j) {
      yi[j] = std::exp(xi[j] - mx);
      denom += yi[j];
    }
    for (int j = 0; j < cols; ++j) yi[j] /= denom;
  }
}

// dS = y .* (g - rowsum(g .* y))
void softmax_backward_rows(const double* g, const double* y, double* dx, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double* gi = g + static_cast<int64_t>(r) * cols;
    const double* yi = y + static_cast<int64_t>(r) * cols;
    double* di = dx + static_cast<int64_t>(r) * cols;
    double s = 0.0;
    for (int j = 0; j < cols; ++j) s += gi[j] * yi[j];
    for (int j = 0; j < cols; ++j) di[j] = yi[j] * (gi[j] - s);
  }
}

std::pair<int, int> rows_cols(const Shape& s) {
  int cols = s.back();
  int rows = static_cast<int>(shape_size(s) / cols);
  return {rows, cols};
}

// gathers [N, C*p*p] patches; n runs row-major over the patch grid, inner
// index is (c, py, px)
Tensor extract_patches(const Tensor& x, int p) {
  int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  int gh = h / p, gw = w / p;
  Tensor out({gh * gw, c * p * p});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx) {
      int n = gy * gw + gx;
      for (int ci = 0; ci < c; ++ci)
        for (int py = 0; py < p; ++py)
          for (int px = 0; px < p; ++px)
            out.at(n, (ci * p + py) * p + px) = x.at(ci, gy * p + py, gx * p + px);
    }
  return out;
}

Tensor scatter_patches(const Tensor& gp, const Shape& image_shape, int p) {
  Tensor out(image_shape, 0.0);
  int c = image_shape[0], w = image_shape[2];
  int gw = w / p;
  for (int n = 0; n < gp.dim(0); ++n) {
    int gy = n / gw, gx = n % gw;
    for (int ci = 0; ci < c; ++ci)
      for (int py = 0; py < p; ++py)
        for (int px = 0; px < p; ++px)
          out.at(ci, gy * p + py, gx * p + px) = gp.at(n, (ci * p + py) * p + px);
  }
  return out;
}

}  // namespace

Tensor forward_op(Graph& g, NodeId id) {
  const Node& nd = g.node(id);
  auto pv = [&](size_t i) -> const Tensor& { return g.value(nd.parents[i]); };
  switch (nd.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      throw GraphError("leaf nodes are bound, not computed");
    case OpKind::MatMul: {
      Tensor c = matmul_t(pv(0), pv(1), false, false);
      return pv(0).rank() == 1 ? c.reshaped({c.dim(1)}) : c;
    }
    case OpKind::Add: {
      const Tensor& a = pv(0);
      const Tensor& b = pv(1);
      if (a.same_shape(b)) return add(a, b);
      // bias broadcast over trailing dim
      Tensor r(a.shape());
      int cols = a.shape().back();
      for (int64_t i = 0; i < a.size(); ++i) r[i] = a[i] + b[i % cols];
      return r;
    }
    case OpKind::Conv2d:
    case OpKind::WeightStandardizedConv2d: {
      const Tensor& x = pv(0);
      Tensor w = pv(1);
      if (nd.kind == OpKind::WeightStandardizedConv2d) {
        w = standardize_kernel(w, nd.attr("eps", 1e-10));
        g.set_aux(id, w);  // standardized kernel reused in backward
      }
      const double* bias = nd.parents.size() == 3 ? pv(2).data() : nullptr;
      int s = nd.attr_int("stride", 1), p = nd.attr_int("pad", 0);
      Tensor y(nd.shape);
      kernels::conv2d(x.data(), w.data(), bias, y.data(), x.dim(0), x.dim(1), x.dim(2),
                      w.dim(0), w.dim(2), w.dim(3), s, p);
      return y;
    }
    case OpKind::ReLU: {
      const Tensor& x = pv(0);
      Tensor y(x.shape());
      for (int64_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      return y;
    }
    case OpKind::LayerNorm: {
      const Tensor& x = pv(0);
      const Tensor& gamma = pv(1);
      const Tensor& beta = pv(2);
      double eps = nd.attr("eps", 1e-5);
      auto [rows, cols] = rows_cols(x.shape());
      Tensor y(x.shape());
      Tensor xhat(x.shape());  // stored for backward
      for (int r = 0; r < rows; ++r) {
        const double* xi = x.data() + static_cast<int64_t>(r) * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += xi[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= cols;
        double inv_s = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < cols; ++j) {
          double xh = (xi[j] - mean) * inv_s;
          xhat[static_cast<int64_t>(r) * cols + j] = xh;
          y[static_cast<int64_t>(r) * cols + j] = gamma[j] * xh + beta[j];
        }
      }
      g.set_aux(id, xhat);
      return y;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = pv(0);
      const Tensor& gamma = pv(1);
      const Tensor& beta = pv(2);
      const Tensor& rm = pv(3);
      const Tensor& rv = pv(4);
      double eps = nd.attr("eps", 1e-5);
      Tensor y(x.shape());
      int c = x.dim(0), hw = x.dim(1) * x.dim(2);
      for (int ci = 0; ci < c; ++ci) {
        double inv_s = 1.0 / std::sqrt(rv[ci] + eps);
        for (int i = 0; i < hw; ++i) {
          int64_t idx = static_cast<int64_t>(ci) * hw + i;
          y[idx] = gamma[ci] * (x[idx] - rm[ci]) * inv_s + beta[ci];
        }
      }
      return y;
    }
    case OpKind::Softmax: {
      const Tensor& x = pv(0);
      auto [rows, cols] = rows_cols(x.shape());
      Tensor y(x.shape());
      softmax_rows(x.data(), y.data(), rows, cols);
      return y;
    }
    case OpKind::PatchEmbed: {
      int p = nd.attr_int("patch", 0);
      Tensor patches = extract_patches(pv(0), p);
      g.set_aux(id, patches);
      return matmul_t(patches, pv(1), false, false);
    }
    case OpKind::PositionAdd:
      return add(pv(0), pv(1));
    case OpKind::AttentionHead: {
      const Tensor& x = pv(0);
      int dh = pv(1).dim(1);
      double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor q = matmul_t(x, pv(1), false, false);
      Tensor k = matmul_t(x, pv(2), false, false);
      Tensor v = matmul_t(x, pv(3), false, false);
      Tensor scores = matmul_t(q, k, false, true);
      for (int64_t i = 0; i < scores.size(); ++i) scores[i] *= inv_scale;
      Tensor att(scores.shape());
      softmax_rows(scores.data(), att.data(), scores.dim(0), scores.dim(1));
      g.set_aux(id, att);  // row-stochastic attention weights, also the trace
      return matmul_t(att, v, false, false);
    }
    case OpKind::Concat: {
      int axis = nd.attr_int("axis", 0);
      Tensor out(nd.shape);
      if (axis == 0) {
        int64_t off = 0;
        for (size_t i = 0; i < nd.parents.size(); ++i) {
          const Tensor& t = pv(i);
          std::copy(t.data(), t.data() + t.size(), out.data() + off);
          off += t.size();
        }
      } else {
        int rows = nd.shape[0], cols = nd.shape[1];
        int col_off = 0;
        for (size_t i = 0; i < nd.parents.size(); ++i) {
          const Tensor& t = pv(i);
          for (int r = 0; r < rows; ++r)
            for (int cj = 0; cj < t.dim(1); ++cj)
              out[static_cast<int64_t>(r) * cols + col_off + cj] = t.at(r, cj);
          col_off += t.dim(1);
        }
      }
      return out;
    }
    case OpKind::Reshape:
      return pv(0).reshaped(nd.shape);
    case OpKind::MaxPool: {
      const Tensor& x = pv(0);
      int k = nd.attr_int("kernel", 2), s = nd.attr_int("stride", nd.attr_int("kernel", 2));
      int c = x.dim(0), h = x.dim(1), w = x.dim(2);
      int ho = (h - k) / s + 1, wo = (w - k) / s + 1;
      Tensor y({c, ho, wo});
      std::vector<int64_t> arg(static_cast<size_t>(c) * ho * wo);
      for (int ci = 0; ci < c; ++ci)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox) {
            int64_t best = (static_cast<int64_t>(ci) * h + oy * s) * w + ox * s;
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int64_t idx = (static_cast<int64_t>(ci) * h + oy * s + ky) * w + ox * s + kx;
                if (x[idx] > x[best]) best = idx;  // first max wins ties
              }
            y.at(ci, oy, ox) = x[best];
            arg[(static_cast<size_t>(ci) * ho + oy) * wo + ox] = best;
          }
      g.set_aux_idx(id, std::move(arg));
      return y;
    }
    case OpKind::Mean: {
      const Tensor& x = pv(0);
      double s = 0.0;
      for (int64_t i = 0; i < x.size(); ++i) s += x[i];
      return Tensor::scalar(s / static_cast<double>(x.size()));
    }
    case OpKind::CrossEntropyLoss: {
      const Tensor& z = pv(0);
      int y = nd.attr_int("target", -1);
      if (y < 0 || y >= z.dim(0))
        throw GraphError("cross-entropy target not set or out of range");
      double mx = z[0];
      for (int64_t i = 1; i < z.size(); ++i) mx = std::max(mx, z[i]);
      double lse = 0.0;
      for (int64_t i = 0; i < z.size(); ++i) lse += std::exp(z[i] - mx);
      return Tensor::scalar(mx + std::log(lse) - z[y]);
    }
    case OpKind::TransposedConv2d: {
      const Tensor& x = pv(0);
      const Tensor& w = pv(1);
      const double* bias = nd.parents.size() == 3 ? pv(2).data() : nullptr;
      int s = nd.attr_int("stride", 1), p = nd.attr_int("pad", 0);
      Tensor y(nd.shape);
      kernels::tconv2d(x.data(), w.data(), bias, y.data(), x.dim(0), x.dim(1), x.dim(2),
                       w.dim(1), w.dim(2), w.dim(3), s, p);
      return y;
    }
    case OpKind::ElementwiseMul:
      return mul(pv(0), pv(1));
    case OpKind::ScalarMul:
      return scale(pv(0), nd.attr("c", 1.0));
  }
  throw GraphError("unhandled op kind in forward");
}

void backward_op(Graph& g, NodeId id, const Tensor& gout, std::map<NodeId, Tensor>& sink) {
  const Node& nd = g.node(id);
  auto pv = [&](size_t i) -> const Tensor& { return g.value(nd.parents[i]); };
  auto pid = [&](size_t i) { return nd.parents[i]; };
  switch (nd.kind) {
    case OpKind::Input:
    case OpKind::Parameter:
      return;
    case OpKind::MatMul: {
      const Tensor& a = pv(0);
      const Tensor& b = pv(1);
      Tensor gm = gout.rank() == 1 ? gout.reshaped({1, gout.dim(0)}) : gout;
      Tensor ga = matmul_t(gm, b, false, true);
      Tensor gb = matmul_t(a, gm, true, false);
      accumulate(sink, pid(0), a.rank() == 1 ? ga.reshaped(a.shape()) : ga);
      accumulate(sink, pid(1), gb);
      return;
    }
    case OpKind::Add: {
      const Tensor& a = pv(0);
      const Tensor& b = pv(1);
      accumulate(sink, pid(0), gout);
      if (a.same_shape(b)) {
        accumulate(sink, pid(1), gout);
      } else {
        Tensor gb(b.shape(), 0.0);
        int cols = a.shape().back();
        for (int64_t i = 0; i < gout.size(); ++i) gb[i % cols] += gout[i];
        accumulate(sink, pid(1), gb);
      }
      return;
    }
    case OpKind::Conv2d:
    case OpKind::WeightStandardizedConv2d: {
      const Tensor& x = pv(0);
      const Tensor& w_raw = pv(1);
      bool standardized = nd.kind == OpKind::WeightStandardizedConv2d;
      const Tensor& w = standardized ? g.aux(id) : w_raw;
      int s = nd.attr_int("stride", 1), p = nd.attr_int("pad", 0);
      Tensor gx(x.shape());
      kernels::conv2d_grad_input(gout.data(), w.data(), gx.data(), x.dim(0), x.dim(1), x.dim(2),
                                 w.dim(0), w.dim(2), w.dim(3), s, p);
      Tensor gw(w.shape());
      kernels::conv2d_grad_weights(gout.data(), x.data(), gw.data(), x.dim(0), x.dim(1),
                                   x.dim(2), w.dim(0), w.dim(2), w.dim(3), s, p);
      if (standardized) {
        // chain through the per-channel standardization
        double eps = nd.attr("eps", 1e-10);
        Tensor gw_raw(w_raw.shape());
        int co = w_raw.dim(0);
        int64_t m = w_raw.size() / co;
        for (int c = 0; c < co; ++c) {
          const double* src = w_raw.data() + static_cast<int64_t>(c) * m;
          double mean = 0.0;
          for (int64_t i = 0; i < m; ++i) mean += src[i];
          mean /= static_cast<double>(m);
          double var = 0.0;
          for (int64_t i = 0; i < m; ++i) var += (src[i] - mean) * (src[i] - mean);
          var /= static_cast<double>(m);
          double inv_s = 1.0 / std::sqrt(var + eps);
          standardize_backward_block(gw.data() + static_cast<int64_t>(c) * m,
                                     w.data() + static_cast<int64_t>(c) * m, inv_s, m,
                                     gw_raw.data() + static_cast<int64_t>(c) * m);
        }
        gw = std::move(gw_raw);
      }
      accumulate(sink, pid(0), gx);
      accumulate(sink, pid(1), gw);
      if (nd.parents.size() == 3) {
        Tensor gb({w.dim(0)}, 0.0);
        int hw = gout.dim(1) * gout.dim(2);
        for (int c = 0; c < w.dim(0); ++c)
          for (int i = 0; i < hw; ++i) gb[c] += gout[static_cast<int64_t>(c) * hw + i];
        accumulate(sink, pid(2), gb);
      }
      return;
    }
    case OpKind::ReLU: {
      const Tensor& x = pv(0);
      Tensor gx(x.shape());
      for (int64_t i = 0; i < x.size(); ++i) gx[i] = x[i] > 0.0 ? gout[i] : 0.0;
      accumulate(sink, pid(0), gx);
      return;
    }
    case OpKind::LayerNorm: {
      const Tensor& gamma = pv(1);
      const Tensor& xhat = g.aux(id);
      const Tensor& x = pv(0);
      double eps = nd.attr("eps", 1e-5);
      auto [rows, cols] = rows_cols(x.shape());
      Tensor gx(x.shape());
      Tensor ggamma(gamma.shape(), 0.0);
      Tensor gbeta(gamma.shape(), 0.0);
      std::vector<double> gh(static_cast<size_t>(cols));
      for (int r = 0; r < rows; ++r) {
        const double* xi = x.data() + static_cast<int64_t>(r) * cols;
        const double* xh = xhat.data() + static_cast<int64_t>(r) * cols;
        const double* go = gout.data() + static_cast<int64_t>(r) * cols;
        double mean = 0.0;
        for (int j = 0; j < cols; ++j) mean += xi[j];
        mean /= cols;
        double var = 0.0;
        for (int j = 0; j < cols; ++j) var += (xi[j] - mean) * (xi[j] - mean);
        var /= cols;
        double inv_s = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < cols; ++j) {
          ggamma[j] += go[j] * xh[j];
          gbeta[j] += go[j];
          gh[static_cast<size_t>(j)] = go[j] * gamma[j];
        }
        standardize_backward_block(gh.data(), xh, inv_s, cols,
                                   gx.data() + static_cast<int64_t>(r) * cols);
      }
      accumulate(sink, pid(0), gx);
      accumulate(sink, pid(1), ggamma);
      accumulate(sink, pid(2), gbeta);
      return;
    }
    case OpKind::BatchNorm: {
      const Tensor& x = pv(0);
      const Tensor& gamma = pv(1);
      const Tensor& rm = pv(3);
      const Tensor& rv = pv(4);
      double eps = nd.attr("eps", 1e-5);
      int c = x.dim(0), hw = x.dim(1) * x.dim(2);
      Tensor gx(x.shape());
      Tensor ggamma(gamma.shape(), 0.0), gbeta(gamma.shape(), 0.0);
      Tensor grm(gamma.shape(), 0.0), grv(gamma.shape(), 0.0);
      for (int ci = 0; ci < c; ++ci) {
        double inv_s = 1.0 / std::sqrt(rv[ci] + eps);
        double sum_g = 0.0, sum_gxc = 0.0;
        for (int i = 0; i < hw; ++i) {
          int64_t idx = static_cast<int64_t>(ci) * hw + i;
          double xc = x[idx] - rm[ci];
          gx[idx] = gout[idx] * gamma[ci] * inv_s;
          sum_g += gout[idx];
          sum_gxc += gout[idx] * xc;
        }
        ggamma[ci] = sum_gxc * inv_s;
        gbeta[ci] = sum_g;
        grm[ci] = -gamma[ci] * inv_s * sum_g;
        grv[ci] = -0.5 * gamma[ci] * inv_s * inv_s * inv_s * sum_gxc;
      }
      accumulate(sink, pid(0), gx);
      accumulate(sink, pid(1), ggamma);
      accumulate(sink, pid(2), gbeta);
      accumulate(sink, pid(3), grm);
      accumulate(sink, pid(4), grv);
      return;
    }
    case OpKind::Softmax: {
      const Tensor& y = g.value(id);
      auto [rows, cols] = rows_cols(y.shape());
      Tensor gx(y.shape());
      softmax_backward_rows(gout.data(), y.data(), gx.data(), rows, cols);
      accumulate(sink, pid(0), gx);
      return;
    }
    case OpKind::PatchEmbed: {
      const Tensor& patches = g.aux(id);
      const Tensor& e = pv(1);
      int p = nd.attr_int("patch", 0);
      Tensor gp = matmul_t(gout, e, false, true);
      Tensor ge = matmul_t(patches, gout, true, false);
      accumulate(sink, pid(0), scatter_patches(gp, pv(0).shape(), p));
      accumulate(sink, pid(1), ge);
      return;
    }
    case OpKind::PositionAdd:
      accumulate(sink, pid(0), gout);
      accumulate(sink, pid(1), gout);
      return;
    case OpKind::AttentionHead: {
      const Tensor& x = pv(0);
      const Tensor& wq = pv(1);
      const Tensor& wk = pv(2);
      const Tensor& wv = pv(3);
      const Tensor& att = g.aux(id);
      int dh = wq.dim(1);
      double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
      Tensor q = matmul_t(x, wq, false, false);
      Tensor k = matmul_t(x, wk, false, false);
      Tensor v = matmul_t(x, wv, false, false);
      Tensor gatt = matmul_t(gout, v, false, true);
      Tensor gv = matmul_t(att, gout, true, false);
      Tensor gscores(att.shape());
      softmax_backward_rows(gatt.data(), att.data(), gscores.data(), att.dim(0), att.dim(1));
      for (int64_t i = 0; i < gscores.size(); ++i) gscores[i] *= inv_scale;
      Tensor gq = matmul_t(gscores, k, false, false);
      Tensor gk = matmul_t(gscores, q, true, false);
      Tensor gx = matmul_t(gq, wq, false, true);
      Tensor gx2 = matmul_t(gk, wk, false, true);
      Tensor gx3 = matmul_t(gv, wv, false, true);
      for (int64_t i = 0; i < gx.size(); ++i) gx[i] += gx2[i] + gx3[i];
      accumulate(sink, pid(0), gx);
      accumulate(sink, pid(1), matmul_t(x, gq, true, false));
      accumulate(sink, pid(2), matmul_t(x, gk, true, false));
      accumulate(sink, pid(3), matmul_t(x, gv, true, false));
      return;
    }
    case OpKind::Concat: {
      int axis = nd.attr_int("axis", 0);
      if (axis == 0) {
        int64_t off = 0;
        for (size_t i = 0; i < nd.parents.size(); ++i) {
          const Tensor& t = pv(i);
          Tensor gi(t.shape());
          std::copy(gout.data() + off, gout.data() + off + t.size(), gi.data());
          accumulate(sink, pid(i), gi);
          off += t.size();
        }
      } else {
        int rows = nd.shape[0], cols = nd.shape[1];
        int col_off = 0;
        for (size_t i = 0; i < nd.parents.size(); ++i) {
          const Tensor& t = pv(i);
          Tensor gi(t.shape());
          for (int r = 0; r < rows; ++r)
            for (int cj = 0; cj < t.dim(1); ++cj)
              gi.at(r, cj) = gout[static_cast<int64_t>(r) * cols + col_off + cj];
          accumulate(sink, pid(i), gi);
          col_off += t.dim(1);
        }
      }
      return;
    }
    case OpKind::Reshape:
      accumulate(sink, pid(0), gout.reshaped(pv(0).shape()));
      return;
    case OpKind::MaxPool: {
      const Tensor& x = pv(0);
      const std::vector<int64_t>& arg = g.aux_idx(id);
      Tensor gx(x.shape(), 0.0);
      for (size_t i = 0; i < arg.size(); ++i)
        gx[arg[i]] += gout[static_cast<int64_t>(i)];
      accumulate(sink, pid(0), gx);
      return;
    }
    case OpKind::Mean: {
      const Tensor& x = pv(0);
      double gv = gout[0] / static_cast<double>(x.size());
      accumulate(sink, pid(0), Tensor(x.shape(), gv));
      return;
    }
    case OpKind::CrossEntropyLoss: {
      const Tensor& z = pv(0);
      int y = nd.attr_int("target", -1);
      Tensor gz(z.shape());
      softmax_rows(z.data(), gz.data(), 1, z.dim(0));
      gz[y] -= 1.0;
      for (int64_t i = 0; i < gz.size(); ++i) gz[i] *= gout[0];
      accumulate(sink, pid(0), gz);
      return;
    }
    case OpKind::TransposedConv2d: {
      const Tensor& x = pv(0);
      const Tensor& w = pv(1);
      int s = nd.attr_int("stride", 1), p = nd.attr_int("pad", 0);
      Tensor gx(x.shape());
      kernels::tconv2d_grad_input(gout.data(), w.data(), gx.data(), x.dim(0), x.dim(1),
                                  x.dim(2), w.dim(1), w.dim(2), w.dim(3), s, p);
      Tensor gw(w.shape());
      kernels::tconv2d_grad_weights(gout.data(), x.data(), gw.data(), x.dim(0), x.dim(1),
                                    x.dim(2), w.dim(1), w.dim(2), w.dim(3), s, p);
      accumulate(sink, pid(0), gx);
      accumulate(sink, pid(1), gw);
      if (nd.parents.size() == 3) {
        Tensor gb({w.dim(1)}, 0.0);
        int hw = gout.dim(1) * gout.dim(2);
        for (int c = 0; c < w.dim(1); ++c)
          for (int i = 0; i < hw; ++i) gb[c] += gout[static_cast<int64_t>(c) * hw + i];
        accumulate(sink, pid(2), gb);
      }
      return;
    }
    case OpKind::ElementwiseMul:
      accumulate(sink, pid(0), mul(gout, pv(1)));
      accumulate(sink, pid(1), mul(gout, pv(0)));
      return;
    case OpKind::ScalarMul:
      accumulate(sink, pid(0), scale(gout, nd.attr("c", 1.0)));
      return;
  }
  throw GraphError("unhandled op kind in backward");
}

}  // namespace pelta
