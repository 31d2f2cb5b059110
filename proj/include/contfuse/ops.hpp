#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "contfuse/tensor.hpp"

// Differentiable primitives. Every op computes its forward values eagerly and
// registers a closure that maps the output gradient onto its parents.

namespace contfuse {

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                         to_string(b.shape()));
}

// c[m×n] += a[m×k] · b[k×n], row-major, fixed accumulation order.
inline void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b,
                    Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    Real* crow = c + i * n;
    const Real* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = arow[p];
      if (av == 0.0) continue;
      const Real* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m×n] += a[m×k] · b[n×k]ᵀ
inline void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b,
                    Real* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      Real s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c[m×n] += a[k×m]ᵀ · b[k×n]
inline void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const Real* a, const Real* b,
                    Real* c) {
  for (std::size_t p = 0; p < k; ++p) {
    const Real* arow = a + p * m;
    const Real* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const Real av = arow[i];
      if (av == 0.0) continue;
      Real* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return detail::make_result(a.shape(), std::move(out), "add", {&a, &b}, [](detail::Node& n) {
    for (std::size_t p = 0; p < 2; ++p)
      if (Real* g = detail::parent_grad(n, p))
        for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return detail::make_result(a.shape(), std::move(out), "sub", {&a, &b}, [](detail::Node& n) {
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
    if (Real* g = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] -= n.grad[i];
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return detail::make_result(a.shape(), std::move(out), "mul", {&a, &b}, [](detail::Node& n) {
    const auto& av = n.parents[0]->data;
    const auto& bv = n.parents[1]->data;
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * bv[i];
    if (Real* g = detail::parent_grad(n, 1))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * av[i];
  });
}

inline Tensor scale(const Tensor& a, Real s) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * s;
  return detail::make_result(a.shape(), std::move(out), "scale", {&a}, [s](detail::Node& n) {
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] * s;
  });
}

inline Tensor add_scalar(const Tensor& a, Real s) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + s;
  return detail::make_result(a.shape(), std::move(out), "add_scalar", {&a}, [](detail::Node& n) {
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
  });
}

/// Multiplies a tensor by a scalar-shaped tensor (the only broadcast supported).
inline Tensor mul_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("mul_scalar: second argument must be scalar");
  const Real sv = s[0];
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * sv;
  return detail::make_result(a.shape(), std::move(out), "mul_scalar", {&a, &s},
                             [](detail::Node& n) {
                               const auto& av = n.parents[0]->data;
                               const Real sv = n.parents[1]->data[0];
                               if (Real* g = detail::parent_grad(n, 0))
                                 for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   g[i] += n.grad[i] * sv;
                               if (Real* g = detail::parent_grad(n, 1)) {
                                 Real acc = 0.0;
                                 for (std::size_t i = 0; i < n.grad.size(); ++i)
                                   acc += n.grad[i] * av[i];
                                 g[0] += acc;
                               }
                             });
}

inline Tensor relu(const Tensor& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
  return detail::make_result(a.shape(), std::move(out), "relu", {&a}, [](detail::Node& n) {
    const auto& av = n.parents[0]->data;
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (av[i] > 0.0) g[i] += n.grad[i];
  });
}

inline Tensor sigmoid(const Tensor& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-a[i]));
  return detail::make_result(a.shape(), std::move(out), "sigmoid", {&a}, [](detail::Node& n) {
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const Real y = n.data[i];
        g[i] += n.grad[i] * y * (1.0 - y);
      }
  });
}

inline Tensor log(const Tensor& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(a[i]);
  return detail::make_result(a.shape(), std::move(out), "log", {&a}, [](detail::Node& n) {
    const auto& av = n.parents[0]->data;
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i] / av[i];
  });
}

/// Clamp to [lo, hi]; gradient passes only where the input is strictly inside.
inline Tensor clamp(const Tensor& a, Real lo, Real hi) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::min(std::max(a[i], lo), hi);
  return detail::make_result(a.shape(), std::move(out), "clamp", {&a}, [lo, hi](detail::Node& n) {
    const auto& av = n.parents[0]->data;
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i)
        if (av[i] > lo && av[i] < hi) g[i] += n.grad[i];
  });
}

/// Smoothed L1: 0.5x² for |x| < 1, |x| − 0.5 otherwise.
inline Tensor smooth_l1(const Tensor& a) {
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Real x = a[i];
    out[i] = std::abs(x) < 1.0 ? 0.5 * x * x : std::abs(x) - 0.5;
  }
  return detail::make_result(a.shape(), std::move(out), "smooth_l1", {&a}, [](detail::Node& n) {
    const auto& av = n.parents[0]->data;
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < n.grad.size(); ++i) {
        const Real x = av[i];
        const Real d = std::abs(x) < 1.0 ? x : (x > 0.0 ? 1.0 : -1.0);
        g[i] += n.grad[i] * d;
      }
  });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

inline Tensor sum(const Tensor& a) {
  Real s = 0.0;
  for (Real v : a.data()) s += v;
  return detail::make_result({}, {s}, "sum", {&a}, [](detail::Node& n) {
    if (Real* g = detail::parent_grad(n, 0)) {
      const std::size_t m = n.parents[0]->data.size();
      for (std::size_t i = 0; i < m; ++i) g[i] += n.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<Real>(a.numel()));
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel())
    throw DimensionError("reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  std::vector<Real> out(a.values());
  return detail::make_result(std::move(shape), std::move(out), "reshape", {&a},
                             [](detail::Node& n) {
                               if (Real* g = detail::parent_grad(n, 0))
                                 for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
                             });
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw DimensionError("transpose expects a matrix");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<Real> out(a.numel());
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return detail::make_result({c, r}, std::move(out), "transpose", {&a}, [r, c](detail::Node& n) {
    if (Real* g = detail::parent_grad(n, 0))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) g[i * c + j] += n.grad[j * r + i];
  });
}

/// Concatenates along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of nothing");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) throw DimensionError("concat axis out of range");
  Shape out_shape = ref;
  out_shape[axis] = 0;
  std::vector<std::size_t> inner;  // contiguous chunk per part per outer index
  for (const Tensor& t : parts) {
    if (t.rank() != ref.size()) throw DimensionError("concat rank mismatch");
    for (std::size_t d = 0; d < ref.size(); ++d)
      if (d != axis && t.dim(d) != ref[d]) throw DimensionError("concat extent mismatch");
    out_shape[axis] += t.dim(axis);
    std::size_t in = 1;
    for (std::size_t d = axis; d < ref.size(); ++d) in *= t.dim(d);
    inner.push_back(in);
  }
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  const std::size_t row = std::accumulate(inner.begin(), inner.end(), std::size_t{0});
  std::vector<Real> out(outer * row);
  for (std::size_t o = 0; o < outer; ++o) {
    std::size_t off = o * row;
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Real* src = parts[p].data().data() + o * inner[p];
      std::copy(src, src + inner[p], out.begin() + static_cast<std::ptrdiff_t>(off));
      off += inner[p];
    }
  }
  return detail::make_result_n(std::move(out_shape), std::move(out), "concat", parts,
                               [inner, outer, row](detail::Node& n) {
                                 std::size_t base = 0;
                                 for (std::size_t p = 0; p < inner.size(); ++p) {
                                   if (Real* g = detail::parent_grad(n, p))
                                     for (std::size_t o = 0; o < outer; ++o)
                                       for (std::size_t i = 0; i < inner[p]; ++i)
                                         g[o * inner[p] + i] += n.grad[o * row + base + i];
                                   base += inner[p];
                                 }
                               });
}

/// Rows of `a` [N×C] picked by `index` → [M×C].
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& index) {
  if (a.rank() != 2) throw DimensionError("gather_rows expects a matrix");
  const std::size_t rows = a.dim(0), cols = a.dim(1);
  std::vector<Real> out(index.size() * cols);
  for (std::size_t m = 0; m < index.size(); ++m) {
    if (index[m] >= rows) throw IndexError("gather_rows: index " + std::to_string(index[m]));
    std::copy_n(a.data().data() + index[m] * cols, cols, out.begin() + static_cast<std::ptrdiff_t>(m * cols));
  }
  return detail::make_result({index.size(), cols}, std::move(out), "gather_rows", {&a},
                             [index, cols](detail::Node& n) {
                               if (Real* g = detail::parent_grad(n, 0))
                                 for (std::size_t m = 0; m < index.size(); ++m)
                                   for (std::size_t c = 0; c < cols; ++c)
                                     g[index[m] * cols + c] += n.grad[m * cols + c];
                             });
}

/// Adds row m of `a` [M×C] into row index[m] of a zero [rows×C] result.
inline Tensor scatter_add_rows(const Tensor& a, const std::vector<std::size_t>& index,
                               std::size_t rows) {
  if (a.rank() != 2) throw DimensionError("scatter_add_rows expects a matrix");
  if (index.size() != a.dim(0)) throw DimensionError("scatter_add_rows: index length");
  const std::size_t cols = a.dim(1);
  std::vector<Real> out(rows * cols, 0.0);
  for (std::size_t m = 0; m < index.size(); ++m) {
    if (index[m] >= rows) throw IndexError("scatter_add_rows: index " + std::to_string(index[m]));
    for (std::size_t c = 0; c < cols; ++c) out[index[m] * cols + c] += a[m * cols + c];
  }
  return detail::make_result({rows, cols}, std::move(out), "scatter_add_rows", {&a},
                             [index, cols](detail::Node& n) {
                               if (Real* g = detail::parent_grad(n, 0))
                                 for (std::size_t m = 0; m < index.size(); ++m)
                                   for (std::size_t c = 0; c < cols; ++c)
                                     g[m * cols + c] += n.grad[index[m] * cols + c];
                             });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n, 0.0);
  detail::gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return detail::make_result({m, n}, std::move(out), "matmul", {&a, &b},
                             [m, k, n](detail::Node& node) {
                               const Real* av = node.parents[0]->data.data();
                               const Real* bv = node.parents[1]->data.data();
                               if (Real* g = detail::parent_grad(node, 0))
                                 detail::gemm_nt(m, n, k, node.grad.data(), bv, g);
                               if (Real* g = detail::parent_grad(node, 1))
                                 detail::gemm_tn(k, m, n, av, node.grad.data(), g);
                             });
}

/// x[N×D] + bias[D] added to every row.
inline Tensor add_bias_rows(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.numel() != x.dim(1))
    throw DimensionError("add_bias_rows: " + to_string(x.shape()) + " + " + to_string(bias.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<Real> out(x.values());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bias[c];
  return detail::make_result(x.shape(), std::move(out), "add_bias_rows", {&x, &bias},
                             [rows, cols](detail::Node& n) {
                               if (Real* g = detail::parent_grad(n, 0))
                                 for (std::size_t i = 0; i < n.grad.size(); ++i) g[i] += n.grad[i];
                               if (Real* g = detail::parent_grad(n, 1))
                                 for (std::size_t r = 0; r < rows; ++r)
                                   for (std::size_t c = 0; c < cols; ++c) g[c] += n.grad[r * cols + c];
                             });
}

// ---------------------------------------------------------------------------
// Convolution

inline std::size_t conv_out_extent(std::size_t in, std::size_t k, std::size_t stride,
                                   std::size_t padding) {
  const long long span = static_cast<long long>(in) + 2LL * static_cast<long long>(padding) -
                         static_cast<long long>(k);
  if (span < 0) throw DimensionError("conv2d: non-positive output extent");
  return static_cast<std::size_t>(span) / stride + 1;
}

namespace detail {

struct ConvGeom {
  std::size_t c, h, w, kh, kw, stride, pad, oh, ow;
  std::size_t col_rows() const { return c * kh * kw; }
  std::size_t col_cols() const { return oh * ow; }
};

inline void im2col(const ConvGeom& g, const Real* in, Real* cols) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        Real* dst = cols + ((ch * g.kh + ki) * g.kw + kj) * g.oh * g.ow;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long long iy = static_cast<long long>(oy * g.stride + ki) - static_cast<long long>(g.pad);
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long long ix = static_cast<long long>(ox * g.stride + kj) - static_cast<long long>(g.pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long long>(g.h) &&
                                ix < static_cast<long long>(g.w);
            dst[oy * g.ow + ox] =
                inside ? in[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] : 0.0;
          }
        }
      }
}

inline void col2im(const ConvGeom& g, const Real* cols, Real* in) {
  for (std::size_t ch = 0; ch < g.c; ++ch)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const Real* src = cols + ((ch * g.kh + ki) * g.kw + kj) * g.oh * g.ow;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long long iy = static_cast<long long>(oy * g.stride + ki) - static_cast<long long>(g.pad);
          if (iy < 0 || iy >= static_cast<long long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long long ix = static_cast<long long>(ox * g.stride + kj) - static_cast<long long>(g.pad);
            if (ix < 0 || ix >= static_cast<long long>(g.w)) continue;
            in[(ch * g.h + static_cast<std::size_t>(iy)) * g.w + static_cast<std::size_t>(ix)] +=
                src[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

/// Cross-correlation of input [C×H×W] with weight [O×C×kh×kw], plus optional bias [O].
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
                     std::size_t stride, std::size_t padding) {
  if (input.rank() != 3 || weight.rank() != 4 || weight.dim(1) != input.dim(0))
    throw DimensionError("conv2d: input " + to_string(input.shape()) + " weight " +
                         to_string(weight.shape()));
  if (stride == 0) throw DimensionError("conv2d: stride must be >= 1");
  if (weight.dim(2) % 2 == 0 || weight.dim(3) % 2 == 0)
    throw DimensionError("conv2d: kernel extents must be odd");
  const std::size_t oc = weight.dim(0);
  if (bias && bias->numel() != oc) throw DimensionError("conv2d: bias length");
  detail::ConvGeom g{input.dim(0), input.dim(1), input.dim(2), weight.dim(2), weight.dim(3),
                     stride, padding, 0, 0};
  g.oh = conv_out_extent(g.h, g.kh, stride, padding);
  g.ow = conv_out_extent(g.w, g.kw, stride, padding);

  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
  std::vector<Real> cols;
  if (!pointwise) {
    cols.resize(g.col_rows() * g.col_cols());
    detail::im2col(g, input.data().data(), cols.data());
  }
  const Real* colp = pointwise ? input.data().data() : cols.data();
  std::vector<Real> out(oc * g.col_cols(), 0.0);
  detail::gemm_nn(oc, g.col_rows(), g.col_cols(), weight.data().data(), colp, out.data());
  if (bias)
    for (std::size_t o = 0; o < oc; ++o)
      for (std::size_t p = 0; p < g.col_cols(); ++p) out[o * g.col_cols() + p] += (*bias)[o];

  auto backward = [g, oc, pointwise, cols = std::move(cols)](detail::Node& n) {
    const Real* wv = n.parents[1]->data.data();
    const Real* colp = pointwise ? n.parents[0]->data.data() : cols.data();
    if (Real* gw = detail::parent_grad(n, 1))
      detail::gemm_nt(oc, g.col_cols(), g.col_rows(), n.grad.data(), colp, gw);
    if (Real* gi = detail::parent_grad(n, 0)) {
      if (pointwise) {
        detail::gemm_tn(g.col_rows(), oc, g.col_cols(), wv, n.grad.data(), gi);
      } else {
        std::vector<Real> dcols(g.col_rows() * g.col_cols(), 0.0);
        detail::gemm_tn(g.col_rows(), oc, g.col_cols(), wv, n.grad.data(), dcols.data());
        detail::col2im(g, dcols.data(), gi);
      }
    }
    if (n.parents.size() > 2)
      if (Real* gb = detail::parent_grad(n, 2))
        for (std::size_t o = 0; o < oc; ++o)
          for (std::size_t p = 0; p < g.col_cols(); ++p) gb[o] += n.grad[o * g.col_cols() + p];
  };
  Shape shape{oc, g.oh, g.ow};
  if (bias)
    return detail::make_result(std::move(shape), std::move(out), "conv2d", {&input, &weight, bias},
                               std::move(backward));
  return detail::make_result(std::move(shape), std::move(out), "conv2d", {&input, &weight},
                             std::move(backward));
}

inline Tensor conv2d(const Tensor& input, const Tensor& weight, std::size_t stride,
                     std::size_t padding) {
  return conv2d(input, weight, nullptr, stride, padding);
}

/// Nearest-neighbour ×2 upsampling of [C×H×W].
inline Tensor upsample_nearest2x(const Tensor& a) {
  if (a.rank() != 3) throw DimensionError("upsample expects [C,H,W]");
  const std::size_t c = a.dim(0), h = a.dim(1), w = a.dim(2);
  std::vector<Real> out(c * 4 * h * w);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t x = 0; x < 2 * w; ++x)
        out[(ch * 2 * h + y) * 2 * w + x] = a[(ch * h + y / 2) * w + x / 2];
  return detail::make_result({c, 2 * h, 2 * w}, std::move(out), "upsample_nearest2x", {&a},
                             [c, h, w](detail::Node& n) {
                               if (Real* g = detail::parent_grad(n, 0))
                                 for (std::size_t ch = 0; ch < c; ++ch)
                                   for (std::size_t y = 0; y < 2 * h; ++y)
                                     for (std::size_t x = 0; x < 2 * w; ++x)
                                       g[(ch * h + y / 2) * w + x / 2] +=
                                           n.grad[(ch * 2 * h + y) * 2 * w + x];
                             });
}

}  // namespace contfuse
