#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <stdexcept>
#include <vector>

#include "vidrep/tensor.hpp"

namespace vidrep {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMat>;
using CMapM = Eigen::Map<const RowMat>;

// Leading-batch broadcast: shapes are equal, or one shape is a suffix of the
// other. Returns the broadcast element count of the smaller operand (its data
// repeats along the leading batch block).
inline void check_broadcast(const Shape& a, const Shape& b, const char* op) {
  const Shape& big = a.size() >= b.size() ? a : b;
  const Shape& small = a.size() >= b.size() ? b : a;
  size_t off = big.size() - small.size();
  bool ok = true;
  for (size_t i = 0; i < small.size(); ++i) ok = ok && big[off + i] == small[i];
  if (!ok)
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                                shape_str(b));
}

template <class Fwd, class DA, class DB>
Tensor binary_ew(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA dfa, DB dfb) {
  check_broadcast(a.shape(), b.shape(), name);
  const bool a_big = a.rank() >= b.rank();
  const Shape& out_shape = a_big ? a.shape() : b.shape();
  Tensor y = Tensor::make_op(out_shape, {a, b}, nullptr);
  const int64_t n = y.size();
  const int64_t na = a.size(), nb = b.size();
  const double* pa = a.data();
  const double* pb = b.data();
  double* py = y.data();
  if (na == n && nb == n) {
    for (int64_t i = 0; i < n; ++i) py[i] = fwd(pa[i], pb[i]);
  } else {
    for (int64_t i = 0; i < n; ++i) py[i] = fwd(pa[i % na], pb[i % nb]);
  }
  if (y.requires_grad()) {
    y.node()->backward_fn = [n, na, nb, dfa, dfb](detail::Node& node) {
      auto& pa_ = node.parents[0];
      auto& pb_ = node.parents[1];
      const double* g = node.grad.data();
      const double* av = pa_->data.data();
      const double* bv = pb_->data.data();
      const bool same = na == n && nb == n;
      if (pa_->requires_grad) {
        pa_->ensure_grad();
        double* da = pa_->grad.data();
        if (same) {
          for (int64_t i = 0; i < n; ++i) da[i] += dfa(g[i], av[i], bv[i]);
        } else {
          for (int64_t i = 0; i < n; ++i) da[i % na] += dfa(g[i], av[i % na], bv[i % nb]);
        }
      }
      if (pb_->requires_grad) {
        pb_->ensure_grad();
        double* db = pb_->grad.data();
        if (same) {
          for (int64_t i = 0; i < n; ++i) db[i] += dfb(g[i], av[i], bv[i]);
        } else {
          for (int64_t i = 0; i < n; ++i) db[i % nb] += dfb(g[i], av[i % na], bv[i % nb]);
        }
      }
    };
  }
  return y;
}

template <class Fwd, class Bwd>
Tensor unary_ew(const Tensor& x, Fwd fwd, Bwd bwd) {
  Tensor y = Tensor::make_op(x.shape(), {x}, nullptr);
  const int64_t n = y.size();
  const double* px = x.data();
  double* py = y.data();
  for (int64_t i = 0; i < n; ++i) py[i] = fwd(px[i]);
  if (y.requires_grad()) {
    y.node()->backward_fn = [n, bwd](detail::Node& node) {
      auto& p = node.parents[0];
      if (!p->requires_grad) return;
      p->ensure_grad();
      const double* g = node.grad.data();
      const double* xv = p->data.data();
      const double* yv = node.data.data();
      double* dx = p->grad.data();
      for (int64_t i = 0; i < n; ++i) dx[i] += bwd(g[i], xv[i], yv[i]);
    };
  }
  return y;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and linear operations
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_ew(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return g; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_ew(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double) { return g; }, [](double g, double, double) { return -g; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_ew(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double, double y) { return g * y; },
      [](double g, double x, double) { return g * x; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_ew(
      a, b, "div", [](double x, double y) { return x / y; },
      [](double g, double, double y) { return g / y; },
      [](double g, double x, double y) { return -g * x / (y * y); });
}

inline Tensor scalar_mul(const Tensor& x, double c) {
  return detail::unary_ew(
      x, [c](double v) { return c * v; }, [c](double g, double, double) { return c * g; });
}

inline Tensor add_const(const Tensor& x, double c) {
  return detail::unary_ew(
      x, [c](double v) { return v + c; }, [](double g, double, double) { return g; });
}

inline Tensor neg(const Tensor& x) { return scalar_mul(x, -1.0); }

inline Tensor relu(const Tensor& x) {
  return detail::unary_ew(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double g, double xv, double) { return xv > 0.0 ? g : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary_ew(
      x,
      [](double v) {
        if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
        double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double g, double, double yv) { return g * yv * (1.0 - yv); });
}

inline Tensor tanh_(const Tensor& x) {
  return detail::unary_ew(
      x, [](double v) { return std::tanh(v); },
      [](double g, double, double yv) { return g * (1.0 - yv * yv); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary_ew(
      x, [](double v) { return v * v; },
      [](double g, double xv, double) { return 2.0 * g * xv; });
}

inline Tensor abs_(const Tensor& x) {
  return detail::unary_ew(
      x, [](double v) { return std::fabs(v); },
      [](double g, double xv, double) { return xv > 0.0 ? g : (xv < 0.0 ? -g : 0.0); });
}

inline Tensor exp_(const Tensor& x) {
  return detail::unary_ew(
      x, [](double v) { return std::exp(v); },
      [](double g, double, double yv) { return g * yv; });
}

inline Tensor log_(const Tensor& x) {
  return detail::unary_ew(
      x, [](double v) { return std::log(v); },
      [](double g, double xv, double) { return g / xv; });
}

inline Tensor max_const(const Tensor& x, double c) {
  return detail::unary_ew(
      x, [c](double v) { return v > c ? v : c; },
      [c](double g, double xv, double) { return xv > c ? g : 0.0; });
}

inline Tensor min_const(const Tensor& x, double c) {
  return detail::unary_ew(
      x, [c](double v) { return v < c ? v : c; },
      [c](double g, double xv, double) { return xv < c ? g : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  Tensor y = Tensor::make_op({1}, {x}, [](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const double g = node.grad[0];
    for (double& d : p->grad) d += g;
  });
  double acc = 0.0;
  const double* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
  y.data()[0] = acc;
  return y;
}

inline Tensor mean(const Tensor& x) {
  const double inv = 1.0 / static_cast<double>(x.size());
  Tensor y = Tensor::make_op({1}, {x}, [inv](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const double g = node.grad[0] * inv;
    for (double& d : p->grad) d += g;
  });
  double acc = 0.0;
  const double* px = x.data();
  for (int64_t i = 0; i < x.size(); ++i) acc += px[i];
  y.data()[0] = acc * inv;
  return y;
}

inline Tensor dot(const Tensor& a, const Tensor& b) {
  if (a.size() != b.size())
    throw std::invalid_argument("dot: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int64_t n = a.size();
  Tensor y = Tensor::make_op({1}, {a, b}, [n](detail::Node& node) {
    auto& pa = node.parents[0];
    auto& pb = node.parents[1];
    const double g = node.grad[0];
    if (pa->requires_grad) {
      pa->ensure_grad();
      for (int64_t i = 0; i < n; ++i) pa->grad[i] += g * pb->data[i];
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      for (int64_t i = 0; i < n; ++i) pb->grad[i] += g * pa->data[i];
    }
  });
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += a.data()[i] * b.data()[i];
  y.data()[0] = acc;
  return y;
}

inline Tensor l2norm(const Tensor& x) {
  const int64_t n = x.size();
  Tensor y = Tensor::make_op({1}, {x}, [n](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const double yv = node.data[0];
    if (yv < 1e-300) return;
    const double g = node.grad[0] / yv;
    for (int64_t i = 0; i < n; ++i) p->grad[i] += g * p->data[i];
  });
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += x.data()[i] * x.data()[i];
  y.data()[0] = std::sqrt(acc);
  return y;
}

// sim(m, n) = m.n / (|m| |n|), defined for nonzero vectors.
inline Tensor cosine_sim(const Tensor& m, const Tensor& n) {
  Tensor nm = l2norm(m);
  Tensor nn = l2norm(n);
  if (nm.value() <= 1e-12 || nn.value() <= 1e-12)
    throw std::invalid_argument("cosine_sim: zero-norm input (norms " + std::to_string(nm.value()) +
                                ", " + std::to_string(nn.value()) + ")");
  return div(dot(m, n), mul(nm, nn));
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  int64_t known = 1;
  int infer = -1;
  for (size_t i = 0; i < new_shape.size(); ++i) {
    if (new_shape[i] == -1) {
      if (infer >= 0) throw std::invalid_argument("reshape: more than one -1 dim");
      infer = static_cast<int>(i);
    } else {
      known *= new_shape[i];
    }
  }
  if (infer >= 0) new_shape[static_cast<size_t>(infer)] = static_cast<int>(x.size() / known);
  if (numel(new_shape) != x.size())
    throw std::invalid_argument("reshape: cannot view " + shape_str(x.shape()) + " as " +
                                shape_str(new_shape));
  Tensor y = Tensor::make_op(new_shape, {x}, [](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (size_t i = 0; i < node.grad.size(); ++i) p->grad[i] += node.grad[i];
  });
  std::memcpy(y.data(), x.data(), sizeof(double) * static_cast<size_t>(x.size()));
  return y;
}

inline Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (dim < 0 || dim >= rank) throw std::invalid_argument("concat: bad dim");
  Shape out = s0;
  out[static_cast<size_t>(dim)] = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank)
      throw std::invalid_argument("concat: rank mismatch " + shape_str(s0) + " vs " +
                                  shape_str(p.shape()));
    for (int i = 0; i < rank; ++i)
      if (i != dim && p.dim(i) != s0[static_cast<size_t>(i)])
        throw std::invalid_argument("concat: shape mismatch " + shape_str(s0) + " vs " +
                                    shape_str(p.shape()));
    out[static_cast<size_t>(dim)] += p.dim(dim);
  }
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s0[static_cast<size_t>(i)];
  for (int i = dim + 1; i < rank; ++i) inner *= s0[static_cast<size_t>(i)];
  std::vector<int64_t> blocks;
  for (const Tensor& p : parts) blocks.push_back(static_cast<int64_t>(p.dim(dim)) * inner);
  const int64_t row = static_cast<int64_t>(out[static_cast<size_t>(dim)]) * inner;

  Tensor y = Tensor::make_op(out, parts, [outer, blocks, row](detail::Node& node) {
    int64_t off = 0;
    for (size_t pi = 0; pi < node.parents.size(); ++pi) {
      auto& p = node.parents[pi];
      const int64_t blk = blocks[pi];
      if (p->requires_grad) {
        p->ensure_grad();
        for (int64_t o = 0; o < outer; ++o)
          for (int64_t i = 0; i < blk; ++i) p->grad[o * blk + i] += node.grad[o * row + off + i];
      }
      off += blk;
    }
  });
  int64_t off = 0;
  for (size_t pi = 0; pi < parts.size(); ++pi) {
    const int64_t blk = blocks[pi];
    const double* src = parts[pi].data();
    for (int64_t o = 0; o < outer; ++o)
      std::memcpy(y.data() + o * row + off, src + o * blk, sizeof(double) * static_cast<size_t>(blk));
    off += blk;
  }
  return y;
}

inline Tensor narrow(const Tensor& x, int dim, int start, int len) {
  const Shape& s = x.shape();
  const int rank = static_cast<int>(s.size());
  if (dim < 0 || dim >= rank) throw std::invalid_argument("narrow: bad dim");
  if (start < 0 || len <= 0 || start + len > s[static_cast<size_t>(dim)])
    throw std::invalid_argument("narrow: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") outside " + shape_str(s));
  Shape out = s;
  out[static_cast<size_t>(dim)] = len;
  int64_t outer = 1, inner = 1;
  for (int i = 0; i < dim; ++i) outer *= s[static_cast<size_t>(i)];
  for (int i = dim + 1; i < rank; ++i) inner *= s[static_cast<size_t>(i)];
  const int64_t in_row = static_cast<int64_t>(s[static_cast<size_t>(dim)]) * inner;
  const int64_t out_row = static_cast<int64_t>(len) * inner;
  const int64_t shift = static_cast<int64_t>(start) * inner;

  Tensor y = Tensor::make_op(out, {x}, [outer, in_row, out_row, shift](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < out_row; ++i) p->grad[o * in_row + shift + i] += node.grad[o * out_row + i];
  });
  for (int64_t o = 0; o < outer; ++o)
    std::memcpy(y.data() + o * out_row, x.data() + o * in_row + shift,
                sizeof(double) * static_cast<size_t>(out_row));
  return y;
}

inline Tensor row(const Tensor& x, int i) { return narrow(x, 0, i, 1); }

// y[i] = x[perm[i]] along the leading dimension.
inline Tensor permute_rows(const Tensor& x, const std::vector<int>& perm) {
  const int n = x.dim(0);
  if (static_cast<int>(perm.size()) != n)
    throw std::invalid_argument("permute_rows: perm size " + std::to_string(perm.size()) +
                                " vs rows " + std::to_string(n));
  const int64_t stride = x.size() / n;
  Tensor y = Tensor::make_op(x.shape(), {x}, [perm, stride, n](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    for (int i = 0; i < n; ++i) {
      const int64_t src = static_cast<int64_t>(i) * stride;
      const int64_t dst = static_cast<int64_t>(perm[static_cast<size_t>(i)]) * stride;
      for (int64_t j = 0; j < stride; ++j) p->grad[dst + j] += node.grad[src + j];
    }
  });
  for (int i = 0; i < n; ++i)
    std::memcpy(y.data() + static_cast<int64_t>(i) * stride,
                x.data() + static_cast<int64_t>(perm[static_cast<size_t>(i)]) * stride,
                sizeof(double) * static_cast<size_t>(stride));
  return y;
}

// ---------------------------------------------------------------------------
// Dense linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw std::invalid_argument("matmul: shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor y = Tensor::make_op({m, n}, {a, b}, [m, k, n](detail::Node& node) {
    auto& pa = node.parents[0];
    auto& pb = node.parents[1];
    const bool degenerate = m == 1 || n == 1 || k == 1;
    detail::CMapM G(node.grad.data(), m, n);
    if (pa->requires_grad) {
      pa->ensure_grad();
      if (degenerate) {
        for (int i = 0; i < m; ++i)
          for (int kk = 0; kk < k; ++kk) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += node.grad[i * n + j] * pb->data[kk * n + j];
            pa->grad[i * k + kk] += acc;
          }
      } else {
        detail::MapM dA(pa->grad.data(), m, k);
        detail::CMapM B(pb->data.data(), k, n);
        dA.noalias() += G * B.transpose();
      }
    }
    if (pb->requires_grad) {
      pb->ensure_grad();
      if (degenerate) {
        for (int kk = 0; kk < k; ++kk)
          for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) acc += pa->data[i * k + kk] * node.grad[i * n + j];
            pb->grad[kk * n + j] += acc;
          }
      } else {
        detail::MapM dB(pb->grad.data(), k, n);
        detail::CMapM A(pa->data.data(), m, k);
        dB.noalias() += A.transpose() * G;
      }
    }
  });
  // Degenerate extents would hit Eigen's gemv, whose reduction order depends
  // on buffer alignment; keep those on fixed-order loops.
  if (m == 1 || n == 1 || k == 1) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int kk = 0; kk < k; ++kk) acc += a.data()[i * k + kk] * b.data()[kk * n + j];
        y.data()[i * n + j] = acc;
      }
    return y;
  }
  detail::MapM Y(y.data(), m, n);
  detail::CMapM A(a.data(), m, k), B(b.data(), k, n);
  Y.noalias() = A * B;
  return y;
}

// x[N,in] * w[in,out] + bias[out]
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add(matmul(x, w), bias);
}

// ---------------------------------------------------------------------------
// 2D convolution (zero padding) and x2 upsampling, NCHW layout
// ---------------------------------------------------------------------------

namespace detail {

// Patch matrix layout: one [C*kh*kw, N*Ho*Wo] buffer for the whole batch,
// sample n occupying the column block [n*Ho*Wo, (n+1)*Ho*Wo). One wide GEMM
// then covers every sample.
inline void im2col(const double* x, int C, int H, int W, int kh, int kw, int stride, int pad,
                   int Ho, int Wo, double* col, int64_t row_stride) {
  for (int c = 0; c < C; ++c) {
    const double* xc = x + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        double* dst = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * row_stride;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            std::fill(dst, dst + Wo, 0.0);
            dst += Wo;
            continue;
          }
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            *dst++ = (ix >= 0 && ix < W) ? xc[static_cast<int64_t>(iy) * W + ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_add(const double* col, int C, int H, int W, int kh, int kw, int stride, int pad,
                       int Ho, int Wo, double* dx, int64_t row_stride) {
  for (int c = 0; c < C; ++c) {
    double* xc = dx + static_cast<int64_t>(c) * H * W;
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const double* src = col + (static_cast<int64_t>(c) * kh * kw + ky * kw + kx) * row_stride;
        for (int oy = 0; oy < Ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) {
            src += Wo;
            continue;
          }
          for (int ox = 0; ox < Wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < W) xc[static_cast<int64_t>(iy) * W + ix] += src[ox];
          }
          src += Wo;
        }
      }
    }
  }
}

}  // namespace detail

namespace detail {

// Direct 3x3 stride-1 same-padding convolution: all work stays inside the
// per-sample planes, which avoids the large patch matrices that dominate at
// full resolution.
inline void direct3x3_forward(const double* x, const double* w, const double* bias, double* y,
                              int N, int C, int Cout, int H, int W) {
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      double* yp = y + (static_cast<int64_t>(n) * Cout + co) * plane;
      const double b = bias ? bias[co] : 0.0;
      for (int64_t i = 0; i < plane; ++i) yp[i] = b;
      for (int ci = 0; ci < C; ++ci) {
        const double* xp = x + (static_cast<int64_t>(n) * C + ci) * plane;
        const double* wk = w + (static_cast<int64_t>(co) * C + ci) * 9;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const double wv = wk[ky * 3 + kx];
            if (wv == 0.0) continue;
            const int dy = ky - 1, dx = kx - 1;
            const int oy0 = std::max(0, -dy), oy1 = std::min(H, H - dy);
            const int ox0 = std::max(0, -dx), ox1 = std::min(W, W - dx);
            for (int oy = oy0; oy < oy1; ++oy) {
              double* yr = yp + static_cast<int64_t>(oy) * W;
              const double* xr = xp + static_cast<int64_t>(oy + dy) * W + dx;
              for (int ox = ox0; ox < ox1; ++ox) yr[ox] += wv * xr[ox];
            }
          }
      }
    }
  }
}

// Fixed-order reductions: four independent accumulator lanes reassociated in
// the source itself, so the result never depends on buffer alignment (Eigen's
// reductions split at the first aligned address, which varies per allocation).
inline double det_dot(const double* a, const double* b, int64_t n) {
  double acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += a[i] * b[i];
    acc1 += a[i + 1] * b[i + 1];
    acc2 += a[i + 2] * b[i + 2];
    acc3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) acc0 += a[i] * b[i];
  return (acc0 + acc1) + (acc2 + acc3);
}

inline double det_sum(const double* a, int64_t n) {
  double acc0 = 0, acc1 = 0, acc2 = 0, acc3 = 0;
  int64_t i = 0;
  for (; i + 4 <= n; i += 4) {
    acc0 += a[i];
    acc1 += a[i + 1];
    acc2 += a[i + 2];
    acc3 += a[i + 3];
  }
  for (; i < n; ++i) acc0 += a[i];
  return (acc0 + acc1) + (acc2 + acc3);
}

// dX[ci] += sum_co w[co,ci,ky,kx] * shifted dY[co]; dW via plane dot products.
// The axpy and dot passes stay separate so both vectorize.
inline void direct3x3_backward(const double* x, const double* w, const double* gy, double* dx,
                               double* dw, double* db, int N, int C, int Cout, int H, int W) {
  const int64_t plane = static_cast<int64_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      const double* gp = gy + (static_cast<int64_t>(n) * Cout + co) * plane;
      if (db) db[co] += det_sum(gp, plane);
      for (int ci = 0; ci < C; ++ci) {
        const double* xp = x + (static_cast<int64_t>(n) * C + ci) * plane;
        double* dxp = dx ? dx + (static_cast<int64_t>(n) * C + ci) * plane : nullptr;
        const double* wk = w + (static_cast<int64_t>(co) * C + ci) * 9;
        double* dwk = dw ? dw + (static_cast<int64_t>(co) * C + ci) * 9 : nullptr;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const int dy = ky - 1, dx_ = kx - 1;
            const int oy0 = std::max(0, -dy), oy1 = std::min(H, H - dy);
            const int ox0 = std::max(0, -dx_), ox1 = std::min(W, W - dx_);
            const int len = ox1 - ox0;
            if (len <= 0) continue;
            const double wv = wk[ky * 3 + kx];
            if (dxp && wv != 0.0) {
              for (int oy = oy0; oy < oy1; ++oy) {
                const double* gr = gp + static_cast<int64_t>(oy) * W + ox0;
                double* dxr = dxp + static_cast<int64_t>(oy + dy) * W + dx_ + ox0;
                for (int i = 0; i < len; ++i) dxr[i] += wv * gr[i];
              }
            }
            if (dwk) {
              double wacc = 0.0;
              for (int oy = oy0; oy < oy1; ++oy) {
                const double* gr = gp + static_cast<int64_t>(oy) * W + ox0;
                const double* xr = xp + static_cast<int64_t>(oy + dy) * W + dx_ + ox0;
                wacc += det_dot(gr, xr, len);
              }
              dwk[ky * 3 + kx] += wacc;
            }
          }
      }
    }
  }
}

}  // namespace detail

// x[N,Cin,H,W], w[Cout,Cin,kh,kw], optional bias[Cout]. Zero padding.
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1))
    throw std::invalid_argument("conv2d: shape mismatch " + shape_str(x.shape()) + " vs " +
                                shape_str(w.shape()));
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw std::invalid_argument("conv2d: kernel " + shape_str(w.shape()) + " larger than input " +
                                shape_str(x.shape()));
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != Cout))
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) + " vs Cout " +
                                std::to_string(Cout));
  // Stride-1 3x3 convolutions run the direct plane-local kernel; the strided
  // ones go through a batch-wide patch matrix and one GEMM.
  if (stride == 1 && kh == 3 && kw == 3 && pad == 1) {
    std::vector<Tensor> parents = {x, w};
    if (has_bias) parents.push_back(bias);
    Tensor y = Tensor::make_op({N, Cout, Ho, Wo}, parents,
                               [N, C, Cout, H, W, has_bias](detail::Node& node) {
                                 auto& px = node.parents[0];
                                 auto& pw = node.parents[1];
                                 const bool need_dx = px->requires_grad;
                                 const bool need_dw = pw->requires_grad;
                                 if (need_dx) px->ensure_grad();
                                 if (need_dw) pw->ensure_grad();
                                 double* db = nullptr;
                                 if (has_bias && node.parents[2]->requires_grad) {
                                   node.parents[2]->ensure_grad();
                                   db = node.parents[2]->grad.data();
                                 }
                                 if (!need_dx && !need_dw && !db) return;
                                 detail::direct3x3_backward(
                                     px->data.data(), pw->data.data(), node.grad.data(),
                                     need_dx ? px->grad.data() : nullptr,
                                     need_dw ? pw->grad.data() : nullptr, db, N, C, Cout, H, W);
                               });
    detail::direct3x3_forward(x.data(), w.data(), has_bias ? bias.data() : nullptr, y.data(), N, C,
                              Cout, H, W);
    return y;
  }

  const int K = C * kh * kw;
  const int64_t plane = static_cast<int64_t>(Ho) * Wo;
  const int64_t wide = static_cast<int64_t>(N) * plane;

  // Batch-wide patch matrix, cached for the backward pass.
  auto cols = std::make_shared<std::vector<double>>(static_cast<size_t>(K) * wide);

  std::vector<Tensor> parents = {x, w};
  if (has_bias) parents.push_back(bias);
  Tensor y = Tensor::make_op(
      {N, Cout, Ho, Wo}, parents,
      [N, C, H, W, Cout, kh, kw, stride, pad, Ho, Wo, K, plane, wide, cols,
       has_bias](detail::Node& node) {
        auto& px = node.parents[0];
        auto& pw = node.parents[1];
        const bool need_dx = px->requires_grad;
        const bool need_dw = pw->requires_grad;
        if (need_dx) px->ensure_grad();
        if (need_dw) pw->ensure_grad();

        // regroup the gradient as [Cout, N*Ho*Wo] to match the column layout
        std::vector<double> g_all(static_cast<size_t>(Cout) * wide);
        for (int n = 0; n < N; ++n)
          for (int co = 0; co < Cout; ++co)
            std::memcpy(g_all.data() + static_cast<int64_t>(co) * wide + static_cast<int64_t>(n) * plane,
                        node.grad.data() + (static_cast<int64_t>(n) * Cout + co) * plane,
                        sizeof(double) * static_cast<size_t>(plane));
        detail::CMapM G(g_all.data(), Cout, wide);
        detail::CMapM Col(cols->data(), K, wide);
        if (need_dw) {
          detail::MapM dW(pw->grad.data(), Cout, K);
          dW.noalias() += G * Col.transpose();
        }
        if (need_dx) {
          std::vector<double> dcol(static_cast<size_t>(K) * wide);
          detail::MapM Dcol(dcol.data(), K, wide);
          detail::CMapM Wm(pw->data.data(), Cout, K);
          Dcol.noalias() = Wm.transpose() * G;
          for (int n = 0; n < N; ++n)
            detail::col2im_add(dcol.data() + static_cast<int64_t>(n) * plane, C, H, W, kh, kw,
                               stride, pad, Ho, Wo,
                               px->grad.data() + static_cast<int64_t>(n) * C * H * W, wide);
        }
        if (has_bias && node.parents[2]->requires_grad) {
          auto& pb = node.parents[2];
          pb->ensure_grad();
          for (int co = 0; co < Cout; ++co) {
            const double* g = g_all.data() + static_cast<int64_t>(co) * wide;
            double acc = 0.0;
            for (int64_t i = 0; i < wide; ++i) acc += g[i];
            pb->grad[static_cast<size_t>(co)] += acc;
          }
        }
      });

  for (int n = 0; n < N; ++n)
    detail::im2col(x.data() + static_cast<int64_t>(n) * C * H * W, C, H, W, kh, kw, stride, pad, Ho,
                   Wo, cols->data() + static_cast<int64_t>(n) * plane, wide);
  {
    std::vector<double> y_all(static_cast<size_t>(Cout) * wide);
    detail::MapM Y(y_all.data(), Cout, wide);
    detail::CMapM Wm(w.data(), Cout, K);
    detail::CMapM Col(cols->data(), K, wide);
    Y.noalias() = Wm * Col;
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < Cout; ++co) {
        double* dst = y.data() + (static_cast<int64_t>(n) * Cout + co) * plane;
        const double* src = y_all.data() + static_cast<int64_t>(co) * wide + static_cast<int64_t>(n) * plane;
        if (has_bias) {
          const double b = bias.data()[static_cast<size_t>(co)];
          for (int64_t i = 0; i < plane; ++i) dst[i] = src[i] + b;
        } else {
          std::memcpy(dst, src, sizeof(double) * static_cast<size_t>(plane));
        }
      }
  }
  return y;
}

inline Tensor conv2d(const Tensor& x, const Tensor& w, int stride, int pad) {
  return conv2d(x, w, Tensor(), stride, pad);
}

// Non-overlapping k x k average pooling; extents must divide evenly.
inline Tensor avgpool2d(const Tensor& x, int k) {
  if (x.rank() != 4) throw std::invalid_argument("avgpool2d: need NCHW, got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (k < 1 || H % k != 0 || W % k != 0)
    throw std::invalid_argument("avgpool2d: window " + std::to_string(k) + " does not divide " +
                                shape_str(x.shape()));
  const int Ho = H / k, Wo = W / k;
  const double inv = 1.0 / (k * k);
  Tensor y = Tensor::make_op({N, C, Ho, Wo}, {x}, [N, C, H, W, Ho, Wo, k, inv](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const int64_t planes = static_cast<int64_t>(N) * C;
    for (int64_t pl = 0; pl < planes; ++pl) {
      const double* g = node.grad.data() + pl * Ho * Wo;
      double* dx = p->grad.data() + pl * H * W;
      for (int oy = 0; oy < Ho; ++oy)
        for (int ox = 0; ox < Wo; ++ox) {
          const double gv = g[static_cast<int64_t>(oy) * Wo + ox] * inv;
          for (int dy = 0; dy < k; ++dy)
            for (int dx_ = 0; dx_ < k; ++dx_)
              dx[static_cast<int64_t>(oy * k + dy) * W + ox * k + dx_] += gv;
        }
    }
  });
  const int64_t planes = static_cast<int64_t>(N) * C;
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * H * W;
    double* dst = y.data() + pl * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx_ = 0; dx_ < k; ++dx_) acc += src[static_cast<int64_t>(oy * k + dy) * W + ox * k + dx_];
        dst[static_cast<int64_t>(oy) * Wo + ox] = acc * inv;
      }
  }
  return y;
}

inline Tensor upsample2_nearest(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample2_nearest: need NCHW, got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor y = Tensor::make_op({N, C, 2 * H, 2 * W}, {x}, [N, C, H, W](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const int64_t planes = static_cast<int64_t>(N) * C;
    for (int64_t pl = 0; pl < planes; ++pl) {
      const double* g = node.grad.data() + pl * 4 * H * W;
      double* dx = p->grad.data() + pl * H * W;
      for (int i = 0; i < 2 * H; ++i)
        for (int j = 0; j < 2 * W; ++j) dx[(i / 2) * W + j / 2] += g[static_cast<int64_t>(i) * 2 * W + j];
    }
  });
  const int64_t planes = static_cast<int64_t>(N) * C;
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * H * W;
    double* dst = y.data() + pl * 4 * H * W;
    for (int i = 0; i < 2 * H; ++i)
      for (int j = 0; j < 2 * W; ++j) dst[static_cast<int64_t>(i) * 2 * W + j] = src[(i / 2) * W + j / 2];
  }
  return y;
}

namespace detail {

// Half-pixel source coordinates with edge clamping; each output pixel mixes
// at most 2x2 neighbours with fixed weights.
struct Bilin2x {
  int lo, hi;
  double w_hi;
};

inline Bilin2x bilin2x_axis(int out_idx, int in_extent) {
  double src = (out_idx + 0.5) / 2.0 - 0.5;
  if (src < 0.0) src = 0.0;
  if (src > in_extent - 1.0) src = in_extent - 1.0;
  int lo = static_cast<int>(std::floor(src));
  if (lo > in_extent - 2) lo = in_extent - 2;
  if (lo < 0) lo = 0;
  double w_hi = src - lo;
  return {lo, std::min(lo + 1, in_extent - 1), w_hi};
}

}  // namespace detail

inline Tensor upsample2_bilinear(const Tensor& x) {
  if (x.rank() != 4) throw std::invalid_argument("upsample2_bilinear: need NCHW, got " + shape_str(x.shape()));
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H < 2 || W < 2) {
    // Degenerate extent: bilinear reduces to nearest.
    return upsample2_nearest(x);
  }
  Tensor y = Tensor::make_op({N, C, 2 * H, 2 * W}, {x}, [N, C, H, W](detail::Node& node) {
    auto& p = node.parents[0];
    if (!p->requires_grad) return;
    p->ensure_grad();
    const int64_t planes = static_cast<int64_t>(N) * C;
    for (int64_t pl = 0; pl < planes; ++pl) {
      const double* g = node.grad.data() + pl * 4 * H * W;
      double* dx = p->grad.data() + pl * H * W;
      for (int i = 0; i < 2 * H; ++i) {
        const auto ay = detail::bilin2x_axis(i, H);
        for (int j = 0; j < 2 * W; ++j) {
          const auto ax = detail::bilin2x_axis(j, W);
          const double gv = g[static_cast<int64_t>(i) * 2 * W + j];
          dx[ay.lo * W + ax.lo] += gv * (1 - ay.w_hi) * (1 - ax.w_hi);
          dx[ay.lo * W + ax.hi] += gv * (1 - ay.w_hi) * ax.w_hi;
          dx[ay.hi * W + ax.lo] += gv * ay.w_hi * (1 - ax.w_hi);
          dx[ay.hi * W + ax.hi] += gv * ay.w_hi * ax.w_hi;
        }
      }
    }
  });
  const int64_t planes = static_cast<int64_t>(N) * C;
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* src = x.data() + pl * H * W;
    double* dst = y.data() + pl * 4 * H * W;
    for (int i = 0; i < 2 * H; ++i) {
      const auto ay = detail::bilin2x_axis(i, H);
      for (int j = 0; j < 2 * W; ++j) {
        const auto ax = detail::bilin2x_axis(j, W);
        dst[static_cast<int64_t>(i) * 2 * W + j] =
            src[ay.lo * W + ax.lo] * (1 - ay.w_hi) * (1 - ax.w_hi) +
            src[ay.lo * W + ax.hi] * (1 - ay.w_hi) * ax.w_hi +
            src[ay.hi * W + ax.lo] * ay.w_hi * (1 - ax.w_hi) +
            src[ay.hi * W + ax.hi] * ay.w_hi * ax.w_hi;
      }
    }
  }
  return y;
}

}  // namespace vidrep
