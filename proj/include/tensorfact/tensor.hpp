#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "tensorfact/common.hpp"

namespace tensorfact {

// Row-major dense matrix. Houses the factor matrices A (TS x r),
// B (r x D2D1) and their delta counterparts, plus the composed M.
template <typename S>
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<S> data;

  Matrix() = default;
  Matrix(size_t r, size_t c, S fill = S(0)) : rows(r), cols(c), data(r * c, fill) {}

  S& at(size_t r, size_t c) { return data[r * cols + c]; }
  const S& at(size_t r, size_t c) const { return data[r * cols + c]; }
  size_t size() const { return data.size(); }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

// 4-way dense tensor, row-major: index (i0,i1,i2,i3) lives at
// ((i0*n1 + i1)*n2 + i2)*n3 + i3. Houses kernels (T x S x D2 x D1)
// and activations (N x C x H x W).
template <typename S>
struct Tensor4 {
  std::array<size_t, 4> dims{0, 0, 0, 0};
  std::vector<S> data;

  Tensor4() = default;
  Tensor4(size_t n0, size_t n1, size_t n2, size_t n3, S fill = S(0))
      : dims{n0, n1, n2, n3}, data(n0 * n1 * n2 * n3, fill) {}

  size_t offset(size_t i0, size_t i1, size_t i2, size_t i3) const {
    return ((i0 * dims[1] + i1) * dims[2] + i2) * dims[3] + i3;
  }
  S& at(size_t i0, size_t i1, size_t i2, size_t i3) { return data[offset(i0, i1, i2, i3)]; }
  const S& at(size_t i0, size_t i1, size_t i2, size_t i3) const {
    return data[offset(i0, i1, i2, i3)];
  }
  size_t size() const { return data.size(); }
  bool same_shape(const Tensor4& o) const { return dims == o.dims; }
};

// Stride/padding for the conv operator. Padding is symmetric zero-padding.
struct ConvGeometry {
  size_t stride = 1;
  size_t padding = 0;
};

inline size_t conv_out_extent(size_t in, size_t window, const ConvGeometry& g) {
  size_t padded = in + 2 * g.padding;
  if (padded < window) return 0;
  return (padded - window) / g.stride + 1;
}

// M = A * B, the low-rank composition: [M]_{p,q} = sum_c [A]_{p,c} [B]_{c,q}.
template <typename S>
Matrix<S> compose_factors(const Matrix<S>& a, const Matrix<S>& b) {
  if (a.cols != b.rows)
    throw shape_error("compose_factors: inner dimensions differ (" +
                      std::to_string(a.cols) + " vs " + std::to_string(b.rows) + ")");
  Matrix<S> m(a.rows, b.cols);
  for (size_t p = 0; p < a.rows; ++p) {
    for (size_t c = 0; c < a.cols; ++c) {
      const S apc = a.at(p, c);
      if (apc == S(0)) continue;
      const S* brow = &b.data[c * b.cols];
      S* mrow = &m.data[p * m.cols];
      for (size_t q = 0; q < b.cols; ++q) mrow[q] += apc * brow[q];
    }
  }
  return m;
}

// matmul variants used by the factor gradients
template <typename S>
Matrix<S> matmul_abt(const Matrix<S>& a, const Matrix<S>& b) {  // A * B^T
  if (a.cols != b.cols) throw shape_error("matmul_abt: shape mismatch");
  Matrix<S> m(a.rows, b.rows);
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t j = 0; j < b.rows; ++j) {
      S acc = S(0);
      for (size_t k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(j, k);
      m.at(i, j) = acc;
    }
  return m;
}

template <typename S>
Matrix<S> matmul_atb(const Matrix<S>& a, const Matrix<S>& b) {  // A^T * B
  if (a.rows != b.rows) throw shape_error("matmul_atb: shape mismatch");
  Matrix<S> m(a.cols, b.cols);
  for (size_t k = 0; k < a.rows; ++k)
    for (size_t i = 0; i < a.cols; ++i) {
      const S aki = a.at(k, i);
      if (aki == S(0)) continue;
      for (size_t j = 0; j < b.cols; ++j) m.at(i, j) += aki * b.at(k, j);
    }
  return m;
}

// Matrix -> kernel reshape: [K]_{t,s,d2,d1} = [M]_{(t-1)S+s, (d2-1)D1+d1}
// (1-based form; 0-based in memory). Bijective with flatten_from_kernel.
template <typename S>
Tensor4<S> reshape_to_kernel(const Matrix<S>& m, size_t t, size_t s, size_t d2, size_t d1) {
  if (m.rows != t * s || m.cols != d2 * d1)
    throw shape_error("reshape_to_kernel: matrix is " + std::to_string(m.rows) + "x" +
                      std::to_string(m.cols) + ", expected " + std::to_string(t * s) + "x" +
                      std::to_string(d2 * d1));
  Tensor4<S> k(t, s, d2, d1);
  k.data = m.data;  // identical row-major layout
  return k;
}

template <typename S>
Matrix<S> flatten_from_kernel(const Tensor4<S>& k) {
  Matrix<S> m(k.dims[0] * k.dims[1], k.dims[2] * k.dims[3]);
  m.data = k.data;
  return m;
}

namespace detail {

// Output-index range [o0, o1) for which o*stride + tap - pad stays inside
// [0, extent).
inline void valid_out_range(long tap, long pad, long stride, long extent, long out_extent,
                            long& o0, long& o1) {
  const long shift = tap - pad;  // i = o*stride + shift
  o0 = shift >= 0 ? 0 : (-shift + stride - 1) / stride;
  const long last = extent - 1 - shift;
  o1 = last < 0 ? 0 : std::min(out_extent, last / stride + 1);
  if (o1 < o0) o1 = o0;
}

// Unfold one image into a (S*D2*D1) x (HO*WO) patch matrix; out-of-range
// taps under zero padding stay zero.
template <typename S>
void im2col(const Tensor4<S>& x, size_t image, size_t d2, size_t d1, const ConvGeometry& g,
            size_t ho, size_t wo, std::vector<S>& cols) {
  const size_t s_in = x.dims[1], h = x.dims[2], w = x.dims[3];
  const long pad = (long)g.padding, stride = (long)g.stride;
  const size_t plane = ho * wo;
  cols.assign(s_in * d2 * d1 * plane, S(0));
  for (size_t is = 0; is < s_in; ++is) {
    const S* xplane = &x.data[x.offset(image, is, 0, 0)];
    for (size_t id2 = 0; id2 < d2; ++id2) {
      long oy0, oy1;
      valid_out_range((long)id2, pad, stride, (long)h, (long)ho, oy0, oy1);
      for (size_t id1 = 0; id1 < d1; ++id1) {
        long ox0, ox1;
        valid_out_range((long)id1, pad, stride, (long)w, (long)wo, ox0, ox1);
        S* __restrict crow = &cols[((is * d2 + id2) * d1 + id1) * plane];
        for (long oy = oy0; oy < oy1; ++oy) {
          const long iy = oy * stride + (long)id2 - pad;
          const S* __restrict xrow =
              xplane + (size_t)iy * w + (size_t)(ox0 * stride + (long)id1 - pad);
          S* __restrict dst = crow + (size_t)oy * wo;
          if (stride == 1) {
            for (long ox = ox0; ox < ox1; ++ox) dst[ox] = xrow[ox - ox0];
          } else {
            for (long ox = ox0; ox < ox1; ++ox) dst[ox] = xrow[(size_t)((ox - ox0) * stride)];
          }
        }
      }
    }
  }
}

// Transposed unfold: (HO*WO) x (S*D2*D1), patches contiguous per output
// position.
template <typename S>
void im2col_t(const Tensor4<S>& x, size_t image, size_t d2, size_t d1, const ConvGeometry& g,
              size_t ho, size_t wo, std::vector<S>& cols) {
  const size_t s_in = x.dims[1], h = x.dims[2], w = x.dims[3];
  const long pad = (long)g.padding, stride = (long)g.stride;
  const size_t taps = s_in * d2 * d1;
  cols.assign(ho * wo * taps, S(0));
  for (size_t is = 0; is < s_in; ++is) {
    const S* xplane = &x.data[x.offset(image, is, 0, 0)];
    for (size_t id2 = 0; id2 < d2; ++id2) {
      long oy0, oy1;
      valid_out_range((long)id2, pad, stride, (long)h, (long)ho, oy0, oy1);
      for (size_t id1 = 0; id1 < d1; ++id1) {
        long ox0, ox1;
        valid_out_range((long)id1, pad, stride, (long)w, (long)wo, ox0, ox1);
        const size_t kk = (is * d2 + id2) * d1 + id1;
        for (long oy = oy0; oy < oy1; ++oy) {
          const long iy = oy * stride + (long)id2 - pad;
          const S* __restrict xrow =
              xplane + (size_t)iy * w + (size_t)(ox0 * stride + (long)id1 - pad);
          for (long ox = ox0; ox < ox1; ++ox)
            cols[((size_t)oy * wo + (size_t)ox) * taps + kk] =
                xrow[(size_t)((ox - ox0) * stride)];
        }
      }
    }
  }
}

// Scatter-add a patch matrix back onto one image (adjoint of im2col).
template <typename S>
void col2im_add(const std::vector<S>& cols, Tensor4<S>& dx, size_t image, size_t d2, size_t d1,
                const ConvGeometry& g, size_t ho, size_t wo) {
  const size_t s_in = dx.dims[1], h = dx.dims[2], w = dx.dims[3];
  const long pad = (long)g.padding, stride = (long)g.stride;
  const size_t plane = ho * wo;
  for (size_t is = 0; is < s_in; ++is) {
    S* dxplane = &dx.data[dx.offset(image, is, 0, 0)];
    for (size_t id2 = 0; id2 < d2; ++id2) {
      long oy0, oy1;
      valid_out_range((long)id2, pad, stride, (long)h, (long)ho, oy0, oy1);
      for (size_t id1 = 0; id1 < d1; ++id1) {
        long ox0, ox1;
        valid_out_range((long)id1, pad, stride, (long)w, (long)wo, ox0, ox1);
        const S* crow = &cols[((is * d2 + id2) * d1 + id1) * plane];
        for (long oy = oy0; oy < oy1; ++oy) {
          const long iy = oy * stride + (long)id2 - pad;
          S* __restrict dxrow =
              dxplane + (size_t)iy * w + (size_t)(ox0 * stride + (long)id1 - pad);
          const S* __restrict srow = crow + (size_t)oy * wo;
          if (stride == 1) {
            for (long ox = ox0; ox < ox1; ++ox) dxrow[ox - ox0] += srow[ox];
          } else {
            for (long ox = ox0; ox < ox1; ++ox)
              dxrow[(size_t)((ox - ox0) * stride)] += srow[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

// 2-D convolution in the deep-learning convention (cross-correlation, no
// kernel flip). K: T x S x D2 x D1, X: N x S x H x W -> Y: N x T x H' x W'.
// Out-of-range input reads under zero padding contribute 0. Evaluated as
// an unfold + matrix product per image.
template <typename S>
Tensor4<S> conv2d(const Tensor4<S>& k, const Tensor4<S>& x, const ConvGeometry& g) {
  const size_t t_out = k.dims[0], s_in = k.dims[1], d2 = k.dims[2], d1 = k.dims[3];
  const size_t n = x.dims[0], h = x.dims[2], w = x.dims[3];
  if (x.dims[1] != s_in)
    throw shape_error("conv2d: input has " + std::to_string(x.dims[1]) +
                      " channels, kernel expects " + std::to_string(s_in));
  const size_t ho = conv_out_extent(h, d2, g);
  const size_t wo = conv_out_extent(w, d1, g);
  if (ho == 0 || wo == 0) throw shape_error("conv2d: empty output");

  Tensor4<S> y(n, t_out, ho, wo);
  const size_t plane = ho * wo, taps = s_in * d2 * d1;
  std::vector<S> cols;
  for (size_t in = 0; in < n; ++in) {
    detail::im2col(x, in, d2, d1, g, ho, wo, cols);
    for (size_t it = 0; it < t_out; ++it) {
      S* __restrict yrow = &y.data[y.offset(in, it, 0, 0)];
      const S* krow = &k.data[it * taps];
      for (size_t kk = 0; kk < taps; ++kk) {
        const S kv = krow[kk];
        if (kv == S(0)) continue;
        const S* __restrict crow = &cols[kk * plane];
        for (size_t i = 0; i < plane; ++i) yrow[i] += kv * crow[i];
      }
    }
  }
  return y;
}

// Gradient of conv2d w.r.t. the kernel: correlate the input with the
// upstream gradient. upstream: N x T x H' x W', X: N x S x H x W.
template <typename S>
Tensor4<S> conv2d_weight_grad(const Tensor4<S>& upstream, const Tensor4<S>& x, size_t d2,
                              size_t d1, const ConvGeometry& g) {
  const size_t n = x.dims[0], s_in = x.dims[1];
  const size_t t_out = upstream.dims[1], ho = upstream.dims[2], wo = upstream.dims[3];
  if (upstream.dims[0] != n) throw shape_error("conv2d_weight_grad: batch mismatch");
  Tensor4<S> dk(t_out, s_in, d2, d1);
  const size_t plane = ho * wo, taps = s_in * d2 * d1;
  std::vector<S> cols;
  for (size_t in = 0; in < n; ++in) {
    detail::im2col_t(x, in, d2, d1, g, ho, wo, cols);
    for (size_t it = 0; it < t_out; ++it) {
      const S* urow = &upstream.data[upstream.offset(in, it, 0, 0)];
      S* __restrict dkrow = &dk.data[it * taps];
      for (size_t i = 0; i < plane; ++i) {
        const S uv = urow[i];
        if (uv == S(0)) continue;
        const S* __restrict crow = &cols[i * taps];
        for (size_t kk = 0; kk < taps; ++kk) dkrow[kk] += uv * crow[kk];
      }
    }
  }
  return dk;
}

// Gradient of conv2d w.r.t. the input (transposed convolution): fold the
// kernel-weighted upstream back onto the input taps.
template <typename S>
Tensor4<S> conv2d_input_grad(const Tensor4<S>& upstream, const Tensor4<S>& k, size_t h, size_t w,
                             const ConvGeometry& g) {
  const size_t t_out = k.dims[0], s_in = k.dims[1], d2 = k.dims[2], d1 = k.dims[3];
  const size_t n = upstream.dims[0], ho = upstream.dims[2], wo = upstream.dims[3];
  if (upstream.dims[1] != t_out) throw shape_error("conv2d_input_grad: channel mismatch");
  Tensor4<S> dx(n, s_in, h, w);
  const size_t plane = ho * wo, taps = s_in * d2 * d1;
  std::vector<S> cols;
  for (size_t in = 0; in < n; ++in) {
    cols.assign(taps * plane, S(0));
    for (size_t it = 0; it < t_out; ++it) {
      const S* __restrict urow = &upstream.data[upstream.offset(in, it, 0, 0)];
      const S* krow = &k.data[it * taps];
      for (size_t kk = 0; kk < taps; ++kk) {
        const S kv = krow[kk];
        if (kv == S(0)) continue;
        S* __restrict crow = &cols[kk * plane];
        for (size_t i = 0; i < plane; ++i) crow[i] += kv * urow[i];
      }
    }
    detail::col2im_add(cols, dx, in, d2, d1, g, ho, wo);
  }
  return dx;
}

// Entrywise p-norm over all elements. p=1: sum of |x|; p=2: Frobenius norm.
template <typename S>
double p_norm(const Tensor4<S>& t, int p) {
  if (p != 1 && p != 2) throw argument_error("p_norm: p must be 1 or 2");
  double acc = 0.0;
  if (p == 1) {
    for (S v : t.data) acc += std::abs(static_cast<double>(v));
    return acc;
  }
  for (S v : t.data) {
    double d = static_cast<double>(v);
    acc += d * d;
  }
  return std::sqrt(acc);
}

template <typename S>
double frobenius(const Matrix<S>& m) {
  double acc = 0.0;
  for (S v : m.data) {
    double d = static_cast<double>(v);
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace tensorfact
