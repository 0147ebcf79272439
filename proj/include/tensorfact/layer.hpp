#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/svd.hpp"
#include "tensorfact/tensor.hpp"

namespace tensorfact {

// Largest admissible rank for a T x S x D2 x D1 kernel.
inline size_t max_rank(size_t t, size_t s, size_t d2, size_t d1) {
  return std::min(t * s, d2 * d1);
}

// r = max(1, floor(alpha * min(TS, D2D1))). alpha in (0, 1].
inline size_t rank_for_alpha(size_t t, size_t s, size_t d2, size_t d1, double alpha) {
  if (!(alpha > 0.0) || alpha > 1.0)
    throw argument_error("rank_for_alpha: alpha must be in (0, 1], got " + std::to_string(alpha));
  const size_t rmax = max_rank(t, s, d2, d1);
  const size_t r = static_cast<size_t>(std::floor(alpha * static_cast<double>(rmax)));
  return std::max<size_t>(1, r);
}

struct ParamCount {
  size_t dense = 0;           // T*S*D2*D1
  size_t factored_base = 0;   // r*(TS + D2D1)
  size_t factored_delta = 0;  // delta_r*(TS + D2D1)
  size_t bias = 0;            // T
};

// A convolution layer stored as low-rank factors A (TS x r), B (r x D2D1)
// plus an optional augmentation branch deltaA (TS x delta_r),
// deltaB (delta_r x D2D1). The kernel is reshape(A*B); the branch kernel is
// reshape(deltaA*deltaB). One bias per output channel.
template <typename S>
struct FactorizedConvLayer {
  size_t out_channels = 0;  // T
  size_t in_channels = 0;   // S
  size_t kernel_h = 0;      // D2
  size_t kernel_w = 0;      // D1
  size_t rank = 0;          // r
  size_t delta_rank = 0;    // delta_r, 0 when not augmented

  Matrix<S> a;        // TS x r
  Matrix<S> b;        // r x D2D1
  Matrix<S> delta_a;  // TS x delta_r (empty iff delta_rank == 0)
  Matrix<S> delta_b;  // delta_r x D2D1
  std::vector<S> bias;

  bool base_frozen = false;
  ConvGeometry geom;

  size_t ts() const { return out_channels * in_channels; }
  size_t d2d1() const { return kernel_h * kernel_w; }
};

// Initialize factors from a dense kernel via truncated SVD: with
// M0 = flatten(K0) = U Sigma V^T, A = U_r Sigma_r^{1/2} and
// B = Sigma_r^{1/2} V_r^T. A*B is then the best rank-r approximation of M0
// and A has orthogonal columns, B orthogonal rows.
template <typename S>
FactorizedConvLayer<S> svd_initialize(const Tensor4<S>& k0, double alpha,
                                      const ConvGeometry& geom = {}) {
  if (!all_finite(k0.data)) throw numeric_error("svd_initialize: non-finite kernel");
  FactorizedConvLayer<S> layer;
  layer.out_channels = k0.dims[0];
  layer.in_channels = k0.dims[1];
  layer.kernel_h = k0.dims[2];
  layer.kernel_w = k0.dims[3];
  layer.geom = geom;
  layer.rank = rank_for_alpha(layer.out_channels, layer.in_channels, layer.kernel_h,
                              layer.kernel_w, alpha);
  layer.bias.assign(layer.out_channels, S(0));

  Matrix<S> m0 = flatten_from_kernel(k0);
  Matrix<double> m0d(m0.rows, m0.cols);
  for (size_t i = 0; i < m0.size(); ++i) m0d.data[i] = static_cast<double>(m0.data[i]);
  SvdResult dec = svd(m0d);

  const size_t r = layer.rank;
  layer.a = Matrix<S>(m0.rows, r);
  layer.b = Matrix<S>(r, m0.cols);
  for (size_t c = 0; c < r; ++c) {
    const double root = std::sqrt(dec.sigma[c]);
    for (size_t i = 0; i < m0.rows; ++i)
      layer.a.at(i, c) = static_cast<S>(dec.u.at(i, c) * root);
    for (size_t j = 0; j < m0.cols; ++j)
      layer.b.at(c, j) = static_cast<S>(root * dec.v.at(j, c));
  }
  return layer;
}

// (K, deltaK), both T x S x D2 x D1; deltaK is the zero tensor when the
// layer has no augmentation branch.
template <typename S>
std::pair<Tensor4<S>, Tensor4<S>> materialize(const FactorizedConvLayer<S>& layer) {
  Tensor4<S> k = reshape_to_kernel(compose_factors(layer.a, layer.b), layer.out_channels,
                                   layer.in_channels, layer.kernel_h, layer.kernel_w);
  Tensor4<S> dk(layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w);
  if (layer.delta_rank > 0)
    dk = reshape_to_kernel(compose_factors(layer.delta_a, layer.delta_b), layer.out_channels,
                           layer.in_channels, layer.kernel_h, layer.kernel_w);
  return {std::move(k), std::move(dk)};
}

template <typename S>
void add_bias_inplace(Tensor4<S>& y, const std::vector<S>& bias) {
  const size_t n = y.dims[0], t = y.dims[1], plane = y.dims[2] * y.dims[3];
  for (size_t in = 0; in < n; ++in)
    for (size_t it = 0; it < t; ++it) {
      S* row = &y.data[y.offset(in, it, 0, 0)];
      const S bv = bias[it];
      for (size_t i = 0; i < plane; ++i) row[i] += bv;
    }
}

// Y = conv(K, X) + conv(deltaK, X) + bias. The two-branch sum equals the
// single conv with K + deltaK up to rounding (conv is linear in the kernel).
template <typename S>
Tensor4<S> forward(const FactorizedConvLayer<S>& layer, const Tensor4<S>& x) {
  auto [k, dk] = materialize(layer);
  Tensor4<S> y = conv2d(k, x, layer.geom);
  if (layer.delta_rank > 0) {
    Tensor4<S> yd = conv2d(dk, x, layer.geom);
    for (size_t i = 0; i < y.size(); ++i) y.data[i] += yd.data[i];
  }
  add_bias_inplace(y, layer.bias);
  return y;
}

// Extend the factors by delta_r columns/rows. deltaB starts at zero so the
// layer computes exactly the same function at the moment of augmentation;
// deltaA gets small seeded uniform entries so the branch has a gradient
// direction to grow into. The base is frozen as part of augmentation.
template <typename S>
FactorizedConvLayer<S> augment_capacity(const FactorizedConvLayer<S>& layer, size_t delta_r,
                                        uint64_t init_seed) {
  if (layer.delta_rank != 0)
    throw state_error("augment_capacity: layer is already augmented");
  if (delta_r == 0) throw argument_error("augment_capacity: delta_r must be positive");
  FactorizedConvLayer<S> out = layer;
  out.delta_rank = delta_r;
  out.delta_a = Matrix<S>(layer.ts(), delta_r);
  out.delta_b = Matrix<S>(delta_r, layer.d2d1());
  Rng rng(init_seed);
  const double lim = 1.0 / std::sqrt(static_cast<double>(layer.ts()));
  for (auto& v : out.delta_a.data) v = static_cast<S>(rng.uniform(-lim, lim));
  out.base_frozen = true;
  return out;
}

template <typename S>
void freeze_base(FactorizedConvLayer<S>& layer) {
  layer.base_frozen = true;
}

template <typename S>
void unfreeze_base(FactorizedConvLayer<S>& layer) {
  layer.base_frozen = false;
}

template <typename S>
ParamCount param_counts(const FactorizedConvLayer<S>& layer) {
  ParamCount pc;
  pc.dense = layer.out_channels * layer.in_channels * layer.kernel_h * layer.kernel_w;
  pc.factored_base = layer.rank * (layer.ts() + layer.d2d1());
  pc.factored_delta = layer.delta_rank * (layer.ts() + layer.d2d1());
  pc.bias = layer.out_channels;
  return pc;
}

}  // namespace tensorfact
