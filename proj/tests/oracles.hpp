// Independent reference implementations used only to check the library.
// These deliberately follow the defining formulas with plain nested loops
// and share no code with the implementation paths they verify.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/tensor.hpp"

namespace oracle {

template <typename S>
tensorfact::Matrix<S> matmul(const tensorfact::Matrix<S>& a, const tensorfact::Matrix<S>& b) {
  tensorfact::Matrix<S> m(a.rows, b.cols);
  for (size_t i = 0; i < a.rows; ++i)
    for (size_t j = 0; j < b.cols; ++j) {
      S acc = S(0);
      for (size_t c = 0; c < a.cols; ++c) acc += a.at(i, c) * b.at(c, j);
      m.at(i, j) = acc;
    }
  return m;
}

// Direct six-nested-loop convolution straight from the definition.
template <typename S>
tensorfact::Tensor4<S> conv2d(const tensorfact::Tensor4<S>& k, const tensorfact::Tensor4<S>& x,
                              const tensorfact::ConvGeometry& g) {
  const long n = x.dims[0], s = x.dims[1], h = x.dims[2], w = x.dims[3];
  const long t = k.dims[0], d2 = k.dims[2], d1 = k.dims[3];
  const long ho = (h + 2 * (long)g.padding - d2) / (long)g.stride + 1;
  const long wo = (w + 2 * (long)g.padding - d1) / (long)g.stride + 1;
  tensorfact::Tensor4<S> y(n, t, ho, wo);
  for (long in = 0; in < n; ++in)
    for (long it = 0; it < t; ++it)
      for (long oy = 0; oy < ho; ++oy)
        for (long ox = 0; ox < wo; ++ox) {
          double acc = 0.0;
          for (long is = 0; is < s; ++is)
            for (long id2 = 0; id2 < d2; ++id2)
              for (long id1 = 0; id1 < d1; ++id1) {
                const long iy = oy * (long)g.stride + id2 - (long)g.padding;
                const long ix = ox * (long)g.stride + id1 - (long)g.padding;
                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                acc += (double)k.at(it, is, id2, id1) * (double)x.at(in, is, iy, ix);
              }
          y.at(in, it, oy, ox) = (S)acc;
        }
  return y;
}

// Singular values of M via eigendecomposition of M^T M (Eigen).
inline std::vector<double> singular_values(const tensorfact::Matrix<double>& m) {
  Eigen::MatrixXd em(m.rows, m.cols);
  for (size_t i = 0; i < m.rows; ++i)
    for (size_t j = 0; j < m.cols; ++j) em(i, j) = m.at(i, j);
  Eigen::MatrixXd gram = em.transpose() * em;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(gram);
  std::vector<double> sv;
  for (Eigen::Index i = 0; i < solver.eigenvalues().size(); ++i)
    sv.push_back(std::sqrt(std::max(0.0, solver.eigenvalues()[i])));
  std::sort(sv.begin(), sv.end(), std::greater<double>());
  return sv;
}

template <typename S>
tensorfact::Matrix<S> random_matrix(size_t r, size_t c, tensorfact::Rng& rng, double lo = -1.0,
                                    double hi = 1.0) {
  tensorfact::Matrix<S> m(r, c);
  for (auto& v : m.data) v = (S)rng.uniform(lo, hi);
  return m;
}

template <typename S>
tensorfact::Tensor4<S> random_tensor(size_t n0, size_t n1, size_t n2, size_t n3,
                                     tensorfact::Rng& rng, double lo = -1.0, double hi = 1.0) {
  tensorfact::Tensor4<S> t(n0, n1, n2, n3);
  for (auto& v : t.data) v = (S)rng.uniform(lo, hi);
  return t;
}

// max |a_i - b_i| relative to the overall magnitude of the data
template <typename S>
double max_rel_diff(const std::vector<S>& a, const std::vector<S>& b) {
  double scale = 1e-12, worst = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    scale = std::max({scale, std::abs((double)a[i]), std::abs((double)b[i])});
  for (size_t i = 0; i < a.size(); ++i)
    worst = std::max(worst, std::abs((double)a[i] - (double)b[i]));
  return worst / scale;
}

template <typename S>
double rel_norm_diff(const std::vector<S>& a, const std::vector<S>& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double d = (double)a[i] - (double)b[i];
    num += d * d;
    den += (double)b[i] * (double)b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-12);
}

}  // namespace oracle
