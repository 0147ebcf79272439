#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "tensorfact/common.hpp"
#include "tensorfact/tensor.hpp"

namespace tensorfact {

// Thin SVD of an m x n matrix: M = U * diag(sigma) * V^T with U m x k,
// V n x k, k = min(m, n), singular values sorted non-increasing.
struct SvdResult {
  Matrix<double> u;
  std::vector<double> sigma;
  Matrix<double> v;
};

namespace detail {

// One-sided Jacobi on W (m x n, m >= n): rotate column pairs until all are
// mutually orthogonal, accumulating the rotations into V.
inline void jacobi_orthogonalize(Matrix<double>& w, Matrix<double>& v) {
  const size_t m = w.rows, n = w.cols;
  const double tol = 1e-15;
  const int max_sweeps = 60;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (size_t p = 0; p + 1 < n; ++p) {
      for (size_t q = p + 1; q < n; ++q) {
        double app = 0, aqq = 0, apq = 0;
        for (size_t i = 0; i < m; ++i) {
          const double wp = w.at(i, p), wq = w.at(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq) || apq == 0.0) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (size_t i = 0; i < m; ++i) {
          const double wp = w.at(i, p), wq = w.at(i, q);
          w.at(i, p) = cs * wp - sn * wq;
          w.at(i, q) = sn * wp + cs * wq;
        }
        for (size_t i = 0; i < n; ++i) {
          const double vp = v.at(i, p), vq = v.at(i, q);
          v.at(i, p) = cs * vp - sn * vq;
          v.at(i, q) = sn * vp + cs * vq;
        }
      }
    }
    if (!rotated) return;
  }
  throw numeric_error("svd: Jacobi sweep limit reached without convergence");
}

inline SvdResult svd_tall(const Matrix<double>& mat) {
  const size_t m = mat.rows, n = mat.cols;
  Matrix<double> w = mat;
  Matrix<double> v(n, n);
  for (size_t i = 0; i < n; ++i) v.at(i, i) = 1.0;
  jacobi_orthogonalize(w, v);

  std::vector<double> sigma(n, 0.0);
  for (size_t j = 0; j < n; ++j) {
    double s = 0;
    for (size_t i = 0; i < m; ++i) s += w.at(i, j) * w.at(i, j);
    sigma[j] = std::sqrt(s);
  }
  // sort non-increasing; ties keep original column order
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return sigma[a] > sigma[b]; });

  SvdResult out;
  out.u = Matrix<double>(m, n);
  out.v = Matrix<double>(n, n);
  out.sigma.resize(n);
  for (size_t jj = 0; jj < n; ++jj) {
    const size_t j = order[jj];
    out.sigma[jj] = sigma[j];
    const double inv = sigma[j] > 0 ? 1.0 / sigma[j] : 0.0;
    for (size_t i = 0; i < m; ++i) out.u.at(i, jj) = w.at(i, j) * inv;
    for (size_t i = 0; i < n; ++i) out.v.at(i, jj) = v.at(i, j);
  }
  return out;
}

}  // namespace detail

inline SvdResult svd(const Matrix<double>& mat) {
  if (mat.rows == 0 || mat.cols == 0) throw shape_error("svd: empty matrix");
  if (!all_finite(mat.data)) throw numeric_error("svd: non-finite input");
  if (mat.rows >= mat.cols) return detail::svd_tall(mat);
  // wide: decompose the transpose and swap the singular vector roles
  Matrix<double> t(mat.cols, mat.rows);
  for (size_t i = 0; i < mat.rows; ++i)
    for (size_t j = 0; j < mat.cols; ++j) t.at(j, i) = mat.at(i, j);
  SvdResult r = detail::svd_tall(t);
  std::swap(r.u, r.v);
  return r;
}

}  // namespace tensorfact
