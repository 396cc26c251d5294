// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "hinge/matrix.hpp"

namespace hinge {

/// Thin SVD: m = u * diag(singular_values) * vt, with k = min(rows, cols).
/// u is rows×k with orthonormal columns, vt is k×cols with orthonormal rows.
struct SvdResult {
  Matrix u;
  std::vector<double> singular_values;  // descending, non-negative
  Matrix vt;
  int sweeps = 0;
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;  // on |<g_i, g_j>| / (|g_i| |g_j|)
};

namespace detail {

// Extend the columns of q whose norm is zero to an orthonormal basis, using
// Gram-Schmidt against the canonical basis vectors.
inline void complete_orthonormal_columns(Matrix& q, const std::vector<bool>& filled) {
  // Unfilled columns are zero on entry, so projecting against them is a no-op.
  const std::size_t m = q.rows();
  std::size_t next_basis = 0;
  for (std::size_t j = 0; j < q.cols(); ++j) {
    if (filled[j]) continue;
    for (; next_basis < m; ++next_basis) {
      std::vector<double> v(m, 0.0);
      v[next_basis] = 1.0;
      // Two passes of classical Gram-Schmidt for stability.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t c = 0; c < q.cols(); ++c) {
          if (c == j) continue;
          double dot = 0.0;
          for (std::size_t r = 0; r < m; ++r) dot += q(r, c) * v[r];
          for (std::size_t r = 0; r < m; ++r) v[r] -= dot * q(r, c);
        }
      }
      double norm = 0.0;
      for (double x : v) norm += x * x;
      norm = std::sqrt(norm);
      if (norm > 1e-6) {
        for (std::size_t r = 0; r < m; ++r) q(r, j) = v[r] / norm;
        ++next_basis;
        break;
      }
    }
  }
}

// One-sided Jacobi on a tall-or-square matrix (rows >= cols).
inline SvdResult jacobi_svd_tall(const Matrix& m, const SvdOptions& opts) {
  const std::size_t rows = m.rows();
  const std::size_t n = m.cols();
  // Work column-major: g[j] is column j.
  std::vector<std::vector<double>> g(n, std::vector<double>(rows));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) g[c][r] = m(r, c);
  Matrix v = Matrix::identity(n);

  double scale = 0.0;
  for (double x : m.data()) scale = std::max(scale, std::abs(x));

  int sweep = 0;
  double off = 0.0;
  for (; sweep < opts.max_sweeps; ++sweep) {
    off = 0.0;
    for (std::size_t j = 1; j < n; ++j) {
      for (std::size_t i = 0; i < j; ++i) {
        double a = 0.0, b = 0.0, c = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
          a += g[i][r] * g[i][r];
          b += g[j][r] * g[j][r];
          c += g[i][r] * g[j][r];
        }
        // Columns that are numerically zero relative to the matrix have
        // nothing left to orthogonalize.
        const double floor = 1e-300 + (scale * scale) * 1e-300;
        if (a <= floor || b <= floor || c == 0.0) continue;
        const double rel = std::abs(c) / std::sqrt(a * b);
        off = std::max(off, rel);
        if (rel <= opts.tolerance) continue;
        const double zeta = (b - a) / (2.0 * c);
        const double t = (zeta >= 0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        for (std::size_t r = 0; r < rows; ++r) {
          const double gi = g[i][r], gj = g[j][r];
          g[i][r] = cs * gi - sn * gj;
          g[j][r] = sn * gi + cs * gj;
        }
        for (std::size_t r = 0; r < n; ++r) {
          const double vi = v(r, i), vj = v(r, j);
          v(r, i) = cs * vi - sn * vj;
          v(r, j) = sn * vi + cs * vj;
        }
      }
    }
    if (off <= opts.tolerance) break;
  }
  if (off > opts.tolerance)
    throw NumericError("svd: no convergence after " + std::to_string(opts.max_sweeps) +
                       " sweeps, residual off-diagonal " + std::to_string(off));

  std::vector<double> sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (double x : g[j]) s += x * x;
    sigma[j] = std::sqrt(s);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return sigma[x] > sigma[y]; });

  SvdResult out;
  out.sweeps = sweep + 1;
  out.u = Matrix(rows, n);
  out.vt = Matrix(n, n);
  out.singular_values.resize(n);
  const double zero_cut = (sigma.empty() ? 0.0 : sigma[order[0]]) * 1e-14;
  std::vector<bool> filled(n, false);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = order[k];
    out.singular_values[k] = sigma[j];
    for (std::size_t r = 0; r < n; ++r) out.vt(k, r) = v(r, j);
    if (sigma[j] > zero_cut && sigma[j] > 0.0) {
      for (std::size_t r = 0; r < rows; ++r) out.u(r, k) = g[j][r] / sigma[j];
      filled[k] = true;
    } else {
      out.singular_values[k] = 0.0;
    }
  }
  complete_orthonormal_columns(out.u, filled);
  return out;
}

}  // namespace detail

/// Singular value decomposition by one-sided Jacobi rotations.
///
/// Wide inputs are handled through the transpose. Zero singular values are
/// allowed; their left vectors are completed to an orthonormal set so that u
/// always has orthonormal columns.
inline SvdResult svd(const Matrix& m, const SvdOptions& opts = {}) {
  require_finite(m, "svd");
  if (m.rows() >= m.cols()) return detail::jacobi_svd_tall(m, opts);
  SvdResult t = detail::jacobi_svd_tall(transpose(m), opts);
  SvdResult out;
  out.sweeps = t.sweeps;
  out.singular_values = std::move(t.singular_values);
  out.u = transpose(t.vt);
  out.vt = transpose(t.u);
  return out;
}

inline Matrix reconstruct(const SvdResult& s) {
  Matrix us = s.u;
  for (std::size_t r = 0; r < us.rows(); ++r)
    for (std::size_t c = 0; c < us.cols(); ++c) us(r, c) *= s.singular_values[c];
  return matmul(us, s.vt);
}

}  // namespace hinge
