#pragma once

// Independent reference computations for tests. Plain loops over
// std::vector storage; nothing here calls into Eigen decompositions or the
// library under test.

#include "headpursuit/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <stdexcept>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const headpursuit::Matrix& m) {
  Grid g(static_cast<std::size_t>(m.rows()), std::vector<double>(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) g[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = m(i, j);
  return g;
}

inline headpursuit::Matrix from_grid(const Grid& g) {
  headpursuit::Matrix m(static_cast<Eigen::Index>(g.size()), g.empty() ? 0 : static_cast<Eigen::Index>(g[0].size()));
  for (std::size_t i = 0; i < g.size(); ++i)
    for (std::size_t j = 0; j < g[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = g[i][j];
  return m;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double frobenius(const Grid& g) {
  double s = 0.0;
  for (const auto& row : g)
    for (double x : row) s += x * x;
  return std::sqrt(s);
}

inline headpursuit::Matrix gaussian(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> n(0.0, 1.0);
  headpursuit::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = n(rng);
  return m;
}

/// Rows orthonormalized by classical Gram-Schmidt, repeated twice. Requires rows <= cols.
inline headpursuit::Matrix orthonormal_rows(std::mt19937_64& rng, std::size_t rows, std::size_t cols) {
  if (rows > cols) throw std::invalid_argument("orthonormal_rows: rows > cols");
  Grid g = to_grid(gaussian(rng, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
  for (std::size_t i = 0; i < rows; ++i) {
    for (int pass = 0; pass < 2; ++pass) {
      for (std::size_t k = 0; k < i; ++k) {
        const double c = dot(g[i], g[k]);
        for (std::size_t j = 0; j < cols; ++j) g[i][j] -= c * g[k][j];
      }
    }
    const double n = std::sqrt(dot(g[i], g[i]));
    for (double& x : g[i]) x /= n;
  }
  return from_grid(g);
}

/// score[j] = sum_i |<atom_j, r_i>|, exhaustively.
inline std::vector<double> atom_scores(const headpursuit::Matrix& atoms, const headpursuit::Matrix& residual) {
  std::vector<double> out(static_cast<std::size_t>(atoms.rows()), 0.0);
  for (Eigen::Index j = 0; j < atoms.rows(); ++j) {
    for (Eigen::Index i = 0; i < residual.rows(); ++i) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < atoms.cols(); ++c) s += atoms(j, c) * residual(i, c);
      out[static_cast<std::size_t>(j)] += std::fabs(s);
    }
  }
  return out;
}

inline std::size_t argmax_excluding(const std::vector<double>& scores, const std::vector<std::size_t>& excluded) {
  std::size_t best = scores.size();
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (std::find(excluded.begin(), excluded.end(), j) != excluded.end()) continue;
    if (best == scores.size() || scores[j] > scores[best]) best = j;
  }
  return best;
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
inline Grid inverse(Grid a) {
  const std::size_t n = a.size();
  Grid inv(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) inv[i][i] = 1.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
    if (std::fabs(a[pivot][col]) < 1e-300) throw std::runtime_error("singular matrix");
    std::swap(a[pivot], a[col]);
    std::swap(inv[pivot], inv[col]);
    const double p = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= p;
      inv[col][j] /= p;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        inv[r][j] -= f * inv[col][j];
      }
    }
  }
  return inv;
}

/// W = H D_S^T (D_S D_S^T)^-1, with D_S the rows `support` of `atoms`.
inline headpursuit::Matrix normal_equations(const headpursuit::Matrix& signal, const headpursuit::Matrix& atoms,
                                            const std::vector<std::size_t>& support) {
  const Grid h = to_grid(signal);
  const Grid d = to_grid(atoms);
  const std::size_t k = support.size();
  Grid gram(k, std::vector<double>(k));
  for (std::size_t a = 0; a < k; ++a)
    for (std::size_t b = 0; b < k; ++b) gram[a][b] = dot(d[support[a]], d[support[b]]);
  const Grid gi = inverse(gram);
  Grid w(h.size(), std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < h.size(); ++i) {
    std::vector<double> proj(k);
    for (std::size_t a = 0; a < k; ++a) proj[a] = dot(h[i], d[support[a]]);
    for (std::size_t a = 0; a < k; ++a)
      for (std::size_t b = 0; b < k; ++b) w[i][a] += proj[b] * gi[b][a];
  }
  return from_grid(w);
}

inline headpursuit::Matrix reconstruct(const headpursuit::Matrix& w, const headpursuit::Matrix& atoms,
                                       const std::vector<std::size_t>& support) {
  headpursuit::Matrix r = headpursuit::Matrix::Zero(w.rows(), atoms.cols());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (std::size_t a = 0; a < support.size(); ++a)
      for (Eigen::Index c = 0; c < atoms.cols(); ++c)
        r(i, c) += w(i, static_cast<Eigen::Index>(a)) * atoms(static_cast<Eigen::Index>(support[a]), c);
  return r;
}

struct SompTrace {
  std::vector<std::size_t> support;
  std::vector<double> residual_norms;
};

/// Greedy loop: exhaustive selection, normal-equations refit.
inline SompTrace somp(const headpursuit::Matrix& signal, const headpursuit::Matrix& atoms, std::size_t n_iters) {
  SompTrace t;
  headpursuit::Matrix residual = signal;
  for (std::size_t it = 0; it < n_iters; ++it) {
    t.support.push_back(argmax_excluding(atom_scores(atoms, residual), t.support));
    const headpursuit::Matrix w = normal_equations(signal, atoms, t.support);
    residual = signal - reconstruct(w, atoms, t.support);
    t.residual_norms.push_back(frobenius(to_grid(residual)));
  }
  return t;
}

/// Linear-interpolation quantile by explicit sorting and index arithmetic.
inline double sorted_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace oracle
