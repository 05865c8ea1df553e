#include "headpursuit/kernels.hpp"

#include <cmath>

#include <omp.h>

namespace headpursuit::kernels {

double dot(const double* a, const double* b, std::size_t n) noexcept {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    s0 += a[k] * b[k];
    s1 += a[k + 1] * b[k + 1];
    s2 += a[k + 2] * b[k + 2];
    s3 += a[k + 3] * b[k + 3];
  }
  for (; k < n; ++k) s0 += a[k] * b[k];
  return (s0 + s1) + (s2 + s3);
}

namespace {

double score_one(const Matrix& atoms, const Matrix& residual, Eigen::Index j, bool normalize) {
  const auto d = static_cast<std::size_t>(atoms.cols());
  const double* atom = atoms.row(j).data();
  double s = 0.0;
  for (Eigen::Index i = 0; i < residual.rows(); ++i) {
    s += std::abs(dot(atom, residual.row(i).data(), d));
  }
  if (normalize) s /= std::sqrt(dot(atom, atom, d));
  return s;
}

}  // namespace

std::vector<double> atom_scores(const Matrix& atoms, const Matrix& residual, bool normalize) {
  const Eigen::Index v = atoms.rows();
  std::vector<double> scores(static_cast<std::size_t>(v));
#pragma omp parallel for schedule(static)
  for (Eigen::Index j = 0; j < v; ++j) {
    scores[static_cast<std::size_t>(j)] = score_one(atoms, residual, j, normalize);
  }
  return scores;
}

int max_threads() noexcept { return omp_get_max_threads(); }

namespace serial {

std::vector<double> atom_scores(const Matrix& atoms, const Matrix& residual, bool normalize) {
  std::vector<double> scores(static_cast<std::size_t>(atoms.rows()));
  for (Eigen::Index j = 0; j < atoms.rows(); ++j) {
    scores[static_cast<std::size_t>(j)] = score_one(atoms, residual, j, normalize);
  }
  return scores;
}

}  // namespace serial

}  // namespace headpursuit::kernels
