#pragma once

// Data-parallel inner loops. Every OpenMP kernel has a serial counterpart in
// `kernels::serial` that is kept as the reference for tests and benchmarks.
// Parallel kernels partition work over independent outputs only and share the
// same scalar reduction, so results are bit-identical for every thread count.

#include "headpursuit/matrix.hpp"

#include <cstddef>
#include <vector>

namespace headpursuit::kernels {

/// Fixed-order inner product; the summation order depends only on n.
double dot(const double* a, const double* b, std::size_t n) noexcept;

/// score[j] = sum_i |<atoms[j], residual[i]>|, divided by ||atoms[j]|| when normalize.
std::vector<double> atom_scores(const Matrix& atoms, const Matrix& residual, bool normalize);

int max_threads() noexcept;

namespace serial {

std::vector<double> atom_scores(const Matrix& atoms, const Matrix& residual, bool normalize);

}  // namespace serial

}  // namespace headpursuit::kernels
