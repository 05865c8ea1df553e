#pragma once

// Greedy sparse approximation over a fixed dictionary: single-sample Matching
// Pursuit, and Simultaneous Orthogonal Matching Pursuit (SOMP) with a
// least-squares refit of every selected atom at each iteration.
//
// Explained variance is the UNCENTERED energy ratio
//
//     1 - ||H - H_r||_F^2 / ||H||_F^2
//
// i.e. no per-column mean is removed before measuring energy. This is the
// quantity the refit minimizes, so it is non-decreasing over iterations.

#include "headpursuit/matrix.hpp"

#include <cstddef>
#include <vector>

namespace headpursuit {

/// Atom indices in selection order; no duplicates.
using SupportSet = std::vector<std::size_t>;

inline constexpr double kEarlyStopResidual = 1e-12;
inline constexpr double kRankTolerance = 1e-10;
inline constexpr double kZeroSignalNorm = 1e-12;

struct SompOptions {
  // Divide each atom's correlation score by the atom norm during selection.
  // Off by default: the raw unembedding rows are used as-is.
  bool normalize_atoms = false;
};

struct RefitResult {
  Matrix coefficients;  // n x |support|
  Eigen::Index rank = 0;
  bool rank_deficient = false;
};

struct SompResult {
  SupportSet support;
  Matrix coefficients;    // n x |support|, column t belongs to support[t]
  Matrix reconstruction;  // n x d
  std::vector<double> residual_norms;      // one entry per completed iteration
  std::vector<double> explained_variance;  // idem; empty when the signal is zero
  bool early_stopped = false;
  bool rank_deficient = false;  // some refit hit the singular-value cutoff
};

struct MpStep {
  std::size_t index = 0;
  double correlation = 0.0;  // signed <D[index], sample>
};

/// argmax over non-excluded atoms of sum_i |<D[j], R[i]>|; lowest index wins ties.
std::size_t select_atom(const Matrix& residual, const Dictionary& dict,
                        const SupportSet& excluded, const SompOptions& opts = {});

/// Least-squares W minimizing ||H - W D[support]||_F, via SVD of D[support]^T.
/// Singular values below kRankTolerance * s_max are dropped, which yields the
/// minimum-norm solution when the selected atoms are dependent.
RefitResult refit(const SignalMatrix& signal, const Dictionary& dict, const SupportSet& support);

SompResult somp(const SignalMatrix& signal, const Dictionary& dict, std::size_t n_iters,
                const SompOptions& opts = {});

/// One Matching Pursuit step on a single sample: the Logit Lens readout.
MpStep mp_step(const Vector& sample, const Dictionary& dict);

/// Uncentered explained-variance ratio clamped to [0, 1]. Throws ZeroSignal when
/// ||signal||_F <= kZeroSignalNorm.
double explained_variance(const Matrix& signal, const Matrix& reconstruction);

}  // namespace headpursuit
