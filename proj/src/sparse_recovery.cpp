#include "headpursuit/sparse_recovery.hpp"

#include "headpursuit/error.hpp"
#include "headpursuit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace headpursuit {

namespace {

void check_columns(Eigen::Index signal_cols, const Dictionary& dict) {
  if (signal_cols != dict.dim()) {
    throw Error(ErrorKind::DimensionMismatch, "signal has " + std::to_string(signal_cols) +
                                                  " columns, dictionary atoms have " +
                                                  std::to_string(dict.dim()));
  }
}

Matrix gather_rows(const Matrix& atoms, const SupportSet& support) {
  Matrix out(static_cast<Eigen::Index>(support.size()), atoms.cols());
  for (std::size_t r = 0; r < support.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = atoms.row(static_cast<Eigen::Index>(support[r]));
  }
  return out;
}

}  // namespace

std::size_t select_atom(const Matrix& residual, const Dictionary& dict, const SupportSet& excluded,
                        const SompOptions& opts) {
  check_columns(residual.cols(), dict);
  const auto v = static_cast<std::size_t>(dict.size());

  std::vector<bool> skip(v, false);
  std::size_t n_skipped = 0;
  for (std::size_t j : excluded) {
    if (j < v && !skip[j]) {
      skip[j] = true;
      ++n_skipped;
    }
  }
  if (n_skipped == v) throw Error(ErrorKind::AllAtomsExcluded, "every atom is already selected");

  const std::vector<double> scores = kernels::atom_scores(dict.atoms(), residual, opts.normalize_atoms);

  std::size_t best = v;
  for (std::size_t j = 0; j < v; ++j) {
    if (skip[j]) continue;
    // strict '>' keeps the lowest index on ties
    if (best == v || scores[j] > scores[best]) best = j;
  }
  return best;
}

RefitResult refit(const SignalMatrix& signal, const Dictionary& dict, const SupportSet& support) {
  check_columns(signal.cols(), dict);
  if (support.empty()) throw Error(ErrorKind::InvalidArgument, "refit needs a non-empty support");
  for (std::size_t j : support) {
    if (j >= static_cast<std::size_t>(dict.size())) {
      throw Error(ErrorKind::InvalidArgument, "support index " + std::to_string(j) + " out of range");
    }
  }

  // H ~= W D_S  <=>  D_S^T W^T ~= H^T, a d x |S| least-squares system per sample.
  const Eigen::MatrixXd system = gather_rows(dict.atoms(), support).transpose();
  const Eigen::MatrixXd rhs = signal.data().transpose();

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(system, Eigen::ComputeThinU | Eigen::ComputeThinV);
  svd.setThreshold(kRankTolerance);

  RefitResult out;
  out.coefficients = svd.solve(rhs).transpose();
  out.rank = svd.rank();
  out.rank_deficient = out.rank < static_cast<Eigen::Index>(support.size());
  return out;
}

SompResult somp(const SignalMatrix& signal, const Dictionary& dict, std::size_t n_iters,
                const SompOptions& opts) {
  check_columns(signal.cols(), dict);
  if (n_iters == 0 || n_iters > static_cast<std::size_t>(dict.size())) {
    throw Error(ErrorKind::InvalidArgument, "n_iters must be in [1, " + std::to_string(dict.size()) +
                                                "], got " + std::to_string(n_iters));
  }

  const Matrix& h = signal.data();
  const bool scoreable = h.norm() > kZeroSignalNorm;

  SompResult out;
  out.coefficients = Matrix::Zero(h.rows(), 0);
  out.reconstruction = Matrix::Zero(h.rows(), h.cols());
  Matrix residual = h;

  for (std::size_t t = 0; t < n_iters; ++t) {
    if (residual.norm() < kEarlyStopResidual) {
      out.early_stopped = true;
      break;
    }
    out.support.push_back(select_atom(residual, dict, out.support, opts));

    RefitResult fit = refit(signal, dict, out.support);
    out.rank_deficient = out.rank_deficient || fit.rank_deficient;
    out.reconstruction = fit.coefficients * gather_rows(dict.atoms(), out.support);
    out.coefficients = std::move(fit.coefficients);
    residual = h - out.reconstruction;

    out.residual_norms.push_back(residual.norm());
    if (scoreable) out.explained_variance.push_back(explained_variance(h, out.reconstruction));
  }
  return out;
}

MpStep mp_step(const Vector& sample, const Dictionary& dict) {
  check_columns(sample.size(), dict);
  const auto d = static_cast<std::size_t>(dict.dim());
  MpStep best;
  double best_abs = -1.0;
  for (Eigen::Index j = 0; j < dict.size(); ++j) {
    const double c = kernels::dot(dict.atoms().row(j).data(), sample.data(), d);
    if (std::abs(c) > best_abs) {
      best_abs = std::abs(c);
      best = {static_cast<std::size_t>(j), c};
    }
  }
  return best;
}

double explained_variance(const Matrix& signal, const Matrix& reconstruction) {
  if (signal.rows() != reconstruction.rows() || signal.cols() != reconstruction.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "signal and reconstruction shapes differ");
  }
  const double energy = signal.squaredNorm();
  if (std::sqrt(energy) <= kZeroSignalNorm) {
    throw Error(ErrorKind::ZeroSignal, "signal Frobenius norm is below 1e-12");
  }
  const double ratio = 1.0 - (signal - reconstruction).squaredNorm() / energy;
  return std::clamp(ratio, 0.0, 1.0);
}

}  // namespace headpursuit
