#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

namespace headpursuit {

// Row-major so that one row is one sample (or one atom) in contiguous memory.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

bool all_finite(const Matrix& m) noexcept;

/// n samples x d model dimensions. Every entry finite, n >= 1, d >= 1.
class SignalMatrix {
 public:
  explicit SignalMatrix(Matrix data);

  const Matrix& data() const noexcept { return data_; }
  Eigen::Index rows() const noexcept { return data_.rows(); }
  Eigen::Index cols() const noexcept { return data_.cols(); }

 private:
  Matrix data_;
};

/// v atoms x d dimensions, optionally labelled with the token each atom decodes to.
/// Construction rejects all-zero atoms.
class Dictionary {
 public:
  explicit Dictionary(Matrix atoms, std::vector<std::string> labels = {});

  const Matrix& atoms() const noexcept { return atoms_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }
  Eigen::Index size() const noexcept { return atoms_.rows(); }
  Eigen::Index dim() const noexcept { return atoms_.cols(); }

  // "#<index>" when unlabelled.
  std::string label(std::size_t index) const;

  // Rows `indices` (in the given order) with their labels.
  Dictionary subset(const std::vector<std::size_t>& indices) const;

 private:
  Matrix atoms_;
  std::vector<std::string> labels_;
};

}  // namespace headpursuit
