#include "headpursuit/matrix.hpp"

#include "headpursuit/error.hpp"

namespace headpursuit {

bool all_finite(const Matrix& m) noexcept { return m.allFinite(); }

SignalMatrix::SignalMatrix(Matrix data) : data_(std::move(data)) {
  if (data_.rows() < 1 || data_.cols() < 1) {
    throw Error(ErrorKind::InvalidArgument, "signal matrix must be at least 1x1");
  }
  if (!all_finite(data_)) throw Error(ErrorKind::InvalidArgument, "signal matrix has non-finite entries");
}

Dictionary::Dictionary(Matrix atoms, std::vector<std::string> labels)
    : atoms_(std::move(atoms)), labels_(std::move(labels)) {
  if (atoms_.rows() < 1 || atoms_.cols() < 1) {
    throw Error(ErrorKind::InvalidArgument, "dictionary must have at least one atom");
  }
  if (!labels_.empty() && labels_.size() != static_cast<std::size_t>(atoms_.rows())) {
    throw Error(ErrorKind::DimensionMismatch, "label count " + std::to_string(labels_.size()) +
                                                  " != atom count " + std::to_string(atoms_.rows()));
  }
  if (!all_finite(atoms_)) throw Error(ErrorKind::InvalidArgument, "dictionary has non-finite entries");
  for (Eigen::Index j = 0; j < atoms_.rows(); ++j) {
    if (atoms_.row(j).cwiseAbs().maxCoeff() == 0.0) {
      throw Error(ErrorKind::InvalidArgument, "dictionary atom " + std::to_string(j) + " is all-zero");
    }
  }
}

std::string Dictionary::label(std::size_t index) const {
  if (index < labels_.size()) return labels_[index];
  return "#" + std::to_string(index);
}

Dictionary Dictionary::subset(const std::vector<std::size_t>& indices) const {
  Matrix rows(static_cast<Eigen::Index>(indices.size()), atoms_.cols());
  std::vector<std::string> labels;
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= static_cast<std::size_t>(atoms_.rows())) {
      throw Error(ErrorKind::InvalidArgument, "atom index " + std::to_string(indices[r]) + " out of range");
    }
    rows.row(static_cast<Eigen::Index>(r)) = atoms_.row(static_cast<Eigen::Index>(indices[r]));
    if (!labels_.empty()) labels.push_back(labels_[indices[r]]);
  }
  return Dictionary(std::move(rows), std::move(labels));
}

}  // namespace headpursuit
