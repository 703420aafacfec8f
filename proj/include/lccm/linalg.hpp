#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace lccm {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data.
class DataError : public Error {
public:
  using Error::Error;
};

/// A file could not be opened or written.
class IoError : public Error {
public:
  using Error::Error;
};

/// log(sum(exp(x))) with max-subtraction. Entries equal to -inf are ignored;
/// an all -inf (or empty) input yields -inf.
template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar m = x.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((x.derived().array() - m).exp().sum());
}

/// Normalized log-probabilities: x - log_sum_exp(x).
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
log_softmax(const Eigen::DenseBase<Derived>& x) {
  const auto lse = log_sum_exp(x);
  return (x.derived().array() - lse).matrix();
}

template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, 1>
softmax(const Eigen::DenseBase<Derived>& x) {
  return log_softmax(x).array().exp().matrix();
}

/// Row-wise softmax of a matrix of log-weights.
template <typename Derived>
Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic>
softmax_rows(const Eigen::MatrixBase<Derived>& logits) {
  Eigen::Matrix<typename Derived::Scalar, Eigen::Dynamic, Eigen::Dynamic> out(
      logits.rows(), logits.cols());
  for (Index r = 0; r < logits.rows(); ++r)
    out.row(r) = softmax(logits.row(r).transpose()).transpose();
  return out;
}

}  // namespace lccm
