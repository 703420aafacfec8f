#pragma once

// Gaussian-Bernoulli mixture used as the class membership model: component
// densities, structured covariances, closed-form covariance updates,
// k-means++ seeding and the Bayes posterior over classes.

#include "lccm/linalg.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace lccm {

enum class CovarianceStructure { Full, Tied, Diagonal, Spherical };

std::string to_string(CovarianceStructure s);
CovarianceStructure parse_structure(std::string_view name);

inline constexpr double kVarianceRidge = 1e-6;
inline constexpr double kMaxRidge = 1e-2;
inline constexpr double kBernoulliClamp = 1e-6;
inline constexpr double kMixingFloor = 1e-10;

/// A class's responsibility mass fell below the empty-class threshold.
class EmptyClassError : public Error {
public:
  EmptyClassError(Index cls, double mass)
      : Error("latent class " + std::to_string(cls) + " is empty (mass " +
              std::to_string(mass) + ")"),
        cls_(cls) {}
  Index cls() const { return cls_; }

private:
  Index cls_;
};

/// Covariance storage in its structure's native shape:
///   Full      K blocks of D x D
///   Tied      1 block of D x D shared by every class
///   Diagonal  K blocks of D x 1 (variances)
///   Spherical K blocks of 1 x 1
class Covariances {
public:
  Covariances() = default;
  Covariances(CovarianceStructure structure, Index classes, Index dim, std::vector<Matrix> blocks);

  static Covariances identity(CovarianceStructure structure, Index classes, Index dim);

  CovarianceStructure structure() const { return structure_; }
  Index classes() const { return classes_; }
  Index dim() const { return dim_; }
  const std::vector<Matrix>& blocks() const { return blocks_; }

  /// The D x D covariance matrix of class k.
  Matrix realized(Index k) const;

  /// Free parameters of the structure (0 when dim == 0).
  Index parameter_count() const;

  /// Classes reordered so that new class i is old class perm[i].
  Covariances permuted(const std::vector<Index>& perm) const;
  /// Appends a copy of class `source` as a new last class.
  Covariances with_copied_class(Index source) const;

  bool operator==(const Covariances& o) const;

private:
  CovarianceStructure structure_ = CovarianceStructure::Full;
  Index classes_ = 0;
  Index dim_ = 0;
  std::vector<Matrix> blocks_;
};

/// Cholesky factor of a covariance with the ridge actually applied.
struct GaussianFactor {
  Matrix lower;
  double log_det = 0.0;
  double ridge = 0.0;
};

/// Factorizes sigma, adding kVarianceRidge * 10^i to the diagonal (up to
/// kMaxRidge) if it is not numerically positive definite.
GaussianFactor factorize_covariance(const Eigen::Ref<const Matrix>& sigma);

double gaussian_logpdf(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& mu,
                       const GaussianFactor& factor);
double gaussian_logpdf(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& mu,
                       const Eigen::Ref<const Matrix>& sigma);

/// sum_i s_i log mu_i + (1 - s_i) log(1 - mu_i); 0 for an empty vector.
double bernoulli_logpmf(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& mu);

struct GbmMembershipParams {
  Vector pi;            // K
  Matrix mu_c;          // K x D_c
  Covariances sigma_c;  // structure-tagged
  Matrix mu_d;          // K x D_d

  Index classes() const { return pi.size(); }
  Index cont_dim() const { return mu_c.cols(); }
  Index bin_dim() const { return mu_d.cols(); }

  /// Throws Error on a violated invariant.
  void validate() const;
  GbmMembershipParams permuted(const std::vector<Index>& perm) const;
  bool operator==(const GbmMembershipParams& o) const;
};

/// Per-class ln pi_k + Gaussian + Bernoulli terms. Absent blocks (D_c == 0 or
/// D_d == 0) contribute nothing.
Vector membership_log_joint(const Eigen::Ref<const Vector>& s_c, const Eigen::Ref<const Vector>& s_d,
                            const GbmMembershipParams& params);

/// The same for every row of S_c (N x D_c) and S_d (N x D_d); N x K.
Matrix membership_log_joint_rows(const Matrix& S_c, const Matrix& S_d, const GbmMembershipParams& params);

/// P(class | characteristics): softmax of membership_log_joint.
Vector membership_posterior(const Eigen::Ref<const Vector>& s_c, const Eigen::Ref<const Vector>& s_d,
                            const GbmMembershipParams& params);

/// Class masses N_k = sum_n resp(n, k); throws EmptyClassError below `threshold`.
Vector class_masses(const Matrix& resp, double threshold);

/// Responsibility-weighted means, K x D.
Matrix weighted_means(const Matrix& S, const Matrix& resp);

/// Closed-form covariance update under the given structure, with
/// kVarianceRidge added to every variance.
Covariances covariance_mstep(const Matrix& S_c, const Matrix& resp, const Matrix& mu_c,
                             CovarianceStructure structure);

/// Clamps Bernoulli means into [kBernoulliClamp, 1 - kBernoulliClamp].
Matrix clamp_bernoulli_means(Matrix mu_d);
/// Floors mixing coefficients at kMixingFloor and renormalizes.
Vector floor_mixing(Vector pi);

/// k-means++ seeding followed by Lloyd iterations (at most 100); returns
/// one-hot N x K assignments.
Matrix kmeans_init(const Matrix& S, Index K, std::uint64_t seed);

}  // namespace lccm
