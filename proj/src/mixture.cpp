#include "lccm/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace lccm {

std::string to_string(CovarianceStructure s) {
  switch (s) {
    case CovarianceStructure::Full: return "full";
    case CovarianceStructure::Tied: return "tied";
    case CovarianceStructure::Diagonal: return "diagonal";
    case CovarianceStructure::Spherical: return "spherical";
  }
  return "full";
}

CovarianceStructure parse_structure(std::string_view name) {
  if (name == "full") return CovarianceStructure::Full;
  if (name == "tied") return CovarianceStructure::Tied;
  if (name == "diagonal" || name == "diag") return CovarianceStructure::Diagonal;
  if (name == "spherical") return CovarianceStructure::Spherical;
  throw Error("unknown covariance structure '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// Covariances

namespace {

std::pair<Index, Index> block_shape(CovarianceStructure s, Index dim) {
  switch (s) {
    case CovarianceStructure::Full:
    case CovarianceStructure::Tied: return {dim, dim};
    case CovarianceStructure::Diagonal: return {dim, 1};
    case CovarianceStructure::Spherical: return {1, 1};
  }
  return {dim, dim};
}

}  // namespace

Covariances::Covariances(CovarianceStructure structure, Index classes, Index dim,
                         std::vector<Matrix> blocks)
    : structure_(structure), classes_(classes), dim_(dim), blocks_(std::move(blocks)) {
  const std::size_t expected =
      structure == CovarianceStructure::Tied ? 1u : static_cast<std::size_t>(classes);
  if (dim > 0 && blocks_.size() != expected)
    throw Error("covariance block count does not match structure");
  if (dim == 0) blocks_.clear();
  const auto [r, c] = block_shape(structure, dim);
  for (const auto& b : blocks_)
    if (b.rows() != r || b.cols() != c) throw Error("covariance block has the wrong shape");
}

Covariances Covariances::identity(CovarianceStructure structure, Index classes, Index dim) {
  std::vector<Matrix> blocks;
  if (dim > 0) {
    const auto [r, c] = block_shape(structure, dim);
    const std::size_t count =
        structure == CovarianceStructure::Tied ? 1u : static_cast<std::size_t>(classes);
    Matrix b = c == r ? Matrix(Matrix::Identity(r, c)) : Matrix(Matrix::Ones(r, c));
    blocks.assign(count, b);
  }
  return Covariances(structure, classes, dim, std::move(blocks));
}

Matrix Covariances::realized(Index k) const {
  if (k < 0 || k >= classes_) throw Error("class index out of range");
  if (dim_ == 0) return Matrix(0, 0);
  switch (structure_) {
    case CovarianceStructure::Full: return blocks_[static_cast<std::size_t>(k)];
    case CovarianceStructure::Tied: return blocks_.front();
    case CovarianceStructure::Diagonal:
      return blocks_[static_cast<std::size_t>(k)].col(0).asDiagonal();
    case CovarianceStructure::Spherical:
      return blocks_[static_cast<std::size_t>(k)](0, 0) * Matrix::Identity(dim_, dim_);
  }
  return {};
}

Index Covariances::parameter_count() const {
  if (dim_ == 0) return 0;
  switch (structure_) {
    case CovarianceStructure::Full: return classes_ * dim_ * (dim_ + 1) / 2;
    case CovarianceStructure::Tied: return dim_ * (dim_ + 1) / 2;
    case CovarianceStructure::Diagonal: return classes_ * dim_;
    case CovarianceStructure::Spherical: return classes_;
  }
  return 0;
}

Covariances Covariances::permuted(const std::vector<Index>& perm) const {
  if (structure_ == CovarianceStructure::Tied || dim_ == 0) return *this;
  std::vector<Matrix> out;
  for (Index k : perm) out.push_back(blocks_.at(static_cast<std::size_t>(k)));
  return Covariances(structure_, classes_, dim_, std::move(out));
}

Covariances Covariances::with_copied_class(Index source) const {
  std::vector<Matrix> out = blocks_;
  if (structure_ != CovarianceStructure::Tied && dim_ > 0)
    out.push_back(blocks_.at(static_cast<std::size_t>(source)));
  return Covariances(structure_, classes_ + 1, dim_, std::move(out));
}

bool Covariances::operator==(const Covariances& o) const {
  if (structure_ != o.structure_ || classes_ != o.classes_ || dim_ != o.dim_ ||
      blocks_.size() != o.blocks_.size())
    return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i] != o.blocks_[i]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Densities

GaussianFactor factorize_covariance(const Eigen::Ref<const Matrix>& sigma) {
  const Index d = sigma.rows();
  GaussianFactor f;
  if (d == 0) return f;
  if (!sigma.allFinite()) throw Error("non-finite covariance matrix");
  double ridge = 0.0;
  while (true) {
    Matrix a = sigma;
    a.diagonal().array() += ridge;
    Eigen::LLT<Matrix> llt(a);
    if (llt.info() == Eigen::Success) {
      const Vector diag = llt.matrixLLT().diagonal();
      if ((diag.array() > 0.0).all() && diag.allFinite()) {
        f.lower = llt.matrixL();
        f.log_det = 2.0 * diag.array().log().sum();
        f.ridge = ridge;
        return f;
      }
    }
    ridge = ridge == 0.0 ? kVarianceRidge : ridge * 10.0;
    if (ridge > kMaxRidge * (1.0 + 1e-9))
      throw Error("covariance factorization failed after ridge escalation");
  }
}

double gaussian_logpdf(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& mu,
                       const GaussianFactor& factor) {
  const Index d = s.size();
  if (d == 0) return 0.0;
  const Vector z = factor.lower.triangularView<Eigen::Lower>().solve(s - mu);
  return -0.5 * (static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + factor.log_det +
                 z.squaredNorm());
}

double gaussian_logpdf(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& mu,
                       const Eigen::Ref<const Matrix>& sigma) {
  return gaussian_logpdf(s, mu, factorize_covariance(sigma));
}

double bernoulli_logpmf(const Eigen::Ref<const Vector>& s, const Eigen::Ref<const Vector>& mu) {
  double acc = 0.0;
  for (Index i = 0; i < s.size(); ++i)
    acc += s[i] != 0.0 ? std::log(mu[i]) : std::log1p(-mu[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Membership parameters

void GbmMembershipParams::validate() const {
  const Index K = classes();
  if (K < 1) throw Error("membership model needs at least one class");
  if (mu_c.rows() != K || mu_d.rows() != K) throw Error("membership parameter shapes disagree");
  if (sigma_c.classes() != K || sigma_c.dim() != mu_c.cols())
    throw Error("covariance shape disagrees with the Gaussian means");
  if (std::abs(pi.sum() - 1.0) > 1e-12) throw Error("mixing coefficients must sum to 1");
  if ((pi.array() < kMixingFloor * (1.0 - 1e-9)).any())
    throw Error("mixing coefficient below floor");
  if (!mu_c.allFinite()) throw Error("non-finite Gaussian mean");
  if ((mu_d.array() < kBernoulliClamp * (1.0 - 1e-9)).any() ||
      (mu_d.array() > 1.0 - kBernoulliClamp * (1.0 - 1e-9)).any())
    throw Error("Bernoulli mean outside [1e-6, 1 - 1e-6]");
  for (Index k = 0; k < K; ++k) {
    const Matrix s = sigma_c.realized(k);
    if (s.size() == 0) continue;
    if (!s.allFinite() || (s - s.transpose()).cwiseAbs().maxCoeff() > 1e-12 * (1.0 + s.cwiseAbs().maxCoeff()))
      throw Error("covariance of class " + std::to_string(k) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> eig(s, Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10)
      throw Error("covariance of class " + std::to_string(k) + " is not positive semidefinite");
  }
}

GbmMembershipParams GbmMembershipParams::permuted(const std::vector<Index>& perm) const {
  GbmMembershipParams out;
  const Index K = static_cast<Index>(perm.size());
  out.pi.resize(K);
  out.mu_c.resize(K, mu_c.cols());
  out.mu_d.resize(K, mu_d.cols());
  for (Index i = 0; i < K; ++i) {
    out.pi[i] = pi[perm[static_cast<std::size_t>(i)]];
    out.mu_c.row(i) = mu_c.row(perm[static_cast<std::size_t>(i)]);
    out.mu_d.row(i) = mu_d.row(perm[static_cast<std::size_t>(i)]);
  }
  out.sigma_c = sigma_c.permuted(perm);
  return out;
}

bool GbmMembershipParams::operator==(const GbmMembershipParams& o) const {
  return pi.size() == o.pi.size() && pi == o.pi && mu_c.rows() == o.mu_c.rows() &&
         mu_c.cols() == o.mu_c.cols() && mu_c == o.mu_c && mu_d.rows() == o.mu_d.rows() &&
         mu_d.cols() == o.mu_d.cols() && mu_d == o.mu_d && sigma_c == o.sigma_c;
}

namespace {

std::vector<GaussianFactor> factorize_all(const GbmMembershipParams& params) {
  std::vector<GaussianFactor> out;
  if (params.cont_dim() == 0) return out;
  for (Index k = 0; k < params.classes(); ++k)
    out.push_back(factorize_covariance(params.sigma_c.realized(k)));
  return out;
}

Vector log_joint_row(const Eigen::Ref<const Vector>& s_c, const Eigen::Ref<const Vector>& s_d,
                     const GbmMembershipParams& params, const std::vector<GaussianFactor>& factors) {
  const Index K = params.classes();
  Vector out(K);
  for (Index k = 0; k < K; ++k) {
    double v = std::log(params.pi[k]);
    if (params.cont_dim() > 0)
      v += gaussian_logpdf(s_c, params.mu_c.row(k).transpose(), factors[static_cast<std::size_t>(k)]);
    if (params.bin_dim() > 0) v += bernoulli_logpmf(s_d, params.mu_d.row(k).transpose());
    out[k] = v;
  }
  return out;
}

}  // namespace

Vector membership_log_joint(const Eigen::Ref<const Vector>& s_c, const Eigen::Ref<const Vector>& s_d,
                            const GbmMembershipParams& params) {
  if (s_c.size() != params.cont_dim() || s_d.size() != params.bin_dim())
    throw Error("characteristic dimensions disagree with the membership model");
  return log_joint_row(s_c, s_d, params, factorize_all(params));
}

Matrix membership_log_joint_rows(const Matrix& S_c, const Matrix& S_d, const GbmMembershipParams& params) {
  if (S_c.cols() != params.cont_dim() || S_d.cols() != params.bin_dim() || S_c.rows() != S_d.rows())
    throw Error("characteristic dimensions disagree with the membership model");
  const auto factors = factorize_all(params);
  const Index N = S_c.rows();
  const Index K = params.classes();
  Matrix out(N, K);
  // Column-wise evaluation keeps one factor hot per pass.
  for (Index k = 0; k < K; ++k) {
    const double log_pi = std::log(params.pi[k]);
    out.col(k).setConstant(log_pi);
    if (params.cont_dim() > 0) {
      const auto& f = factors[static_cast<std::size_t>(k)];
      const Matrix centered = (S_c.rowwise() - params.mu_c.row(k)).transpose();  // D x N
      const Matrix z = f.lower.triangularView<Eigen::Lower>().solve(centered);
      const double c = static_cast<double>(params.cont_dim()) * std::log(2.0 * std::numbers::pi) + f.log_det;
      out.col(k).array() += -0.5 * (c + z.colwise().squaredNorm().transpose().array());
    }
    if (params.bin_dim() > 0) {
      const Vector lmu = params.mu_d.row(k).transpose().array().log();
      const Vector l1mu = (-params.mu_d.row(k).transpose().array()).log1p();
      for (Index n = 0; n < N; ++n) {
        double acc = 0.0;
        for (Index i = 0; i < params.bin_dim(); ++i) acc += S_d(n, i) != 0.0 ? lmu[i] : l1mu[i];
        out(n, k) += acc;
      }
    }
  }
  return out;
}

Vector membership_posterior(const Eigen::Ref<const Vector>& s_c, const Eigen::Ref<const Vector>& s_d,
                            const GbmMembershipParams& params) {
  return softmax(membership_log_joint(s_c, s_d, params));
}

// ---------------------------------------------------------------------------
// M-step pieces

Vector class_masses(const Matrix& resp, double threshold) {
  Vector nk = resp.colwise().sum().transpose();
  for (Index k = 0; k < nk.size(); ++k)
    if (!(nk[k] > threshold)) throw EmptyClassError(k, nk[k]);
  return nk;
}

Matrix weighted_means(const Matrix& S, const Matrix& resp) {
  const Vector nk = resp.colwise().sum().transpose();
  Matrix mu = resp.transpose() * S;  // K x D
  for (Index k = 0; k < mu.rows(); ++k) mu.row(k) /= nk[k];
  return mu;
}

Covariances covariance_mstep(const Matrix& S_c, const Matrix& resp, const Matrix& mu_c,
                             CovarianceStructure structure) {
  const Index K = resp.cols();
  const Index D = S_c.cols();
  if (resp.rows() != S_c.rows() || mu_c.rows() != K || mu_c.cols() != D)
    throw Error("covariance_mstep: shape mismatch");
  const Vector nk = class_masses(resp, 1e-8);
  if (D == 0) return Covariances(structure, K, 0, {});

  std::vector<Matrix> full(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k) {
    const Matrix centered = S_c.rowwise() - mu_c.row(k);
    Matrix weighted = centered;
    weighted.array().colwise() *= resp.col(k).array();
    Matrix sk = centered.transpose() * weighted / nk[k];
    sk = (0.5 * (sk + sk.transpose())).eval();
    full[static_cast<std::size_t>(k)] = std::move(sk);
  }

  std::vector<Matrix> blocks;
  switch (structure) {
    case CovarianceStructure::Full:
      for (auto& m : full) {
        m.diagonal().array() += kVarianceRidge;
        blocks.push_back(std::move(m));
      }
      break;
    case CovarianceStructure::Tied: {
      Matrix pooled = Matrix::Zero(D, D);
      for (Index k = 0; k < K; ++k) pooled += nk[k] * full[static_cast<std::size_t>(k)];
      pooled /= nk.sum();
      pooled = (0.5 * (pooled + pooled.transpose())).eval();
      pooled.diagonal().array() += kVarianceRidge;
      blocks.push_back(std::move(pooled));
      break;
    }
    case CovarianceStructure::Diagonal:
      for (const auto& m : full) blocks.push_back((m.diagonal().array() + kVarianceRidge).matrix());
      break;
    case CovarianceStructure::Spherical:
      for (const auto& m : full) blocks.push_back(Matrix::Constant(1, 1, m.diagonal().mean() + kVarianceRidge));
      break;
  }
  return Covariances(structure, K, D, std::move(blocks));
}

Matrix clamp_bernoulli_means(Matrix mu_d) {
  return mu_d.cwiseMax(kBernoulliClamp).cwiseMin(1.0 - kBernoulliClamp);
}

Vector floor_mixing(Vector pi) {
  for (int pass = 0; pass < 3; ++pass) {
    pi = pi.cwiseMax(kMixingFloor);
    pi /= pi.sum();
  }
  return pi;
}

// ---------------------------------------------------------------------------
// k-means

Matrix kmeans_init(const Matrix& S, Index K, std::uint64_t seed) {
  const Index N = S.rows();
  if (K < 1 || K > N)
    throw Error("k-means needs 1 <= K <= N (K = " + std::to_string(K) + ", N = " +
                std::to_string(N) + ")");
  std::mt19937_64 rng(seed);
  const auto uniform01 = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };

  std::vector<Index> centers;
  std::vector<char> taken(static_cast<std::size_t>(N), 0);
  centers.push_back(static_cast<Index>(rng() % static_cast<std::uint64_t>(N)));
  taken[static_cast<std::size_t>(centers.back())] = 1;
  Vector d2 = (S.rowwise() - S.row(centers.back())).rowwise().squaredNorm();
  while (static_cast<Index>(centers.size()) < K) {
    const double total = d2.sum();
    Index pick = -1;
    if (total > 0.0) {
      const double u = uniform01() * total;
      double acc = 0.0;
      for (Index n = 0; n < N; ++n) {
        acc += d2[n];
        if (d2[n] > 0.0 && acc > u) {
          pick = n;
          break;
        }
      }
      if (pick < 0)
        for (Index n = N - 1; n >= 0; --n)
          if (d2[n] > 0.0) {
            pick = n;
            break;
          }
    }
    if (pick < 0)  // all remaining points coincide with a center
      for (Index n = 0; n < N; ++n)
        if (!taken[static_cast<std::size_t>(n)]) {
          pick = n;
          break;
        }
    centers.push_back(pick);
    taken[static_cast<std::size_t>(pick)] = 1;
    d2 = d2.cwiseMin((S.rowwise() - S.row(pick)).rowwise().squaredNorm());
  }

  Matrix C(K, S.cols());
  for (Index k = 0; k < K; ++k) C.row(k) = S.row(centers[static_cast<std::size_t>(k)]);
  // Seeds start in their own cluster so K == N saturates even with duplicates.
  std::vector<Index> assign(static_cast<std::size_t>(N), -1);
  for (Index k = 0; k < K; ++k) assign[static_cast<std::size_t>(centers[static_cast<std::size_t>(k)])] = k;

  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (Index n = 0; n < N; ++n) {
      Index best = assign[static_cast<std::size_t>(n)];
      double best_d = best >= 0 ? (S.row(n) - C.row(best)).squaredNorm()
                                : std::numeric_limits<double>::infinity();
      for (Index k = 0; k < K; ++k) {
        const double d = (S.row(n) - C.row(k)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = k;
        }
      }
      if (best != assign[static_cast<std::size_t>(n)]) {
        assign[static_cast<std::size_t>(n)] = best;
        changed = true;
      }
    }
    if (!changed && iter > 0) break;
    Matrix sums = Matrix::Zero(K, S.cols());
    Vector counts = Vector::Zero(K);
    for (Index n = 0; n < N; ++n) {
      sums.row(assign[static_cast<std::size_t>(n)]) += S.row(n);
      counts[assign[static_cast<std::size_t>(n)]] += 1.0;
    }
    for (Index k = 0; k < K; ++k)
      if (counts[k] > 0.0) C.row(k) = sums.row(k) / counts[k];
  }

  Matrix onehot = Matrix::Zero(N, K);
  for (Index n = 0; n < N; ++n) onehot(n, assign[static_cast<std::size_t>(n)]) = 1.0;
  return onehot;
}

}  // namespace lccm
