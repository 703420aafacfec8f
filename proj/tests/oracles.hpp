#pragma once

// Brute-force reference computations for the test suites. These work in the
// probability domain with explicit products, inverses and determinants and
// share no numerical code with the library; only the data types are common.

#include "lccm/em.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace oracle {

using lccm::ChoiceDataset;
using lccm::ChoiceSituation;
using lccm::CovarianceStructure;
using lccm::GbmLccmParams;
using lccm::Index;
using lccm::LccmParams;
using lccm::Matrix;
using lccm::PersonRecord;
using lccm::Vector;

constexpr double kPi = 3.14159265358979323846;

// -- densities and probabilities -----------------------------------------------

inline double gaussian_density(const Vector& s, const Vector& mu, const Matrix& sigma) {
  const Index d = s.size();
  if (d == 0) return 1.0;
  const Matrix inv = sigma.inverse();
  const Vector r = s - mu;
  const double q = r.dot(inv * r);
  return std::exp(-0.5 * q) / std::sqrt(std::pow(2.0 * kPi, static_cast<double>(d)) * sigma.determinant());
}

inline double gaussian_logpdf(const Vector& s, const Vector& mu, const Matrix& sigma) {
  const Matrix inv = sigma.inverse();
  const Vector r = s - mu;
  return -0.5 * (static_cast<double>(s.size()) * std::log(2.0 * kPi) + std::log(sigma.determinant()) +
                 r.dot(inv * r));
}

inline double bernoulli_mass(const Vector& s, const Vector& mu) {
  double p = 1.0;
  for (Index i = 0; i < s.size(); ++i) p *= s[i] == 1.0 ? mu[i] : 1.0 - mu[i];
  return p;
}

/// Covariance of class k rebuilt from the raw storage blocks.
inline Matrix covariance(const lccm::Covariances& c, Index k) {
  const Index d = c.dim();
  switch (c.structure()) {
    case CovarianceStructure::Full: return c.blocks()[k];
    case CovarianceStructure::Tied: return c.blocks()[0];
    case CovarianceStructure::Diagonal: {
      Matrix m = Matrix::Zero(d, d);
      for (Index i = 0; i < d; ++i) m(i, i) = c.blocks()[k](i, 0);
      return m;
    }
    case CovarianceStructure::Spherical: return c.blocks()[k](0, 0) * Matrix::Identity(d, d);
  }
  return {};
}

inline double choice_prob(const ChoiceSituation& s, const Vector& beta) {
  double num = 0.0, den = 0.0;
  for (Index j = 0; j < s.attrs.rows(); ++j) {
    if (!s.available[j]) continue;
    const double e = std::exp(s.attrs.row(j).dot(beta));
    den += e;
    if (j == s.chosen) num = e;
  }
  return num / den;
}

inline double panel_prob(const PersonRecord& p, const Vector& beta) {
  double prod = 1.0;
  for (const auto& s : p.situations) prod *= choice_prob(s, beta);
  return prod;
}

/// pi_k N(S_c) B(S_d) for one person.
inline double membership_density(const PersonRecord& p, const GbmLccmParams& params, Index k) {
  const auto& m = params.membership;
  double v = m.pi[k];
  if (m.cont_dim() > 0)
    v *= gaussian_density(p.s_cont, m.mu_c.row(k).transpose(), covariance(m.sigma_c, k));
  if (m.bin_dim() > 0) v *= bernoulli_mass(p.s_bin, m.mu_d.row(k).transpose());
  return v;
}

inline Vector membership_posterior(const PersonRecord& p, const GbmLccmParams& params) {
  const Index K = params.classes();
  Vector d(K);
  for (Index k = 0; k < K; ++k) d[k] = membership_density(p, params, k);
  return d / d.sum();
}

inline Matrix estep_gbm(const ChoiceDataset& ds, const GbmLccmParams& params) {
  const Index K = params.classes();
  Matrix r(ds.person_count(), K);
  for (Index n = 0; n < ds.person_count(); ++n) {
    const auto& p = ds.persons[n];
    for (Index k = 0; k < K; ++k)
      r(n, k) = membership_density(p, params, k) * panel_prob(p, params.betas[k].beta);
    r.row(n) /= r.row(n).sum();
  }
  return r;
}

inline double joint_loglik(const ChoiceDataset& ds, const GbmLccmParams& params) {
  double ll = 0.0;
  for (const auto& p : ds.persons) {
    double sum = 0.0;
    for (Index k = 0; k < params.classes(); ++k)
      sum += membership_density(p, params, k) * panel_prob(p, params.betas[k].beta);
    ll += std::log(sum);
  }
  return ll;
}

inline double marginal_loglik(const ChoiceDataset& ds, const GbmLccmParams& params) {
  double ll = 0.0;
  for (const auto& p : ds.persons) {
    const Vector post = membership_posterior(p, params);
    double sum = 0.0;
    for (Index k = 0; k < params.classes(); ++k) sum += post[k] * panel_prob(p, params.betas[k].beta);
    ll += std::log(sum);
  }
  return ll;
}

inline Vector lccm_class_probs(const PersonRecord& p, const LccmParams& params) {
  const Index K = params.classes();
  Vector z(1 + p.s_cont.size() + p.s_bin.size());
  z << 1.0, p.s_cont, p.s_bin;
  Vector e(K);
  for (Index k = 0; k < K; ++k) e[k] = k + 1 < K ? std::exp(params.gamma.row(k).dot(z)) : 1.0;
  return e / e.sum();
}

inline double lccm_loglik(const ChoiceDataset& ds, const LccmParams& params) {
  double ll = 0.0;
  for (const auto& p : ds.persons) {
    const Vector w = lccm_class_probs(p, params);
    double sum = 0.0;
    for (Index k = 0; k < params.classes(); ++k) sum += w[k] * panel_prob(p, params.betas[k].beta);
    ll += std::log(sum);
  }
  return ll;
}

inline double mnl_loglik(const ChoiceDataset& ds, const Vector& beta) {
  double ll = 0.0;
  for (const auto& p : ds.persons) ll += std::log(panel_prob(p, beta));
  return ll;
}

// -- expected complete-data log-likelihood -------------------------------------

/// Per-block terms of the expected complete-data LL for responsibilities r.
struct ExpectedLL {
  double mixing = 0.0;
  double gaussian = 0.0;
  double bernoulli = 0.0;
  double choice = 0.0;
  double total() const { return mixing + gaussian + bernoulli + choice; }
};

inline ExpectedLL expected_complete_ll(const ChoiceDataset& ds, const Matrix& resp,
                                       const GbmLccmParams& params) {
  ExpectedLL q;
  const auto& m = params.membership;
  for (Index n = 0; n < ds.person_count(); ++n) {
    const auto& p = ds.persons[n];
    for (Index k = 0; k < params.classes(); ++k) {
      const double r = resp(n, k);
      q.mixing += r * std::log(m.pi[k]);
      if (m.cont_dim() > 0)
        q.gaussian += r * gaussian_logpdf(p.s_cont, m.mu_c.row(k).transpose(), covariance(m.sigma_c, k));
      if (m.bin_dim() > 0) q.bernoulli += r * std::log(bernoulli_mass(p.s_bin, m.mu_d.row(k).transpose()));
      q.choice += r * std::log(panel_prob(p, params.betas[k].beta));
    }
  }
  return q;
}

// -- derivative-free maximization ----------------------------------------------

/// Nelder-Mead maximization, restarted from the best vertex until a restart
/// stops improving.
inline Vector nelder_mead_max(const std::function<double(const Vector&)>& f, Vector x0,
                              double scale = 0.1, int max_iter = 20000) {
  const Index n = x0.size();
  Vector best = std::move(x0);
  double fbest = f(best);
  for (int restart = 0; restart < 8; ++restart) {
    std::vector<Vector> v(n + 1, best);
    std::vector<double> fv(n + 1);
    for (Index i = 0; i < n; ++i) v[i + 1][i] += scale * std::max(1.0, std::abs(best[i]));
    for (Index i = 0; i <= n; ++i) fv[i] = f(v[i]);
    for (int it = 0; it < max_iter; ++it) {
      std::vector<Index> order(n + 1);
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](Index a, Index b) { return fv[a] > fv[b]; });
      std::vector<Vector> sv(n + 1);
      std::vector<double> sf(n + 1);
      for (Index i = 0; i <= n; ++i) {
        sv[i] = v[order[i]];
        sf[i] = fv[order[i]];
      }
      v = std::move(sv);
      fv = std::move(sf);
      double diameter = 0.0;
      for (Index i = 1; i <= n; ++i) diameter = std::max(diameter, (v[i] - v[0]).lpNorm<Eigen::Infinity>());
      if (diameter < 1e-11) break;

      Vector centroid = Vector::Zero(n);
      for (Index i = 0; i < n; ++i) centroid += v[i];
      centroid /= static_cast<double>(n);
      const Vector xr = centroid + (centroid - v[n]);
      const double fr = f(xr);
      if (fr > fv[0]) {
        const Vector xe = centroid + 2.0 * (centroid - v[n]);
        const double fe = f(xe);
        if (fe > fr) {
          v[n] = xe;
          fv[n] = fe;
        } else {
          v[n] = xr;
          fv[n] = fr;
        }
      } else if (fr > fv[n - 1]) {
        v[n] = xr;
        fv[n] = fr;
      } else {
        const bool outside = fr > fv[n];
        const Vector xc = outside ? Vector(centroid + 0.5 * (xr - centroid))
                                  : Vector(centroid + 0.5 * (v[n] - centroid));
        const double fc = f(xc);
        if (fc > std::max(fr, fv[n])) {
          v[n] = xc;
          fv[n] = fc;
        } else {
          for (Index i = 1; i <= n; ++i) {
            v[i] = v[0] + 0.5 * (v[i] - v[0]);
            fv[i] = f(v[i]);
          }
        }
      }
    }
    const Index arg = std::max_element(fv.begin(), fv.end()) - fv.begin();
    const bool improved = fv[arg] > fbest + 1e-13 * std::max(1.0, std::abs(fbest));
    if (fv[arg] >= fbest) {
      fbest = fv[arg];
      best = v[arg];
    }
    if (!improved && restart > 0) break;
    scale *= 0.1;
  }
  return best;
}

/// Argmax of f over [lo, hi] on a uniform grid.
inline double grid_argmax(const std::function<double(double)>& f, double lo, double hi, double step) {
  double best_x = lo, best_f = f(lo);
  const long count = std::lround((hi - lo) / step);
  for (long i = 1; i <= count; ++i) {
    const double x = lo + static_cast<double>(i) * step;
    const double v = f(x);
    if (v > best_f) {
      best_f = v;
      best_x = x;
    }
  }
  return best_x;
}

/// Central-difference gradient.
inline Vector numeric_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                               double h = 1e-5) {
  Vector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    g[i] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

// -- M-step blocks ---------------------------------------------------------------

/// Covariance from a packed lower-triangular factor with log diagonal.
inline Matrix packed_covariance(const Vector& v, Index d, Index offset = 0) {
  Matrix L = Matrix::Zero(d, d);
  Index i = offset;
  for (Index r = 0; r < d; ++r)
    for (Index c = 0; c <= r; ++c) {
      L(r, c) = r == c ? std::exp(v[i]) : v[i];
      ++i;
    }
  return L * L.transpose();
}

/// Largest deviation of each closed-form block of `updated` from a numeric
/// maximizer of the expected complete-data LL over that block alone, the other
/// blocks held at their updated values.
struct MstepDeviation {
  double pi = 0.0;
  double mu_c = 0.0;
  double sigma = 0.0;
  double mu_d = 0.0;
  double max() const { return std::max({pi, mu_c, sigma, mu_d}); }
};

inline MstepDeviation mstep_block_deviation(const ChoiceDataset& ds, const Matrix& resp,
                                            const GbmLccmParams& updated) {
  const auto& m = updated.membership;
  const Index K = updated.classes(), N = ds.person_count(), Dc = m.cont_dim(), Dd = m.bin_dim();
  MstepDeviation dev;

  // Mixing weights through K-1 free logits.
  if (K > 1) {
    const auto q = [&](const Vector& a) {
      Vector e(K);
      for (Index k = 0; k < K; ++k) e[k] = k + 1 < K ? std::exp(a[k]) : 1.0;
      e /= e.sum();
      double v = 0.0;
      for (Index n = 0; n < N; ++n)
        for (Index k = 0; k < K; ++k) v += resp(n, k) * std::log(e[k]);
      return v;
    };
    const Vector a = nelder_mead_max(q, Vector::Zero(K - 1), 0.5);
    Vector e(K);
    for (Index k = 0; k < K; ++k) e[k] = k + 1 < K ? std::exp(a[k]) : 1.0;
    e /= e.sum();
    dev.pi = (e - m.pi).cwiseAbs().maxCoeff();
  }

  const auto gaussian_term = [&](Index k, const Vector& mu, const Matrix& sigma) {
    double v = 0.0;
    for (Index n = 0; n < N; ++n) v += resp(n, k) * gaussian_logpdf(ds.persons[n].s_cont, mu, sigma);
    return v;
  };

  if (Dc > 0) {
    for (Index k = 0; k < K; ++k) {
      const Matrix sigma = covariance(m.sigma_c, k);
      const Vector mu = nelder_mead_max([&](const Vector& x) { return gaussian_term(k, x, sigma); },
                                        Vector::Zero(Dc), 0.5);
      dev.mu_c = std::max(dev.mu_c, (mu - m.mu_c.row(k).transpose()).cwiseAbs().maxCoeff());
    }

    const Index packed = Dc * (Dc + 1) / 2;
    switch (m.sigma_c.structure()) {
      case CovarianceStructure::Full:
        for (Index k = 0; k < K; ++k) {
          const Vector mu = m.mu_c.row(k).transpose();
          const Vector v = nelder_mead_max(
              [&](const Vector& x) { return gaussian_term(k, mu, packed_covariance(x, Dc)); },
              Vector::Zero(packed), 0.5);
          dev.sigma = std::max(dev.sigma, (packed_covariance(v, Dc) - covariance(m.sigma_c, k)).cwiseAbs().maxCoeff());
        }
        break;
      case CovarianceStructure::Tied: {
        const auto q = [&](const Vector& x) {
          const Matrix sigma = packed_covariance(x, Dc);
          double v = 0.0;
          for (Index k = 0; k < K; ++k) v += gaussian_term(k, m.mu_c.row(k).transpose(), sigma);
          return v;
        };
        const Vector v = nelder_mead_max(q, Vector::Zero(packed), 0.5);
        dev.sigma = (packed_covariance(v, Dc) - covariance(m.sigma_c, 0)).cwiseAbs().maxCoeff();
        break;
      }
      case CovarianceStructure::Diagonal:
        for (Index k = 0; k < K; ++k) {
          const Vector mu = m.mu_c.row(k).transpose();
          const auto diag = [&](const Vector& x) { return Matrix(x.array().exp().matrix().asDiagonal()); };
          const Vector v = nelder_mead_max([&](const Vector& x) { return gaussian_term(k, mu, diag(x)); },
                                           Vector::Zero(Dc), 0.5);
          dev.sigma = std::max(dev.sigma, (diag(v) - covariance(m.sigma_c, k)).cwiseAbs().maxCoeff());
        }
        break;
      case CovarianceStructure::Spherical:
        for (Index k = 0; k < K; ++k) {
          const Vector mu = m.mu_c.row(k).transpose();
          const auto iso = [&](const Vector& x) { return Matrix(std::exp(x[0]) * Matrix::Identity(Dc, Dc)); };
          const Vector v = nelder_mead_max([&](const Vector& x) { return gaussian_term(k, mu, iso(x)); },
                                           Vector::Zero(1), 0.5);
          dev.sigma = std::max(dev.sigma, (iso(v) - covariance(m.sigma_c, k)).cwiseAbs().maxCoeff());
        }
        break;
    }
  }

  for (Index k = 0; k < K; ++k)
    for (Index i = 0; i < Dd; ++i) {
      const auto q = [&](const Vector& a) {
        const double mu = 1.0 / (1.0 + std::exp(-a[0]));
        double v = 0.0;
        for (Index n = 0; n < N; ++n) {
          const double s = ds.persons[n].s_bin[i];
          v += resp(n, k) * (s * std::log(mu) + (1.0 - s) * std::log(1.0 - mu));
        }
        return v;
      };
      const Vector a = nelder_mead_max(q, Vector::Zero(1), 0.5);
      dev.mu_d = std::max(dev.mu_d, std::abs(1.0 / (1.0 + std::exp(-a[0])) - m.mu_d(k, i)));
    }
  return dev;
}

// -- labels --------------------------------------------------------------------

/// perm[i] is the row of `estimate` matched to row i of `truth`, minimizing the
/// total squared distance over all permutations.
inline std::vector<Index> match_labels(const Matrix& estimate, const Matrix& truth) {
  const Index K = truth.rows();
  std::vector<Index> perm(K), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_cost = std::numeric_limits<double>::infinity();
  do {
    double cost = 0.0;
    for (Index i = 0; i < K; ++i) cost += (estimate.row(perm[i]) - truth.row(i)).squaredNorm();
    if (cost < best_cost) {
      best_cost = cost;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// -- random instances ----------------------------------------------------------

inline Matrix random_spd(std::mt19937_64& rng, Index d) {
  std::normal_distribution<double> z(0.0, 1.0);
  Matrix a(d, d);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) a(i, j) = z(rng);
  return a * a.transpose() / static_cast<double>(d) + 0.5 * Matrix::Identity(d, d);
}

inline lccm::Covariances random_covariances(std::mt19937_64& rng, CovarianceStructure s, Index K, Index d) {
  std::uniform_real_distribution<double> u(0.4, 2.0);
  std::vector<Matrix> blocks;
  switch (s) {
    case CovarianceStructure::Full:
      for (Index k = 0; k < K; ++k) blocks.push_back(random_spd(rng, d));
      break;
    case CovarianceStructure::Tied: blocks.push_back(random_spd(rng, d)); break;
    case CovarianceStructure::Diagonal:
      for (Index k = 0; k < K; ++k) {
        Matrix b(d, 1);
        for (Index i = 0; i < d; ++i) b(i, 0) = u(rng);
        blocks.push_back(b);
      }
      break;
    case CovarianceStructure::Spherical:
      for (Index k = 0; k < K; ++k) blocks.push_back(Matrix::Constant(1, 1, u(rng)));
      break;
  }
  return lccm::Covariances(s, K, d, std::move(blocks));
}

inline GbmLccmParams random_gbm_params(std::mt19937_64& rng, Index K, Index Dc, Index Dd, Index P,
                                       CovarianceStructure s = CovarianceStructure::Full,
                                       double mean_spread = 1.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  GbmLccmParams p;
  auto& m = p.membership;
  m.pi.resize(K);
  for (Index k = 0; k < K; ++k) m.pi[k] = 0.3 + u(rng);
  m.pi /= m.pi.sum();
  m.mu_c.resize(K, Dc);
  for (Index k = 0; k < K; ++k)
    for (Index i = 0; i < Dc; ++i) m.mu_c(k, i) = mean_spread * z(rng);
  m.sigma_c = random_covariances(rng, s, K, Dc);
  m.mu_d.resize(K, Dd);
  for (Index k = 0; k < K; ++k)
    for (Index i = 0; i < Dd; ++i) m.mu_d(k, i) = 0.15 + 0.7 * u(rng);
  for (Index k = 0; k < K; ++k) {
    Vector b(P);
    for (Index i = 0; i < P; ++i) b[i] = z(rng);
    p.betas.emplace_back(b);
  }
  return p;
}

/// Small dataset with arbitrary characteristics, attributes and choices; each
/// non-chosen alternative is dropped from the choice set with probability
/// `unavailable` (keeping at least two).
inline ChoiceDataset random_dataset(std::mt19937_64& rng, Index N, Index T, Index J, Index P, Index Dc,
                                    Index Dd, double unavailable = 0.0) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  ChoiceDataset ds;
  ds.alt_count = J;
  ds.attr_count = P;
  ds.cont_count = Dc;
  ds.bin_count = Dd;
  for (Index n = 0; n < N; ++n) {
    PersonRecord p;
    p.id = std::to_string(n + 1);
    p.s_cont.resize(Dc);
    for (Index i = 0; i < Dc; ++i) p.s_cont[i] = z(rng);
    p.s_bin.resize(Dd);
    for (Index i = 0; i < Dd; ++i) p.s_bin[i] = u(rng) < 0.5 ? 1.0 : 0.0;
    for (Index t = 0; t < T; ++t) {
      ChoiceSituation s;
      s.attrs.resize(J, P);
      for (Index j = 0; j < J; ++j)
        for (Index a = 0; a < P; ++a) s.attrs(j, a) = z(rng);
      s.chosen = static_cast<Index>(u(rng) * static_cast<double>(J)) % J;
      s.available = lccm::BoolArray::Constant(J, true);
      for (Index j = 0; j < J; ++j)
        if (j != s.chosen && s.available.count() > 2 && u(rng) < unavailable) s.available[j] = false;
      p.situations.push_back(std::move(s));
    }
    ds.persons.push_back(std::move(p));
  }
  for (Index i = 0; i < ds.attr_count; ++i) ds.attr_names.push_back("x" + std::to_string(i + 1));
  for (Index i = 0; i < ds.cont_count; ++i) ds.cont_names.push_back("c" + std::to_string(i + 1));
  for (Index i = 0; i < ds.bin_count; ++i) ds.bin_names.push_back("b" + std::to_string(i + 1));
  ds.validate();
  return ds;
}


/// Panel data from a logit-membership LCCM with membership covariates
/// z = [1, S_c, S_d] (S_c standard normal, S_d fair coins) and uniform(-2, 2)
/// attributes. `classes_out` receives the drawn classes.
inline ChoiceDataset simulate_lccm(std::mt19937_64& rng, const LccmParams& truth, Index N, Index T, Index J,
                                   Index Dc, Index Dd, std::vector<Index>* classes_out = nullptr) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> z(0.0, 1.0);
  const Index P = truth.betas.front().beta.size();
  ChoiceDataset ds;
  ds.alt_count = J;
  ds.attr_count = P;
  ds.cont_count = Dc;
  ds.bin_count = Dd;
  const auto draw = [&](const Vector& probs) {
    const double r = u(rng);
    double acc = 0.0;
    for (Index i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (r < acc) return i;
    }
    return probs.size() - 1;
  };
  for (Index n = 0; n < N; ++n) {
    PersonRecord p;
    p.id = std::to_string(n + 1);
    p.s_cont = Vector::NullaryExpr(Dc, [&] { return z(rng); });
    p.s_bin = Vector::NullaryExpr(Dd, [&] { return u(rng) < 0.5 ? 1.0 : 0.0; });
    const Index k = draw(lccm_class_probs(p, truth));
    if (classes_out) classes_out->push_back(k);
    for (Index t = 0; t < T; ++t) {
      ChoiceSituation s;
      s.attrs = Matrix::NullaryExpr(J, P, [&] { return 4.0 * u(rng) - 2.0; });
      s.available = lccm::BoolArray::Constant(J, true);
      Vector e = (s.attrs * truth.betas[k].beta).array().exp();
      s.chosen = draw(e / e.sum());
      p.situations.push_back(std::move(s));
    }
    ds.persons.push_back(std::move(p));
  }
  for (Index i = 0; i < ds.attr_count; ++i) ds.attr_names.push_back("x" + std::to_string(i + 1));
  for (Index i = 0; i < ds.cont_count; ++i) ds.cont_names.push_back("c" + std::to_string(i + 1));
  for (Index i = 0; i < ds.bin_count; ++i) ds.bin_names.push_back("b" + std::to_string(i + 1));
  ds.validate();
  return ds;
}

}  // namespace oracle
