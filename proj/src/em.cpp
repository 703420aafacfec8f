#include "lccm/em.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <random>
#include <thread>

namespace lccm {

// ---------------------------------------------------------------------------
// parameter types

void GbmLccmParams::validate() const {
  membership.validate();
  if (static_cast<Index>(betas.size()) != classes())
    throw Error("need one coefficient vector per class");
  for (const auto& b : betas) {
    if (b.beta.size() != betas.front().beta.size())
      throw Error("class coefficient vectors differ in length");
    if (!b.beta.allFinite()) throw Error("non-finite choice coefficient");
  }
}

GbmLccmParams GbmLccmParams::permuted(const std::vector<Index>& perm) const {
  GbmLccmParams out;
  out.membership = membership.permuted(perm);
  for (Index k : perm) out.betas.push_back(betas.at(static_cast<std::size_t>(k)));
  return out;
}

void LccmParams::validate() const {
  const Index K = classes();
  if (K < 1) throw Error("LCCM needs at least one class");
  if (gamma.rows() != K - 1) throw Error("gamma must have K - 1 rows");
  if (!gamma.allFinite()) throw Error("non-finite membership coefficient");
  for (const auto& b : betas) {
    if (b.beta.size() != betas.front().beta.size())
      throw Error("class coefficient vectors differ in length");
    if (!b.beta.allFinite()) throw Error("non-finite choice coefficient");
  }
}

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::Mnl: return "mnl";
    case ModelKind::Lccm: return "lccm";
    case ModelKind::GbmLccm: return "gbm-lccm";
  }
  return "mnl";
}

ModelKind parse_model_kind(std::string_view name) {
  if (name == "mnl") return ModelKind::Mnl;
  if (name == "lccm") return ModelKind::Lccm;
  if (name == "gbm-lccm" || name == "gbm_lccm" || name == "gm-lccm" || name == "bm-lccm")
    return ModelKind::GbmLccm;
  throw Error("unknown model '" + std::string(name) + "'");
}

ModelKind model_kind(const ModelParams& params) {
  switch (params.index()) {
    case 0: return ModelKind::Mnl;
    case 1: return ModelKind::Lccm;
    default: return ModelKind::GbmLccm;
  }
}

Index model_classes(const ModelParams& params) {
  if (const auto* g = std::get_if<GbmLccmParams>(&params)) return g->classes();
  if (const auto* l = std::get_if<LccmParams>(&params)) return l->classes();
  return 1;
}

namespace {

const char* membership_name(MembershipInit m) {
  switch (m) {
    case MembershipInit::Zero: return "zero";
    case MembershipInit::Random: return "random";
    case MembershipInit::KMeans: return "kmeans";
    case MembershipInit::Incremental: return "incremental";
  }
  return "zero";
}

}  // namespace

std::string to_string(const InitStrategy& init) {
  return std::string(membership_name(init.membership)) + "/" +
         (init.choice == ChoiceInit::Zero ? "zero" : "random");
}

InitStrategy parse_init(std::string_view text) {
  const auto slash = text.find('/');
  const std::string mem(text.substr(0, slash));
  const std::string ch = slash == std::string_view::npos ? "zero" : std::string(text.substr(slash + 1));
  InitStrategy s;
  if (mem == "zero") s.membership = MembershipInit::Zero;
  else if (mem == "random") s.membership = MembershipInit::Random;
  else if (mem == "kmeans" || mem == "k-means") s.membership = MembershipInit::KMeans;
  else if (mem == "incremental") s.membership = MembershipInit::Incremental;
  else throw Error("unknown membership initialization '" + mem + "'");
  if (ch == "zero" || ch == "0") s.choice = ChoiceInit::Zero;
  else if (ch == "random") s.choice = ChoiceInit::Random;
  else throw Error("unknown choice-model initialization '" + ch + "'");
  return s;
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

using Clock = std::chrono::steady_clock;

class Uniform {
public:
  explicit Uniform(std::uint64_t seed) : rng_(seed) {}
  double operator()(double lo, double hi) {
    return lo + (hi - lo) * (static_cast<double>(rng_() >> 11) * 0x1.0p-53);
  }
  std::uint64_t raw() { return rng_(); }

private:
  std::mt19937_64 rng_;
};

struct Context {
  PanelDesign design;
  Matrix Sc;
  Matrix Sd;
  explicit Context(const ChoiceDataset& ds)
      : design(ds), Sc(ds.continuous_matrix()), Sd(ds.binary_matrix()) {}
  Index persons() const { return design.person_count(); }
};

Vector row_lse(const Matrix& m) {
  Vector out(m.rows());
  for (Index r = 0; r < m.rows(); ++r) out[r] = log_sum_exp(m.row(r));
  return out;
}

Matrix log_softmax_rows(const Matrix& m) {
  const Vector lse = row_lse(m);
  return m.colwise() - lse;
}

double sum_row_lse(const Matrix& m) {
  double acc = 0.0;
  for (Index r = 0; r < m.rows(); ++r) acc += log_sum_exp(m.row(r));
  return acc;
}

// Per-column scale used to size random coefficient draws.
Vector column_scales(const Matrix& X) {
  Vector out(X.cols());
  for (Index c = 0; c < X.cols(); ++c) {
    const double mean = X.col(c).mean();
    const double sd = std::sqrt((X.col(c).array() - mean).square().mean());
    out[c] = sd > 1e-12 ? sd : 1.0;
  }
  return out;
}

MnlParams random_beta(const Context& ctx, Uniform& u) {
  const Vector scale = column_scales(ctx.design.X);
  Vector b(scale.size());
  for (Index i = 0; i < b.size(); ++i) b[i] = u(-0.5, 0.5) / scale[i];
  return MnlParams(b);
}

MnlParams start_beta(const Context& ctx, ChoiceInit init, Uniform& u) {
  return init == ChoiceInit::Zero ? MnlParams::zeros(ctx.design.attr_count()) : random_beta(ctx, u);
}

bool relative_change_below(double prev, double cur, double tol) {
  return std::abs(cur - prev) <= tol * std::max(std::abs(cur), 1e-300);
}

void separation_warnings(const std::vector<MnlParams>& betas, std::vector<std::string>& out) {
  for (std::size_t k = 0; k < betas.size(); ++k)
    if (betas[k].beta.size() > 0 && betas[k].beta.cwiseAbs().maxCoeff() > kSeparationThreshold)
      out.push_back("class " + std::to_string(k) + ": coefficient magnitude above " +
                    std::to_string(static_cast<int>(kSeparationThreshold)) +
                    ", possible complete separation");
}

// ---------------------------------------------------------------------------
// GBM-LCCM internals

Matrix gbm_log_joint(const Context& ctx, const GbmLccmParams& p) {
  return membership_log_joint_rows(ctx.Sc, ctx.Sd, p.membership) +
         choice_loglik_matrix(ctx.design, p.betas);
}

GbmMembershipParams membership_from_resp(const Context& ctx, const Matrix& resp,
                                         CovarianceStructure structure, double threshold) {
  const Vector nk = class_masses(resp, threshold);
  GbmMembershipParams m;
  m.pi = floor_mixing(nk / nk.sum());
  m.mu_c = weighted_means(ctx.Sc, resp);
  m.sigma_c = covariance_mstep(ctx.Sc, resp, m.mu_c, structure);
  m.mu_d = clamp_bernoulli_means(weighted_means(ctx.Sd, resp));
  return m;
}

GbmLccmParams mstep(const Context& ctx, const Responsibilities& resp, CovarianceStructure structure,
                    const GbmLccmParams& prev, const EmOptions& opt) {
  const Index K = resp.cols();
  if (static_cast<Index>(prev.betas.size()) != K)
    throw Error("previous parameters have the wrong class count");
  GbmLccmParams out;
  out.membership = membership_from_resp(ctx, resp, structure,
                                        opt.empty_class_fraction * static_cast<double>(ctx.persons()));
  out.betas.reserve(static_cast<std::size_t>(K));
  for (Index k = 0; k < K; ++k)
    out.betas.push_back(
        fit_weighted_mnl(ctx.design, resp.col(k), prev.betas[static_cast<std::size_t>(k)], opt.bfgs)
            .params);
  return out;
}

double gbm_marginal(const Context& ctx, const GbmLccmParams& p) {
  const Matrix log_post = log_softmax_rows(membership_log_joint_rows(ctx.Sc, ctx.Sd, p.membership));
  return sum_row_lse(log_post + choice_loglik_matrix(ctx.design, p.betas));
}

// ---------------------------------------------------------------------------
// LCCM internals

struct LccmContext : Context {
  Matrix Z;
  explicit LccmContext(const ChoiceDataset& ds) : Context(ds), Z(lccm_membership_design(ds)) {}
};

Matrix lccm_logprobs(const Matrix& Z, const Matrix& gamma) {
  Matrix util(Z.rows(), gamma.rows() + 1);
  util.leftCols(gamma.rows()) = Z * gamma.transpose();
  util.col(gamma.rows()).setZero();
  return log_softmax_rows(util);
}

Vector flatten_rows(const Matrix& m) {
  Vector out(m.size());
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out[r * m.cols() + c] = m(r, c);
  return out;
}

Matrix unflatten_rows(const Vector& v, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = v[r * cols + c];
  return m;
}

Matrix fit_gamma(const Matrix& Z, const Matrix& resp, const Matrix& gamma0, const BfgsOptions& opt) {
  const Index Km1 = gamma0.rows();
  if (Km1 == 0) return gamma0;
  const Index D = Z.cols();
  const Objective obj = [&](const Vector& x, Vector& g) {
    const Matrix gamma = unflatten_rows(x, Km1, D);
    const Matrix logp = lccm_logprobs(Z, gamma);
    const Matrix diff = resp - logp.array().exp().matrix();  // N x K
    g = flatten_rows(diff.leftCols(Km1).transpose() * Z);
    return (resp.array() * logp.array()).sum();
  };
  const OptimResult r = bfgs_maximize(obj, flatten_rows(gamma0), opt);
  return unflatten_rows(r.x_star, Km1, D);
}

}  // namespace

// ---------------------------------------------------------------------------
// public likelihood pieces

Matrix choice_loglik_matrix(const PanelDesign& design, const std::vector<MnlParams>& betas) {
  Matrix out(design.person_count(), static_cast<Index>(betas.size()));
  for (std::size_t k = 0; k < betas.size(); ++k)
    out.col(static_cast<Index>(k)) = person_choice_loglik(design, betas[k].beta);
  return out;
}

Matrix gbm_log_joint_matrix(const ChoiceDataset& ds, const GbmLccmParams& params) {
  return gbm_log_joint(Context(ds), params);
}

Matrix lccm_membership_design(const ChoiceDataset& ds) {
  Matrix Z(ds.person_count(), 1 + ds.cont_count + ds.bin_count);
  Z.col(0).setOnes();
  Z.middleCols(1, ds.cont_count) = ds.continuous_matrix();
  Z.rightCols(ds.bin_count) = ds.binary_matrix();
  return Z;
}

Matrix lccm_membership_logprobs(const ChoiceDataset& ds, const Matrix& gamma) {
  return lccm_logprobs(lccm_membership_design(ds), gamma);
}

Responsibilities estep_gbm(const ChoiceDataset& ds, const GbmLccmParams& params) {
  const Matrix L = gbm_log_joint(Context(ds), params);
  if (!L.allFinite()) throw Error("non-finite log-joint in E-step");
  return softmax_rows(L);
}

GbmLccmParams mstep_gbm(const ChoiceDataset& ds, const Responsibilities& resp,
                        CovarianceStructure structure, const GbmLccmParams& prev,
                        const EmOptions& options) {
  return mstep(Context(ds), resp, structure, prev, options);
}

double joint_loglik(const ChoiceDataset& ds, const GbmLccmParams& params) {
  return sum_row_lse(gbm_log_joint(Context(ds), params));
}

double marginal_loglik(const ChoiceDataset& ds, const GbmLccmParams& params) {
  return gbm_marginal(Context(ds), params);
}

// ---------------------------------------------------------------------------
// GBM-LCCM estimation

GbmLccmParams init_gbm_params(const ChoiceDataset& ds, Index K, CovarianceStructure structure,
                              const InitStrategy& init, std::uint64_t seed,
                              const GbmLccmParams* previous) {
  if (K < 1) throw Error("need at least one class");
  const Context ctx(ds);
  const Index N = ctx.persons();
  if (K > N) throw Error("more classes than persons");
  Uniform u(seed);
  GbmLccmParams p;
  const double threshold = 1e-8;

  switch (init.membership) {
    case MembershipInit::KMeans: {
      Matrix S(N, ds.cont_count + ds.bin_count);
      S << ctx.Sc, ctx.Sd;
      p.membership = membership_from_resp(ctx, kmeans_init(S, K, u.raw()), structure, threshold);
      break;
    }
    case MembershipInit::Random: {
      // Means at K distinct random persons, spread at the pooled sample covariance.
      std::vector<Index> idx(static_cast<std::size_t>(N));
      for (Index i = 0; i < N; ++i) idx[static_cast<std::size_t>(i)] = i;
      for (Index i = 0; i < K; ++i) {
        const Index j = i + static_cast<Index>(u.raw() % static_cast<std::uint64_t>(N - i));
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
      }
      const Matrix ones = Matrix::Ones(N, 1);
      const GbmMembershipParams pooled = membership_from_resp(ctx, ones, structure, threshold);
      p.membership.pi = Vector::Constant(K, 1.0 / static_cast<double>(K));
      p.membership.mu_c.resize(K, ds.cont_count);
      p.membership.mu_d.resize(K, ds.bin_count);
      for (Index k = 0; k < K; ++k) {
        const Index n = idx[static_cast<std::size_t>(k)];
        p.membership.mu_c.row(k) = ctx.Sc.row(n);
        p.membership.mu_d.row(k) = 0.5 * ctx.Sd.row(n) + 0.5 * pooled.mu_d.row(0);
      }
      p.membership.mu_d = clamp_bernoulli_means(p.membership.mu_d);
      std::vector<Matrix> blocks;
      if (ds.cont_count > 0) {
        const std::size_t count = structure == CovarianceStructure::Tied ? 1u : static_cast<std::size_t>(K);
        blocks.assign(count, pooled.sigma_c.blocks().front());
      }
      p.membership.sigma_c = Covariances(structure, K, ds.cont_count, std::move(blocks));
      break;
    }
    case MembershipInit::Incremental: {
      if (!previous || previous->classes() != K - 1)
        throw Error("incremental start needs the K-1 class solution");
      if (previous->membership.sigma_c.structure() != structure && ds.cont_count > 0)
        throw Error("incremental start from a different covariance structure");
      const GbmMembershipParams& prev = previous->membership;
      Index big = 0;
      prev.pi.maxCoeff(&big);
      GbmMembershipParams m;
      m.pi.resize(K);
      m.pi.head(K - 1) = prev.pi;
      m.pi[big] *= 0.5;
      m.pi[K - 1] = prev.pi[big] * 0.5;
      m.mu_c.resize(K, prev.mu_c.cols());
      m.mu_c.topRows(K - 1) = prev.mu_c;
      m.mu_d.resize(K, prev.mu_d.cols());
      m.mu_d.topRows(K - 1) = prev.mu_d;
      const Matrix sig = prev.sigma_c.realized(big);
      for (Index d = 0; d < prev.mu_c.cols(); ++d)
        m.mu_c(K - 1, d) = prev.mu_c(big, d) + u(-0.5, 0.5) * std::sqrt(std::max(sig(d, d), 0.0));
      for (Index d = 0; d < prev.mu_d.cols(); ++d) m.mu_d(K - 1, d) = prev.mu_d(big, d) + u(-0.1, 0.1);
      m.mu_d = clamp_bernoulli_means(m.mu_d);
      m.sigma_c = prev.sigma_c.with_copied_class(big);
      p.membership = std::move(m);
      p.betas = previous->betas;
      p.betas.push_back(start_beta(ctx, init.choice, u));
      p.validate();
      return p;
    }
    case MembershipInit::Zero:
      throw Error("a zero membership start applies to the logit-membership LCCM only");
  }
  for (Index k = 0; k < K; ++k) p.betas.push_back(start_beta(ctx, init.choice, u));
  p.validate();
  return p;
}

FitResult fit_gbm_lccm_from(const ChoiceDataset& ds, CovarianceStructure structure,
                            GbmLccmParams start, const EmOptions& options) {
  start.validate();
  const Context ctx(ds);
  FitResult res;
  GbmLccmParams theta = std::move(start);
  Matrix L = gbm_log_joint(ctx, theta);
  if (!L.allFinite()) throw Error("non-finite log-joint at the starting parameters");
  double ll = sum_row_lse(L);
  res.ll_trace.push_back(ll);
  for (int it = 0; it < options.max_iter; ++it) {
    const auto t0 = Clock::now();
    const Responsibilities resp = softmax_rows(L);
    theta = mstep(ctx, resp, structure, theta, options);
    L = gbm_log_joint(ctx, theta);
    if (!L.allFinite()) throw Error("non-finite log-joint after M-step");
    const double ll_new = sum_row_lse(L);
    res.ll_trace.push_back(ll_new);
    res.iteration_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    res.iterations = it + 1;
    const bool done = relative_change_below(ll, ll_new, options.tol);
    ll = ll_new;
    if (done) {
      res.converged = true;
      break;
    }
  }
  res.joint_ll = ll;
  res.marginal_ll = gbm_marginal(ctx, theta);
  separation_warnings(theta.betas, res.warnings);
  if (!res.converged) res.warnings.push_back("EM stopped at max_iter before converging");
  res.params = std::move(theta);
  return res;
}

FitResult fit_gbm_lccm(const ChoiceDataset& ds, Index K, CovarianceStructure structure,
                       const InitStrategy& init, std::uint64_t seed, const EmOptions& options,
                       const GbmLccmParams* previous) {
  FitResult res =
      fit_gbm_lccm_from(ds, structure, init_gbm_params(ds, K, structure, init, seed, previous), options);
  res.seed = seed;
  res.init = init;
  return res;
}

// ---------------------------------------------------------------------------
// LCCM estimation

double marginal_loglik(const ChoiceDataset& ds, const LccmParams& params) {
  const LccmContext ctx(ds);
  return sum_row_lse(lccm_logprobs(ctx.Z, params.gamma) + choice_loglik_matrix(ctx.design, params.betas));
}

Responsibilities estep_lccm(const ChoiceDataset& ds, const LccmParams& params) {
  const LccmContext ctx(ds);
  return softmax_rows(lccm_logprobs(ctx.Z, params.gamma) + choice_loglik_matrix(ctx.design, params.betas));
}

LccmParams init_lccm_params(const ChoiceDataset& ds, Index K, const InitStrategy& init,
                            std::uint64_t seed, const LccmParams* previous) {
  if (K < 1) throw Error("need at least one class");
  const LccmContext ctx(ds);
  Uniform u(seed);
  const Index D = ctx.Z.cols();
  const Vector zscale = column_scales(ctx.Z.rightCols(D - 1)).eval();
  const auto random_gamma_row = [&] {
    RowVector r(D);
    r[0] = u(-0.5, 0.5);
    for (Index c = 1; c < D; ++c) r[c] = u(-0.5, 0.5) / zscale[c - 1];
    return r;
  };
  LccmParams p;
  switch (init.membership) {
    case MembershipInit::Zero:
      p.gamma = Matrix::Zero(K - 1, D);
      break;
    case MembershipInit::Random:
      p.gamma.resize(K - 1, D);
      for (Index k = 0; k < K - 1; ++k) p.gamma.row(k) = random_gamma_row();
      break;
    case MembershipInit::Incremental: {
      if (!previous || previous->classes() != K - 1)
        throw Error("incremental start needs the K-1 class solution");
      // The new class goes first so the previous reference class stays last.
      const Vector share = lccm_logprobs(ctx.Z, previous->gamma).array().exp().colwise().mean();
      Index big = 0;
      share.maxCoeff(&big);
      p.gamma.resize(K - 1, D);
      RowVector base = big < K - 2 ? RowVector(previous->gamma.row(big)) : RowVector::Zero(D);
      p.gamma.row(0) = base + random_gamma_row();
      if (K > 2) p.gamma.bottomRows(K - 2) = previous->gamma;
      p.betas.push_back(start_beta(ctx, init.choice, u));
      for (const auto& b : previous->betas) p.betas.push_back(b);
      p.validate();
      return p;
    }
    case MembershipInit::KMeans:
      throw Error("k-means starts apply to the mixture membership model only");
  }
  for (Index k = 0; k < K; ++k) p.betas.push_back(start_beta(ctx, init.choice, u));
  p.validate();
  return p;
}

FitResult fit_lccm_from(const ChoiceDataset& ds, LccmParams start, const EmOptions& options) {
  start.validate();
  const LccmContext ctx(ds);
  const Index K = start.classes();
  FitResult res;
  LccmParams theta = std::move(start);
  Matrix L = lccm_logprobs(ctx.Z, theta.gamma) + choice_loglik_matrix(ctx.design, theta.betas);
  double ll = sum_row_lse(L);
  res.ll_trace.push_back(ll);
  const double threshold = options.empty_class_fraction * static_cast<double>(ctx.persons());
  for (int it = 0; it < options.max_iter; ++it) {
    const auto t0 = Clock::now();
    const Responsibilities resp = softmax_rows(L);
    class_masses(resp, threshold);
    theta.gamma = fit_gamma(ctx.Z, resp, theta.gamma, options.bfgs);
    for (Index k = 0; k < K; ++k)
      theta.betas[static_cast<std::size_t>(k)] =
          fit_weighted_mnl(ctx.design, resp.col(k), theta.betas[static_cast<std::size_t>(k)], options.bfgs)
              .params;
    L = lccm_logprobs(ctx.Z, theta.gamma) + choice_loglik_matrix(ctx.design, theta.betas);
    if (!L.allFinite()) throw Error("non-finite log-likelihood after M-step");
    const double ll_new = sum_row_lse(L);
    res.ll_trace.push_back(ll_new);
    res.iteration_seconds.push_back(std::chrono::duration<double>(Clock::now() - t0).count());
    res.iterations = it + 1;
    const bool done = relative_change_below(ll, ll_new, options.tol);
    ll = ll_new;
    if (done) {
      res.converged = true;
      break;
    }
  }
  res.marginal_ll = ll;
  separation_warnings(theta.betas, res.warnings);
  if (!res.converged) res.warnings.push_back("EM stopped at max_iter before converging");
  res.params = std::move(theta);
  return res;
}

FitResult fit_lccm(const ChoiceDataset& ds, Index K, const InitStrategy& init, std::uint64_t seed,
                   const EmOptions& options, const LccmParams* previous) {
  FitResult res = fit_lccm_from(ds, init_lccm_params(ds, K, init, seed, previous), options);
  res.seed = seed;
  res.init = init;
  return res;
}

// ---------------------------------------------------------------------------
// restarts

FitResult fit_mnl_result(const ChoiceDataset& ds, const BfgsOptions& options) {
  const MnlFit fit = fit_mnl(ds, options);
  FitResult res;
  res.params = fit.params;
  res.marginal_ll = fit.loglik;
  res.iterations = fit.optim.iterations;
  res.converged = fit.optim.converged;
  res.ll_trace = fit.optim.f_trace;
  res.warnings = fit.warnings;
  res.init = InitStrategy{MembershipInit::Zero, ChoiceInit::Zero};
  RestartOutcome o;
  o.init = res.init;
  o.completed = true;
  o.marginal_ll = fit.loglik;
  o.iterations = res.iterations;
  o.converged = res.converged;
  res.restarts.push_back(o);
  res.completed_restarts = 1;
  return res;
}

RestartPlan restart_grid(const ModelSpec& spec, std::uint64_t seed, int trials, bool incremental) {
  RestartPlan plan;
  plan.seed = seed;
  plan.trials = trials;
  std::uint64_t counter = 0;
  const auto add = [&](MembershipInit m, ChoiceInit c, int times) {
    for (int i = 0; i < times; ++i) plan.entries.push_back({{m, c}, derive_seed(seed, counter++)});
  };
  if (spec.kind == ModelKind::Mnl) {
    add(MembershipInit::Zero, ChoiceInit::Zero, 1);
    return plan;
  }
  if (spec.classes <= 1) {
    add(spec.kind == ModelKind::GbmLccm ? MembershipInit::KMeans : MembershipInit::Zero,
        ChoiceInit::Zero, 1);
    return plan;
  }
  if (spec.kind == ModelKind::GbmLccm) {
    add(MembershipInit::Random, ChoiceInit::Zero, trials);
    add(MembershipInit::Random, ChoiceInit::Random, trials);
    add(MembershipInit::KMeans, ChoiceInit::Zero, trials);
    add(MembershipInit::KMeans, ChoiceInit::Random, trials);
  } else {
    add(MembershipInit::Zero, ChoiceInit::Zero, 1);
    add(MembershipInit::Zero, ChoiceInit::Random, trials);
    add(MembershipInit::Random, ChoiceInit::Zero, trials);
    add(MembershipInit::Random, ChoiceInit::Random, trials);
  }
  if (incremental)
    for (int i = 0; i < trials; ++i)
      add(MembershipInit::Incremental, i % 2 == 0 ? ChoiceInit::Zero : ChoiceInit::Random, 1);
  return plan;
}

FitResult run_restarts(const ChoiceDataset& ds, const ModelSpec& spec, const RestartPlan& plan) {
  if (spec.kind == ModelKind::Mnl) return fit_mnl_result(ds, spec.em.bfgs);
  if (plan.entries.empty()) throw EstimationError("restart plan is empty");

  std::vector<RestartSpec> entries = plan.entries;
  std::optional<ModelParams> previous = plan.previous;
  const bool wants_incremental =
      std::any_of(entries.begin(), entries.end(),
                  [](const RestartSpec& e) { return e.init.membership == MembershipInit::Incremental; });
  if (wants_incremental && !previous) {
    if (spec.classes < 2) {
      std::erase_if(entries, [](const RestartSpec& e) {
        return e.init.membership == MembershipInit::Incremental;
      });
      if (entries.empty()) throw EstimationError("restart plan is empty");
    } else {
      ModelSpec sub = spec;
      sub.classes = spec.classes - 1;
      RestartPlan sub_plan =
          restart_grid(sub, derive_seed(plan.seed, 0xC0FFEEULL + static_cast<std::uint64_t>(sub.classes)),
                      plan.trials, true);
      sub_plan.threads = plan.threads;
      previous = run_restarts(ds, sub, sub_plan).params;
    }
  }
  if (previous && model_classes(*previous) != spec.classes - 1)
    throw EstimationError("incremental starts need a solution with K - 1 classes");

  const std::size_t count = entries.size();
  std::vector<std::optional<FitResult>> results(count);
  std::vector<RestartOutcome> outcomes(count);

  const auto run_one = [&](std::size_t i) {
    const RestartSpec& e = entries[i];
    RestartOutcome& o = outcomes[i];
    o.seed = e.seed;
    o.init = e.init;
    try {
      FitResult r;
      if (spec.kind == ModelKind::GbmLccm) {
        const GbmLccmParams* prev =
            previous ? std::get_if<GbmLccmParams>(&*previous) : nullptr;
        r = fit_gbm_lccm(ds, spec.classes, spec.structure, e.init, e.seed, spec.em, prev);
      } else {
        const LccmParams* prev = previous ? std::get_if<LccmParams>(&*previous) : nullptr;
        r = fit_lccm(ds, spec.classes, e.init, e.seed, spec.em, prev);
      }
      o.completed = true;
      o.marginal_ll = r.marginal_ll;
      o.joint_ll = r.joint_ll;
      o.iterations = r.iterations;
      o.converged = r.converged;
      results[i] = std::move(r);
    } catch (const std::exception& ex) {
      o.completed = false;
      o.error = ex.what();
    }
  };

  const int workers = std::max(1, std::min<int>(plan.threads, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < count; i = next++) run_one(i);
      });
    for (auto& t : pool) t.join();
  }

  std::optional<std::size_t> best;
  std::vector<double> lls;
  for (std::size_t i = 0; i < count; ++i) {
    if (!outcomes[i].completed) continue;
    const double ll = outcomes[i].marginal_ll;
    lls.push_back(ll);
    if (!best) {
      best = i;
      continue;
    }
    const double b = outcomes[*best].marginal_ll;
    if (ll > b + 1e-9 || (std::abs(ll - b) <= 1e-9 && outcomes[i].seed < outcomes[*best].seed)) best = i;
  }
  if (!best) {
    std::string msg = "all " + std::to_string(count) + " restarts failed";
    if (!outcomes.empty()) msg += " (first error: " + outcomes.front().error + ")";
    throw EstimationError(msg);
  }
  FitResult out = std::move(*results[*best]);
  double mean = 0.0;
  for (double v : lls) mean += v;
  mean /= static_cast<double>(lls.size());
  double var = 0.0;
  for (double v : lls) var += (v - mean) * (v - mean);
  out.ll_variance = var / static_cast<double>(lls.size());
  out.completed_restarts = static_cast<Index>(lls.size());
  out.restarts = std::move(outcomes);
  return out;
}

// ---------------------------------------------------------------------------
// prediction

void check_compatible(const ModelParams& params, const ChoiceDataset& ds) {
  const auto fail = [](const std::string& what) { throw SchemaMismatch("schema mismatch: " + what); };
  std::visit(
      [&](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, MnlParams>) {
          if (p.beta.size() != ds.attr_count) fail("attribute count differs from the model");
        } else {
          if (p.betas.empty() || p.betas.front().beta.size() != ds.attr_count)
            fail("attribute count differs from the model");
          if constexpr (std::is_same_v<T, GbmLccmParams>) {
            if (p.membership.cont_dim() != ds.cont_count) fail("continuous characteristic count differs");
            if (p.membership.bin_dim() != ds.bin_count) fail("binary characteristic count differs");
          } else {
            if (p.classes() > 1 && p.gamma.cols() != 1 + ds.cont_count + ds.bin_count)
              fail("membership covariate count differs");
          }
        }
      },
      params);
}

Prediction predict(const ModelParams& params, const ChoiceDataset& holdout) {
  check_compatible(params, holdout);
  holdout.validate();
  const Context ctx(holdout);
  Prediction out;
  if (const auto* m = std::get_if<MnlParams>(&params)) {
    out.person_ll = person_choice_loglik(ctx.design, m->beta);
    out.total_ll = out.person_ll.sum();
    out.probabilities = situation_probabilities(ctx.design, m->beta);
    out.class_posteriors = Matrix::Ones(ctx.persons(), 1);
    return out;
  }
  Matrix log_post;
  const std::vector<MnlParams>* betas = nullptr;
  if (const auto* g = std::get_if<GbmLccmParams>(&params)) {
    log_post = log_softmax_rows(membership_log_joint_rows(ctx.Sc, ctx.Sd, g->membership));
    betas = &g->betas;
  } else {
    const auto& l = std::get<LccmParams>(params);
    log_post = lccm_logprobs(lccm_membership_design(holdout), l.gamma);
    betas = &l.betas;
  }
  const Matrix joint = log_post + choice_loglik_matrix(ctx.design, *betas);
  out.person_ll = row_lse(joint);
  out.total_ll = out.person_ll.sum();
  out.class_posteriors = log_post.array().exp();
  out.probabilities = Matrix::Zero(ctx.design.situation_count(), holdout.alt_count);
  for (std::size_t k = 0; k < betas->size(); ++k) {
    const Matrix pk = situation_probabilities(ctx.design, (*betas)[k].beta);
    for (Index n = 0; n < ctx.persons(); ++n) {
      const Index s0 = ctx.design.person_begin[static_cast<std::size_t>(n)];
      const Index s1 = ctx.design.person_begin[static_cast<std::size_t>(n) + 1];
      out.probabilities.middleRows(s0, s1 - s0) +=
          out.class_posteriors(n, static_cast<Index>(k)) * pk.middleRows(s0, s1 - s0);
    }
  }
  return out;
}

}  // namespace lccm
