#include "lccm/metrics.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <thread>

namespace lccm {

Index count_params(ModelKind kind, Index K, CovarianceStructure structure, Index P, Index D_c,
                   Index D_d, Index membership_covariates) {
  switch (kind) {
    case ModelKind::Mnl: return P;
    case ModelKind::Lccm: return K * P + (K - 1) * membership_covariates;
    case ModelKind::GbmLccm: break;
  }
  Index cov = 0;
  if (D_c > 0) {
    switch (structure) {
      case CovarianceStructure::Full: cov = K * D_c * (D_c + 1) / 2; break;
      case CovarianceStructure::Tied: cov = D_c * (D_c + 1) / 2; break;
      case CovarianceStructure::Diagonal: cov = K * D_c; break;
      case CovarianceStructure::Spherical: cov = K; break;
    }
  }
  return K * P + (K - 1) + K * D_c + cov + K * D_d;
}

Index count_params(const ModelParams& params) {
  if (const auto* m = std::get_if<MnlParams>(&params)) return m->beta.size();
  if (const auto* l = std::get_if<LccmParams>(&params))
    return count_params(ModelKind::Lccm, l->classes(), CovarianceStructure::Full,
                        l->betas.front().beta.size(), 0, 0, l->gamma.cols());
  const auto& g = std::get<GbmLccmParams>(params);
  return count_params(ModelKind::GbmLccm, g.classes(), g.membership.sigma_c.structure(),
                      g.betas.front().beta.size(), g.membership.cont_dim(), g.membership.bin_dim());
}

InformationCriteria information_criteria(double marginal_ll, Index p, Index n_obs) {
  if (n_obs < 1) throw Error("information criteria need at least one observation");
  const double k = static_cast<double>(p);
  return {-2.0 * marginal_ll + 2.0 * k, -2.0 * marginal_ll + k * std::log(static_cast<double>(n_obs))};
}

double value_of_time(double beta_time, double beta_cost, double cost_unit, double currency_per_dollar) {
  if (beta_cost == 0.0) throw Error("value of time needs a nonzero cost coefficient");
  if (currency_per_dollar == 0.0) throw Error("exchange rate must be nonzero");
  return beta_time / beta_cost * cost_unit / currency_per_dollar;
}

// ---------------------------------------------------------------------------
// cross-validation

namespace {

std::string fixed(double v, int prec = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

// Column label, numbered when the dataset carries no names.
std::string label(const std::vector<std::string>& names, Index i, const char* stem) {
  const auto u = static_cast<std::size_t>(i);
  return u < names.size() ? names[u] : stem + std::to_string(i + 1);
}

}  // namespace

CvReport cross_validate(const ChoiceDataset& ds, const ModelSpec& spec, int k, std::uint64_t seed,
                        const CvOptions& options) {
  return cross_validate(ds, spec, split_folds(ds, k, seed), seed, options);
}

CvReport cross_validate(const ChoiceDataset& ds, const ModelSpec& spec,
                        std::vector<std::vector<Index>> folds, std::uint64_t seed,
                        const CvOptions& options) {
  if (folds.size() < 2) throw DataError("cross-validation needs at least two folds");
  for (const auto& f : folds)
    if (f.empty()) throw DataError("cross-validation fold without persons");

  CvReport rep;
  const std::size_t k = folds.size();
  rep.folds = std::move(folds);
  rep.fold_ll.assign(k, std::nullopt);
  rep.fold_errors.assign(k, "");
  const std::uint64_t plan_seed = derive_seed(seed, 1);

  const auto run_fold = [&](std::size_t f, int restart_threads) {
    try {
      std::vector<Index> train_idx;
      for (std::size_t g = 0; g < k; ++g)
        if (g != f) train_idx.insert(train_idx.end(), rep.folds[g].begin(), rep.folds[g].end());
      std::sort(train_idx.begin(), train_idx.end());
      ChoiceDataset train = ds.subset(train_idx);
      ChoiceDataset holdout = ds.subset(rep.folds[f]);
      if (!options.standardize.empty()) {
        auto [s, record] = standardize(train, options.standardize);
        train = std::move(s);
        holdout = record.apply(holdout);
      }
      RestartPlan plan = restart_grid(spec, plan_seed, options.trials, options.incremental);
      plan.threads = restart_threads;
      const FitResult fit = run_restarts(train, spec, plan);
      rep.fold_ll[f] = predict(fit.params, holdout).total_ll;
    } catch (const std::exception& e) {
      rep.fold_errors[f] = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(options.threads, static_cast<int>(k)));
  if (workers == 1) {
    for (std::size_t f = 0; f < k; ++f) run_fold(f, 1);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < k; f = next++) run_fold(f, 1);
      });
    for (auto& t : pool) t.join();
  }

  double sum = 0.0;
  Index ok = 0;
  for (const auto& v : rep.fold_ll)
    if (v) {
      sum += *v;
      ++ok;
    }
  rep.failed = static_cast<Index>(k) - ok;
  rep.mean_ll = ok > 0 ? sum / static_cast<double>(ok) : std::nan("");
  return rep;
}

std::string CvReport::render() const {
  std::ostringstream out;
  out << "fold  persons  pred_ll\n";
  for (std::size_t f = 0; f < folds.size(); ++f) {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%4zu  %7zu  ", f + 1, folds[f].size());
    out << buf << (fold_ll[f] ? fixed(*fold_ll[f], 4) : "failed: " + fold_errors[f]) << "\n";
  }
  out << "mean  " << fixed(mean_ll, 4) << "\n";
  if (failed > 0) out << "failed folds: " << failed << "\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// class profile

namespace {

ClassProfile build_profile(const Vector& shares, const Matrix& mu_c, const Matrix& mu_d,
                           const StandardizationRecord& record,
                           const std::vector<std::string>& cont_labels,
                           const std::vector<std::string>& bin_labels) {
  if (static_cast<Index>(cont_labels.size()) != mu_c.cols() ||
      static_cast<Index>(bin_labels.size()) != mu_d.cols())
    throw Error("profile labels do not match the characteristic dimensions");
  const Index K = shares.size();
  ClassProfile prof;
  prof.shares = shares;
  for (Index d = 0; d < mu_c.cols(); ++d) {
    ProfileRow row{cont_labels[static_cast<std::size_t>(d)], "", Vector(K)};
    for (Index k = 0; k < K; ++k) row.values[k] = record.invert_value(d, mu_c(k, d));
    prof.rows.push_back(std::move(row));
  }
  for (Index d = 0; d < mu_d.cols(); ++d) {
    const std::string& name = bin_labels[static_cast<std::size_t>(d)];
    prof.rows.push_back({name, "Yes", mu_d.col(d)});
    prof.rows.push_back({name, "No", (1.0 - mu_d.col(d).array()).matrix()});
  }
  return prof;
}

}  // namespace

ClassProfile class_profile(const GbmLccmParams& params, const StandardizationRecord& record,
                           const std::vector<std::string>& cont_labels,
                           const std::vector<std::string>& bin_labels) {
  const auto& m = params.membership;
  return build_profile(m.pi, m.mu_c, m.mu_d, record, cont_labels, bin_labels);
}

ClassProfile class_profile(const LccmParams& params, const ChoiceDataset& ds,
                           const StandardizationRecord& record) {
  const Matrix w = lccm_membership_logprobs(ds, params.gamma).array().exp();
  const Vector mass = w.colwise().sum().transpose();
  const Matrix mu_c = (w.transpose() * ds.continuous_matrix()).array().colwise() / mass.array();
  const Matrix mu_d = (w.transpose() * ds.binary_matrix()).array().colwise() / mass.array();
  std::vector<std::string> cont, bin;
  for (Index d = 0; d < ds.cont_count; ++d) cont.push_back(label(ds.cont_names, d, "c"));
  for (Index d = 0; d < ds.bin_count; ++d) bin.push_back(label(ds.bin_names, d, "b"));
  return build_profile(mass / static_cast<double>(ds.person_count()), mu_c, mu_d, record, cont, bin);
}

std::string ClassProfile::render() const {
  std::size_t wv = 8, wc = 8;
  for (const auto& r : rows) {
    wv = std::max(wv, r.variable.size());
    wc = std::max(wc, r.category.size());
  }
  std::ostringstream out;
  char buf[64];
  const auto label = [&](const std::string& a, const std::string& b) {
    out << a << std::string(wv - a.size() + 2, ' ') << b << std::string(wc - b.size() + 2, ' ');
  };
  label("Variable", "Category");
  for (Index k = 0; k < shares.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%10s", ("Class " + std::to_string(k + 1)).c_str());
    out << buf;
  }
  out << "\n";
  label("share", "");
  for (Index k = 0; k < shares.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%10.3f", shares[k]);
    out << buf;
  }
  out << "\n";
  for (const auto& r : rows) {
    label(r.variable, r.category);
    for (Index k = 0; k < r.values.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%10.3f", r.values[k]);
      out << buf;
    }
    out << "\n";
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// standard errors

namespace {

struct Packed {
  Vector x;
  std::vector<std::string> names;
  void push(double v, std::string name) {
    const Index n = x.size();
    x.conservativeResize(n + 1);
    x[n] = v;
    names.push_back(std::move(name));
  }
};

std::string cls(Index k) { return std::to_string(k + 1); }


void pack_betas(const std::vector<MnlParams>& betas, const ChoiceDataset& ds, Packed& out, bool tag) {
  for (std::size_t k = 0; k < betas.size(); ++k)
    for (Index i = 0; i < betas[k].beta.size(); ++i)
      out.push(betas[k].beta[i], "beta." + (tag ? cls(static_cast<Index>(k)) + "." : std::string()) +
                                     label(ds.attr_names, i, "x"));
}

Index unpack_betas(std::vector<MnlParams>& betas, const Vector& x, Index at) {
  for (auto& b : betas)
    for (Index i = 0; i < b.beta.size(); ++i) b.beta[i] = x[at++];
  return at;
}

Packed pack(const ModelParams& params, const ChoiceDataset& ds) {
  Packed out;
  if (const auto* m = std::get_if<MnlParams>(&params)) {
    pack_betas({*m}, ds, out, false);
    return out;
  }
  if (const auto* l = std::get_if<LccmParams>(&params)) {
    std::vector<std::string> cov{"const"};
    for (Index d = 0; d < ds.cont_count; ++d) cov.push_back(label(ds.cont_names, d, "c"));
    for (Index d = 0; d < ds.bin_count; ++d) cov.push_back(label(ds.bin_names, d, "b"));
    for (Index k = 0; k < l->gamma.rows(); ++k)
      for (Index c = 0; c < l->gamma.cols(); ++c)
        out.push(l->gamma(k, c), "gamma." + cls(k) + "." + cov[static_cast<std::size_t>(c)]);
    pack_betas(l->betas, ds, out, true);
    return out;
  }
  const auto& g = std::get<GbmLccmParams>(params);
  const auto& m = g.membership;
  const Index K = g.classes();
  for (Index k = 0; k + 1 < K; ++k) out.push(m.pi[k], "pi." + cls(k));
  for (Index k = 0; k < K; ++k)
    for (Index d = 0; d < m.cont_dim(); ++d)
      out.push(m.mu_c(k, d), "mu_c." + cls(k) + "." + label(ds.cont_names, d, "c"));
  const auto& blocks = m.sigma_c.blocks();
  const bool tied = m.sigma_c.structure() == CovarianceStructure::Tied;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const Matrix& s = blocks[b];
    const std::string base = tied ? "sigma." : "sigma." + cls(static_cast<Index>(b)) + ".";
    if (s.cols() == s.rows() && s.rows() == m.cont_dim()) {
      for (Index i = 0; i < s.rows(); ++i)
        for (Index j = 0; j <= i; ++j)
          out.push(s(i, j), base + label(ds.cont_names, i, "c") + "." +
                                label(ds.cont_names, j, "c"));
    } else {
      for (Index i = 0; i < s.rows(); ++i)
        out.push(s(i, 0), base + (s.rows() == 1 ? "all" : label(ds.cont_names, i, "c")));
    }
  }
  for (Index k = 0; k < K; ++k)
    for (Index d = 0; d < m.bin_dim(); ++d)
      out.push(m.mu_d(k, d), "mu_d." + cls(k) + "." + label(ds.bin_names, d, "b"));
  pack_betas(g.betas, ds, out, true);
  return out;
}

ModelParams unpack(const Vector& x, const ModelParams& like) {
  if (const auto* m = std::get_if<MnlParams>(&like)) return MnlParams(x.head(m->beta.size()));
  Index at = 0;
  if (const auto* l = std::get_if<LccmParams>(&like)) {
    LccmParams out = *l;
    for (Index k = 0; k < out.gamma.rows(); ++k)
      for (Index c = 0; c < out.gamma.cols(); ++c) out.gamma(k, c) = x[at++];
    unpack_betas(out.betas, x, at);
    return out;
  }
  GbmLccmParams out = std::get<GbmLccmParams>(like);
  auto& m = out.membership;
  const Index K = out.classes();
  for (Index k = 0; k + 1 < K; ++k) m.pi[k] = x[at++];
  m.pi[K - 1] = 1.0 - m.pi.head(K - 1).sum();
  for (Index k = 0; k < K; ++k)
    for (Index d = 0; d < m.cont_dim(); ++d) m.mu_c(k, d) = x[at++];
  std::vector<Matrix> blocks = m.sigma_c.blocks();
  for (Matrix& s : blocks) {
    if (s.cols() == s.rows() && s.rows() == m.cont_dim()) {
      for (Index i = 0; i < s.rows(); ++i)
        for (Index j = 0; j <= i; ++j) s(i, j) = s(j, i) = x[at++];
    } else {
      for (Index i = 0; i < s.rows(); ++i) s(i, 0) = x[at++];
    }
  }
  m.sigma_c = Covariances(m.sigma_c.structure(), K, m.cont_dim(), std::move(blocks));
  for (Index k = 0; k < K; ++k)
    for (Index d = 0; d < m.bin_dim(); ++d) m.mu_d(k, d) = x[at++];
  unpack_betas(out.betas, x, at);
  return out;
}

double objective(const ChoiceDataset& ds, const ModelParams& p) {
  if (const auto* m = std::get_if<MnlParams>(&p))
    return weighted_panel_loglik(ds, *m, Vector::Ones(ds.person_count())).value;
  if (const auto* l = std::get_if<LccmParams>(&p)) return marginal_loglik(ds, *l);
  return joint_loglik(ds, std::get<GbmLccmParams>(p));
}

}  // namespace

std::vector<ParameterEstimate> standard_errors(const ChoiceDataset& ds, const ModelParams& params,
                                               double relative_step) {
  check_compatible(params, ds);
  const Packed packed = pack(params, ds);
  const Vector& x0 = packed.x;
  const Index n = x0.size();
  Vector h(n);
  for (Index i = 0; i < n; ++i) h[i] = relative_step * std::max(1.0, std::abs(x0[i]));
  const auto f = [&](const Vector& x) { return objective(ds, unpack(x, params)); };

  const double f0 = f(x0);
  Matrix H(n, n);
  for (Index i = 0; i < n; ++i) {
    Vector x = x0;
    x[i] = x0[i] + h[i];
    const double fp = f(x);
    x[i] = x0[i] - h[i];
    const double fm = f(x);
    H(i, i) = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
    for (Index j = 0; j < i; ++j) {
      double acc = 0.0;
      for (int si : {1, -1})
        for (int sj : {1, -1}) {
          Vector y = x0;
          y[i] += si * h[i];
          y[j] += sj * h[j];
          acc += si * sj * f(y);
        }
      H(i, j) = H(j, i) = acc / (4.0 * h[i] * h[j]);
    }
  }
  if (!H.allFinite()) throw Error("non-finite Hessian entries");

  // Information = -H. Directions with (near) zero or negative curvature are
  // not identified; parameters loading on them get no standard error.
  Eigen::SelfAdjointEigenSolver<Matrix> eig(-H);
  const Vector& lambda = eig.eigenvalues();
  const Matrix& V = eig.eigenvectors();
  const double top = n > 0 ? lambda.cwiseAbs().maxCoeff() : 0.0;
  Matrix cov = Matrix::Zero(n, n);
  Vector null_load = Vector::Zero(n);
  for (Index c = 0; c < n; ++c) {
    if (lambda[c] > 1e-6 * top)
      cov.noalias() += V.col(c) * V.col(c).transpose() / lambda[c];
    else
      null_load += V.col(c).cwiseAbs2();
  }
  std::vector<ParameterEstimate> out;
  for (Index i = 0; i < n; ++i) {
    ParameterEstimate e{packed.names[static_cast<std::size_t>(i)], x0[i], std::nullopt, std::nullopt};
    if (null_load[i] < 1e-4 && cov(i, i) > 0.0) {
      e.se = std::sqrt(cov(i, i));
      e.p_value = std::erfc(std::abs(x0[i] / *e.se) / std::sqrt(2.0));
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::string render_estimates(const std::vector<ParameterEstimate>& estimates) {
  std::size_t w = 9;
  for (const auto& e : estimates) w = std::max(w, e.name.size());
  std::ostringstream out;
  char buf[128];
  out << "parameter" << std::string(w - 9 + 2, ' ');
  std::snprintf(buf, sizeof buf, "%12s %12s %10s\n", "estimate", "std.err", "p-value");
  out << buf;
  for (const auto& e : estimates) {
    out << e.name << std::string(w - e.name.size() + 2, ' ');
    if (e.se)
      std::snprintf(buf, sizeof buf, "%12.4f %12.4f %10.4f\n", e.value, *e.se, *e.p_value);
    else
      std::snprintf(buf, sizeof buf, "%12.4f %12s %10s\n", e.value, "n/a", "n/a");
    out << buf;
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// summary

ModelSummary summarize(const FitResult& fit, Index n_obs) {
  ModelSummary s;
  s.model = to_string(fit.kind());
  s.classes = model_classes(fit.params);
  if (const auto* g = std::get_if<GbmLccmParams>(&fit.params))
    s.structure = to_string(g->membership.sigma_c.structure());
  s.params = count_params(fit.params);
  s.joint_ll = fit.joint_ll;
  s.marginal_ll = fit.marginal_ll;
  const auto ic = information_criteria(fit.marginal_ll, s.params, n_obs);
  s.aic = ic.aic;
  s.bic = ic.bic;
  s.ll_variance = fit.ll_variance;
  s.completed_restarts = fit.completed_restarts;
  s.restarts = static_cast<Index>(fit.restarts.size());
  s.n_obs = n_obs;
  std::vector<std::string> notes;
  if (s.completed_restarts < s.restarts)
    notes.push_back(std::to_string(s.restarts - s.completed_restarts) + " restarts failed");
  if (!fit.converged) notes.push_back("not converged");
  for (const auto& w : fit.warnings)
    if (w.find("separation") != std::string::npos) {
      notes.push_back("possible separation");
      break;
    }
  for (std::size_t i = 0; i < notes.size(); ++i) s.notes += (i ? "; " : "") + notes[i];
  return s;
}

void ModelSummary::to_kv(KeyValueFile& kv, const std::string& prefix) const {
  kv.set(prefix + "model", model);
  kv.set(prefix + "classes", std::to_string(classes));
  if (!structure.empty()) kv.set(prefix + "structure", structure);
  kv.set(prefix + "params", std::to_string(params));
  if (joint_ll) kv.set(prefix + "joint_ll", format_double(*joint_ll));
  kv.set(prefix + "marginal_ll", format_double(marginal_ll));
  kv.set(prefix + "aic", format_double(aic));
  kv.set(prefix + "bic", format_double(bic));
  if (pred_ll) kv.set(prefix + "pred_ll", format_double(*pred_ll));
  kv.set(prefix + "ll_variance", format_double(ll_variance));
  kv.set(prefix + "completed_restarts", std::to_string(completed_restarts));
  kv.set(prefix + "restarts", std::to_string(restarts));
  kv.set(prefix + "n_obs", std::to_string(n_obs));
  kv.set(prefix + "notes", notes);
}

std::string render_summary(const std::vector<ModelSummary>& rows) {
  std::vector<std::vector<std::string>> cells{
      {"Model", "K", "Structure", "p", "Joint LL", "LL", "Variance", "AIC", "BIC", "Pred LL", "Notes"}};
  for (const auto& r : rows)
    cells.push_back({r.model, std::to_string(r.classes), r.structure.empty() ? "-" : r.structure,
                     std::to_string(r.params), r.joint_ll ? fixed(*r.joint_ll) : "-", fixed(r.marginal_ll),
                     fixed(r.ll_variance, 4), fixed(r.aic), fixed(r.bic), r.pred_ll ? fixed(*r.pred_ll) : "-",
                     r.notes});
  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream out;
  for (const auto& row : cells) {
    std::string line;
    for (std::size_t c = 0; c < row.size(); ++c) {
      const std::size_t pad = width[c] - row[c].size();
      // text columns left-aligned, numbers right-aligned
      if (c == 0 || c == 2 || c + 1 == row.size()) line += row[c] + std::string(pad, ' ');
      else line += std::string(pad, ' ') + row[c];
      if (c + 1 < row.size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  return out.str();
}

}  // namespace lccm
