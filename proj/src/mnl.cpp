#include "lccm/mnl.hpp"

#include <cmath>

namespace lccm {

PanelDesign::PanelDesign(const ChoiceDataset& ds) : alt_count(ds.alt_count) {
  const Index S = ds.situation_count();
  const Index J = ds.alt_count;
  X.resize(S * J, ds.attr_count);
  available.resize(S * J);
  chosen.reserve(static_cast<std::size_t>(S));
  person_begin.reserve(ds.persons.size() + 1);
  Index s = 0;
  for (const auto& p : ds.persons) {
    person_begin.push_back(s);
    for (const auto& sit : p.situations) {
      X.middleRows(s * J, J) = sit.attrs;
      available.segment(s * J, J) = sit.available;
      chosen.push_back(s * J + sit.chosen);
      ++s;
    }
  }
  person_begin.push_back(s);
}

Vector choice_log_probs(const ChoiceSituation& situation, const MnlParams& params) {
  Vector u = situation.attrs * params.beta;
  for (Index j = 0; j < u.size(); ++j)
    if (!situation.available[j]) u[j] = kNegInf;
  return log_softmax(u);
}

namespace {

// Masked log-sum-exp over one situation's utility block.
inline double block_lse(const double* u, const bool* avail, Index J) {
  double m = kNegInf;
  for (Index j = 0; j < J; ++j)
    if (avail[j] && u[j] > m) m = u[j];
  double acc = 0.0;
  for (Index j = 0; j < J; ++j)
    if (avail[j]) acc += std::exp(u[j] - m);
  return m + std::log(acc);
}

void check_utilities(const Vector& u) {
  if (!u.allFinite()) throw Error("non-finite utility");
}

}  // namespace

LogLikGrad weighted_panel_loglik(const PanelDesign& d, const Vector& beta,
                                 const Eigen::Ref<const Vector>& weights) {
  if (weights.size() != d.person_count()) throw Error("weights length must equal person count");
  if (beta.size() != d.attr_count()) throw Error("coefficient length must equal attribute count");
  const Index J = d.alt_count;
  const Vector u = d.X * beta;
  check_utilities(u);
  Vector resid = Vector::Zero(u.size());
  double ll = 0.0;
  for (Index n = 0; n < d.person_count(); ++n) {
    const double w = weights[n];
    if (w == 0.0) continue;
    for (Index s = d.person_begin[n]; s < d.person_begin[n + 1]; ++s) {
      const Index r0 = s * J;
      const double lse = block_lse(u.data() + r0, d.available.data() + r0, J);
      const Index c = d.chosen[static_cast<std::size_t>(s)];
      ll += w * (u[c] - lse);
      for (Index j = 0; j < J; ++j)
        if (d.available[r0 + j]) resid[r0 + j] = -w * std::exp(u[r0 + j] - lse);
      resid[c] += w;
    }
  }
  return {ll, d.X.transpose() * resid};
}

LogLikGrad weighted_panel_loglik(const ChoiceDataset& ds, const MnlParams& params,
                                 const Eigen::Ref<const Vector>& weights) {
  return weighted_panel_loglik(PanelDesign(ds), params.beta, weights);
}

Vector person_choice_loglik(const PanelDesign& d, const Vector& beta) {
  const Index J = d.alt_count;
  const Vector u = d.X * beta;
  check_utilities(u);
  Vector out(d.person_count());
  for (Index n = 0; n < d.person_count(); ++n) {
    double ll = 0.0;
    for (Index s = d.person_begin[n]; s < d.person_begin[n + 1]; ++s) {
      const Index r0 = s * J;
      ll += u[d.chosen[static_cast<std::size_t>(s)]] -
            block_lse(u.data() + r0, d.available.data() + r0, J);
    }
    out[n] = ll;
  }
  return out;
}

Matrix situation_probabilities(const PanelDesign& d, const Vector& beta) {
  const Index J = d.alt_count;
  const Vector u = d.X * beta;
  check_utilities(u);
  Matrix out = Matrix::Zero(d.situation_count(), J);
  for (Index s = 0; s < d.situation_count(); ++s) {
    const Index r0 = s * J;
    const double lse = block_lse(u.data() + r0, d.available.data() + r0, J);
    for (Index j = 0; j < J; ++j)
      if (d.available[r0 + j]) out(s, j) = std::exp(u[r0 + j] - lse);
  }
  return out;
}

MnlFit fit_weighted_mnl(const PanelDesign& design, const Eigen::Ref<const Vector>& weights,
                        const MnlParams& beta0, const BfgsOptions& options) {
  if (weights.size() != design.person_count())
    throw Error("weights length must equal person count");
  if ((weights.array() < 0.0).any() || !(weights.array() > 0.0).any())
    throw Error("weights must be non-negative with at least one positive entry");
  const Vector w = weights;
  const Objective obj = [&design, &w](const Vector& b, Vector& g) {
    LogLikGrad r = weighted_panel_loglik(design, b, w);
    g = std::move(r.gradient);
    return r.value;
  };
  MnlFit fit;
  fit.optim = bfgs_maximize(obj, beta0.beta, options);
  fit.params = MnlParams(fit.optim.x_star);
  fit.loglik = fit.optim.f_star;
  if (!fit.optim.converged)
    fit.warnings.push_back("optimizer stopped at max_iter without meeting the gradient tolerance");
  // The optimizer stops on the gradient tolerance long before a diverging
  // coefficient reaches the threshold, so a perfect fit also counts.
  const Vector person_ll = person_choice_loglik(design, fit.params.beta);
  bool perfect = true;
  for (Index n = 0; n < person_ll.size() && perfect; ++n)
    if (w[n] > 0.0 && person_ll[n] < -kPerfectFitTolerance) perfect = false;
  if ((fit.params.beta.size() > 0 &&
       fit.params.beta.cwiseAbs().maxCoeff() > kSeparationThreshold) ||
      perfect)
    fit.warnings.push_back("coefficient magnitude above " +
                           std::to_string(static_cast<int>(kSeparationThreshold)) +
                           " or perfectly predicted choices: possible complete separation");
  return fit;
}

MnlFit fit_weighted_mnl(const ChoiceDataset& ds, const Eigen::Ref<const Vector>& weights,
                        const MnlParams& beta0, const BfgsOptions& options) {
  return fit_weighted_mnl(PanelDesign(ds), weights, beta0, options);
}

MnlFit fit_mnl(const ChoiceDataset& ds, const BfgsOptions& options) {
  const PanelDesign design(ds);
  MnlFit fit = fit_weighted_mnl(design, Vector::Ones(design.person_count()),
                                MnlParams::zeros(ds.attr_count), options);
  if (auto w = identification_warning(design); !w.empty()) fit.warnings.push_back(w);
  return fit;
}

std::string identification_warning(const PanelDesign& d) {
  const Index P = d.attr_count();
  const Index J = d.alt_count;
  Matrix gram = Matrix::Zero(P, P);
  for (Index s = 0; s < d.situation_count(); ++s) {
    const Index c = d.chosen[static_cast<std::size_t>(s)];
    for (Index j = 0; j < J; ++j) {
      const Index r = s * J + j;
      if (r == c || !d.available[r]) continue;
      const RowVector diff = d.X.row(r) - d.X.row(c);
      gram.noalias() += diff.transpose() * diff;
    }
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double top = eig.eigenvalues().cwiseAbs().maxCoeff();
  const double tol = 1e-10 * std::max(top, 1e-300);
  Index rank = 0;
  for (Index i = 0; i < P; ++i)
    if (eig.eigenvalues()[i] > tol) ++rank;
  if (rank < P)
    return "attribute matrix has rank " + std::to_string(rank) + " < " + std::to_string(P) +
           " coefficients: some coefficients are not identified";
  return {};
}

}  // namespace lccm
