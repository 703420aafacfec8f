#pragma once

// Model selection and interpretation: parameter counts, AIC/BIC, value of
// time, k-fold cross-validation, class profiles and standard errors.

#include "lccm/data.hpp"
#include "lccm/em.hpp"
#include "lccm/kv.hpp"

#include <optional>
#include <string>
#include <vector>

namespace lccm {

/// Free parameters. GBM-LCCM: K*P + (K-1) + K*D_c + cov(structure) + K*D_d.
/// LCCM: K*P + (K-1)*membership_covariates. MNL: P.
Index count_params(ModelKind kind, Index K, CovarianceStructure structure, Index P, Index D_c,
                   Index D_d, Index membership_covariates = 0);
Index count_params(const ModelParams& params);

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
};

/// n_obs is the number of choice situations.
InformationCriteria information_criteria(double marginal_ll, Index p, Index n_obs);

/// (beta_time / beta_cost) * cost_unit / currency_per_dollar.
double value_of_time(double beta_time, double beta_cost, double cost_unit, double currency_per_dollar);

// -- cross-validation -------------------------------------------------------

struct CvOptions {
  int trials = 5;
  bool incremental = true;
  int threads = 1;
  std::vector<Index> standardize;  // continuous columns, re-standardized per training split
};

struct CvReport {
  std::vector<std::vector<Index>> folds;
  std::vector<std::optional<double>> fold_ll;  // predictive LL of each held-out fold
  std::vector<std::string> fold_errors;
  double mean_ll = 0.0;  // over the folds that succeeded
  Index failed = 0;

  std::string render() const;
};

/// Every fold is fit with the full restart plan (seeded identically across
/// folds) on the remaining folds and scored with predict().
CvReport cross_validate(const ChoiceDataset& ds, const ModelSpec& spec, int k, std::uint64_t seed,
                        const CvOptions& options = {});
CvReport cross_validate(const ChoiceDataset& ds, const ModelSpec& spec,
                        std::vector<std::vector<Index>> folds, std::uint64_t seed,
                        const CvOptions& options = {});

// -- class profile ----------------------------------------------------------

struct ProfileRow {
  std::string variable;
  std::string category;  // empty for continuous variables
  Vector values;         // one per class
};

struct ClassProfile {
  Vector shares;  // pi_k, or mean membership probability for the LCCM
  std::vector<ProfileRow> rows;

  std::string render() const;
};

/// Continuous means de-standardized through `record`; each binary variable
/// becomes a "Yes" row (its mean) and a "No" row (the complement).
ClassProfile class_profile(const GbmLccmParams& params, const StandardizationRecord& record,
                           const std::vector<std::string>& cont_labels,
                           const std::vector<std::string>& bin_labels);

/// LCCM analogue: membership-probability-weighted characteristic means over `ds`.
ClassProfile class_profile(const LccmParams& params, const ChoiceDataset& ds,
                           const StandardizationRecord& record);

// -- standard errors --------------------------------------------------------

struct ParameterEstimate {
  std::string name;
  double value = 0.0;
  std::optional<double> se;       // empty when the Hessian is singular along this parameter
  std::optional<double> p_value;  // two-sided, normal approximation
};

/// Central finite-difference Hessian of the estimation objective at the
/// fitted parameters: the marginal LL for MNL and LCCM, the joint LL for
/// GBM-LCCM (the function EM maximizes). The mixing coefficients enter as
/// pi_1..pi_{K-1} and covariances through their free elements.
std::vector<ParameterEstimate> standard_errors(const ChoiceDataset& ds, const ModelParams& params,
                                               double relative_step = 1e-4);

std::string render_estimates(const std::vector<ParameterEstimate>& estimates);

// -- summary ----------------------------------------------------------------

struct ModelSummary {
  std::string model;
  Index classes = 1;
  std::string structure;  // empty unless GBM-LCCM
  Index params = 0;
  std::optional<double> joint_ll;
  double marginal_ll = 0.0;
  double aic = 0.0;
  double bic = 0.0;
  std::optional<double> pred_ll;
  double ll_variance = 0.0;
  Index completed_restarts = 0;
  Index restarts = 0;
  Index n_obs = 0;
  std::string notes;

  void to_kv(KeyValueFile& kv, const std::string& prefix = "") const;
};

ModelSummary summarize(const FitResult& fit, Index n_obs);

/// One aligned row per model: Model, K, Structure, p, Joint LL, LL,
/// Variance, AIC, BIC, Pred LL, Notes.
std::string render_summary(const std::vector<ModelSummary>& rows);

}  // namespace lccm
