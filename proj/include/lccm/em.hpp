#pragma once

// EM estimation of the Gaussian-Bernoulli mixture latent class choice model
// (GBM-LCCM) and of the traditional logit-membership LCCM, the restart
// protocol, and out-of-sample prediction.

#include "lccm/data.hpp"
#include "lccm/mixture.hpp"
#include "lccm/mnl.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lccm {

struct GbmLccmParams {
  GbmMembershipParams membership;
  std::vector<MnlParams> betas;  // K

  Index classes() const { return membership.classes(); }
  void validate() const;
  GbmLccmParams permuted(const std::vector<Index>& perm) const;
  bool operator==(const GbmLccmParams&) const = default;
};

/// Logit class membership: utilities Z_n gamma_k with Z_n = [1, S_cn, S_dn];
/// the last class is the reference with gamma fixed to zero.
struct LccmParams {
  Matrix gamma;                  // (K-1) x (1 + D_c + D_d)
  std::vector<MnlParams> betas;  // K

  Index classes() const { return static_cast<Index>(betas.size()); }
  void validate() const;
  bool operator==(const LccmParams& o) const {
    return gamma.rows() == o.gamma.rows() && gamma.cols() == o.gamma.cols() &&
           gamma == o.gamma && betas == o.betas;
  }
};

using Responsibilities = Matrix;  // N x K, rows sum to one

enum class ModelKind { Mnl, Lccm, GbmLccm };
std::string to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);

using ModelParams = std::variant<MnlParams, LccmParams, GbmLccmParams>;
ModelKind model_kind(const ModelParams& params);
Index model_classes(const ModelParams& params);

enum class MembershipInit { Zero, Random, KMeans, Incremental };
enum class ChoiceInit { Zero, Random };

struct InitStrategy {
  MembershipInit membership = MembershipInit::KMeans;
  ChoiceInit choice = ChoiceInit::Zero;
  bool operator==(const InitStrategy&) const = default;
};
std::string to_string(const InitStrategy& init);
InitStrategy parse_init(std::string_view text);

struct EmOptions {
  double tol = 1e-7;  // relative change of the monitored log-likelihood
  int max_iter = 500;
  double empty_class_fraction = 1e-6;  // class mass below this * N fails the fit
  BfgsOptions bfgs;
};

struct RestartOutcome {
  std::uint64_t seed = 0;
  InitStrategy init;
  bool completed = false;
  double marginal_ll = 0.0;
  std::optional<double> joint_ll;
  int iterations = 0;
  bool converged = false;
  std::string error;
};

struct FitResult {
  ModelParams params;
  std::optional<double> joint_ll;  // GBM-LCCM only
  double marginal_ll = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> ll_trace;  // monitored LL at the start and after every iteration
  std::vector<double> iteration_seconds;
  std::uint64_t seed = 0;
  InitStrategy init;
  std::vector<RestartOutcome> restarts;
  double ll_variance = 0.0;
  Index completed_restarts = 0;
  std::vector<std::string> warnings;

  ModelKind kind() const { return model_kind(params); }
};

/// Every restart failed, or a fit could not be carried out.
class EstimationError : public Error {
public:
  using Error::Error;
};

/// Holdout schema does not match the fitted model.
class SchemaMismatch : public Error {
public:
  using Error::Error;
};

// -- likelihood building blocks ---------------------------------------------

/// N x K matrix of sum_t log P(y_nt | beta_k).
Matrix choice_loglik_matrix(const PanelDesign& design, const std::vector<MnlParams>& betas);

/// N x K matrix of log pi_k + log N(S_cn) + log Bernoulli(S_dn) + choice terms.
Matrix gbm_log_joint_matrix(const ChoiceDataset& ds, const GbmLccmParams& params);

/// N x K class-membership log-probabilities of the LCCM logit.
Matrix lccm_membership_logprobs(const ChoiceDataset& ds, const Matrix& gamma);
/// Membership design Z = [1, S_c, S_d], N x (1 + D_c + D_d).
Matrix lccm_membership_design(const ChoiceDataset& ds);

// -- GBM-LCCM ---------------------------------------------------------------

/// Posterior class probabilities given characteristics and choices.
Responsibilities estep_gbm(const ChoiceDataset& ds, const GbmLccmParams& params);

/// Closed-form membership updates plus warm-started weighted-logit fits.
GbmLccmParams mstep_gbm(const ChoiceDataset& ds, const Responsibilities& resp,
                        CovarianceStructure structure, const GbmLccmParams& prev,
                        const EmOptions& options = {});

/// log P(S_c, S_d, y) summed over persons.
double joint_loglik(const ChoiceDataset& ds, const GbmLccmParams& params);
/// sum_n log sum_k P(k | S_n) P(y_n | beta_k), with P(k | S_n) the
/// characteristics-only posterior.
double marginal_loglik(const ChoiceDataset& ds, const GbmLccmParams& params);

/// Initial parameters for one restart.
GbmLccmParams init_gbm_params(const ChoiceDataset& ds, Index K, CovarianceStructure structure,
                              const InitStrategy& init, std::uint64_t seed,
                              const GbmLccmParams* previous = nullptr);

FitResult fit_gbm_lccm(const ChoiceDataset& ds, Index K, CovarianceStructure structure,
                       const InitStrategy& init, std::uint64_t seed, const EmOptions& options = {},
                       const GbmLccmParams* previous = nullptr);
/// EM from explicit starting parameters.
FitResult fit_gbm_lccm_from(const ChoiceDataset& ds, CovarianceStructure structure,
                            GbmLccmParams start, const EmOptions& options = {});

// -- traditional LCCM -------------------------------------------------------

/// sum_n log sum_k P(k | S_n, gamma) P(y_n | beta_k).
double marginal_loglik(const ChoiceDataset& ds, const LccmParams& params);
Responsibilities estep_lccm(const ChoiceDataset& ds, const LccmParams& params);

LccmParams init_lccm_params(const ChoiceDataset& ds, Index K, const InitStrategy& init,
                            std::uint64_t seed, const LccmParams* previous = nullptr);

FitResult fit_lccm(const ChoiceDataset& ds, Index K, const InitStrategy& init, std::uint64_t seed,
                   const EmOptions& options = {}, const LccmParams* previous = nullptr);
FitResult fit_lccm_from(const ChoiceDataset& ds, LccmParams start, const EmOptions& options = {});

// -- restarts ---------------------------------------------------------------

struct ModelSpec {
  ModelKind kind = ModelKind::GbmLccm;
  Index classes = 2;
  CovarianceStructure structure = CovarianceStructure::Full;
  EmOptions em;
};

struct RestartSpec {
  InitStrategy init;
  std::uint64_t seed = 0;
};

struct RestartPlan {
  std::vector<RestartSpec> entries;
  /// K-1 solution for incremental entries. When absent and the plan contains
  /// incremental entries, run_restarts estimates it first with the same
  /// protocol.
  std::optional<ModelParams> previous;
  int trials = 5;
  std::uint64_t seed = 0;
  int threads = 1;
};

/// The initialization grid: GBM-LCCM uses {random, k-means} membership x
/// {zero, random} choice starts plus incremental starts, `trials` each;
/// LCCM uses (0,0) once and {0,random} x {0,random} otherwise plus
/// incremental. K = 1 collapses to a single start (all strategies coincide).
RestartPlan restart_grid(const ModelSpec& spec, std::uint64_t seed, int trials = 5,
                        bool incremental = true);

/// Runs every restart (concurrently up to plan.threads) and returns the one
/// with the highest marginal LL, ties broken by the lower seed. The result
/// carries every restart outcome and the population variance of the
/// completed restarts' marginal LL.
FitResult run_restarts(const ChoiceDataset& ds, const ModelSpec& spec, const RestartPlan& plan);

/// Plain MNL wrapped as a FitResult.
FitResult fit_mnl_result(const ChoiceDataset& ds, const BfgsOptions& options = {});

// -- prediction -------------------------------------------------------------

struct Prediction {
  double total_ll = 0.0;     // marginal log-likelihood of the holdout
  Vector person_ll;          // per person
  Matrix probabilities;      // situations x J, posterior-weighted logits
  Matrix class_posteriors;   // N x K, characteristics-only
};

Prediction predict(const ModelParams& params, const ChoiceDataset& holdout);

/// Throws SchemaMismatch if the dataset dimensions disagree with the model.
void check_compatible(const ModelParams& params, const ChoiceDataset& ds);

}  // namespace lccm
