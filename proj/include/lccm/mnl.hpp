#pragma once

// Multinomial logit over the alternatives of each choice situation.

#include "lccm/data.hpp"
#include "lccm/optim.hpp"

#include <string>
#include <vector>

namespace lccm {

struct MnlParams {
  Vector beta;  // P

  MnlParams() = default;
  explicit MnlParams(Vector b) : beta(std::move(b)) {}
  static MnlParams zeros(Index p) { return MnlParams(Vector::Zero(p)); }
  bool operator==(const MnlParams& o) const {
    return beta.size() == o.beta.size() && beta == o.beta;
  }
};

/// Every situation of a dataset stacked into one (S*J) x P design matrix, so
/// utilities for all situations are one matrix-vector product.
struct PanelDesign {
  Matrix X;                            // (S*J) x P
  BoolArray available;                 // S*J
  std::vector<Index> chosen;           // S, absolute row of the chosen alternative
  std::vector<Index> person_begin;     // N+1 offsets into situations
  Index alt_count = 0;

  explicit PanelDesign(const ChoiceDataset& ds);

  Index person_count() const { return static_cast<Index>(person_begin.size()) - 1; }
  Index situation_count() const { return static_cast<Index>(chosen.size()); }
  Index attr_count() const { return X.cols(); }
};

/// Log choice probabilities over the J alternatives; unavailable entries are -inf.
Vector choice_log_probs(const ChoiceSituation& situation, const MnlParams& params);

struct LogLikGrad {
  double value = 0.0;
  Vector gradient;
};

/// sum_n w_n sum_t log P(chosen | beta) and its analytic gradient.
LogLikGrad weighted_panel_loglik(const PanelDesign& design, const Vector& beta,
                                 const Eigen::Ref<const Vector>& weights);
LogLikGrad weighted_panel_loglik(const ChoiceDataset& ds, const MnlParams& params,
                                 const Eigen::Ref<const Vector>& weights);

/// Per-person panel log-likelihood sum_t log P(chosen | beta), length N.
Vector person_choice_loglik(const PanelDesign& design, const Vector& beta);

/// Choice probabilities for every situation, S x J (zero where unavailable).
Matrix situation_probabilities(const PanelDesign& design, const Vector& beta);

struct MnlFit {
  MnlParams params;
  double loglik = 0.0;
  OptimResult optim;
  std::vector<std::string> warnings;
};

/// Weighted maximum likelihood via BFGS, started from beta0.
MnlFit fit_weighted_mnl(const PanelDesign& design, const Eigen::Ref<const Vector>& weights,
                        const MnlParams& beta0, const BfgsOptions& options = {});
MnlFit fit_weighted_mnl(const ChoiceDataset& ds, const Eigen::Ref<const Vector>& weights,
                        const MnlParams& beta0, const BfgsOptions& options = {});

/// Unit-weight MNL started at beta = 0.
MnlFit fit_mnl(const ChoiceDataset& ds, const BfgsOptions& options = {});

/// Non-empty when the attribute differences against the chosen alternative do
/// not have full column rank (e.g. a full set of alternative constants).
std::string identification_warning(const PanelDesign& design);

inline constexpr double kSeparationThreshold = 50.0;
/// Every chosen alternative predicted with log-probability above -this.
inline constexpr double kPerfectFitTolerance = 1e-6;

}  // namespace lccm
