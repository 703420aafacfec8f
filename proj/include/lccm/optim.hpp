#pragma once

// Quasi-Newton (BFGS) maximization with a strong-Wolfe line search.

#include "lccm/linalg.hpp"

#include <functional>
#include <string>

namespace lccm {

/// Objective returning f(x) and writing the gradient into `grad` (already
/// sized like x).
using Objective = std::function<double(const Vector& x, Vector& grad)>;

struct BfgsOptions {
  double grad_tol = 1e-6;  // on the infinity norm of the gradient
  int max_iter = 200;
  double initial_step = 1.0;
  double c1 = 1e-4;  // sufficient increase
  double c2 = 0.9;   // curvature
  int max_line_search = 40;
  double curvature_skip = 1e-10;  // skip updates when s'y <= this * |s| |y|
};

struct OptimResult {
  Vector x_star;
  double f_star = 0.0;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<double> f_trace;  // objective after every accepted step, f(x0) first
};

/// Raised on non-finite evaluations or line-search breakdown. `point` is the
/// offending (or last good) iterate.
class OptimError : public Error {
public:
  OptimError(const std::string& what, Vector point, int iteration)
      : Error(what), point_(std::move(point)), iteration_(iteration) {}
  const Vector& point() const { return point_; }
  int iteration() const { return iteration_; }

private:
  Vector point_;
  int iteration_;
};

struct LineSearchResult {
  double step = 0.0;  // 0 when no acceptable point was found
  Vector x;
  double f = 0.0;
  Vector grad;
  bool strong_wolfe = false;
  int evaluations = 0;
};

/// Step along the ascent direction p from x (objective f0, gradient g0) meeting
/// the strong Wolfe conditions; within roundoff of f0 the approximate Wolfe
/// conditions are accepted instead.
LineSearchResult line_search(const Objective& objective, const Vector& x, const Vector& p, double f0,
                             const Vector& g0, const BfgsOptions& options = {});

OptimResult bfgs_maximize(const Objective& objective, const Vector& x0,
                          const BfgsOptions& options = {});

/// Max over coordinates of |g_analytic - g_fd| / max(1, |g_fd|) using central
/// differences with the given step.
double check_gradient(const Objective& objective, const Vector& x, double step = 1e-5);

}  // namespace lccm
