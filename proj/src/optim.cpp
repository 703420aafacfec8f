#include "lccm/optim.hpp"

#include <algorithm>
#include <cmath>

namespace lccm {

namespace {

constexpr double kRoundoff = 1e-13;

// Line search on h(a) = -f(x + a p), i.e. a minimization along an ascent
// direction of f.
struct TrialPoint {
  double a = 0.0;
  double h = 0.0;
  double dh = 0.0;
  Vector x;
  Vector g;  // gradient of f (not h)
  bool finite() const { return std::isfinite(h) && std::isfinite(dh); }
};

class LineSearch {
public:
  LineSearch(const Objective& obj, const BfgsOptions& opt, const Vector& x, const Vector& p,
             double f0, double df0)
      : obj_(obj), opt_(opt), x_(x), p_(p), h0_(-f0), dh0_(-df0) {}

  // Returns the accepted point; `strong_wolfe` reports whether both
  // conditions hold. Returns a point with a == 0 on failure.
  TrialPoint run(double a_init, bool& strong_wolfe) {
    strong_wolfe = false;
    TrialPoint prev{0.0, h0_, dh0_, x_, Vector()};
    double a = a_init;
    for (int i = 0; i < opt_.max_line_search; ++i) {
      TrialPoint cur = eval(a);
      if (approximate_wolfe(cur)) return cur;
      if (!cur.finite() || cur.h > h0_ + opt_.c1 * a * dh0_ || (i > 0 && cur.h >= prev.h))
        return zoom(prev, cur, strong_wolfe);
      if (std::abs(cur.dh) <= -opt_.c2 * dh0_) {
        strong_wolfe = true;
        return cur;
      }
      if (cur.dh >= 0.0) return zoom(cur, prev, strong_wolfe);
      prev = std::move(cur);
      a *= 2.0;
    }
    // Objective keeps increasing along p; accept the furthest point.
    return prev;
  }

  int evaluations() const { return evals_; }

  // One cubic-interpolation step through (0, h0) and the accepted point; kept
  // only if it lowers h and still meets the strong Wolfe conditions. Exact on
  // quadratics, which gives BFGS its finite termination there.
  TrialPoint refine(TrialPoint t) {
    const double a = t.a;
    const double d1 = dh0_ + t.dh - 3.0 * (h0_ - t.h) / (0.0 - a);
    const double disc = d1 * d1 - dh0_ * t.dh;
    if (!(disc >= 0.0)) return t;
    const double d2 = std::sqrt(disc);
    const double cand = a - a * (t.dh + d2 - d1) / (t.dh - dh0_ + 2.0 * d2);
    if (!std::isfinite(cand) || cand <= 0.0 || cand > 10.0 * a || std::abs(cand - a) <= 1e-12 * a) return t;
    TrialPoint c = eval(cand);
    if (c.finite() && c.h < t.h && c.h <= h0_ + opt_.c1 * cand * dh0_ && std::abs(c.dh) <= -opt_.c2 * dh0_)
      return c;
    return t;
  }

private:
  // Near the optimum h differences drown in roundoff while the derivative is
  // still accurate: accept a point with no measurable loss whose slope meets
  // the approximate Wolfe conditions (Hager-Zhang).
  bool approximate_wolfe(const TrialPoint& t) const {
    if (!t.finite() || t.h <= h0_ + opt_.c1 * t.a * dh0_) return false;
    return t.h <= h0_ + noise_floor() && t.dh >= opt_.c2 * dh0_ && t.dh <= (2.0 * opt_.c1 - 1.0) * dh0_;
  }

  double noise_floor() const { return kRoundoff * std::max(1.0, std::abs(h0_)); }

  TrialPoint eval(double a) {
    ++evals_;
    TrialPoint t;
    t.a = a;
    t.x = x_ + a * p_;
    t.g.resize(x_.size());
    const double f = obj_(t.x, t.g);
    t.h = -f;
    t.dh = t.g.allFinite() ? -t.g.dot(p_) : std::numeric_limits<double>::quiet_NaN();
    return t;
  }

  TrialPoint zoom(TrialPoint lo, TrialPoint hi, bool& strong_wolfe) {
    for (int i = 0; i < opt_.max_line_search; ++i) {
      const double width = hi.a - lo.a;
      if (std::abs(width) <= 1e-14 * std::max(1.0, std::abs(lo.a))) break;
      double a = 0.5 * (lo.a + hi.a);
      if (hi.finite()) {
        const double d1 = lo.dh + hi.dh - 3.0 * (lo.h - hi.h) / (lo.a - hi.a);
        const double disc = d1 * d1 - lo.dh * hi.dh;
        if (disc >= 0.0) {
          const double d2 = std::copysign(std::sqrt(disc), hi.a - lo.a);
          const double cand = hi.a - (hi.a - lo.a) * (hi.dh + d2 - d1) / (hi.dh - lo.dh + 2.0 * d2);
          const double lo_b = std::min(lo.a, hi.a) + 0.1 * std::abs(width);
          const double hi_b = std::max(lo.a, hi.a) - 0.1 * std::abs(width);
          if (std::isfinite(cand) && cand >= lo_b && cand <= hi_b) a = cand;
        }
      }
      TrialPoint cur = eval(a);
      if (approximate_wolfe(cur)) return cur;
      if (!cur.finite() || cur.h > h0_ + opt_.c1 * a * dh0_ || cur.h >= lo.h) {
        hi = std::move(cur);
      } else {
        if (std::abs(cur.dh) <= -opt_.c2 * dh0_) {
          strong_wolfe = true;
          return cur;
        }
        if (cur.dh * (hi.a - lo.a) >= 0.0) hi = lo;
        lo = std::move(cur);
      }
    }
    // Interval collapsed: fall back to the best sufficient-increase point.
    return lo;
  }

  const Objective& obj_;
  const BfgsOptions& opt_;
  const Vector& x_;
  const Vector& p_;
  double h0_;
  double dh0_;
  int evals_ = 0;
};

}  // namespace

LineSearchResult line_search(const Objective& objective, const Vector& x, const Vector& p, double f0,
                             const Vector& g0, const BfgsOptions& options) {
  const double slope = g0.dot(p);
  if (!(slope > 0.0)) throw Error("line search needs an ascent direction");
  LineSearch ls(objective, options, x, p, f0, slope);
  LineSearchResult r;
  TrialPoint t = ls.run(options.initial_step, r.strong_wolfe);
  if (r.strong_wolfe) t = ls.refine(std::move(t));
  r.step = t.a;
  r.x = std::move(t.x);
  r.f = -t.h;
  r.grad = std::move(t.g);
  r.evaluations = ls.evaluations();
  return r;
}

OptimResult bfgs_maximize(const Objective& objective, const Vector& x0, const BfgsOptions& opt) {
  const Index n = x0.size();
  OptimResult res;
  Vector x = x0;
  Vector g(n);
  double f = objective(x, g);
  if (!std::isfinite(f) || !g.allFinite())
    throw OptimError("non-finite objective or gradient at the starting point", x, 0);
  res.f_trace.push_back(f);

  Matrix H = Matrix::Identity(n, n);
  bool scaled = false;
  int iter = 0;
  for (; iter < opt.max_iter; ++iter) {
    if (g.lpNorm<Eigen::Infinity>() <= opt.grad_tol) break;

    Vector p = H * g;
    if (!(g.dot(p) > 0.0)) {
      H.setIdentity();
      p = g;
    }
    LineSearchResult step = line_search(objective, x, p, f, g, opt);
    const double floor = kRoundoff * std::max(1.0, std::abs(f));
    if (step.step == 0.0 || !(step.f >= f - floor)) {
      // Retry once along the steepest-ascent direction.
      H.setIdentity();
      scaled = false;
      p = g / std::max(1.0, g.lpNorm<Eigen::Infinity>());
      step = line_search(objective, x, p, f, g, opt);
      if (step.step == 0.0 || !(step.f >= f - floor))
        throw OptimError("line search failed to find an ascent step", x, iter);
    }
    const Vector s = step.x - x;
    const Vector y = g - step.grad;  // gradient change of -f
    const double sy = s.dot(y);
    // Relative threshold: an absolute one would skip every update once the
    // gradient is small and stall the final superlinear phase.
    if (sy > opt.curvature_skip * s.norm() * y.norm()) {
      if (!scaled) {
        H *= sy / y.squaredNorm();
        scaled = true;
      }
      const double rho = 1.0 / sy;
      const Vector Hy = H * y;
      const double yHy = y.dot(Hy);
      // (I - rho s y')H(I - rho y s') + rho s s'
      H.noalias() += (rho * rho * yHy + rho) * (s * s.transpose()) -
                     rho * (Hy * s.transpose() + s * Hy.transpose());
    }
    x = step.x;
    f = step.f;
    g = step.grad;
    if (!std::isfinite(f) || !g.allFinite())
      throw OptimError("non-finite objective or gradient", x, iter);
    res.f_trace.push_back(f);
  }
  res.x_star = x;
  res.f_star = f;
  res.grad_norm = g.lpNorm<Eigen::Infinity>();
  res.iterations = iter;
  res.converged = res.grad_norm <= opt.grad_tol;
  return res;
}

double check_gradient(const Objective& objective, const Vector& x, double step) {
  const Index n = x.size();
  Vector g(n);
  const double f0 = objective(x, g);
  if (!std::isfinite(f0) || !g.allFinite()) throw Error("non-finite evaluation in gradient check");
  Vector scratch(n);
  double worst = 0.0;
  for (Index i = 0; i < n; ++i) {
    Vector xp = x, xm = x;
    xp[i] += step;
    xm[i] -= step;
    const double fp = objective(xp, scratch);
    const double fm = objective(xm, scratch);
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw Error("non-finite evaluation in gradient check");
    const double fd = (fp - fm) / (2.0 * step);
    worst = std::max(worst, std::abs(g[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace lccm
