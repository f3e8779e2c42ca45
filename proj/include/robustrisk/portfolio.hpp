#ifndef ROBUSTRISK_PORTFOLIO_HPP
#define ROBUSTRISK_PORTFOLIO_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "robustrisk/common.hpp"
#include "robustrisk/distortion.hpp"
#include "robustrisk/reference.hpp"
#include "robustrisk/unimodal.hpp"
#include "robustrisk/worstcase.hpp"

namespace robustrisk {

/// Distributionally robust portfolio selection over the simplex: per weight
/// vector, the multivariate ball reduces to a univariate moment + Wasserstein
/// set on the portfolio loss, evaluated by the worst-case machinery.
struct PortfolioProblem {
  std::vector<double> mu;       // asset mean losses
  std::vector<double> sigma0;   // covariance, row-major n x n
  double epsilon = kInf;        // squared radius of the joint Wasserstein ball
  MetricSpec metric;
  EllipticalReference elliptical = EllipticalReference::normal();
  std::vector<std::vector<double>> sample;  // joint observations; empty = elliptical
  std::optional<double> mean_bound;  // admissible: w^T mu <= mean_bound
  std::optional<double> xi;          // unimodal inflection of the portfolio loss

  std::size_t n() const { return mu.size(); }
  bool sample_based() const { return !sample.empty(); }

  double quad(const std::vector<double>& w) const {  // w^T Sigma0 w
    const std::size_t k = n();
    double s = 0.0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) s += w[i] * sigma0[i * k + j] * w[j];
    return s;
  }

  void validate() const {
    const std::size_t k = n();
    require(k >= 1, "portfolio requires at least one asset");
    require(sigma0.size() == k * k, "covariance matrix size must match the mean vector");
    for (double m : mu) require_finite(m, "asset mean");
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < i; ++j)
        require(std::fabs(sigma0[i * k + j] - sigma0[j * k + i]) <=
                    1e-10 * (1.0 + std::fabs(sigma0[i * k + j])),
                "covariance matrix must be symmetric");
    // Cholesky feasibility = positive definiteness
    std::vector<double> L(k * k, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double s = sigma0[i * k + j];
        for (std::size_t l = 0; l < j; ++l) s -= L[i * k + l] * L[j * k + l];
        if (i == j) {
          require(s > 0.0, "covariance matrix is not positive definite");
          L[i * k + i] = std::sqrt(s);
        } else {
          L[i * k + j] = s / L[j * k + j];
        }
      }
    }
    require(epsilon > 0.0, "epsilon must be positive (may be infinite)");
    if (mean_bound) {
      // linear objective over the simplex attains its minimum at a vertex
      const double lo = *std::min_element(mu.begin(), mu.end());
      require(lo <= *mean_bound + 1e-12,
              "admissible set is empty: no simplex vertex satisfies the mean bound");
    }
    if (sample_based())
      for (const auto& row : sample)
        require(row.size() == k, "sample rows must have one entry per asset");
    if (xi) require(*xi >= 0.0 && *xi <= 1.0, "inflection must lie in [0,1]");
  }

  bool admissible(const std::vector<double>& w, double tol = 1e-10) const {
    if (w.size() != n()) return false;
    double s = 0.0;
    for (double x : w) {
      if (x < -tol) return false;
      s += x;
    }
    if (std::fabs(s - 1.0) > tol * 10.0) return false;
    if (mean_bound) {
      double m = 0.0;
      for (std::size_t i = 0; i < n(); ++i) m += w[i] * mu[i];
      if (m > *mean_bound + tol) return false;
    }
    return true;
  }
};

struct PortfolioResult {
  std::vector<double> weights;
  double objective = kNaN;
  double lambda_w = 0.0;
  std::string path;  // which evaluation route produced the objective
  Regime regime = Regime::interior;
  int evaluations = 0;
  std::vector<std::string> diagnostics;
};

/// Reduce the joint ambiguity set at weights w to the univariate set of the
/// portfolio loss: mean w^T mu, stddev sqrt(w^T Sigma0 w), squared radius
/// epsilon * ||w||^2, reference = law of w^T X0.
inline MomentWassersteinSet reduce(const PortfolioProblem& p, const std::vector<double>& w) {
  require(w.size() == p.n(), "weight vector size mismatch");
  double mu_w = 0.0, nrm2 = 0.0;
  for (std::size_t i = 0; i < p.n(); ++i) {
    mu_w += w[i] * p.mu[i];
    nrm2 += w[i] * w[i];
  }
  const double s2 = p.quad(w);
  require(s2 > 1e-14, "degenerate portfolio direction: w^T Sigma0 w is zero");
  const double sw = std::sqrt(s2);
  QuantileFunction F = [&] {
    if (p.sample_based()) {
      std::vector<double> proj(p.sample.size());
      for (std::size_t r = 0; r < p.sample.size(); ++r) {
        double v = 0.0;
        for (std::size_t i = 0; i < p.n(); ++i) v += w[i] * p.sample[r][i];
        proj[r] = v;
      }
      return QuantileFunction::empirical(std::move(proj));
    }
    return p.elliptical.F0.affine(mu_w, sw);
  }();
  const double eps_uni = std::isfinite(p.epsilon) ? p.epsilon * nrm2 : kInf;
  return MomentWassersteinSet{mu_w, sw, eps_uni, std::move(F)};
}

namespace detail {

/// Smallest t in [0, hi) with f(t) >= 0, assuming f(t) -> +inf as t -> hi-.
inline double first_nonneg(const std::function<double(double)>& f, double hi) {
  if (f(0.0) >= 0.0) return 0.0;
  const int N = 512;
  double prev = 0.0;
  for (int k = 1; k <= N; ++k) {
    const double t = hi * double(k) / double(N + 1);
    if (f(t) >= 0.0) return bisect_root(f, prev, t, 1e-14);
    prev = t;
  }
  // the crossing hides in the boundary layer past the last scan point (its
  // width shrinks with the multiplier); halve the distance to hi until the
  // divergence guarantees a sign
  double t = prev;
  for (int k = 0; k < 120; ++k) {
    t = hi - 0.5 * (hi - t);
    if (!(t > prev) || !(t < hi)) break;
    if (f(t) >= 0.0) return bisect_root(f, prev, t, 1e-18);
    prev = t;
  }
  return prev;
}

/// Largest t in (lo, 1] with f(t) <= 0, assuming f(t) -> -inf as t -> lo+.
inline double last_nonpos(const std::function<double(double)>& f, double lo) {
  if (f(1.0) <= 0.0) return 1.0;
  const int N = 512;
  double prev = 1.0;
  for (int k = N; k >= 1; --k) {
    const double t = lo + (1.0 - lo) * double(k) / double(N + 1);
    if (f(t) <= 0.0) return bisect_root(f, t, prev, 1e-14);
    prev = t;
  }
  double t = prev;
  for (int k = 0; k < 120; ++k) {
    t = lo + 0.5 * (t - lo);
    if (!(t < prev) || !(t > lo)) break;
    if (f(t) <= 0.0) return bisect_root(f, t, prev, 1e-18);
    prev = t;
  }
  return prev;
}

/// Shared inputs of the elliptical closed-form portfolio paths.
struct CorInput {
  const QuantileFunction& F0;  // standardized reference (mean 0, stddev 1)
  double mu_w = 0.0;           // w^T mu
  double s2 = 1.0;             // w^T Sigma0 w
  double eps2 = kInf;          // epsilon * ||w||^2
  double sw() const { return std::sqrt(s2); }
};

struct CorOutput {
  double value = kNaN;
  double lambda = 0.0;
};

/// Concave-distortion path: multiplier in closed form from the covariance
/// constants, no root solving.
inline CorOutput cor_concave(const CorInput& in, double g1, double V, double C0) {
  require(V > 1e-14, "closed-form concave path requires a non-constant weight");
  const double sw = in.sw();
  const double branch = C0 * in.s2 / std::sqrt(V);
  const double A = std::isfinite(in.eps2) ? std::max(in.s2 - 0.5 * in.eps2, branch) : branch;
  double B = 0.0;                            // B = lambda * stddev of the portfolio loss
  if (A > branch + 1e-300) {                 // ball active: interior multiplier
    const double den = A * A - in.s2 * in.s2;
    require(den < 0.0, "concave closed form hit an invalid bracket");
    B = std::max(0.0, -C0 + std::sqrt(std::max(0.0, (C0 * C0 - V) * A * A / den)));
  }
  const double b = std::sqrt(V + 2.0 * C0 * B + B * B);
  CorOutput out;
  out.value = in.mu_w * g1 + sw * (V + C0 * B) / b;
  out.lambda = B / sw;
  return out;
}

/// Inter-quantile-difference path: two chords, multiplier from the stated
/// scalar equation when the ball is active.
inline CorOutput cor_iqd(const CorInput& in, double alpha) {
  const QuantileFunction& F0 = in.F0;
  const double sw = in.sw();
  auto I = [&](double a, double b) { return F0.partial_integral(a, b); };
  auto Q2 = [&](double a, double b) { return F0.partial_square_integral(a, b); };

  auto t_star = [&](double lam) {
    return first_nonneg(
        [&](double t) {
          const double rhs = lam != 0.0 ? lam * F0(1.0 - t) : 0.0;
          return (1.0 / sw + lam * I(1.0 - alpha, 1.0 - t)) / (alpha - t) - rhs;
        },
        alpha);
  };
  auto t_hat = [&](double lam) {
    return last_nonpos(
        [&](double t) {
          const double rhs = lam != 0.0 ? lam * F0(1.0 - t) : 0.0;
          return (lam * I(1.0 - t, alpha) - 1.0 / sw) / (t - 1.0 + alpha) - rhs;
        },
        1.0 - alpha);
  };

  struct Terms {
    double c1, c2, len1, len2, q;  // chord constants, lengths, off-chord square mass
  };
  auto terms = [&](double lam) {
    const double ts = t_star(lam), th = t_hat(lam);
    Terms t;
    t.len1 = alpha - ts;
    t.len2 = th - 1.0 + alpha;
    t.c1 = (1.0 + lam * sw * I(1.0 - alpha, 1.0 - ts)) / t.len1;
    t.c2 = (lam * sw * I(1.0 - th, alpha) - 1.0) / t.len2;
    t.q = Q2(0.0, 1.0 - th) + Q2(alpha, 1.0 - alpha) + Q2(1.0 - ts, 1.0);
    return t;
  };
  auto variance = [&](double lam, const Terms& t) {
    return t.c1 * t.c1 * t.len1 + t.c2 * t.c2 * t.len2 + lam * lam * in.s2 * t.q;
  };

  // interior condition: Corr(F0^-1, envelope) must be pulled up to the
  // target 1 - eps2/(2 s2); residual(0) > 0 iff the ball is active
  auto inner = [&](double lam, const Terms& t) {
    return t.c1 * I(1.0 - alpha, 1.0 - alpha + t.len1) + t.c2 * I(alpha - t.len2, alpha) +
           lam * sw * t.q;
  };
  auto residual = [&](double l) {
    const Terms t = terms(l);
    return (1.0 - in.eps2 / (2.0 * in.s2)) * std::sqrt(variance(l, t)) - inner(l, t);
  };
  double lam = 0.0;
  if (std::isfinite(in.eps2) && residual(0.0) > 0.0) {
    double hi = 1.0;
    while (residual(hi) > 0.0) {
      hi *= 2.0;
      if (hi > 1e100) throw numeric_error("iqd portfolio multiplier bracket diverged");
    }
    lam = bisect_root(residual, 0.0, hi, 1e-12);
  }
  const Terms t = terms(lam);
  CorOutput out;
  out.value = sw / std::sqrt(variance(lam, t)) * (t.c1 - t.c2);
  out.lambda = lam;
  return out;
}

/// Value-at-risk path: single chord against the upper tail.
inline CorOutput cor_var(const CorInput& in, double alpha) {
  const QuantileFunction& F0 = in.F0;
  const double sw = in.sw();
  auto I = [&](double a, double b) { return F0.partial_integral(a, b); };
  auto Q2 = [&](double a, double b) { return F0.partial_square_integral(a, b); };

  auto t_star = [&](double lam) {
    return first_nonneg(
        [&](double t) {
          const double rhs = lam != 0.0 ? lam * F0(1.0 - t) : 0.0;
          return (1.0 / sw + lam * I(alpha, 1.0 - t)) / (1.0 - alpha - t) - rhs;
        },
        1.0 - alpha);
  };
  struct Terms {
    double c1, len, q;
  };
  auto terms = [&](double lam) {
    const double ts = t_star(lam);
    Terms t;
    t.len = 1.0 - alpha - ts;
    t.c1 = (1.0 + lam * sw * I(alpha, 1.0 - ts)) / t.len;
    t.q = Q2(0.0, alpha) + Q2(1.0 - ts, 1.0);
    return t;
  };
  auto variance = [&](double lam, const Terms& t) {
    return t.c1 * t.c1 * t.len + lam * lam * in.s2 * t.q - 1.0;
  };

  auto inner = [&](double lam, const Terms& t) {
    return t.c1 * I(alpha, alpha + t.len) + lam * sw * t.q;
  };
  auto residual = [&](double l) {
    const Terms t = terms(l);
    return (1.0 - in.eps2 / (2.0 * in.s2)) * std::sqrt(variance(l, t)) - inner(l, t);
  };
  double lam = 0.0;
  if (std::isfinite(in.eps2) && residual(0.0) > 0.0) {
    double hi = 1.0;
    while (residual(hi) > 0.0) {
      hi *= 2.0;
      if (hi > 1e100) throw numeric_error("var portfolio multiplier bracket diverged");
    }
    lam = bisect_root(residual, 0.0, hi, 1e-12);
  }
  const Terms t = terms(lam);
  CorOutput out;
  out.value = in.mu_w + sw / std::sqrt(variance(lam, t)) * (t.c1 - 1.0);
  out.lambda = lam;
  return out;
}

/// GlueVaR path (requires h1/(1-beta) >= (h2-h1)/(beta-alpha)): chord against
/// the upper tail plus the two surviving slope pieces.  Variance and tilt
/// integrals are assembled directly from the envelope-derivative pieces.
inline CorOutput cor_gluevar(const CorInput& in, const DistortionFunction& g, double beta,
                             double alpha, double h1, double h2) {
  const QuantileFunction& F0 = in.F0;
  const double sw = in.sw();
  const double s_hi = h1 / (1.0 - beta);          // weight on u > beta (tail piece)
  const double s_mid = (h2 - h1) / (beta - alpha);  // weight on alpha < u < beta
  auto I = [&](double a, double b) { return F0.partial_integral(a, b); };
  auto Q2 = [&](double a, double b) { return F0.partial_square_integral(a, b); };

  auto u_star = [&](double lam) {
    return first_nonneg(
        [&](double t) {
          const double step = t < 1.0 - beta ? s_hi : s_mid;
          const double rhs = lam != 0.0 ? lam * sw * F0(1.0 - t) : 0.0;
          return (1.0 - g(t) + lam * sw * I(alpha, 1.0 - t)) / (1.0 - alpha - t) - step - rhs;
        },
        1.0 - alpha);
  };

  struct Terms {
    double u, chord, len;
    double q;   // int of (F0^-1)^2 over (0,alpha) u (1-u,1)
    double gi;  // int of gamma * F0^-1 over (1-u,1)
    double g2;  // int of gamma^2 over (1-u,1)
  };
  auto terms = [&](double lam) {
    Terms t;
    t.u = u_star(lam);
    t.len = 1.0 - alpha - t.u;
    t.chord = (1.0 - g(t.u) + lam * sw * I(alpha, 1.0 - t.u)) / t.len;
    t.q = Q2(0.0, alpha) + Q2(1.0 - t.u, 1.0);
    const double hi_lo = std::max(beta, 1.0 - t.u);  // tail piece lives on (hi_lo, 1)
    const double mid_lo = std::min(beta, 1.0 - t.u); // middle piece on (mid_lo, beta)
    t.gi = s_hi * I(hi_lo, 1.0) + s_mid * I(mid_lo, beta);
    t.g2 = s_hi * s_hi * (1.0 - hi_lo) + s_mid * s_mid * std::max(0.0, beta - mid_lo);
    return t;
  };
  // Var((g_lambda^*)'(V)): chord constant on (alpha, 1-u), gamma + lam*sw*F0^-1
  // beyond, lam*sw*F0^-1 below alpha; mean is g(1) + 0 = 1.
  auto variance = [&](double lam, const Terms& t) {
    const double second = t.chord * t.chord * t.len + t.g2 + 2.0 * lam * sw * t.gi +
                          lam * lam * in.s2 * t.q;
    return second - 1.0;
  };

  auto inner = [&](double lam, const Terms& t) {  // <envelope derivative, F0^-1>
    return t.chord * I(alpha, 1.0 - t.u) + t.gi + lam * sw * t.q;
  };
  auto residual = [&](double l) {
    const Terms t = terms(l);
    return (1.0 - in.eps2 / (2.0 * in.s2)) * std::sqrt(variance(l, t)) - inner(l, t);
  };
  double lam = 0.0;
  if (std::isfinite(in.eps2) && residual(0.0) > 0.0) {
    double hi = 1.0;
    while (residual(hi) > 0.0) {
      hi *= 2.0;
      if (hi > 1e100) throw numeric_error("gluevar portfolio multiplier bracket diverged");
    }
    lam = bisect_root(residual, 0.0, hi, 1e-12);
  }
  const Terms t = terms(lam);
  const double b2 = variance(lam, t);
  CorOutput out;
  // worst value = mu_w g(1) + sw (b^2 - lam sw <env, F0^-1>) / b; the chord
  // and slope pieces enter only through b^2 and the inner product
  out.value = in.mu_w * g.total_at_one() +
              sw * (b2 - lam * sw * inner(lam, t)) / std::sqrt(b2);
  out.lambda = lam;
  return out;
}

}  // namespace detail

/// Per-problem evaluator caching the metric, the closed-form constants, and
/// the unimodal projections that do not depend on w.
class PortfolioEvaluator {
 public:
  explicit PortfolioEvaluator(const PortfolioProblem& p) : p_(p), g_(make_distortion(p.metric)) {
    p_.validate();
    if (!p_.sample_based()) {
      const Family f = p_.metric.family;
      if (g_.concave() && g_.continuous()) {
        const WeightFunction gamma = weight_of(g_);
        V_ = gamma.square_integral(0.0, 1.0) - sq(g_.total_at_one());
        C0_ = 0.0;
        for (std::size_t j = 0; j + 1 < gamma.knots.size(); ++j) {
          const double a = gamma.knots[j], b = gamma.knots[j + 1];
          C0_ += gamma.c[j] * p_.elliptical.F0.partial_integral(a, b) +
                 gamma.d[j] * p_.elliptical.F0.partial_t_integral(a, b);
        }
        if (V_ > 1e-14) path_ = Path::concave;
      } else if ((f == Family::iqd_plus || f == Family::iqd_minus) && p_.metric.alpha > 0.0 &&
                 p_.metric.alpha < 0.5) {
        path_ = Path::iqd;
      } else if (f == Family::var || f == Family::var_plus) {
        path_ = Path::var;
      } else if (f == Family::gluevar || f == Family::gluevar_hat) {
        const double lhs = p_.metric.h1 / (1.0 - p_.metric.beta);
        const double rhs = (p_.metric.h2 - p_.metric.h1) / (p_.metric.beta - p_.metric.alpha);
        if (lhs >= rhs - 1e-12 * (1.0 + std::fabs(rhs))) path_ = Path::gluevar;
      }
    }
    if (p_.xi) {
      require(g_.continuous(),
              "unimodal portfolio optimization requires an absolutely continuous distortion");
      proj_gamma_ = project(weight_of(g_), *p_.xi);
      if (!p_.sample_based()) {
        const UnimodalFeasibility fe =
            unimodal_wasserstein_feasibility(p_.elliptical.F0, 0.0, 1.0, *p_.xi, uw_opts_.proj);
        f0_chat_ = fe.c0_hat;  // = b_hat of the standardized projection
      }
    }
  }

  const DistortionFunction& metric() const { return g_; }

  /// Objective value with route/multiplier detail; throws on infeasible w.
  PortfolioResult evaluate(const std::vector<double>& w) const {
    PortfolioResult r;
    r.weights = w;
    double nrm2 = 0.0, mu_w = 0.0;
    for (std::size_t i = 0; i < p_.n(); ++i) {
      nrm2 += w[i] * w[i];
      mu_w += w[i] * p_.mu[i];
    }
    const double s2 = p_.quad(w);
    const double eps2 = std::isfinite(p_.epsilon) ? p_.epsilon * nrm2 : kInf;

    if (p_.xi) {
      if (!std::isfinite(eps2)) {
        r.objective = mu_w * g_.total_at_one() + proj_gamma_->b_hat * std::sqrt(s2);
        r.lambda_w = 0.0;
        r.regime = Regime::boundary_lambda0;
        r.path = "unimodal-closed";
        return r;
      }
      if (!p_.sample_based()) {
        // strict membership in the feasible weight region
        const double thr = 2.0 * s2 * (1.0 - f0_chat_);
        if (!(eps2 > thr)) {
          std::ostringstream os;
          os << "weights outside the unimodal-feasible region: epsilon*||w||^2 = " << eps2
             << " must strictly exceed " << thr;
          throw infeasibility_error(os.str(), thr);
        }
      }
      BoundResult b = worst_case_unimodal_wasserstein(g_, reduce(p_, w), *p_.xi, uw_opts_);
      r.objective = b.value;
      r.lambda_w = b.lambda;
      r.regime = b.regime;
      r.path = "unimodal";
      return r;
    }

    if (path_ != Path::generic) {
      detail::CorInput in{p_.elliptical.F0, mu_w, s2, eps2};
      detail::CorOutput out;
      switch (path_) {
        case Path::concave:
          out = detail::cor_concave(in, g_.total_at_one(), V_, C0_);
          r.path = "closed-concave";
          break;
        case Path::iqd:
          out = detail::cor_iqd(in, p_.metric.alpha);
          r.path = "closed-iqd";
          break;
        case Path::var:
          out = detail::cor_var(in, p_.metric.alpha);
          r.path = "closed-var";
          break;
        case Path::gluevar:
          out = detail::cor_gluevar(in, g_, p_.metric.beta, p_.metric.alpha, p_.metric.h1,
                                    p_.metric.h2);
          r.path = "closed-gluevar";
          break;
        default:
          break;
      }
      r.objective = out.value;
      r.lambda_w = out.lambda;
      r.regime = out.lambda > 0.0 ? Regime::interior : Regime::boundary_lambda0;
      return r;
    }

    BoundResult b = worst_case(g_, reduce(p_, w));
    r.objective = b.value;
    r.lambda_w = std::isfinite(b.lambda) ? b.lambda : kInf;
    r.regime = b.regime;
    r.path = "generic";
    return r;
  }

  /// Generic-path value regardless of closed forms (for cross-checks).
  double generic_value(const std::vector<double>& w) const {
    if (p_.xi) {
      BoundResult b = worst_case_unimodal_wasserstein(g_, reduce(p_, w), *p_.xi, uw_opts_);
      return b.value;
    }
    return worst_case(g_, reduce(p_, w)).value;
  }

  /// Objective for the optimizer: +inf on rejected/infeasible points.
  double operator()(const std::vector<double>& w) const {
    if (!p_.admissible(w)) return kInf;
    try {
      return evaluate(w).objective;
    } catch (const infeasibility_error&) {
      return kInf;
    }
  }

 private:
  enum class Path { generic, concave, iqd, var, gluevar };
  const PortfolioProblem& p_;
  DistortionFunction g_;
  Path path_ = Path::generic;
  double V_ = 0.0, C0_ = 0.0;  // concave closed-form constants
  std::optional<ConeProjection> proj_gamma_;
  double f0_chat_ = 1.0;
  UnimodalWassersteinOptions uw_opts_;
};

inline double objective(const PortfolioProblem& p, const std::vector<double>& w) {
  PortfolioEvaluator ev(p);
  return ev.evaluate(w).objective;
}

inline double solve_lambda_w(const PortfolioProblem& p, const std::vector<double>& w) {
  PortfolioEvaluator ev(p);
  return ev.evaluate(w).lambda_w;
}

namespace detail {

/// Nelder-Mead on the first n-1 weights (the last is 1 - sum); rejected
/// points (outside the simplex or constraint) evaluate to +inf.
inline std::vector<double> nelder_mead(const std::function<double(const std::vector<double>&)>& f,
                                       std::vector<double> x0, double step, int max_iter,
                                       double ftol) {
  const std::size_t d = x0.size();
  std::vector<std::vector<double>> xs(d + 1, x0);
  std::vector<double> fs(d + 1);
  for (std::size_t i = 0; i < d; ++i) xs[i + 1][i] += step;
  for (std::size_t i = 0; i <= d; ++i) fs[i] = f(xs[i]);

  auto order = [&] {
    std::vector<std::size_t> idx(d + 1);
    for (std::size_t i = 0; i <= d; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return fs[a] < fs[b]; });
    std::vector<std::vector<double>> nxs(d + 1);
    std::vector<double> nfs(d + 1);
    for (std::size_t i = 0; i <= d; ++i) {
      nxs[i] = xs[idx[i]];
      nfs[i] = fs[idx[i]];
    }
    xs = std::move(nxs);
    fs = std::move(nfs);
  };

  for (int it = 0; it < max_iter; ++it) {
    order();
    if (std::isfinite(fs[d]) && std::isfinite(fs[0]) &&
        fs[d] - fs[0] <= ftol * (1.0 + std::fabs(fs[0])))
      break;
    std::vector<double> centroid(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) centroid[j] += xs[i][j] / double(d);
    auto blend = [&](double coef) {
      std::vector<double> y(d);
      for (std::size_t j = 0; j < d; ++j) y[j] = centroid[j] + coef * (xs[d][j] - centroid[j]);
      return y;
    };
    std::vector<double> xr = blend(-1.0);
    const double fr = f(xr);
    if (fr < fs[0]) {
      std::vector<double> xe = blend(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        xs[d] = std::move(xe);
        fs[d] = fe;
      } else {
        xs[d] = std::move(xr);
        fs[d] = fr;
      }
    } else if (fr < fs[d - 1]) {
      xs[d] = std::move(xr);
      fs[d] = fr;
    } else {
      std::vector<double> xc = blend(fr < fs[d] ? -0.5 : 0.5);
      const double fc = f(xc);
      if (fc < std::min(fr, fs[d])) {
        xs[d] = std::move(xc);
        fs[d] = fc;
      } else {  // shrink toward the best vertex
        for (std::size_t i = 1; i <= d; ++i) {
          for (std::size_t j = 0; j < d; ++j) xs[i][j] = xs[0][j] + 0.5 * (xs[i][j] - xs[0][j]);
          fs[i] = f(xs[i]);
        }
      }
    }
  }
  order();
  return xs[0];
}

inline std::vector<double> lift_weights(const std::vector<double>& x) {
  std::vector<double> w(x.size() + 1);
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    w[i] = x[i];
    s += x[i];
  }
  w.back() = 1.0 - s;
  return w;
}

}  // namespace detail

/// Minimize the robust objective over the admissible simplex.  n = 2 uses a
/// grid scan plus golden-section polish (global for the acceptance runs);
/// n > 2 uses multistart Nelder-Mead (vertices, centroid, seeded random).
inline PortfolioResult optimize(const PortfolioProblem& p, std::uint64_t seed = 0) {
  PortfolioEvaluator ev(p);
  const std::size_t n = p.n();
  int evals = 0;
  auto f = [&](const std::vector<double>& w) {
    ++evals;
    return ev(w);
  };

  std::vector<double> best_w;
  double best_f = kInf;
  auto consider = [&](const std::vector<double>& w, double fw) {
    if (!std::isfinite(fw)) return;
    const double tol = 1e-12 * (1.0 + std::fabs(fw));
    if (best_w.empty() || fw < best_f - tol) {
      best_f = fw;
      best_w = w;
    } else if (fw <= best_f + tol &&
               std::lexicographical_compare(w.begin(), w.end(), best_w.begin(), best_w.end())) {
      best_f = std::min(best_f, fw);
      best_w = w;  // deterministic tie-break: lexicographically smallest
    }
  };

  if (n == 1) {
    std::vector<double> w{1.0};
    const double fw = f(w);
    require(std::isfinite(fw), "the single admissible portfolio is infeasible");
    PortfolioResult r = ev.evaluate(w);
    r.evaluations = evals;
    return r;
  }

  if (n == 2) {
    const int grid = 101;
    std::vector<double> fx(grid, kInf);
    int best_i = -1;
    for (int i = 0; i < grid; ++i) {
      const double x = double(i) / double(grid - 1);
      fx[i] = f({x, 1.0 - x});
      if (std::isfinite(fx[i]) && (best_i < 0 || fx[i] < fx[best_i])) best_i = i;
    }
    require(best_i >= 0, "no admissible weight on the scan grid");
    const double lo = std::max(0.0, double(best_i - 1) / double(grid - 1));
    const double hi = std::min(1.0, double(best_i + 1) / double(grid - 1));
    const double xg = golden_min([&](double x) { return f({x, 1.0 - x}); }, lo, hi, 1e-10);
    consider({xg, 1.0 - xg}, f({xg, 1.0 - xg}));
    consider({double(best_i) / double(grid - 1), 1.0 - double(best_i) / double(grid - 1)},
             fx[best_i]);
  } else {
    std::vector<std::vector<double>> starts;
    for (std::size_t i = 0; i < n && starts.size() < 8; ++i) {
      std::vector<double> w(n, 0.1 / double(n - 1));
      w[i] = 0.9;
      double s = 0.0;
      for (double x : w) s += x;
      for (double& x : w) x /= s;
      starts.push_back(w);
    }
    if (starts.size() < 8) starts.push_back(std::vector<double>(n, 1.0 / double(n)));
    rng gen(seed * 0x9e3779b97f4a7c15ull + 1ull);
    while (starts.size() < 8) {
      std::vector<double> w(n);
      double s = 0.0;
      for (double& x : w) {
        x = -std::log(std::max(1e-12, gen.uniform()));
        s += x;
      }
      for (double& x : w) x /= s;
      starts.push_back(w);
    }
    for (const auto& w0 : starts) {
      std::vector<double> x0(w0.begin(), w0.end() - 1);
      auto fx = [&](const std::vector<double>& x) { return f(detail::lift_weights(x)); };
      std::vector<double> x = detail::nelder_mead(fx, x0, 0.1, 400, 1e-11);
      const std::vector<double> w = detail::lift_weights(x);
      consider(w, f(w));
    }
    require(!best_w.empty(), "all optimizer starts landed on inadmissible weights");
  }

  PortfolioResult r = ev.evaluate(best_w);
  r.evaluations = evals;
  return r;
}

/// Same search with the unimodal objective (requires xi on the problem).
inline PortfolioResult optimize_unimodal(const PortfolioProblem& p, std::uint64_t seed = 0) {
  require(bool(p.xi), "optimize_unimodal requires an inflection point on the problem");
  return optimize(p, seed);
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_PORTFOLIO_HPP
