#ifndef ROBUSTRISK_WORSTCASE_HPP
#define ROBUSTRISK_WORSTCASE_HPP

#include <cmath>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "robustrisk/common.hpp"
#include "robustrisk/distortion.hpp"
#include "robustrisk/envelope.hpp"
#include "robustrisk/reference.hpp"

namespace robustrisk {

/// Uncertainty set: distributions with the given mean and standard deviation
/// inside a 2-Wasserstein ball of squared radius epsilon around F.
struct MomentWassersteinSet {
  double mu = 0.0;
  double sigma = 1.0;
  double epsilon = kInf;  // squared W2 radius; +inf drops the ball constraint
  QuantileFunction F = QuantileFunction::normal(0.0, 1.0);

  /// Smallest feasible squared radius: the squared distance from F to the
  /// (unique) comonotone-affine distribution with the target moments.
  double min_epsilon() const {
    return sq(mu - F.mean()) + sq(sigma - F.stddev());
  }

  bool feasible() const {
    return epsilon >= min_epsilon() - 1e-12 * (1.0 + min_epsilon());
  }

  void validate() const {
    require(sigma > 0.0 && std::isfinite(mu) && std::isfinite(sigma),
            "uncertainty set requires finite mu and sigma > 0");
    require(epsilon >= 0.0, "uncertainty set requires epsilon >= 0");
    require(F.stddev() > 0.0, "reference distribution must be non-degenerate");
  }
};

enum class Regime {
  interior,             // the ball constraint binds at a positive multiplier
  boundary_lambda0,     // the ball is slack: plain moment worst case
  constant_gstar,       // flat envelope derivative: value is g(1) * mu
  usc_no_attainer,      // supremum matches the lifted distortion, not attained
  comonotone_boundary,  // epsilon == floor: the set is a single distribution
};

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::interior:
      return "interior";
    case Regime::boundary_lambda0:
      return "boundary_lambda0";
    case Regime::constant_gstar:
      return "constant_gstar";
    case Regime::usc_no_attainer:
      return "usc_no_attainer";
    case Regime::comonotone_boundary:
      return "comonotone_boundary";
  }
  return "unknown";
}

struct BoundResult {
  double value = 0.0;
  double lambda = 0.0;  // +inf on the comonotone boundary
  Regime regime = Regime::boundary_lambda0;
  bool attained = false;
  std::optional<QuantileFunction> extremal_quantile;
  std::optional<EnvelopeDerivative> envelope;  // diagnostic, not serialized
  std::vector<std::string> diagnostics;
};

/// JSON object {value, lambda, regime, attained, quantile_csv_path?};
/// non-finite lambda serializes as null.
inline std::string bound_result_json(const BoundResult& r, int precision = 6,
                                     const std::optional<std::string>& quantile_csv_path = {}) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << "{\"value\": " << r.value << ", \"lambda\": ";
  if (std::isfinite(r.lambda))
    os << r.lambda;
  else
    os << "null";
  os << ", \"regime\": \"" << to_string(r.regime) << "\", \"attained\": "
     << (r.attained ? "true" : "false");
  if (quantile_csv_path) os << ", \"quantile_csv_path\": \"" << *quantile_csv_path << "\"";
  os << "}";
  return os.str();
}

struct WorstCaseOptions {
  EnvelopeOptions env;
  double lambda_rel_tol = 1e-10;
  int max_bisect = 200;
  double boundary_tie_tol = 1e-10;  // |eps - upper threshold| tie goes to lambda = 0
};

namespace detail {

inline bool usc_equal(const DistortionFunction& g) {
  for (const auto& p : g.pieces()) {
    if (p.t <= 0.0 || p.t >= 1.0) continue;
    const double lifted = std::max({p.left, p.point, p.right});
    if (lifted - p.point > 1e-12 * (1.0 + std::fabs(p.point))) return false;
  }
  return true;
}

/// True when rho_g is a multiple of the mean: continuous g, no parabola, and
/// a single constant slope.
inline bool mean_degenerate(const DistortionFunction& g) {
  if (!g.continuous() || g.quad() != 0.0) return false;
  const auto& ps = g.pieces();
  for (std::size_t i = 0; i + 2 < ps.size(); ++i)
    if (std::fabs(ps[i].slope - ps[i + 1].slope) > 1e-14) return false;
  return true;
}

/// Squared Wasserstein distance from F to the worst-case quantile at a given
/// envelope, integrated segment by segment as int (F^{-1} - H^{-1})^2.  The
/// correlation identity floor + 2*sigma*sd_F*(1 - corr) is algebraically
/// equal but loses ~|lambda|^2-amplified digits when the multiplier is huge
/// (corr -> 1); the direct integral is a sum of nonnegative terms and keeps
/// full precision at any multiplier.
inline double dw2_at(const EnvelopeDerivative& env, const MomentWassersteinSet& set) {
  const QuantileFunction& F = env.F;
  const double a = env.a_lambda, b = env.b_lambda;
  double d2 = 0.0;
  for (const auto& s : env.segments) {
    // H^{-1} = A + B u + L F^{-1} on the segment
    const double A = set.mu + set.sigma * (s.c - a) / b;
    const double B = set.sigma * s.b / b;
    const double L = set.sigma * s.lam / b;
    const double D = 1.0 - L;  // F^{-1} - H^{-1} = D F^{-1} - A - B u
    const double lo = s.lo, hi = s.hi, w = hi - lo;
    const double du2 = 0.5 * (hi * hi - lo * lo), du3 = (hi * hi * hi - lo * lo * lo) / 3.0;
    const double f1 = F.partial_integral(lo, hi);
    const double ft = B != 0.0 || D != 0.0 ? F.partial_t_integral(lo, hi) : 0.0;
    const double f2 = D != 0.0 ? F.partial_square_integral(lo, hi) : 0.0;
    d2 += D * D * f2 + A * A * w + B * B * du3 + 2.0 * A * B * du2 - 2.0 * D * (A * f1 + B * ft);
  }
  return std::max(0.0, d2);
}

}  // namespace detail

/// Binding multiplier for the Wasserstein constraint: solves
/// d_W(F, H_lambda) = sqrt(epsilon) by bracketed bisection on the envelope
/// correlation.  Requires an interior epsilon (between the feasibility floor
/// and the slack threshold).
inline double solve_lambda(const DistortionFunction& g, const MomentWassersteinSet& set,
                           WorstCaseOptions opts = {},
                           EnvelopeDerivative* out_env = nullptr) {
  set.validate();
  const double floor_eps = set.min_epsilon();
  require(std::isfinite(set.epsilon), "solve_lambda requires a finite epsilon");
  require(set.epsilon >= floor_eps - 1e-15 * (1.0 + floor_eps),
          "epsilon below the feasibility floor");

  const double btol = 1e-12;
  // squared distance to the dispersion-matched quantile, decreasing in lambda
  auto dw2_of = [&](double lam, EnvelopeDerivative* keep) -> std::optional<double> {
    EnvelopeDerivative env = g_lambda_envelope(g, set.F, lam, opts.env);
    if (env.b_lambda <= btol * (1.0 + std::fabs(env.a_lambda))) return std::nullopt;
    const double d2 = detail::dw2_at(env, set);
    if (keep) *keep = std::move(env);
    return d2;
  };

  // a flat envelope derivative cannot meet the dispersion boundary, so flat
  // evaluations count as "outside the ball" throughout the bracket search
  double lam_lo = 0.0;
  const std::optional<double> d_lo = dw2_of(0.0, nullptr);
  if (d_lo && *d_lo <= set.epsilon) {
    if (out_env) dw2_of(0.0, out_env);
    return 0.0;
  }

  // bracket: double until the worst-case quantile re-enters the ball
  double lam_hi = 1.0;
  std::optional<double> d_hi;
  for (int it = 0; it < 200; ++it) {
    d_hi = dw2_of(lam_hi, nullptr);
    if (d_hi && *d_hi <= set.epsilon) break;
    lam_hi *= 2.0;
    if (lam_hi > 1e100) throw numeric_error("multiplier bracket diverged");
  }
  if (!d_hi || *d_hi > set.epsilon)
    throw numeric_error("failed to bracket the Wasserstein multiplier");

  for (int it = 0; it < opts.max_bisect; ++it) {
    const double mid = 0.5 * (lam_lo + lam_hi);
    if (lam_hi - lam_lo <= opts.lambda_rel_tol * std::max(1.0, mid)) break;
    const std::optional<double> dm = dw2_of(mid, nullptr);
    if (dm && *dm <= set.epsilon)
      lam_hi = mid;
    else
      lam_lo = mid;
  }
  const double lam = 0.5 * (lam_lo + lam_hi);
  if (out_env) {
    if (!dw2_of(lam, out_env))
      throw regime_error("envelope derivative degenerate at the solved multiplier");
  }
  return lam;
}

/// Closed-form multiplier for concave distortions.  With U uniform,
/// V = Var(gamma(U)) and C = Cov(F^{-1}(U), gamma(U)), the correlation
/// identity collapses to a quadratic in lambda whose admissible root is
///   lambda = (-C + c_eps * sqrt((sd_F^2 V - C^2) / (1 - c_eps^2))) / sd_F^2.
inline double lambda_concave_closed_form(const DistortionFunction& g,
                                         const MomentWassersteinSet& set) {
  set.validate();
  require(std::isfinite(set.epsilon), "closed-form multiplier requires finite epsilon");
  const DistortionFunction gh = usc_version(g);
  require(gh.concave(), "closed-form multiplier requires a concave distortion");
  const double sdF = set.F.stddev();
  const EnvelopeDerivative env0 = detail::envelope_concave(gh, set.F, 0.0);
  const double V = sq(env0.b_lambda), C = env0.cov_F;
  const double floor_eps = set.min_epsilon();
  const double ceps = 1.0 - (set.epsilon - floor_eps) / (2.0 * set.sigma * sdF);
  require(ceps < 1.0, "epsilon must exceed the feasibility floor");
  if (env0.b_lambda <= 0.0) throw regime_error("constant weight; no multiplier exists");
  if (ceps <= env0.corr_F) return 0.0;  // ball is slack
  const double inner = (sq(sdF) * V - sq(C)) / (1.0 - sq(ceps));
  return (-C + ceps * std::sqrt(std::max(0.0, inner))) / sq(sdF);
}

/// Squared-radius threshold above which the Wasserstein ball stops binding.
inline double lambda0_epsilon_threshold(const DistortionFunction& g,
                                        const MomentWassersteinSet& set,
                                        WorstCaseOptions opts = {}) {
  const EnvelopeDerivative env0 = g_lambda_envelope(g, set.F, 0.0, opts.env);
  return set.min_epsilon() + 2.0 * set.sigma * set.F.stddev() * (1.0 - env0.corr_F);
}

/// Sharp upper bound of rho_g over the uncertainty set, with the attaining
/// quantile function where one exists.
inline BoundResult worst_case(const DistortionFunction& g, const MomentWassersteinSet& set,
                              WorstCaseOptions opts = {}) {
  set.validate();
  const double muF = set.F.mean(), sdF = set.F.stddev();
  const double floor_eps = set.min_epsilon();
  const double g1 = g.total_at_one();

  if (!set.feasible()) {
    std::ostringstream os;
    os << "infeasible uncertainty set: epsilon = " << set.epsilon
       << " is below the moment floor " << floor_eps;
    throw infeasibility_error(os.str(), floor_eps);
  }

  const DistortionFunction gh = usc_version(g);
  const bool attainable = detail::usc_equal(g);
  BoundResult res;

  // epsilon == floor: the set is the single comonotone-affine distribution
  if (std::isfinite(set.epsilon) &&
      set.epsilon <= floor_eps + 1e-12 * (1.0 + floor_eps)) {
    QuantileFunction H = set.F.affine(set.mu - set.sigma * muF / sdF, set.sigma / sdF);
    res.value = rho(g, H);
    res.lambda = kInf;
    res.regime = Regime::comonotone_boundary;
    res.attained = true;
    res.extremal_quantile = std::move(H);
    return res;
  }

  // mean-degenerate metric: rho == g(1) * mean on the whole set
  if (detail::mean_degenerate(g)) {
    res.value = g1 * set.mu;
    res.lambda = 0.0;
    res.regime = Regime::constant_gstar;
    res.attained = true;
    res.extremal_quantile = set.F.affine(set.mu - set.sigma * muF / sdF, set.sigma / sdF);
    return res;
  }

  EnvelopeDerivative env0 = g_lambda_envelope(g, set.F, 0.0, opts.env);
  const bool flat0 = env0.b_lambda <= 1e-12 * (1.0 + std::fabs(env0.a_lambda));

  if (flat0) {
    // flat envelope at lambda = 0: the moment-only value g(1)*mu holds when
    // the ball constraint is slack (epsilon = inf); otherwise the structure
    // degenerates unless a positive multiplier revives it (handled below)
    if (!std::isfinite(set.epsilon)) {
      res.value = g1 * set.mu;
      res.lambda = 0.0;
      res.regime = Regime::constant_gstar;
      res.attained = false;
      return res;
    }
  } else {
    const double eps_up = floor_eps + 2.0 * set.sigma * sdF * (1.0 - env0.corr_F);
    const bool slack = !std::isfinite(set.epsilon) ||
                       set.epsilon >= eps_up - opts.boundary_tie_tol * (1.0 + eps_up);
    if (slack) {
      res.value = set.mu * g1 + set.sigma * env0.b_lambda;
      res.lambda = 0.0;
      res.regime = attainable ? Regime::boundary_lambda0 : Regime::usc_no_attainer;
      res.attained = attainable;
      if (attainable) res.extremal_quantile = h_lambda(env0, set.mu, set.sigma);
      res.envelope = std::move(env0);
      return res;
    }
  }

  // interior: solve for the binding multiplier
  EnvelopeDerivative env;
  const double lam = solve_lambda(g, set, opts, &env);
  const double d2 = detail::dw2_at(env, set);
  if (std::fabs(d2 - set.epsilon) > 1e-6 * (1.0 + set.epsilon)) {
    if (flat0)
      throw regime_error(
          "the Wasserstein boundary is unreachable: the envelope derivative stays "
          "degenerate below the required multiplier");
    res.diagnostics.push_back("wasserstein residual above tolerance at solved multiplier");
  }
  // evaluate the metric exactly on the solved quantile; this equals
  // mu*g(1) + sigma*(b_lambda - lambda*sd_F*corr_F) but avoids the
  // cancellation that formula suffers at large multipliers
  res.value = rho(gh, h_lambda(env, set.mu, set.sigma));
  res.lambda = lam;
  res.regime = attainable ? Regime::interior : Regime::usc_no_attainer;
  res.attained = attainable;
  if (attainable) res.extremal_quantile = h_lambda(env, set.mu, set.sigma);
  res.envelope = std::move(env);
  return res;
}

/// Sharp lower bound: the negated problem's upper bound with flipped sign.
/// The extremal quantile (when the infimum is attained) is shared.
inline BoundResult best_case(const DistortionFunction& g, const MomentWassersteinSet& set,
                             WorstCaseOptions opts = {}) {
  BoundResult r = worst_case(negate(g), set, opts);
  r.value = -r.value;
  return r;
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_WORSTCASE_HPP
