#ifndef ROBUSTRISK_ENVELOPE_HPP
#define ROBUSTRISK_ENVELOPE_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include "robustrisk/common.hpp"
#include "robustrisk/distortion.hpp"
#include "robustrisk/reference.hpp"

namespace robustrisk {

/// Derivative of the concave envelope of the tilted distortion
/// g_lambda(t) = ghat(t) + lambda * int_{1-t}^1 F^{-1}, expressed in the
/// u = 1 - t variable:  phi(u) = (g_lambda^*)'(1 - u), non-decreasing.
///
/// Each segment evaluates to  c + b*u + lam*F^{-1}(u)  on (lo, hi); constants
/// come from bridge chords, affine-plus-quantile forms from contact regions.
struct EnvelopeDerivative {
  struct Segment {
    double lo = 0.0, hi = 1.0;
    double c = 0.0;    // constant part
    double b = 0.0;    // coefficient of u (exact parabola weight)
    double lam = 0.0;  // coefficient of F^{-1}(u)
  };

  std::vector<Segment> segments;
  QuantileFunction F = QuantileFunction::normal(0.0, 1.0);
  double lambda = 0.0;
  double a_lambda = 0.0;  // mean of phi over (0,1)
  double b_lambda = 0.0;  // stddev of phi
  double cov_F = 0.0;     // Cov(F^{-1}(V), phi(V))
  double corr_F = 0.0;    // correlation, clamped to [-1, 1]

  double value(double u) const {
    if (u <= 0.0) u = 1e-300;
    if (u >= 1.0) u = 1.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i + 1 < segments.size(); ++i)
      if (segments[i].hi < u) k = i + 1;
    const Segment& s = segments[k];
    return s.c + s.b * u + (s.lam != 0.0 ? s.lam * F(u) : 0.0);
  }

  /// u-breakpoints of phi (segment boundaries plus F kinks inside lam parts).
  std::vector<double> breakpoints() const {
    std::vector<double> bp;
    for (std::size_t i = 0; i + 1 < segments.size(); ++i) bp.push_back(segments[i].hi);
    for (double u : F.breakpoints()) bp.push_back(u);
    std::sort(bp.begin(), bp.end());
    bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
    return bp;
  }
};

namespace detail {

/// l(t) = int_{1-t}^{1} F^{-1}(u) du, the tilt integral.
inline double tilt(const QuantileFunction& F, double t) { return F.partial_integral(1.0 - t, 1.0); }

/// Value of the tilted usc distortion at t, using the lifted point value.
inline double tilted_value(const DistortionFunction& gh, const QuantileFunction& F, double lam,
                           double t) {
  return gh.usc_value(t) + lam * tilt(F, t);
}

/// Sort segments, drop empty ones, and snap them into a contiguous cover of
/// (0, 1) so downstream quantile assembly validates cleanly.
inline void tidy_segments(std::vector<EnvelopeDerivative::Segment>& segs) {
  std::sort(segs.begin(), segs.end(), [](const auto& a, const auto& b) { return a.lo < b.lo; });
  std::vector<EnvelopeDerivative::Segment> out;
  for (auto& s : segs)
    if (s.hi > s.lo + 1e-15) out.push_back(s);
  require(!out.empty(), "envelope derivative has no segments");
  out.front().lo = 0.0;
  for (std::size_t i = 1; i < out.size(); ++i) out[i].lo = out[i - 1].hi;
  out.back().hi = 1.0;
  segs = std::move(out);
}

/// Moments of phi; shared by every construction path.
/// Relocate contact/chord switch points to the exact value crossing.  The
/// bridge scans place the tangency within a small window; a contact segment
/// built from a slightly-off tangency starts below (or ends above) the chord
/// value.  The true switch point is where the contact derivative equals the
/// chord slope, which this pass recovers by bisection on the contact side.
inline void repair_monotone(std::vector<EnvelopeDerivative::Segment>& segs,
                            const QuantileFunction& F) {
  auto is_const = [](const EnvelopeDerivative::Segment& s) { return s.b == 0.0 && s.lam == 0.0; };
  auto val = [&](const EnvelopeDerivative::Segment& s, double u) {
    return s.c + s.b * u + (s.lam != 0.0 ? s.lam * F(u) : 0.0);
  };
  for (std::size_t i = 0; i + 1 < segs.size();) {
    auto& L = segs[i];
    auto& R = segs[i + 1];
    const double u = L.hi;
    const double lv = val(L, u);
    const double rv = R.c + R.b * u + (R.lam != 0.0 ? R.lam * F.right_value(u) : 0.0);
    const double guard = 1e-13 * (1.0 + std::fabs(lv));
    if (!(rv < lv - guard)) {
      ++i;
      continue;
    }
    if (is_const(L) && !is_const(R)) {
      // chord below, contact above starting too low: push the switch up to
      // where the contact climbs back to the chord value
      const double hi_end = std::min(R.hi, 1.0 - 1e-14);
      if (val(R, hi_end) < L.c) {  // contact never recovers: absorb it
        L.hi = R.hi;
        segs.erase(segs.begin() + i + 1);
        continue;
      }
      const double ustar = bisect_root([&](double x) { return val(R, x) - L.c; }, u, hi_end, 0.0);
      L.hi = ustar;
      R.lo = ustar;
      ++i;
    } else if (!is_const(L) && is_const(R)) {
      // contact below ending too high: pull the switch down to where the
      // contact still sits at the chord value
      const double lo_end = std::max(L.lo, 1e-14);
      if (val(L, lo_end) > R.c) {  // contact entirely above: absorb it
        R.lo = L.lo;
        segs.erase(segs.begin() + i);
        if (i > 0) --i;
        continue;
      }
      const double ustar = bisect_root([&](double x) { return val(L, x) - R.c; }, lo_end, u, 0.0);
      L.hi = ustar;
      R.lo = ustar;
      ++i;
    } else {
      ++i;  // leave for validate_monotone to judge
    }
  }
}

inline void finalize_envelope(EnvelopeDerivative& env) {
  tidy_segments(env.segments);
  repair_monotone(env.segments, env.F);
  const QuantileFunction& F = env.F;
  const double muF = F.mean(), sdF = F.stddev();
  double E1 = 0.0, E2 = 0.0, EF = 0.0;
  for (const auto& s : env.segments) {
    const double lo = s.lo, hi = s.hi, w = hi - lo;
    const double du2 = 0.5 * (hi * hi - lo * lo), du3 = (hi * hi * hi - lo * lo * lo) / 3.0;
    const double f1 = F.partial_integral(lo, hi);
    const double ft = s.b != 0.0 ? F.partial_t_integral(lo, hi) : 0.0;
    E1 += s.c * w + s.b * du2;
    E2 += s.c * s.c * w + 2.0 * s.c * s.b * du2 + s.b * s.b * du3;
    EF += s.c * f1 + s.b * ft;
    if (s.lam != 0.0) {
      const double f2 = F.partial_square_integral(lo, hi);
      const double ftl = s.b != 0.0 ? ft : 0.0;
      E1 += s.lam * f1;
      E2 += 2.0 * s.lam * (s.c * f1 + s.b * ftl) + s.lam * s.lam * f2;
      EF += s.lam * f2;
    }
  }
  env.a_lambda = E1;
  env.b_lambda = std::sqrt(std::max(0.0, E2 - E1 * E1));
  env.cov_F = EF - E1 * muF;
  env.corr_F = (env.b_lambda > 0.0 && sdF > 0.0)
                   ? std::clamp(env.cov_F / (sdF * env.b_lambda), -1.0, 1.0)
                   : 0.0;
  require_finite(env.a_lambda, "envelope mean");
  require_finite(env.b_lambda, "envelope dispersion");
}

/// Monotonicity check of phi across segment boundaries (phi must be
/// non-decreasing; interior slack absorbs bridge-location roundoff).
inline void validate_monotone(const EnvelopeDerivative& env, double tol = 1e-6) {
  double scale = 1.0 + std::fabs(env.a_lambda) + env.b_lambda;
  for (std::size_t i = 0; i + 1 < env.segments.size(); ++i) {
    const auto& s = env.segments[i];
    const auto& t = env.segments[i + 1];
    const double u = s.hi;
    // boundaries hugging 0 or 1 cannot be judged at u itself: the reference
    // quantile's slope blows up there, so one ulp of u moves the curve by more
    // than any value tolerance.  The repair pass has already pinned them to
    // value crossings, and a sliver of width <= 1e-9 is immaterial to every
    // envelope integral
    if (u <= 1e-9 || u >= 1.0 - 1e-9) continue;
    const double ul = std::max(1e-12, std::min(u, 1.0 - 1e-12));
    const double left = s.c + s.b * ul + (s.lam != 0.0 ? s.lam * env.F(ul) : 0.0);
    const double right = t.c + t.b * ul + (t.lam != 0.0 ? t.lam * env.F.right_value(ul) : 0.0);
    if (right < left - tol * scale) {
      std::ostringstream os;
      os << "assembled envelope derivative is not monotone at u = " << u << " (left " << left
         << " > right " << right << "); the bridge layout does not apply to these parameters";
      throw numeric_error(os.str());
    }
  }
}

/// 33-point scan plus golden refinement: robust extremum of a piecewise
/// smooth function on [lo, hi].
inline std::pair<double, double> scan_min(const std::function<double(double)>& f, double lo,
                                          double hi) {
  const int K = 33;
  double best_x = lo, best_v = f(lo);
  for (int k = 1; k <= K; ++k) {
    const double x = lo + (hi - lo) * double(k) / double(K);
    const double v = f(x);
    if (v < best_v) {
      best_v = v;
      best_x = x;
    }
  }
  const double h = (hi - lo) / double(K);
  const double a = std::max(lo, best_x - h), b = std::min(hi, best_x + h);
  const double xg = golden_min(f, a, b, 1e-13);
  const double vg = f(xg);
  return vg < best_v ? std::make_pair(xg, vg) : std::make_pair(best_x, best_v);
}

struct BridgePoint {
  double t = 0.0;      // tangency (or boundary) location
  double slope = 0.0;  // chord slope
};

/// Bridge leftward over an up-jump of ghat at tau: the chord from the lifted
/// jump value back to the tangency point with the smallest slope.
inline BridgePoint up_bridge(const DistortionFunction& gh, const QuantileFunction& F, double lam,
                             double tau) {
  const double top = tilted_value(gh, F, lam, tau);
  auto chord = [&](double t) {
    const double v = gh(t) + lam * tilt(F, t);
    return (top - v) / (tau - t);
  };
  // search range split at distortion kinks and quantile jumps
  std::vector<double> cuts{0.0};
  for (double t : gh.breakpoints())
    if (t > 0.0 && t < tau) cuts.push_back(t);
  for (double u : F.jump_us()) {
    const double t = 1.0 - u;
    if (t > 0.0 && t < tau) cuts.push_back(t);
  }
  cuts.push_back(std::max(0.0, tau - 1e-11));
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  BridgePoint best{0.0, chord(0.0)};
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    auto [x, v] = scan_min(chord, cuts[i], cuts[i + 1]);
    if (v < best.slope) best = {x, v};
  }
  if (best.t < 1e-12) best.t = 0.0;
  return best;
}

/// Bridge rightward over a down-jump of ghat at tau: the chord from the
/// lifted value before the drop to the tangency point with the largest slope.
inline BridgePoint down_bridge(const DistortionFunction& gh, const QuantileFunction& F, double lam,
                               double tau) {
  const double top = tilted_value(gh, F, lam, tau);
  auto neg_chord = [&](double t) {
    const double v = gh(t) + lam * tilt(F, t);
    return -((v - top) / (t - tau));
  };
  std::vector<double> cuts{std::min(1.0, tau + 1e-11)};
  for (double t : gh.breakpoints())
    if (t > tau && t < 1.0) cuts.push_back(t);
  for (double u : F.jump_us()) {
    const double t = 1.0 - u;
    if (t > tau && t < 1.0) cuts.push_back(t);
  }
  cuts.push_back(1.0);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  BridgePoint best{1.0, -neg_chord(1.0)};
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    auto [x, v] = scan_min(neg_chord, cuts[i], cuts[i + 1]);
    if (-v > best.slope) best = {x, -v};
  }
  if (best.t > 1.0 - 1e-12) best.t = 1.0;
  return best;
}

}  // namespace detail

// ---- threshold solvers (monotone bisection forms) ----

/// Tangency location of the bridge below the jump of the lifted VaR+
/// distortion at 1 - alpha: smallest t with
///   1 + lambda*int_alpha^{1-t} F^{-1} - (1 - alpha - t)*lambda*F^{-1}(1-t) >= 0.
inline double threshold_var_plus(double alpha, double lambda, const QuantileFunction& F) {
  detail::check_level(alpha, "alpha");
  require(lambda >= 0.0, "threshold requires lambda >= 0");
  const double tau = 1.0 - alpha;
  if (lambda == 0.0) return 0.0;
  auto psi = [&](double t) {
    return 1.0 + lambda * F.partial_integral(alpha, 1.0 - t) - (tau - t) * lambda * F(1.0 - t);
  };
  const double hi = tau - 1e-13;
  if (psi(0.0) >= 0.0) return 0.0;
  return bisect_root(psi, 0.0, hi, 1e-14);
}

/// Tangency locations of the two bridges of the lifted inter-quantile-range
/// distortion: {t_low (below the up-jump at alpha), t_high (beyond the
/// down-jump at 1 - alpha)}.
inline std::pair<double, double> threshold_iqd(double alpha, double lambda,
                                               const QuantileFunction& F) {
  detail::check_level(alpha, "alpha");
  require(alpha < 0.5, "iqd requires alpha < 1/2");
  require(lambda >= 0.0, "threshold requires lambda >= 0");
  double t_low = 0.0, t_high = 1.0;
  if (lambda > 0.0) {
    auto psi = [&](double t) {
      return 1.0 + lambda * F.partial_integral(1.0 - alpha, 1.0 - t) -
             (alpha - t) * lambda * F(1.0 - t);
    };
    if (psi(0.0) >= 0.0)
      t_low = 0.0;
    else
      t_low = bisect_root(psi, 0.0, alpha - 1e-13, 1e-14);

    auto psihat = [&](double t) {
      return lambda * F.partial_integral(1.0 - t, alpha) - 1.0 -
             (t - (1.0 - alpha)) * lambda * F(1.0 - t);
    };
    const double lo = 1.0 - alpha + 1e-13;
    if (psihat(1.0) < 0.0)
      t_high = 1.0;
    else if (psihat(lo) >= 0.0)
      t_high = lo;
    else
      t_high = bisect_root(psihat, lo, 1.0, 1e-14);
  }
  return {t_low, t_high};
}

/// Tangency of the bridge past the down-jump of the lifted ES-minus-VaR
/// distortion at 1 - alpha2 (alpha1 < alpha2); in (1 - alpha2, 1].
inline double threshold_es_var(double alpha1, double alpha2, double lambda,
                               const QuantileFunction& F) {
  detail::check_level(alpha1, "alpha1");
  detail::check_level(alpha2, "alpha2");
  require(alpha1 < alpha2, "es_minus_var requires alpha1 < alpha2");
  require(lambda >= 0.0, "threshold requires lambda >= 0");
  const DistortionFunction gh =
      make_distortion(MetricSpec{Family::es_minus_var, alpha1, alpha2, 0, 0, nullptr});
  return detail::down_bridge(gh, F, lambda, 1.0 - alpha2).t;
}

/// Tangency of the bridge below the lifted jump of the usc GlueVaR
/// distortion at 1 - alpha; in [0, 1 - alpha).
inline double threshold_gluevar(double alpha, double beta, double h1, double h2, double lambda,
                                const QuantileFunction& F) {
  require(lambda >= 0.0, "threshold requires lambda >= 0");
  const DistortionFunction gh =
      make_distortion(MetricSpec{Family::gluevar_hat, alpha, beta, h1, h2, nullptr});
  return detail::up_bridge(gh, F, lambda, 1.0 - alpha).t;
}

// ---- concave envelope of the plain distortion ----

namespace detail {

/// Upper convex hull (concave majorant) of points sorted by strictly
/// increasing x; returns indices of the hull vertices.
inline std::vector<std::size_t> upper_hull(const std::vector<double>& x,
                                           const std::vector<double>& y) {
  std::vector<std::size_t> h;
  for (std::size_t i = 0; i < x.size(); ++i) {
    while (h.size() >= 2) {
      const std::size_t a = h[h.size() - 2], b = h[h.size() - 1];
      // pop b when it lies on or below chord a -> i
      const double cross = (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
      if (cross >= 0.0)
        h.pop_back();
      else
        break;
    }
    h.push_back(i);
  }
  return h;
}

}  // namespace detail

/// Concave envelope g* of a distortion.  Exact (vertex hull) for piecewise
/// linear distortions; concave inputs are returned unchanged; a parabola
/// component in a non-concave input falls back to a fine grid hull.
inline DistortionFunction concave_envelope(const DistortionFunction& g, int grid_n = 4096) {
  if (g.concave()) {
    DistortionFunction out = usc_version(g);
    return out;
  }
  std::vector<double> xs, ys;
  if (g.quad() == 0.0) {
    for (const auto& p : g.pieces()) {
      xs.push_back(p.t);
      ys.push_back(std::max({p.left, p.point, p.right}));
    }
  } else {
    std::vector<double> grid = QuantileFunction::refined_grid(grid_n);
    for (double t : g.breakpoints()) grid.push_back(t);
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    for (double t : grid) {
      xs.push_back(t);
      ys.push_back(g.usc_value(t));
    }
  }
  const std::vector<std::size_t> h = detail::upper_hull(xs, ys);
  std::vector<DistortionPiece> ps;
  for (std::size_t j = 0; j < h.size(); ++j) {
    const double t = xs[h[j]], v = ys[h[j]];
    double slope = 0.0;
    if (j + 1 < h.size()) slope = (ys[h[j + 1]] - v) / (xs[h[j + 1]] - t);
    ps.push_back(DistortionPiece{t, v, v, v, slope});
  }
  return DistortionFunction(std::move(ps), ys[h.back()], ShapeHint::concave, 0.0);
}

// ---- envelope derivative construction ----

struct EnvelopeOptions {
  enum class Path { automatic, closed_form, grid };
  Path path = Path::automatic;
  int grid_n = 4096;
};

namespace detail {

/// Append contact segments phi = slope(1-u) + lam F^{-1}(u) for the part of
/// ghat covering t in (t_lo, t_hi), emitted in ascending u order.
inline void append_contact(std::vector<EnvelopeDerivative::Segment>& out,
                           const DistortionFunction& gh, double lam, double t_lo, double t_hi) {
  if (!(t_hi > t_lo)) return;
  const auto& ps = gh.pieces();
  // walk pieces from the last overlapping one downward (u ascending)
  for (std::size_t i = ps.size() - 1; i-- > 0;) {
    const double pl = std::max(t_lo, ps[i].t), pr = std::min(t_hi, ps[i + 1].t);
    if (!(pr > pl)) continue;
    EnvelopeDerivative::Segment s;
    s.lo = 1.0 - pr;
    s.hi = 1.0 - pl;
    s.c = ps[i].slope - gh.quad();
    s.b = 2.0 * gh.quad();
    s.lam = lam;
    out.push_back(s);
  }
}

inline EnvelopeDerivative envelope_concave(const DistortionFunction& gh, const QuantileFunction& F,
                                           double lambda) {
  EnvelopeDerivative env;
  env.F = F;
  env.lambda = lambda;
  append_contact(env.segments, gh, lambda, 0.0, 1.0);
  finalize_envelope(env);
  return env;
}

inline EnvelopeDerivative envelope_named(const DistortionFunction& gh, const QuantileFunction& F,
                                         double lambda) {
  EnvelopeDerivative env;
  env.F = F;
  env.lambda = lambda;
  auto seg_const = [](double lo, double hi, double c) {
    return EnvelopeDerivative::Segment{lo, hi, c, 0.0, 0.0};
  };
  const Family fam = gh.family();
  if (fam == Family::var_plus) {
    const double alpha = gh.fam_alpha(), tau = 1.0 - alpha;
    const BridgePoint br = up_bridge(gh, F, lambda, tau);
    append_contact(env.segments, gh, lambda, tau, 1.0);  // u in (0, alpha)
    env.segments.push_back(seg_const(alpha, 1.0 - br.t, br.slope));
    append_contact(env.segments, gh, lambda, 0.0, br.t);  // u in (1 - t*, 1)
  } else if (fam == Family::iqd_plus) {
    const double alpha = gh.fam_alpha();
    const BridgePoint b_up = up_bridge(gh, F, lambda, alpha);
    const BridgePoint b_dn = down_bridge(gh, F, lambda, 1.0 - alpha);
    append_contact(env.segments, gh, lambda, b_dn.t, 1.0);
    env.segments.push_back(seg_const(1.0 - b_dn.t, alpha, b_dn.slope));
    append_contact(env.segments, gh, lambda, alpha, 1.0 - alpha);
    env.segments.push_back(seg_const(1.0 - alpha, 1.0 - b_up.t, b_up.slope));
    append_contact(env.segments, gh, lambda, 0.0, b_up.t);
  } else if (fam == Family::es_minus_var) {
    const double a2 = gh.fam_beta(), tau = 1.0 - a2;
    const BridgePoint br = down_bridge(gh, F, lambda, tau);
    append_contact(env.segments, gh, lambda, br.t, 1.0);
    env.segments.push_back(seg_const(1.0 - br.t, a2, br.slope));
    append_contact(env.segments, gh, lambda, 0.0, tau);
  } else if (fam == Family::gluevar_hat) {
    const double alpha = gh.fam_alpha(), tau = 1.0 - alpha;
    const BridgePoint br = up_bridge(gh, F, lambda, tau);
    append_contact(env.segments, gh, lambda, tau, 1.0);
    env.segments.push_back(seg_const(alpha, 1.0 - br.t, br.slope));
    append_contact(env.segments, gh, lambda, 0.0, br.t);
  } else {
    throw parameter_error("no closed-form envelope for this family");
  }
  finalize_envelope(env);
  validate_monotone(env);
  return env;
}

inline EnvelopeDerivative envelope_grid(const DistortionFunction& gh, const QuantileFunction& F,
                                        double lambda, int grid_n) {
  // sample the tilted usc distortion on the refined grid plus structural points
  std::vector<double> ts = QuantileFunction::refined_grid(grid_n);
  for (double t : gh.breakpoints()) ts.push_back(t);
  for (double u : F.breakpoints()) ts.push_back(1.0 - u);
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end()), ts.end());

  std::vector<double> ys(ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) ys[i] = tilted_value(gh, F, lambda, ts[i]);

  const std::vector<std::size_t> h = upper_hull(ts, ys);

  EnvelopeDerivative env;
  env.F = F;
  env.lambda = lambda;
  // A facet between adjacent samples whose slope matches the curve slope is a
  // contact stretch: replace the chord by the exact curve derivative.  All
  // other facets are bridge chords and stay constant.
  auto curve_slope = [&](double t) {
    return gh.piece_slope(t) + gh.quad() * (1.0 - 2.0 * t) + lambda * F(1.0 - t);
  };
  auto facet_is_contact = [&](std::size_t a, std::size_t b) {
    if (b != a + 1) return false;
    const double facet = (ys[b] - ys[a]) / (ts[b] - ts[a]);
    const double cs = curve_slope(0.5 * (ts[a] + ts[b]));
    if (!std::isfinite(cs)) return false;
    return std::fabs(facet - cs) <= 1e-7 + 1e-5 * std::fabs(cs);
  };
  // walk hull facets in descending t (ascending u), merging contact runs
  std::size_t j = h.size() - 1;
  while (j > 0) {
    if (facet_is_contact(h[j - 1], h[j])) {
      std::size_t k = j - 1;
      while (k > 0 && facet_is_contact(h[k - 1], h[k])) --k;
      append_contact(env.segments, gh, lambda, ts[h[k]], ts[h[j]]);
      j = k;
    } else {
      const std::size_t a = h[j - 1], b = h[j];
      const double slope = (ys[b] - ys[a]) / (ts[b] - ts[a]);
      env.segments.push_back(
          EnvelopeDerivative::Segment{1.0 - ts[b], 1.0 - ts[a], slope, 0.0, 0.0});
      --j;
    }
  }
  finalize_envelope(env);
  validate_monotone(env, 1e-3);
  return env;
}

}  // namespace detail

/// Derivative of the concave envelope of ghat + lambda * tilt, where ghat is
/// the usc version of g.  Closed forms cover concave distortions and the
/// lifted named families; everything else uses the grid hull.
inline EnvelopeDerivative g_lambda_envelope(const DistortionFunction& g, const QuantileFunction& F,
                                            double lambda, EnvelopeOptions opts = {}) {
  require(lambda >= 0.0 && std::isfinite(lambda), "envelope requires finite lambda >= 0");
  const DistortionFunction gh = usc_version(g);
  using Path = EnvelopeOptions::Path;
  if (opts.path != Path::grid) {
    if (gh.concave()) return detail::envelope_concave(gh, F, lambda);
    const Family fam = gh.family();
    const bool named = fam == Family::var_plus || fam == Family::iqd_plus ||
                       fam == Family::es_minus_var || fam == Family::gluevar_hat;
    bool closed_ok = named;
    if (fam == Family::gluevar_hat) {
      // the single-bridge layout needs a concave run below the jump
      const double s1 = gh.fam_h1() / (1.0 - gh.fam_beta());
      const double s2 = gh.fam_alpha() < gh.fam_beta()
                            ? (gh.fam_h2() - gh.fam_h1()) / (gh.fam_beta() - gh.fam_alpha())
                            : 0.0;
      closed_ok = s1 >= s2 - 1e-12;
    }
    if (closed_ok) return detail::envelope_named(gh, F, lambda);
    if (opts.path == Path::closed_form)
      throw parameter_error("no closed-form envelope path for this distortion");
  }
  return detail::envelope_grid(gh, F, lambda, opts.grid_n);
}

/// Correlation between F^{-1}(V) and (g^*)'(1 - V): the activation constant
/// separating the binding-multiplier regime from the plain moment regime.
inline double c0_correlation(const DistortionFunction& g, const QuantileFunction& F,
                             EnvelopeOptions opts = {}) {
  return g_lambda_envelope(g, F, 0.0, opts).corr_F;
}

/// Worst-case quantile at a given envelope: h(u) = mu + sigma * (phi(u) - a) / b.
inline QuantileFunction h_lambda(const EnvelopeDerivative& env, double mu, double sigma) {
  require(sigma > 0.0, "h_lambda requires sigma > 0");
  if (!(env.b_lambda > 0.0))
    throw regime_error("the envelope derivative is constant; no dispersion-matching quantile exists");
  std::vector<QuantileFunction::Seg> segs;
  for (const auto& s : env.segments) {
    QuantileFunction::Seg q;
    q.lo = s.lo;
    q.hi = s.hi;
    q.c0 = mu + sigma * (s.c - env.a_lambda) / env.b_lambda;
    q.c1 = sigma * s.b / env.b_lambda;
    q.lam = sigma * s.lam / env.b_lambda;
    segs.push_back(q);
  }
  if (!segs.empty()) {
    segs.front().lo = 0.0;
    segs.back().hi = 1.0;
  }
  return QuantileFunction::segments(std::move(segs), env.F);
}

/// Debug dump of the envelope derivative: u, phi(u), and segment kind.
inline void dump_envelope_csv(const std::string& path, const EnvelopeDerivative& env,
                              int precision = 6) {
  std::ofstream out(path);
  if (!out) throw parameter_error("cannot open output file: " + path);
  out << "u,phi,kind\n";
  out.setf(std::ios::fixed);
  out.precision(precision);
  for (const auto& s : env.segments) {
    const char* kind = s.lam != 0.0 ? "contact" : "bridge";
    const int m = 16;
    for (int k = 0; k <= m; ++k) {
      double u = s.lo + (s.hi - s.lo) * double(k) / double(m);
      u = std::min(std::max(u, 1e-9), 1.0 - 1e-9);
      out << u << ',' << (s.c + s.b * u + s.lam * env.F(u)) << ',' << kind << '\n';
    }
  }
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_ENVELOPE_HPP
