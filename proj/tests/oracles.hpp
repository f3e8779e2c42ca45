#ifndef ROBUSTRISK_TESTS_ORACLES_HPP
#define ROBUSTRISK_TESTS_ORACLES_HPP

// Independent reference implementations used to cross-check the library.
// Everything here is deliberately written from first principles (definitions
// and brute-force numerics) rather than reusing the library's closed forms,
// so agreement between the two is meaningful.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "robustrisk/distortion.hpp"
#include "robustrisk/quadrature.hpp"
#include "robustrisk/reference.hpp"

namespace oracles {

using robustrisk::DistortionFunction;
using robustrisk::QuantileFunction;
using robustrisk::WeightFunction;

// ---------------------------------------------------------------------------
// Distribution function recovered from a quantile function by bisection.
// G(x) = sup { u : q(u) <= x }, evaluated on the open unit interval.
inline double cdf_from_quantile(const QuantileFunction& q, double x, double tol = 1e-15) {
  double lo = 0.0, hi = 1.0;
  if (q(1e-14) > x) return 0.0;
  if (q(1.0 - 1e-14) <= x) return 1.0;
  for (int it = 0; it < 100 && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (q(mid) <= x)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Risk metric from the x-space definition
//   rho_g(G) = int_0^inf g(1 - G(x)) dx - int_{-inf}^0 [g(1) - g(1 - G(x))] dx
// computed by graded quadrature between extreme quantiles.  Independent of
// the library's exact Stieltjes evaluation; accuracy ~1e-9 for the smooth
// references used in the tests.
inline double rho_xspace(const DistortionFunction& g, const QuantileFunction& q,
                         double udelta = 1e-12) {
  const double g1 = g(1.0);
  const double xlo = q(udelta), xhi = q(1.0 - udelta);
  std::vector<double> cuts;
  cuts.push_back(0.0);
  // map breakpoints of g and of the quantile into x
  for (double t : g.breakpoints()) {
    const double u = 1.0 - t;
    if (u > udelta && u < 1.0 - udelta) cuts.push_back(q(u));
  }
  for (double u : q.breakpoints())
    if (u > udelta && u < 1.0 - udelta) cuts.push_back(q(u));
  auto f = [&](double x) {
    const double s = 1.0 - cdf_from_quantile(q, x);
    const double gs = g(s);
    return x >= 0.0 ? gs : gs - g1;
  };
  double v = 0.0;
  if (xhi > 0.0) v += robustrisk::integrate_graded(f, std::max(0.0, xlo), xhi, cuts);
  if (xlo < 0.0) v += robustrisk::integrate_graded(f, xlo, std::min(0.0, xhi), cuts);
  return v;
}

// ---------------------------------------------------------------------------
// Risk metric from the u-space definition rho = int_0^1 gamma(u) q(u) du for
// absolutely continuous g, with gamma(u) = g'(1-u) rebuilt directly from the
// pieces (plus the parabola derivative).  Quadrature-based.
inline double rho_uspace(const DistortionFunction& g, const QuantileFunction& q) {
  const auto& ps = g.pieces();
  std::vector<double> cuts;
  for (const auto& p : ps) cuts.push_back(1.0 - p.t);
  for (double u : q.breakpoints()) cuts.push_back(u);
  auto gamma = [&](double u) {
    const double t = 1.0 - u;
    // piece containing t from the left (left derivative of g)
    std::size_t i = 0;
    for (std::size_t k = 0; k + 1 < ps.size(); ++k)
      if (ps[k].t < t) i = k;
    return ps[i].slope + g.quad() * (1.0 - 2.0 * (1.0 - u));
  };
  auto f = [&](double u) { return gamma(u) * q(u); };
  return robustrisk::integrate_graded(f, 0.0, 1.0, cuts);
}

// ---------------------------------------------------------------------------
// Squared 2-Wasserstein distance between quantile functions by quadrature.
inline double wasserstein2_sq(const QuantileFunction& a, const QuantileFunction& b) {
  std::vector<double> cuts;
  for (double u : a.breakpoints()) cuts.push_back(u);
  for (double u : b.breakpoints()) cuts.push_back(u);
  auto f = [&](double u) {
    const double d = a(u) - b(u);
    return d * d;
  };
  return robustrisk::integrate_graded(f, 0.0, 1.0, cuts);
}

// Mean and standard deviation of a quantile function by quadrature.
inline std::pair<double, double> moments(const QuantileFunction& q) {
  std::vector<double> cuts = q.breakpoints();
  const double m = robustrisk::integrate_graded([&](double u) { return q(u); }, 0.0, 1.0, cuts);
  const double s2 = robustrisk::integrate_graded(
      [&](double u) { return (q(u) - m) * (q(u) - m); }, 0.0, 1.0, cuts);
  return {m, std::sqrt(std::max(0.0, s2))};
}

// ---------------------------------------------------------------------------
// Upper concave hull of a sampled curve (Andrew's monotone chain), returning
// the indices of hull vertices in ascending x.  Re-implemented here so hull
// checks do not share code with the envelope construction.
inline std::vector<std::size_t> upper_hull_indices(const std::vector<double>& x,
                                                   const std::vector<double>& y) {
  std::vector<std::size_t> h;
  for (std::size_t i = 0; i < x.size(); ++i) {
    while (h.size() >= 2) {
      const std::size_t a = h[h.size() - 2], b = h[h.size() - 1];
      const double cross =
          (x[b] - x[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (x[i] - x[a]);
      if (cross >= 0.0)
        h.pop_back();  // b lies on or below chord a-i: not a hull vertex
      else
        break;
    }
    h.push_back(i);
  }
  return h;
}

// Value of the upper concave hull of (x, y) samples at point t.
struct DenseHull {
  std::vector<double> x, y;  // hull vertices
  double operator()(double t) const {
    if (t <= x.front()) return y.front();
    if (t >= x.back()) return y.back();
    const std::size_t j =
        std::size_t(std::upper_bound(x.begin(), x.end(), t) - x.begin()) - 1;
    const double w = (t - x[j]) / (x[j + 1] - x[j]);
    return y[j] + w * (y[j + 1] - y[j]);
  }
};

inline DenseHull dense_hull(const std::vector<double>& xs, const std::vector<double>& ys) {
  const std::vector<std::size_t> h = upper_hull_indices(xs, ys);
  DenseHull out;
  for (std::size_t i : h) {
    out.x.push_back(xs[i]);
    out.y.push_back(ys[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pool-adjacent-violators isotonic regression (non-decreasing) with weights.
inline std::vector<double> pava_isotonic(const std::vector<double>& y,
                                         const std::vector<double>& w) {
  struct Block {
    double sum, weight;
    std::size_t count;
  };
  std::vector<Block> st;
  for (std::size_t i = 0; i < y.size(); ++i) {
    Block b{y[i] * w[i], w[i], 1};
    while (!st.empty() && st.back().sum / st.back().weight >= b.sum / b.weight) {
      b.sum += st.back().sum;
      b.weight += st.back().weight;
      b.count += st.back().count;
      st.pop_back();
    }
    st.push_back(b);
  }
  std::vector<double> out;
  out.reserve(y.size());
  for (const Block& b : st)
    out.insert(out.end(), b.count, b.sum / b.weight);
  return out;
}

// ---------------------------------------------------------------------------
// Projection onto the shape-constrained cone on a uniform grid of m cells.
// The cone on cell values v_0..v_{m-1} is
//   second differences <= 0 at knots strictly before the inflection index,
//   second differences >= 0 strictly after it (free change at the knot),
//   non-negative slope on the differences flanking the inflection knot
// (ordering then propagates slope non-negativity everywhere), plus free
// additive constants: every constraint normal is orthogonal to 1, so the
// mean is preserved automatically.
//
// Solved through the cone's generator description: in slope space the cone
// is a pair of monotone chains, so it is generated by ramps min(i, t)/m for
// t up to the inflection index, hinges max(0, i - t + 1)/m past it, and a
// free constant.  The projection is then a nonnegative least-squares fit
// over the generators (Lawson-Hanson active set), which terminates finitely
// and stays fast because the optimum carries one active generator per kink.
// Correctness does not rest on the search: the returned residual re-checks
// the answer against the half-space description of the same cone (cell-wise
// feasibility, residual correlation <= 0 with every generator, residual
// orthogonal to the answer and to constants).  First-order alternatives --
// cyclic projection sweeps and a primal-dual active set on the half-space
// dual -- were measured to stall on second-difference chains at this grid
// size, moving the active set O(1) rows per sweep.
struct GridProjection {
  std::vector<double> v;
  int iterations = 0;
  double kkt_residual = 0.0;  // max of cone-membership violation, residual
                              // correlation, complementarity, and mean drift
};

namespace detail {

struct ConeRow {
  std::size_t i;  // leftmost cell
  int kind;       // 0: v_{i+1} - v_i >= 0; 1: -(second diff) >= 0; 2: + >= 0
};

inline double row_dot(const ConeRow& r, const std::vector<double>& v) {
  if (r.kind == 0) return v[r.i + 1] - v[r.i];
  const double d2 = v[r.i] - 2.0 * v[r.i + 1] + v[r.i + 2];
  return r.kind == 1 ? -d2 : d2;
}

}  // namespace detail

inline GridProjection grid_cone_project(const std::vector<double>& y, std::size_t k_infl,
                                        int max_iter = 500) {
  using detail::ConeRow;
  const std::size_t m = y.size();
  if (m < 3) throw std::runtime_error("cone oracle: need at least 3 cells");
  if (k_infl > m) k_infl = m;
  const double inv_m = 1.0 / double(m);

  double ybar = 0.0;
  for (double t : y) ybar += t;
  ybar *= inv_m;
  std::vector<double> yc(m);
  for (std::size_t i = 0; i < m; ++i) yc[i] = y[i] - ybar;
  double ynorm = 0.0;
  for (double t : yc) ynorm = std::max(ynorm, std::fabs(t));

  // Generator catalogue.  In slope space the ramps are prefix indicators and
  // the hinges suffix indicators, which generate exactly the two monotone
  // slope chains the half-space rows describe.
  struct Gen {
    std::size_t t;
    bool ramp;
  };
  std::vector<Gen> gens;
  for (std::size_t t = 1; t + 1 <= m && t <= k_infl; ++t) gens.push_back({t, true});
  for (std::size_t t = k_infl + 1; t + 1 <= m; ++t) gens.push_back({t, false});
  const std::size_t ng = gens.size();

  // means and centered L2(0,1) norms, closed form
  std::vector<double> gmean(ng), gcnorm(ng);
  for (std::size_t j = 0; j < ng; ++j) {
    const double t = double(gens[j].t);
    double s1, s2;
    if (gens[j].ramp) {
      s1 = t * (t + 1.0) / 2.0 + (double(m) - 1.0 - t) * t;
      s2 = t * (t + 1.0) * (2.0 * t + 1.0) / 6.0 + (double(m) - 1.0 - t) * t * t;
    } else {
      const double L = double(m) - t;
      s1 = L * (L + 1.0) / 2.0;
      s2 = L * (L + 1.0) * (2.0 * L + 1.0) / 6.0;
    }
    gmean[j] = s1 * inv_m * inv_m;
    gcnorm[j] = std::sqrt(std::max(s2 * inv_m * inv_m * inv_m - gmean[j] * gmean[j], 1e-300));
  }

  auto centered_vector = [&](std::size_t j) {
    std::vector<double> out(m);
    const std::size_t t = gens[j].t;
    for (std::size_t i = 0; i < m; ++i) {
      const double raw = gens[j].ramp ? double(std::min(i, t))
                                      : (i + 1 > t ? double(i + 1 - t) : 0.0);
      out[i] = raw * inv_m - gmean[j];
    }
    return out;
  };
  auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += a[i] * b[i];
    return s * inv_m;
  };

  // <r, centered generator> for every generator at once, via prefix sums
  std::vector<double> pre_r(m), pre_ir(m), grad(ng);
  auto gradients = [&](const std::vector<double>& r) {
    double a = 0.0, b = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      a += r[i];
      b += double(i) * r[i];
      pre_r[i] = a;
      pre_ir[i] = b;
    }
    const double ta = a, tb = b;
    for (std::size_t j = 0; j < ng; ++j) {
      const std::size_t t = gens[j].t;
      double raw;
      if (gens[j].ramp)
        raw = pre_ir[t] + double(t) * (ta - pre_r[t]);
      else
        raw = (tb - pre_ir[t - 1]) - (double(t) - 1.0) * (ta - pre_r[t - 1]);
      grad[j] = raw * inv_m * inv_m - gmean[j] * ta * inv_m;
    }
  };

  // Lawson-Hanson state: active generator ids, their centered vectors, the
  // Gram matrix and right-hand side of the active least-squares system.
  std::vector<std::size_t> P;
  std::vector<std::vector<double>> V;
  std::vector<std::vector<double>> gram;
  std::vector<double> rhs, coef;
  std::vector<char> in_p(ng, 0);

  auto solve_ls = [&]() {
    const std::size_t k = P.size();
    std::vector<std::vector<double>> a = gram;
    std::vector<double> z = rhs;
    for (std::size_t p = 0; p < k; ++p) {  // plain Cholesky, tiny systems
      double d = a[p][p];
      for (std::size_t l = 0; l < p; ++l) d -= a[p][l] * a[p][l];
      if (!(d > 1e-15 * (1.0 + gram[p][p])))
        throw std::runtime_error("cone oracle: degenerate active set");
      d = std::sqrt(d);
      a[p][p] = d;
      for (std::size_t q = p + 1; q < k; ++q) {
        double s = a[q][p];
        for (std::size_t l = 0; l < p; ++l) s -= a[q][l] * a[p][l];
        a[q][p] = s / d;
      }
    }
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t l = 0; l < p; ++l) z[p] -= a[p][l] * z[l];
      z[p] /= a[p][p];
    }
    for (std::size_t p = k; p-- > 0;) {
      for (std::size_t q = p + 1; q < k; ++q) z[p] -= a[q][p] * z[q];
      z[p] /= a[p][p];
    }
    return z;
  };
  auto remove_at = [&](std::size_t pos) {
    in_p[P[pos]] = 0;
    P.erase(P.begin() + long(pos));
    V.erase(V.begin() + long(pos));
    rhs.erase(rhs.begin() + long(pos));
    coef.erase(coef.begin() + long(pos));
    gram.erase(gram.begin() + long(pos));
    for (auto& row : gram) row.erase(row.begin() + long(pos));
  };

  const double grad_tol = 1e-12 * (1.0 + ynorm);
  std::vector<double> r = yc;
  GridProjection out;
  for (int it = 0;; ++it) {
    if (it >= max_iter)
      throw std::runtime_error("cone oracle: nonnegative least squares did not converge");
    out.iterations = it + 1;

    gradients(r);
    std::size_t best = ng;
    double best_score = grad_tol;
    for (std::size_t j = 0; j < ng; ++j) {
      if (in_p[j]) continue;
      const double score = grad[j] / gcnorm[j];
      if (score > best_score) {
        best = j;
        best_score = score;
      }
    }
    if (best == ng) break;

    in_p[best] = 1;
    P.push_back(best);
    V.push_back(centered_vector(best));
    rhs.push_back(dot(V.back(), yc));
    coef.push_back(0.0);
    std::vector<double> cross(P.size());
    for (std::size_t p = 0; p < P.size(); ++p) cross[p] = dot(V[p], V.back());
    for (std::size_t p = 0; p + 1 < P.size(); ++p) gram[p].push_back(cross[p]);
    gram.push_back(std::move(cross));

    for (;;) {
      std::vector<double> z = solve_ls();
      double alpha = 2.0;
      for (std::size_t p = 0; p < P.size(); ++p)
        if (z[p] <= 0.0) alpha = std::min(alpha, coef[p] / (coef[p] - z[p]));
      if (alpha > 1.0) {
        coef = std::move(z);
        break;
      }
      for (std::size_t p = 0; p < P.size(); ++p) coef[p] += alpha * (z[p] - coef[p]);
      for (std::size_t p = P.size(); p-- > 0;)
        if (z[p] <= 0.0 && coef[p] <= 1e-13 * (1.0 + ynorm)) remove_at(p);
    }

    r = yc;
    for (std::size_t p = 0; p < P.size(); ++p)
      for (std::size_t i = 0; i < m; ++i) r[i] -= coef[p] * V[p][i];
  }

  // assemble the answer and certify it against the half-space description
  std::vector<double> v(m, ybar);
  for (std::size_t p = 0; p < P.size(); ++p)
    for (std::size_t i = 0; i < m; ++i) v[i] += coef[p] * V[p][i];

  double kkt = 0.0;
  for (std::size_t i = 0; i + 2 < m; ++i) {  // curvature rows
    if (i + 1 < k_infl)
      kkt = std::max(kkt, -detail::row_dot({i, 1}, v));
    else if (i + 1 > k_infl)
      kkt = std::max(kkt, -detail::row_dot({i, 2}, v));
  }
  for (long j = long(k_infl) - 1; j <= long(k_infl); ++j)  // junction slopes
    if (j >= 0 && j + 2 <= long(m)) kkt = std::max(kkt, -detail::row_dot({std::size_t(j), 0}, v));
  gradients(r);
  for (std::size_t j = 0; j < ng; ++j) kkt = std::max(kkt, grad[j]);
  double compl_res = 0.0, mean_res = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    compl_res += r[i] * (v[i] - ybar);
    mean_res += r[i];
  }
  kkt = std::max(kkt, std::fabs(compl_res) * inv_m);
  kkt = std::max(kkt, std::fabs(mean_res) * inv_m);

  out.kkt_residual = kkt;
  out.v = std::move(v);
  return out;
}

// Exact cell averages of a weight function on a uniform m-grid.
inline std::vector<double> cell_averages(const WeightFunction& w, std::size_t m) {
  std::vector<double> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const double lo = double(i) / double(m), hi = double(i + 1) / double(m);
    out[i] = w.integral(lo, hi) / (hi - lo);
  }
  return out;
}

// L2(0,1) distance between two step functions given by cell values on
// uniform grids of possibly different sizes.
inline double step_l2_distance(const std::vector<double>& a, const std::vector<double>& b) {
  const std::size_t m = std::max(a.size(), b.size());
  double s = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double u = (double(i) + 0.5) / double(m);
    const double va = a[std::min(std::size_t(u * double(a.size())), a.size() - 1)];
    const double vb = b[std::min(std::size_t(u * double(b.size())), b.size() - 1)];
    s += (va - vb) * (va - vb) / double(m);
  }
  return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Random piecewise test objects built on the library's deterministic rng.

// Random step weight with at most `maxpieces` pieces; returned as an
// absolutely continuous distortion whose derivative is that step function.
inline DistortionFunction random_step_distortion(robustrisk::rng& r, int maxpieces,
                                                 bool nonneg_slopes = false,
                                                 double amplitude = 1.0,
                                                 double knot_margin = 0.02) {
  const int n = 2 + int(r.next() % std::uint64_t(std::max(1, maxpieces - 1)));
  std::vector<double> ts{0.0, 1.0};
  for (int i = 0; i + 2 < n + 1; ++i)
    ts.push_back(r.uniform(knot_margin, 1.0 - knot_margin));
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end(),
                       [](double a, double b) { return std::fabs(a - b) < 1e-3; }),
           ts.end());
  if (ts.back() != 1.0) ts.push_back(1.0);
  std::vector<robustrisk::DistortionPiece> ps;
  double val = 0.0;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    double slope =
        amplitude * (nonneg_slopes ? r.uniform(0.0, 3.0) : r.uniform(-2.0, 3.0));
    ps.push_back({ts[i], val, val, val, slope});
    val += slope * (ts[i + 1] - ts[i]);
  }
  ps.push_back({1.0, val, val, val, 0.0});
  return DistortionFunction(std::move(ps), val);
}

// Random concave distortion: non-increasing nonnegative slopes.
inline DistortionFunction random_concave_distortion(robustrisk::rng& r, int maxpieces) {
  const int n = 2 + int(r.next() % std::uint64_t(std::max(1, maxpieces - 1)));
  std::vector<double> ts{0.0, 1.0};
  for (int i = 0; i + 2 < n + 1; ++i) ts.push_back(r.uniform(0.05, 0.95));
  std::sort(ts.begin(), ts.end());
  ts.erase(std::unique(ts.begin(), ts.end(),
                       [](double a, double b) { return std::fabs(a - b) < 1e-3; }),
           ts.end());
  if (ts.back() != 1.0) ts.push_back(1.0);
  std::vector<double> slopes(ts.size() - 1);
  double s = r.uniform(1.0, 8.0);
  for (std::size_t i = 0; i < slopes.size(); ++i) {
    slopes[i] = s;
    s *= r.uniform(0.2, 0.95);
  }
  std::vector<robustrisk::DistortionPiece> ps;
  double val = 0.0;
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    ps.push_back({ts[i], val, val, val, slopes[i]});
    val += slopes[i] * (ts[i + 1] - ts[i]);
  }
  ps.push_back({1.0, val, val, val, 0.0});
  return DistortionFunction(std::move(ps), val, robustrisk::ShapeHint::concave);
}

}  // namespace oracles

#endif  // ROBUSTRISK_TESTS_ORACLES_HPP
