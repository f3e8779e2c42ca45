#ifndef ROBUSTRISK_UNIMODAL_HPP
#define ROBUSTRISK_UNIMODAL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "robustrisk/common.hpp"
#include "robustrisk/distortion.hpp"
#include "robustrisk/reference.hpp"
#include "robustrisk/worstcase.hpp"

namespace robustrisk {

/// Inflection constraint for the unimodal quantile cone: members are
/// continuous on (0,1), concave on (0, xi) and convex on (xi, 1).  Either a
/// fixed xi or an interval [xi1, xi2] searched for the worst case.
struct UnimodalCone {
  double xi1 = 0.5, xi2 = 0.5;
  static UnimodalCone fixed(double xi) { return {xi, xi}; }
  static UnimodalCone interval(double a, double b) { return {a, b}; }
  bool is_fixed() const { return xi2 <= xi1; }
  void validate() const {
    require(xi1 >= 0.0 && xi2 <= 1.0 && xi1 <= xi2,
            "inflection constraint requires 0 <= xi1 <= xi2 <= 1");
  }
};

/// L2 projection onto the unimodal cone with inflection xi: a continuous
/// piecewise-linear function with non-increasing slopes before xi and
/// non-decreasing slopes after, all nonnegative.
struct ConeProjection {
  std::vector<double> knots;   // 0 = knots[0] < ... < knots[m] = 1
  std::vector<double> values;  // projected values at the knots
  std::vector<double> slopes;  // per-cell slopes (size m)
  double xi = 0.5;
  double a_hat = 0.0;                // mean of the projection (= mean of input)
  double b_hat = 0.0;                // stdev of the projection
  double residual2 = 0.0;            // squared L2 distance input -> projection
  double discretization_error = 0.0; // L2 norm of (input - its step approximation)
  int iterations = 0;

  double operator()(double u) const {
    if (u <= knots.front()) return values.front();
    if (u >= knots.back()) return values.back();
    std::size_t j = std::size_t(std::upper_bound(knots.begin(), knots.end(), u) -
                                knots.begin()) - 1;
    j = std::min(j, knots.size() - 2);
    return values[j] + slopes[j] * (u - knots[j]);
  }

  /// The projection as a piecewise-linear quantile-like function.
  QuantileFunction as_quantile(double shift = 0.0, double scale = 1.0) const {
    std::vector<double> v(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) v[i] = shift + scale * values[i];
    return QuantileFunction::grid(knots, v);
  }

  /// Exact inner product with a weight function over (0,1).
  double inner_with(const WeightFunction& w) const {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
      const double lo = knots[i], hi = knots[i + 1];
      const double e = values[i] - slopes[i] * lo;
      s += e * w.integral(lo, hi) + slopes[i] * w.t_integral(lo, hi);
    }
    return s;
  }
};

struct ProjectOptions {
  int cells = 512;        // target resolution of the knot grid
  double nnls_tol = 1e-11;
  int max_iterations = 0; // 0 = automatic (10x basis size)
};

namespace detail {

/// Static data for projecting step vectors onto the cone over a fixed knot
/// grid: the nonnegative-coefficient basis is saturating ramps min(u, k_j)
/// for j <= K (concave side) and hinges (u - k_{j-1})+ for j > K (convex
/// side), plus a free intercept handled by centering.
struct ConeWorkspace {
  std::vector<double> knots;  // size m + 1
  std::size_t K = 0;          // xi = knots[K]
  std::size_t m = 0;          // number of cells / basis functions
  std::vector<double> mean_psi;
  std::vector<double> gram;  // m x m, centered

  static double ramp_ramp(double a, double b) {  // a <= b
    return a * a * a / 3.0 + a * 0.5 * (b * b - a * a) + a * b * (1.0 - b);
  }
  static double hinge_hinge(double c, double d) {  // c <= d
    const double w = 1.0 - d;
    return w * w * w / 3.0 + (d - c) * 0.5 * w * w;
  }
  static double ramp_hinge(double a, double c) {
    if (a <= c) return a * 0.5 * sq(1.0 - c);
    return (a * a * a - c * c * c) / 3.0 - c * 0.5 * (a * a - c * c) +
           a * 0.5 * (sq(1.0 - c) - sq(a - c));
  }

  double psi(std::size_t j, double u) const {  // basis j in 1..m
    if (j <= K) return std::min(u, knots[j]);
    return std::max(0.0, u - knots[j - 1]);
  }

  void build(std::vector<double> ks, std::size_t k_index) {
    knots = std::move(ks);
    K = k_index;
    m = knots.size() - 1;
    mean_psi.assign(m + 1, 0.0);
    for (std::size_t j = 1; j <= m; ++j)
      mean_psi[j] = j <= K ? knots[j] - 0.5 * sq(knots[j]) : 0.5 * sq(1.0 - knots[j - 1]);
    gram.assign(m * m, 0.0);
    for (std::size_t j = 1; j <= m; ++j) {
      for (std::size_t k = j; k <= m; ++k) {
        double v;
        if (k <= K)
          v = ramp_ramp(knots[j], knots[k]);
        else if (j <= K)
          v = ramp_hinge(knots[j], knots[k - 1]);
        else
          v = hinge_hinge(knots[j - 1], knots[k - 1]);
        v -= mean_psi[j] * mean_psi[k];
        gram[(j - 1) * m + (k - 1)] = v;
        gram[(k - 1) * m + (j - 1)] = v;
      }
    }
  }

  /// Centered right-hand side <input - mean, psi_j - mean_j> for a step
  /// input given by cell values.
  std::vector<double> rhs(const std::vector<double>& cell_values) const {
    double mean_g = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      mean_g += cell_values[i] * (knots[i + 1] - knots[i]);
    std::vector<double> b(m, 0.0);
    for (std::size_t j = 1; j <= m; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) {
        const double lo = knots[i], hi = knots[i + 1];
        s += cell_values[i] * 0.5 * (psi(j, lo) + psi(j, hi)) * (hi - lo);
      }
      b[j - 1] = s - mean_g * mean_psi[j];
    }
    return b;
  }

  /// Lawson-Hanson nonnegative least squares on the normal equations, with
  /// an incrementally grown Cholesky factor of the active block and optional
  /// warm starting from a previous active set.
  std::vector<double> nnls(const std::vector<double>& b, double tol, int max_iter,
                           int* iterations, std::vector<std::size_t>* warm = nullptr) const {
    std::vector<double> coef(m, 0.0);
    std::vector<bool> active(m, false);
    std::vector<std::size_t> idx;      // active indices, factor row order
    std::vector<double> L(m * m);      // lower-triangular factor, row-major
    double bscale = 1.0;
    for (double x : b) bscale = std::max(bscale, std::fabs(x));
    if (max_iter <= 0) max_iter = 10 * int(m) + 100;

    auto add_index = [&](std::size_t j) {
      const std::size_t k = idx.size();
      double* row = &L[k * m];
      for (std::size_t p = 0; p < k; ++p) row[p] = gram[idx[p] * m + j];
      double dot = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        double s = row[p];
        for (std::size_t l = 0; l < p; ++l) s -= L[p * m + l] * row[l];
        row[p] = s / L[p * m + p];
        dot += row[p] * row[p];
      }
      const double gjj = gram[j * m + j];
      double d2 = gjj - dot;
      const double guard = 1e-12 * (std::fabs(gjj) + 1e-30);
      if (d2 < guard) d2 = guard;  // keep the factor positive definite
      row[k] = std::sqrt(d2);
      idx.push_back(j);
      active[j] = true;
    };
    auto rebuild = [&](const std::vector<std::size_t>& keep) {
      idx.clear();
      std::fill(active.begin(), active.end(), false);
      for (std::size_t j : keep) add_index(j);
    };
    auto solve_active = [&](std::vector<double>& z) {
      const std::size_t k = idx.size();
      z.assign(k, 0.0);
      for (std::size_t p = 0; p < k; ++p) {
        double s = b[idx[p]];
        for (std::size_t l = 0; l < p; ++l) s -= L[p * m + l] * z[l];
        z[p] = s / L[p * m + p];
      }
      for (std::size_t p = k; p-- > 0;) {
        double s = z[p];
        for (std::size_t l = p + 1; l < k; ++l) s -= L[l * m + p] * z[l];
        z[p] = s / L[p * m + p];
      }
    };
    // clip the current unconstrained solution back into the nonnegative
    // orthant, dropping indices that hit zero (inner Lawson-Hanson loop)
    auto inner_clip = [&](int cap) {
      for (int inner = 0; inner < cap; ++inner) {
        std::vector<double> z;
        solve_active(z);
        bool ok = true;
        for (double zz : z)
          if (zz <= 0.0) ok = false;
        if (ok) {
          for (std::size_t p = 0; p < idx.size(); ++p) coef[idx[p]] = z[p];
          return;
        }
        double alpha = 1.0;
        for (std::size_t p = 0; p < idx.size(); ++p)
          if (z[p] <= 0.0) {
            const double cp = coef[idx[p]];
            if (cp - z[p] > 0.0) alpha = std::min(alpha, cp / (cp - z[p]));
          }
        std::vector<std::size_t> kept;
        for (std::size_t p = 0; p < idx.size(); ++p) {
          const std::size_t j = idx[p];
          coef[j] += alpha * (z[p] - coef[j]);
          if (coef[j] <= 1e-15)
            coef[j] = 0.0;
          else
            kept.push_back(j);
        }
        rebuild(kept);
        if (idx.empty()) return;
      }
      throw numeric_error("cone projection inner loop did not converge");
    };

    if (warm)
      for (std::size_t j : *warm)
        if (j < m && !active[j]) add_index(j);
    if (!idx.empty()) inner_clip(max_iter);

    int it = 0;
    for (; it < max_iter; ++it) {
      // gradient of the least-squares objective at the current coefficients
      std::vector<double> w = b;
      for (std::size_t j = 0; j < m; ++j) {
        if (coef[j] == 0.0) continue;
        const double cj = coef[j];
        const double* row = &gram[j * m];
        for (std::size_t i = 0; i < m; ++i) w[i] -= cj * row[i];
      }
      std::size_t best = m;
      double wbest = tol * bscale;
      for (std::size_t j = 0; j < m; ++j)
        if (!active[j] && w[j] > wbest) {
          wbest = w[j];
          best = j;
        }
      if (best == m) break;  // KKT satisfied
      add_index(best);
      inner_clip(max_iter);
    }
    if (it >= max_iter) {
      std::ostringstream os;
      os << "cone projection did not converge after " << it << " iterations ("
         << idx.size() << " active constraints)";
      throw numeric_error(os.str());
    }
    if (iterations) *iterations = it;
    if (warm) *warm = idx;
    return coef;
  }

  /// Assemble the projection for given cell values of the step input.
  ConeProjection project(const std::vector<double>& cell_values, double xi,
                         const ProjectOptions& opts,
                         std::vector<std::size_t>* warm = nullptr) const {
    const std::vector<double> b = rhs(cell_values);
    int iters = 0;
    const std::vector<double> coef = nnls(b, opts.nnls_tol, opts.max_iterations, &iters, warm);

    ConeProjection out;
    out.knots = knots;
    out.xi = xi;
    out.iterations = iters;
    out.slopes.assign(m, 0.0);
    double suffix = 0.0;
    for (std::size_t j = K; j >= 1; --j) {  // ramp side: slope on cells 1..j
      suffix += coef[j - 1];
      out.slopes[j - 1] = suffix;
    }
    double prefix = 0.0;
    for (std::size_t j = K + 1; j <= m; ++j) {  // hinge side: slope on cells j..m
      prefix += coef[j - 1];
      out.slopes[j - 1] = prefix;
    }

    // intercept from the mean constraint
    double mean_g = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      mean_g += cell_values[i] * (knots[i + 1] - knots[i]);
    std::vector<double> cum(m + 1, 0.0);
    for (std::size_t i = 0; i < m; ++i)
      cum[i + 1] = cum[i] + out.slopes[i] * (knots[i + 1] - knots[i]);
    double mean_cum = 0.0;
    for (std::size_t i = 0; i < m; ++i)
      mean_cum += 0.5 * (cum[i] + cum[i + 1]) * (knots[i + 1] - knots[i]);
    const double c0 = mean_g - mean_cum;
    out.values.assign(m + 1, 0.0);
    for (std::size_t i = 0; i <= m; ++i) out.values[i] = c0 + cum[i];

    out.a_hat = mean_g;
    double e2 = 0.0, res = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double len = knots[i + 1] - knots[i];
      const double v0 = out.values[i], v1 = out.values[i + 1];
      e2 += len * (v0 * v0 + v0 * v1 + v1 * v1) / 3.0;
      const double g = cell_values[i];
      const double d0 = v0 - g, d1 = v1 - g;
      res += len * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
    }
    out.b_hat = std::sqrt(std::max(0.0, e2 - mean_g * mean_g));
    out.residual2 = res;
    return out;
  }
};

/// Knot grid: a uniform grid of the requested resolution merged with the
/// weight's own breakpoints and the inflection point.
inline std::vector<double> projection_knots(const std::vector<double>& extra, double xi,
                                            int cells) {
  std::vector<double> ks;
  ks.reserve(std::size_t(cells) + extra.size() + 2);
  for (int i = 0; i <= cells; ++i) ks.push_back(double(i) / double(cells));
  for (double k : extra)
    if (k > 0.0 && k < 1.0) ks.push_back(k);
  if (xi > 0.0 && xi < 1.0) ks.push_back(xi);
  std::sort(ks.begin(), ks.end());
  std::vector<double> out;
  for (double k : ks)
    if (out.empty() || k - out.back() > 1e-12) out.push_back(k);
  out.front() = 0.0;
  out.back() = 1.0;
  return out;
}

inline std::size_t xi_index(const std::vector<double>& knots, double xi) {
  if (xi <= 0.0) return 0;
  if (xi >= 1.0) return knots.size() - 1;
  std::size_t best = 0;
  for (std::size_t i = 0; i < knots.size(); ++i)
    if (std::fabs(knots[i] - xi) < std::fabs(knots[best] - xi)) best = i;
  return best;
}

/// True when the weight is already a member of the cone: continuous with
/// valley-ordered nonnegative piece slopes around xi.
inline bool weight_in_cone(const WeightFunction& w, double xi) {
  const std::size_t n = w.knots.size() - 1;  // pieces
  for (std::size_t j = 0; j + 1 < n; ++j) {
    const double u = w.knots[j + 1];
    const double a = w.c[j] + w.d[j] * u, b = w.c[j + 1] + w.d[j + 1] * u;
    if (std::fabs(a - b) > 1e-12 * (1.0 + std::fabs(a))) return false;
  }
  for (std::size_t j = 0; j < n; ++j) {
    if (w.d[j] < -1e-12) return false;  // a slope below zero breaks monotonicity
    if (j + 1 < n) {
      const double boundary = w.knots[j + 1];
      if (boundary <= xi + 1e-15) {
        if (w.d[j + 1] > w.d[j] + 1e-12) return false;  // concave side
      } else if (w.knots[j] >= xi - 1e-15) {
        if (w.d[j + 1] < w.d[j] - 1e-12) return false;  // convex side
      } else {
        return false;  // piece straddles xi with a kink after it
      }
    }
  }
  return true;
}

inline ConeProjection exact_member_projection(const WeightFunction& w, double xi) {
  ConeProjection out;
  out.knots = w.knots;
  out.xi = xi;
  const std::size_t n = w.knots.size() - 1;
  out.values.assign(n + 1, 0.0);
  out.slopes.assign(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = w.c[j] + w.d[j] * w.knots[j];
    out.slopes[j] = w.d[j];
  }
  out.values[n] = w.c[n - 1] + w.d[n - 1] * 1.0;
  out.a_hat = w.integral(0.0, 1.0);
  out.b_hat = std::sqrt(std::max(0.0, w.square_integral(0.0, 1.0) - sq(out.a_hat)));
  out.residual2 = 0.0;
  out.iterations = 0;
  return out;
}

}  // namespace detail

/// L2 projection of a step weight function onto the unimodal cone with
/// inflection xi keys the finite least-squares problem over the slope chain.
inline ConeProjection project_step(const WeightFunction& gamma, double xi,
                                   ProjectOptions opts = {}) {
  require(gamma.rep == WeightFunction::Rep::step, "project_step requires a step weight");
  require(xi >= 0.0 && xi <= 1.0, "inflection must lie in [0,1]");
  if (detail::weight_in_cone(gamma, xi)) return detail::exact_member_projection(gamma, xi);
  const std::vector<double> ks = detail::projection_knots(gamma.knots, xi, opts.cells);
  std::vector<double> cells(ks.size() - 1);
  for (std::size_t i = 0; i + 1 < ks.size(); ++i)
    cells[i] = gamma.integral(ks[i], ks[i + 1]) / (ks[i + 1] - ks[i]);
  detail::ConeWorkspace ws;
  ws.build(ks, detail::xi_index(ks, xi));
  return ws.project(cells, xi, opts);
}

/// L2 projection of an arbitrary square-integrable weight function: the
/// weight is first replaced by its best step approximation on the knot grid
/// (cell averages), whose projection error is bounded by the approximation
/// error.
inline ConeProjection project(const WeightFunction& gamma, double xi, ProjectOptions opts = {}) {
  require(xi >= 0.0 && xi <= 1.0, "inflection must lie in [0,1]");
  if (gamma.rep != WeightFunction::Rep::step && detail::weight_in_cone(gamma, xi))
    return detail::exact_member_projection(gamma, xi);
  const std::vector<double> ks = detail::projection_knots(gamma.knots, xi, opts.cells);
  std::vector<double> cells(ks.size() - 1);
  double step_sq = 0.0;
  for (std::size_t i = 0; i + 1 < ks.size(); ++i) {
    const double len = ks[i + 1] - ks[i];
    cells[i] = gamma.integral(ks[i], ks[i + 1]) / len;
    step_sq += cells[i] * cells[i] * len;
  }
  detail::ConeWorkspace ws;
  ws.build(ks, detail::xi_index(ks, xi));
  ConeProjection out = ws.project(cells, xi, opts);
  out.discretization_error =
      std::sqrt(std::max(0.0, gamma.square_integral(0.0, 1.0) - step_sq));
  return out;
}

/// CSV dump of (u, weight, projection) for plotting.
inline void dump_projection_csv(const std::string& path, const WeightFunction& gamma,
                                const ConeProjection& proj, int samples = 512,
                                int precision = 6) {
  std::ofstream os(path);
  require(os.good(), "cannot open '" + path + "' for writing");
  os.setf(std::ios::fixed);
  os.precision(precision);
  os << "u,weight,projection\n";
  for (int i = 0; i <= samples; ++i) {
    const double u = double(i) / double(samples);
    os << u << "," << gamma(u) << "," << proj(u) << "\n";
  }
}

/// Worst case of rho_g over distributions with mean mu, stddev sigma, and a
/// unimodal quantile function with inflection xi.
inline BoundResult worst_case_unimodal(const DistortionFunction& g, double mu, double sigma,
                                       double xi, ProjectOptions opts = {}) {
  require(sigma > 0.0 && std::isfinite(mu), "requires finite mu and sigma > 0");
  require(g.continuous(),
          "unimodal bounds require an absolutely continuous distortion; "
          "g is not absolutely continuous (it has jumps)");
  const WeightFunction gamma = weight_of(g);
  const ConeProjection proj = project(gamma, xi, opts);
  BoundResult res;
  res.lambda = 0.0;
  if (proj.b_hat <= 1e-10 * (1.0 + std::fabs(proj.a_hat))) {
    res.value = g.total_at_one() * mu;
    res.regime = Regime::constant_gstar;
    res.attained = false;
    return res;
  }
  res.value = mu * g.total_at_one() + sigma * proj.b_hat;
  res.regime = Regime::boundary_lambda0;
  res.attained = true;
  res.extremal_quantile =
      proj.as_quantile(mu - sigma * proj.a_hat / proj.b_hat, sigma / proj.b_hat);
  return res;
}

/// Feasibility data for the unimodal + Wasserstein uncertainty set.
struct UnimodalFeasibility {
  double threshold = 0.0;  // smallest feasible squared radius
  double c0_hat = 1.0;     // Corr(F^{-1}(V), projected F^{-1}(V))
  ConeProjection f_projection;
};

namespace detail {

/// Shared discretization of (gamma, F^{-1}) used across the lambda search:
/// exact cell averages and first moments of F^{-1}, plus the cone workspace.
struct UnimodalWorkspace {
  std::vector<double> knots;
  std::vector<double> gamma_cells;  // cell averages of the weight
  std::vector<double> f_cells;      // cell averages of F^{-1}
  std::vector<double> PI, PT;       // per-cell int F^{-1} and int u F^{-1}
  ConeWorkspace cone;
  double xi = 0.5;

  void build(const WeightFunction& gamma, const QuantileFunction& F, double xi_in, int cells) {
    xi = xi_in;
    knots = projection_knots(gamma.knots, xi, cells);
    const std::size_t m = knots.size() - 1;
    gamma_cells.assign(m, 0.0);
    f_cells.assign(m, 0.0);
    PI.assign(m, 0.0);
    PT.assign(m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      const double lo = knots[i], hi = knots[i + 1], len = hi - lo;
      gamma_cells[i] = gamma.integral(lo, hi) / len;
      PI[i] = F.partial_integral(lo, hi);
      PT[i] = F.partial_t_integral(lo, hi);
      f_cells[i] = PI[i] / len;
    }
    cone.build(knots, xi_index(knots, xi));
  }

  ConeProjection project_k(double lambda, const ProjectOptions& opts,
                           std::vector<std::size_t>* warm = nullptr) const {
    std::vector<double> cells(gamma_cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i)
      cells[i] = gamma_cells[i] + lambda * f_cells[i];
    return cone.project(cells, xi, opts, warm);
  }

  /// Exact integral of F^{-1} times the piecewise-linear projection.
  double inner_with_F(const ConeProjection& p) const {
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < p.knots.size(); ++i) {
      const double lo = p.knots[i];
      const double e = p.values[i] - p.slopes[i] * lo;
      s += e * PI[i] + p.slopes[i] * PT[i];
    }
    return s;
  }
};

}  // namespace detail

/// Projection of the reference quantile onto the cone, the induced
/// correlation, and the smallest feasible squared Wasserstein radius.
inline UnimodalFeasibility unimodal_wasserstein_feasibility(const QuantileFunction& F, double mu,
                                                            double sigma, double xi,
                                                            ProjectOptions opts = {}) {
  require(sigma > 0.0 && std::isfinite(mu), "requires finite mu and sigma > 0");
  const double muF = F.mean(), sdF = F.stddev();
  const std::vector<double> ks = detail::projection_knots({}, xi, opts.cells);
  const std::size_t m = ks.size() - 1;
  std::vector<double> cells(m), PI(m), PT(m);
  for (std::size_t i = 0; i < m; ++i) {
    PI[i] = F.partial_integral(ks[i], ks[i + 1]);
    PT[i] = F.partial_t_integral(ks[i], ks[i + 1]);
    cells[i] = PI[i] / (ks[i + 1] - ks[i]);
  }
  detail::ConeWorkspace ws;
  ws.build(ks, detail::xi_index(ks, xi));
  UnimodalFeasibility out;
  out.f_projection = ws.project(cells, xi, opts);
  const ConeProjection& p = out.f_projection;
  require(p.b_hat > 1e-12 * (1.0 + std::fabs(p.a_hat)),
          "projected reference quantile is constant; the unimodal set is degenerate");
  double ip = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double e = p.values[i] - p.slopes[i] * ks[i];
    ip += e * PI[i] + p.slopes[i] * PT[i];
  }
  const double cov = ip - muF * p.a_hat;
  out.c0_hat = std::clamp(cov / (sdF * p.b_hat), -1.0, 1.0);
  out.threshold = sq(muF - mu) + sq(sdF - sigma) + 2.0 * sdF * sigma * (1.0 - out.c0_hat);
  return out;
}

struct UnimodalWassersteinOptions {
  ProjectOptions proj;
  double lambda_rel_tol = 1e-10;
  int max_bisect = 200;
  double boundary_tie_tol = 1e-10;
  UnimodalWassersteinOptions() { proj.cells = 256; }
};

/// Worst case of rho_g over the Wasserstein-ball uncertainty set restricted
/// to unimodal quantile functions with inflection xi.
inline BoundResult worst_case_unimodal_wasserstein(const DistortionFunction& g,
                                                   const MomentWassersteinSet& set, double xi,
                                                   UnimodalWassersteinOptions opts = {}) {
  set.validate();
  require(g.continuous(),
          "unimodal bounds require an absolutely continuous distortion; "
          "g is not absolutely continuous (it has jumps)");
  const WeightFunction gamma = weight_of(g);
  const double g1 = g.total_at_one();
  const double muF = set.F.mean(), sdF = set.F.stddev();
  const double floor_eps = set.min_epsilon();

  if (!std::isfinite(set.epsilon))
    return worst_case_unimodal(g, set.mu, set.sigma, xi, opts.proj);

  const UnimodalFeasibility feas =
      unimodal_wasserstein_feasibility(set.F, set.mu, set.sigma, xi, opts.proj);
  if (set.epsilon < feas.threshold - 1e-12 * (1.0 + feas.threshold)) {
    std::ostringstream os;
    os << "infeasible unimodal uncertainty set: epsilon = " << set.epsilon
       << " is below the unimodal threshold " << feas.threshold;
    throw infeasibility_error(os.str(), feas.threshold);
  }
  BoundResult res;
  if (set.epsilon <= feas.threshold + 1e-12 * (1.0 + feas.threshold)) {
    // the set collapses to a single rescaled projection of the reference
    const ConeProjection& p = feas.f_projection;
    QuantileFunction H =
        p.as_quantile(set.mu - set.sigma * p.a_hat / p.b_hat, set.sigma / p.b_hat);
    res.value = rho(g, H);
    res.lambda = kInf;
    res.regime = Regime::comonotone_boundary;
    res.attained = true;
    res.extremal_quantile = std::move(H);
    return res;
  }

  detail::UnimodalWorkspace ws;
  ws.build(gamma, set.F, xi, opts.proj.cells);

  const ConeProjection proj0 = ws.cone.project(ws.gamma_cells, xi, opts.proj);
  const bool flat0 = proj0.b_hat <= 1e-10 * (1.0 + std::fabs(proj0.a_hat));
  if (!flat0) {
    const double c1 =
        std::clamp((ws.inner_with_F(proj0) - muF * proj0.a_hat) / (sdF * proj0.b_hat), -1.0, 1.0);
    const double eps_up = floor_eps + 2.0 * set.sigma * sdF * (1.0 - c1);
    if (set.epsilon >= eps_up - opts.boundary_tie_tol * (1.0 + eps_up))
      return worst_case_unimodal(g, set.mu, set.sigma, xi, opts.proj);
  }

  // interior: bisect lambda so the projected tilt meets the ball boundary
  const double target = 1.0 - (set.epsilon - floor_eps) / (2.0 * set.sigma * sdF);
  std::vector<std::size_t> warm;
  auto corr_at = [&](double lam, ConeProjection* keep) -> std::optional<double> {
    ConeProjection p = ws.project_k(lam, opts.proj, &warm);
    if (p.b_hat <= 1e-12 * (1.0 + std::fabs(p.a_hat))) return std::nullopt;
    const double c =
        std::clamp((ws.inner_with_F(p) - muF * p.a_hat) / (sdF * p.b_hat), -1.0, 1.0);
    if (keep) *keep = std::move(p);
    return c;
  };
  double lam_lo = 0.0, lam_hi = 1.0;
  std::optional<double> c_hi;
  for (int it = 0; it < 200; ++it) {
    c_hi = corr_at(lam_hi, nullptr);
    if (c_hi && *c_hi >= target) break;
    lam_hi *= 2.0;
    if (lam_hi > 1e100) throw numeric_error("unimodal multiplier bracket diverged");
  }
  if (!c_hi || *c_hi < target)
    throw numeric_error("failed to bracket the unimodal Wasserstein multiplier");
  for (int it = 0; it < opts.max_bisect; ++it) {
    const double mid = 0.5 * (lam_lo + lam_hi);
    if (lam_hi - lam_lo <= opts.lambda_rel_tol * std::max(1.0, mid)) break;
    const std::optional<double> cm = corr_at(mid, nullptr);
    if (cm && *cm >= target)
      lam_hi = mid;
    else
      lam_lo = mid;
  }
  const double lam = 0.5 * (lam_lo + lam_hi);
  ConeProjection pk;
  const std::optional<double> ck = corr_at(lam, &pk);
  if (!ck) throw regime_error("projected tilt degenerate at the solved multiplier");

  const double a_lam = pk.a_hat;  // = g(1) + lambda * mean(F^{-1}) up to discretization
  const double d2 = floor_eps + 2.0 * set.sigma * sdF * (1.0 - *ck);
  if (std::fabs(d2 - set.epsilon) > 1e-6 * (1.0 + set.epsilon))
    res.diagnostics.push_back("wasserstein residual above tolerance at solved multiplier");
  res.value = set.mu * g1 + set.sigma / pk.b_hat * (pk.inner_with(gamma) - g1 * a_lam);
  res.lambda = lam;
  res.regime = Regime::interior;
  res.attained = true;
  res.extremal_quantile =
      pk.as_quantile(set.mu - set.sigma * a_lam / pk.b_hat, set.sigma / pk.b_hat);
  return res;
}

/// Worst case when only an inflection interval is known: sweep a Chebyshev
/// grid over [xi1, xi2], refine around the best point, and report the
/// maximizing (smallest, on ties) inflection.
inline BoundResult worst_case_interval_inflection(const DistortionFunction& g, double mu,
                                                  double sigma, double xi1, double xi2,
                                                  const std::optional<MomentWassersteinSet>& set =
                                                      std::nullopt,
                                                  UnimodalWassersteinOptions opts = {}) {
  UnimodalCone cone = UnimodalCone::interval(xi1, xi2);
  cone.validate();
  auto eval = [&](double xi) -> std::optional<BoundResult> {
    try {
      if (set) return worst_case_unimodal_wasserstein(g, *set, xi, opts);
      return worst_case_unimodal(g, mu, sigma, xi, opts.proj);
    } catch (const infeasibility_error&) {
      return std::nullopt;
    }
  };

  std::vector<double> xs;
  if (xi2 - xi1 < 1e-12) {
    xs.push_back(xi1);
  } else {
    const int n = 33;
    for (int i = 0; i < n; ++i) {
      const double c = std::cos(kPi * (2.0 * i + 1.0) / (2.0 * n));
      xs.push_back(0.5 * (xi1 + xi2) + 0.5 * (xi2 - xi1) * c);
    }
    xs.push_back(xi1);
    xs.push_back(xi2);
    std::sort(xs.begin(), xs.end());
  }

  std::vector<std::pair<double, double>> vals;  // (xi, value)
  double infeas_min = kInf;
  for (double xi : xs) {
    auto r = eval(xi);
    if (r) vals.emplace_back(xi, r->value);
  }
  if (vals.empty()) {
    // every inflection infeasible: report the smallest threshold observed
    for (double xi : xs) {
      try {
        if (set) worst_case_unimodal_wasserstein(g, *set, xi, opts);
      } catch (const infeasibility_error& e) {
        infeas_min = std::min(infeas_min, e.threshold());
      }
    }
    throw infeasibility_error("no inflection in the interval is feasible", infeas_min);
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < vals.size(); ++i)
    if (vals[i].second > vals[best].second) best = i;

  // golden refinement between the neighbors of the best grid point
  if (xs.size() > 1) {
    double lo = best > 0 ? vals[best - 1].first : vals[best].first;
    double hi = best + 1 < vals.size() ? vals[best + 1].first : vals[best].first;
    if (hi > lo + 1e-10) {
      const double xg = golden_min(
          [&](double xi) {
            auto r = eval(xi);
            return r ? -r->value : kInf;
          },
          lo, hi, 1e-6);
      auto rg = eval(xg);
      if (rg && rg->value > vals[best].second) vals[best] = {xg, rg->value};
    }
  }

  // smallest maximizing xi within tie tolerance
  const double top = vals[best].second;
  double xi_star = vals[best].first;
  bool tie = false;
  for (const auto& [xi, v] : vals)
    if (v >= top - 1e-8 * (1.0 + std::fabs(top))) {
      if (xi < xi_star - 1e-12) {
        xi_star = xi;
        tie = true;
      } else if (std::fabs(xi - xi_star) > 1e-12) {
        tie = true;
      }
    }

  auto final_res = eval(xi_star);
  require(bool(final_res), "inflection sweep lost feasibility at the chosen point");
  BoundResult out = std::move(*final_res);
  {
    std::ostringstream os;
    os.precision(12);
    os << "inflection=" << xi_star;
    out.diagnostics.push_back(os.str());
    if (tie) out.diagnostics.push_back("inflection maximizer tied within 1e-8; smallest chosen");
  }
  return out;
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_UNIMODAL_HPP
