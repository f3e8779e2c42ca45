#ifndef ROBUSTRISK_QUADRATURE_HPP
#define ROBUSTRISK_QUADRATURE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "robustrisk/common.hpp"

namespace robustrisk {

/// Gauss-Legendre rule on [-1, 1].  Nodes are found by Newton iteration on
/// the Legendre polynomial, seeded with the Chebyshev approximation; this is
/// accurate to machine precision for the orders used here.
struct gauss_legendre {
  std::vector<double> nodes;    // ascending in (-1, 1)
  std::vector<double> weights;  // positive, sum to 2

  explicit gauss_legendre(int n = 64) {
    nodes.resize(n);
    weights.resize(n);
    for (int i = 0; i < (n + 1) / 2; ++i) {
      // Chebyshev-based initial guess for the i-th root (descending order).
      double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
      double pp = 0.0;
      for (int it = 0; it < 100; ++it) {
        // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
        double p0 = 1.0, p1 = x;
        for (int k = 2; k <= n; ++k) {
          double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
          p0 = p1;
          p1 = p2;
        }
        pp = n * (x * p1 - p0) / (x * x - 1.0);
        double dx = p1 / pp;
        x -= dx;
        if (std::fabs(dx) < 1e-16) break;
      }
      nodes[i] = -x;
      nodes[n - 1 - i] = x;
      double w = 2.0 / ((1.0 - x * x) * pp * pp);
      weights[i] = w;
      weights[n - 1 - i] = w;
    }
  }

  /// Integral of f over [a, b] with a single panel.
  double panel(const std::function<double(double)>& f, double a, double b) const {
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    double s = 0.0;
    for (std::size_t i = 0; i < nodes.size(); ++i) s += weights[i] * f(mid + half * nodes[i]);
    return s * half;
  }
};

inline const gauss_legendre& default_rule() {
  static const gauss_legendre rule(64);
  return rule;
}

/// Integrate f over [a, b] with one Gauss-Legendre panel per sub-interval of
/// the breakpoint-aligned partition.  Breakpoints outside (a, b) are ignored.
inline double integrate_piecewise(const std::function<double(double)>& f, double a, double b,
                                  const std::vector<double>& breakpoints = {}) {
  if (!(b > a)) return 0.0;
  std::vector<double> cuts;
  cuts.push_back(a);
  for (double t : breakpoints)
    if (t > a && t < b) cuts.push_back(t);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  double s = 0.0;
  const auto& rule = default_rule();
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i)
    if (cuts[i + 1] > cuts[i]) s += rule.panel(f, cuts[i], cuts[i + 1]);
  return s;
}

/// Integrate f over [a, b] splitting each piece dyadically toward both
/// endpoints down to width `edge` (relative to the piece).  Used for
/// integrands with integrable endpoint singularities.
inline double integrate_graded(const std::function<double(double)>& f, double a, double b,
                               const std::vector<double>& breakpoints = {}, double edge = 1e-13,
                               int levels = 44) {
  if (!(b > a)) return 0.0;
  std::vector<double> cuts;
  cuts.push_back(a);
  for (double t : breakpoints)
    if (t > a && t < b) cuts.push_back(t);
  cuts.push_back(b);
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  // Build a graded mesh: geometric refinement toward every cut.
  std::vector<double> mesh;
  for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
    const double l = cuts[i], r = cuts[i + 1], w = r - l;
    if (!(w > 0.0)) continue;
    mesh.push_back(l);
    double step = 0.5 * w;
    std::vector<double> left, right;
    for (int k = 0; k < levels && step > edge * w; ++k) {
      left.push_back(l + step);
      right.push_back(r - step);
      step *= 0.5;
    }
    // left side descending offsets, right side ascending
    for (auto it = left.begin(); it != left.end(); ++it) mesh.push_back(*it);
    std::sort(mesh.end() - left.size(), mesh.end());
    std::sort(right.begin(), right.end());
    for (double x : right)
      if (x > mesh.back()) mesh.push_back(x);
    mesh.push_back(r);
  }
  mesh.erase(std::unique(mesh.begin(), mesh.end()), mesh.end());

  double s = 0.0;
  const auto& rule = default_rule();
  for (std::size_t i = 0; i + 1 < mesh.size(); ++i)
    if (mesh[i + 1] > mesh[i]) s += rule.panel(f, mesh[i], mesh[i + 1]);
  return s;
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_QUADRATURE_HPP
