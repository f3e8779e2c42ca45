#ifndef ROBUSTRISK_REFERENCE_HPP
#define ROBUSTRISK_REFERENCE_HPP

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "robustrisk/common.hpp"
#include "robustrisk/quadrature.hpp"

namespace robustrisk {

/// Left-continuous quantile function of a finite-variance distribution on R.
///
/// Supported kinds:
///  - normal(mu, sigma), student_t(nu, loc, scale) with nu > 2, uniform(lo, hi)
///  - empirical: equal-weight sample, steps on ((i-1)/n, i/n]
///  - grid: continuous piecewise-linear interpolation of (u, value) knots,
///    constant beyond the first/last knot
///  - segments: piecewise  c0 + c1*u + lam*base(u)  on (lo, hi]; closed under
///    the transformations produced by the envelope machinery
///
/// All partial moments (integrals of q, q^2 and u*q over [a, b]) are analytic
/// except u*q for Student-t, which falls back to graded quadrature with an
/// exact tail correction.
class QuantileFunction {
 public:
  enum class Kind { normal, student_t, uniform, empirical, grid, segments };

  struct Seg {
    double lo = 0.0, hi = 1.0;  // active on (lo, hi]
    double c0 = 0.0, c1 = 0.0;  // affine part c0 + c1*u
    double lam = 0.0;           // coefficient of base(u)
  };

  // ---- factories ----

  static QuantileFunction normal(double mu, double sigma) {
    require(sigma > 0.0 && std::isfinite(mu) && std::isfinite(sigma),
            "normal reference requires finite mu and sigma > 0");
    QuantileFunction q;
    q.kind_ = Kind::normal;
    q.p1_ = mu;
    q.p2_ = sigma;
    q.finish();
    return q;
  }

  static QuantileFunction student_t(double nu, double loc = 0.0, double scale = 1.0) {
    require(nu > 2.0, "student_t reference requires nu > 2 for a finite variance");
    require(scale > 0.0 && std::isfinite(loc), "student_t requires finite loc and scale > 0");
    QuantileFunction q;
    q.kind_ = Kind::student_t;
    q.p1_ = loc;
    q.p2_ = scale;
    q.nu_ = nu;
    q.finish();
    return q;
  }

  static QuantileFunction uniform(double lo, double hi) {
    require(hi > lo, "uniform reference requires hi > lo");
    QuantileFunction q;
    q.kind_ = Kind::uniform;
    q.p1_ = lo;
    q.p2_ = hi;
    q.finish();
    return q;
  }

  /// Equal-weight sample; values are sorted internally.
  static QuantileFunction empirical(std::vector<double> values) {
    require(!values.empty(), "empirical reference requires at least one observation");
    for (double v : values) require_finite(v, "empirical observation");
    std::sort(values.begin(), values.end());
    QuantileFunction q;
    q.kind_ = Kind::empirical;
    q.vals_ = std::move(values);
    q.finish();
    return q;
  }

  /// Piecewise-linear quantile through knots (us[i], vals[i]) in [0, 1];
  /// constant beyond the first and last knots.
  static QuantileFunction grid(std::vector<double> us, std::vector<double> vals) {
    require(us.size() == vals.size() && us.size() >= 2, "grid reference requires matching knot arrays");
    for (std::size_t i = 0; i < us.size(); ++i) {
      require(us[i] >= 0.0 && us[i] <= 1.0, "grid knots must lie in [0,1]");
      require_finite(vals[i], "grid value");
      if (i) {
        require(us[i] > us[i - 1], "grid knots must be strictly increasing");
        require(vals[i] >= vals[i - 1] - 1e-12 * (1.0 + std::fabs(vals[i])),
                "grid values must be non-decreasing");
      }
    }
    QuantileFunction q;
    q.kind_ = Kind::grid;
    q.us_ = std::move(us);
    q.vals_ = std::move(vals);
    for (std::size_t i = 1; i < q.vals_.size(); ++i) q.vals_[i] = std::max(q.vals_[i], q.vals_[i - 1]);
    q.finish();
    return q;
  }

  /// Values of an existing quantile sampled on the standard refined grid.
  static QuantileFunction grid_of(const QuantileFunction& q, int n = 4096) {
    const std::vector<double> g = refined_grid(n);
    std::vector<double> us, vs;
    us.reserve(g.size());
    vs.reserve(g.size());
    for (double u : g) {
      const double uu = std::min(std::max(u, 1e-9), 1.0 - 1e-9);
      if (!us.empty() && uu <= us.back()) continue;
      us.push_back(uu);
      vs.push_back(q(uu));
    }
    return grid(std::move(us), std::move(vs));
  }

  /// Piecewise combination of affine terms and a scaled base quantile.
  static QuantileFunction segments(std::vector<Seg> segs, QuantileFunction base) {
    require(!segs.empty(), "segments reference requires at least one piece");
    std::sort(segs.begin(), segs.end(), [](const Seg& a, const Seg& b) { return a.lo < b.lo; });
    require(std::fabs(segs.front().lo) < 1e-14 && std::fabs(segs.back().hi - 1.0) < 1e-14,
            "segments must cover (0,1)");
    for (std::size_t i = 0; i + 1 < segs.size(); ++i)
      require(std::fabs(segs[i].hi - segs[i + 1].lo) < 1e-14, "segments must be contiguous");
    QuantileFunction q;
    q.kind_ = Kind::segments;
    q.segs_ = std::move(segs);
    q.base_ = std::make_shared<QuantileFunction>(std::move(base));
    q.finish();
    return q;
  }

  /// shift + scale * q, with scale >= 0.
  QuantileFunction affine(double shift, double scale) const {
    require(scale >= 0.0, "affine transform of a quantile requires scale >= 0");
    require_finite(shift, "affine shift");
    QuantileFunction q(*this);
    switch (kind_) {
      case Kind::normal:
      case Kind::student_t:
        if (scale == 0.0) return degenerate(shift);
        q.p1_ = shift + scale * p1_;
        q.p2_ = scale * p2_;
        break;
      case Kind::uniform:
        if (scale == 0.0) return degenerate(shift);
        q.p1_ = shift + scale * p1_;
        q.p2_ = shift + scale * p2_;
        break;
      case Kind::empirical:
      case Kind::grid:
        for (double& v : q.vals_) v = shift + scale * v;
        break;
      case Kind::segments:
        for (Seg& s : q.segs_) {
          s.c0 = shift + scale * s.c0;
          s.c1 *= scale;
          s.lam *= scale;
        }
        break;
    }
    q.finish();
    return q;
  }

  static QuantileFunction degenerate(double v) { return empirical(std::vector<double>{v}); }

  Kind kind() const { return kind_; }

  // ---- evaluation ----

  /// Left-continuous value at u in (0, 1]; u <= 0 gives the lower essential
  /// bound (possibly -inf), u >= 1 the upper (possibly +inf).
  double operator()(double u) const {
    if (u <= 0.0) return lower_bound_value();
    if (u >= 1.0) {
      if (kind_ == Kind::normal || kind_ == Kind::student_t) return kInf;
      u = 1.0;
    }
    switch (kind_) {
      case Kind::normal:
        if (u >= 1.0) return kInf;
        return p1_ + p2_ * normal_quantile(u);
      case Kind::student_t:
        if (u >= 1.0) return kInf;
        return p1_ + p2_ * student_quantile(u);
      case Kind::uniform:
        return p1_ + (p2_ - p1_) * u;
      case Kind::empirical: {
        const std::size_t n = vals_.size();
        double x = u * double(n);
        std::size_t i = std::size_t(std::ceil(x - 1e-12));
        if (i < 1) i = 1;
        if (i > n) i = n;
        return vals_[i - 1];
      }
      case Kind::grid:
        return grid_value(u);
      case Kind::segments: {
        // first segment with hi >= u (left continuity: boundary belongs left)
        std::size_t k = seg_index_left(u);
        const Seg& s = segs_[k];
        double b = s.lam != 0.0 ? (*base_)(u) : 0.0;
        return s.c0 + s.c1 * u + s.lam * b;
      }
    }
    return kNaN;
  }

  /// Right limit at u in [0, 1).
  double right_value(double u) const {
    if (u >= 1.0) return (*this)(1.0);
    if (u < 0.0) u = 0.0;
    switch (kind_) {
      case Kind::normal:
      case Kind::student_t:
      case Kind::uniform:
      case Kind::grid:
        return u <= 0.0 ? lower_bound_value() : (*this)(u);
      case Kind::empirical: {
        const std::size_t n = vals_.size();
        double x = u * double(n);
        std::size_t i = std::size_t(std::floor(x + 1e-12));  // cell (i/n, (i+1)/n]
        if (i >= n) i = n - 1;
        return vals_[i];
      }
      case Kind::segments: {
        std::size_t k = seg_index_right(u);
        const Seg& s = segs_[k];
        double b = s.lam != 0.0 ? base_->right_value(u) : 0.0;
        return s.c0 + s.c1 * u + s.lam * b;
      }
    }
    return kNaN;
  }

  // ---- partial moments ----

  /// Integral of q over [a, b], 0 <= a <= b <= 1.  Analytic for every kind.
  double partial_integral(double a, double b) const {
    clip(a, b);
    if (!(b > a)) return 0.0;
    switch (kind_) {
      case Kind::normal:
        return p1_ * (b - a) + p2_ * (phi_of_q(a) - phi_of_q(b));
      case Kind::student_t:
        return p1_ * (b - a) + p2_ * (t_I1(b) - t_I1(a));
      case Kind::uniform:
        return p1_ * (b - a) + (p2_ - p1_) * 0.5 * (b * b - a * a);
      case Kind::empirical: {
        const std::size_t n = vals_.size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          if (double(i) / n >= b) break;
          const double l = std::max(a, double(i) / n), r = std::min(b, double(i + 1) / n);
          if (r > l) s += vals_[i] * (r - l);
        }
        return s;
      }
      case Kind::grid:
        return grid_moment(a, b, 0);
      case Kind::segments: {
        double s = 0.0;
        for (const Seg& sg : segs_) {
          const double l = std::max(a, sg.lo), r = std::min(b, sg.hi);
          if (!(r > l)) continue;
          s += sg.c0 * (r - l) + sg.c1 * 0.5 * (r * r - l * l);
          if (sg.lam != 0.0) s += sg.lam * base_->partial_integral(l, r);
        }
        return s;
      }
    }
    return kNaN;
  }

  /// Integral of q^2 over [a, b].
  double partial_square_integral(double a, double b) const {
    clip(a, b);
    if (!(b > a)) return 0.0;
    switch (kind_) {
      case Kind::normal: {
        // q^2 = mu^2 + 2 mu sigma z + sigma^2 z^2 with z = Phi^{-1}(u)
        const double i1 = phi_of_q(a) - phi_of_q(b);
        const double i2 = (b - phiq_x(b)) - (a - phiq_x(a));  // int z^2 phi = Phi(x) - x phi(x)
        return p1_ * p1_ * (b - a) + 2.0 * p1_ * p2_ * i1 + p2_ * p2_ * i2;
      }
      case Kind::student_t: {
        const double i1 = t_I1(b) - t_I1(a);
        const double i2 = t_I2(b) - t_I2(a);
        return p1_ * p1_ * (b - a) + 2.0 * p1_ * p2_ * i1 + p2_ * p2_ * i2;
      }
      case Kind::uniform: {
        const double d = p2_ - p1_;
        return p1_ * p1_ * (b - a) + p1_ * d * (b * b - a * a) + d * d * (b * b * b - a * a * a) / 3.0;
      }
      case Kind::empirical: {
        const std::size_t n = vals_.size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double l = std::max(a, double(i) / n), r = std::min(b, double(i + 1) / n);
          if (r > l) s += vals_[i] * vals_[i] * (r - l);
        }
        return s;
      }
      case Kind::grid:
        return grid_moment(a, b, 2);
      case Kind::segments: {
        double s = 0.0;
        for (const Seg& sg : segs_) {
          const double l = std::max(a, sg.lo), r = std::min(b, sg.hi);
          if (!(r > l)) continue;
          s += sg.c0 * sg.c0 * (r - l) + sg.c0 * sg.c1 * (r * r - l * l) +
               sg.c1 * sg.c1 * (r * r * r - l * l * l) / 3.0;
          if (sg.lam != 0.0) {
            s += 2.0 * sg.lam * (sg.c0 * base_->partial_integral(l, r) + sg.c1 * base_->partial_t_integral(l, r));
            s += sg.lam * sg.lam * base_->partial_square_integral(l, r);
          }
        }
        return s;
      }
    }
    return kNaN;
  }

  /// Integral of u * q(u) over [a, b].
  double partial_t_integral(double a, double b) const {
    clip(a, b);
    if (!(b > a)) return 0.0;
    switch (kind_) {
      case Kind::normal: {
        // int u z(u) du = [ -Phi(x) phi(x) + Phi(x sqrt 2) / (2 sqrt pi) ]
        const double vb = -b * phiq_x_pdf(b) + Phi_sqrt2(b);
        const double va = -a * phiq_x_pdf(a) + Phi_sqrt2(a);
        return p1_ * 0.5 * (b * b - a * a) + p2_ * (vb - va);
      }
      case Kind::uniform: {
        const double d = p2_ - p1_;
        return p1_ * 0.5 * (b * b - a * a) + d * (b * b * b - a * a * a) / 3.0;
      }
      case Kind::empirical: {
        const std::size_t n = vals_.size();
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double l = std::max(a, double(i) / n), r = std::min(b, double(i + 1) / n);
          if (r > l) s += vals_[i] * 0.5 * (r * r - l * l);
        }
        return s;
      }
      case Kind::grid:
        return grid_moment(a, b, 1);
      case Kind::segments: {
        double s = 0.0;
        for (const Seg& sg : segs_) {
          const double l = std::max(a, sg.lo), r = std::min(b, sg.hi);
          if (!(r > l)) continue;
          s += sg.c0 * 0.5 * (r * r - l * l) + sg.c1 * (r * r * r - l * l * l) / 3.0;
          if (sg.lam != 0.0) s += sg.lam * base_->partial_t_integral(l, r);
        }
        return s;
      }
      case Kind::student_t: {
        // Graded quadrature; near u = 1 replace u*q by q (exact closed form),
        // the neglected remainder integrates (1-u) q over a 1e-9 sliver.
        const double cut = 1.0 - 1e-9;
        double s = 0.0;
        const double b1 = std::min(b, cut);
        if (b1 > a) {
          auto f = [this](double u) { return u * (*this)(u); };
          s += integrate_graded(f, a, b1, {}, 1e-13);
        }
        if (b > cut) s += partial_integral(std::max(a, cut), b);
        return s;
      }
    }
    return kNaN;
  }

  // ---- summary statistics ----

  double mean() const { return mean_; }
  double variance() const { return var_; }
  double stddev() const { return std::sqrt(std::max(0.0, var_)); }

  /// Interior u-locations where the quantile kinks or jumps; quadrature
  /// panels are aligned to these.
  std::vector<double> breakpoints() const {
    std::vector<double> bp;
    switch (kind_) {
      case Kind::normal:
      case Kind::student_t:
      case Kind::uniform:
        break;
      case Kind::empirical: {
        const std::size_t n = vals_.size();
        for (std::size_t i = 1; i < n; ++i) bp.push_back(double(i) / double(n));
        break;
      }
      case Kind::grid:
        for (double u : us_)
          if (u > 0.0 && u < 1.0) bp.push_back(u);
        break;
      case Kind::segments: {
        for (std::size_t i = 0; i + 1 < segs_.size(); ++i) bp.push_back(segs_[i].hi);
        for (double u : base_->breakpoints()) bp.push_back(u);
        std::sort(bp.begin(), bp.end());
        bp.erase(std::unique(bp.begin(), bp.end()), bp.end());
        break;
      }
    }
    return bp;
  }

  /// Interior u where the quantile jumps (left value < right value).
  std::vector<double> jump_us(double tol = 1e-12) const {
    std::vector<double> js;
    for (double u : breakpoints())
      if (right_value(u) - (*this)(u) > tol * (1.0 + std::fabs((*this)(u)))) js.push_back(u);
    return js;
  }

  bool bounded_below() const { return std::isfinite(lower_bound_value()); }
  bool bounded_above() const { return std::isfinite((*this)(1.0)); }

  const std::vector<Seg>& segs() const { return segs_; }
  const QuantileFunction* base() const { return base_.get(); }
  double param1() const { return p1_; }
  double param2() const { return p2_; }
  double dof() const { return nu_; }
  const std::vector<double>& values() const { return vals_; }
  const std::vector<double>& knots() const { return us_; }

  /// Standard clustered grid on [0, 1]: n+1 nodes of the cubic map s^2(3-2s),
  /// which spaces points quadratically densely toward both endpoints.
  static std::vector<double> refined_grid(int n = 4096) {
    std::vector<double> g(std::size_t(n) + 1);
    for (int k = 0; k <= n; ++k) {
      const double s = double(k) / double(n);
      g[std::size_t(k)] = s * s * (3.0 - 2.0 * s);
    }
    g.front() = 0.0;
    g.back() = 1.0;
    return g;
  }

 private:
  Kind kind_ = Kind::normal;
  double p1_ = 0.0, p2_ = 1.0, nu_ = 0.0;
  std::vector<double> vals_, us_;
  std::vector<Seg> segs_;
  std::shared_ptr<const QuantileFunction> base_;
  double mean_ = 0.0, var_ = 1.0;

  void finish() {
    mean_ = partial_integral(0.0, 1.0);
    var_ = std::max(0.0, partial_square_integral(0.0, 1.0) - mean_ * mean_);
    require_finite(mean_, "reference mean");
    require_finite(var_, "reference variance");
  }

  static void clip(double& a, double& b) {
    a = std::max(0.0, std::min(1.0, a));
    b = std::max(0.0, std::min(1.0, b));
  }

  double lower_bound_value() const {
    switch (kind_) {
      case Kind::normal:
      case Kind::student_t:
        return -kInf;
      case Kind::uniform:
        return p1_;
      case Kind::empirical:
        return vals_.front();
      case Kind::grid:
        return vals_.front();
      case Kind::segments: {
        const Seg& s = segs_.front();
        if (s.lam != 0.0 && !base_->bounded_below()) return -kInf;
        return s.c0 + s.lam * (s.lam != 0.0 ? base_->right_value(0.0) : 0.0);
      }
    }
    return kNaN;
  }

  static double normal_quantile(double u) {
    static const boost::math::normal_distribution<double> d(0.0, 1.0);
    return boost::math::quantile(d, u);
  }
  double student_quantile(double u) const {
    const boost::math::students_t_distribution<double> d(nu_);
    return boost::math::quantile(d, u);
  }

  // phi(Phi^{-1}(u)) with exact 0 limits at the endpoints
  static double phi_of_q(double u) {
    if (u <= 0.0 || u >= 1.0) return 0.0;
    const double x = normal_quantile(u);
    return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  }
  // x phi(x) at x = Phi^{-1}(u); combined with u gives int z^2 phi
  static double phiq_x(double u) {
    if (u <= 0.0 || u >= 1.0) return 0.0;
    const double x = normal_quantile(u);
    return x * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  }
  // Phi(x) phi(x) expressed with the u-argument split: returns phi(x) only;
  // the caller multiplies by u ( = Phi(x) ).
  static double phiq_x_pdf(double u) { return phi_of_q(u); }
  // Phi(x sqrt 2) / (2 sqrt pi) at x = Phi^{-1}(u)
  static double Phi_sqrt2(double u) {
    static const boost::math::normal_distribution<double> d(0.0, 1.0);
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return 1.0 / (2.0 * std::sqrt(M_PI));
    const double x = normal_quantile(u);
    return boost::math::cdf(d, x * std::sqrt(2.0)) / (2.0 * std::sqrt(M_PI));
  }

  // Student-t antiderivatives in the u-variable (standardized, loc 0 scale 1):
  // t_I1(u) = int_0^u T^{-1}(s) ds,  t_I2(u) = int_0^u (T^{-1}(s))^2 ds.
  double t_pdf0() const {
    const boost::math::students_t_distribution<double> d(nu_);
    return boost::math::pdf(d, 0.0);
  }
  double t_I1(double u) const {
    if (u <= 0.0 || u >= 1.0) return u >= 1.0 ? 0.0 : 0.0;
    const double x = student_quantile(u);
    const double c = t_pdf0();
    return -(c * nu_ / (nu_ - 1.0)) * std::pow(1.0 + x * x / nu_, -(nu_ - 1.0) / 2.0);
  }
  double t_I2(double u) const {
    if (u <= 0.0) return 0.0;
    if (u >= 1.0) return nu_ / (nu_ - 2.0);
    const double x = student_quantile(u);
    const double c = t_pdf0();
    const double edge = c * x * std::pow(1.0 + x * x / nu_, -(nu_ - 1.0) / 2.0);
    return (nu_ / (nu_ - 2.0)) * (u - edge);
  }

  double grid_value(double u) const {
    if (u <= us_.front()) return vals_.front();
    if (u >= us_.back()) return vals_.back();
    auto it = std::upper_bound(us_.begin(), us_.end(), u);
    std::size_t k = std::size_t(it - us_.begin());
    const double u0 = us_[k - 1], u1 = us_[k];
    const double w = (u - u0) / (u1 - u0);
    return vals_[k - 1] + w * (vals_[k] - vals_[k - 1]);
  }

  // moment 0: int q, 1: int u q, 2: int q^2 over [a,b] for the grid kind
  double grid_moment(double a, double b, int which) const {
    std::vector<double> cuts;
    cuts.push_back(a);
    for (double u : us_)
      if (u > a && u < b) cuts.push_back(u);
    cuts.push_back(b);
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double l = cuts[i], r = cuts[i + 1];
      if (!(r > l)) continue;
      // q is affine on [l, r]: q = alpha + beta u
      const double ql = grid_value(l), qr = grid_value(r);
      const double beta = (qr - ql) / (r - l), alpha = ql - beta * l;
      if (which == 0) {
        s += alpha * (r - l) + beta * 0.5 * (r * r - l * l);
      } else if (which == 1) {
        s += alpha * 0.5 * (r * r - l * l) + beta * (r * r * r - l * l * l) / 3.0;
      } else {
        s += alpha * alpha * (r - l) + alpha * beta * (r * r - l * l) +
             beta * beta * (r * r * r - l * l * l) / 3.0;
      }
    }
    return s;
  }

  std::size_t seg_index_left(double u) const {
    // first segment whose hi >= u
    std::size_t lo = 0, hi = segs_.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi) / 2;
      if (segs_[mid].hi >= u)
        hi = mid;
      else
        lo = mid + 1;
    }
    return lo;
  }
  std::size_t seg_index_right(double u) const {
    // last segment whose lo <= u
    std::size_t lo = 0, hi = segs_.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi + 1) / 2;
      if (segs_[mid].lo <= u)
        lo = mid;
      else
        hi = mid - 1;
    }
    return lo;
  }

  friend double cross_partial(const QuantileFunction&, const QuantileFunction&, double, double);
};

struct Moments {
  double mean = 0.0;
  double stddev = 1.0;
};

inline Moments moments(const QuantileFunction& q) { return {q.mean(), q.stddev()}; }

/// (q - mean) / stddev.
inline QuantileFunction standardize(const QuantileFunction& q) {
  const double m = q.mean(), s = q.stddev();
  require(s > 0.0, "standardize requires a non-degenerate distribution");
  return q.affine(-m / s, 1.0 / s);
}

/// int_a^b F^{-1}(u) G^{-1}(u) du, computed structurally when either side is
/// piecewise (affine pieces pair with the other side's analytic partial
/// moments) and analytically for matching smooth families.
inline double cross_partial(const QuantileFunction& F, const QuantileFunction& G, double a, double b) {
  using Kind = QuantileFunction::Kind;
  a = std::max(0.0, a);
  b = std::min(1.0, b);
  if (!(b > a)) return 0.0;

  auto piecewise_affine = [](const QuantileFunction& q) {
    return q.kind() == Kind::uniform || q.kind() == Kind::empirical || q.kind() == Kind::grid;
  };

  if (F.kind() == Kind::segments) {
    double s = 0.0;
    for (const auto& sg : F.segs()) {
      const double l = std::max(a, sg.lo), r = std::min(b, sg.hi);
      if (!(r > l)) continue;
      s += sg.c0 * G.partial_integral(l, r) + sg.c1 * G.partial_t_integral(l, r);
      if (sg.lam != 0.0) s += sg.lam * cross_partial(*F.base(), G, l, r);
    }
    return s;
  }
  if (G.kind() == Kind::segments) return cross_partial(G, F, a, b);

  if (piecewise_affine(F)) {
    // decompose F into affine cells and use G's analytic partials
    std::vector<double> cuts = F.breakpoints();
    cuts.push_back(a);
    cuts.push_back(b);
    std::sort(cuts.begin(), cuts.end());
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
      const double l = std::max(a, cuts[i]), r = std::min(b, cuts[i + 1]);
      if (!(r > l)) continue;
      const double m = 0.5 * (l + r);
      // F is affine on (l, r): recover slope/intercept from two interior points
      const double q1 = F(l + 0.25 * (r - l)), q2 = F(l + 0.75 * (r - l));
      const double beta = (q2 - q1) / (0.5 * (r - l));
      const double alpha = F(m) - beta * m;
      s += alpha * G.partial_integral(l, r) + beta * G.partial_t_integral(l, r);
    }
    return s;
  }
  if (piecewise_affine(G)) return cross_partial(G, F, a, b);

  // both smooth: same-family shortcuts, otherwise graded quadrature
  if (F.kind() == Kind::normal && G.kind() == Kind::normal) {
    const QuantileFunction std01 = QuantileFunction::normal(0.0, 1.0);
    const double i1 = std01.partial_integral(a, b);
    const double i2 = std01.partial_square_integral(a, b);
    return F.param1() * G.param1() * (b - a) + (F.param1() * G.param2() + G.param1() * F.param2()) * i1 +
           F.param2() * G.param2() * i2;
  }
  if (F.kind() == Kind::student_t && G.kind() == Kind::student_t && F.dof() == G.dof()) {
    const QuantileFunction std01 = QuantileFunction::student_t(F.dof());
    const double i1 = std01.partial_integral(a, b);
    const double i2 = std01.partial_square_integral(a, b);
    return F.param1() * G.param1() * (b - a) + (F.param1() * G.param2() + G.param1() * F.param2()) * i1 +
           F.param2() * G.param2() * i2;
  }
  auto f = [&](double u) { return F(u) * G(u); };
  return integrate_graded(f, a, b, {}, 1e-13);
}

/// 2-Wasserstein distance between the distributions with quantiles F and G.
inline double wasserstein2(const QuantileFunction& F, const QuantileFunction& G) {
  const double s2 = F.partial_square_integral(0.0, 1.0) + G.partial_square_integral(0.0, 1.0) -
                    2.0 * cross_partial(F, G, 0.0, 1.0);
  return std::sqrt(std::max(0.0, s2));
}

/// Location-scale reference factor for portfolio problems: a standardized
/// (mean 0, stddev 1) quantile shared by every linear combination of assets.
struct EllipticalReference {
  QuantileFunction F0 = QuantileFunction::normal(0.0, 1.0);

  static EllipticalReference normal() { return {QuantileFunction::normal(0.0, 1.0)}; }
  static EllipticalReference student_t(double nu) {
    QuantileFunction q = QuantileFunction::student_t(nu);
    return {standardize(q)};
  }
  static EllipticalReference custom(const QuantileFunction& q) { return {standardize(q)}; }
};

/// Single-column CSV of observations; `has_header` skips the first row.
inline std::vector<double> read_sample_csv(const std::string& path, bool has_header) {
  std::ifstream in(path);
  if (!in) throw parameter_error("cannot open sample file: " + path);
  std::vector<double> out;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && has_header) {
      first = false;
      continue;
    }
    first = false;
    // strip whitespace and an optional trailing comma-separated remainder
    std::string cell = line.substr(0, line.find(','));
    std::size_t s = cell.find_first_not_of(" \t\r");
    if (s == std::string::npos) continue;
    std::size_t e = cell.find_last_not_of(" \t\r");
    cell = cell.substr(s, e - s + 1);
    if (cell.empty()) continue;
    try {
      out.push_back(std::stod(cell));
    } catch (const std::exception&) {
      throw parameter_error("non-numeric entry in sample file: '" + cell + "'");
    }
  }
  if (out.empty()) throw parameter_error("sample file has no observations: " + path);
  return out;
}

/// Two-column CSV (u, value) of a quantile sampled on the refined grid,
/// clamped to [1e-9, 1 - 1e-9] for unbounded supports.
inline void write_quantile_csv(const std::string& path, const QuantileFunction& q, int n = 512,
                               int precision = 6) {
  std::ofstream out(path);
  if (!out) throw parameter_error("cannot open output file: " + path);
  out << "u,value\n";
  out.setf(std::ios::fixed);
  out.precision(precision);
  for (double u : QuantileFunction::refined_grid(n)) {
    const double uu = std::min(std::max(u, 1e-9), 1.0 - 1e-9);
    out << uu << ',' << q(uu) << '\n';
  }
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_REFERENCE_HPP
