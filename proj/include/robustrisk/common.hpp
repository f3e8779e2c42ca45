#ifndef ROBUSTRISK_COMMON_HPP
#define ROBUSTRISK_COMMON_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace robustrisk {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid argument: bad probability level, malformed distortion, negative radius, ...
class parameter_error : public error {
 public:
  explicit parameter_error(const std::string& what) : error(what) {}
};

/// The requested uncertainty set is empty (radius below the feasibility threshold).
class infeasibility_error : public error {
 public:
  infeasibility_error(const std::string& what, double threshold)
      : error(what), threshold_(threshold) {}
  /// Smallest feasible squared-radius for the offending constraint set.
  double threshold() const noexcept { return threshold_; }

 private:
  double threshold_ = std::numeric_limits<double>::quiet_NaN();
};

/// A structural assumption of the chosen solution path fails
/// (e.g. the dual weight function is degenerate for a positive multiplier).
class regime_error : public error {
 public:
  explicit regime_error(const std::string& what) : error(what) {}
};

/// Loss of numeric meaning: non-finite intermediate, failed bracket, ...
class numeric_error : public error {
 public:
  explicit numeric_error(const std::string& what) : error(what) {}
};

inline constexpr double kInf = std::numeric_limits<double>::infinity();
inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
inline constexpr double kPi = 3.14159265358979323846;

inline double sq(double x) { return x * x; }

inline bool finite(double x) { return std::isfinite(x); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw parameter_error(msg);
}

inline void require_finite(double x, const std::string& what) {
  if (!std::isfinite(x)) throw numeric_error(what + " is not finite");
}

/// Relative closeness with an absolute floor of one.
inline bool close_rel(double a, double b, double tol) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

/// Bisection for a root of f on [lo, hi]; f(lo) and f(hi) must have opposite
/// signs (zero endpoints are accepted).  Returns the midpoint of the final
/// bracket after the interval shrinks below xtol (relative to the bracket).
inline double bisect_root(const std::function<double(double)>& f, double lo, double hi,
                          double xtol = 1e-13, int max_iter = 200) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0))
    throw numeric_error("bisect_root: endpoints do not bracket a sign change");
  for (int it = 0; it < max_iter; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (hi - lo <= xtol * std::max(1.0, std::fabs(mid))) return mid;
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

/// Golden-section minimizer of a unimodal function on [lo, hi].
inline double golden_min(const std::function<double(double)>& f, double lo, double hi,
                         double xtol = 1e-10, int max_iter = 200) {
  static const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - invphi * (b - a), d = a + invphi * (b - a);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < max_iter && (b - a) > xtol * std::max(1.0, std::fabs(a) + std::fabs(b)); ++it) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - invphi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + invphi * (b - a);
      fd = f(d);
    }
  }
  return fc < fd ? c : d;
}

/// Deterministic xorshift-based generator so test fixtures do not depend on
/// the standard library's unspecified distribution algorithms.
class rng {
 public:
  explicit rng(std::uint64_t seed = 0) : state_(seed * 6364136223846793005ULL + 1442695040888963407ULL) {
    next();
    next();
  }
  std::uint64_t next() {
    std::uint64_t x = state_;
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    state_ = x;
    return x;
  }
  /// Uniform in [0, 1).
  double uniform() { return double(next() >> 11) * (1.0 / 9007199254740992.0); }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }
  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + int(next() % std::uint64_t(hi - lo + 1));
  }
  double normal() {
    // Box-Muller; one draw per call keeps the stream reproducible.
    double u1 = std::max(uniform(), 1e-300), u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

 private:
  std::uint64_t state_;
};

}  // namespace robustrisk

#endif  // ROBUSTRISK_COMMON_HPP
