#ifndef ROBUSTRISK_DISTORTION_HPP
#define ROBUSTRISK_DISTORTION_HPP

#include <cctype>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "robustrisk/common.hpp"
#include "robustrisk/reference.hpp"

namespace robustrisk {

/// One breakpoint of a distortion function: the three values that matter at
/// the breakpoint itself plus the (linear) slope toward the next breakpoint.
struct DistortionPiece {
  double t = 0.0;      // breakpoint in [0, 1]
  double left = 0.0;   // lim_{s -> t-} of the piecewise-linear part
  double point = 0.0;  // value of the piecewise-linear part at t
  double right = 0.0;  // lim_{s -> t+} of the piecewise-linear part
  double slope = 0.0;  // slope on (t, t_next); ignored on the last piece
};

enum class ShapeHint { concave, general };

enum class Family {
  gd,
  mmd,
  iqd_plus,
  iqd_minus,
  var,
  var_plus,
  es,
  rvar,
  gluevar,
  gluevar_hat,
  es_minus_var,
  custom
};

/// Distortion function g on [0, 1] with g(0) = g(0+) = 0 and g(1-) = g(1):
/// a piecewise-linear part with jumps plus an optional exact parabola
/// quad * (t - t^2).  The parabola keeps the one smooth built-in exact
/// instead of forcing a grid approximation on it.
class DistortionFunction {
 public:
  DistortionFunction(std::vector<DistortionPiece> pieces, double total_at_one,
                     ShapeHint hint = ShapeHint::general, double quad = 0.0)
      : pieces_(std::move(pieces)), quad_(quad), hint_(hint) {
    validate(total_at_one);
  }

  // ---- evaluation of g ----

  double operator()(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return pieces_.back().point + quad_part(1.0);
    const std::size_t i = piece_index(t);
    const DistortionPiece& p = pieces_[i];
    double v;
    if (t == p.t)
      v = p.point;
    else
      v = p.right + p.slope * (t - p.t);
    return v + quad_part(t);
  }

  double left_value(double t) const {
    if (t <= 0.0) return 0.0;
    if (t >= 1.0) return pieces_.back().left + quad_part(1.0);
    const std::size_t i = piece_index(t);
    const DistortionPiece& p = pieces_[i];
    double v;
    if (t == p.t)
      v = p.left;
    else
      v = p.right + p.slope * (t - p.t);
    return v + quad_part(t);
  }

  double right_value(double t) const {
    if (t >= 1.0) return (*this)(1.0);
    if (t < 0.0) t = 0.0;
    const std::size_t i = piece_index(t);
    const DistortionPiece& p = pieces_[i];
    double v;
    if (t == p.t)
      v = p.right;
    else
      v = p.right + p.slope * (t - p.t);
    return v + quad_part(t);
  }

  /// max(left, point, right) at t: the value seen by concave majorants.
  double usc_value(double t) const {
    return std::max({left_value(t), (*this)(t), right_value(t)});
  }

  double total_at_one() const { return pieces_.back().point + quad_part(1.0); }

  /// Slope of the piecewise-linear part on the piece containing t (the piece
  /// to the right when t is a breakpoint); excludes the parabola.
  double piece_slope(double t) const {
    if (t >= 1.0) t = std::nextafter(1.0, 0.0);
    if (t < 0.0) t = 0.0;
    return pieces_[piece_index(t)].slope;
  }

  const std::vector<DistortionPiece>& pieces() const { return pieces_; }
  double quad() const { return quad_; }
  ShapeHint shape_hint() const { return hint_; }

  std::vector<double> breakpoints() const {
    std::vector<double> b;
    for (const auto& p : pieces_) b.push_back(p.t);
    return b;
  }

  struct Jump {
    double t = 0.0, left = 0.0, point = 0.0, right = 0.0;
  };
  /// Interior breakpoints where g is discontinuous.
  std::vector<Jump> jumps(double tol = 1e-12) const {
    std::vector<Jump> out;
    for (const auto& p : pieces_) {
      if (p.t <= 0.0 || p.t >= 1.0) continue;
      if (std::fabs(p.left - p.point) > tol || std::fabs(p.point - p.right) > tol)
        out.push_back({p.t, p.left + quad_part(p.t), p.point + quad_part(p.t), p.right + quad_part(p.t)});
    }
    return out;
  }

  bool continuous(double tol = 1e-12) const { return jumps(tol).empty(); }

  /// True when g is concave on [0, 1]: continuous with non-increasing slopes
  /// and a non-negative parabola coefficient.
  bool concave(double tol = 1e-10) const {
    if (!continuous(tol)) return false;
    if (quad_ < -tol) return false;
    for (std::size_t i = 0; i + 2 < pieces_.size(); ++i)
      if (pieces_[i + 1].slope > pieces_[i].slope + tol) return false;
    return true;
  }

  Family family() const { return family_; }
  double fam_alpha() const { return fa_; }
  double fam_beta() const { return fb_; }
  double fam_h1() const { return fh1_; }
  double fam_h2() const { return fh2_; }

  void set_family(Family f, double a = 0, double b = 0, double h1 = 0, double h2 = 0) {
    family_ = f;
    fa_ = a;
    fb_ = b;
    fh1_ = h1;
    fh2_ = h2;
  }

 private:
  std::vector<DistortionPiece> pieces_;
  double quad_ = 0.0;
  ShapeHint hint_ = ShapeHint::general;
  Family family_ = Family::custom;
  double fa_ = 0, fb_ = 0, fh1_ = 0, fh2_ = 0;

  double quad_part(double t) const { return quad_ * (t - t * t); }

  void validate(double total) {
    require(pieces_.size() >= 2, "distortion needs breakpoints at 0 and 1");
    require(pieces_.front().t == 0.0 && pieces_.back().t == 1.0,
            "distortion breakpoints must start at 0 and end at 1");
    for (std::size_t i = 1; i < pieces_.size(); ++i)
      require(pieces_[i].t > pieces_[i - 1].t, "distortion breakpoints must be strictly increasing");
    for (const auto& p : pieces_) {
      require_finite(p.left, "distortion value");
      require_finite(p.point, "distortion value");
      require_finite(p.right, "distortion value");
      require_finite(p.slope, "distortion slope");
    }
    const double tol = 1e-9;
    require(std::fabs(pieces_.front().point) <= tol && std::fabs(pieces_.front().right) <= tol,
            "distortion must satisfy g(0) = g(0+) = 0");
    pieces_.front().left = pieces_.front().point = pieces_.front().right = 0.0;
    // chain consistency: each left limit equals the previous linear extension
    for (std::size_t i = 0; i + 1 < pieces_.size(); ++i) {
      const double reach = pieces_[i].right + pieces_[i].slope * (pieces_[i + 1].t - pieces_[i].t);
      require(std::fabs(reach - pieces_[i + 1].left) <= tol * (1.0 + std::fabs(reach)),
              "distortion pieces are inconsistent with the declared slopes");
      pieces_[i + 1].left = reach;
    }
    require(std::fabs(pieces_.back().point - pieces_.back().left) <=
                tol * (1.0 + std::fabs(pieces_.back().left)),
            "distortion must satisfy g(1-) = g(1)");
    pieces_.back().point = pieces_.back().left;
    pieces_.back().right = pieces_.back().point;
    require(std::fabs(total_at_one() - total) <= 1e-9 * (1.0 + std::fabs(total)),
            "declared total_at_one disagrees with the pieces");
  }

  std::size_t piece_index(double t) const {
    // last piece with pieces_[i].t <= t, searching so that t == breakpoint
    // resolves to that breakpoint's piece
    std::size_t lo = 0, hi = pieces_.size() - 1;
    while (lo < hi) {
      std::size_t mid = (lo + hi + 1) / 2;
      if (pieces_[mid].t <= t)
        lo = mid;
      else
        hi = mid - 1;
    }
    return lo;
  }
};

/// Weight function gamma(u) = (left derivative of g)(1 - u), represented
/// exactly: constant or affine in u on each knot interval.
struct WeightFunction {
  enum class Rep { step, piecewise_linear, analytic_callable_on_grid };
  Rep rep = Rep::step;
  // value on (knots[j], knots[j+1]) is c[j] + d[j] * u
  std::vector<double> knots;  // 0 = knots[0] < ... < knots[m] = 1
  std::vector<double> c, d;

  double operator()(double u) const {
    if (u <= 0.0) u = 0.0;
    if (u >= 1.0) u = 1.0;
    // value at an interior knot belongs to the interval above it, matching
    // the left derivative of g at 1 - u
    std::size_t j = 0;
    for (std::size_t k = 1; k + 1 < knots.size(); ++k)
      if (knots[k] <= u) j = k;
    return c[j] + d[j] * u;
  }

  /// int_a^b gamma(u) du, exact.
  double integral(double a, double b) const {
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
      const double l = std::max(a, knots[j]), r = std::min(b, knots[j + 1]);
      if (r > l) s += c[j] * (r - l) + d[j] * 0.5 * (r * r - l * l);
    }
    return s;
  }

  /// int_a^b u * gamma(u) du, exact.
  double t_integral(double a, double b) const {
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
      const double l = std::max(a, knots[j]), r = std::min(b, knots[j + 1]);
      if (r > l)
        s += c[j] * 0.5 * (r * r - l * l) + d[j] * (r * r * r - l * l * l) / 3.0;
    }
    return s;
  }

  /// int_a^b gamma(u)^2 du, exact.
  double square_integral(double a, double b) const {
    double s = 0.0;
    for (std::size_t j = 0; j + 1 < knots.size(); ++j) {
      const double l = std::max(a, knots[j]), r = std::min(b, knots[j + 1]);
      if (r > l) {
        const double cc = c[j], dd = d[j];
        s += cc * cc * (r - l) + cc * dd * (r * r - l * l) +
             dd * dd * (r * r * r - l * l * l) / 3.0;
      }
    }
    return s;
  }
};

/// Metric family plus parameters; `custom` carries an explicit distortion.
struct MetricSpec {
  Family family = Family::custom;
  double alpha = 0.0;  // also alpha1 for es_minus_var
  double beta = 0.0;   // also alpha2 for es_minus_var
  double h1 = 0.0, h2 = 0.0;
  std::shared_ptr<const DistortionFunction> custom;
};

namespace detail {

inline std::string lower(std::string s) {
  for (char& ch : s) ch = char(std::tolower((unsigned char)ch));
  return s;
}

inline void check_level(double a, const std::string& name) {
  require(a > 0.0 && a < 1.0, "metric parameter " + name + " must lie in (0,1)");
}

}  // namespace detail

/// Parse "name" or "name(k=v,...)" / "name(v1,v2,...)" into a MetricSpec.
/// Examples: "gd", "es(0.95)", "var(alpha=0.975)", "iqd+(0.05)",
/// "rvar(0.3,0.7)", "gluevar(beta=0.975,alpha=0.95,h1=0.3333,h2=0.6667)",
/// "es_minus_var(0.95,0.975)", "identity".
inline MetricSpec parse_metric(const std::string& text) {
  // accepted forms: "es(0.95)", "es(alpha=0.95)", "es alpha=0.95", "gluevar 0.99 0.95 0.3 0.6"
  std::string s = detail::lower(text);
  for (char& ch : s)
    if (std::isspace((unsigned char)ch) || ch == ',') ch = ' ';
  std::string name, inside;
  const std::size_t par = s.find('(');
  if (par != std::string::npos) {
    const std::size_t close = s.rfind(')');
    require(close != std::string::npos && close > par,
            "malformed metric: missing ')' in '" + text + "'");
    name = s.substr(0, par);
    inside = s.substr(par + 1, close - par - 1);
  } else {
    const std::size_t sp = s.find(' ');
    name = s.substr(0, sp);
    if (sp != std::string::npos) inside = s.substr(sp + 1);
  }
  name.erase(std::remove(name.begin(), name.end(), ' '), name.end());
  std::vector<std::pair<std::string, double>> args;  // key may be empty (positional)
  std::stringstream ss(inside);
  std::string tok;
  while (ss >> tok) {
    const std::size_t eq = tok.find('=');
    std::string key = eq == std::string::npos ? "" : tok.substr(0, eq);
    std::string val = eq == std::string::npos ? tok : tok.substr(eq + 1);
    try {
      std::size_t used = 0;
      const double x = std::stod(val, &used);
      require(used == val.size(), "trailing junk");
      args.emplace_back(key, x);
    } catch (const std::exception&) {
      throw parameter_error("non-numeric metric parameter '" + val + "' in '" + text + "'");
    }
  }

  auto get = [&](std::initializer_list<const char*> keys, int pos, std::optional<double> dflt =
                                                                       std::nullopt) -> double {
    for (const char* k : keys)
      for (const auto& [key, v] : args)
        if (key == k) return v;
    int p = 0;
    for (const auto& [key, v] : args) {
      if (!key.empty()) continue;
      if (p == pos) return v;
      ++p;
    }
    if (dflt) return *dflt;
    throw parameter_error("metric '" + text + "' is missing parameter '" + std::string(*keys.begin()) + "'");
  };

  MetricSpec m;
  if (name == "gd") {
    m.family = Family::gd;
  } else if (name == "mmd") {
    m.family = Family::mmd;
  } else if (name == "iqd+" || name == "iqd_plus" || name == "iqdplus") {
    m.family = Family::iqd_plus;
    m.alpha = get({"alpha"}, 0);
  } else if (name == "iqd-" || name == "iqd_minus" || name == "iqdminus" || name == "iqd") {
    m.family = Family::iqd_minus;
    m.alpha = get({"alpha"}, 0);
  } else if (name == "var") {
    m.family = Family::var;
    m.alpha = get({"alpha"}, 0);
  } else if (name == "var+" || name == "var_plus" || name == "varplus") {
    m.family = Family::var_plus;
    m.alpha = get({"alpha"}, 0);
  } else if (name == "es") {
    m.family = Family::es;
    m.alpha = get({"alpha"}, 0);
  } else if (name == "identity") {
    m.family = Family::es;
    m.alpha = 0.0;
  } else if (name == "rvar") {
    m.family = Family::rvar;
    m.alpha = get({"alpha"}, 0);
    m.beta = get({"beta"}, 1);
  } else if (name == "gluevar") {
    m.family = Family::gluevar;
    m.beta = get({"beta"}, 0);
    m.alpha = get({"alpha"}, 1);
    m.h1 = get({"h1"}, 2);
    m.h2 = get({"h2"}, 3);
  } else if (name == "gluevar_hat" || name == "gluevar+") {
    m.family = Family::gluevar_hat;
    m.beta = get({"beta"}, 0);
    m.alpha = get({"alpha"}, 1);
    m.h1 = get({"h1"}, 2);
    m.h2 = get({"h2"}, 3);
  } else if (name == "es_minus_var" || name == "es-var" || name == "esvar" || name == "es_var") {
    m.family = Family::es_minus_var;
    m.alpha = get({"alpha1", "alpha"}, 0);
    m.beta = get({"alpha2", "beta"}, 1);
  } else {
    throw parameter_error("unknown metric family '" + name + "'");
  }
  return m;
}

inline std::string format_metric(const MetricSpec& m) {
  std::ostringstream os;
  os.precision(12);
  switch (m.family) {
    case Family::gd:
      return "gd";
    case Family::mmd:
      return "mmd";
    case Family::iqd_plus:
      os << "iqd+(" << m.alpha << ")";
      break;
    case Family::iqd_minus:
      os << "iqd-(" << m.alpha << ")";
      break;
    case Family::var:
      os << "var(" << m.alpha << ")";
      break;
    case Family::var_plus:
      os << "var+(" << m.alpha << ")";
      break;
    case Family::es:
      os << "es(" << m.alpha << ")";
      break;
    case Family::rvar:
      os << "rvar(" << m.alpha << "," << m.beta << ")";
      break;
    case Family::gluevar:
      os << "gluevar(beta=" << m.beta << ",alpha=" << m.alpha << ",h1=" << m.h1 << ",h2=" << m.h2 << ")";
      break;
    case Family::gluevar_hat:
      os << "gluevar_hat(beta=" << m.beta << ",alpha=" << m.alpha << ",h1=" << m.h1 << ",h2=" << m.h2
         << ")";
      break;
    case Family::es_minus_var:
      os << "es_minus_var(" << m.alpha << "," << m.beta << ")";
      break;
    case Family::custom:
      return "custom";
  }
  return os.str();
}

/// Build the distortion function of a metric family.
inline DistortionFunction make_distortion(const MetricSpec& m) {
  using P = DistortionPiece;
  switch (m.family) {
    case Family::gd: {
      DistortionFunction g({P{0, 0, 0, 0, 0}, P{1, 0, 0, 0, 0}}, 0.0, ShapeHint::concave, 1.0);
      g.set_family(Family::gd);
      return g;
    }
    case Family::mmd: {
      DistortionFunction g({P{0, 0, 0, 0, 1.0}, P{0.5, 0.5, 0.5, 0.5, -1.0}, P{1, 0, 0, 0, 0}}, 0.0,
                           ShapeHint::concave);
      g.set_family(Family::mmd);
      return g;
    }
    case Family::iqd_plus: {
      detail::check_level(m.alpha, "alpha");
      require(m.alpha < 0.5, "iqd requires alpha < 1/2");
      const double a = m.alpha;
      DistortionFunction g({P{0, 0, 0, 0, 0}, P{a, 0, 1, 1, 0}, P{1 - a, 1, 1, 0, 0}, P{1, 0, 0, 0, 0}},
                           0.0);
      g.set_family(Family::iqd_plus, a);
      return g;
    }
    case Family::iqd_minus: {
      detail::check_level(m.alpha, "alpha");
      require(m.alpha < 0.5, "iqd requires alpha < 1/2");
      const double a = m.alpha;
      DistortionFunction g({P{0, 0, 0, 0, 0}, P{a, 0, 0, 1, 0}, P{1 - a, 1, 0, 0, 0}, P{1, 0, 0, 0, 0}},
                           0.0);
      g.set_family(Family::iqd_minus, a);
      return g;
    }
    case Family::var: {
      detail::check_level(m.alpha, "alpha");
      const double t = 1.0 - m.alpha;
      DistortionFunction g({P{0, 0, 0, 0, 0}, P{t, 0, 0, 1, 0}, P{1, 1, 1, 1, 0}}, 1.0);
      g.set_family(Family::var, m.alpha);
      return g;
    }
    case Family::var_plus: {
      detail::check_level(m.alpha, "alpha");
      const double t = 1.0 - m.alpha;
      DistortionFunction g({P{0, 0, 0, 0, 0}, P{t, 0, 1, 1, 0}, P{1, 1, 1, 1, 0}}, 1.0);
      g.set_family(Family::var_plus, m.alpha);
      return g;
    }
    case Family::es: {
      require(m.alpha >= 0.0 && m.alpha < 1.0, "es requires alpha in [0,1)");
      if (m.alpha == 0.0) {
        DistortionFunction g({P{0, 0, 0, 0, 1.0}, P{1, 1, 1, 1, 0}}, 1.0, ShapeHint::concave);
        g.set_family(Family::es, 0.0);
        return g;
      }
      const double t = 1.0 - m.alpha;
      DistortionFunction g({P{0, 0, 0, 0, 1.0 / t}, P{t, 1, 1, 1, 0}, P{1, 1, 1, 1, 0}}, 1.0,
                           ShapeHint::concave);
      g.set_family(Family::es, m.alpha);
      return g;
    }
    case Family::rvar: {
      detail::check_level(m.alpha, "alpha");
      detail::check_level(m.beta, "beta");
      require(m.alpha < m.beta, "rvar requires alpha < beta");
      const double lb = 1.0 - m.beta, la = 1.0 - m.alpha, s = 1.0 / (m.beta - m.alpha);
      DistortionFunction g({P{0, 0, 0, 0, 0}, P{lb, 0, 0, 0, s}, P{la, 1, 1, 1, 0}, P{1, 1, 1, 1, 0}},
                           1.0);
      g.set_family(Family::rvar, m.alpha, m.beta);
      return g;
    }
    case Family::gluevar:
    case Family::gluevar_hat: {
      detail::check_level(m.alpha, "alpha");
      detail::check_level(m.beta, "beta");
      require(m.alpha <= m.beta, "gluevar requires alpha <= beta");
      require(0.0 <= m.h1 && m.h1 <= m.h2 && m.h2 <= 1.0, "gluevar requires 0 <= h1 <= h2 <= 1");
      const bool hat = m.family == Family::gluevar_hat;
      const double lb = 1.0 - m.beta, la = 1.0 - m.alpha;
      const double s1 = m.h1 / (1.0 - m.beta);
      std::vector<P> ps;
      ps.push_back(P{0, 0, 0, 0, s1});
      if (m.alpha < m.beta) {
        const double s2 = (m.h2 - m.h1) / (m.beta - m.alpha);
        ps.push_back(P{lb, m.h1, m.h1, m.h1, s2});
        ps.push_back(P{la, m.h2, hat ? 1.0 : m.h2, 1.0, 0});
      } else {
        ps.push_back(P{la, m.h1, hat ? 1.0 : m.h2, 1.0, 0});
      }
      ps.push_back(P{1, 1, 1, 1, 0});
      DistortionFunction g(std::move(ps), 1.0);
      g.set_family(m.family, m.alpha, m.beta, m.h1, m.h2);
      return g;
    }
    case Family::es_minus_var: {
      detail::check_level(m.alpha, "alpha1");
      detail::check_level(m.beta, "alpha2");
      require(m.alpha < m.beta, "es_minus_var requires alpha1 < alpha2");
      const double a1 = m.alpha, a2 = m.beta;
      const double s = 1.0 / (1.0 - a1);
      const double t2 = 1.0 - a2, t1 = 1.0 - a1;
      const double mv = t2 / (1.0 - a1);
      DistortionFunction g(
          {P{0, 0, 0, 0, s}, P{t2, mv, mv, mv - 1.0, s}, P{t1, 0, 0, 0, 0}, P{1, 0, 0, 0, 0}}, 0.0);
      g.set_family(Family::es_minus_var, a1, a2);
      return g;
    }
    case Family::custom: {
      require(m.custom != nullptr, "custom metric requires an explicit distortion");
      return *m.custom;
    }
  }
  throw parameter_error("unhandled metric family");
}

/// Convenience: parse and build in one step.
inline DistortionFunction make_distortion(const std::string& text) {
  return make_distortion(parse_metric(text));
}

/// Smallest upper-semicontinuous majorant: lift every interior breakpoint
/// value to max(left, point, right).  Named families map to their lifted
/// counterparts so closed-form paths stay available.
inline DistortionFunction usc_version(const DistortionFunction& g) {
  std::vector<DistortionPiece> ps = g.pieces();
  for (auto& p : ps)
    if (p.t > 0.0 && p.t < 1.0) p.point = std::max({p.left, p.point, p.right});
  DistortionFunction out(std::move(ps), g.total_at_one(), g.shape_hint(), g.quad());
  switch (g.family()) {
    case Family::var:
      out.set_family(Family::var_plus, g.fam_alpha());
      break;
    case Family::iqd_minus:
      out.set_family(Family::iqd_plus, g.fam_alpha());
      break;
    case Family::gluevar:
      out.set_family(Family::gluevar_hat, g.fam_alpha(), g.fam_beta(), g.fam_h1(), g.fam_h2());
      break;
    default:
      out.set_family(g.family(), g.fam_alpha(), g.fam_beta(), g.fam_h1(), g.fam_h2());
      break;
  }
  return out;
}

/// -g, used to turn best-case problems into worst-case problems.
inline DistortionFunction negate(const DistortionFunction& g) {
  std::vector<DistortionPiece> ps = g.pieces();
  for (auto& p : ps) {
    p.left = -p.left;
    p.point = -p.point;
    p.right = -p.right;
    p.slope = -p.slope;
  }
  return DistortionFunction(std::move(ps), -g.total_at_one(), ShapeHint::general, -g.quad());
}

/// Weight gamma(u) = (left derivative of g at 1 - u); requires g without
/// interior jumps.  Piecewise-linear g yields a step weight; the parabola
/// adds the exact affine term 2u - 1.
inline WeightFunction weight_of(const DistortionFunction& g) {
  require(g.continuous(), "weight function requires a distortion without jumps");
  WeightFunction w;
  const auto& ps = g.pieces();
  // pieces in t map to u-intervals (1 - t_{i+1}, 1 - t_i), reversed order
  w.knots.push_back(0.0);
  for (std::size_t i = ps.size() - 1; i-- > 0;) {
    w.knots.push_back(1.0 - ps[i].t);
    w.c.push_back(ps[i].slope - g.quad());
    w.d.push_back(2.0 * g.quad());
  }
  w.knots.back() = 1.0;
  w.rep = g.quad() != 0.0 ? WeightFunction::Rep::analytic_callable_on_grid
                          : WeightFunction::Rep::step;
  return w;
}

/// Distortion risk value rho_g(q) for a quantile function q, evaluated as the
/// exact Riemann-Stieltjes sum: the absolutely continuous part integrates the
/// weight against q, each jump of g contributes the matching one-sided
/// quantile value.
inline double rho(const DistortionFunction& g, const QuantileFunction& q) {
  double s = 0.0;
  const auto& ps = g.pieces();
  // absolutely continuous part: sum over linear pieces of g
  for (std::size_t i = 0; i + 1 < ps.size(); ++i) {
    const double tl = ps[i].t, tr = ps[i + 1].t;
    const double ua = 1.0 - tr, ub = 1.0 - tl;  // image interval in u
    const double sl = ps[i].slope;
    if (sl != 0.0) s += sl * q.partial_integral(ua, ub);
    if (g.quad() != 0.0) {
      // parabola contributes slope 1 - 2t = 2u - 1 at u = 1 - t
      s += g.quad() * (2.0 * q.partial_t_integral(ua, ub) - q.partial_integral(ua, ub));
    }
  }
  // jump part: up/down steps weighted by one-sided quantile values; the
  // limits are taken a hair away from u so that a quantile whose own segment
  // boundary sits within rounding distance of u still resolves to the correct
  // side (1 - t can differ from the boundary by an ulp)
  for (const auto& j : g.jumps()) {
    const double u = 1.0 - j.t;
    const double du = 1e-12 * (1.0 + std::fabs(u));
    const double up_to_point = j.point - j.left;    // attained step
    const double beyond_point = j.right - j.point;  // open step
    if (up_to_point != 0.0) s += up_to_point * q.right_value(std::min(1.0, u + du));
    if (beyond_point != 0.0) s += beyond_point * q(std::max(0.0, u - du));
  }
  require_finite(s, "distortion risk value");
  return s;
}

}  // namespace robustrisk

#endif  // ROBUSTRISK_DISTORTION_HPP
