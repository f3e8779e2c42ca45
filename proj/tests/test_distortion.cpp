#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "robustrisk/distortion.hpp"
#include "robustrisk/reference.hpp"

using namespace robustrisk;

namespace {

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }

// Closed-form tail expectation of the standard normal: ES_a = pdf(z_a)/(1-a).
double normal_es(double a) {
  const QuantileFunction q = QuantileFunction::normal(0.0, 1.0);
  return normal_pdf(q(a)) / (1.0 - a);
}

}  // namespace

TEST_CASE("metric strings parse, format, and round-trip") {
  const std::vector<std::string> forms = {
      "gd",
      "mmd",
      "iqd+(0.05)",
      "iqd-(0.1)",
      "var(0.975)",
      "var+(0.9)",
      "es(0.95)",
      "rvar(0.3,0.7)",
      "gluevar(beta=0.975,alpha=0.95,h1=0.333333,h2=0.666667)",
      "es_minus_var(0.95,0.975)",
  };
  for (const std::string& s : forms) {
    const MetricSpec m = parse_metric(s);
    const MetricSpec n = parse_metric(format_metric(m));
    CHECK(n.family == m.family);
    CHECK(n.alpha == Catch::Approx(m.alpha).margin(1e-12));
    CHECK(n.beta == Catch::Approx(m.beta).margin(1e-12));
    CHECK(n.h1 == Catch::Approx(m.h1).margin(1e-12));
    CHECK(n.h2 == Catch::Approx(m.h2).margin(1e-12));
  }
  CHECK(parse_metric("es(alpha=0.95)").alpha == Catch::Approx(0.95));
  CHECK(parse_metric("rvar(0.3 0.7)").beta == Catch::Approx(0.7));
  CHECK(parse_metric("identity").family == Family::es);
  CHECK_THROWS_AS(parse_metric("not_a_metric(1)"), parameter_error);
  CHECK_THROWS_AS(parse_metric("es()"), parameter_error);
}

TEST_CASE("family construction rejects invalid parameters") {
  CHECK_THROWS_AS(make_distortion("es(1.0)"), parameter_error);
  CHECK_THROWS_AS(make_distortion("iqd+(0.5)"), parameter_error);
  CHECK_THROWS_AS(make_distortion("rvar(0.7,0.3)"), parameter_error);
  CHECK_THROWS_AS(make_distortion(MetricSpec{Family::gluevar, 0.95, 0.975, 0.8, 0.2}),
                  parameter_error);
  CHECK_THROWS_AS(make_distortion("var(1.2)"), parameter_error);
}

TEST_CASE("closed-form metric values at the standard normal") {
  const QuantileFunction q = QuantileFunction::normal(0.0, 1.0);
  CHECK(rho(make_distortion("gd"), q) ==
        Catch::Approx(1.0 / std::sqrt(kPi)).margin(1e-9));
  CHECK(rho(make_distortion("mmd"), q) ==
        Catch::Approx(std::sqrt(2.0 / kPi)).margin(1e-9));
  CHECK(rho(make_distortion("var(0.975)"), q) == Catch::Approx(q(0.975)).margin(1e-10));
  CHECK(rho(make_distortion("es(0.95)"), q) == Catch::Approx(normal_es(0.95)).margin(1e-9));
  CHECK(rho(make_distortion("iqd+(0.05)"), q) ==
        Catch::Approx(q(0.95) - q(0.05)).margin(1e-10));
  CHECK(rho(make_distortion("iqd-(0.05)"), q) ==
        Catch::Approx(q(0.95) - q(0.05)).margin(1e-10));
  // rvar averages the quantile between its two levels
  const double rv = rho(make_distortion("rvar(0.95,0.975)"), q);
  CHECK(rv == Catch::Approx((normal_pdf(q(0.95)) - normal_pdf(q(0.975))) / 0.025).margin(1e-8));
  CHECK(rho(make_distortion("es_minus_var(0.95,0.975)"), q) ==
        Catch::Approx(normal_es(0.95) - q(0.975)).margin(1e-9));
  CHECK(rho(make_distortion("identity"), QuantileFunction::normal(2.0, 3.0)) ==
        Catch::Approx(2.0).margin(1e-10));
}

TEST_CASE("gluevar decomposes into expected-shortfall and quantile terms") {
  const QuantileFunction q = QuantileFunction::normal(0.0, 1.0);
  // layered parameters with equal segment slopes: beta weight vanishes
  const double g1 = rho(make_distortion(
      MetricSpec{Family::gluevar, 0.95, 0.975, 1.0 / 3.0, 2.0 / 3.0}), q);
  CHECK(g1 == Catch::Approx((2.0 / 3.0) * normal_es(0.95) + (1.0 / 3.0) * q(0.95))
                  .margin(1e-9));
  // generic parameters: weights from matching the two slopes and the jump
  const double b = 0.95, a = 0.9, h1 = 0.2, h2 = 0.7;
  const double ca = (h2 - h1) * (1.0 - a) / (b - a);
  const double cb = h1 - (h2 - h1) * (1.0 - b) / (b - a);
  const double cv = 1.0 - h2;
  const double g2 = rho(make_distortion(MetricSpec{Family::gluevar, a, b, h1, h2}), q);
  CHECK(g2 ==
        Catch::Approx(cb * normal_es(b) + ca * normal_es(a) + cv * q(a)).margin(1e-9));
}

TEST_CASE("risk values match the x-space definition across references") {
  const std::vector<QuantileFunction> refs = {
      QuantileFunction::normal(0.3, 1.4), QuantileFunction::student_t(5.0, -1.0, 0.8),
      QuantileFunction::uniform(-2.0, 5.0)};
  const std::vector<std::string> metrics = {"gd",          "mmd",
                                            "iqd+(0.05)",  "var(0.975)",
                                            "es(0.95)",    "rvar(0.9,0.95)",
                                            "es_minus_var(0.95,0.975)",
                                            "gluevar(beta=0.975,alpha=0.95,h1=0.3,h2=0.7)"};
  for (const auto& q : refs)
    for (const auto& m : metrics) {
      const DistortionFunction g = make_distortion(m);
      CHECK(rho(g, q) == Catch::Approx(oracles::rho_xspace(g, q)).margin(2e-6));
    }
}

TEST_CASE("risk values match the u-space definition for continuous distortions") {
  const std::vector<QuantileFunction> refs = {
      QuantileFunction::normal(0.0, 1.0), QuantileFunction::student_t(4.5),
      QuantileFunction::uniform(0.0, 1.0), QuantileFunction::empirical({-1.0, 0.5, 0.5, 2.0}),
      QuantileFunction::grid({0.0, 0.3, 1.0}, {-1.0, 0.2, 4.0})};
  const std::vector<std::string> metrics = {"gd", "mmd", "es(0.9)", "rvar(0.6,0.8)"};
  for (const auto& q : refs)
    for (const auto& m : metrics) {
      const DistortionFunction g = make_distortion(m);
      CHECK(rho(g, q) == Catch::Approx(oracles::rho_uspace(g, q)).margin(1e-7));
    }
}

TEST_CASE("random piecewise-linear distortions agree with both oracles") {
  rng r(101);
  const QuantileFunction q = QuantileFunction::normal(0.2, 1.1);
  for (int i = 0; i < 25; ++i) {
    const DistortionFunction g = oracles::random_step_distortion(r, 8);
    CHECK(rho(g, q) == Catch::Approx(oracles::rho_uspace(g, q)).margin(1e-7));
    CHECK(rho(g, q) == Catch::Approx(oracles::rho_xspace(g, q)).margin(2e-6));
  }
}

TEST_CASE("location-scale equivariance") {
  const QuantileFunction base = QuantileFunction::student_t(6.0);
  const QuantileFunction moved = base.affine(3.0, 2.0);
  // normalized distortions translate and scale
  for (const std::string& m : {"var(0.975)", "es(0.95)", "rvar(0.9,0.95)"}) {
    const DistortionFunction g = make_distortion(m);
    CHECK(rho(g, moved) == Catch::Approx(3.0 + 2.0 * rho(g, base)).margin(1e-9));
  }
  // deviation-type distortions are translation invariant and scale linearly
  for (const std::string& m : {"gd", "mmd", "iqd+(0.1)", "es_minus_var(0.9,0.95)"}) {
    const DistortionFunction g = make_distortion(m);
    CHECK(g.total_at_one() == Catch::Approx(0.0).margin(1e-14));
    CHECK(rho(g, moved) == Catch::Approx(2.0 * rho(g, base)).margin(1e-9));
  }
}

TEST_CASE("negation flips the risk value") {
  const std::vector<QuantileFunction> refs = {QuantileFunction::normal(1.0, 2.0),
                                              QuantileFunction::grid({0.0, 0.5, 1.0},
                                                                     {-1.0, 0.0, 2.0})};
  for (const auto& q : refs)
    for (const std::string& m :
         {"gd", "var(0.9)", "es(0.9)", "iqd+(0.05)", "es_minus_var(0.9,0.95)"}) {
      const DistortionFunction g = make_distortion(m);
      CHECK(rho(negate(g), q) == Catch::Approx(-rho(g, q)).margin(1e-10));
    }
}

TEST_CASE("upper-semicontinuous lift raises breakpoints and maps families") {
  const DistortionFunction v = make_distortion("var(0.95)");
  const DistortionFunction vp = usc_version(v);
  CHECK(vp.family() == Family::var_plus);
  CHECK(vp.usc_value(0.05) == 1.0);
  CHECK(v(0.05) == 0.0);
  const DistortionFunction gm = usc_version(make_distortion("iqd-(0.1)"));
  CHECK(gm.family() == Family::iqd_plus);
  for (double t : {0.05, 0.1, 0.3, 0.9, 0.95})
    CHECK(gm.usc_value(t) >= make_distortion("iqd-(0.1)")(t) - 1e-14);
  // lifting is idempotent on an already-usc distortion
  const DistortionFunction g2 = usc_version(vp);
  CHECK(g2.family() == Family::var_plus);
  // continuous distortions are unchanged
  const QuantileFunction q = QuantileFunction::normal(0.0, 1.0);
  const DistortionFunction e = make_distortion("es(0.9)");
  CHECK(rho(usc_version(e), q) == Catch::Approx(rho(e, q)).margin(1e-12));
}

TEST_CASE("jump lists and continuity flags per family") {
  CHECK(make_distortion("gd").continuous());
  CHECK(make_distortion("mmd").continuous());
  CHECK(make_distortion("es(0.95)").continuous());
  CHECK(make_distortion("rvar(0.9,0.95)").continuous());
  CHECK_FALSE(make_distortion("var(0.95)").continuous());
  CHECK(make_distortion("var(0.95)").jumps().size() == 1);
  CHECK(make_distortion("iqd+(0.05)").jumps().size() == 2);
  CHECK(make_distortion("es_minus_var(0.9,0.95)").jumps().size() == 1);
  CHECK(make_distortion(
            MetricSpec{Family::gluevar, 0.95, 0.975, 1.0 / 3.0, 2.0 / 3.0})
            .jumps()
            .size() == 1);
  CHECK(make_distortion("gd").concave());
  CHECK(make_distortion("mmd").concave());
  CHECK(make_distortion("es(0.9)").concave());
  CHECK_FALSE(make_distortion("var(0.9)").concave());
  CHECK_FALSE(make_distortion("rvar(0.9,0.95)").concave());
}

TEST_CASE("weight functions reproduce the distortion derivative") {
  // step weight of the mean-median deviation: -1 then +1 around one half
  const WeightFunction wm = weight_of(make_distortion("mmd"));
  CHECK(wm(0.25) == Catch::Approx(-1.0).margin(1e-14));
  CHECK(wm(0.75) == Catch::Approx(1.0).margin(1e-14));
  // affine weight of the variability metric with the parabola generator
  const WeightFunction wg = weight_of(make_distortion("gd"));
  for (double u : {0.1, 0.5, 0.8})
    CHECK(wg(u) == Catch::Approx(2.0 * u - 1.0).margin(1e-14));
  // expected shortfall: 0 before the level, 1/(1-a) after
  const WeightFunction we = weight_of(make_distortion("es(0.95)"));
  CHECK(we(0.9) == Catch::Approx(0.0).margin(1e-14));
  CHECK(we(0.97) == Catch::Approx(20.0).margin(1e-12));
  // jumps are rejected
  CHECK_THROWS_AS(weight_of(make_distortion("var(0.9)")), parameter_error);
}

TEST_CASE("weight moments match quadrature of the weight itself") {
  rng r(11);
  for (int i = 0; i < 10; ++i) {
    const DistortionFunction g = oracles::random_step_distortion(r, 6);
    const WeightFunction w = weight_of(g);
    std::vector<double> cuts = w.knots;
    const double i0 = integrate_graded([&](double u) { return w(u); }, 0.0, 1.0, cuts);
    const double i1 =
        integrate_graded([&](double u) { return u * w(u); }, 0.0, 1.0, cuts);
    const double i2 =
        integrate_graded([&](double u) { return w(u) * w(u); }, 0.0, 1.0, cuts);
    CHECK(w.integral(0.0, 1.0) == Catch::Approx(i0).margin(1e-10));
    CHECK(w.t_integral(0.0, 1.0) == Catch::Approx(i1).margin(1e-10));
    CHECK(w.square_integral(0.0, 1.0) == Catch::Approx(i2).margin(1e-9));
    // the weight integral over (0,1) recovers g(1) - g(0)
    CHECK(i0 == Catch::Approx(g.total_at_one()).margin(1e-10));
  }
}

TEST_CASE("risk of a weight-represented metric equals the weighted quantile integral") {
  const QuantileFunction q = QuantileFunction::normal(0.5, 2.0);
  rng r(23);
  for (int i = 0; i < 10; ++i) {
    const DistortionFunction g = oracles::random_step_distortion(r, 6);
    const WeightFunction w = weight_of(g);
    const double direct = integrate_graded([&](double u) { return w(u) * q(u); }, 0.0,
                                           1.0, w.knots);
    CHECK(rho(g, q) == Catch::Approx(direct).margin(1e-7));
  }
}
