#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "robustrisk/reference.hpp"

using namespace robustrisk;

namespace {

void check_partials_against_quadrature(const QuantileFunction& q, double a, double b,
                                       double tol = 1e-9) {
  std::vector<double> cuts = q.breakpoints();
  const double pi = integrate_graded([&](double u) { return q(u); }, a, b, cuts);
  const double pt = integrate_graded([&](double u) { return u * q(u); }, a, b, cuts);
  const double ps = integrate_graded([&](double u) { return q(u) * q(u); }, a, b, cuts);
  CHECK(q.partial_integral(a, b) == Catch::Approx(pi).margin(tol));
  CHECK(q.partial_t_integral(a, b) == Catch::Approx(pt).margin(tol));
  CHECK(q.partial_square_integral(a, b) == Catch::Approx(ps).margin(tol * 10));
}

}  // namespace

TEST_CASE("normal quantile: moments, symmetry, partial moments") {
  const QuantileFunction q = QuantileFunction::normal(2.0, 3.0);
  CHECK(q.mean() == Catch::Approx(2.0).margin(1e-12));
  CHECK(q.stddev() == Catch::Approx(3.0).margin(1e-12));
  CHECK(q(0.5) == Catch::Approx(2.0).margin(1e-12));
  CHECK(q(0.975) - 2.0 == Catch::Approx(-(q(0.025) - 2.0)).margin(1e-10));
  CHECK(q(0.975) == Catch::Approx(2.0 + 3.0 * 1.959963984540054).margin(1e-9));
  check_partials_against_quadrature(q, 0.05, 0.95);
  check_partials_against_quadrature(q, 0.0, 1.0, 1e-7);
  auto [m, s] = oracles::moments(q);
  CHECK(m == Catch::Approx(2.0).margin(1e-7));
  CHECK(s == Catch::Approx(3.0).margin(1e-6));
}

TEST_CASE("student t quantile: moments and graded partial moments") {
  const QuantileFunction q = QuantileFunction::student_t(5.0, 1.0, 2.0);
  CHECK(q.mean() == Catch::Approx(1.0).margin(1e-12));
  CHECK(q.stddev() == Catch::Approx(2.0 * std::sqrt(5.0 / 3.0)).margin(1e-10));
  CHECK(q(0.5) == Catch::Approx(1.0).margin(1e-12));
  check_partials_against_quadrature(q, 0.1, 0.9);
  check_partials_against_quadrature(q, 0.01, 0.99, 1e-8);
}

TEST_CASE("uniform quantile is exactly affine") {
  const QuantileFunction q = QuantileFunction::uniform(-1.0, 3.0);
  CHECK(q(0.25) == Catch::Approx(0.0).margin(1e-14));
  CHECK(q.mean() == Catch::Approx(1.0).margin(1e-14));
  CHECK(q.stddev() == Catch::Approx(4.0 / std::sqrt(12.0)).margin(1e-12));
  check_partials_against_quadrature(q, 0.2, 0.7, 1e-12);
}

TEST_CASE("empirical quantile: left continuity and one-sided limits") {
  const QuantileFunction q = QuantileFunction::empirical({3.0, 1.0, 2.0});
  CHECK(q(0.2) == 1.0);
  CHECK(q(1.0 / 3.0) == 1.0);                 // boundary belongs to the left cell
  CHECK(q.right_value(1.0 / 3.0) == 2.0);     // right limit jumps
  CHECK(q(0.5) == 2.0);
  CHECK(q(1.0) == 3.0);
  CHECK(q.mean() == Catch::Approx(2.0).margin(1e-14));
  CHECK(q.stddev() == Catch::Approx(std::sqrt(2.0 / 3.0)).margin(1e-12));
  CHECK(q.partial_integral(0.0, 0.5) == Catch::Approx(1.0 / 3.0 + 2.0 / 6.0).margin(1e-14));
  check_partials_against_quadrature(q, 0.0, 1.0, 1e-9);
}

TEST_CASE("grid quantile: piecewise-linear evaluation and exact moments") {
  const QuantileFunction q = QuantileFunction::grid({0.0, 0.5, 1.0}, {0.0, 1.0, 3.0});
  CHECK(q(0.25) == Catch::Approx(0.5).margin(1e-14));
  CHECK(q(0.75) == Catch::Approx(2.0).margin(1e-14));
  CHECK(q.mean() == Catch::Approx(0.25 + 1.0).margin(1e-13));
  check_partials_against_quadrature(q, 0.0, 1.0, 1e-10);
  check_partials_against_quadrature(q, 0.3, 0.8, 1e-10);
}

TEST_CASE("affine transform maps values and moments consistently") {
  const QuantileFunction base = QuantileFunction::student_t(6.0);
  const QuantileFunction q = base.affine(5.0, 2.0);
  CHECK(q.mean() == Catch::Approx(5.0 + 2.0 * base.mean()).margin(1e-12));
  CHECK(q.stddev() == Catch::Approx(2.0 * base.stddev()).margin(1e-12));
  for (double u : {0.1, 0.37, 0.5, 0.83, 0.99})
    CHECK(q(u) == Catch::Approx(5.0 + 2.0 * base(u)).margin(1e-11));
  const QuantileFunction e = QuantileFunction::empirical({1.0, 2.0}).affine(-1.0, 3.0);
  CHECK(e(0.4) == Catch::Approx(2.0).margin(1e-14));
  CHECK(e(0.9) == Catch::Approx(5.0).margin(1e-14));
}

TEST_CASE("grid approximation of a smooth quantile converges") {
  const QuantileFunction q = QuantileFunction::normal(0.0, 1.0);
  const QuantileFunction g = QuantileFunction::grid_of(q, 4096);
  CHECK(g.mean() == Catch::Approx(0.0).margin(2e-4));
  CHECK(g.stddev() == Catch::Approx(1.0).margin(2e-3));
  for (double u : {0.05, 0.3, 0.62, 0.9})
    CHECK(g(u) == Catch::Approx(q(u)).margin(2e-4));
}

TEST_CASE("quantiles are non-decreasing with consistent one-sided limits") {
  rng r(7);
  const QuantileFunction qs[] = {
      QuantileFunction::normal(-1.0, 0.5), QuantileFunction::student_t(4.0, 0.0, 1.5),
      QuantileFunction::uniform(0.0, 1.0), QuantileFunction::empirical({0.0, 0.1, 0.1, 4.0}),
      QuantileFunction::grid({0.0, 0.4, 1.0}, {-2.0, 0.0, 0.5})};
  for (const auto& q : qs) {
    for (int i = 0; i < 200; ++i) {
      double a = r.uniform(1e-6, 1.0 - 1e-6), b = r.uniform(1e-6, 1.0 - 1e-6);
      if (a > b) std::swap(a, b);
      CHECK(q(a) <= q(b) + 1e-12);
      CHECK(q(a) <= q.right_value(a) + 1e-12);
    }
  }
}

TEST_CASE("validation rejects malformed references") {
  CHECK_THROWS_AS(QuantileFunction::normal(0.0, 0.0), parameter_error);
  CHECK_THROWS_AS(QuantileFunction::student_t(2.0), parameter_error);
  CHECK_THROWS_AS(QuantileFunction::uniform(1.0, 1.0), parameter_error);
  CHECK_THROWS_AS(QuantileFunction::empirical({}), parameter_error);
  CHECK_THROWS_AS(QuantileFunction::grid({0.0, 0.5}, {1.0, 0.0}), parameter_error);
  CHECK_THROWS_AS(QuantileFunction::grid({0.5, 0.5}, {0.0, 1.0}), parameter_error);
}

TEST_CASE("elliptical references standardize to unit moments") {
  const EllipticalReference en = EllipticalReference::normal();
  CHECK(en.F0.mean() == Catch::Approx(0.0).margin(1e-12));
  CHECK(en.F0.stddev() == Catch::Approx(1.0).margin(1e-12));
  const EllipticalReference et = EllipticalReference::student_t(7.0);
  CHECK(et.F0.mean() == Catch::Approx(0.0).margin(1e-10));
  CHECK(et.F0.stddev() == Catch::Approx(1.0).margin(1e-10));
  const EllipticalReference ec =
      EllipticalReference::custom(QuantileFunction::uniform(2.0, 10.0));
  CHECK(ec.F0.mean() == Catch::Approx(0.0).margin(1e-10));
  CHECK(ec.F0.stddev() == Catch::Approx(1.0).margin(1e-10));
}
