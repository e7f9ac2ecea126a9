#include "oracles.hpp"
#include "tnerm/error.hpp"
#include "tnerm/transforms.hpp"

#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

using namespace tnerm;

namespace {

// Five-point central difference.
double fd(const std::function<double(double)>& f, double x, double step) {
  return (-f(x + 2 * step) + 8 * f(x + step) - 8 * f(x - step) + f(x - 2 * step)) / (12 * step);
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-8); }

struct Point {
  double x, lambda;
};

Point random_point(std::mt19937_64& g, const TransformSpec& s) {
  std::uniform_real_distribution<double> L(-3.0, 3.0), lam(0.0, 2.0);
  const double l = L(g);
  double x;
  if (s.family == Family::DualPower) x = s.shift_a + std::exp(l);
  else x = s.shift_a + (s.scale_b - s.shift_a) / (1.0 + std::exp(-l));
  return {x, lam(g)};
}

}  // namespace

TEST_SUITE("transforms") {

TEST_CASE("forward agrees with the power form") {
  std::mt19937_64 g(1);
  for (auto s : {TransformSpec::dual_power(0.0), TransformSpec::dual_power(-2.5),
                 TransformSpec::dual_power_logistic(0.0, 1.0), TransformSpec::dual_power_logistic(0.0, 250.0)}) {
    for (int k = 0; k < 500; ++k) {
      auto p = random_point(g, s);
      CHECK(forward(p.x, s, p.lambda) == doctest::Approx(oracle::h(p.x, s, p.lambda)).epsilon(1e-12));
      CHECK(forward(p.x, s, 0.0) == doctest::Approx(std::log(oracle::base_u(p.x, s))).epsilon(1e-14));
    }
  }
}

TEST_CASE("known values") {
  const auto dp = TransformSpec::dual_power();
  // (e - 1/e) / 2 = sinh(1)
  CHECK(forward(std::exp(1.0), dp, 1.0) == doctest::Approx(std::sinh(1.0)).epsilon(1e-15));
  // x = 4, lambda = 0.5: (2 - 0.5) / 1
  CHECK(forward(4.0, dp, 0.5) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(forward(1.0, dp, 0.7) == 0.0);
  const auto dpl = TransformSpec::dual_power_logistic(0.0, 1.0);
  CHECK(forward(0.5, dpl, 0.9) == 0.0);
  // odds 4 at x = 0.8
  CHECK(forward(0.8, dpl, 0.5) == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(forward(0.8, dpl, 0.0) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
}

TEST_CASE("round trip") {
  std::mt19937_64 g(2);
  for (auto s : {TransformSpec::dual_power(1.0), TransformSpec::dual_power_logistic(-1.0, 3.0)}) {
    for (int k = 0; k < 1000; ++k) {
      auto p = random_point(g, s);
      const double back = inverse(forward(p.x, s, p.lambda), s, p.lambda);
      CHECK(std::abs(back - p.x) <= 1e-10 * std::max(1.0, std::abs(p.x)));
    }
  }
}

TEST_CASE("derivatives match finite differences") {
  std::mt19937_64 g(3);
  for (auto s : {TransformSpec::dual_power(0.0), TransformSpec::dual_power_logistic(0.0, 1.0)}) {
    for (int k = 0; k < 300; ++k) {
      auto p = random_point(g, s);
      const double sx = 1e-3 * std::min(p.x - s.shift_a,
                                        s.family == Family::DualPower ? 1.0 : s.scale_b - p.x);
      const double sl = 1e-3;
      const double lam = std::max(p.lambda, 3 * sl);
      auto in_x = [&](double x) { return forward(x, s, lam); };
      auto in_l = [&](double l) { return forward(p.x, s, l); };
      auto dx_in_l = [&](double l) { return d_forward_dx(p.x, s, l); };
      CHECK(rel(d_forward_dx(p.x, s, lam), fd(in_x, p.x, sx)) < 1e-5);
      CHECK(rel(d_forward_dlambda(p.x, s, lam), fd(in_l, lam, sl)) < 1e-5);
      CHECK(rel(d2_forward_dxdlambda(p.x, s, lam), fd(dx_in_l, lam, sl)) < 1e-5);
      CHECK(d_forward_dx(p.x, s, lam) == doctest::Approx(oracle::h_x(p.x, s, lam)).epsilon(1e-12));
    }
  }
}

TEST_CASE("continuity at lambda = 0") {
  std::mt19937_64 g(4);
  for (auto s : {TransformSpec::dual_power(0.0), TransformSpec::dual_power_logistic(0.0, 1.0)}) {
    for (int k = 0; k < 200; ++k) {
      auto p = random_point(g, s);
      for (double eps : {1e-4, 1e-6, 1e-9}) {
        CHECK(std::abs(forward(p.x, s, eps) - forward(p.x, s, 0.0)) < 1e-7);
        // h_lambda ~ lambda L^3 / 3 near zero
        const double L = std::log(oracle::base_u(p.x, s));
        CHECK(std::abs(d_forward_dlambda(p.x, s, eps) - d_forward_dlambda(p.x, s, 0.0)) <=
              eps * std::abs(L * L * L) / 3.0 * 1.01 + 1e-15);
        const double z = forward(p.x, s, 0.0);
        CHECK(std::abs(inverse(z, s, eps) - inverse(z, s, 0.0)) < 1e-7 * std::max(1.0, p.x));
      }
      CHECK(d_forward_dlambda(p.x, s, 0.0) == 0.0);
      CHECK(std::abs(d_forward_dlambda(p.x, s, 1e-9) - d_forward_dlambda(p.x, s, 0.0)) < 1e-7);
    }
  }
}

TEST_CASE("kernel series and closed form agree across the switch") {
  for (double L : {-2.0, -0.3, 0.05, 0.7, 3.0}) {
    for (double t : {0.0999, 0.1001, 0.01, 1e-5}) {
      const double lam = t / std::abs(L);
      const auto all = kernel::all_terms(L, lam);
      CHECK(all.h == doctest::Approx(std::sinh(lam * L) / lam).epsilon(1e-13));
      CHECK(all.h_lambda ==
            doctest::Approx((lam * L * std::cosh(lam * L) - std::sinh(lam * L)) / (lam * lam)).epsilon(1e-7));
      CHECK(all.jacobian_ratio == doctest::Approx(L * std::tanh(lam * L)).epsilon(1e-13));
      CHECK(all.log_cosh == doctest::Approx(std::log(std::cosh(lam * L))).epsilon(1e-12));
      CHECK(all.h == doctest::Approx(kernel::h(L, lam)).epsilon(1e-14));
      CHECK(all.log_cosh == doctest::Approx(kernel::log_cosh(L, lam)).epsilon(1e-14));
    }
  }
  // large arguments: log cosh must not overflow
  CHECK(kernel::log_cosh(800.0, 1.0) == doctest::Approx(800.0 - std::log(2.0)));
}

TEST_CASE("monotone in x and odd about the centre of the logistic range") {
  std::mt19937_64 g(5);
  const auto dpl = TransformSpec::dual_power_logistic(2.0, 10.0);
  for (int k = 0; k < 300; ++k) {
    auto p = random_point(g, dpl);
    const double mirror = 12.0 - p.x;
    CHECK(forward(mirror, dpl, p.lambda) == doctest::Approx(-forward(p.x, dpl, p.lambda)).epsilon(1e-10));
    CHECK(d_forward_dx(p.x, dpl, p.lambda) > 0.0);
  }
}

TEST_CASE("inverse lands inside the domain") {
  const auto dpl = TransformSpec::dual_power_logistic(0.0, 250.0);
  for (double z : {-30.0, -5.0, 0.0, 5.0, 30.0}) {
    for (double lam : {0.0, 0.37, 1.0, 2.0}) {
      const double y = inverse(z, dpl, lam);
      CHECK(y > 0.0);
      CHECK(y < 250.0);
    }
  }
  const auto dp = TransformSpec::dual_power(3.0);
  CHECK(inverse(-50.0, dp, 1.0) > 3.0);
}

TEST_CASE("identity family") {
  const auto id = TransformSpec::identity();
  CHECK(forward(-3.5, id, 0.0) == -3.5);
  CHECK(inverse(2.0, id, 0.0) == 2.0);
  CHECK(d_forward_dx(7.0, id, 0.0) == 1.0);
  CHECK(d_forward_dlambda(7.0, id, 0.0) == 0.0);
  CHECK_FALSE(id.lambda_is_free());
}

TEST_CASE("domain and parameter errors") {
  const auto dp = TransformSpec::dual_power(1.0);
  CHECK_THROWS_AS(forward(1.0, dp, 0.5), InputError);
  CHECK_THROWS_AS(forward(0.5, dp, 0.5), InputError);
  CHECK_THROWS_AS(forward(2.0, dp, -0.1), ParameterError);
  const auto dpl = TransformSpec::dual_power_logistic(0.0, 250.0);
  CHECK_THROWS_AS(forward(250.0, dpl, 0.5), InputError);
  CHECK_THROWS_AS(forward(0.0, dpl, 0.5), InputError);
  CHECK_THROWS_AS(TransformSpec::dual_power_logistic(1.0, 1.0).check(), ParameterError);
  CHECK_THROWS_AS(TransformSpec::dual_power().with_fixed_lambda(-1.0).check(), ParameterError);
  CHECK_THROWS_AS(family_from_string("boxcox"), ParameterError);
  // overflow is reported, not returned as inf
  CHECK_THROWS_AS(forward(1e300, TransformSpec::dual_power(), 5.0), NumericError);

  UnitLevelDataset d;
  d.p = 1;
  Area a;
  a.id = "x";
  a.y = Eigen::VectorXd::Constant(2, 0.5);
  a.y(1) = 250.0;
  a.X = Eigen::MatrixXd::Ones(2, 1);
  d.areas.push_back(a);
  CHECK_THROWS_AS(check_domain(d, dpl), InputError);
}

TEST_CASE("jacobian score term is the sum of h_x lambda / h_x") {
  std::mt19937_64 g(6);
  auto s = TransformSpec::dual_power_logistic(0.0, 1.0);
  auto d = oracle::random_design(g, 5, {2, 3}, 1);
  std::uniform_real_distribution<double> U(0.05, 0.95);
  double want = 0.0;
  const double lam = 0.6;
  for (auto& a : d.areas)
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      a.y(j) = U(g);
      want += d2_forward_dxdlambda(a.y(j), s, lam) / oracle::h_x(a.y(j), s, lam);
    }
  CHECK(score_jacobian_term(d, s, lam) == doctest::Approx(want).epsilon(1e-12));
}

}  // TEST_SUITE
