#include "oracles.hpp"
#include "tnerm/error.hpp"
#include "tnerm/estimation.hpp"
#include "tnerm/io.hpp"
#include "tnerm/prediction.hpp"

#include <doctest.h>

#include <random>

using namespace tnerm;

namespace {

FitResult crop_fit() {
  CsvSchema schema{"county", "corn_hectares", {"logit_corn_share", "logit_soybeans_share"}};
  auto d = load_csv(std::string(TNERM_DATA_DIR) + "/crop_bhf.csv", schema);
  return fit(d, TransformSpec::dual_power_logistic(0.0, 250.0));
}

}  // namespace

TEST_SUITE("prediction") {

TEST_CASE("BLUP and conditional variance equal the dense normal conditioning formulas") {
  std::mt19937_64 g(31);
  const auto s = TransformSpec::dual_power();
  auto d = oracle::random_design(g, 6, {1, 2, 4}, 2);
  oracle::simulate(g, d, s, 0.4, Eigen::Vector2d(1.0, 0.5), 0.5, 1.0);
  FitResult f;
  f.transform = s;
  f.params.lambda = 0.4;
  f.params.beta = Eigen::Vector2d(0.9, 0.6);
  f.params.variance.sigma_v2 = 0.4;
  f.params.variance.sigma_e2 = 1.2;
  f.summaries = area_summaries(d, s, 0.4);
  for (std::size_t i = 0; i < d.m(); ++i) {
    const auto& a = d.areas[i];
    const auto n = a.size();
    Eigen::MatrixXd S = 1.2 * Eigen::MatrixXd::Identity(n, n) + 0.4 * Eigen::MatrixXd::Ones(n, n);
    Eigen::VectorXd r(n);
    for (Eigen::Index j = 0; j < n; ++j) r(j) = oracle::h(a.y(j), s, 0.4) - a.X.row(j).dot(f.params.beta);
    Eigen::VectorXd one = Eigen::VectorXd::Ones(n);
    const Eigen::VectorXd Sij = S.ldlt().solve(one);
    const double v_mean = 0.4 * Sij.dot(r);
    const double v_var = 0.4 - 0.16 * one.dot(Sij);
    const double xi = a.covariate_mean().dot(f.params.beta) + v_mean;

    const auto p = predict_area(f.summaries[i], f);
    CHECK(p.xi_hat_eb == doctest::Approx(xi).epsilon(1e-12));
    CHECK(p.sigma_hat_i == doctest::Approx(std::sqrt(v_var)).epsilon(1e-12));
    CHECK(p.teblup == doctest::Approx(oracle::h_inv(xi, s, 0.4)).epsilon(1e-10));
    CHECK(p.shrinkage == doctest::Approx(n / 3.0 / (1.0 + n / 3.0)).epsilon(1e-14));
    CHECK(p.regression == doctest::Approx(a.covariate_mean().dot(f.params.beta)).epsilon(1e-14));
  }
}

TEST_CASE("shrinkage limits") {
  VarianceComponents vc;
  vc.sigma_e2 = 1.0;
  vc.sigma_v2 = 0.0;
  CHECK(shrinkage_weight(5, vc) == 0.0);
  CHECK(conditional_sd(5, vc) == 0.0);
  vc.sigma_v2 = 1e12;
  CHECK(shrinkage_weight(5, vc) == doctest::Approx(1.0));
  // conditional sd tends to sigma_e / sqrt(n) as sigma_v2 grows
  CHECK(conditional_sd(4, vc) == doctest::Approx(0.5).epsilon(1e-6));
  vc.sigma_e2 = 0.0;
  CHECK_THROWS_AS(shrinkage_weight(5, vc), ParameterError);
}

TEST_CASE("crop TEBLUPs") {
  const auto f = crop_fit();
  const auto preds = predict(f);
  REQUIRE(preds.size() == 12);
  auto by_id = [&](const std::string& id) {
    for (const auto& p : preds)
      if (p.area_id == id) return p;
    FAIL("missing county " << id);
    return preds.front();
  };
  CHECK(by_id("Kossuth").teblup == doctest::Approx(119.556).epsilon(1e-5));
  CHECK(by_id("Hardin").teblup == doctest::Approx(115.122).epsilon(1e-5));
  CHECK(by_id("CerroGordo").teblup == doctest::Approx(157.239).epsilon(1e-5));
  for (const auto& p : preds) {
    CHECK(p.teblup > 0.0);
    CHECK(p.teblup < 250.0);
    CHECK(p.sigma_hat_i > 0.0);
    CHECK(eblup(f.summaries[0], f) == doctest::Approx(preds[0].xi_hat_eb));
  }
  // larger samples are shrunk less towards the regression
  CHECK(by_id("Hardin").shrinkage > by_id("Worth").shrinkage);
}

TEST_CASE("pivot") {
  AreaPrediction p;
  p.xi_hat_eb = 0.3;
  p.sigma_hat_i = 0.5;
  const auto s = TransformSpec::dual_power();
  auto t = pivot_t(1.3, p, s, 0.4, 0.4);
  REQUIRE(t);
  CHECK(*t == doctest::Approx(2.0).epsilon(1e-14));
  // a different lambda-hat moves xi through the data scale
  auto t2 = pivot_t(1.3, p, s, 0.4, 0.8);
  REQUIRE(t2);
  const double y = oracle::h_inv(1.3, s, 0.4);
  CHECK(*t2 == doctest::Approx((oracle::h(y, s, 0.8) - 0.3) / 0.5).epsilon(1e-9));
  p.sigma_hat_i = 0.0;
  CHECK_FALSE(pivot_t(1.3, p, s, 0.4, 0.4));
}

}  // TEST_SUITE
