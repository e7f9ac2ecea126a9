#pragma once

#include "tnerm/estimation.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tnerm {

struct AreaPrediction {
  std::string area_id;
  int n = 0;
  double z = 0.0;            // mean transformed response at lambda-hat
  double regression = 0.0;   // xbar' beta-hat
  double xi_hat_eb = 0.0;
  double sigma_hat_i = 0.0;
  double teblup = 0.0;       // data scale
  double shrinkage = 0.0;    // n rho / (1 + n rho)
};

/// n rho / (1 + n rho); zero when sigma_v2 = 0.
double shrinkage_weight(int n, const VarianceComponents& vc);

/// Mean of xi_i = xbar' beta + v_i given y_i.
double conditional_mean(const AreaSummary& s, const ModelParams& params);

/// sqrt(sigma_v2 / (1 + n rho))
double conditional_sd(int n, const VarianceComponents& vc);

double eblup(const AreaSummary& s, const FitResult& fit);
double teblup(const AreaSummary& s, const FitResult& fit);

AreaPrediction predict_area(const AreaSummary& s, const FitResult& fit);
std::vector<AreaPrediction> predict(const FitResult& fit);

/// Studentised pivot sigma-hat^{-1} (h(h^{-1}(xi, lambda_true), lambda_hat) - xi-hat).
/// Empty when sigma_hat_i = 0: the fitted conditional law is a point mass.
std::optional<double> pivot_t(double xi_true, const AreaPrediction& pred, const TransformSpec& spec,
                              double lambda_true, double lambda_hat);

}  // namespace tnerm
