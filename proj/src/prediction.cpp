#include "tnerm/prediction.hpp"

#include "tnerm/error.hpp"

#include <cmath>

namespace tnerm {

namespace {

void require_positive_e(const VarianceComponents& vc) {
  if (!(vc.sigma_e2 > 0.0)) throw ParameterError("prediction requires sigma_e2 > 0");
  if (!(vc.sigma_v2 >= 0.0)) throw ParameterError("prediction requires sigma_v2 >= 0");
}

// h(h^{-1}(xi, from), to) without leaving the base coordinate, so the
// logistic family does not round through (a, b).
double rescale(double xi, const TransformSpec& spec, double from, double to) {
  if (spec.family == Family::Identity || from == to) return xi;
  return kernel::h(kernel::h_inverse(xi, from), to);
}

}  // namespace

double shrinkage_weight(int n, const VarianceComponents& vc) {
  require_positive_e(vc);
  const double nr = double(n) * vc.rho();
  return nr / (1.0 + nr);
}

double conditional_mean(const AreaSummary& s, const ModelParams& params) {
  const double reg = s.xbar.dot(params.beta);
  return reg + shrinkage_weight(s.n, params.variance) * (s.z - reg);
}

double conditional_sd(int n, const VarianceComponents& vc) {
  require_positive_e(vc);
  if (vc.sigma_v2 == 0.0) return 0.0;
  return std::sqrt(vc.sigma_v2 / (1.0 + double(n) * vc.rho()));
}

double eblup(const AreaSummary& s, const FitResult& fit) { return conditional_mean(s, fit.params); }

double teblup(const AreaSummary& s, const FitResult& fit) {
  return inverse(eblup(s, fit), fit.transform, fit.params.lambda);
}

AreaPrediction predict_area(const AreaSummary& s, const FitResult& fit) {
  AreaPrediction p;
  p.area_id = s.area_id;
  p.n = s.n;
  p.z = s.z;
  p.regression = s.xbar.dot(fit.params.beta);
  p.shrinkage = shrinkage_weight(s.n, fit.params.variance);
  p.xi_hat_eb = p.regression + p.shrinkage * (s.z - p.regression);
  p.sigma_hat_i = conditional_sd(s.n, fit.params.variance);
  p.teblup = inverse(p.xi_hat_eb, fit.transform, fit.params.lambda);
  return p;
}

std::vector<AreaPrediction> predict(const FitResult& fit) {
  std::vector<AreaPrediction> out;
  out.reserve(fit.summaries.size());
  for (const auto& s : fit.summaries) out.push_back(predict_area(s, fit));
  return out;
}

std::optional<double> pivot_t(double xi_true, const AreaPrediction& pred, const TransformSpec& spec,
                              double lambda_true, double lambda_hat) {
  if (!(pred.sigma_hat_i > 0.0)) return std::nullopt;
  const double t = (rescale(xi_true, spec, lambda_true, lambda_hat) - pred.xi_hat_eb) / pred.sigma_hat_i;
  if (!std::isfinite(t)) return std::nullopt;
  return t;
}

}  // namespace tnerm
