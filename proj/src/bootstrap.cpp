#include "tnerm/bootstrap.hpp"

#include "tnerm/error.hpp"

#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <sstream>

namespace tnerm {

std::string to_string(QuantileRule r) {
  return r == QuantileRule::EqualTailed ? "equal_tailed" : "shortest";
}

std::string to_string(IntervalKind k) {
  switch (k) {
    case IntervalKind::Naive: return "naive";
    case IntervalKind::Unconditional: return "unconditional";
    case IntervalKind::Conditional: return "conditional";
  }
  return "unknown";
}

std::string to_string(DegeneratePivots d) {
  return d == DegeneratePivots::Exclude ? "exclude" : "keep_infinite";
}

DegeneratePivots degenerate_pivots_from_string(const std::string& s) {
  if (s == "exclude") return DegeneratePivots::Exclude;
  if (s == "keep_infinite" || s == "keep") return DegeneratePivots::KeepInfinite;
  throw ParameterError("unknown degenerate-pivot rule '" + s + "'");
}

QuantileRule quantile_rule_from_string(const std::string& s) {
  if (s == "equal_tailed" || s == "equal") return QuantileRule::EqualTailed;
  if (s == "shortest") return QuantileRule::ShortestInterval;
  throw ParameterError("unknown quantile rule '" + s + "'");
}

IntervalKind interval_kind_from_string(const std::string& s) {
  if (s == "naive") return IntervalKind::Naive;
  if (s == "unconditional") return IntervalKind::Unconditional;
  if (s == "conditional") return IntervalKind::Conditional;
  throw ParameterError("unknown interval kind '" + s + "'");
}

void BootstrapConfig::check() const {
  if (B < 50) throw ParameterError("bootstrap size B must be at least 50");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  if (!(max_refit_failure_rate >= 0.0 && max_refit_failure_rate < 1.0))
    throw ParameterError("max_refit_failure_rate must lie in [0, 1)");
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// h^{-1}(z); a non-finite or saturating z maps to the matching domain edge.
double data_scale(double z, const TransformSpec& spec, double lambda) {
  const double edge_lo = spec.family == Family::Identity ? -kInf : spec.shift_a;
  const double edge_hi = spec.family == Family::DualPowerLogistic ? spec.scale_b : kInf;
  if (std::isnan(z)) throw NumericError("interval bound is NaN");
  if (std::isinf(z)) return z < 0 ? edge_lo : edge_hi;
  try {
    return inverse(z, spec, lambda);
  } catch (const NumericError&) {
    return z < 0 ? edge_lo : edge_hi;
  }
}

PredictionInterval make_interval(const AreaPrediction& pred, const TransformSpec& spec, double lambda_hat,
                                 double q1, double q2, double alpha, IntervalKind kind) {
  PredictionInterval pi;
  pi.area_id = pred.area_id;
  pi.teblup = pred.teblup;
  pi.level = 1.0 - alpha;
  pi.kind = kind;
  pi.q1 = q1;
  pi.q2 = q2;
  if (!(pred.sigma_hat_i > 0.0)) {
    pi.degenerate = true;
    pi.lower = pi.upper = pred.teblup;
    return pi;
  }
  pi.lower = data_scale(pred.xi_hat_eb + q1 * pred.sigma_hat_i, spec, lambda_hat);
  pi.upper = data_scale(pred.xi_hat_eb + q2 * pred.sigma_hat_i, spec, lambda_hat);
  return pi;
}

double signed_inf_or(double numerator, double sigma) {
  if (sigma > 0.0) return numerator / sigma;
  if (numerator > 0.0) return kInf;
  if (numerator < 0.0) return -kInf;
  return 0.0;
}

double rescale(double xi, const TransformSpec& spec, double from, double to) {
  if (spec.family == Family::Identity || from == to) return xi;
  return kernel::h(kernel::h_inverse(xi, from), to);
}

}  // namespace

PredictionInterval naive_interval(const AreaPrediction& pred, const TransformSpec& spec, double lambda_hat,
                                  double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParameterError("alpha must lie in (0, 1)");
  const double z = boost::math::quantile(boost::math::complement(boost::math::normal(), alpha / 2.0));
  return make_interval(pred, spec, lambda_hat, -z, z, alpha, IntervalKind::Naive);
}

std::vector<PredictionInterval> naive_intervals(const FitResult& fit, double alpha) {
  std::vector<PredictionInterval> out;
  for (const auto& p : predict(fit)) out.push_back(naive_interval(p, fit.transform, fit.params.lambda, alpha));
  return out;
}

UnitLevelDataset draw_dataset(const UnitLevelDataset& design, const TransformSpec& spec,
                              const ModelParams& params, Engine& rng, std::vector<double>* xi) {
  std::normal_distribution<double> normal;
  const double sv = std::sqrt(params.variance.sigma_v2);
  const double se = std::sqrt(params.variance.sigma_e2);
  UnitLevelDataset out = design;
  if (xi) xi->assign(out.m(), 0.0);
  for (std::size_t i = 0; i < out.m(); ++i) {
    auto& a = out.areas[i];
    const double v = sv * normal(rng);
    const Eigen::VectorXd mu = a.X * params.beta;
    for (Eigen::Index j = 0; j < a.size(); ++j) a.y(j) = inverse(mu(j) + v + se * normal(rng), spec, params.lambda);
    if (xi) (*xi)[i] = a.covariate_mean().dot(params.beta) + v;
  }
  return out;
}

UnitLevelDataset redraw_other_areas(const UnitLevelDataset& data, const TransformSpec& spec,
                                    const ModelParams& params, std::size_t keep, Engine& rng) {
  std::normal_distribution<double> normal;
  const double sv = std::sqrt(params.variance.sigma_v2);
  const double se = std::sqrt(params.variance.sigma_e2);
  UnitLevelDataset out = data;
  for (std::size_t k = 0; k < out.m(); ++k) {
    if (k == keep) continue;
    auto& a = out.areas[k];
    const double v = sv * normal(rng);
    const Eigen::VectorXd mu = a.X * params.beta;
    for (Eigen::Index j = 0; j < a.size(); ++j) a.y(j) = inverse(mu(j) + v + se * normal(rng), spec, params.lambda);
  }
  return out;
}

UnconditionalReplicate generate_unconditional_replicate(const FitResult& fit, const UnitLevelDataset& design,
                                                        Engine& rng, bool reestimate) {
  const double lam = fit.params.lambda;
  std::vector<double> xi_star;
  const UnitLevelDataset star = draw_dataset(design, fit.transform, fit.params, rng, &xi_star);

  FitResult refit;
  if (reestimate) {
    refit = tnerm::fit(star, fit.transform, fit.config);
  } else {
    refit = fit;
    refit.summaries = area_summaries(star, fit.transform, lam);
  }
  UnconditionalReplicate rep;
  rep.t.resize(star.m());
  rep.zero_variance = !(refit.params.variance.sigma_v2 > 0.0);
  for (std::size_t i = 0; i < star.m(); ++i) {
    const AreaPrediction p = predict_area(refit.summaries[i], refit);
    const double num = rescale(xi_star[i], fit.transform, lam, refit.params.lambda) - p.xi_hat_eb;
    rep.t[i] = signed_inf_or(num, p.sigma_hat_i);
  }
  return rep;
}

ConditionalReplicate generate_conditional_replicate(const FitResult& fit, const UnitLevelDataset& data,
                                                    std::size_t area, Engine& rng, bool reestimate) {
  if (area >= data.m()) throw ParameterError("area index out of range");
  const auto& theta = fit.params;
  const double lam = theta.lambda;
  const UnitLevelDataset star = redraw_other_areas(data, fit.transform, theta, area, rng);
  const AreaPrediction observed = predict_area(fit.summaries[area], fit);
  std::normal_distribution<double> normal;
  const double xi_c = observed.xi_hat_eb + observed.sigma_hat_i * normal(rng);

  ConditionalReplicate rep;
  if (reestimate) {
    const FitResult refit = tnerm::fit(star, fit.transform, fit.config);
    const AreaPrediction p = predict_area(refit.summaries[area], refit);
    rep.lambda_star = refit.params.lambda;
    rep.z_star = refit.summaries[area].z;
    rep.zero_variance = !(refit.params.variance.sigma_v2 > 0.0);
    rep.t = signed_inf_or(rescale(xi_c, fit.transform, lam, rep.lambda_star) - p.xi_hat_eb, p.sigma_hat_i);
  } else {
    rep.lambda_star = lam;
    rep.z_star = observed.z;
    rep.zero_variance = !(theta.variance.sigma_v2 > 0.0);
    rep.t = signed_inf_or(xi_c - observed.xi_hat_eb, observed.sigma_hat_i);
  }
  return rep;
}

double quantile_type7(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw ParameterError("quantile of an empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw ParameterError("quantile level must lie in [0, 1]");
  const double h = double(sorted.size() - 1) * p;
  const auto j = std::size_t(std::floor(h));
  const double g = h - double(j);
  if (j + 1 >= sorted.size() || g == 0.0) return sorted[j];
  const double lo = sorted[j], hi = sorted[j + 1];
  if (lo == hi) return lo;
  if (std::isinf(lo) || std::isinf(hi)) return std::isinf(lo) ? lo : hi;
  return lo + g * (hi - lo);
}

std::pair<double, double> pivot_quantiles(std::vector<double> t, double alpha, QuantileRule rule) {
  if (t.empty()) throw ParameterError("no bootstrap pivots");
  std::sort(t.begin(), t.end());
  if (rule == QuantileRule::EqualTailed) return {quantile_type7(t, alpha / 2.0), quantile_type7(t, 1.0 - alpha / 2.0)};
  const std::size_t B = t.size();
  const auto k = std::size_t(std::ceil((1.0 - alpha) * double(B)));
  if (k >= B) return {t.front(), t.back()};
  std::size_t best = 0;
  double width = kInf;
  for (std::size_t j = 0; j + k < B; ++j) {
    const double w = t[j + k] - t[j];
    if (w < width) {
      width = w;
      best = j;
    }
  }
  return {t[best], t[best + k]};
}

namespace {

std::size_t failure_limit(const BootstrapConfig& config) {
  return std::size_t(std::floor(config.max_refit_failure_rate * double(config.B)));
}

[[noreturn]] void too_many_failures(std::size_t failures, const BootstrapConfig& config, const std::string& last) {
  std::ostringstream os;
  os << failures << " of " << config.B << " bootstrap refits failed (limit "
     << failure_limit(config) << "); last error: " << last;
  throw ConvergenceError(os.str());
}

template <class Replicate>
bool usable(const Replicate& r, const BootstrapConfig& config) {
  return !r.zero_variance || config.degenerate_pivots == DegeneratePivots::KeepInfinite;
}

[[noreturn]] void no_pivots(const std::string& area_id) {
  throw ConvergenceError("every bootstrap replicate for area '" + area_id +
                         "' has a zero between-area variance; no pivot quantiles available");
}

}  // namespace

std::vector<PredictionInterval> unconditional_intervals(const FitResult& fit, const UnitLevelDataset& data,
                                                        const BootstrapConfig& config) {
  config.check();
  const auto preds = predict(fit);
  const std::size_t B = std::size_t(config.B);
  std::vector<std::optional<UnconditionalReplicate>> reps(B);
  std::vector<std::string> errors(B);
  parallel_for(B, config.threads, [&](std::size_t b) {
    Engine rng = derive_stream(config.seed, {std::uint64_t(b)});
    try {
      reps[b] = generate_unconditional_replicate(fit, data, rng, config.reestimate);
    } catch (const Error& e) {
      errors[b] = e.what();
    }
  });
  std::size_t failures = 0, zero = 0;
  std::string last;
  for (std::size_t b = 0; b < B; ++b) {
    if (!reps[b]) {
      ++failures;
      last = errors[b];
    } else if (reps[b]->zero_variance) {
      ++zero;
    }
  }
  if (failures > failure_limit(config)) too_many_failures(failures, config, last);

  std::vector<PredictionInterval> out;
  out.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    std::vector<double> t;
    t.reserve(B);
    for (const auto& r : reps)
      if (r && usable(*r, config)) t.push_back(r->t[i]);
    if (t.empty()) no_pivots(preds[i].area_id);
    const auto [q1, q2] = pivot_quantiles(t, config.alpha, config.quantile_rule);
    auto pi = make_interval(preds[i], fit.transform, fit.params.lambda, q1, q2, config.alpha,
                            IntervalKind::Unconditional);
    pi.B_effective = int(t.size());
    pi.refit_failures = int(failures);
    pi.zero_variance_replicates = int(zero);
    out.push_back(pi);
  }
  return out;
}

PredictionInterval unconditional_interval(const FitResult& fit, const UnitLevelDataset& data,
                                          const std::string& area_id, const BootstrapConfig& config) {
  const std::size_t i = data.find_area(area_id);
  return unconditional_intervals(fit, data, config)[i];
}

PredictionInterval conditional_interval(const FitResult& fit, const UnitLevelDataset& data,
                                        const std::string& area_id, const BootstrapConfig& config) {
  config.check();
  const std::size_t area = data.find_area(area_id);
  const std::size_t B = std::size_t(config.B);
  std::vector<std::optional<ConditionalReplicate>> reps(B);
  std::vector<std::string> errors(B);
  const std::uint64_t key = area_key(area_id);
  parallel_for(B, config.threads, [&](std::size_t b) {
    Engine rng = derive_stream(config.seed, {std::uint64_t(b), key});
    try {
      reps[b] = generate_conditional_replicate(fit, data, area, rng, config.reestimate);
    } catch (const Error& e) {
      errors[b] = e.what();
    }
  });
  std::size_t failures = 0, zero = 0;
  std::string last;
  std::vector<double> t;
  t.reserve(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (!reps[b]) {
      ++failures;
      last = errors[b];
      continue;
    }
    if (reps[b]->zero_variance) ++zero;
    if (usable(*reps[b], config)) t.push_back(reps[b]->t);
  }
  if (failures > failure_limit(config)) too_many_failures(failures, config, last);
  if (t.empty()) no_pivots(area_id);
  const auto [q1, q2] = pivot_quantiles(t, config.alpha, config.quantile_rule);
  auto pi = make_interval(predict_area(fit.summaries[area], fit), fit.transform, fit.params.lambda, q1, q2,
                          config.alpha, IntervalKind::Conditional);
  pi.B_effective = int(t.size());
  pi.refit_failures = int(failures);
  pi.zero_variance_replicates = int(zero);
  return pi;
}

std::vector<PredictionInterval> conditional_intervals(const FitResult& fit, const UnitLevelDataset& data,
                                                      const BootstrapConfig& config) {
  std::vector<PredictionInterval> out;
  out.reserve(data.m());
  for (const auto& a : data.areas) out.push_back(conditional_interval(fit, data, a.id, config));
  return out;
}

}  // namespace tnerm
