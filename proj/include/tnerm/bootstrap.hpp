#pragma once

#include "tnerm/estimation.hpp"
#include "tnerm/prediction.hpp"
#include "tnerm/rng.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace tnerm {

enum class QuantileRule { EqualTailed, ShortestInterval };
enum class IntervalKind { Naive, Unconditional, Conditional };
// What to do with replicates whose refit has sigma_v2* = 0 (pivot undefined).
enum class DegeneratePivots { Exclude, KeepInfinite };

std::string to_string(QuantileRule r);
std::string to_string(IntervalKind k);
std::string to_string(DegeneratePivots d);
DegeneratePivots degenerate_pivots_from_string(const std::string& s);
QuantileRule quantile_rule_from_string(const std::string& s);
IntervalKind interval_kind_from_string(const std::string& s);

struct BootstrapConfig {
  int B = 200;
  std::uint64_t seed = 1;
  double alpha = 0.05;
  QuantileRule quantile_rule = QuantileRule::EqualTailed;
  double max_refit_failure_rate = 0.05;
  int threads = 1;
  DegeneratePivots degenerate_pivots = DegeneratePivots::Exclude;
  // Test hook: when false, replicates reuse theta-hat instead of refitting, so
  // the pivot is exactly standard normal and only the plumbing is exercised.
  bool reestimate = true;

  void check() const;
};

struct PredictionInterval {
  std::string area_id;
  double teblup = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double level = 0.95;
  IntervalKind kind = IntervalKind::Naive;
  double q1 = 0.0;
  double q2 = 0.0;
  int B_effective = 0;              // pivots the quantiles were taken over
  bool degenerate = false;          // sigma-hat_i = 0: point interval
  int refit_failures = 0;
  int zero_variance_replicates = 0; // replicates with sigma_v2* = 0 (pivot +-inf)

  double length() const { return upper - lower; }
};

PredictionInterval naive_interval(const AreaPrediction& pred, const TransformSpec& spec, double lambda_hat,
                                  double alpha);
std::vector<PredictionInterval> naive_intervals(const FitResult& fit, double alpha);

/// y_ij = h^{-1}(x_ij' beta + v_i + e_ij, lambda) on the covariates of `design`.
/// Draw order: v_i, then e_i1..e_in, area by area. When `xi` is given it
/// receives xi_i = xbar_i' beta + v_i.
UnitLevelDataset draw_dataset(const UnitLevelDataset& design, const TransformSpec& spec,
                              const ModelParams& params, Engine& rng, std::vector<double>* xi = nullptr);

/// As draw_dataset for every area except `keep`, whose responses are copied.
UnitLevelDataset redraw_other_areas(const UnitLevelDataset& data, const TransformSpec& spec,
                                    const ModelParams& params, std::size_t keep, Engine& rng);

/// Pivots of one unconditional replicate, one per area in dataset order.
/// A replicate with sigma-hat* = 0 gives +-inf pivots (flagged).
struct UnconditionalReplicate {
  std::vector<double> t;
  bool zero_variance = false;
};

/// Simulates y* from theta-hat on the covariates of `design` and refits with
/// fit.config. Refit failures surface as tnerm::Error.
UnconditionalReplicate generate_unconditional_replicate(const FitResult& fit, const UnitLevelDataset& design,
                                                        Engine& rng, bool reestimate = true);

struct ConditionalReplicate {
  double t = 0.0;
  bool zero_variance = false;
  double lambda_star = 0.0;
  double z_star = 0.0;  // z_i(lambda*) from the observed y_i
};

/// Regenerates every area except `area`, keeps the observed y_area, refits and
/// draws xi^{c*} ~ N(xi-hat_EB, sigma-hat^2).
ConditionalReplicate generate_conditional_replicate(const FitResult& fit, const UnitLevelDataset& data,
                                                    std::size_t area, Engine& rng, bool reestimate = true);

std::vector<PredictionInterval> unconditional_intervals(const FitResult& fit, const UnitLevelDataset& data,
                                                        const BootstrapConfig& config);
PredictionInterval unconditional_interval(const FitResult& fit, const UnitLevelDataset& data,
                                          const std::string& area_id, const BootstrapConfig& config);
PredictionInterval conditional_interval(const FitResult& fit, const UnitLevelDataset& data,
                                        const std::string& area_id, const BootstrapConfig& config);
std::vector<PredictionInterval> conditional_intervals(const FitResult& fit, const UnitLevelDataset& data,
                                                      const BootstrapConfig& config);

/// Type-7 empirical quantile (linear interpolation between order statistics)
/// of an ascending sample. Infinite order statistics are handled without NaN.
double quantile_type7(const std::vector<double>& sorted, double p);

/// (q1, q2) with empirical mass 1 - alpha between them.
std::pair<double, double> pivot_quantiles(std::vector<double> t, double alpha, QuantileRule rule);

}  // namespace tnerm
