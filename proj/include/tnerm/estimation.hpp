#pragma once

#include "tnerm/dataset.hpp"
#include "tnerm/transforms.hpp"

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace tnerm {

enum class EstimatorKind { PrasadRao, ML, REML };
enum class BetaFormula { Verbatim, StandardGLS };

std::string to_string(EstimatorKind k);
std::string to_string(BetaFormula f);
EstimatorKind estimator_from_string(const std::string& s);
BetaFormula beta_formula_from_string(const std::string& s);

struct VarianceComponents {
  double sigma_e2 = 1.0;
  double sigma_v2 = 0.0;
  bool truncated_v = false;  // sigma_v2 sits on the zero bound
  bool truncated_e = false;
  // Prasad-Rao only: the moment estimate of sigma_v2 before truncation at 0.
  double sigma_v2_untruncated = 0.0;

  /// sigma_v2 / sigma_e2; throws ParameterError when sigma_e2 <= 0.
  double rho() const;
};

struct ModelParams {
  Eigen::VectorXd beta;
  VarianceComponents variance;
  double lambda = 0.0;
};

struct AreaSummary {
  std::string area_id;
  int n = 0;
  Eigen::VectorXd xbar;
  double z = 0.0;       // mean transformed response at `lambda`
  double lambda = 0.0;
};

struct FitConfig {
  EstimatorKind estimator = EstimatorKind::ML;
  BetaFormula beta_formula = BetaFormula::StandardGLS;
  double lambda_min = 0.0;
  double lambda_max = 5.0;
  int scan_points = 16;
  double lambda_tolerance = 1e-10;
  double variance_tolerance = 1e-8;
  int max_iter = 200;
};

struct FitResult {
  ModelParams params;
  EstimatorKind estimator_kind = EstimatorKind::ML;
  BetaFormula beta_formula = BetaFormula::StandardGLS;
  TransformSpec transform;
  std::vector<AreaSummary> summaries;
  double lambda_score_residual = 0.0;
  int iterations = 0;          // lambda-score evaluations
  bool converged = false;
  bool lambda_on_boundary = false;
  double log_likelihood = 0.0;
  FitConfig config;
};

struct Diagnostics {
  Eigen::Index covariate_rank = 0;  // rank of (1/m) sum xbar_i xbar_i'
  int min_n = 0;
  int max_n = 0;
  Eigen::Index total_n = 0;
  std::vector<std::string> warnings;
};

/// Checks data against the model's requirements. Hard errors only for domain
/// violations and N <= m + p; everything else is reported as a warning.
Diagnostics validate(const UnitLevelDataset& data, const TransformSpec& spec);

Eigen::VectorXd gls_beta(const UnitLevelDataset& data, const TransformSpec& spec, double rho,
                         double lambda, BetaFormula formula = BetaFormula::StandardGLS);

VarianceComponents prasad_rao(const UnitLevelDataset& data, const TransformSpec& spec, double lambda);

VarianceComponents ml_variance(const UnitLevelDataset& data, const TransformSpec& spec, double lambda,
                               const VarianceComponents& init,
                               BetaFormula formula = BetaFormula::StandardGLS);

VarianceComponents reml_variance(const UnitLevelDataset& data, const TransformSpec& spec,
                                 double lambda, const VarianceComponents& init,
                                 BetaFormula formula = BetaFormula::StandardGLS);

/// Score equations of the ML (L1, L2) or REML system at the given components,
/// with beta re-evaluated by the GLS formula at rho.
struct VarianceScores {
  double l1 = 0.0;
  double l2 = 0.0;
};
VarianceScores variance_scores(const UnitLevelDataset& data, const TransformSpec& spec, double lambda,
                               const VarianceComponents& vc, EstimatorKind kind,
                               BetaFormula formula = BetaFormula::StandardGLS);

/// d/dlambda of the log-likelihood at fixed (beta, sigma^2).
double lambda_score(const UnitLevelDataset& data, const TransformSpec& spec, const ModelParams& params);

/// Normal log-density of h(Y, lambda) under blockdiag(sigma_e^2 V_i) plus the
/// Jacobian sum of log h_x(y_ij, lambda).
double log_likelihood(const UnitLevelDataset& data, const TransformSpec& spec, const ModelParams& params);

std::vector<AreaSummary> area_summaries(const UnitLevelDataset& data, const TransformSpec& spec,
                                        double lambda);

FitResult fit(const UnitLevelDataset& data, const TransformSpec& spec, const FitConfig& config = {});

}  // namespace tnerm
