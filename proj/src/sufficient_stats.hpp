#pragma once

// Per-area sufficient statistics for the nested error model. Every quantity
// the estimators need reduces to within-area cross products plus area means,
// so one lambda evaluation costs O(N p) and each variance-component or GLS
// evaluation afterwards costs O(m p^2).

#include "tnerm/dataset.hpp"
#include "tnerm/estimation.hpp"
#include "tnerm/transforms.hpp"

#include <Eigen/Dense>

#include <vector>

namespace tnerm::detail {

struct DesignStats {
  Eigen::Index m = 0;
  Eigen::Index p = 0;
  Eigen::Index N = 0;
  Eigen::VectorXd n;                 // area sizes
  Eigen::MatrixXd xbar;              // p x m
  std::vector<Eigen::MatrixXd> wxx;  // within-area centred X'X, p x p each
  Eigen::MatrixXd sum_wxx;           // sum of wxx
  Eigen::MatrixXd xc;                // N x p, covariates centred within area
  std::vector<Eigen::Index> offset;  // first row of each area
  Eigen::VectorXd base;              // base coordinate L(y_ij)
  double log_dbase_sum = 0.0;        // sum log dL/dy
  TransformSpec spec;
};

struct LambdaStats {
  double lambda = 0.0;
  Eigen::VectorXd z;     // area means of h
  Eigen::VectorXd zl;    // area means of h_lambda
  Eigen::VectorXd whh;   // within SS of h
  Eigen::VectorXd whl;   // within cross products of h and h_lambda
  Eigen::MatrixXd wxh;   // p x m
  Eigen::MatrixXd wxl;   // p x m
  double sum_whh = 0.0;
  double sum_whl = 0.0;
  Eigen::VectorXd sum_wxh;
  Eigen::VectorXd sum_wxl;
  double jacobian_term = 0.0;  // sum h_{x lambda} / h_x
  double log_jacobian = 0.0;   // sum log h_x
};

DesignStats make_design(const UnitLevelDataset& data, const TransformSpec& spec);
LambdaStats at_lambda(const DesignStats& d, double lambda);

Eigen::VectorXd gls_beta(const DesignStats& d, const LambdaStats& s, double rho, BetaFormula formula);

/// sum_i (h_i - X_i beta)' V_i(rho)^{-1} (h_i - X_i beta)
double quadratic_form(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta, double rho);

VarianceComponents prasad_rao(const DesignStats& d, const LambdaStats& s);

/// ML / REML with sigma_e^2 concentrated out; returns the components and beta.
VarianceComponents solve_variance(const DesignStats& d, const LambdaStats& s, EstimatorKind kind,
                                  BetaFormula formula, double rho_start, double tolerance, int max_iter);

VarianceScores variance_scores(const DesignStats& d, const LambdaStats& s, const VarianceComponents& vc,
                               EstimatorKind kind, BetaFormula formula);

double lambda_score(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta,
                    const VarianceComponents& vc);

double log_likelihood(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta,
                      const VarianceComponents& vc);

struct InnerFit {
  double lambda = 0.0;
  Eigen::VectorXd beta;
  VarianceComponents variance;
  double score = 0.0;           // lambda score F
  double log_likelihood = 0.0;
};

InnerFit inner_fit(const DesignStats& d, double lambda, const FitConfig& config, double rho_start);

std::vector<AreaSummary> summaries(const UnitLevelDataset& data, const DesignStats& d, const LambdaStats& s);

}  // namespace tnerm::detail
