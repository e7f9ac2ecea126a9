#pragma once

#include "tnerm/bootstrap.hpp"
#include "tnerm/estimation.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tnerm {

enum class StudyKind { Pmse, Coverage, ConditionalCoverage };

std::string to_string(StudyKind k);
StudyKind study_kind_from_string(const std::string& s);

/// Monte Carlo design. beta(0) is the intercept; the remaining p - 1
/// covariates are iid N(0, 1), drawn once from covariate_seed and held fixed.
struct ScenarioSpec {
  std::string name = "scenario";
  StudyKind study = StudyKind::Pmse;
  TransformSpec transform = TransformSpec::dual_power();
  std::vector<double> lambdas{0.0};
  int m = 20;
  std::vector<int> n_pattern{3};  // one entry (balanced) or m entries
  Eigen::VectorXd beta = Eigen::VectorXd::Ones(2);
  double sigma_v2 = 0.5;
  double sigma_e2 = 1.0;
  std::uint64_t covariate_seed = 1;
  std::uint64_t seed = 1;
  int R = 2000;
  int B = 200;
  double alpha = 0.05;
  FitConfig fit;
  DegeneratePivots degenerate_pivots = DegeneratePivots::Exclude;
  bool naive = true;       // coverage study methods
  bool bootstrap = true;
  int threads = 0;         // <= 0: all cores

  int n_of(int area) const;
  void check() const;
};

/// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
ScenarioSpec parse_scenario(std::istream& in);
ScenarioSpec load_scenario(const std::string& path);

/// Fixed covariate design of a scenario (responses are placeholders).
UnitLevelDataset scenario_design(const ScenarioSpec& s);

struct McEstimate {
  double value = 0.0;
  double se = 0.0;  // Monte Carlo standard error
};

struct PmseRow {
  double lambda = 0.0;
  // Methods: 0 = TNERM (lambda estimated), 1 = lambda fixed at 0, 2 = untransformed.
  McEstimate pmse[3];
  McEstimate irp2;  // 100 (PMSE_1 - PMSE_2) / PMSE_2
  McEstimate irp3;
  McEstimate zero_v[3];  // percent of sigma_v2-hat = 0
  McEstimate zero_e[3];  // percent of sigma_e2-hat = 0
  int runs = 0;
  int failed_runs = 0;
};

struct CoverageRow {
  double lambda = 0.0;
  McEstimate cp_naive, el_naive;  // percent, data-scale length
  McEstimate cp_boot, el_boot;
  int runs = 0;
  int failed_runs = 0;
  double mean_zero_variance_replicates = 0.0;  // per bootstrap, percent of B
};

struct ConditionalRow {
  int area = 0;  // 1-based
  std::string area_id;
  double ybar = 0.0;  // frozen sample mean on the data scale
  McEstimate cp, el;
  int runs = 0;
  int failed_runs = 0;
};

struct StudyReport {
  std::string scenario;
  StudyKind study = StudyKind::Pmse;
  std::string family;
  double lambda = 0.0;  // conditional study only
  std::vector<PmseRow> pmse;
  std::vector<CoverageRow> coverage;
  std::vector<ConditionalRow> conditional;
  double el_ybar_rank_correlation = 0.0;  // conditional study only
  double runtime_seconds = 0.0;
  std::vector<std::string> log;  // one line per failed replicate

  std::string to_csv() const;
  std::string to_json() const;
};

StudyReport run_pmse_study(const ScenarioSpec& s);
StudyReport run_coverage_study(const ScenarioSpec& s);
/// Uses s.lambdas.front() as the true lambda.
StudyReport run_conditional_coverage_study(const ScenarioSpec& s);
StudyReport run_study(const ScenarioSpec& s);

/// Spearman rank correlation (average ranks for ties).
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tnerm
