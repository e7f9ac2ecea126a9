#include "tnerm/estimation.hpp"

#include "sufficient_stats.hpp"
#include "tnerm/error.hpp"

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <cmath>
#include <iterator>
#include <map>
#include <sstream>

namespace tnerm {

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::PrasadRao: return "pr";
    case EstimatorKind::ML: return "ml";
    case EstimatorKind::REML: return "reml";
  }
  return "unknown";
}

std::string to_string(BetaFormula f) {
  return f == BetaFormula::StandardGLS ? "standard" : "verbatim";
}

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "pr" || s == "prasad_rao") return EstimatorKind::PrasadRao;
  if (s == "ml") return EstimatorKind::ML;
  if (s == "reml") return EstimatorKind::REML;
  throw ParameterError("unknown estimator '" + s + "'");
}

BetaFormula beta_formula_from_string(const std::string& s) {
  if (s == "standard" || s == "gls") return BetaFormula::StandardGLS;
  if (s == "verbatim") return BetaFormula::Verbatim;
  throw ParameterError("unknown beta formula '" + s + "'");
}

double VarianceComponents::rho() const {
  if (!(sigma_e2 > 0.0)) throw ParameterError("variance ratio undefined for sigma_e2 <= 0");
  return sigma_v2 / sigma_e2;
}

Diagnostics validate(const UnitLevelDataset& data, const TransformSpec& spec) {
  data.check_shapes();
  spec.check();
  check_domain(data, spec);
  Diagnostics diag;
  const auto m = Eigen::Index(data.m());
  diag.total_n = data.total_size();
  if (diag.total_n <= m + data.p) {
    std::ostringstream os;
    os << "need N > m + p for variance estimation (N=" << diag.total_n << ", m=" << m << ", p=" << data.p
       << ")";
    throw InputError(os.str());
  }
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(data.p, data.p);
  diag.min_n = int(data.areas.front().size());
  diag.max_n = diag.min_n;
  for (const auto& a : data.areas) {
    const Eigen::VectorXd xb = a.covariate_mean();
    gram += xb * xb.transpose();
    diag.min_n = std::min(diag.min_n, int(a.size()));
    diag.max_n = std::max(diag.max_n, int(a.size()));
  }
  gram /= double(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
  const double top = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  diag.covariate_rank = (eig.eigenvalues().array() > 1e-10 * top).count();
  if (diag.covariate_rank < data.p) {
    std::ostringstream os;
    os << "mean covariate matrix (1/m) sum xbar xbar' is rank deficient (rank " << diag.covariate_rank
       << " < p=" << data.p << ")";
    diag.warnings.push_back(os.str());
  }
  if (diag.max_n > 20 * diag.min_n) {
    std::ostringstream os;
    os << "area sizes are very unbalanced (min " << diag.min_n << ", max " << diag.max_n << ")";
    diag.warnings.push_back(os.str());
  }
  return diag;
}

Eigen::VectorXd gls_beta(const UnitLevelDataset& data, const TransformSpec& spec, double rho, double lambda,
                         BetaFormula formula) {
  const auto d = detail::make_design(data, spec);
  return detail::gls_beta(d, detail::at_lambda(d, lambda), rho, formula);
}

VarianceComponents prasad_rao(const UnitLevelDataset& data, const TransformSpec& spec, double lambda) {
  const auto d = detail::make_design(data, spec);
  return detail::prasad_rao(d, detail::at_lambda(d, lambda));
}

namespace {

VarianceComponents likelihood_variance(const UnitLevelDataset& data, const TransformSpec& spec,
                                       double lambda, const VarianceComponents& init, BetaFormula formula,
                                       EstimatorKind kind) {
  if (!(init.sigma_e2 > 0.0) || !(init.sigma_v2 > 0.0))
    throw ParameterError("initial variance components must be strictly positive");
  const auto d = detail::make_design(data, spec);
  const FitConfig defaults;
  return detail::solve_variance(d, detail::at_lambda(d, lambda), kind, formula, init.rho(),
                                defaults.variance_tolerance, defaults.max_iter);
}

}  // namespace

VarianceComponents ml_variance(const UnitLevelDataset& data, const TransformSpec& spec, double lambda,
                               const VarianceComponents& init, BetaFormula formula) {
  return likelihood_variance(data, spec, lambda, init, formula, EstimatorKind::ML);
}

VarianceComponents reml_variance(const UnitLevelDataset& data, const TransformSpec& spec, double lambda,
                                 const VarianceComponents& init, BetaFormula formula) {
  return likelihood_variance(data, spec, lambda, init, formula, EstimatorKind::REML);
}

VarianceScores variance_scores(const UnitLevelDataset& data, const TransformSpec& spec, double lambda,
                               const VarianceComponents& vc, EstimatorKind kind, BetaFormula formula) {
  const auto d = detail::make_design(data, spec);
  return detail::variance_scores(d, detail::at_lambda(d, lambda), vc, kind, formula);
}

double lambda_score(const UnitLevelDataset& data, const TransformSpec& spec, const ModelParams& params) {
  const auto d = detail::make_design(data, spec);
  return detail::lambda_score(d, detail::at_lambda(d, params.lambda), params.beta, params.variance);
}

double log_likelihood(const UnitLevelDataset& data, const TransformSpec& spec, const ModelParams& params) {
  const auto d = detail::make_design(data, spec);
  return detail::log_likelihood(d, detail::at_lambda(d, params.lambda), params.beta, params.variance);
}

std::vector<AreaSummary> area_summaries(const UnitLevelDataset& data, const TransformSpec& spec,
                                        double lambda) {
  const auto d = detail::make_design(data, spec);
  return detail::summaries(data, d, detail::at_lambda(d, lambda));
}

namespace {

// Memoises inner fits by lambda; the outer search revisits bracket ends.
class LambdaProfile {
 public:
  LambdaProfile(const detail::DesignStats& d, const FitConfig& config) : d_(d), config_(config) {}

  const detail::InnerFit& at(double lambda) {
    auto it = cache_.lower_bound(lambda);
    if (it != cache_.end() && it->first == lambda) return it->second;
    // Warm-start the variance ratio from the nearest lambda already solved.
    double rho_start = 0.0;
    const detail::InnerFit* near = nullptr;
    if (it != cache_.end()) near = &it->second;
    if (it != cache_.begin()) {
      const auto& prev = std::prev(it)->second;
      if (!near || lambda - prev.lambda < near->lambda - lambda) near = &prev;
    }
    if (near && near->variance.sigma_e2 > 0.0) rho_start = near->variance.rho();
    auto fit = detail::inner_fit(d_, lambda, config_, rho_start);
    return cache_.emplace_hint(it, lambda, std::move(fit))->second;
  }

  int evaluations() const { return int(cache_.size()); }

 private:
  const detail::DesignStats& d_;
  const FitConfig& config_;
  std::map<double, detail::InnerFit> cache_;
};

}  // namespace

FitResult fit(const UnitLevelDataset& data, const TransformSpec& spec, const FitConfig& config) {
  if (!(config.lambda_min >= 0.0) || !(config.lambda_max > config.lambda_min))
    throw ParameterError("lambda search bracket must satisfy 0 <= lambda_min < lambda_max");
  if (config.scan_points < 2) throw ParameterError("lambda scan needs at least two points");
  const auto d = detail::make_design(data, spec);
  if (d.N <= d.m + d.p) throw InputError("need N > m + p for variance estimation");

  LambdaProfile profile(d, config);
  FitResult result;
  result.estimator_kind = config.estimator;
  result.beta_formula = config.beta_formula;
  result.transform = spec;
  result.config = config;

  double lambda_hat = 0.0;
  if (!spec.lambda_is_free()) {
    lambda_hat = spec.fixed_lambda.value_or(0.0);
  } else {
    // Scan on a grid that is quadratic in the index (denser near the lower end),
    // then refine every sign change and keep the likelihood-maximising root.
    const int K = config.scan_points;
    std::vector<double> grid(K), score(K);
    for (int k = 0; k < K; ++k) {
      const double u = double(k) / double(K - 1);
      grid[k] = config.lambda_min + (config.lambda_max - config.lambda_min) * u * u;
      score[k] = profile.at(grid[k]).score;
    }
    const double zero_tol = 1e-12 * double(d.N);
    std::vector<double> roots;
    for (int k = 0; k < K; ++k)
      if (std::abs(score[k]) <= zero_tol) roots.push_back(grid[k]);
    for (int k = 0; k + 1 < K; ++k) {
      const double fa = score[k], fb = score[k + 1];
      if (std::abs(fa) <= zero_tol || std::abs(fb) <= zero_tol || (fa > 0.0) == (fb > 0.0)) continue;
      boost::uintmax_t iters = boost::uintmax_t(config.max_iter);
      const double tol_abs = config.lambda_tolerance;
      auto tol = [tol_abs](double a, double b) { return std::abs(b - a) <= tol_abs; };
      auto f = [&](double lam) { return profile.at(lam).score; };
      const auto br = boost::math::tools::toms748_solve(f, grid[k], grid[k + 1], fa, fb, tol, iters);
      const double r = std::abs(f(br.first)) <= std::abs(f(br.second)) ? br.first : br.second;
      roots.push_back(r);
    }
    if (roots.empty()) {
      throw ConvergenceError("lambda score has no sign change in [" + std::to_string(config.lambda_min) +
                                 ", " + std::to_string(config.lambda_max) + "]; widen the search bracket",
                             grid.back(), score.back());
    }
    std::sort(roots.begin(), roots.end());
    lambda_hat = roots.front();
    for (double r : roots)
      if (profile.at(r).log_likelihood > profile.at(lambda_hat).log_likelihood) lambda_hat = r;
    const auto& top = profile.at(grid.back());
    if (score.back() > 0.0 && top.log_likelihood > profile.at(lambda_hat).log_likelihood) {
      throw ConvergenceError("likelihood still increasing at lambda_max=" + std::to_string(config.lambda_max) +
                                 "; no sign change of the lambda score, widen the search bracket",
                             grid.back(), score.back());
    }
    result.lambda_on_boundary = lambda_hat == config.lambda_min;
  }

  const detail::InnerFit& best = profile.at(lambda_hat);
  result.params.beta = best.beta;
  result.params.variance = best.variance;
  result.params.lambda = lambda_hat;
  result.lambda_score_residual = spec.lambda_is_free() ? best.score : 0.0;
  result.log_likelihood = best.log_likelihood;
  result.iterations = profile.evaluations();
  result.converged = true;
  result.summaries = detail::summaries(data, d, detail::at_lambda(d, lambda_hat));
  return result;
}

}  // namespace tnerm
