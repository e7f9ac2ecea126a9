#include "sufficient_stats.hpp"

#include "tnerm/error.hpp"

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <numbers>
#include <sstream>

namespace tnerm::detail {

namespace {

template <class Rhs>
typename Rhs::PlainObject solve_spd(const Eigen::MatrixXd& A, const Rhs& b, const char* what) {
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
      ldlt.vectorD().minCoeff() <= 1e-13 * std::max(1.0, ldlt.vectorD().maxCoeff())) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(A);
    const auto& sv = svd.singularValues();
    const double cond = sv(sv.size() - 1) > 0 ? sv(0) / sv(sv.size() - 1) : INFINITY;
    throw LinearAlgebraError(std::string(what) + " is singular", cond);
  }
  return ldlt.solve(b);
}

struct RhoState {
  Eigen::VectorXd beta;
  double q = 0.0;        // quadratic form at beta
  double phi = 0.0;      // profile equation in rho
  double sigma_e2 = 0.0;
};

// Pooled within-area residual SS and the area mean residuals at beta.
double residual_parts(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta,
                      Eigen::VectorXd& rbar) {
  rbar.noalias() = s.z - d.xbar.transpose() * beta;
  const double w = s.sum_whh - 2.0 * beta.dot(s.sum_wxh) + beta.dot(d.sum_wxx * beta);
  return std::max(w, 0.0);
}

Eigen::MatrixXd weighted_gram(const DesignStats& d, const Eigen::VectorXd& w) {
  return d.xbar * w.asDiagonal() * d.xbar.transpose();
}

RhoState evaluate_rho(const DesignStats& d, const LambdaStats& s, double rho, EstimatorKind kind,
                      BetaFormula formula) {
  RhoState st;
  st.beta = gls_beta(d, s, rho, formula);
  Eigen::VectorXd rbar;
  const double within = residual_parts(d, s, st.beta, rbar);
  double sum_s = 0.0, sum_t = 0.0;
  st.q = within;
  for (Eigen::Index i = 0; i < d.m; ++i) {
    const double n = d.n(i);
    const double k = 1.0 + n * rho;
    st.q += n * rbar(i) * rbar(i) / k;
    sum_s += n * n * rbar(i) * rbar(i) / (k * k);
    sum_t += n / k;
  }
  const double dof = kind == EstimatorKind::REML ? double(d.N - d.p) : double(d.N);
  st.sigma_e2 = st.q / dof;
  if (!(st.sigma_e2 > 0.0)) {
    st.phi = 0.0;
    return st;
  }
  st.phi = 0.5 * sum_s / st.sigma_e2 - 0.5 * sum_t;
  if (kind == EstimatorKind::REML) {
    const Eigen::VectorXd k = (1.0 + d.n.array() * rho).matrix();
    const Eigen::MatrixXd A = d.sum_wxx + weighted_gram(d, d.n.cwiseQuotient(k));
    const Eigen::MatrixXd B = weighted_gram(d, d.n.cwiseAbs2().cwiseQuotient(k.cwiseAbs2()));
    st.phi += 0.5 * solve_spd(A, B, "X' V^-1 X").trace();
  }
  return st;
}

}  // namespace

DesignStats make_design(const UnitLevelDataset& data, const TransformSpec& spec) {
  data.check_shapes();
  spec.check();
  check_domain(data, spec);
  DesignStats d;
  d.spec = spec;
  d.m = Eigen::Index(data.m());
  d.p = data.p;
  d.N = data.total_size();
  d.n.resize(d.m);
  d.xbar.resize(d.p, d.m);
  d.wxx.resize(d.m);
  d.xc.resize(d.N, d.p);
  d.offset.resize(d.m);
  d.base.resize(d.N);
  d.sum_wxx = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::Index row = 0;
  for (Eigen::Index i = 0; i < d.m; ++i) {
    const Area& a = data.areas[i];
    d.offset[i] = row;
    d.n(i) = double(a.size());
    d.xbar.col(i) = a.covariate_mean();
    d.xc.middleRows(row, a.size()) = a.X.rowwise() - d.xbar.col(i).transpose();
    d.wxx[i] = d.xc.middleRows(row, a.size()).transpose() * d.xc.middleRows(row, a.size());
    d.sum_wxx += d.wxx[i];
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      d.base(row + j) = base_coordinate(a.y(j), spec);
      d.log_dbase_sum += base_log_derivative(a.y(j), spec);
    }
    row += a.size();
  }
  return d;
}

LambdaStats at_lambda(const DesignStats& d, double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    std::ostringstream os;
    os << "transformation parameter must be finite and >= 0, got " << lambda;
    throw ParameterError(os.str());
  }
  const bool identity = d.spec.family == Family::Identity;
  LambdaStats s;
  s.lambda = lambda;
  s.z.resize(d.m);
  s.zl.resize(d.m);
  s.whh.resize(d.m);
  s.whl.resize(d.m);
  s.wxh.resize(d.p, d.m);
  s.wxl.resize(d.p, d.m);
  Eigen::VectorXd h(d.N), hl(d.N);
  for (Eigen::Index k = 0; k < d.N; ++k) {
    const double L = d.base(k);
    if (identity) {
      h(k) = L;
      hl(k) = 0.0;
    } else {
      const kernel::Terms t = kernel::all_terms(L, lambda);
      h(k) = t.h;
      hl(k) = t.h_lambda;
      s.jacobian_term += t.jacobian_ratio;
      s.log_jacobian += t.log_cosh;
    }
  }
  if (!h.allFinite() || !hl.allFinite()) {
    std::ostringstream os;
    os << "transformed responses overflow at lambda=" << lambda;
    throw NumericError(os.str());
  }
  s.log_jacobian += d.log_dbase_sum;
  for (Eigen::Index i = 0; i < d.m; ++i) {
    const Eigen::Index n = Eigen::Index(d.n(i));
    auto hi = h.segment(d.offset[i], n);
    auto li = hl.segment(d.offset[i], n);
    s.z(i) = hi.mean();
    s.zl(i) = li.mean();
    const Eigen::VectorXd hc = hi.array() - s.z(i);
    const Eigen::VectorXd lc = li.array() - s.zl(i);
    s.whh(i) = hc.squaredNorm();
    s.whl(i) = hc.dot(lc);
    const auto xc = d.xc.middleRows(d.offset[i], n);
    s.wxh.col(i) = xc.transpose() * hc;
    s.wxl.col(i) = xc.transpose() * lc;
  }
  s.sum_whh = s.whh.sum();
  s.sum_whl = s.whl.sum();
  s.sum_wxh = s.wxh.rowwise().sum();
  s.sum_wxl = s.wxl.rowwise().sum();
  return s;
}

Eigen::VectorXd gls_beta(const DesignStats& d, const LambdaStats& s, double rho, BetaFormula formula) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) throw ParameterError("variance ratio must be >= 0");
  // X_i' V_i^{-1} X_i = W_xx + n xbar xbar' / (1 + n rho), likewise for X_i' V_i^{-1} h_i.
  Eigen::VectorXd w = d.n.array() / (1.0 + d.n.array() * rho);
  if (formula == BetaFormula::Verbatim) w += d.n;  // extra sum_i n xbar xbar'
  const Eigen::MatrixXd A = d.sum_wxx + weighted_gram(d, w);
  const Eigen::VectorXd c = s.sum_wxh + d.xbar * w.cwiseProduct(s.z);
  return solve_spd(A, c, "GLS Gram matrix");
}

double quadratic_form(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta, double rho) {
  Eigen::VectorXd rbar;
  double q = residual_parts(d, s, beta, rbar);
  for (Eigen::Index i = 0; i < d.m; ++i) q += d.n(i) * rbar(i) * rbar(i) / (1.0 + d.n(i) * rho);
  return q;
}

VarianceComponents prasad_rao(const DesignStats& d, const LambdaStats& s) {
  const double N = double(d.N), m = double(d.m);
  Eigen::MatrixXd xtx = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::MatrixXd wxx = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(d.p, d.p);
  Eigen::VectorXd xth = Eigen::VectorXd::Zero(d.p);
  Eigen::VectorXd wxh = Eigen::VectorXd::Zero(d.p);
  double hth = 0.0, whh = 0.0;
  for (Eigen::Index i = 0; i < d.m; ++i) {
    const double n = d.n(i);
    const auto xb = d.xbar.col(i);
    xtx += d.wxx[i] + n * xb * xb.transpose();
    wxx += d.wxx[i];
    between += n * n * xb * xb.transpose();
    xth += s.wxh.col(i) + n * s.z(i) * xb;
    wxh += s.wxh.col(i);
    hth += s.whh(i) + n * s.z(i) * s.z(i);
    whh += s.whh(i);
  }
  // S1: OLS residual SS.
  const Eigen::VectorXd b_ols = solve_spd(xtx, xth, "X'X");
  const double s1 = std::max(hth - xth.dot(b_ols), 0.0);
  // S2: within-area residual SS. Columns constant within areas (intercept,
  // area-level covariates) vanish from X'EX, so its pseudo-inverse and rank
  // are used.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(wxx);
  const Eigen::VectorXd& ev = eig.eigenvalues();
  const double cutoff = 1e-10 * std::max(1.0, ev.cwiseAbs().maxCoeff());
  Eigen::Index rank = 0;
  Eigen::VectorXd proj = eig.eigenvectors().transpose() * wxh;
  double explained = 0.0;
  for (Eigen::Index k = 0; k < ev.size(); ++k) {
    if (ev(k) > cutoff) {
      ++rank;
      explained += proj(k) * proj(k) / ev(k);
    }
  }
  const double s2 = std::max(whh - explained, 0.0);
  const double dof_e = N - m - double(rank);
  if (dof_e <= 0.0) throw InputError("Prasad-Rao estimator needs N - m - rank(X'EX) > 0");
  const double n_star = N - solve_spd(xtx, between, "X'X").trace();
  if (n_star <= 0.0) throw InputError("Prasad-Rao divisor N* is not positive");

  VarianceComponents vc;
  vc.sigma_e2 = s2 / dof_e;
  vc.sigma_v2 = (s1 - (N - double(d.p)) * vc.sigma_e2) / n_star;
  vc.sigma_v2_untruncated = vc.sigma_v2;
  if (vc.sigma_e2 <= 0.0) {
    vc.sigma_e2 = 0.0;
    vc.truncated_e = true;
  }
  if (vc.sigma_v2 <= 0.0) {
    vc.sigma_v2 = 0.0;
    vc.truncated_v = true;
  }
  return vc;
}

VarianceComponents solve_variance(const DesignStats& d, const LambdaStats& s, EstimatorKind kind,
                                  BetaFormula formula, double rho_start, double tolerance, int max_iter) {
  if (d.N - d.p <= 0) throw InputError("not enough observations for variance estimation");
  auto phi = [&](double rho) { return evaluate_rho(d, s, rho, kind, formula); };
  const RhoState at0 = phi(0.0);
  if (!(at0.sigma_e2 > 0.0))
    throw ConvergenceError("residual sum of squares is zero; variance components are not identified");

  VarianceComponents vc;
  if (at0.phi <= 0.0) {
    vc.sigma_e2 = at0.sigma_e2;
    vc.sigma_v2 = 0.0;
    vc.truncated_v = true;
    return vc;
  }

  // Track the evaluated point with the smallest |phi| so the answer needs no re-evaluation.
  double best_rho = 0.0;
  RhoState best = at0;
  auto eval = [&](double rho) {
    RhoState st = phi(rho);
    if (std::abs(st.phi) < std::abs(best.phi)) {
      best = st;
      best_rho = rho;
    }
    return st;
  };

  const bool warm = rho_start > 0.0 && std::isfinite(rho_start);
  double lo = 0.0, f_lo = at0.phi;
  double hi = warm ? 1.5 * rho_start : 0.25;
  RhoState st = eval(hi);
  if (warm && st.phi < 0.0) {
    const RhoState below = eval(rho_start / 1.5);
    if (below.phi > 0.0) {
      lo = rho_start / 1.5;
      f_lo = below.phi;
    }
  }
  int expansions = 0;
  while (st.phi > 0.0) {
    lo = hi;
    f_lo = st.phi;
    hi *= 4.0;
    if (++expansions > 30 || hi > 1e12)
      throw ConvergenceError("variance ratio diverges; no sign change of the profile score", hi, st.phi);
    st = eval(hi);
  }
  if (!(st.sigma_e2 > 0.0))
    throw ConvergenceError("within-area variance collapsed to zero", hi, st.phi);

  boost::uintmax_t iters = boost::uintmax_t(max_iter);
  const auto tol = [tolerance](double a, double b) {
    return std::abs(b - a) <= std::max(1e-15, tolerance * 1e-4) * std::max(1.0, std::abs(a));
  };
  auto f = [&](double rho) { return eval(rho).phi; };
  const auto bracket = boost::math::tools::toms748_solve(f, lo, hi, f_lo, st.phi, tol, iters);
  if (iters >= boost::uintmax_t(max_iter))
    throw ConvergenceError("variance ratio root-finding hit the iteration limit", bracket.first,
                           best.phi);
  vc.sigma_e2 = best.sigma_e2;
  vc.sigma_v2 = best_rho * best.sigma_e2;
  if (vc.sigma_v2 <= 0.0) {
    vc.sigma_v2 = 0.0;
    vc.truncated_v = true;
  }
  return vc;
}

VarianceScores variance_scores(const DesignStats& d, const LambdaStats& s, const VarianceComponents& vc,
                               EstimatorKind kind, BetaFormula formula) {
  const double se2 = vc.sigma_e2, sv2 = vc.sigma_v2;
  const double rho = vc.rho();
  const Eigen::VectorXd beta = gls_beta(d, s, rho, formula);
  Eigen::VectorXd rbar;
  double norm_vinv_r = residual_parts(d, s, beta, rbar);
  VarianceScores out;
  double tr_vinv = 0.0;
  for (Eigen::Index i = 0; i < d.m; ++i) {
    const double n = d.n(i);
    const double k = 1.0 + n * rho;
    norm_vinv_r += n * rbar(i) * rbar(i) / (k * k);
    tr_vinv += n * (1.0 - rho / k);
    const double dd = se2 + n * sv2;
    out.l2 += n * n * rbar(i) * rbar(i) / (dd * dd) - n / dd;
  }
  out.l1 = norm_vinv_r / (se2 * se2) - tr_vinv / se2;
  if (kind == EstimatorKind::REML) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(d.p, d.p);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(d.p, d.p);
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d.p, d.p);
    for (Eigen::Index i = 0; i < d.m; ++i) {
      const double n = d.n(i);
      const double k = 1.0 + n * rho;
      const Eigen::MatrixXd xx = d.xbar.col(i) * d.xbar.col(i).transpose();
      A += d.wxx[i] + (n / k) * xx;
      B += (n * n / (k * k)) * xx;
      C += d.wxx[i] + (n / (k * k)) * xx;
    }
    // tr[(X'S^-1 X)^-1 X'S^-2 X] and tr[(X'S^-1 X)^-1 X'S^-1 Z S^-1 X], Z = blockdiag(J)
    out.l1 += solve_spd(A, C, "X' V^-1 X").trace() / se2;
    out.l2 += solve_spd(A, B, "X' V^-1 X").trace() / se2;
  }
  return out;
}

double lambda_score(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta,
                    const VarianceComponents& vc) {
  const double rho = vc.rho();
  double cross = s.sum_whl - beta.dot(s.sum_wxl);
  for (Eigen::Index i = 0; i < d.m; ++i) {
    const double n = d.n(i);
    const double rbar = s.z(i) - d.xbar.col(i).dot(beta);
    cross += n * rbar * s.zl(i) / (1.0 + n * rho);
  }
  return -cross / vc.sigma_e2 + s.jacobian_term;
}

double log_likelihood(const DesignStats& d, const LambdaStats& s, const Eigen::VectorXd& beta,
                      const VarianceComponents& vc) {
  if (!(vc.sigma_e2 > 0.0) || vc.sigma_v2 < 0.0)
    throw ParameterError("log-likelihood needs sigma_e2 > 0 and sigma_v2 >= 0");
  const double rho = vc.rho();
  double logdet = 0.0;
  for (Eigen::Index i = 0; i < d.m; ++i) logdet += std::log1p(d.n(i) * rho);
  const double q = quadratic_form(d, s, beta, rho);
  const double N = double(d.N);
  return -0.5 * N * std::log(2.0 * std::numbers::pi * vc.sigma_e2) - 0.5 * logdet - 0.5 * q / vc.sigma_e2 +
         s.log_jacobian;
}

InnerFit inner_fit(const DesignStats& d, double lambda, const FitConfig& config, double rho_start) {
  const LambdaStats s = at_lambda(d, lambda);
  InnerFit out;
  out.lambda = lambda;
  if (config.estimator == EstimatorKind::PrasadRao) {
    out.variance = prasad_rao(d, s);
    if (out.variance.truncated_e)
      throw ConvergenceError("Prasad-Rao within-area variance estimate is zero", lambda, 0.0);
  } else {
    out.variance = solve_variance(d, s, config.estimator, config.beta_formula, rho_start,
                                  config.variance_tolerance, config.max_iter);
  }
  out.beta = gls_beta(d, s, out.variance.rho(), config.beta_formula);
  out.score = lambda_score(d, s, out.beta, out.variance);
  out.log_likelihood = log_likelihood(d, s, out.beta, out.variance);
  return out;
}

std::vector<AreaSummary> summaries(const UnitLevelDataset& data, const DesignStats& d, const LambdaStats& s) {
  std::vector<AreaSummary> out(std::size_t(d.m));
  for (Eigen::Index i = 0; i < d.m; ++i) {
    auto& a = out[std::size_t(i)];
    a.area_id = data.areas[std::size_t(i)].id;
    a.n = int(d.n(i));
    a.xbar = d.xbar.col(i);
    a.z = s.z(i);
    a.lambda = s.lambda;
  }
  return out;
}

}  // namespace tnerm::detail
