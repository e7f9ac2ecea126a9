#pragma once

// Independent reference computations for the tests. Nothing here calls into
// the library's numerical code: transforms use the textbook power form, and
// the mixed-model quantities are built from the dense N x N covariance.

#include "tnerm/dataset.hpp"
#include "tnerm/transforms.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace oracle {

// (u^l - u^-l) / (2l), log u at l = 0, where u is x - a or the odds of (x - a)/(b - a).
inline double base_u(double x, const tnerm::TransformSpec& s) {
  if (s.family == tnerm::Family::DualPower) return x - s.shift_a;
  const double p = (x - s.shift_a) / (s.scale_b - s.shift_a);
  return p / (1.0 - p);
}

inline double du_dx(double x, const tnerm::TransformSpec& s) {
  if (s.family == tnerm::Family::DualPower) return 1.0;
  const double w = s.scale_b - s.shift_a;
  const double p = (x - s.shift_a) / w;
  return 1.0 / (w * (1.0 - p) * (1.0 - p));
}

inline double h(double x, const tnerm::TransformSpec& s, double l) {
  if (s.family == tnerm::Family::Identity) return x;
  const double u = base_u(x, s);
  if (l == 0.0) return std::log(u);
  return (std::pow(u, l) - std::pow(u, -l)) / (2.0 * l);
}

inline double h_x(double x, const tnerm::TransformSpec& s, double l) {
  if (s.family == tnerm::Family::Identity) return 1.0;
  const double u = base_u(x, s);
  return 0.5 * (std::pow(u, l - 1.0) + std::pow(u, -l - 1.0)) * du_dx(x, s);
}

// Inverse by bisection on the monotone h.
inline double h_inv(double z, const tnerm::TransformSpec& s, double l) {
  double lo, hi;
  if (s.family == tnerm::Family::DualPowerLogistic) {
    lo = s.shift_a;
    hi = s.scale_b;
  } else {
    lo = s.shift_a;
    hi = s.shift_a + 1.0;
    while (h(hi, s, l) < z) hi = s.shift_a + 2.0 * (hi - s.shift_a);
  }
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (mid == lo || mid == hi) break;
    if (h(mid, s, l) < z) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

struct Dense {
  Eigen::MatrixXd X;
  Eigen::VectorXd z;  // transformed responses
  Eigen::MatrixXd J;  // block-diagonal ones
  double jacobian = 0.0;
};

inline Dense stack(const tnerm::UnitLevelDataset& d, const tnerm::TransformSpec& s, double l) {
  Dense o;
  const auto N = d.total_size();
  o.X.resize(N, d.p);
  o.z.resize(N);
  o.J = Eigen::MatrixXd::Zero(N, N);
  Eigen::Index r = 0;
  for (const auto& a : d.areas) {
    const auto n = a.size();
    o.J.block(r, r, n, n).setOnes();
    for (Eigen::Index j = 0; j < n; ++j) {
      o.X.row(r + j) = a.X.row(j);
      o.z(r + j) = h(a.y(j), s, l);
      o.jacobian += std::log(h_x(a.y(j), s, l));
    }
    r += n;
  }
  return o;
}

inline Eigen::MatrixXd covariance(const Dense& o, double sv2, double se2) {
  return se2 * Eigen::MatrixXd::Identity(o.J.rows(), o.J.cols()) + sv2 * o.J;
}

inline Eigen::VectorXd gls(const Dense& o, double sv2, double se2) {
  Eigen::MatrixXd Si = covariance(o, sv2, se2).inverse();
  Eigen::MatrixXd A = o.X.transpose() * Si * o.X;
  return A.fullPivLu().solve(o.X.transpose() * Si * o.z);
}

inline double log_likelihood(const Dense& o, const Eigen::VectorXd& beta, double sv2, double se2) {
  Eigen::MatrixXd S = covariance(o, sv2, se2);
  Eigen::LLT<Eigen::MatrixXd> llt(S);
  Eigen::VectorXd r = o.z - o.X * beta;
  Eigen::MatrixXd L = llt.matrixL();
  double logdet = 2.0 * L.diagonal().array().log().sum();
  const double N = double(o.z.size());
  return -0.5 * N * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * r.dot(llt.solve(r)) + o.jacobian;
}

// Profile log-likelihood with beta at its GLS value.
inline double profile_loglik(const Dense& o, double sv2, double se2) {
  return log_likelihood(o, gls(o, sv2, se2), sv2, se2);
}

// Balanced one-way ANOVA REML (intercept-only model), interior solution.
struct AnovaReml {
  double sigma_e2, sigma_v2;
};
inline AnovaReml balanced_reml(const tnerm::UnitLevelDataset& d, const tnerm::TransformSpec& s, double l) {
  const double m = double(d.m());
  const double n = double(d.areas.front().size());
  double grand = 0.0;
  std::vector<double> means;
  double ssw = 0.0;
  for (const auto& a : d.areas) {
    double mean = 0.0;
    for (Eigen::Index j = 0; j < a.size(); ++j) mean += h(a.y(j), s, l);
    mean /= n;
    for (Eigen::Index j = 0; j < a.size(); ++j) ssw += std::pow(h(a.y(j), s, l) - mean, 2);
    means.push_back(mean);
    grand += mean / m;
  }
  double ssb = 0.0;
  for (double mu : means) ssb += n * (mu - grand) * (mu - grand);
  const double se2 = ssw / (m * (n - 1.0));
  return {se2, (ssb / (m - 1.0) - se2) / n};
}

// One-sample Kolmogorov-Smirnov against N(0, 1): statistic and asymptotic
// p-value with the Stephens small-sample correction.
struct KsResult {
  double d, p;
};
inline KsResult ks_normal(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const double n = double(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = 0.5 * std::erfc(-x[i] / std::sqrt(2.0));
    d = std::max({d, F - double(i) / n, double(i + 1) / n - F});
  }
  const double sn = std::sqrt(n);
  const double lam = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int k = 1; k <= 100; ++k) p += 2.0 * ((k % 2) ? 1.0 : -1.0) * std::exp(-2.0 * k * k * lam * lam);
  return {d, std::clamp(p, 0.0, 1.0)};
}

// Random unit-level design with an intercept and p - 1 N(0,1) covariates;
// responses are set to `fill`.
inline tnerm::UnitLevelDataset random_design(std::mt19937_64& g, int m, const std::vector<int>& n, int p,
                                             double fill = 1.0) {
  std::normal_distribution<double> N01;
  tnerm::UnitLevelDataset d;
  d.p = p;
  for (int i = 0; i < m; ++i) {
    tnerm::Area a;
    a.id = "a" + std::to_string(i);
    const int ni = n[std::size_t(i) % n.size()];
    a.y = Eigen::VectorXd::Constant(ni, fill);
    a.X.resize(ni, p);
    for (int j = 0; j < ni; ++j) {
      a.X(j, 0) = 1.0;
      for (int k = 1; k < p; ++k) a.X(j, k) = N01(g);
    }
    d.areas.push_back(std::move(a));
  }
  return d;
}

// Fills responses from the model on the given design with the oracle inverse.
inline void simulate(std::mt19937_64& g, tnerm::UnitLevelDataset& d, const tnerm::TransformSpec& s, double l,
                     const Eigen::VectorXd& beta, double sv2, double se2) {
  std::normal_distribution<double> N01;
  for (auto& a : d.areas) {
    const double v = std::sqrt(sv2) * N01(g);
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      const double z = a.X.row(j).dot(beta) + v + std::sqrt(se2) * N01(g);
      a.y(j) = s.family == tnerm::Family::Identity ? z : h_inv(z, s, l);
    }
  }
}

}  // namespace oracle

namespace oracle {

// Profile log-likelihood (beta at GLS) assembled area by area with the
// closed-form inverse V_i^{-1} = I - rho / (1 + n_i rho) J.
inline double area_profile_loglik(const tnerm::UnitLevelDataset& d, const tnerm::TransformSpec& s, double l,
                                  double sv2, double se2, Eigen::VectorXd* beta_out = nullptr) {
  const double rho = sv2 / se2;
  const auto p = d.p;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd c = Eigen::VectorXd::Zero(p);
  double N = 0.0, logdet = 0.0, jac = 0.0;
  std::vector<Eigen::VectorXd> zs;
  for (const auto& a : d.areas) {
    const double n = double(a.size());
    const double g = rho / (1.0 + n * rho);
    Eigen::VectorXd z(a.size());
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      z(j) = h(a.y(j), s, l);
      jac += std::log(h_x(a.y(j), s, l));
    }
    Eigen::VectorXd sx = a.X.colwise().sum().transpose();
    A += a.X.transpose() * a.X - g * sx * sx.transpose();
    c += a.X.transpose() * z - g * sx * z.sum();
    logdet += a.size() * std::log(se2) + std::log(1.0 + n * rho);
    N += n;
    zs.push_back(std::move(z));
  }
  Eigen::VectorXd beta = A.ldlt().solve(c);
  double q = 0.0;
  for (std::size_t i = 0; i < d.areas.size(); ++i) {
    const auto& a = d.areas[i];
    const double n = double(a.size());
    Eigen::VectorXd r = zs[i] - a.X * beta;
    q += r.squaredNorm() - rho / (1.0 + n * rho) * r.sum() * r.sum();
  }
  if (beta_out) *beta_out = beta;
  return -0.5 * N * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * q / se2 + jac;
}

struct GridMax {
  double sv2, se2, ll;
};

// Maximises over a coarse grid (step 0.01), then over a 1e-3 grid around the coarse optimum.
inline GridMax ml_grid(const tnerm::UnitLevelDataset& d, const tnerm::TransformSpec& s, double l, double sv2_max,
                       double se2_lo, double se2_hi) {
  GridMax best{0.0, se2_lo, -INFINITY};
  auto scan = [&](double v0, double v1, double e0, double e1, double step) {
    const int nv = int(std::lround((v1 - v0) / step)), ne = int(std::lround((e1 - e0) / step));
    GridMax b{0.0, 0.0, -INFINITY};
    for (int i = 0; i <= nv; ++i)
      for (int k = 0; k <= ne; ++k) {
        const double v = v0 + i * step, e = e0 + k * step;
        if (v < 0.0 || e <= 0.0) continue;
        const double ll = area_profile_loglik(d, s, l, v, e);
        if (ll > b.ll) b = {v, e, ll};
      }
    return b;
  };
  best = scan(0.0, sv2_max, se2_lo, se2_hi, 0.01);
  return scan(std::max(0.0, best.sv2 - 0.02), best.sv2 + 0.02, best.se2 - 0.02, best.se2 + 0.02, 1e-3);
}

}  // namespace oracle
