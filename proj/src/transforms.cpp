#include "tnerm/transforms.hpp"

#include "tnerm/error.hpp"

#include <cmath>
#include <sstream>

namespace tnerm {

namespace {

// Below this |lambda L| the hyperbolic ratios are evaluated by their Taylor
// series in t = lambda L (covers every lambda < 1e-6 on representable data).
constexpr double kSeriesCutoff = 0.1;

void check_lambda(double lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    std::ostringstream os;
    os << "transformation parameter must be finite and >= 0, got " << lambda;
    throw ParameterError(os.str());
  }
}

double finite_or_throw(double v, const char* what, double x, double lambda) {
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << what << " overflows at x=" << x << ", lambda=" << lambda;
    throw NumericError(os.str());
  }
  return v;
}

}  // namespace

std::string to_string(Family f) {
  switch (f) {
    case Family::DualPower: return "dp";
    case Family::DualPowerLogistic: return "dpl";
    case Family::Identity: return "identity";
  }
  return "unknown";
}

Family family_from_string(const std::string& s) {
  if (s == "dp" || s == "dpt" || s == "dual_power") return Family::DualPower;
  if (s == "dpl" || s == "dplt" || s == "dual_power_logistic") return Family::DualPowerLogistic;
  if (s == "identity" || s == "none") return Family::Identity;
  throw ParameterError("unknown transformation family '" + s + "'");
}

TransformSpec TransformSpec::dual_power(double a) {
  TransformSpec s;
  s.family = Family::DualPower;
  s.shift_a = a;
  return s;
}

TransformSpec TransformSpec::dual_power_logistic(double a, double b) {
  TransformSpec s;
  s.family = Family::DualPowerLogistic;
  s.shift_a = a;
  s.scale_b = b;
  s.check();
  return s;
}

TransformSpec TransformSpec::identity() {
  TransformSpec s;
  s.family = Family::Identity;
  return s;
}

TransformSpec TransformSpec::with_fixed_lambda(double lambda) const {
  check_lambda(lambda);
  TransformSpec s = *this;
  s.fixed_lambda = lambda;
  return s;
}

bool TransformSpec::in_domain(double x) const {
  if (!std::isfinite(x)) return false;
  switch (family) {
    case Family::DualPower: return x > shift_a;
    case Family::DualPowerLogistic: return x > shift_a && x < scale_b;
    case Family::Identity: return true;
  }
  return false;
}

std::string TransformSpec::domain_string() const {
  std::ostringstream os;
  switch (family) {
    case Family::DualPower: os << "(" << shift_a << ", inf)"; break;
    case Family::DualPowerLogistic: os << "(" << shift_a << ", " << scale_b << ")"; break;
    case Family::Identity: os << "(-inf, inf)"; break;
  }
  return os.str();
}

void TransformSpec::check() const {
  if (!std::isfinite(shift_a)) throw ParameterError("transform shift must be finite");
  if (family == Family::DualPowerLogistic && !(std::isfinite(scale_b) && scale_b > shift_a))
    throw ParameterError("logistic transform needs finite bounds with a < b");
  if (fixed_lambda) check_lambda(*fixed_lambda);
}

namespace kernel {

double h(double L, double lambda) {
  const double t = lambda * L;
  if (std::abs(t) < kSeriesCutoff) {
    const double t2 = t * t;
    return L * (1.0 + t2 / 6.0 * (1.0 + t2 / 20.0 * (1.0 + t2 / 42.0 * (1.0 + t2 / 72.0))));
  }
  return std::sinh(t) / lambda;
}

double h_lambda(double L, double lambda) {
  const double t = lambda * L;
  if (std::abs(t) < kSeriesCutoff) {
    // (t cosh t - sinh t) / t^2 = sum_k 2k t^(2k-1) / (2k+1)!
    const double t2 = t * t;
    const double g =
        t * (1.0 / 3.0 + t2 * (1.0 / 30.0 + t2 * (1.0 / 840.0 + t2 * (1.0 / 45360.0 + t2 / 3991680.0))));
    return L * L * g;
  }
  return (t * std::cosh(t) - std::sinh(t)) / (lambda * lambda);
}

double log_cosh(double L, double lambda) {
  const double t = std::abs(lambda * L);
  if (t < kSeriesCutoff) {
    const double t2 = t * t;
    return t2 * (0.5 - t2 * (1.0 / 12.0 - t2 * (1.0 / 45.0 - t2 * 17.0 / 2520.0)));
  }
  return t + std::log1p(std::exp(-2.0 * t)) - std::log(2.0);
}

double jacobian_ratio(double L, double lambda) { return L * std::tanh(lambda * L); }

double h_inverse(double z, double lambda) {
  const double t = lambda * z;
  if (std::abs(t) < 1e-4) {
    const double t2 = t * t;
    return z * (1.0 - t2 / 6.0 + 3.0 * t2 * t2 / 40.0);
  }
  return std::asinh(t) / lambda;
}

Terms all_terms(double L, double lambda) {
  const double t = lambda * L;
  const double a = std::abs(t);
  if (a < kSeriesCutoff) {
    const double t2 = t * t;
    const double lc = t2 * (0.5 - t2 * (1.0 / 12.0 - t2 * (1.0 / 45.0 - t2 * 17.0 / 2520.0)));
    return {h(L, lambda), h_lambda(L, lambda), L * std::tanh(t), lc};
  }
  const double e = std::exp(-a);
  const double e2 = e * e;
  const double sgn = t < 0.0 ? -1.0 : 1.0;
  const double sh = sgn * (1.0 - e2) / (2.0 * e);
  const double ch = (1.0 + e2) / (2.0 * e);
  return {sh / lambda, (t * ch - sh) / (lambda * lambda), L * sgn * (1.0 - e2) / (1.0 + e2),
          a + std::log1p(e2) - std::log(2.0)};
}

}  // namespace kernel

double base_coordinate(double x, const TransformSpec& spec) {
  if (!spec.in_domain(x)) {
    std::ostringstream os;
    os << "value " << x << " outside transform domain " << spec.domain_string();
    throw InputError(os.str());
  }
  switch (spec.family) {
    case Family::DualPower: return std::log(x - spec.shift_a);
    case Family::DualPowerLogistic: {
      const double lo = x - spec.shift_a;
      const double hi = spec.scale_b - x;
      return std::log(lo) - std::log(hi);
    }
    case Family::Identity: return x;
  }
  return x;
}

double base_log_derivative(double x, const TransformSpec& spec) {
  if (!spec.in_domain(x)) {
    std::ostringstream os;
    os << "value " << x << " outside transform domain " << spec.domain_string();
    throw InputError(os.str());
  }
  switch (spec.family) {
    case Family::DualPower: return -std::log(x - spec.shift_a);
    case Family::DualPowerLogistic: {
      // dL/dx = (b - a) / ((x - a)(b - x))
      return std::log(spec.scale_b - spec.shift_a) - std::log(x - spec.shift_a) -
             std::log(spec.scale_b - x);
    }
    case Family::Identity: return 0.0;
  }
  return 0.0;
}

double forward(double x, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  const double L = base_coordinate(x, spec);
  if (spec.family == Family::Identity) return L;
  return finite_or_throw(kernel::h(L, lambda), "forward transform", x, lambda);
}

double inverse(double z, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  if (!std::isfinite(z)) throw NumericError("inverse transform of a non-finite value");
  if (spec.family == Family::Identity) return z;
  const double L = kernel::h_inverse(z, lambda);
  double x = 0.0;
  if (spec.family == Family::DualPower) {
    x = spec.shift_a + std::exp(L);
  } else {
    const double u = L >= 0.0 ? 1.0 / (1.0 + std::exp(-L)) : std::exp(L) / (1.0 + std::exp(L));
    x = spec.shift_a + (spec.scale_b - spec.shift_a) * u;
  }
  if (!spec.in_domain(x)) {
    std::ostringstream os;
    os << "inverse transform of z=" << z << " at lambda=" << lambda
       << " leaves the interior of " << spec.domain_string() << " (result " << x << ")";
    throw NumericError(os.str());
  }
  return x;
}

double d_forward_dx(double x, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  const double log_dL = base_log_derivative(x, spec);
  if (spec.family == Family::Identity) return 1.0;
  const double L = base_coordinate(x, spec);
  return finite_or_throw(std::exp(log_dL) * std::cosh(lambda * L), "dh/dx", x, lambda);
}

double d_forward_dlambda(double x, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  const double L = base_coordinate(x, spec);
  if (spec.family == Family::Identity) return 0.0;
  return finite_or_throw(kernel::h_lambda(L, lambda), "dh/dlambda", x, lambda);
}

double d2_forward_dxdlambda(double x, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  const double L = base_coordinate(x, spec);
  if (spec.family == Family::Identity) return 0.0;
  const double dL = std::exp(base_log_derivative(x, spec));
  return finite_or_throw(dL * L * std::sinh(lambda * L), "d2h/dxdlambda", x, lambda);
}

TransformValue evaluate(double x, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  const double L = base_coordinate(x, spec);
  const double log_dL = base_log_derivative(x, spec);
  if (spec.family == Family::Identity) return {L, 0.0};
  return {finite_or_throw(kernel::h(L, lambda), "forward transform", x, lambda),
          log_dL + kernel::log_cosh(L, lambda)};
}

void check_domain(const UnitLevelDataset& data, const TransformSpec& spec) {
  for (const auto& a : data.areas) {
    for (Eigen::Index j = 0; j < a.size(); ++j) {
      if (!spec.in_domain(a.y(j))) {
        std::ostringstream os;
        os << "response y[" << a.id << "][" << j << "] = " << a.y(j) << " outside transform domain "
           << spec.domain_string();
        throw InputError(os.str());
      }
    }
  }
}

double score_jacobian_term(const UnitLevelDataset& data, const TransformSpec& spec, double lambda) {
  check_lambda(lambda);
  check_domain(data, spec);
  if (spec.family == Family::Identity) return 0.0;
  double sum = 0.0;
  for (const auto& a : data.areas)
    for (Eigen::Index j = 0; j < a.size(); ++j)
      sum += kernel::jacobian_ratio(base_coordinate(a.y(j), spec), lambda);
  return sum;
}

}  // namespace tnerm
