#pragma once

// Dual power (positive data) and dual power logistic (bounded data)
// transformations with their analytic partial derivatives.
//
// Both families are written through a base coordinate L(x):
//   dual power:          L = log(x - a)
//   dual power logistic: L = log(u / (1 - u)),  u = (x - a) / (b - a)
// and h(x, lambda) = sinh(lambda * L) / lambda, with h = L at lambda = 0.
// The identity family (h = x) is provided for the untransformed comparator.

#include "tnerm/dataset.hpp"

#include <optional>
#include <string>

namespace tnerm {

enum class Family { DualPower, DualPowerLogistic, Identity };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct TransformSpec {
  Family family = Family::DualPower;
  double shift_a = 0.0;
  double scale_b = 1.0;                 // upper bound, logistic family only
  std::optional<double> fixed_lambda;   // empty: lambda is estimated

  static TransformSpec dual_power(double a = 0.0);
  static TransformSpec dual_power_logistic(double a = 0.0, double b = 1.0);
  static TransformSpec identity();

  TransformSpec with_fixed_lambda(double lambda) const;
  bool lambda_is_free() const { return family != Family::Identity && !fixed_lambda; }

  bool in_domain(double x) const;
  std::string domain_string() const;
  /// Throws ParameterError on an inconsistent spec (a >= b, negative fixed lambda).
  void check() const;
};

struct TransformValue {
  double z;
  double jacobian_log;  // log dh/dx
};

double forward(double x, const TransformSpec& spec, double lambda);
double inverse(double z, const TransformSpec& spec, double lambda);
double d_forward_dx(double x, const TransformSpec& spec, double lambda);
double d_forward_dlambda(double x, const TransformSpec& spec, double lambda);
double d2_forward_dxdlambda(double x, const TransformSpec& spec, double lambda);
TransformValue evaluate(double x, const TransformSpec& spec, double lambda);

/// Sum over all units of h_{x lambda}(y_ij) / h_x(y_ij).
double score_jacobian_term(const UnitLevelDataset& data, const TransformSpec& spec, double lambda);

/// Throws InputError naming the first response outside the transform domain.
void check_domain(const UnitLevelDataset& data, const TransformSpec& spec);

namespace kernel {

// Functions of the base coordinate L. All require lambda >= 0 (unchecked here).

/// sinh(lambda L) / lambda
double h(double L, double lambda);
/// d/dlambda of h
double h_lambda(double L, double lambda);
/// log cosh(lambda L), overflow-free
double log_cosh(double L, double lambda);
/// h_{x lambda} / h_x = L tanh(lambda L)
double jacobian_ratio(double L, double lambda);
/// inverse of h in L: asinh(lambda z) / lambda
double h_inverse(double z, double lambda);

/// h, h_lambda, h_{x lambda}/h_x and log cosh(lambda L) from a single exp.
struct Terms {
  double h;
  double h_lambda;
  double jacobian_ratio;
  double log_cosh;
};
Terms all_terms(double L, double lambda);

}  // namespace kernel

/// Base coordinate L(x) and log dL/dx. Throws InputError outside the domain.
double base_coordinate(double x, const TransformSpec& spec);
double base_log_derivative(double x, const TransformSpec& spec);

}  // namespace tnerm
