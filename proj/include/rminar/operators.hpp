#pragma once

// Random sum (generalized thinning) versus random multiplication.
//
//   random sum:            alpha o X = xi_1 + ... + xi_X,  xi_i iid
//   random multiplication: phi (.) X = Phi * X,            one draw of Phi
//
// Both share the conditional mean E(xi) X, but the conditional variance is
// linear in X for the sum and quadratic in X for the multiplication.

#include <cstdint>

#include "rminar/distributions.hpp"
#include "rminar/errors.hpp"

namespace rminar {

struct OperatorMoments {
  double mean = 0.0;
  double variance = 0.0;
  double cond_mean_coeff = 0.0;  ///< E(output | X) = cond_mean_coeff * X
  double cond_var_coeff = 0.0;   ///< V(output | X) = cond_var_coeff * X^cond_var_power
  int cond_var_power = 1;
};

/// Sum of X iid draws from `summand`. The loop is materialized, so callers
/// are expected to keep X moderate.
inline std::int64_t random_sum(const DistSpec& summand, std::int64_t x, RngState& rng) {
  if (x < 0) fail(ErrorKind::NegativeOperand, "random_sum: operand must be >= 0");
  if (!nonnegative_support(summand)) fail(ErrorKind::InvalidSpec, "random_sum: summand must be N0-valued");
  std::int64_t total = 0;
  for (std::int64_t i = 0; i < x; ++i) total += sample(summand, rng);
  return total;
}

/// Phi * X with a single draw of Phi. Always consumes exactly one draw, also
/// when X = 0, so that simulation streams stay aligned.
inline std::int64_t random_mult(const DistSpec& multiplier, std::int64_t x, RngState& rng) {
  const std::int64_t phi = sample(multiplier, rng);
  std::int64_t out = 0;
  if (__builtin_mul_overflow(phi, x, &out)) fail(ErrorKind::Overflow, "random_mult: product overflows int64");
  return out;
}

/// Moments of alpha o X given the first two moments of X.
inline OperatorMoments rso_moments(const DistSpec& summand, double x_mean, double x_var, double x_second) {
  (void)x_second;
  const double alpha = mean(summand);
  const double s2 = variance(summand);
  return {alpha * x_mean, s2 * x_mean + alpha * alpha * x_var, alpha, s2, 1};
}

/// Moments of phi (.) X given the first two moments of X.
inline OperatorMoments rmo_moments(const DistSpec& multiplier, double x_mean, double x_var, double x_second) {
  const double phi = mean(multiplier);
  const double s2 = variance(multiplier);
  return {phi * x_mean, s2 * x_second + phi * phi * x_var, phi, s2, 2};
}

}  // namespace rminar
