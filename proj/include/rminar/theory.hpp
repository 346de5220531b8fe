#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rminar/distributions.hpp"
#include "rminar/errors.hpp"
#include "rminar/model.hpp"
#include "rminar/numerics.hpp"
#include "rminar/random.hpp"

namespace rminar {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

struct StationarityReport {
  double coefficient_sum = 0.0;
  double rho_mean = 0.0;              ///< spectral radius of E(A_t)
  std::optional<double> rho_m2;       ///< spectral radius of E(A_t (x) A_t); additive classes only
  bool mean_exists = false;           ///< rho_mean < 1
  bool second_moment_exists = false;  ///< rho_mean < 1 and rho_m2 < 1
  double uncond_mean = kInf;
  std::optional<double> uncond_variance;  ///< +inf when second_moment_exists is false
  /// E(Phi_i^4) < 1 for every coefficient; empty when built from parameters only.
  std::optional<bool> fourth_moments_below_one;
  std::vector<std::string> notes;
};

/// Mean of the companion matrix: top row `coef_means`, identity subdiagonal.
inline Matrix companion(std::span<const double> coef_means) {
  const std::size_t p = coef_means.size();
  Matrix a(p, p);
  for (std::size_t j = 0; j < p; ++j) a(0, j) = coef_means[j];
  for (std::size_t i = 1; i < p; ++i) a(i, i - 1) = 1.0;
  return a;
}

/// E(A_t (x) A_t) for a companion matrix with independent first-row entries
/// of the given means and second moments. Only row 0 of the Kronecker square
/// multiplies two random entries; it holds E(Phi_j Phi_l) at column j p + l.
inline Matrix companion_kron_moment(std::span<const double> coef_means, std::span<const double> coef_second) {
  const std::size_t p = coef_means.size();
  const Matrix a = companion(coef_means);
  Matrix k = kronecker(a, a);
  for (std::size_t j = 0; j < p; ++j)
    for (std::size_t l = 0; l < p; ++l) k(0, j * p + l) = j == l ? coef_second[j] : coef_means[j] * coef_means[l];
  return k;
}

/// Moment report from parameter vectors: additive theta = (mu_eps, phi..),
/// lambda = (sigma2_eps, sigma2_phi..); multiplicative theta = (omega, phi..)
/// with the mean recursion only.
inline StationarityReport moment_report(std::span<const double> theta, std::span<const double> lambda,
                                        ModelClass cls) {
  if (theta.size() < 2) fail(ErrorKind::InvalidSpec, "moment_report: theta needs an intercept and >= 1 coefficient");
  const std::size_t p = theta.size() - 1;
  const std::span<const double> phi = theta.subspan(1);
  StationarityReport rep;
  for (double v : phi) rep.coefficient_sum += v;
  const Matrix mean_a = companion(phi);
  rep.rho_mean = spectral_radius(mean_a);
  rep.mean_exists = rep.rho_mean < 1.0;
  const double level = cls == ModelClass::Multiplicative ? 1.0 + theta[0] : theta[0];
  if (rep.mean_exists) rep.uncond_mean = level / (1.0 - rep.coefficient_sum);
  else if (level == 0.0) rep.uncond_mean = 0.0;

  if (cls == ModelClass::Multiplicative) {
    rep.notes.emplace_back("second-order moments are not computed for the multiplicative class");
    return rep;
  }
  if (lambda.size() != p + 1) fail(ErrorKind::InvalidSpec, "moment_report: lambda length must equal theta length");

  Vector second(p);
  for (std::size_t i = 0; i < p; ++i) second[i] = lambda[i + 1] + phi[i] * phi[i];
  const Matrix ekk = companion_kron_moment(phi, second);
  rep.rho_m2 = spectral_radius(ekk);
  rep.second_moment_exists = rep.mean_exists && *rep.rho_m2 < 1.0;
  if (!rep.second_moment_exists) {
    rep.uncond_variance = kInf;
    return rep;
  }

  // vec(Gamma) = (I - E(A(x)A))^{-1} [ (E(A(x)A) - E(A)(x)E(A)) vec(mu mu') + vec(Gamma_xi) ]
  const std::size_t q = p * p;
  const Matrix akk = kronecker(mean_a, mean_a);
  const double m = rep.uncond_mean;
  Vector rhs(q, 0.0);
  for (std::size_t r = 0; r < q; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < q; ++c) s += (ekk(r, c) - akk(r, c)) * m * m;
    rhs[r] = s;
  }
  rhs[0] += lambda[0];
  Matrix lhs = Matrix::identity(q);
  for (std::size_t r = 0; r < q; ++r)
    for (std::size_t c = 0; c < q; ++c) lhs(r, c) -= ekk(r, c);
  const Vector gamma = solve(lhs, rhs);
  rep.uncond_variance = gamma[0];
  return rep;
}

/// Moment-stationarity analysis of a spec (orders m = 1 and m = 2).
inline StationarityReport stationarity_report(const ModelSpec& spec) {
  validate(spec);
  const Vector theta = true_theta(spec);
  Vector lambda = true_lambda(spec);
  StationarityReport rep;
  if (spec.model_class == ModelClass::Multiplicative) {
    rep = moment_report(theta, {}, spec.model_class);
  } else {
    rep = moment_report(theta, lambda, spec.model_class);
  }
  bool below = true;
  for (const auto& c : spec.coefficients) {
    try {
      if (!(power_moment(c, 4.0) < 1.0)) below = false;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Diverges) throw;
      below = false;
    }
  }
  rep.fourth_moments_below_one = below;
  if (!below) rep.notes.emplace_back("E(Phi_i^4) < 1 fails for some coefficient");
  return rep;
}

enum class TailMode { Raw, Absolute, ProductWithInnovation };

constexpr std::string_view to_string(TailMode m) {
  switch (m) {
    case TailMode::Raw: return "raw";
    case TailMode::Absolute: return "absolute";
    case TailMode::ProductWithInnovation: return "product_with_innovation";
  }
  return "unknown";
}

struct TailReport {
  std::optional<double> tau1;  ///< empty when the moment function never reaches 1
  TailMode mode = TailMode::Raw;
  double lo = 1e-6;
  double hi = 64.0;
  std::size_t solver_iterations = 0;
  std::optional<double> moment_at_tau1;
};

namespace detail {

/// tau -> E(X^tau) - 1 for the chosen mode, +inf where the moment diverges.
inline double tail_moment_gap(const ModelSpec& spec, TailMode mode, double tau) {
  constexpr double kTol = 1e-14;
  try {
    const double coef = power_moment(spec.coefficients[0], tau, kTol);
    if (mode != TailMode::ProductWithInnovation) return coef - 1.0;
    return coef * power_moment(spec.innovation, tau, kTol) - 1.0;
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Diverges) return kInf;
    throw;
  }
}

}  // namespace detail

/// Solves E(Phi^tau) = 1 (or E|Phi|^tau, or E|eps Phi|^tau) for tau in (1e-6, bracket_hi)
/// by a coarse scan followed by bisection. The moment function is log-convex
/// in tau, so there is at most one crossing from below.
inline TailReport tail_index(const ModelSpec& spec, TailMode mode, double bracket_hi = 64.0) {
  validate(spec);
  if (spec.order() != 1) fail(ErrorKind::NotSupported, "tail_index solves the scalar moment equation for p = 1 only");
  if (mode == TailMode::Raw && !nonnegative_support(spec.coefficients[0]))
    fail(ErrorKind::NotSupported, "raw tail mode needs an N0-valued coefficient; use absolute");
  TailReport rep;
  rep.mode = mode;
  rep.hi = bracket_hi;
  auto gap = [&](double tau) { return detail::tail_moment_gap(spec, mode, tau); };

  double a = rep.lo;
  double fa = gap(a);
  if (fa >= 0.0) return rep;
  double b = a;
  double fb = fa;
  for (double tau = 0.125; tau <= bracket_hi; tau *= 2.0) {
    ++rep.solver_iterations;
    const double f = gap(tau);
    if (f >= 0.0) {
      b = tau;
      fb = f;
      break;
    }
    a = tau;
    fa = f;
  }
  if (fb < 0.0) {
    const double f = gap(bracket_hi);
    ++rep.solver_iterations;
    if (f < 0.0) return rep;
    b = bracket_hi;
    fb = f;
  }
  double mid = 0.5 * (a + b);
  for (int it = 0; it < 200; ++it) {
    ++rep.solver_iterations;
    mid = 0.5 * (a + b);
    const double f = gap(mid);
    if (std::abs(f) <= 1e-12 || b - a <= 1e-15 * b) break;
    if (f < 0.0) a = mid;
    else b = mid;
  }
  rep.tau1 = mid;
  rep.moment_at_tau1 = gap(mid) + 1.0;
  return rep;
}

struct LyapunovReport {
  double gamma = 0.0;           ///< -inf when minus_infinity is set
  bool minus_infinity = false;
  double std_error = 0.0;
  std::size_t horizon = 0;
  std::size_t replications = 0;
};

/// Top Lyapunov exponent of the random companion products, by Monte Carlo
/// with infinity-norm renormalization at every step. An exactly zero
/// product in any replication yields -inf.
inline LyapunovReport lyapunov_mc(const ModelSpec& spec, std::size_t horizon, std::size_t reps, std::uint64_t seed) {
  validate(spec);
  LyapunovReport rep;
  rep.horizon = horizon;
  rep.replications = reps;
  const std::size_t p = spec.order();
  if (p == 1) {
    const bool zero_mass = spec.model_class == ModelClass::Multiplicative
                               ? prob_zero(spec.coefficients[0]) > 0.0 || prob_zero(spec.innovation) > 0.0
                               : prob_zero(spec.coefficients[0]) > 0.0;
    if (zero_mass) {
      rep.gamma = -kInf;
      rep.minus_infinity = true;
      rep.horizon = 0;
      rep.replications = 0;
      return rep;
    }
  }
  if (horizon == 0 || reps == 0) fail(ErrorKind::InvalidSpec, "lyapunov_mc: horizon and reps must be >= 1");
  std::vector<double> rates;
  rates.reserve(reps);
  for (std::size_t r = 0; r < reps; ++r) {
    RngState rng = make_rng(mix_seed(seed, r));
    Matrix prod = Matrix::identity(p);
    double log_norm = 0.0;
    for (std::size_t t = 0; t < horizon; ++t) {
      prod = draw_companion(spec, rng).a * prod;
      double norm = 0.0;
      for (std::size_t i = 0; i < p; ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < p; ++j) row += std::abs(prod(i, j));
        norm = std::max(norm, row);
      }
      if (norm == 0.0) {
        rep.gamma = -kInf;
        rep.minus_infinity = true;
        return rep;
      }
      log_norm += std::log(norm);
      for (double& v : prod.data()) v /= norm;
    }
    rates.push_back(log_norm / static_cast<double>(horizon));
  }
  const auto n = static_cast<double>(reps);
  double sum = 0.0;
  for (double g : rates) sum += g;
  rep.gamma = sum / n;
  double ss = 0.0;
  for (double g : rates) ss += (g - rep.gamma) * (g - rep.gamma);
  rep.std_error = reps > 1 ? std::sqrt(ss / (n - 1.0) / n) : 0.0;
  return rep;
}

/// Hill estimate of the tail index alpha from the top ceil(k_fraction * n)
/// order statistics of |x|.
inline double hill_tail_estimate(std::span<const double> x, double k_fraction) {
  const std::size_t n = x.size();
  if (n < 1000) fail(ErrorKind::TooShort, "hill_tail_estimate needs at least 1000 observations");
  if (!(k_fraction > 0.0 && k_fraction <= 0.1)) fail(ErrorKind::InvalidSpec, "hill_tail_estimate: k_fraction must lie in (0, 0.1]");
  const auto k = static_cast<std::size_t>(std::ceil(k_fraction * static_cast<double>(n)));
  std::vector<double> a(n);
  std::transform(x.begin(), x.end(), a.begin(), [](double v) { return std::abs(v); });
  std::nth_element(a.begin(), a.begin() + static_cast<std::ptrdiff_t>(k), a.end(), std::greater<>());
  const double threshold = a[k];
  if (!(threshold > 0.0)) fail(ErrorKind::DegenerateTail, "hill_tail_estimate: threshold order statistic is zero");
  double h = 0.0;
  for (std::size_t i = 0; i < k; ++i) h += std::log(a[i] / threshold);
  h /= static_cast<double>(k);
  if (!(h > 0.0)) fail(ErrorKind::DegenerateTail, "hill_tail_estimate: top order statistics are all equal");
  return 1.0 / h;
}

inline double hill_tail_estimate(const Series& s, double k_fraction) {
  std::vector<double> x(s.values.begin(), s.values.end());
  return hill_tail_estimate(x, k_fraction);
}

}  // namespace rminar
