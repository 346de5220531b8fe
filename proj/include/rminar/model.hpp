#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "rminar/distributions.hpp"
#include "rminar/errors.hpp"
#include "rminar/numerics.hpp"
#include "rminar/random.hpp"

namespace rminar {

enum class ModelClass { AdditiveN0, AdditiveZ, Multiplicative };

constexpr std::string_view to_string(ModelClass c) {
  switch (c) {
    case ModelClass::AdditiveN0: return "additive";
    case ModelClass::AdditiveZ: return "additive-z";
    case ModelClass::Multiplicative: return "multiplicative";
  }
  return "unknown";
}

constexpr bool is_additive(ModelClass c) { return c != ModelClass::Multiplicative; }

/// Model class, order, and input laws.
///
/// Additive classes:   Y_t = Phi_1t Y_{t-1} + ... + Phi_pt Y_{t-p} + eps_t
/// Multiplicative:     Y_t = (1 + omega_t + Phi_1t Y_{t-1} + ... + Phi_pt Y_{t-p}) * eps_t
///
/// All inputs are mutually independent and iid over t.
struct ModelSpec {
  ModelClass model_class = ModelClass::AdditiveN0;
  std::vector<DistSpec> coefficients;   ///< Phi_1, ..., Phi_p
  DistSpec innovation = DistSpec::poisson(1.0);
  std::optional<DistSpec> intercept;    ///< omega, multiplicative class only

  std::size_t order() const noexcept { return coefficients.size(); }
};

enum class Domain { N0, Z };

struct Series {
  std::vector<std::int64_t> values;
  Domain domain = Domain::N0;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> spec_digest;
  bool csv_header = false;  ///< the source CSV carried a "y" header row

  std::size_t size() const noexcept { return values.size(); }
};

inline Domain domain_of(std::span<const std::int64_t> values) {
  for (auto v : values)
    if (v < 0) return Domain::Z;
  return Domain::N0;
}

/// Condition reports produced by validate().
struct ValidationReport {
  bool coefficients_zero_mass = false;  ///< P(Phi_i = 0) > 0 for every i
  bool innovation_zero_mass = false;    ///< P(eps = 0) > 0
  /// The zero-mass condition that guarantees a unique strictly stationary
  /// ergodic solution for this class (coefficients only for the additive
  /// classes; coefficients and innovation for the multiplicative class).
  bool everywhere_stationary = false;
  std::vector<std::string> notes;
};

/// Checks the domain constraints of the model class. Throws InvalidSpec.
inline ValidationReport validate(const ModelSpec& spec) {
  auto bad = [](const std::string& field, const std::string& why) {
    fail(ErrorKind::InvalidSpec, field + ": " + why);
  };
  const std::size_t p = spec.order();
  if (p == 0) bad("coefficients", "order p must be >= 1");

  ValidationReport rep;
  switch (spec.model_class) {
    case ModelClass::AdditiveN0:
      for (std::size_t i = 0; i < p; ++i) {
        const auto field = "coefficients[" + std::to_string(i) + "]";
        if (!nonnegative_support(spec.coefficients[i])) bad(field, "must be N0-valued for the additive N0 class");
        if (mean(spec.coefficients[i]) == 0.0) rep.notes.push_back(field + " has zero mean");
      }
      if (!nonnegative_support(spec.innovation)) bad("innovation", "must be N0-valued for the additive N0 class");
      if (spec.intercept) bad("intercept", "only the multiplicative class has an intercept law");
      break;
    case ModelClass::AdditiveZ:
      if (spec.intercept) bad("intercept", "only the multiplicative class has an intercept law");
      break;
    case ModelClass::Multiplicative:
      for (std::size_t i = 0; i < p; ++i)
        if (!nonnegative_support(spec.coefficients[i]))
          bad("coefficients[" + std::to_string(i) + "]", "must be N0-valued for the multiplicative class");
      if (!spec.intercept) bad("intercept", "required for the multiplicative class");
      if (!nonnegative_support(*spec.intercept)) bad("intercept", "must be N0-valued");
      if (!nonnegative_support(spec.innovation)) bad("innovation", "must be N0-valued for the multiplicative class");
      if (std::abs(mean(spec.innovation) - 1.0) > 1e-9) bad("innovation", "mean must equal 1 for the multiplicative class");
      break;
  }

  rep.coefficients_zero_mass = true;
  for (const auto& c : spec.coefficients)
    if (!(prob_zero(c) > 0.0)) rep.coefficients_zero_mass = false;
  rep.innovation_zero_mass = prob_zero(spec.innovation) > 0.0;
  rep.everywhere_stationary = rep.coefficients_zero_mass &&
                              (is_additive(spec.model_class) || rep.innovation_zero_mass);
  if (!rep.coefficients_zero_mass)
    rep.notes.emplace_back("some coefficient has no mass at zero; stationarity needs a negative Lyapunov exponent");
  if (spec.model_class == ModelClass::Multiplicative && !rep.innovation_zero_mass)
    rep.notes.emplace_back("innovation has no mass at zero");
  return rep;
}

/// True mean parameter vector: (mu_eps, phi_1..phi_p) or (omega, phi_1..phi_p).
inline Vector true_theta(const ModelSpec& spec) {
  Vector th;
  th.push_back(spec.model_class == ModelClass::Multiplicative ? mean(*spec.intercept) : mean(spec.innovation));
  for (const auto& c : spec.coefficients) th.push_back(mean(c));
  return th;
}

/// True variance parameter vector: (sigma2_eps, sigma2_phi_1..) for the
/// additive classes, (sigma2_eps, sigma2_omega, sigma2_phi_1..) for the
/// multiplicative class.
inline Vector true_lambda(const ModelSpec& spec) {
  Vector la;
  la.push_back(variance(spec.innovation));
  if (spec.model_class == ModelClass::Multiplicative) la.push_back(variance(*spec.intercept));
  for (const auto& c : spec.coefficients) la.push_back(variance(c));
  return la;
}

/// E(Y_t | past). `history` holds (Y_{t-1}, ..., Y_{t-p}).
inline double conditional_mean(std::span<const double> theta, std::span<const double> history, ModelClass cls) {
  const std::size_t p = theta.size() - 1;
  if (history.size() < p) fail(ErrorKind::InvalidSpec, "conditional_mean: history shorter than the order");
  double m = theta[0];
  for (std::size_t i = 0; i < p; ++i) m += theta[i + 1] * history[i];
  return cls == ModelClass::Multiplicative ? 1.0 + m : m;
}

/// V(Y_t | past). For the multiplicative class `lambda` is
/// (sigma2_eps, sigma2_omega, sigma2_phi_1..p) and `theta` is (omega, phi_1..p).
inline double conditional_variance(std::span<const double> theta, std::span<const double> lambda,
                                   std::span<const double> history, ModelClass cls) {
  const std::size_t p = theta.size() - 1;
  if (history.size() < p) fail(ErrorKind::InvalidSpec, "conditional_variance: history shorter than the order");
  if (is_additive(cls)) {
    double v = lambda[0];
    for (std::size_t i = 0; i < p; ++i) v += lambda[i + 1] * history[i] * history[i];
    return v;
  }
  const double s2 = lambda[0];
  double lambda_var = lambda[1];
  for (std::size_t i = 0; i < p; ++i) lambda_var += lambda[i + 2] * history[i] * history[i];
  const double mu = conditional_mean(theta, history, cls);
  return (s2 + 1.0) * lambda_var + s2 * mu * mu;
}

namespace detail {

inline constexpr std::int64_t kValueLimit = std::int64_t{1} << 62;

inline std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out) || out > kValueLimit || out < -kValueLimit)
    fail(ErrorKind::Overflow, "series value exceeds 2^62 in magnitude");
  return out;
}

inline std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_add_overflow(a, b, &out) || out > kValueLimit || out < -kValueLimit)
    fail(ErrorKind::Overflow, "series value exceeds 2^62 in magnitude");
  return out;
}

}  // namespace detail

/// One step of the recursion. `lags` holds (Y_{t-1}, ..., Y_{t-p}).
/// Draw order: Phi_1..Phi_p, eps, then omega (multiplicative class).
inline std::int64_t step(const ModelSpec& spec, std::span<const std::int64_t> lags, RngState& rng) {
  const std::size_t p = spec.order();
  std::int64_t acc = 0;
  for (std::size_t i = 0; i < p; ++i)
    acc = detail::checked_add(acc, detail::checked_mul(sample(spec.coefficients[i], rng), lags[i]));
  const std::int64_t eps = sample(spec.innovation, rng);
  if (is_additive(spec.model_class)) return detail::checked_add(acc, eps);
  const std::int64_t omega = sample(*spec.intercept, rng);
  const std::int64_t level = detail::checked_add(detail::checked_add(acc, omega), 1);
  return detail::checked_mul(level, eps);
}

/// Runs the recursion from zero initial lags for burn_in + n steps and keeps
/// the last n values. Deterministic in (spec, n, burn_in, seed).
inline Series simulate(const ModelSpec& spec, std::size_t n, std::size_t burn_in, std::uint64_t seed) {
  validate(spec);
  if (n == 0) fail(ErrorKind::InvalidSpec, "simulate: n must be >= 1");
  const std::size_t p = spec.order();
  RngState rng = make_rng(seed);
  std::vector<std::int64_t> lags(p, 0);
  Series out;
  out.values.reserve(n);
  for (std::size_t t = 0; t < burn_in + n; ++t) {
    const std::int64_t y = step(spec, lags, rng);
    for (std::size_t i = p; i-- > 1;) lags[i] = lags[i - 1];
    lags[0] = y;
    if (t >= burn_in) out.values.push_back(y);
  }
  out.domain = domain_of(out.values);
  out.seed = seed;
  return out;
}

inline Series simulate(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  return simulate(spec, n, 500, seed);
}

/// Random companion matrix and forcing vector of the vector form
/// Y_t = A_t Y_{t-1} + forcing_t.
struct CompanionDraw {
  Matrix a;
  Vector forcing;
};

/// Draws (A_t, forcing_t) consuming the random stream exactly like step().
inline CompanionDraw draw_companion(const ModelSpec& spec, RngState& rng) {
  const std::size_t p = spec.order();
  CompanionDraw d{Matrix(p, p), Vector(p, 0.0)};
  std::vector<double> phi(p);
  for (std::size_t i = 0; i < p; ++i) phi[i] = static_cast<double>(sample(spec.coefficients[i], rng));
  const auto eps = static_cast<double>(sample(spec.innovation, rng));
  double scale = 1.0;
  if (is_additive(spec.model_class)) {
    d.forcing[0] = eps;
  } else {
    const auto omega = static_cast<double>(sample(*spec.intercept, rng));
    d.forcing[0] = eps * (1.0 + omega);
    scale = eps;
  }
  for (std::size_t j = 0; j < p; ++j) d.a(0, j) = scale * phi[j];
  for (std::size_t i = 1; i < p; ++i) d.a(i, i - 1) = 1.0;
  return d;
}

/// P(Y_t = j | Y_{t-1} = i) for an additive N0 model of order 1.
inline double transition_probability(const ModelSpec& spec, std::int64_t i, std::int64_t j) {
  if (spec.model_class != ModelClass::AdditiveN0 || spec.order() != 1)
    fail(ErrorKind::NotSupported, "transition_probability needs an additive N0 model of order 1");
  if (i < 0 || j < 0) fail(ErrorKind::InvalidSpec, "transition_probability: states must be >= 0");
  if (i == 0) return pmf(spec.innovation, j);
  double total = 0.0;
  for (std::int64_t m = 0; m * i <= j; ++m) total += pmf(spec.innovation, j - m * i) * pmf(spec.coefficients[0], m);
  return total;
}

/// Stable 64-bit digest of the model (FNV-1a over a canonical description).
inline std::uint64_t spec_digest(const ModelSpec& spec) {
  std::ostringstream os;
  os.precision(17);
  auto put = [&](const DistSpec& d) { os << to_string(d.kind()) << '(' << d.first() << ',' << d.second() << ')'; };
  os << to_string(spec.model_class) << ';';
  for (const auto& c : spec.coefficients) put(c);
  os << ';';
  put(spec.innovation);
  if (spec.intercept) put(*spec.intercept);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : os.str()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rminar
