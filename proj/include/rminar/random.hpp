#pragma once

// Variate generators built directly on the raw 64-bit engine output. The
// std:: distribution objects are implementation-defined, so using them would
// make simulated series differ across standard libraries.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace rminar {

using RngState = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent per-replication seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t mix_seed(std::uint64_t master, std::uint64_t stream) {
  return mix64(mix64(master) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

inline RngState make_rng(std::uint64_t seed) { return RngState(mix64(seed)); }

/// Uniform on the open interval (0, 1) with 53 random bits.
inline double uniform01(RngState& rng) {
  const std::uint64_t bits = rng() >> 11;
  return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
}

inline double standard_normal(RngState& rng) {
  // Marsaglia polar method; the second variate is discarded.
  while (true) {
    const double u = 2.0 * uniform01(rng) - 1.0;
    const double v = 2.0 * uniform01(rng) - 1.0;
    const double s = u * u + v * v;
    if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
  }
}

namespace detail {

inline std::int64_t poisson_inversion(double mean, RngState& rng) {
  // Sequential search from zero; mean <= 30 keeps exp(-mean) well above the
  // underflow threshold and the expected number of steps small.
  double u = uniform01(rng);
  double p = std::exp(-mean);
  std::int64_t k = 0;
  while (u > p) {
    u -= p;
    ++k;
    p *= mean / static_cast<double>(k);
    if (p == 0.0) break;
  }
  return k;
}

// Transformed rejection with squeeze (Hormann 1993, PTRS), exact for mean >= 10.
inline std::int64_t poisson_ptrs(double mean, RngState& rng) {
  const double slam = std::sqrt(mean);
  const double loglam = std::log(mean);
  const double b = 0.931 + 2.53 * slam;
  const double a = -0.059 + 0.02483 * b;
  const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
  const double vr = 0.9277 - 3.6224 / (b - 2.0);
  while (true) {
    const double u = uniform01(rng) - 0.5;
    const double v = uniform01(rng);
    const double us = 0.5 - std::abs(u);
    const double kd = std::floor((2.0 * a / us + b) * u + mean + 0.43);
    if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(kd);
    if (kd < 0.0 || (us < 0.013 && v > us)) continue;
    const double lhs = std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b);
    const double rhs = -mean + kd * loglam - std::lgamma(kd + 1.0);
    if (lhs <= rhs) return static_cast<std::int64_t>(kd);
  }
}

}  // namespace detail

inline std::int64_t sample_poisson(double mean, RngState& rng) {
  if (mean <= 0.0) return 0;
  if (mean <= 30.0) return detail::poisson_inversion(mean, rng);
  return detail::poisson_ptrs(mean, rng);
}

/// Gamma(shape, scale) by Marsaglia-Tsang, with the u^(1/shape) boost for shape < 1.
inline double sample_gamma(double shape, double scale, RngState& rng) {
  if (shape < 1.0) {
    const double g = sample_gamma(shape + 1.0, 1.0, rng);
    return scale * g * std::pow(uniform01(rng), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  while (true) {
    double x;
    double v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = uniform01(rng);
    if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return scale * d * v;
  }
}

/// Negative binomial with real size > 0 and the given mean, via the gamma-Poisson mixture.
inline std::int64_t sample_negative_binomial(double size, double mean, RngState& rng) {
  if (mean <= 0.0) return 0;
  return sample_poisson(sample_gamma(size, mean / size, rng), rng);
}

inline std::int64_t sample_binomial(std::int64_t trials, double prob, RngState& rng) {
  if (trials <= 0 || prob <= 0.0) return 0;
  if (prob >= 1.0) return trials;
  const bool flip = prob > 0.5;
  const double p = flip ? 1.0 - prob : prob;
  std::int64_t k = 0;
  if (static_cast<double>(trials) * p <= 30.0) {
    // Inversion using the pmf recurrence from zero.
    const double q = 1.0 - p;
    const double ratio = p / q;
    double u = uniform01(rng);
    double pk = std::pow(q, static_cast<double>(trials));
    while (u > pk && k < trials) {
      u -= pk;
      pk *= ratio * static_cast<double>(trials - k) / static_cast<double>(k + 1);
      ++k;
    }
  } else {
    for (std::int64_t i = 0; i < trials; ++i)
      if (uniform01(rng) < p) ++k;
  }
  return flip ? trials - k : k;
}

/// Number of failures before the first success, with the given mean.
inline std::int64_t sample_geometric(double mean, RngState& rng) {
  if (mean <= 0.0) return 0;
  const double q = mean / (1.0 + mean);
  return static_cast<std::int64_t>(std::floor(std::log(uniform01(rng)) / std::log(q)));
}

}  // namespace rminar
