#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "rminar/errors.hpp"
#include "rminar/random.hpp"

namespace rminar {

enum class DistKind { Poisson, Binomial, NB1, NB2, Geometric, Bernoulli, Skellam, PointMass, TwoPoint };

constexpr std::string_view to_string(DistKind kind) {
  switch (kind) {
    case DistKind::Poisson: return "poisson";
    case DistKind::Binomial: return "binomial";
    case DistKind::NB1: return "nb1";
    case DistKind::NB2: return "nb2";
    case DistKind::Geometric: return "geometric";
    case DistKind::Bernoulli: return "bernoulli";
    case DistKind::Skellam: return "skellam";
    case DistKind::PointMass: return "point_mass";
    case DistKind::TwoPoint: return "two_point";
  }
  return "unknown";
}

/// A discrete input law (random coefficient, innovation, or intercept).
///
/// Parameter layout by kind:
///   Poisson(mean)            first = mean
///   Binomial(trials, mean)   first = trials, second = mean  (success prob mean/trials)
///   NB1(r, mean)             variance mean * (1 + 1/r)
///   NB2(r, mean)             variance mean * (1 + mean/r)
///   Geometric(mean)          failures before first success, variance mean * (1 + mean)
///   Bernoulli(p)
///   Skellam(mu1, mu2)        difference of independent Poisson(mu1) and Poisson(mu2)
///   PointMass(c)             P(c) = 1
///   TwoPoint(p0, v)          P(0) = p0, P(v) = 1 - p0
class DistSpec {
 public:
  static DistSpec poisson(double mean) { return DistSpec(DistKind::Poisson, mean, 0.0); }
  static DistSpec binomial(std::int64_t trials, double mean) {
    return DistSpec(DistKind::Binomial, static_cast<double>(trials), mean);
  }
  static DistSpec nb1(double r, double mean) { return DistSpec(DistKind::NB1, r, mean); }
  static DistSpec nb2(double r, double mean) { return DistSpec(DistKind::NB2, r, mean); }
  static DistSpec geometric(double mean) { return DistSpec(DistKind::Geometric, mean, 0.0); }
  static DistSpec bernoulli(double p) { return DistSpec(DistKind::Bernoulli, p, 0.0); }
  static DistSpec skellam(double mu1, double mu2) { return DistSpec(DistKind::Skellam, mu1, mu2); }
  static DistSpec point_mass(std::int64_t c) { return DistSpec(DistKind::PointMass, static_cast<double>(c), 0.0); }
  static DistSpec two_point(double p0, std::int64_t v) {
    return DistSpec(DistKind::TwoPoint, p0, static_cast<double>(v));
  }

  DistKind kind() const noexcept { return kind_; }
  double first() const noexcept { return first_; }
  double second() const noexcept { return second_; }

  friend bool operator==(const DistSpec&, const DistSpec&) = default;

 private:
  DistSpec(DistKind kind, double first, double second) : kind_(kind), first_(first), second_(second) { check(); }

  void check() const {
    auto bad = [&](const std::string& why) {
      fail(ErrorKind::InvalidSpec, std::string(to_string(kind_)) + ": " + why);
    };
    auto is_int = [](double v) { return std::isfinite(v) && std::floor(v) == v; };
    if (!std::isfinite(first_) || !std::isfinite(second_)) bad("parameters must be finite");
    switch (kind_) {
      case DistKind::Poisson:
      case DistKind::Geometric:
        if (first_ < 0.0) bad("mean must be >= 0");
        break;
      case DistKind::Binomial:
        if (!is_int(first_) || first_ < 1.0) bad("trials must be a positive integer");
        if (second_ < 0.0 || second_ > first_) bad("mean must lie in [0, trials]");
        break;
      case DistKind::NB1:
      case DistKind::NB2:
        if (first_ <= 0.0) bad("r must be > 0");
        if (second_ < 0.0) bad("mean must be >= 0");
        break;
      case DistKind::Bernoulli:
        if (first_ < 0.0 || first_ > 1.0) bad("p must lie in [0, 1]");
        break;
      case DistKind::Skellam:
        if (first_ < 0.0 || second_ < 0.0) bad("mu1 and mu2 must be >= 0");
        break;
      case DistKind::PointMass:
        if (!is_int(first_)) bad("value must be an integer");
        break;
      case DistKind::TwoPoint:
        if (first_ < 0.0 || first_ > 1.0) bad("p0 must lie in [0, 1]");
        if (!is_int(second_)) bad("value must be an integer");
        break;
    }
  }

  DistKind kind_;
  double first_;
  double second_;
};

inline double mean(const DistSpec& d) {
  switch (d.kind()) {
    case DistKind::Poisson:
    case DistKind::Geometric:
    case DistKind::Bernoulli:
    case DistKind::PointMass:
      return d.first();
    case DistKind::Binomial:
    case DistKind::NB1:
    case DistKind::NB2:
      return d.second();
    case DistKind::Skellam:
      return d.first() - d.second();
    case DistKind::TwoPoint:
      return (1.0 - d.first()) * d.second();
  }
  return 0.0;
}

inline double variance(const DistSpec& d) {
  const double a = d.first();
  const double b = d.second();
  switch (d.kind()) {
    case DistKind::Poisson: return a;
    case DistKind::Binomial: return b * (1.0 - b / a);
    case DistKind::NB1: return b * (1.0 + 1.0 / a);
    case DistKind::NB2: return b * (1.0 + b / a);
    case DistKind::Geometric: return a * (1.0 + a);
    case DistKind::Bernoulli: return a * (1.0 - a);
    case DistKind::Skellam: return a + b;
    case DistKind::PointMass: return 0.0;
    case DistKind::TwoPoint: return a * (1.0 - a) * b * b;
  }
  return 0.0;
}

/// E(X^2).
inline double second_moment(const DistSpec& d) {
  const double m = mean(d);
  return variance(d) + m * m;
}

/// True when every atom of the law is >= 0.
inline bool nonnegative_support(const DistSpec& d) {
  switch (d.kind()) {
    case DistKind::Skellam: return d.second() == 0.0;
    case DistKind::PointMass: return d.first() >= 0.0;
    case DistKind::TwoPoint: return d.second() >= 0.0 || d.first() == 1.0;
    default: return true;
  }
}

namespace detail {

inline double poisson_pmf(double mean, std::int64_t k) {
  if (k < 0) return 0.0;
  if (mean == 0.0) return k == 0 ? 1.0 : 0.0;
  const double kd = static_cast<double>(k);
  return std::exp(kd * std::log(mean) - mean - std::lgamma(kd + 1.0));
}

inline double nb_pmf(double size, double mean, std::int64_t k) {
  if (k < 0) return 0.0;
  if (mean == 0.0) return k == 0 ? 1.0 : 0.0;
  const double kd = static_cast<double>(k);
  const double log_p = std::log(size / (size + mean));
  const double log_q = std::log(mean / (size + mean));
  return std::exp(std::lgamma(kd + size) - std::lgamma(size) - std::lgamma(kd + 1.0) + size * log_p + kd * log_q);
}

inline double skellam_pmf(double mu1, double mu2, std::int64_t k) {
  if (mu2 == 0.0) return poisson_pmf(mu1, k);
  if (mu1 == 0.0) return poisson_pmf(mu2, -k);
  // P(X1 - X2 = k) = sum_j P1(k + j) P2(j), summed until the terms vanish.
  double total = 0.0;
  std::int64_t j = k < 0 ? -k : 0;
  double prev = 0.0;
  for (;; ++j) {
    const double term = poisson_pmf(mu1, k + j) * poisson_pmf(mu2, j);
    total += term;
    if (term < prev && term <= 1e-18 * total) break;
    if (term == 0.0 && j > static_cast<std::int64_t>(mu1 + mu2) + 50) break;
    prev = term;
  }
  return total;
}

}  // namespace detail

inline double pmf(const DistSpec& d, std::int64_t k) {
  const double a = d.first();
  const double b = d.second();
  switch (d.kind()) {
    case DistKind::Poisson: return detail::poisson_pmf(a, k);
    case DistKind::Binomial: {
      const auto n = static_cast<std::int64_t>(a);
      if (k < 0 || k > n) return 0.0;
      const double p = b / a;
      if (p == 0.0) return k == 0 ? 1.0 : 0.0;
      if (p == 1.0) return k == n ? 1.0 : 0.0;
      const double kd = static_cast<double>(k);
      return std::exp(std::lgamma(a + 1.0) - std::lgamma(kd + 1.0) - std::lgamma(a - kd + 1.0) + kd * std::log(p) +
                      (a - kd) * std::log1p(-p));
    }
    case DistKind::NB1: return detail::nb_pmf(a * b, b, k);
    case DistKind::NB2: return detail::nb_pmf(a, b, k);
    case DistKind::Geometric: return detail::nb_pmf(1.0, a, k);
    case DistKind::Bernoulli:
      if (k == 0) return 1.0 - a;
      return k == 1 ? a : 0.0;
    case DistKind::Skellam: return detail::skellam_pmf(a, b, k);
    case DistKind::PointMass: return static_cast<double>(k) == a ? 1.0 : 0.0;
    case DistKind::TwoPoint: {
      double p = 0.0;
      if (k == 0) p += a;
      if (static_cast<double>(k) == b) p += 1.0 - a;
      return p;
    }
  }
  return 0.0;
}

inline double prob_zero(const DistSpec& d) { return pmf(d, 0); }

inline std::int64_t sample(const DistSpec& d, RngState& rng) {
  const double a = d.first();
  const double b = d.second();
  switch (d.kind()) {
    case DistKind::Poisson: return sample_poisson(a, rng);
    case DistKind::Binomial: return sample_binomial(static_cast<std::int64_t>(a), b / a, rng);
    case DistKind::NB1: return sample_negative_binomial(a * b, b, rng);
    case DistKind::NB2: return sample_negative_binomial(a, b, rng);
    case DistKind::Geometric: return sample_geometric(a, rng);
    case DistKind::Bernoulli: return uniform01(rng) < a ? 1 : 0;
    case DistKind::Skellam: {
      const std::int64_t x1 = sample_poisson(a, rng);
      return x1 - sample_poisson(b, rng);
    }
    case DistKind::PointMass: return static_cast<std::int64_t>(a);
    case DistKind::TwoPoint: return uniform01(rng) < a ? 0 : static_cast<std::int64_t>(b);
  }
  return 0;
}

namespace detail {

/// Bound on pmf(k+1)/pmf(k) valid for every k' >= k, excluding the power factor.
inline double future_pmf_ratio_bound(const DistSpec& d, std::int64_t k, double current) {
  switch (d.kind()) {
    case DistKind::NB1:
    case DistKind::NB2:
    case DistKind::Geometric: {
      const double size = d.kind() == DistKind::NB1 ? d.first() * d.second()
                          : d.kind() == DistKind::NB2 ? d.first()
                                                      : 1.0;
      const double m = d.kind() == DistKind::Geometric ? d.first() : d.second();
      const double q = m / (size + m);
      // (k + size)/(k + 1) * q decreases towards q when size >= 1 and increases towards q otherwise.
      return std::max(current, q);
    }
    default:
      (void)k;
      // Poisson and Skellam ratios are non-increasing in k.
      return current;
  }
}

/// sum_{k >= 1} k^tau pmf(k) for laws with unbounded upper support.
inline double upper_power_sum(const DistSpec& d, double tau, double tol) {
  constexpr double kDivergence = 1e12;
  constexpr std::int64_t kMaxTerms = 50'000'000;
  double sum = 0.0;
  for (std::int64_t k = 1; k < kMaxTerms; ++k) {
    const double p = pmf(d, k);
    const double kd = static_cast<double>(k);
    const double term = std::pow(kd, tau) * p;
    sum += term;
    if (!(sum <= kDivergence)) fail(ErrorKind::Diverges, "power moment partial sum exceeds 1e12");
    const double p_next = pmf(d, k + 1);
    if (p > 0.0) {
      const double pmf_ratio = future_pmf_ratio_bound(d, k, p_next / p);
      const double r = pmf_ratio * std::pow((kd + 1.0) / kd, tau);
      if (r < 1.0) {
        const double tail = term * r / (1.0 - r);
        if (tail <= tol * sum) return sum;
      }
    } else if (p == 0.0 && p_next == 0.0 && kd > 10.0 * (std::abs(mean(d)) + variance(d) + 1.0)) {
      return sum;
    }
  }
  fail(ErrorKind::Diverges, "power moment did not converge within the term cap");
}

}  // namespace detail

/// E|X|^tau = sum_k |k|^tau pmf(k), with 0^tau = 0 for tau > 0; tau = 0 returns
/// the tau -> 0+ limit P(X != 0). Infinite sums stop once a geometric bound on
/// the remaining tail drops below tol times the accumulated sum.
inline double power_moment(const DistSpec& d, double tau, double tol = 1e-10) {
  if (!(tau >= 0.0)) fail(ErrorKind::InvalidSpec, "power_moment: tau must be >= 0");
  if (tau == 0.0) return 1.0 - prob_zero(d);
  const double a = d.first();
  const double b = d.second();
  switch (d.kind()) {
    case DistKind::Bernoulli: return a;
    case DistKind::PointMass: return a == 0.0 ? 0.0 : std::pow(std::abs(a), tau);
    case DistKind::TwoPoint: return b == 0.0 ? 0.0 : (1.0 - a) * std::pow(std::abs(b), tau);
    case DistKind::Binomial: {
      double s = 0.0;
      const auto n = static_cast<std::int64_t>(a);
      for (std::int64_t k = 1; k <= n; ++k) s += std::pow(static_cast<double>(k), tau) * pmf(d, k);
      return s;
    }
    case DistKind::Skellam: {
      const double up = detail::upper_power_sum(d, tau, tol);
      if (a == 0.0 && b == 0.0) return up;
      const double down = detail::upper_power_sum(DistSpec::skellam(b, a), tau, tol);
      return up + down;
    }
    default:
      return detail::upper_power_sum(d, tau, tol);
  }
}

}  // namespace rminar
