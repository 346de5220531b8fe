#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rminar/theory.hpp"

using namespace rminar;

namespace {

ModelSpec additive(std::vector<DistSpec> coef, DistSpec eps) {
  return {ModelClass::AdditiveN0, std::move(coef), eps, std::nullopt};
}

double sample_mean(const std::vector<std::int64_t>& v) {
  long double s = 0;
  for (auto x : v) s += x;
  return static_cast<double>(s / v.size());
}

double sample_variance(const std::vector<std::int64_t>& v) {
  const double m = sample_mean(v);
  long double s = 0;
  for (auto x : v) s += (x - m) * (x - m);
  return static_cast<double>(s / v.size());
}

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::NumericalBreakdown;
}

}  // namespace

TEST(Companion, KronMomentMatchesMonteCarlo) {
  const ModelSpec s{ModelClass::AdditiveZ, {DistSpec::skellam(0.5, 0.2), DistSpec::poisson(0.3)},
                    DistSpec::poisson(1), std::nullopt};
  RngState rng = make_rng(1);
  const int n = 200000;
  Matrix acc(4, 4);
  for (int i = 0; i < n; ++i) {
    const Matrix a = draw_companion(s, rng).a;
    const Matrix k = kronecker(a, a);
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t c = 0; c < 4; ++c) acc(r, c) += k(r, c) / n;
  }
  // E(Phi^2): Skellam(0.5, 0.2) gives 0.7 + 0.09, Poisson(0.3) gives 0.3 + 0.09.
  const Matrix e = companion_kron_moment(Vector{0.3, 0.3}, Vector{0.79, 0.39});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(acc(r, c), e(r, c), 0.01) << r << "," << c;
}

TEST(Moments, OrderOneClosedForm) {
  // mean = mu / (1 - phi); variance solves V = s2 + sp (V + m^2) + phi^2 V.
  const ModelSpec s = additive({DistSpec::poisson(0.3)}, DistSpec::poisson(2.0));
  const StationarityReport r = stationarity_report(s);
  const double m = 2.0 / 0.7;
  const double v = (2.0 + 0.3 * m * m) / (1.0 - 0.09 - 0.3);
  EXPECT_NEAR(m, 2.857142857, 1e-9);
  EXPECT_NEAR(v, 7.2934, 1e-4);
  EXPECT_NEAR(r.uncond_mean, m, 1e-12);
  ASSERT_TRUE(r.uncond_variance);
  EXPECT_NEAR(*r.uncond_variance, v, 1e-10);
  EXPECT_TRUE(r.mean_exists);
  EXPECT_TRUE(r.second_moment_exists);
  EXPECT_NEAR(*r.rho_m2, 0.39, 1e-12);
}

TEST(Moments, OrderTwoAgainstLongSimulation) {
  const ModelSpec s = additive({DistSpec::poisson(0.3), DistSpec::nb2(2.0, 0.2)}, DistSpec::geometric(1.5));
  const StationarityReport r = stationarity_report(s);
  ASSERT_TRUE(r.second_moment_exists);
  const Series y = simulate(s, 400000, 1000, 17);
  EXPECT_NEAR(sample_mean(y.values), r.uncond_mean, 0.02 * r.uncond_mean);
  EXPECT_NEAR(sample_variance(y.values), *r.uncond_variance, 0.05 * *r.uncond_variance);
}

TEST(Moments, MeanRecursionOnly) {
  const ModelSpec m{ModelClass::Multiplicative, {DistSpec::poisson(0.3)}, DistSpec::geometric(1.0),
                    DistSpec::poisson(1.0)};
  const StationarityReport r = stationarity_report(m);
  EXPECT_NEAR(r.uncond_mean, 2.0 / 0.7, 1e-12);
  EXPECT_FALSE(r.rho_m2);
  EXPECT_FALSE(r.uncond_variance);
  EXPECT_FALSE(r.notes.empty());
  const Series y = simulate(m, 400000, 1000, 4);
  EXPECT_NEAR(sample_mean(y.values), r.uncond_mean, 0.05 * r.uncond_mean);
}

TEST(Moments, InfiniteMeanReported) {
  const ModelSpec s = additive({DistSpec::poisson(0.5), DistSpec::poisson(0.2), DistSpec::poisson(0.3),
                                DistSpec::poisson(0.2)},
                               DistSpec::poisson(0.1));
  const StationarityReport r = stationarity_report(s);
  EXPECT_NEAR(r.coefficient_sum, 1.2, 1e-12);
  EXPECT_FALSE(r.mean_exists);
  EXPECT_GT(r.rho_mean, 1.0);
  EXPECT_TRUE(std::isinf(r.uncond_mean));
  ASSERT_TRUE(r.uncond_variance);
  EXPECT_TRUE(std::isinf(*r.uncond_variance));
}

TEST(Moments, FiniteMeanInfiniteVariance) {
  // phi = 0.5 with variance 0.8: rho_m2 = 0.25 + 0.8 > 1.
  const Vector theta{1.0, 0.5};
  const Vector lambda{1.0, 0.8};
  const StationarityReport r = moment_report(theta, lambda, ModelClass::AdditiveN0);
  EXPECT_TRUE(r.mean_exists);
  EXPECT_FALSE(r.second_moment_exists);
  EXPECT_NEAR(r.uncond_mean, 2.0, 1e-12);
  EXPECT_TRUE(std::isinf(*r.uncond_variance));
}

TEST(Moments, FourthMomentFlag) {
  // E(Phi^4) for Poisson(0.5) is 0.0625 + 0.75 + 1.75 + 0.5 = 3.0625.
  EXPECT_FALSE(*stationarity_report(additive({DistSpec::poisson(0.5)}, DistSpec::poisson(1))).fourth_moments_below_one);
  EXPECT_TRUE(*stationarity_report(additive({DistSpec::bernoulli(0.3)}, DistSpec::poisson(1))).fourth_moments_below_one);
}

TEST(Tail, TwoPointHasUnitIndex) {
  const TailReport r = tail_index(additive({DistSpec::two_point(0.5, 2)}, DistSpec::poisson(1)), TailMode::Raw);
  ASSERT_TRUE(r.tau1);
  EXPECT_NEAR(*r.tau1, 1.0, 1e-10);
}

TEST(Tail, BernoulliNeverReachesOne) {
  const TailReport r = tail_index(additive({DistSpec::bernoulli(0.5)}, DistSpec::poisson(1)), TailMode::Raw);
  EXPECT_FALSE(r.tau1);
}

TEST(Tail, PoissonRootSolvesMomentEquation) {
  for (double m : {0.4, 0.9, 1.2}) {
    const TailReport r = tail_index(additive({DistSpec::poisson(m)}, DistSpec::poisson(0.1)), TailMode::Raw);
    ASSERT_TRUE(r.tau1) << m;
    // independent sum with the pmf recurrence
    double p = std::exp(-m);
    double sum = 0.0;
    for (int k = 1; k < 400; ++k) {
      p *= m / k;
      sum += std::pow(k, *r.tau1) * p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-8) << m;
    if (m < 1.0) EXPECT_GT(*r.tau1, 1.0);
    else EXPECT_LT(*r.tau1, 1.0);
  }
}

TEST(Tail, ProductModeIncludesInnovation) {
  // E|eps Phi|^tau with Phi = TwoPoint(0.5, 2) and eps = 2 a.s.: 0.5 * 4^tau = 1 at tau = 1/2.
  const ModelSpec s{ModelClass::Multiplicative, {DistSpec::two_point(0.5, 2)}, DistSpec::point_mass(1),
                    DistSpec::poisson(1)};
  const TailReport raw = tail_index(s, TailMode::ProductWithInnovation);
  ASSERT_TRUE(raw.tau1);
  EXPECT_NEAR(*raw.tau1, 1.0, 1e-10);
  const ModelSpec z{ModelClass::AdditiveZ, {DistSpec::two_point(0.5, -2)}, DistSpec::point_mass(2), std::nullopt};
  const TailReport prod = tail_index(z, TailMode::ProductWithInnovation);
  ASSERT_TRUE(prod.tau1);
  EXPECT_NEAR(*prod.tau1, 0.5, 1e-10);
}

TEST(Tail, Restrictions) {
  EXPECT_EQ(kind_of([] { tail_index(additive({DistSpec::poisson(1), DistSpec::poisson(1)}, DistSpec::poisson(1)),
                                    TailMode::Raw); }),
            ErrorKind::NotSupported);
  const ModelSpec z{ModelClass::AdditiveZ, {DistSpec::skellam(1, 1)}, DistSpec::poisson(1), std::nullopt};
  EXPECT_EQ(kind_of([&] { tail_index(z, TailMode::Raw); }), ErrorKind::NotSupported);
  EXPECT_TRUE(tail_index(z, TailMode::Absolute).tau1);
}

TEST(Lyapunov, ZeroMassOrderOneIsMinusInfinity) {
  const LyapunovReport r = lyapunov_mc(additive({DistSpec::poisson(1.5)}, DistSpec::poisson(1)), 100, 10, 1);
  EXPECT_TRUE(r.minus_infinity);
  EXPECT_EQ(r.gamma, -kInf);
}

TEST(Lyapunov, ConstantScalarIsLogOfValue) {
  const LyapunovReport r = lyapunov_mc(additive({DistSpec::point_mass(2)}, DistSpec::poisson(1)), 200, 5, 1);
  EXPECT_NEAR(r.gamma, std::log(2.0), 1e-12);
  EXPECT_NEAR(r.std_error, 0.0, 1e-12);
}

TEST(Lyapunov, DeterministicCompanionIsLogSpectralRadius) {
  // Fibonacci companion: spectral radius is the golden ratio.
  const ModelSpec s = additive({DistSpec::point_mass(1), DistSpec::point_mass(1)}, DistSpec::poisson(1));
  const LyapunovReport r = lyapunov_mc(s, 4000, 3, 1);
  EXPECT_NEAR(r.gamma, std::log(std::numbers::phi), 2e-3);
}

TEST(Lyapunov, ZeroProductDetected) {
  const ModelSpec s = additive({DistSpec::poisson(0.3), DistSpec::poisson(0.2)}, DistSpec::poisson(1));
  EXPECT_TRUE(lyapunov_mc(s, 200, 20, 3).minus_infinity);
}

TEST(Lyapunov, BoundedByLogOfMeanRadius) {
  // gamma <= log rho(E A) for nonnegative companions without zero products in finite horizon.
  const ModelSpec s = additive({DistSpec::two_point(0.0, 1), DistSpec::nb2(50.0, 1.0)}, DistSpec::poisson(1));
  const LyapunovReport r = lyapunov_mc(s, 500, 50, 2);
  if (!r.minus_infinity) {
    const Vector th = true_theta(s);
    EXPECT_LE(r.gamma, std::log(spectral_radius(companion(std::span<const double>(th).subspan(1)))) + 3 * r.std_error);
  }
}

TEST(Hill, ParetoIndexRecovered) {
  RngState rng = make_rng(11);
  std::vector<double> x(200000);
  for (auto& v : x) v = std::pow(uniform01(rng), -1.0 / 1.5);
  EXPECT_NEAR(hill_tail_estimate(x, 0.01), 1.5, 0.15);
}

TEST(Hill, InputChecks) {
  std::vector<double> few(999, 1.0);
  EXPECT_EQ(kind_of([&] { hill_tail_estimate(few, 0.01); }), ErrorKind::TooShort);
  std::vector<double> flat(5000, 3.0);
  EXPECT_EQ(kind_of([&] { hill_tail_estimate(flat, 0.01); }), ErrorKind::DegenerateTail);
  std::vector<double> zeros(5000, 0.0);
  zeros[0] = 5;
  EXPECT_EQ(kind_of([&] { hill_tail_estimate(zeros, 0.01); }), ErrorKind::DegenerateTail);
}
