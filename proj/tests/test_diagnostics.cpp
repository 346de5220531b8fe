#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "rminar/diagnostics.hpp"

using namespace rminar;

namespace {

ModelSpec poisson_ar2() {
  return {ModelClass::AdditiveN0, {DistSpec::poisson(0.3), DistSpec::poisson(0.2)}, DistSpec::poisson(2.0),
          std::nullopt};
}

FitConfig additive_cfg(std::size_t p) {
  FitConfig c;
  c.order = p;
  return c;
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

// r_k = sum (x_t - m)(x_{t-k} - m) / sum (x_t - m)^2.
double acf_oracle(const std::vector<double>& x, std::size_t k) {
  double m = 0;
  for (double v : x) m += v;
  m /= x.size();
  double num = 0;
  double den = 0;
  for (std::size_t t = 0; t < x.size(); ++t) {
    den += (x[t] - m) * (x[t] - m);
    if (t >= k) num += (x[t] - m) * (x[t - k] - m);
  }
  return num / den;
}

// Last coefficient of the order-k Yule-Walker solution.
double pacf_oracle(const std::vector<double>& x, std::size_t k) {
  Eigen::MatrixXd r(k, k);
  Eigen::VectorXd rhs(k);
  for (std::size_t i = 0; i < k; ++i) {
    rhs(i) = acf_oracle(x, i + 1);
    for (std::size_t j = 0; j < k; ++j) r(i, j) = acf_oracle(x, i > j ? i - j : j - i);
  }
  return r.fullPivLu().solve(rhs)(k - 1);
}

}  // namespace

TEST(Acf, MatchesDirectFormula) {
  const Series s = simulate(poisson_ar2(), 500, 1);
  const std::vector<double> x(s.values.begin(), s.values.end());
  const Vector r = acf(s.values, 15);
  EXPECT_EQ(r[0], 1.0);
  for (std::size_t k = 1; k <= 15; ++k) EXPECT_NEAR(r[k], acf_oracle(x, k), 1e-12) << k;
}

TEST(Acf, AlternatingSeries) {
  std::vector<double> x(100);
  for (std::size_t t = 0; t < x.size(); ++t) x[t] = t % 2 ? 1.0 : -1.0;
  const Vector r = acf(x, 2);
  EXPECT_NEAR(r[1], -0.99, 1e-12);
  EXPECT_NEAR(r[2], 0.98, 1e-12);
}

TEST(Acf, Errors) {
  const std::vector<double> flat(20, 4.0);
  EXPECT_EQ(kind_of([&] { acf(flat, 3); }), ErrorKind::ZeroVariance);
  const std::vector<double> short_x{1, 2, 3};
  EXPECT_EQ(kind_of([&] { acf(short_x, 3); }), ErrorKind::TooShort);
}

TEST(Pacf, MatchesYuleWalkerSolutions) {
  const Series s = simulate(poisson_ar2(), 800, 2);
  const std::vector<double> x(s.values.begin(), s.values.end());
  const Vector pc = pacf(s.values, 10);
  EXPECT_EQ(pc[0], 1.0);
  EXPECT_NEAR(pc[1], acf_oracle(x, 1), 1e-12);
  for (std::size_t k = 2; k <= 10; ++k) EXPECT_NEAR(pc[k], pacf_oracle(x, k), 1e-10) << k;
}

TEST(Pacf, OrderOneCutoff) {
  const ModelSpec s{ModelClass::AdditiveN0, {DistSpec::binomial(1, 0.6)}, DistSpec::poisson(1.0), std::nullopt};
  const Series y = simulate(s, 20000, 3);
  const Vector pc = pacf(y.values, 5);
  EXPECT_NEAR(pc[1], 0.6, 0.03);
  for (std::size_t k = 2; k <= 5; ++k) EXPECT_LT(std::abs(pc[k]), 4 * white_noise_band(20000)) << k;
}

TEST(Band, WhiteNoise) { EXPECT_DOUBLE_EQ(white_noise_band(400), 1.96 / 20.0); }

TEST(PearsonResiduals, DirectComputation) {
  const Series s = simulate(poisson_ar2(), 300, 4);
  const FitResult f = fit_model(s, additive_cfg(2));
  const Vector pr = pearson_residuals(s.values, f);
  ASSERT_EQ(pr.size(), 298u);
  for (std::size_t i = 0; i < pr.size(); ++i) {
    const std::size_t t = i + 2;
    const double y1 = static_cast<double>(s.values[t - 1]);
    const double y2 = static_cast<double>(s.values[t - 2]);
    const double mu = f.theta2[0] + f.theta2[1] * y1 + f.theta2[2] * y2;
    const double v = f.lambda2[0] + f.lambda2[1] * y1 * y1 + f.lambda2[2] * y2 * y2;
    EXPECT_NEAR(pr[i], (static_cast<double>(s.values[t]) - mu) / std::sqrt(v), 1e-12);
  }
}

TEST(PearsonResiduals, ZeroVarianceRejected) {
  FitResult f;
  f.model_class = ModelClass::AdditiveN0;
  f.order = 1;
  f.theta2 = {1.0, 0.5};
  f.lambda2 = {0.0, 0.0};
  const std::vector<std::int64_t> y{1, 2, 3, 4};
  EXPECT_EQ(kind_of([&] { pearson_residuals(y, f); }), ErrorKind::NonpositiveVariance);
}

TEST(Metrics, DirectComputation) {
  const Series s = simulate(poisson_ar2(), 400, 5);
  const FitResult f = fit_model(s, additive_cfg(2));
  const InSampleMetrics m = in_sample_metrics(s.values, f);
  const Vector pr = pearson_residuals(s.values, f);
  double mar = 0, msr = 0, mspr = 0;
  for (std::size_t i = 0; i < f.residuals_e.size(); ++i) {
    mar += std::abs(f.residuals_e[i]);
    msr += f.residuals_e[i] * f.residuals_e[i];
    mspr += pr[i] * pr[i];
  }
  const double n = static_cast<double>(pr.size());
  EXPECT_NEAR(m.mar, mar / n, 1e-12);
  EXPECT_NEAR(m.msr, msr / n, 1e-12);
  EXPECT_NEAR(m.mspr, mspr / n, 1e-12);
  EXPECT_NEAR(m.generated_mean, f.theta2[0] / (1 - f.theta2[1] - f.theta2[2]), 1e-10);
  EXPECT_TRUE(m.generated_variance);
}

TEST(OrderSelection, OneRowPerOrderAndErrorsRecorded) {
  const Series s = simulate(poisson_ar2(), 600, 6);
  const auto rows = order_selection_report(s.values, 4, additive_cfg(1));
  ASSERT_EQ(rows.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(rows[i].order, i + 1);
    ASSERT_TRUE(rows[i].fit);
    EXPECT_EQ(rows[i].fit->order, i + 1);
    EXPECT_TRUE(rows[i].metrics);
  }
  const std::vector<std::int64_t> flat(60, 3);
  const auto bad = order_selection_report(flat, 2, additive_cfg(1));
  ASSERT_EQ(bad.size(), 2u);
  for (const auto& r : bad) {
    EXPECT_FALSE(r.fit);
    ASSERT_TRUE(r.error);
    EXPECT_NE(r.error->find("SingularMatrix"), std::string::npos);
  }
  EXPECT_EQ(kind_of([&] { order_selection_report(s.values, 60, additive_cfg(1)); }), ErrorKind::InvalidSpec);
}

TEST(Forecast, DirectComputation) {
  const Series s = simulate(poisson_ar2(), 500, 7);
  const ForecastEval e = forecast_eval(s.values, additive_cfg(2), 300);
  const FitResult f = fit_model(std::span<const std::int64_t>(s.values).first(300), additive_cfg(2));
  double msfe = 0, mafe = 0, mspfe = 0;
  for (std::size_t t = 300; t < 500; ++t) {
    const double y1 = static_cast<double>(s.values[t - 1]);
    const double y2 = static_cast<double>(s.values[t - 2]);
    const double mu = f.theta2[0] + f.theta2[1] * y1 + f.theta2[2] * y2;
    const double v = f.lambda2[0] + f.lambda2[1] * y1 * y1 + f.lambda2[2] * y2 * y2;
    const double err = static_cast<double>(s.values[t]) - mu;
    msfe += err * err;
    mafe += std::abs(err);
    mspfe += err * err / v;
  }
  EXPECT_EQ(e.forecasts, 200u);
  EXPECT_NEAR(e.msfe, msfe / 200, 1e-12);
  EXPECT_NEAR(e.mafe, mafe / 200, 1e-12);
  EXPECT_NEAR(e.mspfe, mspfe / 200, 1e-12);
}

TEST(Forecast, TrainingSizeBounds) {
  const Series s = simulate(poisson_ar2(), 100, 8);
  EXPECT_EQ(kind_of([&] { forecast_eval(s.values, additive_cfg(2), 20); }), ErrorKind::InvalidSpec);
  EXPECT_EQ(kind_of([&] { forecast_eval(s.values, additive_cfg(2), 100); }), ErrorKind::InvalidSpec);
  const std::vector<std::size_t> sizes{50, 80};
  const auto rolled = rolling_forecast_eval(s.values, additive_cfg(2), sizes);
  ASSERT_EQ(rolled.size(), 2u);
  EXPECT_EQ(rolled[1].forecasts, 20u);
}

TEST(Diagnose, BundlesAllPieces) {
  const Series s = simulate(poisson_ar2(), 400, 9);
  const FitResult f = fit_model(s, additive_cfg(2));
  const DiagnosticsReport r = diagnose(s.values, f, 20);
  EXPECT_EQ(r.acf.size(), 21u);
  EXPECT_EQ(r.pacf.size(), 21u);
  EXPECT_EQ(r.pearson_acf.size(), 21u);
  EXPECT_EQ(r.pearson_residuals.size(), 398u);
  EXPECT_DOUBLE_EQ(r.conf_band, white_noise_band(400));
  // Pearson residuals of a correctly specified fit are close to white noise.
  for (std::size_t k = 1; k <= 20; ++k) EXPECT_LT(std::abs(r.pearson_acf[k]), 0.25);
}
