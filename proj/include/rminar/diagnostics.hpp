#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rminar/errors.hpp"
#include "rminar/estimation.hpp"
#include "rminar/model.hpp"
#include "rminar/numerics.hpp"
#include "rminar/theory.hpp"

namespace rminar {

/// Sample autocorrelations r_0..r_max_lag with the biased 1/n autocovariance.
inline Vector acf(std::span<const double> x, std::size_t max_lag) {
  const std::size_t n = x.size();
  if (n <= max_lag) fail(ErrorKind::TooShort, "acf: series length must exceed max_lag");
  long double mean = 0.0L;
  for (double v : x) mean += v;
  mean /= static_cast<long double>(n);
  std::vector<double> d(n);
  for (std::size_t t = 0; t < n; ++t) d[t] = static_cast<double>(x[t] - mean);
  auto cov = [&](std::size_t k) {
    long double s = 0.0L;
    for (std::size_t t = k; t < n; ++t) s += static_cast<long double>(d[t]) * d[t - k];
    return s;
  };
  const long double c0 = cov(0);
  if (!(c0 > 0.0L)) fail(ErrorKind::ZeroVariance, "acf: series is constant");
  Vector r(max_lag + 1);
  r[0] = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) r[k] = static_cast<double>(cov(k) / c0);
  return r;
}

inline Vector acf(std::span<const std::int64_t> x, std::size_t max_lag) {
  std::vector<double> d(x.begin(), x.end());
  return acf(d, max_lag);
}

/// Partial autocorrelations by the Durbin-Levinson recursion on the sample
/// ACF; element k is the lag-k value and element 0 is 1.
inline Vector pacf(std::span<const double> x, std::size_t max_lag) {
  const Vector r = acf(x, max_lag);
  Vector out(max_lag + 1, 0.0);
  out[0] = 1.0;
  if (max_lag == 0) return out;
  Vector phi(max_lag + 1, 0.0);
  Vector prev(max_lag + 1, 0.0);
  double v = 1.0;
  for (std::size_t k = 1; k <= max_lag; ++k) {
    double num = r[k];
    for (std::size_t j = 1; j < k; ++j) num -= prev[j] * r[k - j];
    const double a = num / v;
    phi[k] = a;
    for (std::size_t j = 1; j < k; ++j) phi[j] = prev[j] - a * prev[k - j];
    v *= 1.0 - a * a;
    out[k] = a;
    if (!(v > 0.0) && k < max_lag) fail(ErrorKind::NumericalBreakdown, "pacf: prediction variance vanished at lag " + std::to_string(k));
    prev = phi;
  }
  return out;
}

inline Vector pacf(std::span<const std::int64_t> x, std::size_t max_lag) {
  std::vector<double> d(x.begin(), x.end());
  return pacf(d, max_lag);
}

/// 1.96 / sqrt(n).
inline double white_noise_band(std::size_t n) { return 1.96 / std::sqrt(static_cast<double>(n)); }

/// (Y_t - mu_t) / sqrt(V_t) for t = p+1..n under the stage-2 estimates.
inline Vector pearson_residuals(std::span<const std::int64_t> values, const FitResult& fit) {
  const RegressorMatrices reg = build_regressors(values, fit.order);
  Vector out(reg.rows());
  for (std::size_t t = 0; t < reg.rows(); ++t) {
    const auto yr = reg.ycal.row(t);
    const double mu = fitted_mean(yr, fit.theta2, fit.model_class);
    const double v = fitted_variance(yr, reg.zcal.row(t), fit.theta2, fit.lambda2, fit.model_class);
    if (!(v > 0.0))
      fail(ErrorKind::NonpositiveVariance, "fitted conditional variance is not positive at t = " + std::to_string(t + fit.order + 1));
    out[t] = (reg.y[t] - mu) / std::sqrt(v);
  }
  return out;
}

struct InSampleMetrics {
  double mar = 0.0;
  double msr = 0.0;
  double mspr = 0.0;
  double generated_mean = kInf;
  std::optional<double> generated_variance;  ///< empty for the multiplicative class
};

/// MAR, MSR, MSPR over t = p+1..n and the unconditional moments implied by the
/// stage-2 estimates.
inline InSampleMetrics in_sample_metrics(std::span<const std::int64_t> values, const FitResult& fit) {
  const RegressorMatrices reg = build_regressors(values, fit.order);
  const Vector pr = pearson_residuals(values, fit);
  InSampleMetrics m;
  const auto n = static_cast<double>(reg.rows());
  for (std::size_t t = 0; t < reg.rows(); ++t) {
    const double e = reg.y[t] - fitted_mean(reg.ycal.row(t), fit.theta2, fit.model_class);
    m.mar += std::abs(e);
    m.msr += e * e;
    m.mspr += pr[t] * pr[t];
  }
  m.mar /= n;
  m.msr /= n;
  m.mspr /= n;
  const Vector la = is_additive(fit.model_class) ? fit.lambda2 : Vector{};
  const StationarityReport rep = moment_report(fit.theta2, la, fit.model_class);
  m.generated_mean = rep.uncond_mean;
  m.generated_variance = rep.uncond_variance;
  return m;
}

struct OrderRow {
  std::size_t order = 0;
  std::optional<FitResult> fit;
  std::optional<InSampleMetrics> metrics;
  std::optional<std::string> error;
};

/// One fit per p = 1..p_max; a failing order records its error and the
/// remaining orders continue.
inline std::vector<OrderRow> order_selection_report(std::span<const std::int64_t> values, std::size_t p_max,
                                                    const FitConfig& base) {
  if (p_max == 0 || p_max * 10 >= values.size())
    fail(ErrorKind::InvalidSpec, "order selection: p_max must satisfy 1 <= p_max < n/10");
  std::vector<OrderRow> rows;
  for (std::size_t p = 1; p <= p_max; ++p) {
    OrderRow row;
    row.order = p;
    FitConfig cfg = base;
    cfg.order = p;
    cfg.lambda_star.reset();
    cfg.theta_star.reset();
    try {
      row.fit = fit_model(values, cfg);
      row.metrics = in_sample_metrics(values, *row.fit);
    } catch (const Error& e) {
      row.error = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

struct ForecastEval {
  std::size_t n_c = 0;
  std::size_t forecasts = 0;
  double msfe = 0.0;
  double mafe = 0.0;
  double mspfe = 0.0;
};

/// Fits on the first n_c observations, then evaluates one-step forecasts for
/// t = n_c+1..n using realized lags.
inline ForecastEval forecast_eval(std::span<const std::int64_t> values, const FitConfig& cfg, std::size_t n_c) {
  const std::size_t n = values.size();
  const std::size_t p = cfg.order;
  if (!(n_c > 10 * p && n_c < n)) fail(ErrorKind::InvalidSpec, "forecast evaluation: n_c must lie in (10p, n)");
  const FitResult fit = fit_model(values.first(n_c), cfg);
  ForecastEval out;
  out.n_c = n_c;
  Vector yrow(p + 1);
  Vector zrow(p + 1);
  yrow[0] = zrow[0] = 1.0;
  for (std::size_t t = n_c; t < n; ++t) {
    for (std::size_t i = 1; i <= p; ++i) {
      const auto lag = static_cast<double>(values[t - i]);
      yrow[i] = lag;
      zrow[i] = lag * lag;
    }
    const double mu = fitted_mean(yrow, fit.theta2, fit.model_class);
    const double v = fitted_variance(yrow, zrow, fit.theta2, fit.lambda2, fit.model_class);
    if (!(v > 0.0)) fail(ErrorKind::NonpositiveVariance, "forecast variance is not positive at t = " + std::to_string(t + 1));
    const double e = static_cast<double>(values[t]) - mu;
    out.msfe += e * e;
    out.mafe += std::abs(e);
    out.mspfe += e * e / v;
  }
  out.forecasts = n - n_c;
  const auto m = static_cast<double>(out.forecasts);
  out.msfe /= m;
  out.mafe /= m;
  out.mspfe /= m;
  return out;
}

inline std::vector<ForecastEval> rolling_forecast_eval(std::span<const std::int64_t> values, const FitConfig& cfg,
                                                       std::span<const std::size_t> train_sizes) {
  std::vector<ForecastEval> out;
  out.reserve(train_sizes.size());
  for (std::size_t n_c : train_sizes) out.push_back(forecast_eval(values, cfg, n_c));
  return out;
}

struct DiagnosticsReport {
  Vector acf;
  Vector pacf;
  double conf_band = 0.0;
  Vector pearson_residuals;
  Vector pearson_acf;
  InSampleMetrics metrics;
};

inline DiagnosticsReport diagnose(std::span<const std::int64_t> values, const FitResult& fit, std::size_t max_lag) {
  DiagnosticsReport rep;
  rep.acf = acf(values, max_lag);
  rep.pacf = pacf(values, max_lag);
  rep.conf_band = white_noise_band(values.size());
  rep.pearson_residuals = pearson_residuals(values, fit);
  if (rep.pearson_residuals.size() > max_lag) {
    try {
      rep.pearson_acf = acf(rep.pearson_residuals, max_lag);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ZeroVariance) throw;
    }
  }
  rep.metrics = in_sample_metrics(values, fit);
  return rep;
}

}  // namespace rminar
