#pragma once

// Weighted least squares estimation of the mean parameters theta and the
// variance parameters Lambda.
//
// Additive classes:
//   E(Y_t | past) = Ycal_{t-1}' theta,       Ycal = (1, Y_{t-1}, ..., Y_{t-p})
//   V(Y_t | past) = Zcal_{t-1}' Lambda,      Zcal = (1, Y_{t-1}^2, ..., Y_{t-p}^2)
// Multiplicative class:
//   E(Y_t | past) = 1 + Ycal' theta,         theta  = (omega, phi_1..p)
//   V(Y_t | past) = (s2 + 1) Zcal' Delta + s2 mu_t^2,
//                                            Lambda = (s2, Delta), Delta = (sigma2_omega, sigma2_phi_1..p)

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rminar/errors.hpp"
#include "rminar/model.hpp"
#include "rminar/numerics.hpp"

namespace rminar {

struct RegressorMatrices {
  Matrix ycal;  ///< rows (1, Y_{t-1}, ..., Y_{t-p})
  Matrix zcal;  ///< rows (1, Y_{t-1}^2, ..., Y_{t-p}^2)
  Vector y;     ///< Y_t
  std::size_t order = 0;

  std::size_t rows() const noexcept { return y.size(); }
};

/// Lag matrices for t = p+1..n (1-based); n - p rows.
inline RegressorMatrices build_regressors(std::span<const std::int64_t> values, std::size_t p) {
  if (p == 0) fail(ErrorKind::InvalidSpec, "build_regressors: order must be >= 1");
  if (values.size() < p + 1) fail(ErrorKind::TooShort, "series must have more than p observations");
  const std::size_t n = values.size() - p;
  RegressorMatrices reg{Matrix(n, p + 1), Matrix(n, p + 1), Vector(n), p};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t t = r + p;
    reg.y[r] = static_cast<double>(values[t]);
    reg.ycal(r, 0) = 1.0;
    reg.zcal(r, 0) = 1.0;
    for (std::size_t i = 1; i <= p; ++i) {
      const auto lag = static_cast<double>(values[t - i]);
      reg.ycal(r, i) = lag;
      reg.zcal(r, i) = lag * lag;
    }
  }
  return reg;
}

inline RegressorMatrices build_regressors(const Series& s, std::size_t p) { return build_regressors(s.values, p); }

// ---------------------------------------------------------------------------
// Variance links

enum class LinkKind { Free, Poisson, Geometric, Proportional };

struct VarianceLink {
  LinkKind kind = LinkKind::Free;
  double c = 1.0;  ///< proportionality constant, LinkKind::Proportional only

  static VarianceLink free() { return {}; }
  static VarianceLink poisson() { return {LinkKind::Poisson, 1.0}; }
  static VarianceLink geometric() { return {LinkKind::Geometric, 1.0}; }
  static VarianceLink proportional(double c) {
    if (!(c > 0.0) || !std::isfinite(c)) fail(ErrorKind::InvalidSpec, "proportional variance link needs c > 0");
    return {LinkKind::Proportional, c};
  }

  double operator()(double m) const {
    switch (kind) {
      case LinkKind::Poisson: return m;
      case LinkKind::Geometric: return m * (1.0 + m);
      case LinkKind::Proportional: return c * m;
      case LinkKind::Free: break;
    }
    fail(ErrorKind::InvalidSpec, "free variance link has no mean-to-variance map");
  }

  double derivative(double m) const {
    switch (kind) {
      case LinkKind::Poisson: return 1.0;
      case LinkKind::Geometric: return 1.0 + 2.0 * m;
      case LinkKind::Proportional: return c;
      case LinkKind::Free: break;
    }
    fail(ErrorKind::InvalidSpec, "free variance link has no mean-to-variance map");
  }
};

inline std::string to_string(const VarianceLink& link) {
  switch (link.kind) {
    case LinkKind::Free: return "free";
    case LinkKind::Poisson: return "poisson";
    case LinkKind::Geometric: return "geometric";
    case LinkKind::Proportional: {
      std::string s = "proportional:";
      s += std::to_string(link.c);
      return s;
    }
  }
  return "free";
}

/// Parses "free", "poisson", "geometric" or "proportional:<c>".
inline VarianceLink parse_variance_link(std::string_view text) {
  if (text == "free") return VarianceLink::free();
  if (text == "poisson") return VarianceLink::poisson();
  if (text == "geometric") return VarianceLink::geometric();
  constexpr std::string_view prefix = "proportional:";
  if (text.substr(0, prefix.size()) == prefix) {
    const std::string num(text.substr(prefix.size()));
    std::size_t used = 0;
    double c = 0.0;
    try {
      c = std::stod(num, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != num.size()) fail(ErrorKind::InvalidSpec, "variance link: bad constant in '" + std::string(text) + "'");
    return VarianceLink::proportional(c);
  }
  fail(ErrorKind::InvalidSpec, "unknown variance link '" + std::string(text) + "'");
}

// ---------------------------------------------------------------------------
// Configuration and results

struct FitConfig {
  ModelClass model_class = ModelClass::AdditiveN0;
  std::size_t order = 1;
  VarianceLink variance_link;
  std::optional<Vector> lambda_star;  ///< default all ones
  std::optional<Vector> theta_star;   ///< multiplicative class only; default all ones
  double cascade_tol = 1e-6;
  std::size_t cascade_max_iters = 10;
  double weight_floor = 1e-12;
};

/// Relative normal-equation residual of one returned stage.
struct StageCheck {
  std::string stage;
  double residual = 0.0;
};

struct FitResult {
  ModelClass model_class = ModelClass::AdditiveN0;
  std::size_t order = 0;
  std::size_t n_effective = 0;
  VarianceLink variance_link;

  Vector theta1, lambda1, theta2, lambda2;

  /// Innovation variance estimate of the multiplicative triplet, its
  /// asymptotic variance Gamma and ASE.
  std::optional<double> sigma_eps2;
  std::optional<double> sigma_eps2_gamma;
  std::optional<double> sigma_eps2_ase;
  bool sigma_eps2_clamped = false;

  Matrix sigma_hat, omega_hat;
  Vector ase_theta, ase_lambda;

  Vector residuals_e;  ///< Y_t - mu_t(theta2)
  Vector residuals_u;  ///< e_t^2 - V_t(theta2, lambda2)

  std::size_t cascade_iterations = 0;
  bool converged = false;
  std::vector<bool> active_nonneg_constraints;  ///< lambda2_j held at zero
  std::vector<StageCheck> orthogonality;
  std::vector<std::string> notes;

  double max_orthogonality_residual() const {
    double m = 0.0;
    for (const auto& s : orthogonality) m = std::max(m, s.residual);
    return m;
  }
};

// ---------------------------------------------------------------------------
// Conditional moments under fitted parameters

/// mu_t for regressor row r.
inline double fitted_mean(std::span<const double> ycal_row, std::span<const double> theta, ModelClass cls) {
  const double m = dot(ycal_row, theta);
  return cls == ModelClass::Multiplicative ? 1.0 + m : m;
}

/// V_t for regressor rows (ycal, zcal).
inline double fitted_variance(std::span<const double> ycal_row, std::span<const double> zcal_row,
                              std::span<const double> theta, std::span<const double> lambda, ModelClass cls) {
  if (is_additive(cls)) return dot(zcal_row, lambda);
  const double s2 = lambda[0];
  const double mu = fitted_mean(ycal_row, theta, cls);
  return (s2 + 1.0) * dot(zcal_row, lambda.subspan(1)) + s2 * mu * mu;
}

// ---------------------------------------------------------------------------
// Stage kernels

namespace detail {

/// max(w, floor); NaN maps to floor.
inline double floored(double w, double floor) { return w > floor ? w : floor; }

/// max_j |sum_t x_tj r_t / w_t| relative to max_j sum_t |x_tj| (|target_t| + |fit_t|) / w_t.
inline double orthogonality_residual(const Matrix& x, std::span<const double> target, std::span<const double> fit,
                                     std::span<const double> w, const std::vector<bool>* skip = nullptr) {
  const std::size_t k = x.cols();
  double worst = 0.0;
  for (std::size_t j = 0; j < k; ++j) {
    if (skip && (*skip)[j]) continue;
    long double num = 0.0L;
    long double den = 0.0L;
    for (std::size_t t = 0; t < x.rows(); ++t) {
      const double xj = x(t, j);
      num += static_cast<long double>(xj) * (target[t] - fit[t]) / w[t];
      den += std::abs(static_cast<long double>(xj)) * (std::abs(target[t]) + std::abs(fit[t])) / w[t];
    }
    if (den > 0.0L) worst = std::max(worst, static_cast<double>(std::abs(num) / den));
  }
  return worst;
}

struct WlsOutcome {
  Vector beta;
  double orthogonality = 0.0;
};

/// argmin sum_t (target_t - x_t' beta)^2 / w_t.
inline WlsOutcome weighted_ls(const Matrix& x, std::span<const double> target, std::span<const double> w) {
  const std::size_t k = x.cols();
  Matrix g(k, k);
  Vector c(k, 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto row = x.row(t);
    const double inv = 1.0 / w[t];
    for (std::size_t i = 0; i < k; ++i) {
      c[i] += row[i] * target[t] * inv;
      for (std::size_t j = i; j < k; ++j) g(i, j) += row[i] * row[j] * inv;
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  WlsOutcome out;
  out.beta = solve(g, c);
  const Vector fit = x * out.beta;
  out.orthogonality = orthogonality_residual(x, target, fit, w);
  return out;
}

struct NnlsOutcome {
  Vector beta;
  std::vector<bool> at_bound;
  double orthogonality = 0.0;
};

/// argmin sum_t (target_t - x_t' beta)^2 / w_t over beta >= 0.
inline NnlsOutcome weighted_nnls(const Matrix& x, std::span<const double> target, std::span<const double> w) {
  const std::size_t k = x.cols();
  Matrix g(k, k);
  Vector c(k, 0.0);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto row = x.row(t);
    const double inv = 1.0 / w[t];
    for (std::size_t i = 0; i < k; ++i) {
      c[i] += row[i] * target[t] * inv;
      for (std::size_t j = i; j < k; ++j) g(i, j) += row[i] * row[j] * inv;
    }
  }
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < i; ++j) g(i, j) = g(j, i);
  const NnlsResult res = nnls_gram(g, c);
  NnlsOutcome out{res.x, res.at_bound, 0.0};
  const Vector fit = x * out.beta;
  out.orthogonality = orthogonality_residual(x, target, fit, w, &out.at_bound);
  return out;
}

inline double relative_change(std::span<const double> prev, std::span<const double> next) {
  double m = 0.0;
  for (std::size_t i = 0; i < prev.size(); ++i) m = std::max(m, std::abs(next[i] - prev[i]) / (1.0 + std::abs(prev[i])));
  return m;
}

inline Vector resolve_star(const std::optional<Vector>& given, std::size_t len, const char* name) {
  if (!given) return Vector(len, 1.0);
  if (given->size() != len)
    fail(ErrorKind::InvalidSpec, std::string(name) + " must have length " + std::to_string(len));
  for (double v : *given)
    if (!(v > 0.0) || !std::isfinite(v)) fail(ErrorKind::InvalidSpec, std::string(name) + " must be strictly positive");
  return *given;
}

inline Vector linked_variances(const VarianceLink& link, std::span<const double> theta) {
  Vector out(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) out[i] = std::max(0.0, link(theta[i]));
  return out;
}

inline Vector responses(const RegressorMatrices& reg, ModelClass cls) {
  Vector y = reg.y;
  if (cls == ModelClass::Multiplicative)
    for (double& v : y) v -= 1.0;
  return y;
}

}  // namespace detail

/// Closed-form weighted stage for theta: solves (sum Ycal Ycal'/w) theta = sum Ycal y / w.
inline Vector wls_theta_stage(const RegressorMatrices& reg, std::span<const double> y, std::span<const double> w,
                              double weight_floor = 1e-12) {
  if (y.size() != reg.rows() || w.size() != reg.rows()) fail(ErrorKind::InvalidSpec, "wls_theta_stage: length mismatch");
  Vector wf(w.begin(), w.end());
  for (double& v : wf) v = detail::floored(v, weight_floor);
  return detail::weighted_ls(reg.ycal, y, wf).beta;
}

struct LambdaStage {
  Vector lambda;
  std::vector<bool> at_bound;
  double orthogonality = 0.0;
};

/// Nonnegative weighted fit of squared residuals (y - Ycal' theta)^2 on Zcal
/// with weights 1 / w2_t.
inline LambdaStage wls_lambda_stage(const RegressorMatrices& reg, std::span<const double> theta,
                                    std::span<const double> w2, double weight_floor = 1e-12) {
  if (w2.size() != reg.rows()) fail(ErrorKind::InvalidSpec, "wls_lambda_stage: length mismatch");
  Vector target(reg.rows());
  Vector wf(reg.rows());
  for (std::size_t t = 0; t < reg.rows(); ++t) {
    const double e = reg.y[t] - dot(reg.ycal.row(t), theta);
    target[t] = e * e;
    wf[t] = detail::floored(w2[t], weight_floor * weight_floor);
  }
  auto out = detail::weighted_nnls(reg.zcal, target, wf);
  return {std::move(out.beta), std::move(out.at_bound), out.orthogonality};
}

// ---------------------------------------------------------------------------
// Asymptotic covariance

struct CovarianceEstimate {
  Matrix sigma_hat;
  Matrix omega_hat;
  Vector ase_theta;
  Vector ase_lambda;
};

namespace detail {

inline Matrix symmetrize(const Matrix& m) {
  Matrix s = m;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) s(i, j) = 0.5 * (m(i, j) + m(j, i));
  return s;
}

inline Vector ase_from(const Matrix& cov, std::size_t n) {
  Vector out(cov.rows());
  for (std::size_t i = 0; i < cov.rows(); ++i) out[i] = std::sqrt(std::max(0.0, cov(i, i)) / static_cast<double>(n));
  return out;
}

/// C^{-1} D C^{-1} with C = mean(g g' / v^2), D = mean(u^2 g g' / v^4).
inline Matrix sandwich(const Matrix& grads, std::span<const double> v, std::span<const double> u) {
  const std::size_t k = grads.cols();
  const std::size_t n = grads.rows();
  Matrix c(k, k);
  Matrix d(k, k);
  for (std::size_t t = 0; t < n; ++t) {
    const auto g = grads.row(t);
    const double v2 = v[t] * v[t];
    const double wc = 1.0 / v2;
    const double wd = u[t] * u[t] / (v2 * v2);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        c(i, j) += g[i] * g[j] * wc;
        d(i, j) += g[i] * g[j] * wd;
      }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& x : c.data()) x *= inv_n;
  for (double& x : d.data()) x *= inv_n;
  const Matrix ci = inverse(c);
  return symmetrize(ci * d * ci);
}

inline Matrix inverse_mean_outer(const Matrix& x, std::span<const double> v) {
  const std::size_t k = x.cols();
  Matrix a(k, k);
  for (std::size_t t = 0; t < x.rows(); ++t) {
    const auto r = x.row(t);
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) a(i, j) += r[i] * r[j] / v[t];
  }
  for (double& e : a.data()) e /= static_cast<double>(x.rows());
  return symmetrize(inverse(a));
}

}  // namespace detail

/// Plug-in Sigma = A^{-1}, A = mean(Ycal Ycal' / Zcal'Lambda), and
/// Omega = C^{-1} D C^{-1}, C = mean(Zcal Zcal' / (Zcal'Lambda)^2),
/// D = mean(u^2 Zcal Zcal' / (Zcal'Lambda)^4).
inline CovarianceEstimate asymptotic_covariance_additive(const RegressorMatrices& reg, std::span<const double> theta,
                                                         std::span<const double> lambda, double weight_floor = 1e-12) {
  const std::size_t n = reg.rows();
  Vector v(n);
  Vector u(n);
  for (std::size_t t = 0; t < n; ++t) {
    v[t] = detail::floored(dot(reg.zcal.row(t), lambda), weight_floor);
    const double e = reg.y[t] - dot(reg.ycal.row(t), theta);
    u[t] = e * e - dot(reg.zcal.row(t), lambda);
  }
  CovarianceEstimate out;
  out.sigma_hat = detail::inverse_mean_outer(reg.ycal, v);
  out.omega_hat = detail::sandwich(reg.zcal, v, u);
  out.ase_theta = detail::ase_from(out.sigma_hat, n);
  out.ase_lambda = detail::ase_from(out.omega_hat, n);
  return out;
}

/// Gradient of V_t with respect to Lambda = (s2, Delta):
/// dV/ds2 = Zcal'Delta + mu^2, dV/dDelta_j = (s2 + 1) Zcal_j.
inline Vector multiplicative_variance_gradient(std::span<const double> ycal_row, std::span<const double> zcal_row,
                                               std::span<const double> theta, std::span<const double> lambda) {
  const double mu = fitted_mean(ycal_row, theta, ModelClass::Multiplicative);
  Vector g(lambda.size());
  g[0] = dot(zcal_row, lambda.subspan(1)) + mu * mu;
  for (std::size_t j = 0; j < zcal_row.size(); ++j) g[j + 1] = (lambda[0] + 1.0) * zcal_row[j];
  return g;
}

/// Plug-in Sigma = A^{-1}, A = mean(Ycal Ycal' / V_t), and the sandwich
/// Omega built from the analytic gradient of V_t.
inline CovarianceEstimate asymptotic_covariance_multiplicative(const RegressorMatrices& reg,
                                                               std::span<const double> theta,
                                                               std::span<const double> lambda,
                                                               double weight_floor = 1e-12) {
  const std::size_t n = reg.rows();
  const std::size_t k = lambda.size();
  Vector v(n);
  Vector u(n);
  Matrix grads(n, k);
  for (std::size_t t = 0; t < n; ++t) {
    const auto yr = reg.ycal.row(t);
    const auto zr = reg.zcal.row(t);
    const double vt = fitted_variance(yr, zr, theta, lambda, ModelClass::Multiplicative);
    v[t] = detail::floored(vt, weight_floor);
    const double e = reg.y[t] - fitted_mean(yr, theta, ModelClass::Multiplicative);
    u[t] = e * e - vt;
    const Vector g = multiplicative_variance_gradient(yr, zr, theta, lambda);
    for (std::size_t j = 0; j < k; ++j) grads(t, j) = g[j];
  }
  CovarianceEstimate out;
  out.sigma_hat = detail::inverse_mean_outer(reg.ycal, v);
  out.omega_hat = detail::sandwich(grads, v, u);
  out.ase_theta = detail::ase_from(out.sigma_hat, n);
  out.ase_lambda = detail::ase_from(out.omega_hat, n);
  return out;
}

// ---------------------------------------------------------------------------
// Estimators

namespace detail {

inline void fill_residuals(FitResult& fit, const RegressorMatrices& reg) {
  const std::size_t n = reg.rows();
  fit.residuals_e.assign(n, 0.0);
  fit.residuals_u.assign(n, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    const auto yr = reg.ycal.row(t);
    const auto zr = reg.zcal.row(t);
    const double e = reg.y[t] - fitted_mean(yr, fit.theta2, fit.model_class);
    fit.residuals_e[t] = e;
    fit.residuals_u[t] = e * e - fitted_variance(yr, zr, fit.theta2, fit.lambda2, fit.model_class);
  }
}

inline void check_order(const FitConfig& cfg) {
  if (cfg.order == 0) fail(ErrorKind::InvalidSpec, "fit: order must be >= 1");
  if (!(cfg.cascade_tol > 0.0)) fail(ErrorKind::InvalidSpec, "fit: cascade_tol must be > 0");
  if (cfg.cascade_max_iters == 0) fail(ErrorKind::InvalidSpec, "fit: cascade_max_iters must be >= 1");
}

}  // namespace detail

/// Four-stage weighted least squares for the additive classes. Stages iii and
/// iv are repeated with refreshed weights until the largest relative change
/// of (theta, Lambda) falls below cascade_tol.
inline FitResult four_stage_wls_additive(std::span<const std::int64_t> values, const FitConfig& cfg) {
  if (!is_additive(cfg.model_class)) fail(ErrorKind::InvalidSpec, "four_stage_wls_additive needs an additive class");
  detail::check_order(cfg);
  const std::size_t p = cfg.order;
  const RegressorMatrices reg = build_regressors(values, p);
  const std::size_t n = reg.rows();
  const Vector lambda_star = detail::resolve_star(cfg.lambda_star, p + 1, "lambda_star");
  const bool free_link = cfg.variance_link.kind == LinkKind::Free;

  FitResult fit;
  fit.model_class = cfg.model_class;
  fit.order = p;
  fit.n_effective = n;
  fit.variance_link = cfg.variance_link;

  auto weights = [&](std::span<const double> lambda) {
    Vector w(n);
    for (std::size_t t = 0; t < n; ++t) w[t] = detail::floored(dot(reg.zcal.row(t), lambda), cfg.weight_floor);
    return w;
  };
  auto squared = [](Vector w) {
    for (double& v : w) v *= v;
    return w;
  };
  auto theta_stage = [&](const Vector& w, const char* name) {
    auto out = detail::weighted_ls(reg.ycal, reg.y, w);
    fit.orthogonality.push_back({name, out.orthogonality});
    return out.beta;
  };
  auto lambda_stage = [&](const Vector& theta, const Vector& w, const char* name, std::vector<bool>& bound) {
    if (!free_link) {
      bound.assign(p + 1, false);
      return detail::linked_variances(cfg.variance_link, theta);
    }
    auto out = wls_lambda_stage(reg, theta, squared(w), cfg.weight_floor);
    fit.orthogonality.push_back({name, out.orthogonality});
    bound = out.at_bound;
    return out.lambda;
  };

  std::vector<bool> bound;
  const Vector w_star = weights(lambda_star);
  fit.theta1 = theta_stage(w_star, "theta1");
  fit.lambda1 = lambda_stage(fit.theta1, w_star, "lambda1", bound);

  Vector prev_theta = fit.theta1;
  Vector prev_lambda = fit.lambda1;
  for (std::size_t it = 1; it <= cfg.cascade_max_iters; ++it) {
    const Vector w = weights(prev_lambda);
    const std::string tag = it == 1 ? "" : "#" + std::to_string(it);
    fit.theta2 = theta_stage(w, ("theta2" + tag).c_str());
    fit.lambda2 = lambda_stage(fit.theta2, w, ("lambda2" + tag).c_str(), bound);
    fit.cascade_iterations = it;
    const double change = std::max(detail::relative_change(prev_theta, fit.theta2),
                                   detail::relative_change(prev_lambda, fit.lambda2));
    prev_theta = fit.theta2;
    prev_lambda = fit.lambda2;
    if (change < cfg.cascade_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.active_nonneg_constraints = bound;
  detail::fill_residuals(fit, reg);

  const CovarianceEstimate cov = asymptotic_covariance_additive(reg, fit.theta2, fit.lambda2, cfg.weight_floor);
  fit.sigma_hat = cov.sigma_hat;
  fit.omega_hat = cov.omega_hat;
  fit.ase_theta = cov.ase_theta;
  fit.ase_lambda = free_link ? cov.ase_lambda : Vector{};
  if (!free_link) {
    fit.ase_lambda.resize(p + 1);
    for (std::size_t j = 0; j <= p; ++j)
      fit.ase_lambda[j] = std::abs(cfg.variance_link.derivative(fit.theta2[j])) * fit.ase_theta[j];
  }
  return fit;
}

inline FitResult four_stage_wls_additive(const Series& s, const FitConfig& cfg) {
  return four_stage_wls_additive(s.values, cfg);
}

struct TwoStageResult {
  Vector theta;
  Vector lambda;
  std::vector<bool> at_bound;
  std::vector<StageCheck> orthogonality;
};

/// Unweighted least squares for theta, then unweighted NNLS for Lambda.
inline TwoStageResult two_stage_ls(std::span<const std::int64_t> values, std::size_t p) {
  const RegressorMatrices reg = build_regressors(values, p);
  const Vector ones(reg.rows(), 1.0);
  auto th = detail::weighted_ls(reg.ycal, reg.y, ones);
  auto la = wls_lambda_stage(reg, th.beta, ones);
  return {th.beta, la.lambda, la.at_bound, {{"theta", th.orthogonality}, {"lambda", la.orthogonality}}};
}

inline TwoStageResult two_stage_ls(const Series& s, std::size_t p) { return two_stage_ls(s.values, p); }

namespace detail {

struct MultiplicativeSetup {
  RegressorMatrices reg;
  Vector response;  ///< Y_t - 1
  Vector theta_star;
  Vector lambda_star;
};

inline MultiplicativeSetup multiplicative_setup(std::span<const std::int64_t> values, const FitConfig& cfg) {
  if (cfg.model_class != ModelClass::Multiplicative) fail(ErrorKind::InvalidSpec, "multiplicative estimator needs the multiplicative class");
  check_order(cfg);
  const std::size_t p = cfg.order;
  MultiplicativeSetup s{build_regressors(values, p), {}, {}, {}};
  s.response = responses(s.reg, ModelClass::Multiplicative);
  if (cfg.theta_star && cfg.theta_star->size() != p + 1)
    fail(ErrorKind::InvalidSpec, "theta_star must have length " + std::to_string(p + 1));
  s.theta_star = cfg.theta_star ? *cfg.theta_star : Vector(p + 1, 1.0);
  s.lambda_star = resolve_star(cfg.lambda_star, p + 2, "lambda_star");
  return s;
}

inline Vector multiplicative_weights(const RegressorMatrices& reg, std::span<const double> theta,
                                     std::span<const double> lambda, double floor) {
  Vector w(reg.rows());
  for (std::size_t t = 0; t < reg.rows(); ++t)
    w[t] = floored(fitted_variance(reg.ycal.row(t), reg.zcal.row(t), theta, lambda, ModelClass::Multiplicative), floor);
  return w;
}

/// Variance stage of the multiplicative class: minimizes
/// sum_t (e_t^2 - V_t(theta, Lambda))^2 / w_t^2 over Lambda >= 0.
/// With Delta' = (s2 + 1) Delta, V_t = s2 mu_t^2 + Zcal' Delta' is linear in
/// (s2, Delta') and the positive orthant maps onto itself, so the problem is
/// an exact NNLS. Under a fixed link only s2 is free.
inline LambdaStage multiplicative_lambda_stage(const RegressorMatrices& reg, std::span<const double> theta,
                                               std::span<const double> w, const VarianceLink& link, double floor) {
  const std::size_t n = reg.rows();
  const std::size_t k = reg.zcal.cols();
  Vector e2(n);
  Vector mu2(n);
  Vector w2(n);
  for (std::size_t t = 0; t < n; ++t) {
    const double mu = fitted_mean(reg.ycal.row(t), theta, ModelClass::Multiplicative);
    const double e = reg.y[t] - mu;
    e2[t] = e * e;
    mu2[t] = mu * mu;
    w2[t] = floored(w[t] * w[t], floor * floor);
  }
  try {
    if (link.kind == LinkKind::Free) {
      Matrix x(n, k + 1);
      for (std::size_t t = 0; t < n; ++t) {
        x(t, 0) = mu2[t];
        for (std::size_t j = 0; j < k; ++j) x(t, j + 1) = reg.zcal(t, j);
      }
      auto out = weighted_nnls(x, e2, w2);
      LambdaStage res{out.beta, out.at_bound, out.orthogonality};
      for (std::size_t j = 1; j <= k; ++j) res.lambda[j] /= (1.0 + res.lambda[0]);
      return res;
    }
    const Vector delta = linked_variances(link, theta);
    Matrix x(n, 1);
    Vector target(n);
    for (std::size_t t = 0; t < n; ++t) {
      const double d2 = dot(reg.zcal.row(t), delta);
      x(t, 0) = d2 + mu2[t];
      target[t] = e2[t] - d2;
    }
    auto out = weighted_nnls(x, target, w2);
    LambdaStage res;
    res.lambda.push_back(out.beta[0]);
    res.lambda.insert(res.lambda.end(), delta.begin(), delta.end());
    res.at_bound.assign(k + 1, false);
    res.at_bound[0] = out.at_bound[0];
    res.orthogonality = out.orthogonality;
    return res;
  } catch (const Error& err) {
    if (err.kind() == ErrorKind::NoConvergence) fail(ErrorKind::InnerOptFailed, std::string("variance stage: ") + err.what());
    throw;
  }
}

inline void finish_multiplicative(FitResult& fit, const RegressorMatrices& reg, double floor) {
  detail::fill_residuals(fit, reg);
  const CovarianceEstimate cov = asymptotic_covariance_multiplicative(reg, fit.theta2, fit.lambda2, floor);
  fit.sigma_hat = cov.sigma_hat;
  fit.omega_hat = cov.omega_hat;
  fit.ase_theta = cov.ase_theta;
  fit.ase_lambda = cov.ase_lambda;
}

}  // namespace detail

/// Four-stage estimator for the multiplicative class.
inline FitResult four_stage_wls_multiplicative(std::span<const std::int64_t> values, const FitConfig& cfg) {
  auto s = detail::multiplicative_setup(values, cfg);
  const auto& reg = s.reg;
  FitResult fit;
  fit.model_class = ModelClass::Multiplicative;
  fit.order = cfg.order;
  fit.n_effective = reg.rows();
  fit.variance_link = cfg.variance_link;

  auto theta_stage = [&](const Vector& w, const std::string& name) {
    auto out = detail::weighted_ls(reg.ycal, s.response, w);
    fit.orthogonality.push_back({name, out.orthogonality});
    return out.beta;
  };
  auto lambda_stage = [&](const Vector& theta, const Vector& w, const std::string& name) {
    auto out = detail::multiplicative_lambda_stage(reg, theta, w, cfg.variance_link, cfg.weight_floor);
    fit.orthogonality.push_back({name, out.orthogonality});
    fit.active_nonneg_constraints = out.at_bound;
    return out.lambda;
  };

  const Vector w_star = detail::multiplicative_weights(reg, s.theta_star, s.lambda_star, cfg.weight_floor);
  fit.theta1 = theta_stage(w_star, "theta1");
  fit.lambda1 = lambda_stage(fit.theta1, w_star, "lambda1");

  Vector prev_theta = fit.theta1;
  Vector prev_lambda = fit.lambda1;
  for (std::size_t it = 1; it <= cfg.cascade_max_iters; ++it) {
    const std::string tag = it == 1 ? "" : "#" + std::to_string(it);
    const Vector w3 = detail::multiplicative_weights(reg, prev_theta, prev_lambda, cfg.weight_floor);
    fit.theta2 = theta_stage(w3, "theta2" + tag);
    const Vector w4 = detail::multiplicative_weights(reg, fit.theta2, prev_lambda, cfg.weight_floor);
    fit.lambda2 = lambda_stage(fit.theta2, w4, "lambda2" + tag);
    fit.cascade_iterations = it;
    const double change = std::max(detail::relative_change(prev_theta, fit.theta2),
                                   detail::relative_change(prev_lambda, fit.lambda2));
    prev_theta = fit.theta2;
    prev_lambda = fit.lambda2;
    if (change < cfg.cascade_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.sigma_eps2 = fit.lambda2[0];
  detail::finish_multiplicative(fit, reg, cfg.weight_floor);
  return fit;
}

inline FitResult four_stage_wls_multiplicative(const Series& s, const FitConfig& cfg) {
  return four_stage_wls_multiplicative(s.values, cfg);
}

/// Innovation-variance moment estimator and its asymptotic variance.
struct InnovationVariance {
  double value = 0.0;  ///< clamped at zero
  double raw = 0.0;
  double gamma = 0.0;
};

inline InnovationVariance innovation_variance_estimate(const RegressorMatrices& reg, std::span<const double> theta,
                                                       const VarianceLink& link) {
  const std::size_t n = reg.rows();
  const Vector delta = detail::linked_variances(link, theta);
  Vector ratio(n);
  Vector scale(n);
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double mu = fitted_mean(reg.ycal.row(t), theta, ModelClass::Multiplicative);
    const double d2 = dot(reg.zcal.row(t), delta);
    const double e = reg.y[t] - mu;
    scale[t] = d2 + mu * mu;
    if (!(scale[t] > 0.0)) fail(ErrorKind::NonpositiveVariance, "innovation variance: delta^2 + mu^2 is zero at row " + std::to_string(t));
    ratio[t] = (e * e - d2) / scale[t];
    sum += ratio[t];
  }
  InnovationVariance out;
  out.raw = sum / static_cast<double>(n);
  out.value = std::max(0.0, out.raw);
  double g = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const double z = ratio[t] - out.value;
    g += z * z;
  }
  out.gamma = g / static_cast<double>(n);
  return out;
}

/// Simplified estimator for the multiplicative class when Delta is a known
/// function of theta: theta1, then the innovation variance, then theta2
/// weighted by V_t(theta1, (s2, Delta(theta1))). Steps two and three are
/// repeated until stable.
inline FitResult multiplicative_triplet(std::span<const std::int64_t> values, const FitConfig& cfg) {
  if (cfg.variance_link.kind == LinkKind::Free)
    fail(ErrorKind::InvalidSpec, "multiplicative_triplet needs a poisson, geometric or proportional variance link");
  auto s = detail::multiplicative_setup(values, cfg);
  const auto& reg = s.reg;
  FitResult fit;
  fit.model_class = ModelClass::Multiplicative;
  fit.order = cfg.order;
  fit.n_effective = reg.rows();
  fit.variance_link = cfg.variance_link;

  auto pack = [&](double s2, const Vector& theta) {
    Vector la{s2};
    const Vector delta = detail::linked_variances(cfg.variance_link, theta);
    la.insert(la.end(), delta.begin(), delta.end());
    return la;
  };

  const Vector w_star = detail::multiplicative_weights(reg, s.theta_star, s.lambda_star, cfg.weight_floor);
  auto first = detail::weighted_ls(reg.ycal, s.response, w_star);
  fit.orthogonality.push_back({"theta1", first.orthogonality});
  fit.theta1 = first.beta;
  InnovationVariance iv = innovation_variance_estimate(reg, fit.theta1, cfg.variance_link);
  fit.lambda1 = pack(iv.value, fit.theta1);

  Vector prev_theta = fit.theta1;
  Vector prev_lambda = fit.lambda1;
  for (std::size_t it = 1; it <= cfg.cascade_max_iters; ++it) {
    const Vector w = detail::multiplicative_weights(reg, prev_theta, prev_lambda, cfg.weight_floor);
    auto out = detail::weighted_ls(reg.ycal, s.response, w);
    fit.orthogonality.push_back({it == 1 ? std::string("theta2") : "theta2#" + std::to_string(it), out.orthogonality});
    fit.theta2 = out.beta;
    iv = innovation_variance_estimate(reg, fit.theta2, cfg.variance_link);
    fit.lambda2 = pack(iv.value, fit.theta2);
    fit.cascade_iterations = it;
    const double change = std::max(detail::relative_change(prev_theta, fit.theta2),
                                   detail::relative_change(prev_lambda, fit.lambda2));
    prev_theta = fit.theta2;
    prev_lambda = fit.lambda2;
    if (change < cfg.cascade_tol) {
      fit.converged = true;
      break;
    }
  }
  fit.sigma_eps2 = iv.value;
  fit.sigma_eps2_clamped = iv.raw < 0.0;
  if (fit.sigma_eps2_clamped) fit.notes.emplace_back("innovation variance estimate was negative and is clamped at 0");
  fit.sigma_eps2_gamma = iv.gamma;
  fit.sigma_eps2_ase = std::sqrt(iv.gamma / static_cast<double>(reg.rows()));
  fit.active_nonneg_constraints.assign(fit.lambda2.size(), false);
  fit.active_nonneg_constraints[0] = fit.sigma_eps2_clamped;

  detail::fill_residuals(fit, reg);
  Vector v(reg.rows());
  for (std::size_t t = 0; t < reg.rows(); ++t)
    v[t] = detail::floored(fitted_variance(reg.ycal.row(t), reg.zcal.row(t), fit.theta2, fit.lambda2,
                                           ModelClass::Multiplicative),
                           cfg.weight_floor);
  fit.sigma_hat = detail::inverse_mean_outer(reg.ycal, v);
  fit.ase_theta = detail::ase_from(fit.sigma_hat, reg.rows());
  fit.ase_lambda.assign(fit.lambda2.size(), 0.0);
  fit.ase_lambda[0] = *fit.sigma_eps2_ase;
  for (std::size_t j = 0; j < fit.theta2.size(); ++j)
    fit.ase_lambda[j + 1] = std::abs(cfg.variance_link.derivative(fit.theta2[j])) * fit.ase_theta[j];
  fit.omega_hat = Matrix(fit.lambda2.size(), fit.lambda2.size());
  for (std::size_t j = 0; j < fit.lambda2.size(); ++j) {
    const double a = fit.ase_lambda[j];
    fit.omega_hat(j, j) = a * a * static_cast<double>(reg.rows());
  }
  return fit;
}

inline FitResult multiplicative_triplet(const Series& s, const FitConfig& cfg) {
  return multiplicative_triplet(s.values, cfg);
}

/// Dispatches on the class: additive classes use the four-stage cascade; the
/// multiplicative class uses the four-stage cascade with a free link and the
/// triplet otherwise. Negative observations require the Z-valued class.
inline FitResult fit_model(std::span<const std::int64_t> values, const FitConfig& cfg) {
  if (cfg.model_class != ModelClass::AdditiveZ)
    for (std::size_t t = 0; t < values.size(); ++t)
      if (values[t] < 0)
        fail(ErrorKind::InvalidSpec, "observation " + std::to_string(t + 1) + " is negative; class '" +
                                         std::string(to_string(cfg.model_class)) + "' needs nonnegative data");
  if (is_additive(cfg.model_class)) return four_stage_wls_additive(values, cfg);
  if (cfg.variance_link.kind == LinkKind::Free) return four_stage_wls_multiplicative(values, cfg);
  return multiplicative_triplet(values, cfg);
}

inline FitResult fit_model(const Series& s, const FitConfig& cfg) { return fit_model(s.values, cfg); }

// ---------------------------------------------------------------------------
// Post-fit inference

/// nu = m^2 / (v - m), the NB2 size whose variance identity v = m (1 + m / nu)
/// matches the given mean and variance.
inline double nb2_shape(double m, double v) {
  if (!(v > m)) fail(ErrorKind::NotOverdispersed, "variance does not exceed the mean");
  return m * m / (v - m);
}

/// NB2 size per coordinate (innovation then each coefficient); empty where
/// the coordinate is not overdispersed. For a multiplicative Lambda the
/// leading innovation variance is skipped so that entries pair with theta.
inline std::vector<std::optional<double>> nb2_shape_estimates(std::span<const double> theta,
                                                              std::span<const double> lambda) {
  const std::size_t offset = lambda.size() == theta.size() + 1 ? 1 : 0;
  if (lambda.size() != theta.size() + offset) fail(ErrorKind::InvalidSpec, "nb2_shape_estimates: length mismatch");
  std::vector<std::optional<double>> out(theta.size());
  for (std::size_t j = 0; j < theta.size(); ++j) {
    if (lambda[j + offset] > theta[j]) out[j] = nb2_shape(theta[j], lambda[j + offset]);
  }
  return out;
}

enum class DispersionKind { Poisson, Geometric };

/// z_j = (Lambda_j - g(theta_j)) / sqrt(ASE(Lambda_j)^2 + g'(theta_j)^2 ASE(theta_j)^2),
/// ignoring the theta/Lambda cross-covariance.
inline Vector dispersion_test(std::span<const double> theta, std::span<const double> lambda,
                              std::span<const double> ase_theta, std::span<const double> ase_lambda,
                              DispersionKind kind) {
  const std::size_t k = theta.size();
  if (lambda.size() != k || ase_theta.size() != k || ase_lambda.size() != k)
    fail(ErrorKind::InvalidSpec, "dispersion_test: length mismatch");
  Vector z(k);
  for (std::size_t j = 0; j < k; ++j) {
    const double m = theta[j];
    const double g = kind == DispersionKind::Poisson ? m : m * (1.0 + m);
    const double dg = kind == DispersionKind::Poisson ? 1.0 : 1.0 + 2.0 * m;
    const double d = lambda[j] - g;
    const double se = std::sqrt(ase_lambda[j] * ase_lambda[j] + dg * dg * ase_theta[j] * ase_theta[j]);
    if (se > 0.0) z[j] = d / se;
    else z[j] = d == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), d);
  }
  return z;
}

inline Vector dispersion_test(const FitResult& fit, DispersionKind kind) {
  if (!is_additive(fit.model_class)) fail(ErrorKind::NotSupported, "dispersion_test needs an additive fit");
  return dispersion_test(fit.theta2, fit.lambda2, fit.ase_theta, fit.ase_lambda, kind);
}

}  // namespace rminar
