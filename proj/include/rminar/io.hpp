#pragma once

// CSV series files and JSON configuration / result documents.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rminar/diagnostics.hpp"
#include "rminar/distributions.hpp"
#include "rminar/errors.hpp"
#include "rminar/estimation.hpp"
#include "rminar/mc_study.hpp"
#include "rminar/model.hpp"
#include "rminar/theory.hpp"

namespace rminar {

using Json = nlohmann::ordered_json;

inline constexpr int kConfigVersion = 1;

// ---------------------------------------------------------------------------
// CSV

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

}  // namespace detail

/// One integer per row, optional single header row "y", blank lines ignored.
inline Series parse_series_csv(std::string_view text) {
  Series s;
  std::size_t line_no = 0;
  bool seen_row = false;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    const std::string_view raw = text.substr(pos, end == std::string_view::npos ? std::string_view::npos : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;
    const std::string_view field = detail::trim(raw);
    if (field.empty()) continue;
    if (!seen_row && (field == "y" || field == "\"y\"")) {
      s.csv_header = true;
      seen_row = true;
      continue;
    }
    seen_row = true;
    std::int64_t v = 0;
    const auto* b = field.data();
    const auto* e = field.data() + field.size();
    if (*b == '+') ++b;
    const auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc() || ptr != e || b == e)
      fail(ErrorKind::ParseError, "line " + std::to_string(line_no) + ": '" + std::string(field) + "' is not an integer");
    s.values.push_back(v);
  }
  if (s.values.empty()) fail(ErrorKind::ParseError, "series file contains no observations");
  s.domain = domain_of(s.values);
  return s;
}

inline Series read_series_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::ParseError, "cannot open series file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_series_csv(buf.str());
}

inline void write_series_csv(std::ostream& out, const Series& s) {
  if (s.csv_header) out << "y\n";
  for (auto v : s.values) out << v << '\n';
}

// ---------------------------------------------------------------------------
// JSON helpers

/// Finite numbers as JSON numbers, +-inf as "inf"/"-inf", NaN as "none".
inline Json num(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "none";
  return v > 0 ? "inf" : "-inf";
}

inline Json num(const std::optional<double>& v) { return v ? num(*v) : Json("none"); }

inline Json num_array(std::span<const double> v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

inline Json matrix_json(const Matrix& m) {
  Json a = Json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) a.push_back(num_array(m.row(i)));
  return a;
}

namespace detail {

inline void check_keys(const Json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) fail(ErrorKind::InvalidSpec, where + ": expected an object");
  for (const auto& [key, _] : obj.items())
    if (!allowed.count(key)) fail(ErrorKind::InvalidSpec, where + ": unknown key '" + key + "'");
}

inline const Json& require(const Json& obj, const std::string& key, const std::string& where) {
  if (!obj.contains(key)) fail(ErrorKind::InvalidSpec, where + ": missing key '" + key + "'");
  return obj.at(key);
}

inline double get_number(const Json& obj, const std::string& key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_number()) fail(ErrorKind::InvalidSpec, where + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::int64_t get_integer(const Json& obj, const std::string& key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (v.is_number_integer()) return v.get<std::int64_t>();
  if (v.is_number_float()) {
    const double d = v.get<double>();
    if (std::floor(d) == d && std::abs(d) < 9e15) return static_cast<std::int64_t>(d);
  }
  fail(ErrorKind::InvalidSpec, where + "." + key + ": expected an integer");
}

inline void check_version(const Json& doc, const std::string& where) {
  const std::int64_t v = get_integer(doc, "version", where);
  if (v != kConfigVersion) fail(ErrorKind::InvalidSpec, where + ": unsupported version " + std::to_string(v));
}

inline Vector get_vector(const Json& v, const std::string& where) {
  if (!v.is_array()) fail(ErrorKind::InvalidSpec, where + ": expected an array of numbers");
  Vector out;
  for (const auto& x : v) {
    if (!x.is_number()) fail(ErrorKind::InvalidSpec, where + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// DistSpec / ModelSpec

inline DistSpec dist_from_json(const Json& j, const std::string& where) {
  const std::string kind = detail::require(j, "kind", where).is_string() ? j.at("kind").get<std::string>() : "";
  using detail::check_keys;
  using detail::get_integer;
  using detail::get_number;
  if (kind == "poisson") {
    check_keys(j, {"kind", "mean"}, where);
    return DistSpec::poisson(get_number(j, "mean", where));
  }
  if (kind == "binomial") {
    check_keys(j, {"kind", "trials", "mean"}, where);
    return DistSpec::binomial(get_integer(j, "trials", where), get_number(j, "mean", where));
  }
  if (kind == "nb1" || kind == "nb2") {
    check_keys(j, {"kind", "r", "mean"}, where);
    const double r = get_number(j, "r", where);
    const double m = get_number(j, "mean", where);
    return kind == "nb1" ? DistSpec::nb1(r, m) : DistSpec::nb2(r, m);
  }
  if (kind == "geometric") {
    check_keys(j, {"kind", "mean"}, where);
    return DistSpec::geometric(get_number(j, "mean", where));
  }
  if (kind == "bernoulli") {
    check_keys(j, {"kind", "p"}, where);
    return DistSpec::bernoulli(get_number(j, "p", where));
  }
  if (kind == "skellam") {
    check_keys(j, {"kind", "mu1", "mu2"}, where);
    return DistSpec::skellam(get_number(j, "mu1", where), get_number(j, "mu2", where));
  }
  if (kind == "point_mass") {
    check_keys(j, {"kind", "value"}, where);
    return DistSpec::point_mass(get_integer(j, "value", where));
  }
  if (kind == "two_point") {
    check_keys(j, {"kind", "p0", "value"}, where);
    return DistSpec::two_point(get_number(j, "p0", where), get_integer(j, "value", where));
  }
  fail(ErrorKind::InvalidSpec, where + ": unknown distribution kind '" + kind + "'");
}

inline Json dist_to_json(const DistSpec& d) {
  Json j;
  j["kind"] = std::string(to_string(d.kind()));
  switch (d.kind()) {
    case DistKind::Poisson:
    case DistKind::Geometric: j["mean"] = d.first(); break;
    case DistKind::Binomial:
      j["trials"] = static_cast<std::int64_t>(d.first());
      j["mean"] = d.second();
      break;
    case DistKind::NB1:
    case DistKind::NB2:
      j["r"] = d.first();
      j["mean"] = d.second();
      break;
    case DistKind::Bernoulli: j["p"] = d.first(); break;
    case DistKind::Skellam:
      j["mu1"] = d.first();
      j["mu2"] = d.second();
      break;
    case DistKind::PointMass: j["value"] = static_cast<std::int64_t>(d.first()); break;
    case DistKind::TwoPoint:
      j["p0"] = d.first();
      j["value"] = static_cast<std::int64_t>(d.second());
      break;
  }
  return j;
}

inline ModelClass parse_model_class(std::string_view s) {
  if (s == "additive") return ModelClass::AdditiveN0;
  if (s == "additive-z") return ModelClass::AdditiveZ;
  if (s == "multiplicative") return ModelClass::Multiplicative;
  fail(ErrorKind::InvalidSpec, "unknown model class '" + std::string(s) + "' (additive, additive-z, multiplicative)");
}

/// Model document body (without the version check).
inline ModelSpec model_from_json_body(const Json& j, const std::string& where) {
  detail::check_keys(j, {"version", "class", "coefficients", "innovation", "intercept"}, where);
  ModelSpec spec;
  const Json& cls = detail::require(j, "class", where);
  if (!cls.is_string()) fail(ErrorKind::InvalidSpec, where + ".class: expected a string");
  spec.model_class = parse_model_class(cls.get<std::string>());
  const Json& coefs = detail::require(j, "coefficients", where);
  if (!coefs.is_array()) fail(ErrorKind::InvalidSpec, where + ".coefficients: expected an array");
  for (std::size_t i = 0; i < coefs.size(); ++i)
    spec.coefficients.push_back(dist_from_json(coefs[i], where + ".coefficients[" + std::to_string(i) + "]"));
  spec.innovation = dist_from_json(detail::require(j, "innovation", where), where + ".innovation");
  if (j.contains("intercept")) spec.intercept = dist_from_json(j.at("intercept"), where + ".intercept");
  validate(spec);
  return spec;
}

inline ModelSpec model_from_json(const Json& j) {
  detail::check_version(j, "model");
  return model_from_json_body(j, "model");
}

inline Json model_to_json(const ModelSpec& spec) {
  Json j;
  j["version"] = kConfigVersion;
  j["class"] = std::string(to_string(spec.model_class));
  Json coefs = Json::array();
  for (const auto& c : spec.coefficients) coefs.push_back(dist_to_json(c));
  j["coefficients"] = coefs;
  j["innovation"] = dist_to_json(spec.innovation);
  if (spec.intercept) j["intercept"] = dist_to_json(*spec.intercept);
  return j;
}

inline Json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::ParseError, what + ": " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::ParseError, "cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_json_text(buf.str(), path);
}

inline ModelSpec read_model_file(const std::string& path) { return model_from_json(read_json_file(path)); }

// ---------------------------------------------------------------------------
// FitConfig / StudyConfig

inline FitConfig fit_config_from_json(const Json& j, const std::string& where) {
  detail::check_keys(j, {"class", "order", "variance_link", "lambda_star", "theta_star", "cascade_tol", "cascade_max_iters"}, where);
  FitConfig cfg;
  const Json& cls = detail::require(j, "class", where);
  if (!cls.is_string()) fail(ErrorKind::InvalidSpec, where + ".class: expected a string");
  cfg.model_class = parse_model_class(cls.get<std::string>());
  const std::int64_t p = detail::get_integer(j, "order", where);
  if (p < 1) fail(ErrorKind::InvalidSpec, where + ".order: must be >= 1");
  cfg.order = static_cast<std::size_t>(p);
  if (j.contains("variance_link")) {
    if (!j.at("variance_link").is_string()) fail(ErrorKind::InvalidSpec, where + ".variance_link: expected a string");
    cfg.variance_link = parse_variance_link(j.at("variance_link").get<std::string>());
  }
  if (j.contains("lambda_star")) cfg.lambda_star = detail::get_vector(j.at("lambda_star"), where + ".lambda_star");
  if (j.contains("theta_star")) cfg.theta_star = detail::get_vector(j.at("theta_star"), where + ".theta_star");
  if (j.contains("cascade_tol")) cfg.cascade_tol = detail::get_number(j, "cascade_tol", where);
  if (j.contains("cascade_max_iters")) {
    const std::int64_t m = detail::get_integer(j, "cascade_max_iters", where);
    if (m < 1) fail(ErrorKind::InvalidSpec, where + ".cascade_max_iters: must be >= 1");
    cfg.cascade_max_iters = static_cast<std::size_t>(m);
  }
  return cfg;
}

inline StudyConfig study_config_from_json(const Json& j) {
  const std::string where = "study";
  detail::check_version(j, where);
  detail::check_keys(j, {"version", "model", "n", "burn_in", "reps", "seed", "workers", "fit"}, where);
  StudyConfig cfg;
  cfg.spec = model_from_json_body(detail::require(j, "model", where), where + ".model");
  auto count = [&](const std::string& key, std::int64_t min) {
    const std::int64_t v = detail::get_integer(j, key, where);
    if (v < min) fail(ErrorKind::InvalidSpec, where + "." + key + ": must be >= " + std::to_string(min));
    return static_cast<std::size_t>(v);
  };
  cfg.n = count("n", 1);
  cfg.reps = count("reps", 1);
  const std::int64_t seed = detail::get_integer(j, "seed", where);
  if (seed < 0) fail(ErrorKind::InvalidSpec, where + ".seed: must be >= 0");
  cfg.master_seed = static_cast<std::uint64_t>(seed);
  if (j.contains("burn_in")) cfg.burn_in = count("burn_in", 0);
  if (j.contains("workers")) cfg.workers = count("workers", 1);
  if (j.contains("fit")) {
    cfg.fit = fit_config_from_json(j.at("fit"), where + ".fit");
  } else {
    cfg.fit.model_class = cfg.spec.model_class;
    cfg.fit.order = cfg.spec.order();
    if (cfg.spec.model_class == ModelClass::Multiplicative) cfg.fit.variance_link = VarianceLink::poisson();
  }
  return cfg;
}

// ---------------------------------------------------------------------------
// Result documents

inline Json stationarity_json(const StationarityReport& r) {
  Json j;
  j["coefficient_sum"] = num(r.coefficient_sum);
  j["rho_mean"] = num(r.rho_mean);
  j["rho_m2"] = num(r.rho_m2);
  j["mean_exists"] = r.mean_exists;
  j["second_moment_exists"] = r.second_moment_exists;
  j["uncond_mean"] = num(r.uncond_mean);
  j["uncond_variance"] = num(r.uncond_variance);
  if (r.fourth_moments_below_one) j["fourth_moments_below_one"] = *r.fourth_moments_below_one;
  else j["fourth_moments_below_one"] = "none";
  j["notes"] = r.notes;
  return j;
}

inline Json tail_json(const TailReport& r) {
  Json j;
  j["mode"] = std::string(to_string(r.mode));
  j["tau1"] = num(r.tau1);
  j["bracket"] = {num(r.lo), num(r.hi)};
  j["solver_iterations"] = r.solver_iterations;
  j["moment_at_tau1"] = num(r.moment_at_tau1);
  return j;
}

inline Json lyapunov_json(const LyapunovReport& r) {
  Json j;
  j["gamma"] = num(r.gamma);
  j["minus_infinity"] = r.minus_infinity;
  j["std_error"] = num(r.std_error);
  j["horizon"] = r.horizon;
  j["replications"] = r.replications;
  return j;
}

inline Json fit_json(const FitResult& f, bool include_residuals = false) {
  const auto names = parameter_names(f.model_class, f.order);
  const std::size_t nt = f.theta2.size();
  auto named = [&](std::span<const double> v, std::size_t offset) {
    Json o;
    for (std::size_t i = 0; i < v.size(); ++i) o[names[offset + i]] = num(v[i]);
    return o;
  };
  Json j;
  j["class"] = std::string(to_string(f.model_class));
  j["order"] = f.order;
  j["n_effective"] = f.n_effective;
  j["variance_link"] = to_string(f.variance_link);
  j["theta1"] = named(f.theta1, 0);
  j["lambda1"] = named(f.lambda1, nt);
  j["theta2"] = named(f.theta2, 0);
  j["lambda2"] = named(f.lambda2, nt);
  j["ase_theta"] = named(f.ase_theta, 0);
  j["ase_lambda"] = named(f.ase_lambda, nt);
  if (f.sigma_eps2) {
    j["sigma_eps2"] = num(f.sigma_eps2);
    j["sigma_eps2_gamma"] = num(f.sigma_eps2_gamma);
    j["sigma_eps2_ase"] = num(f.sigma_eps2_ase);
    j["sigma_eps2_clamped"] = f.sigma_eps2_clamped;
  }
  j["sigma_hat"] = matrix_json(f.sigma_hat);
  j["omega_hat"] = matrix_json(f.omega_hat);
  j["cascade_iterations"] = f.cascade_iterations;
  j["converged"] = f.converged;
  Json active = Json::array();
  for (std::size_t i = 0; i < f.active_nonneg_constraints.size(); ++i)
    if (f.active_nonneg_constraints[i]) active.push_back(names[nt + i]);
  j["active_nonneg_constraints"] = active;
  Json orth = Json::object();
  for (const auto& s : f.orthogonality) orth[s.stage] = num(s.residual);
  j["orthogonality"] = orth;
  j["notes"] = f.notes;
  if (include_residuals) {
    j["residuals_e"] = num_array(f.residuals_e);
    j["residuals_u"] = num_array(f.residuals_u);
  }
  return j;
}

inline Json metrics_json(const InSampleMetrics& m) {
  Json j;
  j["mar"] = num(m.mar);
  j["msr"] = num(m.msr);
  j["mspr"] = num(m.mspr);
  j["generated_mean"] = num(m.generated_mean);
  j["generated_variance"] = num(m.generated_variance);
  return j;
}

inline Json forecast_json(const ForecastEval& f) {
  Json j;
  j["n_c"] = f.n_c;
  j["forecasts"] = f.forecasts;
  j["msfe"] = num(f.msfe);
  j["mafe"] = num(f.mafe);
  j["mspfe"] = num(f.mspfe);
  return j;
}

inline Json study_json(const StudyResult& r) {
  Json rows = Json::array();
  for (std::size_t i = 0; i < r.names.size(); ++i) {
    Json row;
    row["parameter"] = r.names[i];
    row["true"] = r.truth.empty() ? Json("none") : num(r.truth[i]);
    row["mean"] = num(r.mean[i]);
    row["std"] = num(r.stddev[i]);
    row["ase"] = num(r.ase[i]);
    rows.push_back(row);
  }
  Json j;
  j["rows"] = rows;
  j["successes"] = r.successes;
  j["failures"] = r.failures;
  j["failure_kinds"] = r.failure_kinds;
  j["wall_seconds"] = num(r.wall_seconds);
  return j;
}

}  // namespace rminar
