#pragma once

// Command-line front end. run_cli() is the whole program minus main(), so
// the tests drive it with in-memory streams.

#include <fstream>
#include <iostream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "rminar/diagnostics.hpp"
#include "rminar/errors.hpp"
#include "rminar/estimation.hpp"
#include "rminar/io.hpp"
#include "rminar/mc_study.hpp"
#include "rminar/model.hpp"
#include "rminar/theory.hpp"

namespace rminar {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumerical = 3;

inline int exit_code_for(ErrorKind kind) { return is_numerical(kind) ? kExitNumerical : kExitInput; }

/// "error code=<exit> kind=<ErrorKind> message=<text>" on one line.
inline void report_error(std::ostream& err, int code, std::string_view kind, std::string_view message) {
  std::string msg(message);
  for (char& c : msg)
    if (c == '\n' || c == '\r') c = ' ';
  err << "error code=" << code << " kind=" << kind << " message=" << msg << '\n';
}

namespace detail {

struct FitOptions {
  std::string model_class = "additive";
  std::size_t order = 1;
  std::string variance_link = "free";
  std::vector<double> lambda_star;
  std::vector<double> theta_star;
  double cascade_tol = 1e-6;
  std::size_t cascade_max_iters = 10;

  void attach(CLI::App* sub, bool order_required) {
    sub->add_option("--class", model_class, "additive | additive-z | multiplicative")
        ->check(CLI::IsMember({"additive", "additive-z", "multiplicative"}));
    auto* o = sub->add_option("--order", order, "autoregressive order p")->check(CLI::PositiveNumber);
    if (order_required) o->required();
    sub->add_option("--variance-link", variance_link, "free | poisson | geometric | proportional:<c>");
    sub->add_option("--lambda-star", lambda_star, "stage-one variance weights, comma separated")->delimiter(',');
    sub->add_option("--theta-star", theta_star, "stage-one mean weights (multiplicative), comma separated")->delimiter(',');
    sub->add_option("--cascade-tol", cascade_tol, "relative tolerance for the iterated stages")->check(CLI::PositiveNumber);
    sub->add_option("--cascade-max-iters", cascade_max_iters, "cap on iterated stages")->check(CLI::PositiveNumber);
  }

  FitConfig build() const {
    FitConfig cfg;
    cfg.model_class = parse_model_class(model_class);
    cfg.order = order;
    cfg.variance_link = parse_variance_link(variance_link);
    if (!lambda_star.empty()) cfg.lambda_star = lambda_star;
    if (!theta_star.empty()) {
      if (cfg.model_class != ModelClass::Multiplicative)
        fail(ErrorKind::InvalidSpec, "--theta-star applies to the multiplicative class only");
      cfg.theta_star = theta_star;
    }
    cfg.cascade_tol = cascade_tol;
    cfg.cascade_max_iters = cascade_max_iters;
    return cfg;
  }
};

/// Writes to --out when given, else to `out`.
inline void emit(const std::string& path, std::ostream& out, const std::string& text) {
  if (path.empty()) {
    out << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::InvalidSpec, "cannot write output file '" + path + "'");
  f << text;
  if (!f) fail(ErrorKind::InvalidSpec, "failed writing output file '" + path + "'");
}

inline std::string dump(const Json& j) { return j.dump(2) + "\n"; }

inline Json dispersion_json(const FitResult& fit) {
  Json j;
  const auto names = parameter_names(fit.model_class, fit.order);
  const auto shapes = nb2_shape_estimates(fit.theta2, fit.lambda2);
  Json nb2;
  for (std::size_t i = 0; i < shapes.size(); ++i) nb2[names[i]] = num(shapes[i]);
  j["nb2_shape"] = nb2;
  if (is_additive(fit.model_class)) {
    for (auto [kind, label] : {std::pair{DispersionKind::Poisson, "poisson_z"}, std::pair{DispersionKind::Geometric, "geometric_z"}}) {
      const Vector z = dispersion_test(fit, kind);
      Json o;
      for (std::size_t i = 0; i < z.size(); ++i) o[names[i]] = num(z[i]);
      j[label] = o;
    }
  }
  return j;
}

}  // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Simulation, analysis and estimation of random-multiplication integer autoregressions"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "rminar 1.0.0");

  // simulate
  auto* sim = app.add_subcommand("simulate", "simulate a series from a model config");
  std::string sim_model;
  std::size_t sim_n = 0;
  std::size_t sim_burn = 500;
  std::uint64_t sim_seed = 0;
  std::string sim_out;
  sim->add_option("--model", sim_model, "model config (JSON)")->required();
  sim->add_option("--n", sim_n, "number of observations")->required()->check(CLI::PositiveNumber);
  sim->add_option("--burn-in", sim_burn, "discarded initial steps");
  sim->add_option("--seed", sim_seed, "random seed")->required();
  sim->add_option("--out", sim_out, "output CSV (default stdout)");

  // analyze
  auto* ana = app.add_subcommand("analyze", "stationarity, tail index and Lyapunov analysis of a model");
  std::string ana_model;
  std::uint64_t ana_seed = 0;
  std::size_t ana_horizon = 5000;
  std::size_t ana_reps = 200;
  double ana_tail_hi = 64.0;
  std::string ana_out;
  ana->add_option("--model", ana_model, "model config (JSON)")->required();
  ana->add_option("--seed", ana_seed, "seed for the Lyapunov simulation")->required();
  ana->add_option("--horizon", ana_horizon, "Lyapunov product length")->check(CLI::PositiveNumber);
  ana->add_option("--lyapunov-reps", ana_reps, "Lyapunov replications")->check(CLI::PositiveNumber);
  ana->add_option("--tail-bracket-hi", ana_tail_hi, "upper end of the tail-index search")->check(CLI::PositiveNumber);
  ana->add_option("--out", ana_out, "output document (default stdout)");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "fit a series");
  std::string fit_series;
  std::string fit_out;
  bool fit_residuals = false;
  detail::FitOptions fit_opts;
  fit_cmd->add_option("--series", fit_series, "series CSV")->required();
  fit_opts.attach(fit_cmd, false);
  fit_cmd->add_flag("--residuals", fit_residuals, "include residual sequences");
  fit_cmd->add_option("--out", fit_out, "output document (default stdout)");

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "ACF/PACF, Pearson residuals, in-sample metrics and order selection");
  std::string diag_series;
  std::string diag_out;
  std::string diag_plot;
  std::size_t diag_lag = 20;
  std::size_t diag_pmax = 0;
  detail::FitOptions diag_opts;
  diag->add_option("--series", diag_series, "series CSV")->required();
  diag_opts.attach(diag, false);
  diag->add_option("--max-lag", diag_lag, "largest ACF/PACF lag")->check(CLI::PositiveNumber);
  diag->add_option("--p-max", diag_pmax, "run order selection for p = 1..p_max");
  diag->add_option("--plot-csv", diag_plot, "write lag,acf,pacf rows to this CSV");
  diag->add_option("--out", diag_out, "output document (default stdout)");

  // forecast-eval
  auto* fc = app.add_subcommand("forecast-eval", "one-step out-of-sample evaluation");
  std::string fc_series;
  std::string fc_out;
  std::vector<std::size_t> fc_train;
  detail::FitOptions fc_opts;
  fc->add_option("--series", fc_series, "series CSV")->required();
  fc_opts.attach(fc, false);
  fc->add_option("--train-sizes", fc_train, "training lengths n_c, comma separated")->required()->delimiter(',');
  fc->add_option("--out", fc_out, "output document (default stdout)");

  // mc-study
  auto* mc = app.add_subcommand("mc-study", "replicated simulation and estimation");
  std::string mc_config;
  std::string mc_model;
  std::optional<std::size_t> mc_n;
  std::optional<std::size_t> mc_reps;
  std::optional<std::uint64_t> mc_seed;
  std::optional<std::size_t> mc_burn;
  std::optional<std::size_t> mc_workers;
  std::string mc_out;
  detail::FitOptions mc_opts;
  auto* mc_cfg_opt = mc->add_option("--config", mc_config, "study config (JSON)");
  auto* mc_model_opt = mc->add_option("--model", mc_model, "model config (JSON)");
  mc_cfg_opt->excludes(mc_model_opt);
  mc->add_option("--n", mc_n, "series length");
  mc->add_option("--reps", mc_reps, "replications");
  mc->add_option("--seed", mc_seed, "master seed");
  mc->add_option("--burn-in", mc_burn, "discarded initial steps");
  mc->add_option("--workers", mc_workers, "worker threads");
  mc_opts.attach(mc, false);
  mc->add_option("--out", mc_out, "output document (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << "rminar 1.0.0\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    report_error(err, kExitInput, "UsageError", e.what());
    return kExitInput;
  }

  try {
    if (sim->parsed()) {
      const ModelSpec spec = read_model_file(sim_model);
      Series s = simulate(spec, sim_n, sim_burn, sim_seed);
      s.csv_header = true;
      std::ostringstream os;
      write_series_csv(os, s);
      detail::emit(sim_out, out, os.str());
    } else if (ana->parsed()) {
      const ModelSpec spec = read_model_file(ana_model);
      const ValidationReport val = validate(spec);
      Json doc;
      doc["model"] = model_to_json(spec);
      Json conds;
      conds["coefficients_zero_mass"] = val.coefficients_zero_mass;
      conds["innovation_zero_mass"] = val.innovation_zero_mass;
      conds["everywhere_stationary"] = val.everywhere_stationary;
      conds["notes"] = val.notes;
      doc["conditions"] = conds;
      doc["stationarity"] = stationarity_json(stationarity_report(spec));
      if (spec.order() == 1) {
        const TailMode mode = spec.model_class == ModelClass::Multiplicative ? TailMode::ProductWithInnovation
                              : spec.model_class == ModelClass::AdditiveZ    ? TailMode::Absolute
                                                                             : TailMode::Raw;
        doc["tail"] = tail_json(tail_index(spec, mode, ana_tail_hi));
      } else {
        doc["tail"] = "none";
      }
      doc["lyapunov"] = lyapunov_json(lyapunov_mc(spec, ana_horizon, ana_reps, ana_seed));
      detail::emit(ana_out, out, detail::dump(doc));
    } else if (fit_cmd->parsed()) {
      const FitConfig cfg = fit_opts.build();
      const Series s = read_series_csv(fit_series);
      const FitResult fit = fit_model(s, cfg);
      Json doc = fit_json(fit, fit_residuals);
      doc["dispersion"] = detail::dispersion_json(fit);
      detail::emit(fit_out, out, detail::dump(doc));
    } else if (diag->parsed()) {
      const FitConfig cfg = diag_opts.build();
      const Series s = read_series_csv(diag_series);
      const FitResult fit = fit_model(s, cfg);
      const DiagnosticsReport rep = diagnose(s.values, fit, diag_lag);
      Json doc;
      doc["fit"] = fit_json(fit);
      doc["acf"] = num_array(rep.acf);
      doc["pacf"] = num_array(rep.pacf);
      doc["conf_band"] = num(rep.conf_band);
      doc["pearson_acf"] = num_array(rep.pearson_acf);
      doc["metrics"] = metrics_json(rep.metrics);
      if (diag_pmax > 0) {
        Json rows = Json::array();
        for (const auto& row : order_selection_report(s.values, diag_pmax, cfg)) {
          Json r;
          r["order"] = row.order;
          if (row.metrics) r["metrics"] = metrics_json(*row.metrics);
          else r["error"] = *row.error;
          rows.push_back(r);
        }
        doc["order_selection"] = rows;
      }
      if (!diag_plot.empty()) {
        std::ostringstream os;
        os << "lag,acf,pacf\n";
        os.precision(17);
        for (std::size_t k = 0; k < rep.acf.size(); ++k) os << k << ',' << rep.acf[k] << ',' << rep.pacf[k] << '\n';
        detail::emit(diag_plot, out, os.str());
      }
      detail::emit(diag_out, out, detail::dump(doc));
    } else if (fc->parsed()) {
      const FitConfig cfg = fc_opts.build();
      const Series s = read_series_csv(fc_series);
      Json rows = Json::array();
      for (const auto& r : rolling_forecast_eval(s.values, cfg, fc_train)) rows.push_back(forecast_json(r));
      Json doc;
      doc["class"] = std::string(to_string(cfg.model_class));
      doc["order"] = cfg.order;
      doc["evaluations"] = rows;
      detail::emit(fc_out, out, detail::dump(doc));
    } else if (mc->parsed()) {
      StudyConfig cfg;
      if (!mc_config.empty()) {
        for (const char* flag : {"--class", "--order", "--variance-link", "--lambda-star", "--theta-star",
                                 "--cascade-tol", "--cascade-max-iters"})
          if (mc->count(flag) > 0)
            fail(ErrorKind::InvalidSpec, std::string(flag) + " conflicts with --config; set it in the config's fit block");
        cfg = study_config_from_json(read_json_file(mc_config));
        if (mc_n) cfg.n = *mc_n;
        if (mc_reps) cfg.reps = *mc_reps;
        if (mc_seed) cfg.master_seed = *mc_seed;
        if (mc_burn) cfg.burn_in = *mc_burn;
      } else {
        if (mc_model.empty()) fail(ErrorKind::InvalidSpec, "mc-study needs --config or --model");
        if (!mc_n || !mc_reps || !mc_seed) fail(ErrorKind::InvalidSpec, "mc-study with --model needs --n, --reps and --seed");
        cfg.spec = read_model_file(mc_model);
        cfg.n = *mc_n;
        cfg.reps = *mc_reps;
        cfg.master_seed = *mc_seed;
        if (mc_burn) cfg.burn_in = *mc_burn;
        if (mc->count("--class") == 0) mc_opts.model_class = std::string(to_string(cfg.spec.model_class));
        if (mc->count("--order") == 0) mc_opts.order = cfg.spec.order();
        if (mc->count("--variance-link") == 0 && cfg.spec.model_class == ModelClass::Multiplicative)
          mc_opts.variance_link = "poisson";
        cfg.fit = mc_opts.build();
      }
      if (mc_workers) cfg.workers = *mc_workers;
      const StudyResult res = run_study(cfg);
      Json doc = study_json(res);
      doc["n"] = cfg.n;
      doc["reps"] = cfg.reps;
      doc["seed"] = cfg.master_seed;
      doc["workers"] = cfg.workers;
      detail::emit(mc_out, out, detail::dump(doc));
    }
  } catch (const Error& e) {
    const int code = exit_code_for(e.kind());
    report_error(err, code, to_string(e.kind()), e.message());
    return code;
  } catch (const std::exception& e) {
    report_error(err, kExitNumerical, "Internal", e.what());
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace rminar
