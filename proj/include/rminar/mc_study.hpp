#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "rminar/errors.hpp"
#include "rminar/estimation.hpp"
#include "rminar/model.hpp"
#include "rminar/random.hpp"

namespace rminar {

struct StudyConfig {
  ModelSpec spec;
  std::size_t n = 1000;
  std::size_t burn_in = 500;
  std::size_t reps = 100;
  std::uint64_t master_seed = 0;
  FitConfig fit;
  std::size_t workers = 1;
};

struct StudyResult {
  std::vector<std::string> names;  ///< theta2 components, then lambda2 components
  Vector truth;                    ///< generating values in the same order
  Vector mean;
  Vector stddev;
  Vector ase;                      ///< mean of the per-replication ASEs
  std::size_t successes = 0;
  std::size_t failures = 0;
  std::map<std::string, std::size_t> failure_kinds;
  double wall_seconds = 0.0;

  friend bool operator==(const StudyResult& a, const StudyResult& b) {
    return a.names == b.names && a.mean == b.mean && a.stddev == b.stddev && a.ase == b.ase &&
           a.successes == b.successes && a.failures == b.failures && a.failure_kinds == b.failure_kinds;
  }
};

/// Parameter labels for a fit of the given class and order.
inline std::vector<std::string> parameter_names(ModelClass cls, std::size_t p) {
  std::vector<std::string> names;
  names.emplace_back(cls == ModelClass::Multiplicative ? "omega" : "mu_eps");
  for (std::size_t i = 1; i <= p; ++i) names.push_back("phi_" + std::to_string(i));
  names.emplace_back("sigma2_eps");
  if (cls == ModelClass::Multiplicative) names.emplace_back("sigma2_omega");
  for (std::size_t i = 1; i <= p; ++i) names.push_back("sigma2_phi_" + std::to_string(i));
  return names;
}

namespace detail {

/// Streaming mean and sum of squared deviations per coordinate.
struct Welford {
  std::size_t count = 0;
  Vector mean;
  Vector m2;

  explicit Welford(std::size_t k = 0) : mean(k, 0.0), m2(k, 0.0) {}

  void add(std::span<const double> x) {
    ++count;
    const auto c = static_cast<double>(count);
    for (std::size_t j = 0; j < x.size(); ++j) {
      const double d = x[j] - mean[j];
      mean[j] += d / c;
      m2[j] += d * (x[j] - mean[j]);
    }
  }

  void merge(const Welford& o) {
    if (o.count == 0) return;
    if (count == 0) {
      *this = o;
      return;
    }
    const auto na = static_cast<double>(count);
    const auto nb = static_cast<double>(o.count);
    const double nt = na + nb;
    for (std::size_t j = 0; j < mean.size(); ++j) {
      const double d = o.mean[j] - mean[j];
      mean[j] += d * nb / nt;
      m2[j] += o.m2[j] + d * d * na * nb / nt;
    }
    count += o.count;
  }
};

struct ChunkResult {
  Welford estimates;
  Welford ases;
  std::map<std::string, std::size_t> failures;
};

inline constexpr std::size_t kChunk = 64;

}  // namespace detail

/// Replicated simulate-then-fit experiment. Replication r uses seed
/// mix_seed(master_seed, r). Replications are grouped in fixed chunks whose
/// accumulators merge in chunk order, so the result does not depend on the
/// number of workers.
inline StudyResult run_study(const StudyConfig& cfg) {
  validate(cfg.spec);
  const std::size_t p = cfg.fit.order;
  if (cfg.reps == 0) fail(ErrorKind::InvalidSpec, "study: reps must be >= 1");
  if (cfg.n <= 10 * (p + 1)) fail(ErrorKind::InvalidSpec, "study: n must exceed 10(p+1)");
  if (cfg.workers == 0) fail(ErrorKind::InvalidSpec, "study: workers must be >= 1");
  const auto start = std::chrono::steady_clock::now();

  StudyResult res;
  res.names = parameter_names(cfg.fit.model_class, p);
  const std::size_t k = res.names.size();
  if (cfg.spec.order() == p && cfg.spec.model_class == cfg.fit.model_class) {
    res.truth = true_theta(cfg.spec);
    const Vector la = true_lambda(cfg.spec);
    res.truth.insert(res.truth.end(), la.begin(), la.end());
  }

  const std::size_t chunks = (cfg.reps + detail::kChunk - 1) / detail::kChunk;
  std::vector<detail::ChunkResult> results(chunks, detail::ChunkResult{detail::Welford(k), detail::Welford(k), {}});
  std::atomic<std::size_t> next{0};

  auto work = [&]() {
    Vector est(k);
    Vector ase(k);
    for (std::size_t c = next.fetch_add(1); c < chunks; c = next.fetch_add(1)) {
      auto& out = results[c];
      const std::size_t lo = c * detail::kChunk;
      const std::size_t hi = std::min(cfg.reps, lo + detail::kChunk);
      for (std::size_t r = lo; r < hi; ++r) {
        try {
          const Series s = simulate(cfg.spec, cfg.n, cfg.burn_in, mix_seed(cfg.master_seed, r));
          const FitResult fit = fit_model(s, cfg.fit);
          std::copy(fit.theta2.begin(), fit.theta2.end(), est.begin());
          std::copy(fit.lambda2.begin(), fit.lambda2.end(), est.begin() + static_cast<std::ptrdiff_t>(fit.theta2.size()));
          std::copy(fit.ase_theta.begin(), fit.ase_theta.end(), ase.begin());
          std::copy(fit.ase_lambda.begin(), fit.ase_lambda.end(), ase.begin() + static_cast<std::ptrdiff_t>(fit.theta2.size()));
          out.estimates.add(est);
          out.ases.add(ase);
        } catch (const Error& e) {
          ++out.failures[std::string(to_string(e.kind()))];
        }
      }
    }
  };

  const std::size_t nthreads = std::min(cfg.workers, chunks);
  if (nthreads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }

  detail::Welford est(k);
  detail::Welford ase(k);
  for (const auto& c : results) {
    est.merge(c.estimates);
    ase.merge(c.ases);
    for (const auto& [kind, count] : c.failures) {
      res.failure_kinds[kind] += count;
      res.failures += count;
    }
  }
  res.successes = est.count;
  res.mean = est.mean;
  res.ase = ase.mean;
  res.stddev.assign(k, 0.0);
  if (est.count > 1)
    for (std::size_t j = 0; j < k; ++j) res.stddev[j] = std::sqrt(std::max(0.0, est.m2[j]) / static_cast<double>(est.count - 1));
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace rminar
