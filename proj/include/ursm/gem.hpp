#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ursm/baselines.hpp"
#include "ursm/common.hpp"
#include "ursm/gibbs.hpp"
#include "ursm/mstep.hpp"
#include "ursm/types.hpp"

namespace ursm {

enum class FitMode { kJoint, kSingleCellOnly, kMapFast };

inline const char* to_string(FitMode mode) {
  switch (mode) {
    case FitMode::kJoint: return "joint";
    case FitMode::kSingleCellOnly: return "sc-only";
    case FitMode::kMapFast: return "map-fast";
  }
  return "unknown";
}

struct FitConfig {
  EStepConfig estep;
  MStepConfig mstep;
  int max_em_iters = 100;
  double tolerance = 1e-4;  // relative ELBO change
  int patience = 3;         // consecutive sub-tolerance changes
  FitMode mode = FitMode::kJoint;
  std::uint64_t seed = 0;

  void validate() const {
    estep.validate();
    mstep.validate();
    check(max_em_iters > 0, "FitConfig: max_em_iters must be positive");
    check(tolerance > 0.0, "FitConfig: tolerance must be positive");
    check(patience >= 1, "FitConfig: patience must be >= 1");
  }
};

struct FitResult {
  ModelParams params;
  SufficientStats stats;
  std::vector<double> elbo_trace;
  std::vector<double> seconds_per_iteration;
  bool converged = false;
  FitMode mode = FitMode::kJoint;
};

/// True once the relative ELBO change has stayed below `tolerance` for
/// `patience` consecutive iterations.
inline bool convergence_check(const std::vector<double>& trace,
                              double tolerance, int patience = 3) {
  if (static_cast<int>(trace.size()) < patience + 1) return false;
  const std::size_t n = trace.size();
  for (int p = 0; p < patience; ++p) {
    const double prev = trace[n - 2 - p];
    const double next = trace[n - 1 - p];
    const double rel = std::abs(next - prev) / std::max(std::abs(prev), 1e-12);
    if (!(rel < tolerance)) return false;
  }
  return true;
}

/// Starting parameters: the depth-normalized sample-mean profile projected
/// onto the capped simplex, a flat Dirichlet concentration (or supplied
/// prior proportions), and dropout coefficients placed so the maximal
/// dropout probability starts at 60% and the average near 30%.
inline ModelParams init_params(const Dataset& data, const MStepConfig& mstep,
                               const Eigen::VectorXd& prior_proportions =
                                   Eigen::VectorXd()) {
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const double eps_a = mstep.resolved_eps_a(n);

  ModelParams params;
  const ProfileMatrix naive = naive_profile(data.cells, static_cast<int>(k));
  params.profile.values.resize(n, k);
  for (Eigen::Index t = 0; t < k; ++t) {
    params.profile.values.col(t) =
        project_capped_simplex(naive.values.col(t), eps_a);
  }

  if (prior_proportions.size() > 0) {
    check(prior_proportions.size() == k,
          "init_params: prior proportions length must equal n_cell_types");
    check(prior_proportions.minCoeff() >= mstep.eps_alpha,
          "init_params: prior proportions below the alpha floor");
    params.alpha = prior_proportions;
  } else {
    params.alpha = Eigen::VectorXd::Ones(k);
  }

  const double naive_grand_mean = naive.values.mean();
  params.mu_kappa = logit(0.4);
  params.mu_tau = (logit(0.7) - params.mu_kappa) / naive_grand_mean;
  params.sigma2_kappa = 0.5;
  params.sigma2_tau = (0.1 * params.mu_tau) * (0.1 * params.mu_tau);
  params.validate(eps_a, mstep.eps_alpha);
  return params;
}

/// One fixed-point update of the bulk mixing weights at the posterior mode:
///   W_kj <- normalize_k( W_kj * sum_i X_ij A_ik / (AW)_ij + alpha_k - 1 ).
/// Values pushed negative by alpha_k < 1 are clamped at 1e-12 before
/// normalization. With alpha = 1 this is exactly the divergence-loss
/// multiplicative update for the weights factor.
inline Eigen::MatrixXd map_w_update(const Eigen::MatrixXd& w,
                                    const CountMatrix& x,
                                    const Eigen::MatrixXd& a,
                                    const Eigen::VectorXd& alpha) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = x.cols();
  const Eigen::Index k = a.cols();
  check(w.rows() == k && w.cols() == m && a.rows() == n &&
            alpha.size() == k,
        "map_w_update: shape mismatch");

  Eigen::MatrixXd out(k, m);
  std::vector<double> acc(k);
  for (Eigen::Index j = 0; j < m; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      double denom = 0.0;
      for (Eigen::Index t = 0; t < k; ++t) denom += a(i, t) * w(t, j);
      if (denom <= 0.0) {
        throw std::runtime_error("map_w_update: zero reconstruction mass");
      }
      const double scaled = static_cast<double>(x(i, j)) / denom;
      for (Eigen::Index t = 0; t < k; ++t) acc[t] += a(i, t) * scaled;
    }
    double colsum = 0.0;
    for (Eigen::Index t = 0; t < k; ++t) {
      out(t, j) = std::max(w(t, j) * acc[t] + (alpha[t] - 1.0), 1e-12);
      colsum += out(t, j);
    }
    for (Eigen::Index t = 0; t < k; ++t) out(t, j) /= colsum;
  }
  return out;
}

namespace detail {

inline Dataset single_cell_view(const Dataset& data) {
  Dataset view;
  view.cells = data.cells;
  view.dims = data.dims;
  view.dims.n_bulk = 0;
  view.has_bulk = false;
  return view;
}

/// Plug-in bulk statistics for the MAP fast path: E[Ztilde] at its expected
/// allocation under (A, W), E[log W] and E[W] at the MAP point.
inline void fill_bulk_stats_from_map(SufficientStats& stats,
                                     const Dataset& data,
                                     const Eigen::MatrixXd& a,
                                     const Eigen::MatrixXd& w) {
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index m = data.dims.n_bulk;
  const Eigen::Index k = data.dims.n_cell_types;
  stats.has_bulk = true;
  stats.e_ztilde.assign(static_cast<std::size_t>(n) * m * k, 0.0);
  stats.e_w = w;
  stats.e_log_w.resize(k, m);
  for (Eigen::Index j = 0; j < m; ++j) {
    for (Eigen::Index t = 0; t < k; ++t) {
      stats.e_log_w(t, j) = std::log(std::max(w(t, j), 1e-300));
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::int64_t x = data.bulk.counts(i, j);
      if (x == 0) continue;
      double denom = 0.0;
      for (Eigen::Index t = 0; t < k; ++t) denom += a(i, t) * w(t, j);
      double* slot = &stats.e_ztilde[(i * m + j) * k];
      for (Eigen::Index t = 0; t < k; ++t) {
        slot[t] = static_cast<double>(x) * a(i, t) * w(t, j) / denom;
      }
    }
  }
}

template <typename EStepFn>
FitResult run_em_loop(const Dataset& data, const FitConfig& config,
                      FitMode mode, EStepFn&& estep_fn) {
  config.validate();
  FitResult result;
  result.mode = mode;
  result.params = init_params(data, config.mstep);

  for (int iter = 0; iter < config.max_em_iters; ++iter) {
    const auto t0 = std::chrono::steady_clock::now();
    result.stats = estep_fn(result.params, iter);
    const MStepResult m = m_step(result.params, result.stats, data,
                                 config.mstep);
    result.params = m.params;
    const auto t1 = std::chrono::steady_clock::now();
    result.seconds_per_iteration.push_back(
        std::chrono::duration<double>(t1 - t0).count());

    if (!std::isfinite(m.elbo_value)) {
      throw std::runtime_error(
          "fit: ELBO became non-finite at EM iteration " +
          std::to_string(iter) + "; parameters left the feasible region");
    }
    result.elbo_trace.push_back(m.elbo_value);
    if (convergence_check(result.elbo_trace, config.tolerance,
                          config.patience)) {
      result.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace detail

/// Joint Gibbs-EM fit on bulk + single-cell data.
inline FitResult fit_gem(const Dataset& data, const FitConfig& config) {
  check(data.has_bulk, "fit_gem: dataset has no bulk samples; use the "
                       "single-cell submodel instead");
  const std::uint64_t stride =
      static_cast<std::uint64_t>(config.estep.n_sweeps) + 1;
  return detail::run_em_loop(
      data, config, FitMode::kJoint,
      [&](const ModelParams& params, int iter) {
        return run_estep(data, params, config.estep, config.seed,
                         static_cast<std::uint64_t>(iter) * stride);
      });
}

/// Single-cell submodel: the same loop with every bulk term absent.
/// Never reads bulk counts; alpha is left at its starting value.
inline FitResult fit_single_cell_only(const Dataset& data,
                                      const FitConfig& config) {
  const Dataset view = detail::single_cell_view(data);
  const std::uint64_t stride =
      static_cast<std::uint64_t>(config.estep.n_sweeps) + 1;
  return detail::run_em_loop(
      view, config, FitMode::kSingleCellOnly,
      [&](const ModelParams& params, int iter) {
        return run_estep(view, params, config.estep, config.seed,
                         static_cast<std::uint64_t>(iter) * stride);
      });
}

/// MAP fast path: the bulk Gibbs E-step is replaced by a single fixed-point
/// update of W per EM iteration (warm-started from the previous iteration),
/// with plug-in values for the bulk expectations. The single-cell E-step is
/// unchanged.
inline FitResult fit_map_fast(const Dataset& data, const FitConfig& config) {
  check(data.has_bulk, "fit_map_fast: dataset has no bulk samples");
  const Dataset view = detail::single_cell_view(data);
  const std::uint64_t stride =
      static_cast<std::uint64_t>(config.estep.n_sweeps) + 1;

  Eigen::MatrixXd w;
  return detail::run_em_loop(
      data, config, FitMode::kMapFast,
      [&](const ModelParams& params, int iter) {
        if (iter == 0) {
          w.resize(data.dims.n_cell_types, data.dims.n_bulk);
          const Eigen::VectorXd w0 = params.alpha / params.alpha.sum();
          for (Eigen::Index j = 0; j < w.cols(); ++j) w.col(j) = w0;
        }
        SufficientStats stats = run_estep(view, params, config.estep,
                                          config.seed,
                                          static_cast<std::uint64_t>(iter) *
                                              stride);
        w = map_w_update(w, data.bulk.counts, params.profile.values,
                         params.alpha);
        detail::fill_bulk_stats_from_map(stats, data, params.profile.values,
                                         w);
        return stats;
      });
}

/// Mode dispatch used by the CLI.
inline FitResult fit(const Dataset& data, const FitConfig& config) {
  switch (config.mode) {
    case FitMode::kJoint: return fit_gem(data, config);
    case FitMode::kSingleCellOnly: return fit_single_cell_only(data, config);
    case FitMode::kMapFast: return fit_map_fast(data, config);
  }
  throw std::logic_error("fit: unknown mode");
}

}  // namespace ursm
