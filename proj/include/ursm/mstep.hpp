#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ursm/common.hpp"
#include "ursm/types.hpp"

namespace ursm {

struct MStepConfig {
  int max_grad_iters = 50;
  double initial_step = 1.0;
  double backtrack = 0.5;       // step-halving factor, in (0, 1)
  double armijo_c = 1e-4;       // sufficient-increase constant
  // Entries pinned near the positivity floor carry curvature of order
  // E[Ztilde]/eps_A^2, so the workable step can sit 40+ halvings below 1.
  int max_halvings = 60;
  double eps_a = 0.0;           // 0 = use ProfileMatrix::default_floor(N)
  double eps_alpha = 1e-3;
  double variance_floor = 1e-6;

  double resolved_eps_a(Eigen::Index n_genes) const {
    return eps_a > 0.0 ? eps_a
                       : ProfileMatrix::default_floor(static_cast<int>(n_genes));
  }

  void validate() const {
    check(max_grad_iters > 0, "MStepConfig: max_grad_iters must be positive");
    check(backtrack > 0.0 && backtrack < 1.0,
          "MStepConfig: backtracking factor must be in (0, 1)");
    check(initial_step > 0.0 && armijo_c >= 0.0 && max_halvings > 0,
          "MStepConfig: step parameters must be positive");
    check(eps_a >= 0.0 && eps_alpha > 0.0 && variance_floor > 0.0,
          "MStepConfig: floors must be positive");
  }
};

struct DropoutParams {
  double mu_kappa = 0.0;
  double sigma2_kappa = 0.0;
  double mu_tau = 0.0;
  double sigma2_tau = 0.0;
};

/// Closed-form update of the dropout-coefficient priors from posterior
/// moments: sample mean of E[kappa_l], then mean of E[(kappa_l - mu)^2]
/// expanded as E[kappa^2] - 2 mu E[kappa] + mu^2. Variances are floored.
inline DropoutParams update_dropout_params(const SufficientStats& stats,
                                           double variance_floor = 1e-6) {
  const auto l = stats.e_kappa.size();
  check(l > 0 && stats.n_draws > 0,
        "update_dropout_params: stats hold no retained draws");
  DropoutParams out;
  out.mu_kappa = stats.e_kappa.mean();
  out.mu_tau = stats.e_tau.mean();
  double vk = 0.0;
  double vt = 0.0;
  for (Eigen::Index i = 0; i < l; ++i) {
    vk += stats.e_kappa_sq[i] - 2.0 * out.mu_kappa * stats.e_kappa[i] +
          out.mu_kappa * out.mu_kappa;
    vt += stats.e_tau_sq[i] - 2.0 * out.mu_tau * stats.e_tau[i] +
          out.mu_tau * out.mu_tau;
  }
  out.sigma2_kappa = std::max(vk / static_cast<double>(l), variance_floor);
  out.sigma2_tau = std::max(vt / static_cast<double>(l), variance_floor);
  return out;
}

/// Euclidean projection onto the capped simplex
/// { u : sum u = 1, u_i >= eps } by sort, threshold search, shift, clamp.
inline Eigen::VectorXd project_capped_simplex(const Eigen::VectorXd& v,
                                              double eps) {
  const auto n = v.size();
  check(n > 0, "project_capped_simplex: empty vector");
  check(eps >= 0.0, "project_capped_simplex: eps must be nonnegative");
  check(eps * static_cast<double>(n) <= 1.0 + 1e-12,
        "project_capped_simplex: eps * N > 1 leaves an empty feasible set");

  std::vector<double> sorted(v.data(), v.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<double>());

  // rho = largest j whose shifted value stays above the cap.
  double prefix = 0.0;
  double lambda = 0.0;
  Eigen::Index rho = 0;
  double rho_prefix = 0.0;
  for (Eigen::Index j = 1; j <= n; ++j) {
    prefix += sorted[j - 1];
    const double shift =
        (1.0 - prefix - static_cast<double>(n - j) * eps) / static_cast<double>(j);
    if (sorted[j - 1] + shift > eps) {
      rho = j;
      rho_prefix = prefix;
    }
  }
  if (rho == 0) {
    // Only reachable when eps * N == 1: the set is the single point (eps,...).
    return Eigen::VectorXd::Constant(n, eps);
  }
  lambda = (1.0 - rho_prefix - static_cast<double>(n - rho) * eps) /
           static_cast<double>(rho);

  Eigen::VectorXd out(n);
  for (Eigen::Index i = 0; i < n; ++i) out[i] = std::max(v[i] + lambda, eps);
  return out;
}

/// Per-M-step aggregations of the sufficient statistics. Everything here is
/// fixed while the parameters move, so it is computed once per M-step.
struct ElboContext {
  bool has_bulk = false;
  int n_bulk = 0;
  Eigen::MatrixXd z_gene_type;   // N x K: sum_j E[Ztilde_ijk]
  Eigen::VectorXd logw_rowsum;   // K: sum_j E[log W_kj]
  double z_logw_cross = 0.0;     // sum_ijk E[Ztilde_ijk] E[log W_kj]

  Eigen::MatrixXd sy;            // N x K: sum_{l:G_l=k} E[S_il] Y_il
  Eigen::MatrixXd lin_coef;      // N x K: sum_{l:G_l=k} E[(S-1/2)tau - omega tau kappa]
  Eigen::MatrixXd quad_coef;     // N x K: sum_{l:G_l=k} E[omega tau^2]

  std::vector<std::vector<Eigen::Index>> cells_of_type;  // per cell type

  const SufficientStats* stats = nullptr;
  const Dataset* data = nullptr;
};

inline ElboContext make_elbo_context(const SufficientStats& stats,
                                     const Dataset& data) {
  ElboContext ctx;
  ctx.stats = &stats;
  ctx.data = &data;
  ctx.has_bulk = stats.has_bulk;
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index l = data.dims.n_cells;

  if (stats.has_bulk) {
    const Eigen::Index m = data.dims.n_bulk;
    ctx.n_bulk = static_cast<int>(m);
    ctx.z_gene_type = stats.ztilde_gene_type_sums(n, m, k);
    ctx.logw_rowsum = stats.e_log_w.rowwise().sum();
    const Eigen::MatrixXd z_sample_type = stats.ztilde_sample_type_sums(n, m, k);
    double cross = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      for (Eigen::Index t = 0; t < k; ++t) {
        cross += z_sample_type(j, t) * stats.e_log_w(t, j);
      }
    }
    ctx.z_logw_cross = cross;
  } else {
    ctx.z_gene_type = Eigen::MatrixXd::Zero(n, k);
    ctx.logw_rowsum = Eigen::VectorXd::Zero(k);
  }

  ctx.sy = Eigen::MatrixXd::Zero(n, k);
  ctx.lin_coef = Eigen::MatrixXd::Zero(n, k);
  ctx.quad_coef = Eigen::MatrixXd::Zero(n, k);
  ctx.cells_of_type.assign(k, {});
  for (Eigen::Index c = 0; c < l; ++c) {
    const int g = data.cells.labels[c];
    ctx.cells_of_type[g].push_back(c);
    for (Eigen::Index i = 0; i < n; ++i) {
      ctx.sy(i, g) += stats.e_s(i, c) *
                      static_cast<double>(data.cells.counts(i, c));
      ctx.lin_coef(i, g) +=
          stats.e_s_half_tau(i, c) - stats.e_omega_tau_kappa(i, c);
      ctx.quad_coef(i, g) += stats.e_omega_tau_sq(i, c);
    }
  }
  return ctx;
}

/// Evidence lower bound as a function of the parameters, for fixed posterior
/// expectations. Terms that involve neither the parameters nor the stored
/// stats (multinomial coefficients, kappa-only products) are omitted.
/// The Jensen anchor u_l = sum_i A[i][G_l] E[S_il] is recomputed from the
/// profile matrix being evaluated, keeping the bound tight at every iterate.
inline double elbo(const ModelParams& params, const ElboContext& ctx) {
  const Dataset& data = *ctx.data;
  const SufficientStats& stats = *ctx.stats;
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index l = data.dims.n_cells;
  const Eigen::MatrixXd& a = params.profile.values;

  double value = 0.0;

  if (ctx.has_bulk) {
    const double alpha_sum = params.alpha.sum();
    double dirichlet_norm = std::lgamma(alpha_sum);
    for (Eigen::Index t = 0; t < k; ++t) {
      dirichlet_norm -= std::lgamma(params.alpha[t]);
    }
    value += static_cast<double>(ctx.n_bulk) * dirichlet_norm;
    for (Eigen::Index t = 0; t < k; ++t) {
      value += (params.alpha[t] - 1.0) * ctx.logw_rowsum[t];
    }
    value += ctx.z_logw_cross;
    for (Eigen::Index t = 0; t < k; ++t) {
      for (Eigen::Index i = 0; i < n; ++i) {
        value += ctx.z_gene_type(i, t) * std::log(a(i, t));
      }
    }
  }

  for (Eigen::Index t = 0; t < k; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double aik = a(i, t);
      value += ctx.sy(i, t) * std::log(aik) + ctx.lin_coef(i, t) * aik -
               0.5 * ctx.quad_coef(i, t) * aik * aik;
    }
  }
  for (Eigen::Index c = 0; c < l; ++c) {
    const int g = data.cells.labels[c];
    double u = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) u += a(i, g) * stats.e_s(i, c);
    value -= static_cast<double>(data.cells.depths[c]) * (1.0 + std::log(u));
  }

  const double lc = static_cast<double>(l);
  value -= 0.5 * lc * (std::log(params.sigma2_kappa) +
                       std::log(params.sigma2_tau));
  double sq_k = 0.0;
  double sq_t = 0.0;
  for (Eigen::Index c = 0; c < l; ++c) {
    sq_k += stats.e_kappa_sq[c] - 2.0 * params.mu_kappa * stats.e_kappa[c] +
            params.mu_kappa * params.mu_kappa;
    sq_t += stats.e_tau_sq[c] - 2.0 * params.mu_tau * stats.e_tau[c] +
            params.mu_tau * params.mu_tau;
  }
  value -= sq_k / (2.0 * params.sigma2_kappa);
  value -= sq_t / (2.0 * params.sigma2_tau);
  return value;
}

/// The bound is additively separable across profile columns and the alpha
/// block, which lets each block run its own line search. These pieces sum
/// (with the parameter-free cross term and the dropout-prior block) to the
/// full bound above.

/// Terms of the bound that depend on column `k` of the profile.
inline double elbo_profile_column(const Eigen::VectorXd& column,
                                  const ElboContext& ctx, Eigen::Index k) {
  const Dataset& data = *ctx.data;
  const SufficientStats& stats = *ctx.stats;
  const Eigen::Index n = column.size();
  double value = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double aik = column[i];
    value += (ctx.z_gene_type(i, k) + ctx.sy(i, k)) * std::log(aik) +
             ctx.lin_coef(i, k) * aik - 0.5 * ctx.quad_coef(i, k) * aik * aik;
  }
  for (const Eigen::Index c : ctx.cells_of_type[k]) {
    double u = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) u += column[i] * stats.e_s(i, c);
    value -= static_cast<double>(data.cells.depths[c]) * (1.0 + std::log(u));
  }
  return value;
}

/// Terms of the bound that depend on the Dirichlet concentration.
inline double elbo_alpha_block(const Eigen::VectorXd& alpha,
                               const ElboContext& ctx) {
  if (!ctx.has_bulk || ctx.n_bulk == 0) return 0.0;
  double value = std::lgamma(alpha.sum());
  for (Eigen::Index t = 0; t < alpha.size(); ++t) {
    value -= std::lgamma(alpha[t]);
  }
  value *= static_cast<double>(ctx.n_bulk);
  for (Eigen::Index t = 0; t < alpha.size(); ++t) {
    value += (alpha[t] - 1.0) * ctx.logw_rowsum[t];
  }
  return value;
}

/// Gradient of the ELBO with respect to the profile matrix.
inline Eigen::MatrixXd grad_a(const ModelParams& params,
                              const ElboContext& ctx) {
  const Dataset& data = *ctx.data;
  const SufficientStats& stats = *ctx.stats;
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index l = data.dims.n_cells;
  const Eigen::MatrixXd& a = params.profile.values;

  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(n, k);
  for (Eigen::Index t = 0; t < k; ++t) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double aik = a(i, t);
      grad(i, t) = (ctx.z_gene_type(i, t) + ctx.sy(i, t)) / aik +
                   ctx.lin_coef(i, t) - ctx.quad_coef(i, t) * aik;
    }
  }
  // Depth-pressure term -E[S_il] R_l / u_l, accumulated per cell.
  for (Eigen::Index c = 0; c < l; ++c) {
    const int g = data.cells.labels[c];
    double u = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) u += a(i, g) * stats.e_s(i, c);
    const double scale = static_cast<double>(data.cells.depths[c]) / u;
    for (Eigen::Index i = 0; i < n; ++i) {
      grad(i, g) -= stats.e_s(i, c) * scale;
    }
  }
  return grad;
}

/// Gradient of the ELBO with respect to the Dirichlet concentration.
inline Eigen::VectorXd grad_alpha(const ModelParams& params,
                                  const ElboContext& ctx) {
  const auto k = params.alpha.size();
  if (!ctx.has_bulk || ctx.n_bulk == 0) return Eigen::VectorXd::Zero(k);
  const double m = static_cast<double>(ctx.n_bulk);
  const double psi_total = digamma(params.alpha.sum());
  Eigen::VectorXd grad(k);
  for (Eigen::Index t = 0; t < k; ++t) {
    grad[t] = ctx.logw_rowsum[t] + m * (psi_total - digamma(params.alpha[t]));
  }
  return grad;
}

struct MStepResult {
  ModelParams params;
  double elbo_value = 0.0;
  int n_iterations = 0;
  bool line_search_failed = false;
};

/// Projected gradient ascent on (A, alpha) with Armijo backtracking.
/// One gradient pass per iteration; the bound's additive separability lets
/// every profile column and the alpha block carry its own step size, so a
/// stiff column (entries pinned at the floor under heavy allocations)
/// cannot stall the rest. Columns project onto the capped simplex, alpha
/// clamps at its floor, and accepted steps never decrease the bound.
inline MStepResult backtracking_ascent(const ModelParams& start,
                                       const SufficientStats& stats,
                                       const Dataset& data,
                                       const MStepConfig& config) {
  config.validate();
  const ElboContext ctx = make_elbo_context(stats, data);
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const double eps_a = config.resolved_eps_a(n);

  MStepResult result;
  result.params = start;

  std::vector<double> column_value(k);
  for (Eigen::Index col = 0; col < k; ++col) {
    column_value[col] =
        elbo_profile_column(result.params.profile.values.col(col), ctx, col);
  }
  double alpha_value = elbo_alpha_block(result.params.alpha, ctx);
  std::vector<double> step_seed(k + 1, config.initial_step);

  for (int iter = 0; iter < config.max_grad_iters; ++iter) {
    const Eigen::MatrixXd ga = grad_a(result.params, ctx);
    const Eigen::VectorXd galpha = grad_alpha(result.params, ctx);
    if (ga.lpNorm<Eigen::Infinity>() == 0.0 &&
        galpha.lpNorm<Eigen::Infinity>() == 0.0) {
      break;  // exact stationary point
    }

    bool any_accept = false;
    bool any_effective = false;

    for (Eigen::Index col = 0; col < k; ++col) {
      double t = step_seed[col];
      // Moves whose predicted gain sits at rounding level count as absorbed.
      const double floor_col = 1e-14 * (1.0 + std::abs(column_value[col]));
      for (int h = 0; h <= config.max_halvings; ++h, t *= config.backtrack) {
        const Eigen::VectorXd trial = project_capped_simplex(
            result.params.profile.values.col(col) + t * ga.col(col), eps_a);
        const double inner =
            ga.col(col).dot(trial - result.params.profile.values.col(col));
        if (inner <= floor_col) continue;  // absorbed by the projection
        any_effective = true;
        const double value = elbo_profile_column(trial, ctx, col);
        if (value >= column_value[col] + config.armijo_c * inner) {
          result.params.profile.values.col(col) = trial;
          column_value[col] = value;
          step_seed[col] = std::min(config.initial_step, 2.0 * t);
          any_accept = true;
          break;
        }
      }
    }

    if (ctx.has_bulk && galpha.lpNorm<Eigen::Infinity>() > 0.0) {
      double t = step_seed[k];
      const double floor_alpha = 1e-14 * (1.0 + std::abs(alpha_value));
      for (int h = 0; h <= config.max_halvings; ++h, t *= config.backtrack) {
        const Eigen::VectorXd trial =
            (result.params.alpha + t * galpha).cwiseMax(config.eps_alpha);
        const double inner = galpha.dot(trial - result.params.alpha);
        if (inner <= floor_alpha) continue;
        any_effective = true;
        const double value = elbo_alpha_block(trial, ctx);
        if (value >= alpha_value + config.armijo_c * inner) {
          result.params.alpha = trial;
          alpha_value = value;
          step_seed[k] = std::min(config.initial_step, 2.0 * t);
          any_accept = true;
          break;
        }
      }
    }

    ++result.n_iterations;
    if (!any_accept) {
      // Either a projected stationary point (every step absorbed) or an
      // exhausted line search; keep the current iterate in both cases.
      result.line_search_failed = any_effective;
      break;
    }
  }
  result.elbo_value = elbo(result.params, ctx);
  return result;
}

/// Full M-step: closed-form dropout-parameter update followed by projected
/// gradient ascent on (A, alpha).
inline MStepResult m_step(const ModelParams& start,
                          const SufficientStats& stats, const Dataset& data,
                          const MStepConfig& config) {
  ModelParams params = start;
  const DropoutParams dp = update_dropout_params(stats, config.variance_floor);
  params.mu_kappa = dp.mu_kappa;
  params.sigma2_kappa = dp.sigma2_kappa;
  params.mu_tau = dp.mu_tau;
  params.sigma2_tau = dp.sigma2_tau;
  return backtracking_ascent(params, stats, data, config);
}

}  // namespace ursm
