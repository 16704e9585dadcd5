#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ursm/common.hpp"
#include "ursm/rng.hpp"
#include "ursm/samplers.hpp"
#include "ursm/types.hpp"

namespace ursm {

struct EStepConfig {
  int n_sweeps = 200;
  double burn_in_fraction = 0.2;
  int thinning = 1;
  bool debug_checks = false;  // revalidate caches after every sweep

  int burn_in() const {
    return static_cast<int>(n_sweeps * burn_in_fraction);
  }

  void validate() const {
    check(n_sweeps > 0, "EStepConfig: n_sweeps must be positive");
    check(burn_in_fraction >= 0.0 && burn_in_fraction < 1.0,
          "EStepConfig: burn_in_fraction must be in [0, 1)");
    check(burn_in() < n_sweeps, "EStepConfig: burn-in swallows every sweep");
    check(thinning >= 1, "EStepConfig: thinning must be >= 1");
  }
};

/// One Gibbs configuration plus the caches the sweeps maintain:
/// psi[i][l] = kappa_l + tau_l * A[i][G_l], and the per-cell running sum
/// u_s[l] = sum_i A[i][G_l] * S[i][l].
struct ChainState {
  LatentState latent;
  Eigen::MatrixXd psi;  // N x L
  Eigen::VectorXd u_s;  // L
};

namespace detail {

inline void refresh_psi_column(ChainState& chain, const Dataset& data,
                               const ModelParams& params, Eigen::Index l) {
  const int g = data.cells.labels[l];
  const Eigen::Index n = data.dims.n_genes;
  const double kappa = chain.latent.kappa[l];
  const double tau = chain.latent.tau[l];
  for (Eigen::Index i = 0; i < n; ++i) {
    chain.psi(i, l) = kappa + tau * params.profile.values(i, g);
  }
}

inline double recompute_u_s(const ChainState& chain, const Dataset& data,
                            const ModelParams& params, Eigen::Index l) {
  const int g = data.cells.labels[l];
  double u = 0.0;
  for (Eigen::Index i = 0; i < data.dims.n_genes; ++i) {
    if (chain.latent.s(i, l)) u += params.profile.values(i, g);
  }
  return u;
}

}  // namespace detail

/// Deterministic, feasible starting configuration: S = 1 everywhere,
/// (kappa, tau) at their prior means, W columns at alpha / sum(alpha),
/// and Ztilde drawn once from its conditional given W.
inline ChainState init_chain(const Dataset& data, const ModelParams& params,
                             std::uint64_t seed, std::uint64_t sweep_offset) {
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index l = data.dims.n_cells;
  const Eigen::Index m = data.dims.n_bulk;

  ChainState chain;
  chain.latent.s = ByteMatrix::Ones(n, l);
  chain.latent.kappa = Eigen::VectorXd::Constant(l, params.mu_kappa);
  chain.latent.tau = Eigen::VectorXd::Constant(l, params.mu_tau);
  chain.latent.omega = Eigen::MatrixXd::Constant(n, l, 0.25);
  chain.psi.resize(n, l);
  chain.u_s.resize(l);
  for (Eigen::Index c = 0; c < l; ++c) {
    detail::refresh_psi_column(chain, data, params, c);
    chain.u_s[c] = detail::recompute_u_s(chain, data, params, c);
  }

  if (data.has_bulk) {
    chain.latent.w.resize(k, m);
    const Eigen::VectorXd w0 = params.alpha / params.alpha.sum();
    for (Eigen::Index j = 0; j < m; ++j) chain.latent.w.col(j) = w0;
    chain.latent.ztilde.assign(static_cast<std::size_t>(n) * m * k, 0);

    std::vector<double> weights(k);
    std::vector<std::int64_t> draw(k);
    for (Eigen::Index j = 0; j < m; ++j) {
      RngStream rng(seed, {StreamKind::kBulkAllocation, static_cast<std::uint64_t>(j),
                           sweep_offset});
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::int64_t x = data.bulk.counts(i, j);
        if (x == 0) continue;
        double wsum = 0.0;
        for (Eigen::Index t = 0; t < k; ++t) {
          weights[t] = params.profile.values(i, t) * chain.latent.w(t, j);
          wsum += weights[t];
        }
        detail::multinomial_weights_draw(rng, x, weights.data(), wsum,
                                         static_cast<int>(k), draw.data());
        for (Eigen::Index t = 0; t < k; ++t) {
          chain.latent.ztilde_at(i, j, t, m, k) = draw[t];
        }
      }
    }
  }
  return chain;
}

// ---------------------------------------------------------------------------
// Per-unit updates. Each takes the stream for that (unit, sweep) so results
// are independent of scheduling order.
// ---------------------------------------------------------------------------

/// omega_il ~ PG(1, psi_il) for every gene of cell l.
inline void sample_omega_cell(ChainState& chain, const Dataset& data,
                              Eigen::Index l, RngStream& rng) {
  for (Eigen::Index i = 0; i < data.dims.n_genes; ++i) {
    chain.latent.omega(i, l) = pg_draw(rng, chain.psi(i, l));
  }
}

/// (kappa_l, tau_l) ~ N(m, V^{-1}) with the Polya-Gamma-augmented precision
///   V = [sum w + 1/s2k,  sum w*a; sum w*a,  sum w*a^2 + 1/s2t]
/// and mean V^{-1} (sum S - N/2 + mk/s2k, sum S*a - 1/2 + mt/s2t),
/// where a = A[i][G_l] and sums run over genes.
inline void sample_kappa_tau_cell(ChainState& chain, const Dataset& data,
                                  const ModelParams& params, Eigen::Index l,
                                  RngStream& rng) {
  const int g = data.cells.labels[l];
  const Eigen::Index n = data.dims.n_genes;
  double sw = 0.0, swa = 0.0, swaa = 0.0, ss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double a = params.profile.values(i, g);
    const double w = chain.latent.omega(i, l);
    sw += w;
    swa += w * a;
    swaa += w * a * a;
    if (chain.latent.s(i, l)) ss += 1.0;
  }
  Eigen::Matrix2d precision;
  precision << sw + 1.0 / params.sigma2_kappa, swa, swa,
      swaa + 1.0 / params.sigma2_tau;
  const Eigen::Vector2d rhs(
      ss - 0.5 * static_cast<double>(n) + params.mu_kappa / params.sigma2_kappa,
      chain.u_s[l] - 0.5 + params.mu_tau / params.sigma2_tau);
  const Eigen::Vector2d mean = precision.inverse() * rhs;
  const Eigen::Vector2d draw = mvn2_draw(rng, mean, precision);
  chain.latent.kappa[l] = draw[0];
  chain.latent.tau[l] = draw[1];
  detail::refresh_psi_column(chain, data, params, l);
}

/// Sequential scan of S_il over genes in fixed order. Entries with a positive
/// count stay at 1; zero-count entries flip with probability
///   logistic(psi_il + R_l * log(u' / (A[i][G_l] + u'))),
/// where u' excludes gene i from the running sum, which is updated after
/// every flip.
inline void sample_s_cell(ChainState& chain, const Dataset& data,
                          const ModelParams& params, Eigen::Index l,
                          RngStream& rng, bool debug_checks = false) {
  const int g = data.cells.labels[l];
  const Eigen::Index n = data.dims.n_genes;
  const double depth = static_cast<double>(data.cells.depths[l]);
  double u = chain.u_s[l];
  for (Eigen::Index i = 0; i < n; ++i) {
    if (data.cells.counts(i, l) > 0) continue;  // S pinned at 1
    const double a = params.profile.values(i, g);
    const double u_other = u - (chain.latent.s(i, l) ? a : 0.0);
    const double b =
        logistic(chain.psi(i, l) + depth * std::log(u_other / (a + u_other)));
    const std::int8_t snew = rng.bernoulli(b) ? 1 : 0;
    chain.latent.s(i, l) = snew;
    u = u_other + (snew ? a : 0.0);
  }
  const double recomputed = detail::recompute_u_s(chain, data, params, l);
  if (debug_checks && std::abs(u - recomputed) > 1e-10) {
    throw std::runtime_error(
        "sample_s_cell: incremental running sum drifted from its "
        "recomputed value");
  }
  chain.u_s[l] = recomputed;
}

/// Ztilde_ij ~ Multinomial(X_ij, A_i. * W_.j / sum_k A_ik W_kj) for sample j.
inline void sample_ztilde_sample(ChainState& chain, const Dataset& data,
                                 const ModelParams& params, Eigen::Index j,
                                 RngStream& rng) {
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index m = data.dims.n_bulk;
  std::vector<double> weights(k);
  std::vector<std::int64_t> draw(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::int64_t* slot = &chain.latent.ztilde[(i * m + j) * k];
    const std::int64_t x = data.bulk.counts(i, j);
    if (x == 0) {
      for (Eigen::Index t = 0; t < k; ++t) slot[t] = 0;
      continue;
    }
    double wsum = 0.0;
    for (Eigen::Index t = 0; t < k; ++t) {
      weights[t] = params.profile.values(i, t) * chain.latent.w(t, j);
      wsum += weights[t];
    }
    if (!(wsum > 0.0)) {
      throw std::runtime_error(
          "sample_ztilde: zero mixing mass (profile floor violated?)");
    }
    detail::multinomial_weights_draw(rng, x, weights.data(), wsum,
                                     static_cast<int>(k), draw.data());
    for (Eigen::Index t = 0; t < k; ++t) slot[t] = draw[t];
  }
}

/// W_.j ~ Dirichlet(alpha + sum_i Ztilde_ij).
inline void sample_w_sample(ChainState& chain, const Dataset& data,
                            const ModelParams& params, Eigen::Index j,
                            RngStream& rng) {
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index m = data.dims.n_bulk;
  std::vector<double> post(k);
  for (Eigen::Index t = 0; t < k; ++t) post[t] = params.alpha[t];
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::int64_t* slot = &chain.latent.ztilde[(i * m + j) * k];
    for (Eigen::Index t = 0; t < k; ++t) {
      post[t] += static_cast<double>(slot[t]);
    }
  }
  detail::dirichlet_draw_into(rng, post.data(), static_cast<int>(k),
                              &chain.latent.w(0, j));
}

// ---------------------------------------------------------------------------
// Whole-state updates (spec surface; used directly by tests).
// ---------------------------------------------------------------------------

inline void sample_omega(ChainState& chain, const Dataset& data,
                         std::uint64_t seed, std::uint64_t sweep) {
  for (Eigen::Index l = 0; l < data.dims.n_cells; ++l) {
    RngStream rng(seed, {StreamKind::kCellAux, static_cast<std::uint64_t>(l), sweep});
    sample_omega_cell(chain, data, l, rng);
  }
}

inline void sample_kappa_tau(ChainState& chain, const Dataset& data,
                             const ModelParams& params, std::uint64_t seed,
                             std::uint64_t sweep) {
  for (Eigen::Index l = 0; l < data.dims.n_cells; ++l) {
    RngStream rng(seed, {StreamKind::kCellCoef, static_cast<std::uint64_t>(l), sweep});
    sample_kappa_tau_cell(chain, data, params, l, rng);
  }
}

inline void sample_s(ChainState& chain, const Dataset& data,
                     const ModelParams& params, std::uint64_t seed,
                     std::uint64_t sweep, bool debug_checks = false) {
  for (Eigen::Index l = 0; l < data.dims.n_cells; ++l) {
    RngStream rng(seed, {StreamKind::kCellObs, static_cast<std::uint64_t>(l), sweep});
    sample_s_cell(chain, data, params, l, rng, debug_checks);
  }
}

inline void sample_ztilde(ChainState& chain, const Dataset& data,
                          const ModelParams& params, std::uint64_t seed,
                          std::uint64_t sweep) {
  for (Eigen::Index j = 0; j < data.dims.n_bulk; ++j) {
    RngStream rng(seed, {StreamKind::kBulkAllocation, static_cast<std::uint64_t>(j), sweep});
    sample_ztilde_sample(chain, data, params, j, rng);
  }
}

inline void sample_w(ChainState& chain, const Dataset& data,
                     const ModelParams& params, std::uint64_t seed,
                     std::uint64_t sweep) {
  for (Eigen::Index j = 0; j < data.dims.n_bulk; ++j) {
    RngStream rng(seed, {StreamKind::kBulkWeights, static_cast<std::uint64_t>(j), sweep});
    sample_w_sample(chain, data, params, j, rng);
  }
}

/// Consistency checks for the cached quantities; throws on drift.
inline void verify_chain_consistency(const ChainState& chain,
                                     const Dataset& data,
                                     const ModelParams& params) {
  for (Eigen::Index l = 0; l < data.dims.n_cells; ++l) {
    const int g = data.cells.labels[l];
    for (Eigen::Index i = 0; i < data.dims.n_genes; ++i) {
      const double expected = chain.latent.kappa[l] +
                              chain.latent.tau[l] * params.profile.values(i, g);
      if (std::abs(chain.psi(i, l) - expected) > 1e-10) {
        throw std::runtime_error("chain: psi cache inconsistent");
      }
      if (data.cells.counts(i, l) > 0 && !chain.latent.s(i, l)) {
        throw std::runtime_error("chain: S = 0 at a positive count");
      }
    }
    const double u = detail::recompute_u_s(chain, data, params, l);
    if (std::abs(chain.u_s[l] - u) > 1e-10) {
      throw std::runtime_error("chain: u_s cache inconsistent");
    }
  }
  if (data.has_bulk) {
    const Eigen::Index k = data.dims.n_cell_types;
    const Eigen::Index m = data.dims.n_bulk;
    for (Eigen::Index j = 0; j < m; ++j) {
      double colsum = 0.0;
      for (Eigen::Index t = 0; t < k; ++t) colsum += chain.latent.w(t, j);
      if (std::abs(colsum - 1.0) > 1e-9) {
        throw std::runtime_error("chain: W column off the simplex");
      }
      for (Eigen::Index i = 0; i < data.dims.n_genes; ++i) {
        std::int64_t total = 0;
        for (Eigen::Index t = 0; t < k; ++t) {
          total += chain.latent.ztilde_at(i, j, t, m, k);
        }
        if (total != data.bulk.counts(i, j)) {
          throw std::runtime_error("chain: Ztilde does not sum to X");
        }
      }
    }
  }
}

/// Runs the Gibbs E-step: n_sweeps full sweeps (per cell: omega, then
/// (kappa, tau), then S; per bulk sample: Ztilde, then W), discarding burn-in
/// and averaging the retained configurations into the sufficient statistics.
/// Joint-product stats are accumulated from per-draw products.
///
/// `sweep_offset` shifts the stream ids so that successive E-steps of an EM
/// run never reuse random numbers.
inline SufficientStats run_estep(const Dataset& data, const ModelParams& params,
                                 const EStepConfig& config, std::uint64_t seed,
                                 std::uint64_t sweep_offset = 0) {
  config.validate();
  const Eigen::Index n = data.dims.n_genes;
  const Eigen::Index k = data.dims.n_cell_types;
  const Eigen::Index l = data.dims.n_cells;
  const Eigen::Index m = data.dims.n_bulk;

  ChainState chain = init_chain(data, params, seed, sweep_offset);

  SufficientStats stats;
  stats.has_bulk = data.has_bulk;
  stats.e_s = Eigen::MatrixXd::Zero(n, l);
  stats.e_kappa = Eigen::VectorXd::Zero(l);
  stats.e_tau = Eigen::VectorXd::Zero(l);
  stats.e_kappa_sq = Eigen::VectorXd::Zero(l);
  stats.e_tau_sq = Eigen::VectorXd::Zero(l);
  stats.e_omega_tau_sq = Eigen::MatrixXd::Zero(n, l);
  stats.e_omega_tau_kappa = Eigen::MatrixXd::Zero(n, l);
  stats.e_s_half_tau = Eigen::MatrixXd::Zero(n, l);
  if (data.has_bulk) {
    stats.e_ztilde.assign(static_cast<std::size_t>(n) * m * k, 0.0);
    stats.e_log_w = Eigen::MatrixXd::Zero(k, m);
    stats.e_w = Eigen::MatrixXd::Zero(k, m);
  }

  const int burn = config.burn_in();
  int retained = 0;
  for (int s = 1; s <= config.n_sweeps; ++s) {
    const std::uint64_t sweep = sweep_offset + static_cast<std::uint64_t>(s);
    const bool keep = s > burn && (s - burn - 1) % config.thinning == 0;

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (Eigen::Index c = 0; c < l; ++c) {
      const auto unit = static_cast<std::uint64_t>(c);
      RngStream rng_aux(seed, {StreamKind::kCellAux, unit, sweep});
      sample_omega_cell(chain, data, c, rng_aux);
      RngStream rng_coef(seed, {StreamKind::kCellCoef, unit, sweep});
      sample_kappa_tau_cell(chain, data, params, c, rng_coef);
      RngStream rng_obs(seed, {StreamKind::kCellObs, unit, sweep});
      sample_s_cell(chain, data, params, c, rng_obs, config.debug_checks);

      if (keep) {
        const double kappa = chain.latent.kappa[c];
        const double tau = chain.latent.tau[c];
        stats.e_kappa[c] += kappa;
        stats.e_tau[c] += tau;
        stats.e_kappa_sq[c] += kappa * kappa;
        stats.e_tau_sq[c] += tau * tau;
        for (Eigen::Index i = 0; i < n; ++i) {
          const double omega = chain.latent.omega(i, c);
          const double s_val = chain.latent.s(i, c) ? 1.0 : 0.0;
          stats.e_s(i, c) += s_val;
          stats.e_omega_tau_sq(i, c) += omega * tau * tau;
          stats.e_omega_tau_kappa(i, c) += omega * tau * kappa;
          stats.e_s_half_tau(i, c) += (s_val - 0.5) * tau;
        }
      }
    }

    if (data.has_bulk) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
      for (Eigen::Index j = 0; j < m; ++j) {
        const auto unit = static_cast<std::uint64_t>(j);
        RngStream rng_z(seed, {StreamKind::kBulkAllocation, unit, sweep});
        sample_ztilde_sample(chain, data, params, j, rng_z);
        RngStream rng_w(seed, {StreamKind::kBulkWeights, unit, sweep});
        sample_w_sample(chain, data, params, j, rng_w);

        if (keep) {
          for (Eigen::Index t = 0; t < k; ++t) {
            const double w = chain.latent.w(t, j);
            stats.e_w(t, j) += w;
            stats.e_log_w(t, j) += std::log(std::max(w, 1e-300));
          }
          for (Eigen::Index i = 0; i < n; ++i) {
            const std::int64_t* slot = &chain.latent.ztilde[(i * m + j) * k];
            double* acc = &stats.e_ztilde[(i * m + j) * k];
            for (Eigen::Index t = 0; t < k; ++t) {
              acc[t] += static_cast<double>(slot[t]);
            }
          }
        }
      }
    }

    if (keep) ++retained;
    if (config.debug_checks) verify_chain_consistency(chain, data, params);
  }

  const double denom = static_cast<double>(retained);
  stats.n_draws = retained;
  stats.e_s /= denom;
  stats.e_kappa /= denom;
  stats.e_tau /= denom;
  stats.e_kappa_sq /= denom;
  stats.e_tau_sq /= denom;
  stats.e_omega_tau_sq /= denom;
  stats.e_omega_tau_kappa /= denom;
  stats.e_s_half_tau /= denom;
  if (data.has_bulk) {
    stats.e_log_w /= denom;
    stats.e_w /= denom;
    for (double& v : stats.e_ztilde) v /= denom;
  }
  // Observed entries are pinned at S = 1 by the sampler; keep the average
  // exact regardless of rounding in the division above.
  for (Eigen::Index c = 0; c < l; ++c) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (data.cells.counts(i, c) > 0) stats.e_s(i, c) = 1.0;
    }
  }
  return stats;
}

}  // namespace ursm
