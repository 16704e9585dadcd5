#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ursm/common.hpp"
#include "ursm/rng.hpp"
#include "ursm/samplers.hpp"
#include "ursm/types.hpp"

namespace ursm {

struct SimConfig {
  Dimensions dims{200, 3, 100, 150};
  std::vector<double> cell_type_props{0.3, 0.3, 0.4};
  Eigen::VectorXd alpha_true = (Eigen::VectorXd(3) << 1.0, 2.0, 3.0).finished();
  int n_marker = 10;        // marker genes per cell type
  int n_anti = 10;          // anti-marker genes per cell type
  int n_house = 30;         // house-keeping genes (shared across types)
  double kappa_mean = -1.0;
  double kappa_sd = 0.5;
  double tau_mean_factor = 1.5;   // mean of tau = factor * N
  double tau_sd_factor = 0.15;    // sd of tau = factor * N
  double bulk_depth_factor = 50.0;   // R_j ~ Poisson(factor * N)
  double sc_depth_factor = 2.0;      // single-cell depth mean = factor * N
  double sc_depth_dispersion = 2.0;  // variance mu + mu^2 / dispersion
  double profile_floor = 0.0;        // 0 = 1/(100 N)
  std::uint64_t seed = 0;

  void validate() const {
    dims.validate(true);
    check(static_cast<int>(cell_type_props.size()) == dims.n_cell_types,
          "SimConfig: one proportion per cell type required");
    double total = 0.0;
    for (double p : cell_type_props) {
      check(p > 0.0, "SimConfig: proportions must be positive");
      total += p;
    }
    check(std::abs(total - 1.0) <= 1e-9,
          "SimConfig: proportions must sum to 1");
    check(alpha_true.size() == dims.n_cell_types &&
              alpha_true.minCoeff() > 0.0,
          "SimConfig: alpha_true must be positive with one entry per type");
    check(n_marker >= 0 && n_anti >= 0 && n_house >= 0,
          "SimConfig: gene-role counts must be nonnegative");
    check((n_marker + n_anti) * dims.n_cell_types + n_house <= dims.n_genes,
          "SimConfig: gene roles exceed the number of genes");
    check(kappa_sd > 0.0 && tau_sd_factor > 0.0,
          "SimConfig: dropout scales must be positive");
    check(bulk_depth_factor > 0.0 && sc_depth_factor > 0.0 &&
              sc_depth_dispersion > 0.0,
          "SimConfig: depth parameters must be positive");
  }

  double resolved_floor() const {
    return profile_floor > 0.0
               ? profile_floor
               : ProfileMatrix::default_floor(dims.n_genes);
  }
};

enum class GeneRole : std::int8_t {
  kFree = 0,
  kMarker = 1,        // expressed in exactly one cell type
  kAntiMarker = 2,    // silent in exactly one cell type
  kHousekeeping = 3,  // identical expression across all cell types
};

struct GroundTruth {
  ProfileMatrix profile;      // exact zeros kept for role bookkeeping
  Eigen::MatrixXd w;          // K x M true mixing proportions
  ByteMatrix s;               // N x L true observability
  Eigen::VectorXd kappa;      // L
  Eigen::VectorXd tau;        // L
  std::vector<GeneRole> roles;     // N
  Eigen::VectorXi role_type;       // N: owning type for (anti-)markers, else -1
};

struct SimResult {
  Dataset data;
  GroundTruth truth;
};

namespace detail {

/// Largest-remainder assignment of L cells to types with the requested
/// proportions; cells are labeled in type order.
inline Eigen::VectorXi assign_labels(const std::vector<double>& props, int l) {
  const int k = static_cast<int>(props.size());
  std::vector<int> counts(k);
  std::vector<std::pair<double, int>> rema(k);
  int assigned = 0;
  for (int t = 0; t < k; ++t) {
    const double exact = props[t] * l;
    counts[t] = static_cast<int>(std::floor(exact));
    rema[t] = {exact - std::floor(exact), t};
    assigned += counts[t];
  }
  std::sort(rema.begin(), rema.end(), std::greater<>());
  for (int r = 0; assigned < l; ++r, ++assigned) counts[rema[r % k].second]++;

  Eigen::VectorXi labels(l);
  int pos = 0;
  for (int t = 0; t < k; ++t) {
    for (int c = 0; c < counts[t]; ++c) labels[pos++] = t;
  }
  return labels;
}

inline std::int64_t positive_poisson(RngStream& rng, double mean) {
  std::poisson_distribution<std::int64_t> pois(mean);
  for (;;) {
    const std::int64_t v = pois(rng);
    if (v > 0) return v;
  }
}

/// Negative binomial with mean mu and dispersion r (variance mu + mu^2/r),
/// drawn as a gamma-mixed Poisson; redrawn until positive since a depth of
/// zero is not a usable sample.
inline std::int64_t positive_neg_binomial(RngStream& rng, double mu,
                                          double r) {
  for (;;) {
    const double lambda = mu * rng.gamma(r) / r;
    std::poisson_distribution<std::int64_t> pois(lambda);
    const std::int64_t v = pois(rng);
    if (v > 0) return v;
  }
}

}  // namespace detail

/// Builds the ground-truth profile: log-normal entries, marker / anti-marker
/// zero patterns in disjoint gene blocks, a house-keeping block constant
/// across types and normalized to sum to N_h/N per column, remaining mass
/// 1 - N_h/N.
inline GroundTruth make_ground_truth_profile(const SimConfig& config,
                                             RngStream& rng) {
  const int n = config.dims.n_genes;
  const int k = config.dims.n_cell_types;

  GroundTruth truth;
  truth.roles.assign(n, GeneRole::kFree);
  truth.role_type = Eigen::VectorXi::Constant(n, -1);

  int pos = 0;
  for (int t = 0; t < k; ++t) {
    for (int g = 0; g < config.n_marker; ++g, ++pos) {
      truth.roles[pos] = GeneRole::kMarker;
      truth.role_type[pos] = t;
    }
  }
  for (int t = 0; t < k; ++t) {
    for (int g = 0; g < config.n_anti; ++g, ++pos) {
      truth.roles[pos] = GeneRole::kAntiMarker;
      truth.role_type[pos] = t;
    }
  }
  const int house_begin = pos;
  for (int g = 0; g < config.n_house; ++g, ++pos) {
    truth.roles[pos] = GeneRole::kHousekeeping;
  }
  const int house_end = pos;

  Eigen::MatrixXd a(n, k);
  for (int i = 0; i < n; ++i) {
    const double shared = std::exp(rng.normal());  // house-keeping value
    for (int t = 0; t < k; ++t) {
      switch (truth.roles[i]) {
        case GeneRole::kMarker:
          a(i, t) = truth.role_type[i] == t ? std::exp(rng.normal()) : 0.0;
          break;
        case GeneRole::kAntiMarker:
          a(i, t) = truth.role_type[i] == t ? 0.0 : std::exp(rng.normal());
          break;
        case GeneRole::kHousekeeping:
          a(i, t) = shared;
          break;
        case GeneRole::kFree:
          a(i, t) = std::exp(rng.normal());
          break;
      }
    }
  }

  const double house_mass =
      static_cast<double>(config.n_house) / static_cast<double>(n);
  for (int t = 0; t < k; ++t) {
    double house_sum = 0.0;
    double other_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (i >= house_begin && i < house_end) {
        house_sum += a(i, t);
      } else {
        other_sum += a(i, t);
      }
    }
    for (int i = 0; i < n; ++i) {
      if (i >= house_begin && i < house_end) {
        a(i, t) *= house_sum > 0.0 ? house_mass / house_sum : 0.0;
      } else {
        a(i, t) *= other_sum > 0.0 ? (1.0 - house_mass) / other_sum : 0.0;
      }
    }
  }
  truth.profile.values = std::move(a);
  return truth;
}

/// Draws one synthetic dataset with full ground truth. The generating profile
/// is the truth profile with zeros floored (and columns renormalized) so the
/// likelihood stays positive everywhere; the returned truth keeps the exact
/// zeros.
inline SimResult simulate(const SimConfig& config) {
  config.validate();
  const int n = config.dims.n_genes;
  const int k = config.dims.n_cell_types;
  const int l = config.dims.n_cells;
  const int m = config.dims.n_bulk;
  const double nd = static_cast<double>(n);

  RngStream profile_rng(config.seed, {StreamKind::kSimulate, 0, 0});
  SimResult result;
  result.truth = make_ground_truth_profile(config, profile_rng);

  // Generator copy of the profile with the positivity floor applied.
  Eigen::MatrixXd gen = result.truth.profile.values;
  const double floor = config.resolved_floor();
  for (int t = 0; t < k; ++t) {
    for (int i = 0; i < n; ++i) gen(i, t) = std::max(gen(i, t), floor);
    gen.col(t) /= gen.col(t).sum();
  }

  // Bulk branch: W ~ Dirichlet(alpha_true), X ~ Multinomial(R_j, A W).
  result.truth.w.resize(k, m);
  CountMatrix bulk(n, m);
  {
    std::vector<double> probs(n);
    std::vector<std::int64_t> draw(n);
    for (int j = 0; j < m; ++j) {
      RngStream rng(config.seed,
                    {StreamKind::kSimulate, static_cast<std::uint64_t>(j), 1});
      result.truth.w.col(j) = dirichlet_draw(rng, config.alpha_true);
      const std::int64_t depth =
          detail::positive_poisson(rng, config.bulk_depth_factor * nd);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        probs[i] = gen.row(i).dot(result.truth.w.col(j));
        total += probs[i];
      }
      detail::multinomial_weights_draw(rng, depth, probs.data(), total, n,
                                       draw.data());
      for (int i = 0; i < n; ++i) bulk(i, j) = draw[i];
    }
  }

  // Single-cell branch: dropout coefficients, observability, counts.
  const Eigen::VectorXi labels = detail::assign_labels(config.cell_type_props, l);
  result.truth.kappa.resize(l);
  result.truth.tau.resize(l);
  result.truth.s.resize(n, l);
  CountMatrix cells(n, l);
  {
    std::vector<double> probs(n);
    std::vector<std::int64_t> draw(n);
    for (int c = 0; c < l; ++c) {
      RngStream rng(config.seed,
                    {StreamKind::kSimulate, static_cast<std::uint64_t>(c), 2});
      const int g = labels[c];
      const double kappa = rng.normal(config.kappa_mean, config.kappa_sd);
      const double tau = rng.normal(config.tau_mean_factor * nd,
                                    config.tau_sd_factor * nd);
      result.truth.kappa[c] = kappa;
      result.truth.tau[c] = tau;

      double mass = 0.0;
      do {
        mass = 0.0;
        for (int i = 0; i < n; ++i) {
          const bool onoff = rng.bernoulli(logistic(kappa + tau * gen(i, g)));
          result.truth.s(i, c) = onoff ? 1 : 0;
          if (onoff) {
            probs[i] = gen(i, g);
            mass += probs[i];
          } else {
            probs[i] = 0.0;
          }
        }
      } while (mass <= 0.0);  // a cell that dropped every gene is unusable

      const std::int64_t depth = detail::positive_neg_binomial(
          rng, config.sc_depth_factor * nd, config.sc_depth_dispersion);
      detail::multinomial_weights_draw(rng, depth, probs.data(), mass, n,
                                       draw.data());
      for (int i = 0; i < n; ++i) cells(i, c) = draw[i];
    }
  }

  result.data = validate_dataset(bulk, cells, labels, k);
  return result;
}

}  // namespace ursm
