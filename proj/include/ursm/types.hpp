#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ursm/common.hpp"

namespace ursm {

using CountMatrix = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>;
using CountVector = Eigen::VectorX<std::int64_t>;
using ByteMatrix = Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic>;

/// Problem sizes: N genes, K cell types, L single cells, M bulk samples.
struct Dimensions {
  int n_genes = 0;
  int n_cell_types = 0;
  int n_cells = 0;
  int n_bulk = 0;

  void validate(bool require_bulk = true) const {
    check(n_genes > 0, "Dimensions: n_genes must be positive");
    check(n_cell_types > 0, "Dimensions: n_cell_types must be positive");
    check(n_cells > 0, "Dimensions: n_cells must be positive");
    if (require_bulk) {
      check(n_bulk > 0, "Dimensions: n_bulk must be positive");
    } else {
      check(n_bulk >= 0, "Dimensions: n_bulk must be nonnegative");
    }
    check(n_cell_types <= n_genes,
          "Dimensions: more cell types than genes is not identifiable");
  }
};

/// N x K column-stochastic matrix of relative expression per cell type.
/// Shared by the bulk and single-cell branches of the model.
struct ProfileMatrix {
  Eigen::MatrixXd values;

  /// Scale-aware positivity floor: column entries average 1/N, so the floor
  /// sits two orders of magnitude below that.
  static double default_floor(int n_genes) { return 1.0 / (100.0 * n_genes); }

  Eigen::Index n_genes() const { return values.rows(); }
  Eigen::Index n_cell_types() const { return values.cols(); }

  void validate(double floor) const {
    check(values.size() > 0, "ProfileMatrix: empty");
    check(floor > 0.0, "ProfileMatrix: floor must be positive");
    for (Eigen::Index k = 0; k < values.cols(); ++k) {
      double sum = 0.0;
      for (Eigen::Index i = 0; i < values.rows(); ++i) {
        const double a = values(i, k);
        if (!(a >= floor) || !std::isfinite(a)) {
          throw std::invalid_argument(
              "ProfileMatrix: entry below positivity floor at gene " +
              std::to_string(i) + ", type " + std::to_string(k));
        }
        sum += a;
      }
      if (std::abs(sum - 1.0) > 1e-9) {
        throw std::invalid_argument("ProfileMatrix: column " +
                                    std::to_string(k) +
                                    " does not sum to 1 (sum=" +
                                    std::to_string(sum) + ")");
      }
    }
  }
};

/// Observed bulk counts (N x M) with per-sample sequencing depths.
/// Depths are always recomputed from the matrix, never trusted from metadata.
struct BulkCounts {
  CountMatrix counts;
  CountVector depths;
};

/// Observed single-cell counts (N x L) with per-cell depths and type labels.
/// Labels are 0-based internally.
struct SingleCellCounts {
  CountMatrix counts;
  CountVector depths;
  Eigen::VectorXi labels;
};

/// A validated joint dataset. `has_bulk == false` represents the single-cell
/// submodel, in which case bulk is empty and dims.n_bulk == 0.
struct Dataset {
  BulkCounts bulk;
  SingleCellCounts cells;
  Dimensions dims;
  bool has_bulk = true;
};

/// The parameters maximized by the M-step.
struct ModelParams {
  ProfileMatrix profile;
  Eigen::VectorXd alpha;
  double mu_kappa = 0.0;
  double sigma2_kappa = 1.0;
  double mu_tau = 0.0;
  double sigma2_tau = 1.0;

  void validate(double eps_a, double eps_alpha) const {
    profile.validate(eps_a);
    check(alpha.size() == profile.n_cell_types(),
          "ModelParams: alpha length does not match profile columns");
    for (Eigen::Index k = 0; k < alpha.size(); ++k) {
      check(alpha[k] >= eps_alpha && std::isfinite(alpha[k]),
            "ModelParams: alpha below floor");
    }
    check(std::isfinite(mu_kappa) && std::isfinite(mu_tau),
          "ModelParams: non-finite dropout location");
    check(sigma2_kappa > 0.0 && sigma2_tau > 0.0,
          "ModelParams: dropout variances must be strictly positive");
  }
};

/// One Gibbs configuration of all latent variables.
struct LatentState {
  Eigen::MatrixXd w;                  // K x M, simplex columns
  std::vector<std::int64_t> ztilde;   // N*M*K read allocations, (i*M+j)*K+k
  ByteMatrix s;                       // N x L observability indicators
  Eigen::VectorXd kappa;              // L
  Eigen::VectorXd tau;                // L
  Eigen::MatrixXd omega;              // N x L Polya-Gamma auxiliaries

  std::int64_t& ztilde_at(Eigen::Index i, Eigen::Index j, Eigen::Index k,
                          Eigen::Index n_bulk, Eigen::Index n_types) {
    return ztilde[(i * n_bulk + j) * n_types + k];
  }
  std::int64_t ztilde_at(Eigen::Index i, Eigen::Index j, Eigen::Index k,
                         Eigen::Index n_bulk, Eigen::Index n_types) const {
    return ztilde[(i * n_bulk + j) * n_types + k];
  }
};

/// Posterior-expectation accumulators produced by the E-step. Joint-product
/// entries (omega*tau^2, omega*tau*kappa, (S-1/2)*tau) are averages of
/// per-draw products, not products of averages.
struct SufficientStats {
  bool has_bulk = true;
  int n_draws = 0;

  // bulk block
  std::vector<double> e_ztilde;  // N*M*K, (i*M+j)*K+k
  Eigen::MatrixXd e_log_w;       // K x M
  Eigen::MatrixXd e_w;           // K x M

  // single-cell block
  Eigen::MatrixXd e_s;                 // N x L
  Eigen::VectorXd e_kappa;             // L
  Eigen::VectorXd e_tau;               // L
  Eigen::VectorXd e_kappa_sq;          // L
  Eigen::VectorXd e_tau_sq;            // L
  Eigen::MatrixXd e_omega_tau_sq;      // N x L
  Eigen::MatrixXd e_omega_tau_kappa;   // N x L
  Eigen::MatrixXd e_s_half_tau;        // N x L

  double e_ztilde_at(Eigen::Index i, Eigen::Index j, Eigen::Index k,
                     Eigen::Index n_bulk, Eigen::Index n_types) const {
    return e_ztilde[(i * n_bulk + j) * n_types + k];
  }

  /// Sum_j E[Ztilde_ijk], the N x K accumulation entering the A gradient.
  Eigen::MatrixXd ztilde_gene_type_sums(Eigen::Index n_genes,
                                        Eigen::Index n_bulk,
                                        Eigen::Index n_types) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_genes, n_types);
    for (Eigen::Index i = 0; i < n_genes; ++i) {
      for (Eigen::Index j = 0; j < n_bulk; ++j) {
        const double* cell = &e_ztilde[(i * n_bulk + j) * n_types];
        for (Eigen::Index k = 0; k < n_types; ++k) out(i, k) += cell[k];
      }
    }
    return out;
  }

  /// Sum_i E[Ztilde_ijk], the M x K accumulation entering the ELBO.
  Eigen::MatrixXd ztilde_sample_type_sums(Eigen::Index n_genes,
                                          Eigen::Index n_bulk,
                                          Eigen::Index n_types) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n_bulk, n_types);
    for (Eigen::Index i = 0; i < n_genes; ++i) {
      for (Eigen::Index j = 0; j < n_bulk; ++j) {
        const double* cell = &e_ztilde[(i * n_bulk + j) * n_types];
        for (Eigen::Index k = 0; k < n_types; ++k) out(j, k) += cell[k];
      }
    }
    return out;
  }
};

/// Classification of single-cell matrix entries given observability draws.
enum class ZeroClass : std::int8_t {
  kObserved = 0,        // Y > 0
  kStructuralZero = 1,  // Y = 0, S = 1 (gene truly unexpressed)
  kDropout = 2,         // S = 0 (transcript missed in sequencing)
};

struct ZeroPartition {
  ByteMatrix classes;  // entries hold ZeroClass values
  std::int64_t n_observed = 0;
  std::int64_t n_structural = 0;
  std::int64_t n_dropout = 0;
};

/// Validates raw joint data and returns a dataset with recomputed depths.
/// Pass an empty bulk matrix (0 x 0) to validate a single-cell-only dataset.
inline Dataset validate_dataset(const CountMatrix& bulk,
                                const CountMatrix& cells,
                                const Eigen::VectorXi& labels,
                                int n_cell_types) {
  Dataset out;
  out.has_bulk = bulk.size() > 0;
  check(cells.size() > 0, "validate_dataset: single-cell matrix is empty");
  check(n_cell_types > 0, "validate_dataset: n_cell_types must be positive");

  const Eigen::Index n = cells.rows();
  const Eigen::Index l = cells.cols();
  check(labels.size() == l,
        "validate_dataset: one label per cell is required (got " +
            std::to_string(labels.size()) + " labels for " +
            std::to_string(l) + " cells)");
  if (out.has_bulk) {
    check(bulk.rows() == n,
          "validate_dataset: bulk and single-cell matrices must share the "
          "same gene list and ordering");
  }

  out.dims.n_genes = static_cast<int>(n);
  out.dims.n_cell_types = n_cell_types;
  out.dims.n_cells = static_cast<int>(l);
  out.dims.n_bulk = out.has_bulk ? static_cast<int>(bulk.cols()) : 0;
  out.dims.validate(out.has_bulk);

  auto scan = [](const CountMatrix& m, const char* what) {
    CountVector depths(m.cols());
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      std::int64_t total = 0;
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        const std::int64_t v = m(i, j);
        if (v < 0) {
          throw std::invalid_argument(std::string("validate_dataset: negative ")
                                      + what + " count at row " +
                                      std::to_string(i) + ", column " +
                                      std::to_string(j));
        }
        total += v;
      }
      if (total == 0) {
        throw std::invalid_argument(std::string("validate_dataset: ") + what +
                                    " column " + std::to_string(j) +
                                    " has zero sequencing depth");
      }
      depths[j] = total;
    }
    return depths;
  };

  out.cells.counts = cells;
  out.cells.depths = scan(cells, "single-cell");
  out.cells.labels = labels;
  for (Eigen::Index c = 0; c < l; ++c) {
    if (labels[c] < 0 || labels[c] >= n_cell_types) {
      throw std::invalid_argument("validate_dataset: cell " +
                                  std::to_string(c) + " has label " +
                                  std::to_string(labels[c]) +
                                  " outside [0, " +
                                  std::to_string(n_cell_types) + ")");
    }
  }
  if (out.has_bulk) {
    out.bulk.counts = bulk;
    out.bulk.depths = scan(bulk, "bulk");
  }
  return out;
}

/// P(S_il = 1) = logistic(kappa_l + tau_l * A[i][k]): the probability that
/// gene i is properly amplified in a cell of type k with dropout coefficients
/// (kappa_l, tau_l). Lowly expressed genes drop out more often.
inline double observation_prob(const ProfileMatrix& profile, double kappa,
                               double tau, Eigen::Index gene,
                               Eigen::Index cell_type) {
  check(std::isfinite(kappa) && std::isfinite(tau),
        "observation_prob: non-finite dropout coefficients");
  check(gene >= 0 && gene < profile.n_genes() && cell_type >= 0 &&
            cell_type < profile.n_cell_types(),
        "observation_prob: index out of range");
  return logistic(kappa + tau * profile.values(gene, cell_type));
}

/// Partitions all (gene, cell) entries into observed / structural zero /
/// dropout given an observability matrix consistent with the counts.
inline ZeroPartition classify_zeros(const CountMatrix& cells,
                                    const ByteMatrix& s) {
  check(cells.rows() == s.rows() && cells.cols() == s.cols(),
        "classify_zeros: shape mismatch");
  ZeroPartition out;
  out.classes.resize(cells.rows(), cells.cols());
  for (Eigen::Index l = 0; l < cells.cols(); ++l) {
    for (Eigen::Index i = 0; i < cells.rows(); ++i) {
      if (cells(i, l) > 0) {
        if (s(i, l) == 0) {
          throw std::invalid_argument(
              "classify_zeros: S = 0 with a positive count at gene " +
              std::to_string(i) + ", cell " + std::to_string(l));
        }
        out.classes(i, l) = static_cast<std::int8_t>(ZeroClass::kObserved);
        ++out.n_observed;
      } else if (s(i, l) != 0) {
        out.classes(i, l) =
            static_cast<std::int8_t>(ZeroClass::kStructuralZero);
        ++out.n_structural;
      } else {
        out.classes(i, l) = static_cast<std::int8_t>(ZeroClass::kDropout);
        ++out.n_dropout;
      }
    }
  }
  return out;
}

}  // namespace ursm
