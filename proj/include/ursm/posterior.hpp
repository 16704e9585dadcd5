#pragma once

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

#include "ursm/common.hpp"
#include "ursm/gem.hpp"
#include "ursm/types.hpp"

namespace ursm {

/// Posterior observation probabilities E[S_il | data, theta]; equals 1 at
/// every positively observed entry. Small values flag likely dropouts.
struct DropoutPosterior {
  Eigen::MatrixXd prob;  // N x L
};

inline DropoutPosterior dropout_posterior(const FitResult& result) {
  check(result.stats.e_s.size() > 0,
        "dropout_posterior: fit carries no single-cell statistics");
  return DropoutPosterior{result.stats.e_s};
}

/// Dropout calls over the zero entries: an entry is called iff its count is
/// zero and its posterior observation probability falls below the threshold.
/// Lowering the threshold never adds calls.
inline ByteMatrix call_dropouts(const DropoutPosterior& posterior,
                                const CountMatrix& cells,
                                double threshold = 0.5) {
  check(threshold > 0.0 && threshold < 1.0,
        "call_dropouts: threshold must be in (0, 1)");
  check(posterior.prob.rows() == cells.rows() &&
            posterior.prob.cols() == cells.cols(),
        "call_dropouts: shape mismatch");
  ByteMatrix calls = ByteMatrix::Zero(cells.rows(), cells.cols());
  for (Eigen::Index l = 0; l < cells.cols(); ++l) {
    for (Eigen::Index i = 0; i < cells.rows(); ++i) {
      if (cells(i, l) == 0 && posterior.prob(i, l) < threshold) {
        calls(i, l) = 1;
      }
    }
  }
  return calls;
}

enum class Provenance : std::int8_t {
  kObserved = 0,
  kImputed = 1,
  kStructuralZero = 2,
};

/// Single-cell matrix with called dropouts replaced by their expected counts
/// A[i][G_l] * R_l. Observed entries and structural zeros pass through
/// unchanged; values are fractional unless rounding is requested.
struct ImputedMatrix {
  Eigen::MatrixXd values;  // N x L
  ByteMatrix provenance;   // Provenance codes
};

inline ImputedMatrix impute(const SingleCellCounts& cells,
                            const ByteMatrix& calls,
                            const ProfileMatrix& profile,
                            bool round_to_integer = false) {
  const Eigen::Index n = cells.counts.rows();
  const Eigen::Index l = cells.counts.cols();
  check(calls.rows() == n && calls.cols() == l, "impute: shape mismatch");
  check(profile.n_genes() == n, "impute: profile gene count mismatch");

  ImputedMatrix out;
  out.values.resize(n, l);
  out.provenance.resize(n, l);
  for (Eigen::Index c = 0; c < l; ++c) {
    const int g = cells.labels[c];
    const double depth = static_cast<double>(cells.depths[c]);
    for (Eigen::Index i = 0; i < n; ++i) {
      if (calls(i, c)) {
        check(cells.counts(i, c) == 0,
              "impute: dropout call at a positively observed entry");
        double v = profile.values(i, g) * depth;
        if (round_to_integer) v = std::round(v);
        out.values(i, c) = v;
        out.provenance(i, c) = static_cast<std::int8_t>(Provenance::kImputed);
      } else {
        out.values(i, c) = static_cast<double>(cells.counts(i, c));
        out.provenance(i, c) = static_cast<std::int8_t>(
            cells.counts(i, c) > 0 ? Provenance::kObserved
                                   : Provenance::kStructuralZero);
      }
    }
  }
  return out;
}

/// Inferred cell-type proportions per bulk sample: the posterior mean of W
/// for Gibbs fits, the MAP weights for the fast path.
struct Deconvolution {
  Eigen::MatrixXd proportions;      // K x M, simplex columns
  Eigen::VectorXd mean_proportions; // K, averaged over samples
};

inline Deconvolution deconvolve(const FitResult& result) {
  if (result.mode == FitMode::kSingleCellOnly) {
    throw std::invalid_argument(
        "deconvolve: the single-cell submodel has no bulk samples to "
        "deconvolve");
  }
  check(result.stats.has_bulk && result.stats.e_w.size() > 0,
        "deconvolve: fit carries no bulk statistics");
  Deconvolution out;
  out.proportions = result.stats.e_w;
  out.mean_proportions = out.proportions.rowwise().mean();
  return out;
}

}  // namespace ursm
