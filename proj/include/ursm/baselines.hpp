#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "ursm/common.hpp"
#include "ursm/rng.hpp"
#include "ursm/types.hpp"

namespace ursm {

/// Per-type sample mean of depth-normalized single-cell columns:
///   A_ik = (1 / #{l: G_l = k}) * sum_{l: G_l = k} Y_il / R_l.
/// Columns sum to 1 automatically. Biased under dropout; used as a baseline
/// and as the starting value for the EM fits.
inline ProfileMatrix naive_profile(const SingleCellCounts& cells,
                                   int n_cell_types) {
  const Eigen::Index n = cells.counts.rows();
  const Eigen::Index l = cells.counts.cols();
  check(n_cell_types > 0, "naive_profile: n_cell_types must be positive");
  check(cells.depths.size() == l && cells.labels.size() == l,
        "naive_profile: depths/labels do not match the matrix");

  ProfileMatrix out;
  out.values = Eigen::MatrixXd::Zero(n, n_cell_types);
  std::vector<std::int64_t> type_counts(n_cell_types, 0);
  for (Eigen::Index c = 0; c < l; ++c) {
    const int g = cells.labels[c];
    check(g >= 0 && g < n_cell_types, "naive_profile: label out of range");
    ++type_counts[g];
    const double depth = static_cast<double>(cells.depths[c]);
    for (Eigen::Index i = 0; i < n; ++i) {
      out.values(i, g) += static_cast<double>(cells.counts(i, c)) / depth;
    }
  }
  for (int k = 0; k < n_cell_types; ++k) {
    if (type_counts[k] == 0) {
      throw std::invalid_argument("naive_profile: cell type " +
                                  std::to_string(k) + " has no cells");
    }
    out.values.col(k) /= static_cast<double>(type_counts[k]);
  }
  return out;
}

/// One multiplicative update of the weights factor for the divergence-loss
/// factorization V ~ basis * weights (basis held fixed):
///   H_kj <- H_kj * (sum_i B_ik V_ij / (BH)_ij) / (sum_i B_ik).
/// Loop order is part of the contract: inner sums run over ascending indices.
inline Eigen::MatrixXd nmf_weight_update(const Eigen::MatrixXd& v,
                                         const Eigen::MatrixXd& basis,
                                         const Eigen::MatrixXd& weights) {
  const Eigen::Index n = v.rows();
  const Eigen::Index m = v.cols();
  const Eigen::Index r = basis.cols();
  check(basis.rows() == n && weights.rows() == r && weights.cols() == m,
        "nmf_weight_update: shape mismatch");

  Eigen::VectorXd colsum(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) s += basis(i, k);
    colsum[k] = s;
  }

  Eigen::MatrixXd out(r, m);
  std::vector<double> acc(r);
  for (Eigen::Index j = 0; j < m; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      double denom = 0.0;
      for (Eigen::Index k = 0; k < r; ++k) denom += basis(i, k) * weights(k, j);
      if (denom <= 0.0) continue;  // all-zero row of the current model
      const double scaled = v(i, j) / denom;
      for (Eigen::Index k = 0; k < r; ++k) acc[k] += basis(i, k) * scaled;
    }
    for (Eigen::Index k = 0; k < r; ++k) {
      out(k, j) = std::max(weights(k, j) * acc[k] / colsum[k], 1e-12);
    }
  }
  return out;
}

/// Same multiplicative step for the basis factor (weights held fixed).
inline Eigen::MatrixXd nmf_basis_update(const Eigen::MatrixXd& v,
                                        const Eigen::MatrixXd& basis,
                                        const Eigen::MatrixXd& weights) {
  const Eigen::Index n = v.rows();
  const Eigen::Index m = v.cols();
  const Eigen::Index r = basis.cols();

  Eigen::VectorXd rowsum(r);
  for (Eigen::Index k = 0; k < r; ++k) {
    double s = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) s += weights(k, j);
    rowsum[k] = s;
  }

  Eigen::MatrixXd out(n, r);
  std::vector<double> acc(r);
  for (Eigen::Index i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (Eigen::Index j = 0; j < m; ++j) {
      double denom = 0.0;
      for (Eigen::Index k = 0; k < r; ++k) denom += basis(i, k) * weights(k, j);
      if (denom <= 0.0) continue;
      const double scaled = v(i, j) / denom;
      for (Eigen::Index k = 0; k < r; ++k) acc[k] += weights(k, j) * scaled;
    }
    for (Eigen::Index k = 0; k < r; ++k) {
      out(i, k) = std::max(basis(i, k) * acc[k] / rowsum[k], 1e-12);
    }
  }
  return out;
}

/// Generalized KL divergence D(V || BH), the loss the multiplicative updates
/// monotonically decrease.
inline double nmf_divergence_loss(const Eigen::MatrixXd& v,
                                  const Eigen::MatrixXd& basis,
                                  const Eigen::MatrixXd& weights) {
  double d = 0.0;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index i = 0; i < v.rows(); ++i) {
      double approx = 0.0;
      for (Eigen::Index k = 0; k < basis.cols(); ++k) {
        approx += basis(i, k) * weights(k, j);
      }
      const double x = v(i, j);
      d += approx - x;
      if (x > 0.0) d += x * std::log(x / std::max(approx, 1e-12));
    }
  }
  return d;
}

struct NmfResult {
  Eigen::MatrixXd basis;    // N x rank
  Eigen::MatrixXd weights;  // rank x M
  std::vector<double> divergence_trace;
  int n_iterations = 0;
};

/// Divergence-loss NMF by alternating multiplicative updates, run until the
/// relative divergence change drops below `tol` or the iteration cap.
inline NmfResult nmf_divergence(const Eigen::MatrixXd& v, int rank,
                                int max_iterations = 500, double tol = 1e-6,
                                std::uint64_t seed = 0) {
  check(rank >= 1, "nmf_divergence: rank must be >= 1");
  check(v.minCoeff() >= 0.0, "nmf_divergence: input must be nonnegative");
  const Eigen::Index n = v.rows();
  const Eigen::Index m = v.cols();

  RngStream rng(seed, {StreamKind::kGlobal, 0, 0});
  const double scale = std::sqrt(std::max(v.mean(), 1e-12) /
                                 static_cast<double>(rank));
  NmfResult res;
  res.basis.resize(n, rank);
  res.weights.resize(rank, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < rank; ++k) {
      res.basis(i, k) = scale * (0.5 + rng.uniform());
    }
  }
  for (int k = 0; k < rank; ++k) {
    for (Eigen::Index j = 0; j < m; ++j) {
      res.weights(k, j) = scale * (0.5 + rng.uniform());
    }
  }

  double prev = nmf_divergence_loss(v, res.basis, res.weights);
  res.divergence_trace.push_back(prev);
  for (int it = 0; it < max_iterations; ++it) {
    res.basis = nmf_basis_update(v, res.basis, res.weights);
    res.weights = nmf_weight_update(v, res.basis, res.weights);
    const double d = nmf_divergence_loss(v, res.basis, res.weights);
    res.divergence_trace.push_back(d);
    ++res.n_iterations;
    if (std::abs(prev - d) <= tol * std::max(1.0, std::abs(prev))) break;
    prev = d;
  }
  return res;
}

enum class L1Mode { kTotal, kPerColumnAverage };

/// Sum of absolute entry differences, optionally averaged per column.
/// With `match_columns`, the loss is minimized over column permutations
/// (exact search; intended for the small K of label-free comparisons).
inline double l1_loss(const Eigen::MatrixXd& estimate,
                      const Eigen::MatrixXd& truth,
                      L1Mode mode = L1Mode::kTotal,
                      bool match_columns = false) {
  check(estimate.rows() == truth.rows() && estimate.cols() == truth.cols(),
        "l1_loss: shape mismatch");
  const Eigen::Index k = truth.cols();
  double total = 0.0;
  if (!match_columns) {
    total = (estimate - truth).cwiseAbs().sum();
  } else {
    check(k <= 8, "l1_loss: permutation matching supports at most 8 columns");
    std::vector<int> perm(k);
    std::iota(perm.begin(), perm.end(), 0);
    total = std::numeric_limits<double>::infinity();
    do {
      double cand = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        cand += (estimate.col(perm[c]) - truth.col(c)).cwiseAbs().sum();
      }
      total = std::min(total, cand);
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return mode == L1Mode::kTotal ? total : total / static_cast<double>(k);
}

/// Rank-based AUC with midrank tie correction (equivalent to counting
/// concordant pairs). Labels: true = positive class.
inline double roc_auc(const std::vector<double>& scores,
                      const std::vector<bool>& labels) {
  check(scores.size() == labels.size(), "roc_auc: size mismatch");
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (bool b : labels) n_pos += b ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  check(n_pos > 0 && n_neg > 0,
        "roc_auc: need at least one positive and one negative label");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]]) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace ursm
