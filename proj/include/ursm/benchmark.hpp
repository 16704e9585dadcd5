#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "ursm/baselines.hpp"
#include "ursm/gem.hpp"
#include "ursm/posterior.hpp"
#include "ursm/simulate.hpp"
#include "ursm/types.hpp"

namespace ursm {

/// Metrics for one simulated dataset fitted by each method.
struct BenchmarkRow {
  std::uint64_t seed = 0;
  double zero_fraction = 0.0;     // share of zero entries in the sc matrix
  double l1_naive = 0.0;          // total L1 on A, sample-mean estimator
  double l1_sc = 0.0;             // total L1 on A, single-cell submodel
  double l1_joint = 0.0;          // total L1 on A, joint fit
  double w_l1_total = 0.0;        // total L1 on W, joint fit
  double w_l1_per_sample = 0.0;   // mean per-sample L1 on W
  double auc_ursm = 0.0;          // dropout detection, 1 - posterior prob
  double auc_nmf = 0.0;           // dropout detection, rank-K reconstruction
  double sec_per_iter_joint = 0.0;
  double sec_per_iter_sc = 0.0;
  int em_iters_joint = 0;
  int em_iters_sc = 0;
  bool joint_converged = false;
  bool sc_converged = false;
};

/// Dropout-detection scores over the zero entries of the single-cell matrix,
/// with true labels (dropout = positive class).
inline void dropout_scores(const SimResult& sim, const Eigen::MatrixXd& score,
                           std::vector<double>& scores,
                           std::vector<bool>& labels) {
  scores.clear();
  labels.clear();
  const auto& y = sim.data.cells.counts;
  for (Eigen::Index l = 0; l < y.cols(); ++l) {
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (y(i, l) != 0) continue;
      scores.push_back(score(i, l));
      labels.push_back(sim.truth.s(i, l) == 0);
    }
  }
}

inline double mean_seconds(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

/// Simulate one dataset and run the three estimators plus the dropout-ROC
/// comparison against a rank-K divergence NMF.
inline BenchmarkRow benchmark_one_seed(SimConfig sim_config,
                                       FitConfig fit_config,
                                       std::uint64_t seed) {
  sim_config.seed = seed;
  fit_config.seed = seed;

  BenchmarkRow row;
  row.seed = seed;
  const SimResult sim = simulate(sim_config);
  const Eigen::MatrixXd& truth_a = sim.truth.profile.values;

  std::int64_t zeros = 0;
  for (Eigen::Index l = 0; l < sim.data.cells.counts.cols(); ++l) {
    for (Eigen::Index i = 0; i < sim.data.cells.counts.rows(); ++i) {
      if (sim.data.cells.counts(i, l) == 0) ++zeros;
    }
  }
  row.zero_fraction = static_cast<double>(zeros) /
                      static_cast<double>(sim.data.cells.counts.size());

  const ProfileMatrix naive =
      naive_profile(sim.data.cells, sim_config.dims.n_cell_types);
  row.l1_naive = l1_loss(naive.values, truth_a);

  FitConfig sc_config = fit_config;
  sc_config.mode = FitMode::kSingleCellOnly;
  const FitResult sc_fit = fit_single_cell_only(sim.data, sc_config);
  row.l1_sc = l1_loss(sc_fit.params.profile.values, truth_a);
  row.sc_converged = sc_fit.converged;
  row.em_iters_sc = static_cast<int>(sc_fit.elbo_trace.size());
  row.sec_per_iter_sc = mean_seconds(sc_fit.seconds_per_iteration);

  FitConfig joint_config = fit_config;
  joint_config.mode = FitMode::kJoint;
  const FitResult joint_fit = fit_gem(sim.data, joint_config);
  row.l1_joint = l1_loss(joint_fit.params.profile.values, truth_a);
  row.joint_converged = joint_fit.converged;
  row.em_iters_joint = static_cast<int>(joint_fit.elbo_trace.size());
  row.sec_per_iter_joint = mean_seconds(joint_fit.seconds_per_iteration);

  const Deconvolution deconv = deconvolve(joint_fit);
  row.w_l1_total = l1_loss(deconv.proportions, sim.truth.w);
  row.w_l1_per_sample =
      row.w_l1_total / static_cast<double>(sim_config.dims.n_bulk);

  // Dropout identification: URSM scores vs a rank-K NMF reconstruction.
  std::vector<double> scores;
  std::vector<bool> labels;
  const Eigen::MatrixXd ursm_score =
      Eigen::MatrixXd::Ones(truth_a.rows(), sim_config.dims.n_cells) -
      dropout_posterior(joint_fit).prob;
  dropout_scores(sim, ursm_score, scores, labels);
  row.auc_ursm = roc_auc(scores, labels);

  const NmfResult nmf =
      nmf_divergence(sim.data.cells.counts.cast<double>(),
                     sim_config.dims.n_cell_types, 200, 1e-6, seed);
  const Eigen::MatrixXd recon = nmf.basis * nmf.weights;
  dropout_scores(sim, recon, scores, labels);
  row.auc_nmf = roc_auc(scores, labels);

  return row;
}

}  // namespace ursm
