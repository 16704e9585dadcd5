// Acceptance suite: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Criteria marked "reference" reproduce the published
// simulation protocol; the rest are oracle checks at fixed tolerances.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "ursm/ursm.hpp"

using namespace ursm;

namespace {

struct Criterion {
  int id;
  bool pass;
  std::string detail;
};

std::vector<Criterion> results;

void report(int id, bool pass, const std::string& detail) {
  results.push_back({id, pass, detail});
  std::printf("[%s] criterion %2d: %s\n", pass ? "PASS" : "FAIL", id,
              detail.c_str());
  std::fflush(stdout);
}

double median3(double a, double b, double c) {
  return std::max(std::min(a, b), std::min(std::max(a, b), c));
}

double elapsed_seconds(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

// --- criteria 1-3: reference simulation, three seeds ------------------------

void run_reference_criteria() {
  SimConfig sim;  // defaults: N=200, K=3, L=100 (30/30/40), M=150, alpha 1,2,3
  FitConfig fit;
  fit.estep.n_sweeps = 150;
  fit.max_em_iters = 50;
  // The bound is estimated from 150 draws, so its per-iteration noise sits
  // near 1e-5 of its magnitude; the looser default would stop these fits
  // while the profile is still moving.
  fit.tolerance = 1e-5;

  const std::vector<std::uint64_t> seeds{1, 2, 3};
  std::vector<BenchmarkRow> rows;
  for (const auto seed : seeds) {
    const auto t0 = std::chrono::steady_clock::now();
    rows.push_back(benchmark_one_seed(sim, fit, seed));
    std::printf("  [seed %llu] naive %.3f, sc %.3f, joint %.3f | zero %.3f | "
                "auc %.3f vs nmf %.3f | %.1f s/iter, %d iters (%.0f s)\n",
                static_cast<unsigned long long>(seed), rows.back().l1_naive,
                rows.back().l1_sc, rows.back().l1_joint,
                rows.back().zero_fraction, rows.back().auc_ursm,
                rows.back().auc_nmf, rows.back().sec_per_iter_joint,
                rows.back().em_iters_joint, elapsed_seconds(t0));
    std::fflush(stdout);
  }

  const double med_naive =
      median3(rows[0].l1_naive, rows[1].l1_naive, rows[2].l1_naive);
  const double med_sc = median3(rows[0].l1_sc, rows[1].l1_sc, rows[2].l1_sc);
  const double med_joint =
      median3(rows[0].l1_joint, rows[1].l1_joint, rows[2].l1_joint);
  int ordered = 0;
  for (const auto& r : rows) {
    if (r.l1_joint < r.l1_sc && r.l1_sc < r.l1_naive) ++ordered;
  }
  double max_iter_seconds = 0.0;
  for (const auto& r : rows) {
    max_iter_seconds = std::max(max_iter_seconds, r.sec_per_iter_joint);
  }

  {
    std::ostringstream detail;
    detail << "profile recovery medians over 3 seeds: naive " << med_naive
           << " in [0.55,1.05], submodel " << med_sc
           << " in [0.15,0.45], joint " << med_joint
           << " in [0.08,0.34]; joint<submodel<naive in " << ordered
           << "/3 seeds; max " << max_iter_seconds << " s per EM iteration";
    const bool pass = med_naive >= 0.55 && med_naive <= 1.05 &&
                      med_sc >= 0.15 && med_sc <= 0.45 && med_joint >= 0.08 &&
                      med_joint <= 0.34 && ordered >= 2 &&
                      max_iter_seconds <= 180.0;
    report(1, pass, detail.str());
  }
  {
    const double med_zero = median3(rows[0].zero_fraction,
                                    rows[1].zero_fraction,
                                    rows[2].zero_fraction);
    std::ostringstream detail;
    detail << "single-cell zero fraction " << med_zero << " in [0.60,0.69]";
    report(2, med_zero >= 0.60 && med_zero <= 0.69, detail.str());
  }
  {
    int wins = 0;
    for (const auto& r : rows) {
      if (r.auc_ursm > r.auc_nmf) ++wins;
    }
    std::ostringstream detail;
    detail << "dropout AUC beats the rank-3 divergence-NMF baseline in "
           << wins << "/3 seeds (";
    for (const auto& r : rows) {
      detail << " " << r.auc_ursm << ">" << r.auc_nmf;
    }
    detail << " )";
    report(3, wins >= 2, detail.str());
  }
}

// --- criterion 4: Polya-Gamma moments ---------------------------------------

void run_pg_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  const int n = 100000;
  bool pass = true;
  std::ostringstream detail;
  detail << "PG(1,c) moments at 4 SE, 1e5 draws:";
  int unit = 0;
  for (const double c : {0.0, 0.5, 1.0, 2.0, 5.0}) {
    RngStream rng(2024, {StreamKind::kTest, static_cast<std::uint64_t>(unit++), 0});
    std::vector<double> draws(n);
    for (double& d : draws) d = pg_draw(rng, c);
    double mean = 0.0;
    for (const double d : draws) mean += d;
    mean /= n;
    double m2 = 0.0, m4 = 0.0;
    for (const double d : draws) {
      const double x = d - mean;
      m2 += x * x;
      m4 += x * x * x * x;
    }
    m2 /= n;
    m4 /= n;
    const double se_mean = std::sqrt(m2 / n);
    const double se_var = std::sqrt(std::max(m4 - m2 * m2, 0.0) / n);
    const bool mean_ok = std::abs(mean - pg_mean(c)) < 4.0 * se_mean;
    const bool var_ok = std::abs(m2 - pg_variance(c)) < 4.0 * se_var;
    pass = pass && mean_ok && var_ok;
    detail << " c=" << c << (mean_ok && var_ok ? " ok" : " FAIL");
  }
  const double secs = elapsed_seconds(t0);
  detail << "; " << secs << " s (< 10 s)";
  report(4, pass && secs < 10.0, detail.str());
}

// --- criterion 5: capped-simplex projection oracle ---------------------------

Eigen::VectorXd qp_projection_oracle(const Eigen::VectorXd& v, double eps) {
  const int n = static_cast<int>(v.size());
  double best = std::numeric_limits<double>::infinity();
  Eigen::VectorXd out;
  for (int mask = 0; mask < (1 << n); ++mask) {
    int free_count = 0;
    double free_sum = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!(mask & (1 << i))) {
        ++free_count;
        free_sum += v[i];
      }
    }
    Eigen::VectorXd cand(n);
    if (free_count == 0) {
      if (std::abs(eps * n - 1.0) > 1e-9) continue;
      cand.setConstant(eps);
    } else {
      const double shift = (1.0 - (n - free_count) * eps - free_sum) / free_count;
      bool ok = true;
      for (int i = 0; i < n; ++i) {
        cand[i] = (mask & (1 << i)) ? eps : v[i] + shift;
        if (cand[i] < eps - 1e-12) ok = false;
      }
      if (!ok) continue;
    }
    const double dist = (cand - v).squaredNorm();
    if (dist < best) {
      best = dist;
      out = cand;
    }
  }
  return out;
}

void run_projection_criterion() {
  const auto t0 = std::chrono::steady_clock::now();
  RngStream rng(555, {StreamKind::kTest, 50, 0});
  double worst = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform() * 5);
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = rng.normal(0.0, 2.0);
    const double eps = rng.uniform() * (1.0 / n);
    const Eigen::VectorXd fast = project_capped_simplex(v, eps);
    const Eigen::VectorXd slow = qp_projection_oracle(v, eps);
    worst = std::max(worst, (fast - slow).lpNorm<Eigen::Infinity>());
  }
  const double secs = elapsed_seconds(t0);
  std::ostringstream detail;
  detail << "1000 random projections vs brute-force QP: max deviation "
         << worst << " (< 1e-9); " << secs << " s (< 5 s)";
  report(5, worst < 1e-9 && secs < 5.0, detail.str());
}

// --- criterion 6: gradient checks --------------------------------------------

Dataset random_dataset(int n, int k, int l, int m, RngStream& rng) {
  CountMatrix cells(n, l);
  Eigen::VectorXi labels(l);
  for (int c = 0; c < l; ++c) {
    labels[c] = c % k;
    for (int i = 0; i < n; ++i) {
      cells(i, c) = rng.bernoulli(0.5)
                        ? static_cast<std::int64_t>(rng.uniform() * 15) + 1
                        : 0;
    }
    if (cells.col(c).sum() == 0) cells(0, c) = 2;
  }
  CountMatrix bulk(n, m);
  for (int j = 0; j < m; ++j) {
    for (int i = 0; i < n; ++i) {
      bulk(i, j) = static_cast<std::int64_t>(rng.uniform() * 40);
    }
    if (bulk.col(j).sum() == 0) bulk(0, j) = 1;
  }
  return validate_dataset(bulk, cells, labels, k);
}

SufficientStats random_stats(const Dataset& data, RngStream& rng) {
  const int n = data.dims.n_genes;
  const int k = data.dims.n_cell_types;
  const int l = data.dims.n_cells;
  const int m = data.dims.n_bulk;
  SufficientStats s;
  s.has_bulk = true;
  s.n_draws = 8;
  s.e_s.resize(n, l);
  s.e_kappa.resize(l);
  s.e_tau.resize(l);
  s.e_kappa_sq.resize(l);
  s.e_tau_sq.resize(l);
  s.e_omega_tau_sq.resize(n, l);
  s.e_omega_tau_kappa.resize(n, l);
  s.e_s_half_tau.resize(n, l);
  for (int c = 0; c < l; ++c) {
    s.e_kappa[c] = rng.normal(-1.0, 0.5);
    s.e_tau[c] = rng.normal(4.0, 1.0);
    s.e_kappa_sq[c] = s.e_kappa[c] * s.e_kappa[c] + 0.2 + rng.uniform();
    s.e_tau_sq[c] = s.e_tau[c] * s.e_tau[c] + 0.2 + rng.uniform();
    for (int i = 0; i < n; ++i) {
      s.e_s(i, c) = data.cells.counts(i, c) > 0 ? 1.0 : 0.1 + 0.8 * rng.uniform();
      s.e_omega_tau_sq(i, c) = 1.0 + 3.0 * rng.uniform();
      s.e_omega_tau_kappa(i, c) = rng.normal(0.0, 1.5);
      s.e_s_half_tau(i, c) = rng.normal(0.0, 2.0);
    }
  }
  s.e_ztilde.assign(static_cast<std::size_t>(n) * m * k, 0.0);
  s.e_log_w.resize(k, m);
  s.e_w.resize(k, m);
  for (int j = 0; j < m; ++j) {
    Eigen::VectorXd w(k);
    double total = 0.0;
    for (int t = 0; t < k; ++t) {
      w[t] = 0.2 + rng.uniform();
      total += w[t];
    }
    w /= total;
    for (int t = 0; t < k; ++t) {
      s.e_w(t, j) = w[t];
      s.e_log_w(t, j) = std::log(w[t]) - 0.1 * rng.uniform();
    }
    for (int i = 0; i < n; ++i) {
      double rest = static_cast<double>(data.bulk.counts(i, j));
      double* slot = &s.e_ztilde[(static_cast<std::size_t>(i) * m + j) * k];
      for (int t = 0; t + 1 < k; ++t) {
        slot[t] = rest * w[t];
        rest -= slot[t];
      }
      slot[k - 1] = rest;
    }
  }
  return s;
}

ModelParams random_point(const Dataset& data, double eps_a, double eps_alpha,
                         RngStream& rng) {
  const int n = data.dims.n_genes;
  const int k = data.dims.n_cell_types;
  ModelParams p;
  p.profile.values.resize(n, k);
  for (int t = 0; t < k; ++t) {
    Eigen::VectorXd col(n);
    for (int i = 0; i < n; ++i) col[i] = 0.1 + rng.uniform();
    col /= col.sum();
    p.profile.values.col(t) = project_capped_simplex(col, 3.0 * eps_a);
  }
  p.alpha.resize(k);
  for (int t = 0; t < k; ++t) p.alpha[t] = eps_alpha + 0.3 + 2.0 * rng.uniform();
  p.mu_kappa = rng.normal(-1.0, 0.4);
  p.mu_tau = rng.normal(5.0, 1.0);
  p.sigma2_kappa = 0.3 + rng.uniform();
  p.sigma2_tau = 0.5 + rng.uniform();
  return p;
}

void run_gradient_criterion() {
  RngStream rng(777, {StreamKind::kTest, 60, 0});
  const double h = 1e-6;
  double worst = 0.0;
  for (int point = 0; point < 20; ++point) {
    const Dataset data = random_dataset(5, 2, 4, 3, rng);
    const SufficientStats stats = random_stats(data, rng);
    const double eps_a = 1e-4;
    const ModelParams params = random_point(data, eps_a, 1e-3, rng);
    const ElboContext ctx = make_elbo_context(stats, data);

    const Eigen::MatrixXd ga = grad_a(params, ctx);
    const Eigen::VectorXd galpha = grad_alpha(params, ctx);
    const double scale_a = std::max(1.0, ga.cwiseAbs().maxCoeff());
    const double scale_alpha = std::max(1.0, galpha.cwiseAbs().maxCoeff());

    for (int t = 0; t < data.dims.n_cell_types; ++t) {
      for (int i = 0; i < data.dims.n_genes; ++i) {
        ModelParams lo = params, hi = params;
        lo.profile.values(i, t) -= h;
        hi.profile.values(i, t) += h;
        const double fd = (elbo(hi, ctx) - elbo(lo, ctx)) / (2.0 * h);
        worst = std::max(worst, std::abs(fd - ga(i, t)) / scale_a);
      }
      ModelParams lo = params, hi = params;
      lo.alpha[t] -= h;
      hi.alpha[t] += h;
      const double fd = (elbo(hi, ctx) - elbo(lo, ctx)) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - galpha[t]) / scale_alpha);
    }
  }
  std::ostringstream detail;
  detail << "A and alpha gradients vs central differences at 20 random "
            "points: max relative error "
         << worst << " (< 1e-5)";
  report(6, worst < 1e-5, detail.str());
}

// --- criterion 7: Gibbs marginals vs exact enumeration ------------------------

void run_enumeration_criterion() {
  CountMatrix cells(3, 2);
  cells << 2, 0,
           0, 1,
           0, 1;
  Eigen::VectorXi labels(2);
  labels << 0, 0;
  const Dataset data = validate_dataset(CountMatrix(), cells, labels, 1);

  ModelParams params;
  params.profile.values.resize(3, 1);
  params.profile.values << 0.5, 0.3, 0.2;
  params.alpha = Eigen::VectorXd::Ones(1);
  params.mu_kappa = -0.3;
  params.mu_tau = 1.2;
  params.sigma2_kappa = 1e-12;
  params.sigma2_tau = 1e-12;

  EStepConfig cfg;
  cfg.n_sweeps = 100000;
  const SufficientStats stats = run_estep(data, params, cfg, 31415);

  // Exact marginals by enumeration over the zero entries of each cell.
  const Eigen::MatrixXd& a = params.profile.values;
  double worst = 0.0;
  for (int c = 0; c < 2; ++c) {
    std::vector<int> zeros;
    double base = 0.0;
    for (int i = 0; i < 3; ++i) {
      if (cells(i, c) == 0) zeros.push_back(i);
      else base += a(i, 0);
    }
    const double depth = static_cast<double>(data.cells.depths[c]);
    std::vector<double> marginal(zeros.size(), 0.0);
    double total = 0.0;
    for (std::size_t mask = 0; mask < (1u << zeros.size()); ++mask) {
      double u = base;
      double w = 1.0;
      for (std::size_t z = 0; z < zeros.size(); ++z) {
        const double pi =
            logistic(params.mu_kappa + params.mu_tau * a(zeros[z], 0));
        if (mask & (1u << z)) {
          w *= pi;
          u += a(zeros[z], 0);
        } else {
          w *= 1.0 - pi;
        }
      }
      w *= std::pow(u, -depth);
      total += w;
      for (std::size_t z = 0; z < zeros.size(); ++z) {
        if (mask & (1u << z)) marginal[z] += w;
      }
    }
    for (std::size_t z = 0; z < zeros.size(); ++z) {
      worst = std::max(worst,
                       std::abs(stats.e_s(zeros[z], c) - marginal[z] / total));
    }
  }
  std::ostringstream detail;
  detail << "E[S] from 1e5 sweeps vs exact enumeration: max deviation "
         << worst << " (< 0.01)";
  report(7, worst < 0.01, detail.str());
}

// --- criterion 8: MAP update = NMF multiplicative update ----------------------

void run_map_nmf_criterion() {
  RngStream rng(888, {StreamKind::kTest, 70, 0});
  bool all_equal = true;
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform() * 4);
    const int k = 2 + static_cast<int>(rng.uniform() * 3);
    const int m = 3;
    // Columns summing to exactly 1.0 so the multiplicative update's basis
    // normalizer is literally one.
    Eigen::MatrixXd a(n, k);
    for (int t = 0; t < k; ++t) {
      double partial;
      do {
        partial = 0.0;
        for (int i = 0; i + 1 < n; ++i) {
          a(i, t) = (0.2 + rng.uniform()) / n;
          partial += a(i, t);
        }
      } while (!(partial >= 0.5 && partial < 0.95));
      a(n - 1, t) = 1.0 - partial;  // exact by Sterbenz
    }
    CountMatrix x(n, m);
    for (int j = 0; j < m; ++j) {
      for (int i = 0; i < n; ++i) {
        x(i, j) = static_cast<std::int64_t>(rng.uniform() * 30);
      }
    }
    Eigen::MatrixXd w(k, m);
    for (int j = 0; j < m; ++j) {
      double total = 0.0;
      for (int t = 0; t < k; ++t) {
        w(t, j) = 0.1 + rng.uniform();
        total += w(t, j);
      }
      w.col(j) /= total;
    }

    const Eigen::MatrixXd map_next =
        map_w_update(w, x, a, Eigen::VectorXd::Ones(k));
    Eigen::MatrixXd nmf_next = nmf_weight_update(x.cast<double>(), a, w);
    for (int j = 0; j < m; ++j) {
      double colsum = 0.0;
      for (int t = 0; t < k; ++t) colsum += nmf_next(t, j);
      for (int t = 0; t < k; ++t) nmf_next(t, j) /= colsum;
    }
    all_equal = all_equal && map_next.cwiseEqual(nmf_next).all();
  }
  report(8, all_equal,
         "one MAP weight update equals the divergence-NMF multiplicative "
         "update bit-for-bit on 10 random instances at alpha = 1");
}

// --- criterion 9: deconvolution with the profile fixed at the truth -----------

void run_deconvolution_criterion() {
  SimConfig sim;
  sim.dims = {200, 3, 9, 50};
  sim.seed = 4711;
  const SimResult data = simulate(sim);

  ModelParams params;
  params.profile.values = data.truth.profile.values;
  const double floor = sim.resolved_floor();
  for (int t = 0; t < 3; ++t) {
    params.profile.values.col(t) = params.profile.values.col(t).cwiseMax(floor);
    params.profile.values.col(t) /= params.profile.values.col(t).sum();
  }
  params.alpha = sim.alpha_true;
  params.mu_kappa = -1.0;
  params.mu_tau = 1.5 * 200;
  params.sigma2_kappa = 0.25;
  params.sigma2_tau = 900.0;

  EStepConfig cfg;
  cfg.n_sweeps = 200;
  const SufficientStats stats = run_estep(data.data, params, cfg, 2718);

  double total = 0.0;
  for (int j = 0; j < 50; ++j) {
    total += (stats.e_w.col(j) - data.truth.w.col(j)).cwiseAbs().sum();
  }
  const double mean_l1 = total / 50.0;
  std::ostringstream detail;
  detail << "posterior-mean W with the profile fixed at the truth, 50 "
            "samples at depth Poisson(50N): mean per-sample L1 "
         << mean_l1 << " (< 0.1)";
  report(9, mean_l1 < 0.1, detail.str());
}

// --- criterion 10: monotone M-step --------------------------------------------

void run_monotone_criterion() {
  RngStream rng(999, {StreamKind::kTest, 80, 0});
  int violations = 0;
  double worst_drop = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Dataset data = random_dataset(6, 2, 5, 4, rng);
    const SufficientStats stats = random_stats(data, rng);
    MStepConfig config;
    config.eps_a = 1e-4;
    const ModelParams start = random_point(data, config.eps_a,
                                           config.eps_alpha, rng);
    const ElboContext ctx = make_elbo_context(stats, data);
    const double before = elbo(start, ctx);
    const MStepResult res = m_step(start, stats, data, config);
    const double after = elbo(res.params, ctx);
    if (after < before - 1e-9) {
      ++violations;
      worst_drop = std::max(worst_drop, before - after);
    }
  }
  std::ostringstream detail;
  detail << "ELBO non-decreasing across the full M-step on fixed stats: "
         << violations << "/100 violations (tolerance 1e-9)";
  if (violations > 0) detail << ", worst drop " << worst_drop;
  report(10, violations == 0, detail.str());
}

}  // namespace

int main() {
  const auto t0 = std::chrono::steady_clock::now();
  std::printf("reference simulation criteria (three seeds)...\n");
  run_reference_criteria();
  run_pg_criterion();
  run_projection_criterion();
  run_gradient_criterion();
  run_enumeration_criterion();
  run_map_nmf_criterion();
  run_deconvolution_criterion();
  run_monotone_criterion();

  int failures = 0;
  for (const auto& r : results) failures += r.pass ? 0 : 1;
  std::printf("%d/%zu criteria passed in %.0f s\n",
              static_cast<int>(results.size()) - failures, results.size(),
              elapsed_seconds(t0));
  return failures == 0 ? 0 : 1;
}
