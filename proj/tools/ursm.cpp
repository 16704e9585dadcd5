// Command-line front end: simulate synthetic datasets, fit the joint model,
// impute dropouts, deconvolve bulk samples, and run the benchmark protocol.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ursm/ursm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Exit codes: 0 success/converged, 4 iteration cap reached before
// convergence; CLI11 uses its own codes for usage errors.
constexpr int kExitMaxIters = 4;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

ursm::RunConfig load_config_or_default(const std::string& path, json* raw) {
  if (path.empty()) {
    *raw = json::object();
    return ursm::RunConfig{};
  }
  return ursm::load_run_config(path, raw);
}

fs::path ensure_out_dir(const std::string& dir) {
  const fs::path out(dir);
  fs::create_directories(out);
  return out;
}

void write_profile(const fs::path& path, const Eigen::MatrixXd& a,
                   const std::vector<std::string>& gene_ids) {
  ursm::write_tsv(path, a, gene_ids,
                  ursm::default_ids("type_", a.cols()), "gene");
}

int cmd_simulate(const CommonArgs& args) {
  json raw;
  ursm::RunConfig config = load_config_or_default(args.config_path, &raw);
  if (args.seed) config.seed = *args.seed;
  config.sim.seed = config.seed;
  config.sim.validate();

  const ursm::SimResult sim = ursm::simulate(config.sim);
  const fs::path out = ensure_out_dir(args.out_dir);

  const auto genes = ursm::default_ids("gene_", config.sim.dims.n_genes);
  const auto samples = ursm::default_ids("bulk_", config.sim.dims.n_bulk);
  const auto cells = ursm::default_ids("cell_", config.sim.dims.n_cells);
  const auto types = ursm::default_ids("type_", config.sim.dims.n_cell_types);

  ursm::write_counts_tsv(out / "bulk.tsv", sim.data.bulk.counts, genes, samples);
  ursm::write_counts_tsv(out / "sc.tsv", sim.data.cells.counts, genes, cells);
  ursm::write_labels_tsv(out / "labels.tsv", sim.data.cells.labels, cells);

  const fs::path truth = out / "truth";
  fs::create_directories(truth);
  ursm::write_tsv(truth / "profile.tsv", sim.truth.profile.values, genes,
                  types, "gene");
  ursm::write_tsv(truth / "proportions.tsv", sim.truth.w, types, samples,
                  "type");
  ursm::write_tsv(truth / "observability.tsv", sim.truth.s.cast<double>(),
                  genes, cells, "gene");
  Eigen::MatrixXd coef(config.sim.dims.n_cells, 2);
  coef.col(0) = sim.truth.kappa;
  coef.col(1) = sim.truth.tau;
  ursm::write_tsv(truth / "dropout_coefficients.tsv", coef, cells,
                  {"kappa", "tau"}, "cell");
  {
    std::ofstream roles(truth / "gene_roles.tsv");
    roles << "gene\trole\ttype\n";
    static const char* names[] = {"free", "marker", "anti_marker",
                                  "house_keeping"};
    for (int i = 0; i < config.sim.dims.n_genes; ++i) {
      roles << genes[i] << '\t'
            << names[static_cast<int>(sim.truth.roles[i])] << '\t'
            << sim.truth.role_type[i] + 1 << '\n';
    }
  }

  ursm::write_manifest(out, "simulate", config.seed, raw,
                       {"bulk.tsv", "sc.tsv", "labels.tsv", "truth/"},
                       json{{"n_genes", config.sim.dims.n_genes},
                            {"n_cell_types", config.sim.dims.n_cell_types},
                            {"n_cells", config.sim.dims.n_cells},
                            {"n_bulk", config.sim.dims.n_bulk}});
  std::cout << "wrote " << (out / "bulk.tsv").string() << ", sc.tsv, "
            << "labels.tsv, truth/ (" << config.sim.dims.n_genes << " genes)\n";
  return 0;
}

struct FitInputs {
  ursm::Dataset data;
  std::vector<std::string> gene_ids;
  std::vector<std::string> cell_ids;
  std::vector<std::string> sample_ids;
};

FitInputs load_fit_inputs(const std::string& bulk_path,
                          const std::string& sc_path,
                          const std::string& labels_path, int n_cell_types) {
  const ursm::NamedMatrix sc = ursm::read_tsv(sc_path);
  const ursm::CountMatrix cells = ursm::to_counts(sc, sc_path);
  const Eigen::VectorXi labels =
      ursm::read_labels_tsv(labels_path, sc.col_ids, n_cell_types);

  FitInputs in;
  in.gene_ids = sc.row_ids;
  in.cell_ids = sc.col_ids;
  ursm::CountMatrix bulk;
  if (!bulk_path.empty()) {
    const ursm::NamedMatrix bm = ursm::read_tsv(bulk_path);
    if (bm.row_ids != sc.row_ids) {
      throw std::invalid_argument(
          "fit: bulk and single-cell matrices must list the same genes in "
          "the same order");
    }
    bulk = ursm::to_counts(bm, bulk_path);
    in.sample_ids = bm.col_ids;
  }
  in.data = ursm::validate_dataset(bulk, cells, labels, n_cell_types);
  return in;
}

int cmd_fit(const CommonArgs& args, const std::string& bulk_path,
            const std::string& sc_path, const std::string& labels_path,
            const std::string& mode_flag, std::optional<int> sweeps,
            std::optional<int> em_iters, int n_cell_types) {
  json raw;
  ursm::RunConfig config = load_config_or_default(args.config_path, &raw);
  if (args.seed) config.seed = *args.seed;
  if (!mode_flag.empty()) config.fit.mode = ursm::io_detail::parse_mode(mode_flag);
  if (sweeps) config.fit.estep.n_sweeps = *sweeps;
  if (em_iters) config.fit.max_em_iters = *em_iters;
  config.fit.seed = config.seed;
  if (bulk_path.empty()) {
    if (!mode_flag.empty() && config.fit.mode != ursm::FitMode::kSingleCellOnly) {
      throw std::invalid_argument("fit: mode '" + mode_flag +
                                  "' needs --bulk");
    }
    config.fit.mode = ursm::FitMode::kSingleCellOnly;
  }
  config.fit.validate();

  const FitInputs in =
      load_fit_inputs(bulk_path, sc_path, labels_path, n_cell_types);

  const ursm::FitResult result = ursm::fit(in.data, config.fit);
  const fs::path out = ensure_out_dir(args.out_dir);
  std::vector<std::string> outputs;

  write_profile(out / "profile.tsv", result.params.profile.values, in.gene_ids);
  outputs.push_back("profile.tsv");

  {
    json params;
    params["mode"] = ursm::to_string(result.mode);
    params["alpha"] = std::vector<double>(
        result.params.alpha.data(),
        result.params.alpha.data() + result.params.alpha.size());
    params["mu_kappa"] = result.params.mu_kappa;
    params["sigma2_kappa"] = result.params.sigma2_kappa;
    params["mu_tau"] = result.params.mu_tau;
    params["sigma2_tau"] = result.params.sigma2_tau;
    params["converged"] = result.converged;
    params["n_iterations"] = result.elbo_trace.size();
    std::ofstream pf(out / "params.json");
    pf << params.dump(2) << '\n';
    outputs.push_back("params.json");
  }

  {
    std::ofstream trace(out / "elbo_trace.tsv");
    trace << "iteration\telbo\tseconds\n";
    for (std::size_t i = 0; i < result.elbo_trace.size(); ++i) {
      trace << i + 1 << '\t'
            << ursm::io_detail::format_double(result.elbo_trace[i]) << '\t'
            << ursm::io_detail::format_double(result.seconds_per_iteration[i])
            << '\n';
    }
    outputs.push_back("elbo_trace.tsv");
  }

  ursm::write_tsv(out / "dropout_posterior.tsv",
                  ursm::dropout_posterior(result).prob, in.gene_ids,
                  in.cell_ids, "gene");
  outputs.push_back("dropout_posterior.tsv");

  if (result.mode != ursm::FitMode::kSingleCellOnly) {
    const ursm::Deconvolution d = ursm::deconvolve(result);
    ursm::write_tsv(out / "proportions.tsv", d.proportions,
                    ursm::default_ids("type_", d.proportions.rows()),
                    in.sample_ids, "type");
    outputs.push_back("proportions.tsv");
  }

  ursm::write_manifest(out, "fit", config.seed, raw, outputs,
                       json{{"mode", ursm::to_string(result.mode)},
                            {"converged", result.converged},
                            {"n_iterations", result.elbo_trace.size()}});

  std::cout << "fit (" << ursm::to_string(result.mode) << "): "
            << result.elbo_trace.size() << " EM iterations, "
            << (result.converged ? "converged" : "stopped at iteration cap")
            << '\n';
  return result.converged ? 0 : kExitMaxIters;
}

int cmd_impute(const CommonArgs& args, const std::string& fit_dir,
               const std::string& sc_path, const std::string& labels_path,
               double threshold, bool round_counts, int n_cell_types) {
  const fs::path fit(fit_dir);
  if (!fs::exists(fit / "profile.tsv") ||
      !fs::exists(fit / "dropout_posterior.tsv")) {
    throw std::invalid_argument(
        "impute: fit artifacts (profile.tsv, dropout_posterior.tsv) not "
        "found in " + fit_dir);
  }
  const ursm::NamedMatrix profile_m = ursm::read_tsv(fit / "profile.tsv");
  const ursm::NamedMatrix post_m = ursm::read_tsv(fit / "dropout_posterior.tsv");
  const FitInputs in =
      load_fit_inputs("", sc_path, labels_path,
                      static_cast<int>(profile_m.values.cols()));
  (void)n_cell_types;

  ursm::ProfileMatrix profile;
  profile.values = profile_m.values;
  ursm::DropoutPosterior posterior{post_m.values};

  const ursm::ByteMatrix calls =
      threshold <= 0.0
          ? ursm::ByteMatrix::Zero(in.data.cells.counts.rows(),
                                   in.data.cells.counts.cols())
          : ursm::call_dropouts(posterior, in.data.cells.counts, threshold);
  const ursm::ImputedMatrix imputed =
      ursm::impute(in.data.cells, calls, profile, round_counts);

  const fs::path out = ensure_out_dir(args.out_dir);
  ursm::write_tsv(out / "imputed.tsv", imputed.values, in.gene_ids,
                  in.cell_ids, "gene");
  ursm::write_tsv(out / "mask.tsv", imputed.provenance.cast<double>(),
                  in.gene_ids, in.cell_ids, "gene");
  ursm::write_manifest(out, "impute", 0, json{{"threshold", threshold}},
                       {"imputed.tsv", "mask.tsv"},
                       json{{"fit_dir", fit_dir}});

  std::int64_t n_imputed = 0;
  for (Eigen::Index idx = 0; idx < calls.size(); ++idx) {
    n_imputed += calls(idx);
  }
  std::cout << "imputed " << n_imputed << " entries (mask: 0=observed, "
            << "1=imputed, 2=structural zero)\n";
  return 0;
}

int cmd_deconvolve(const CommonArgs& args, const std::string& fit_dir) {
  const fs::path fit(fit_dir);
  if (!fs::exists(fit / "proportions.tsv")) {
    throw std::invalid_argument(
        "deconvolve: proportions.tsv not found in " + fit_dir +
        " (single-cell-only fits have no bulk samples to deconvolve)");
  }
  const ursm::NamedMatrix w = ursm::read_tsv(fit / "proportions.tsv");
  const fs::path out = ensure_out_dir(args.out_dir);
  ursm::write_tsv(out / "proportions.tsv", w.values, w.row_ids, w.col_ids,
                  "type");
  {
    std::ofstream summary(out / "summary.tsv");
    summary << "type\tmean_proportion\n";
    for (Eigen::Index t = 0; t < w.values.rows(); ++t) {
      summary << w.row_ids[t] << '\t'
              << ursm::io_detail::format_double(w.values.row(t).mean())
              << '\n';
    }
  }
  ursm::write_manifest(out, "deconvolve", 0, json::object(),
                       {"proportions.tsv", "summary.tsv"},
                       json{{"fit_dir", fit_dir}});
  std::cout << "deconvolution summary over " << w.values.cols()
            << " samples written\n";
  return 0;
}

int cmd_benchmark(const CommonArgs& args,
                  const std::vector<std::uint64_t>& seed_flags) {
  json raw;
  ursm::RunConfig config = load_config_or_default(args.config_path, &raw);
  if (!seed_flags.empty()) config.benchmark_seeds = seed_flags;

  const fs::path out = ensure_out_dir(args.out_dir);
  std::vector<ursm::BenchmarkRow> rows;
  for (const std::uint64_t seed : config.benchmark_seeds) {
    std::cout << "seed " << seed << ": simulate + 3 estimators..."
              << std::endl;
    rows.push_back(ursm::benchmark_one_seed(config.sim, config.fit, seed));
    const auto& r = rows.back();
    std::cout << "  L1(A): naive " << r.l1_naive << ", sc-only " << r.l1_sc
              << ", joint " << r.l1_joint << "; AUC: " << r.auc_ursm
              << " vs NMF " << r.auc_nmf << std::endl;
  }

  auto mean_of = [&](auto field) {
    double s = 0.0;
    for (const auto& r : rows) s += r.*field;
    return s / static_cast<double>(rows.size());
  };
  auto sd_of = [&](auto field, double mean) {
    if (rows.size() < 2) return 0.0;
    double s = 0.0;
    for (const auto& r : rows) s += (r.*field - mean) * (r.*field - mean);
    return std::sqrt(s / static_cast<double>(rows.size() - 1));
  };

  {
    std::ofstream report(out / "report.tsv");
    report << "seed\tzero_fraction\tl1_naive\tl1_sc\tl1_joint\tw_l1_total\t"
              "w_l1_per_sample\tauc_ursm\tauc_nmf\tsec_per_iter_joint\t"
              "em_iters_joint\tjoint_converged\n";
    for (const auto& r : rows) {
      report << r.seed << '\t' << r.zero_fraction << '\t' << r.l1_naive
             << '\t' << r.l1_sc << '\t' << r.l1_joint << '\t' << r.w_l1_total
             << '\t' << r.w_l1_per_sample << '\t' << r.auc_ursm << '\t'
             << r.auc_nmf << '\t' << r.sec_per_iter_joint << '\t'
             << r.em_iters_joint << '\t' << (r.joint_converged ? 1 : 0)
             << '\n';
    }
    const double mn = mean_of(&ursm::BenchmarkRow::l1_naive);
    const double ms = mean_of(&ursm::BenchmarkRow::l1_sc);
    const double mj = mean_of(&ursm::BenchmarkRow::l1_joint);
    report << "aggregate_mean\t" << mean_of(&ursm::BenchmarkRow::zero_fraction)
           << '\t' << mn << '\t' << ms << '\t' << mj << '\t'
           << mean_of(&ursm::BenchmarkRow::w_l1_total) << '\t'
           << mean_of(&ursm::BenchmarkRow::w_l1_per_sample) << '\t'
           << mean_of(&ursm::BenchmarkRow::auc_ursm) << '\t'
           << mean_of(&ursm::BenchmarkRow::auc_nmf) << '\t'
           << mean_of(&ursm::BenchmarkRow::sec_per_iter_joint) << "\t\t\n";
    report << "aggregate_sd\t\t" << sd_of(&ursm::BenchmarkRow::l1_naive, mn)
           << '\t' << sd_of(&ursm::BenchmarkRow::l1_sc, ms) << '\t'
           << sd_of(&ursm::BenchmarkRow::l1_joint, mj) << "\t\t\t\t\t\t\t\n";
  }

  {
    std::ofstream summary(out / "summary.txt");
    summary << "profile-recovery L1 (total), " << rows.size() << " seeds\n";
    summary << "  naive sample mean : " << mean_of(&ursm::BenchmarkRow::l1_naive) << "\n";
    summary << "  single-cell model : " << mean_of(&ursm::BenchmarkRow::l1_sc) << "\n";
    summary << "  joint model       : " << mean_of(&ursm::BenchmarkRow::l1_joint) << "\n";
    summary << "dropout AUC: joint " << mean_of(&ursm::BenchmarkRow::auc_ursm)
            << " vs rank-K NMF " << mean_of(&ursm::BenchmarkRow::auc_nmf) << "\n";
    summary << "mean W L1 per sample: "
            << mean_of(&ursm::BenchmarkRow::w_l1_per_sample) << "\n";
    summary << "mean seconds per EM iteration (joint): "
            << mean_of(&ursm::BenchmarkRow::sec_per_iter_joint) << "\n";
  }

  ursm::write_manifest(out, "benchmark", config.seed, raw,
                       {"report.tsv", "summary.txt"},
                       json{{"n_seeds", rows.size()}});
  std::cout << "report written to " << (out / "report.tsv").string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Joint hierarchical model for single-cell and bulk RNA-seq counts: "
      "profile estimation with dropout correction, imputation, and bulk "
      "deconvolution"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string bulk_path, sc_path, labels_path, fit_dir, mode_flag;
  std::optional<int> sweeps, em_iters;
  std::optional<std::uint64_t> seed_flag;
  int n_cell_types = 3;
  double threshold = 0.5;
  bool round_counts = false;
  std::vector<std::uint64_t> bench_seeds;

  auto add_common = [&](CLI::App* cmd, bool config_needed) {
    auto* copt = cmd->add_option("--config", args.config_path,
                                 "JSON run configuration");
    if (config_needed) copt->required();
    cmd->add_option("--out", args.out_dir, "output directory")->required();
    cmd->add_option("--seed", seed_flag, "master seed (overrides config)");
  };

  CLI::App* sim = app.add_subcommand("simulate",
                                     "generate a synthetic dataset with "
                                     "ground truth");
  add_common(sim, false);

  CLI::App* fit = app.add_subcommand("fit", "fit the model");
  add_common(fit, false);
  fit->add_option("--bulk", bulk_path, "bulk counts TSV (omit for the "
                  "single-cell submodel)");
  fit->add_option("--sc", sc_path, "single-cell counts TSV")->required();
  fit->add_option("--labels", labels_path, "cell type labels TSV")->required();
  fit->add_option("--mode", mode_flag, "joint | sc-only | map-fast")
      ->check(CLI::IsMember({"joint", "sc-only", "map-fast"}));
  fit->add_option("--sweeps", sweeps, "Gibbs sweeps per E-step");
  fit->add_option("--em-iters", em_iters, "maximum EM iterations");
  fit->add_option("--cell-types", n_cell_types, "number of cell types")
      ->capture_default_str();

  CLI::App* imp = app.add_subcommand("impute",
                                     "impute called dropouts from a fit");
  add_common(imp, false);
  imp->add_option("--fit", fit_dir, "directory with fit artifacts")->required();
  imp->add_option("--sc", sc_path, "single-cell counts TSV")->required();
  imp->add_option("--labels", labels_path, "cell type labels TSV")->required();
  imp->add_option("--threshold", threshold,
                  "dropout call threshold; 0 disables all calls")
      ->capture_default_str();
  imp->add_flag("--round", round_counts, "round imputed values to integers");

  CLI::App* dec = app.add_subcommand("deconvolve",
                                     "summarize bulk proportions from a fit");
  add_common(dec, false);
  dec->add_option("--fit", fit_dir, "directory with fit artifacts")->required();

  CLI::App* bench = app.add_subcommand("benchmark",
                                       "simulate and compare estimators "
                                       "over several seeds");
  add_common(bench, false);
  bench->add_option("--seeds", bench_seeds, "seeds (overrides config)");

  CLI11_PARSE(app, argc, argv);
  args.seed = seed_flag;

  try {
    if (sim->parsed()) return cmd_simulate(args);
    if (fit->parsed()) {
      return cmd_fit(args, bulk_path, sc_path, labels_path, mode_flag, sweeps,
                     em_iters, n_cell_types);
    }
    if (imp->parsed()) {
      return cmd_impute(args, fit_dir, sc_path, labels_path, threshold,
                        round_counts, n_cell_types);
    }
    if (dec->parsed()) return cmd_deconvolve(args, fit_dir);
    if (bench->parsed()) return cmd_benchmark(args, bench_seeds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
