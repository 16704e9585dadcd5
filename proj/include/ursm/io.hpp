#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "ursm/common.hpp"
#include "ursm/gem.hpp"
#include "ursm/simulate.hpp"
#include "ursm/types.hpp"

namespace ursm {

/// A rectangular TSV matrix: header row of column ids, first column of row
/// ids, real-valued cells.
struct NamedMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> row_ids;
  std::vector<std::string> col_ids;
};

namespace io_detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find('\t', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline double parse_double(const std::string& token, const std::string& path,
                           std::size_t row, std::size_t col) {
  double v = 0.0;
  const char* begin = token.data();
  const char* end = begin + token.size();
  const auto res = std::from_chars(begin, end, v);
  if (res.ec != std::errc() || res.ptr != end || std::isnan(v)) {
    throw std::invalid_argument(path + ": row " + std::to_string(row) +
                                ", column " + std::to_string(col) +
                                ": not a finite number: '" + token + "'");
  }
  return v;
}

}  // namespace io_detail

inline void write_tsv(const std::filesystem::path& path,
                      const Eigen::MatrixXd& values,
                      const std::vector<std::string>& row_ids,
                      const std::vector<std::string>& col_ids,
                      const std::string& corner = "id") {
  check(static_cast<Eigen::Index>(row_ids.size()) == values.rows() &&
            static_cast<Eigen::Index>(col_ids.size()) == values.cols(),
        "write_tsv: id count does not match the matrix shape");
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_tsv: cannot open " + path.string());
  }
  out << corner;
  for (const auto& c : col_ids) out << '\t' << c;
  out << '\n';
  for (Eigen::Index i = 0; i < values.rows(); ++i) {
    out << row_ids[i];
    for (Eigen::Index j = 0; j < values.cols(); ++j) {
      const double v = values(i, j);
      if (v == std::floor(v) && std::abs(v) < 9.007199254740992e15) {
        out << '\t' << static_cast<std::int64_t>(v);
      } else {
        out << '\t' << io_detail::format_double(v);
      }
    }
    out << '\n';
  }
  if (!out) {
    throw std::runtime_error("write_tsv: failed writing " + path.string());
  }
}

inline void write_counts_tsv(const std::filesystem::path& path,
                             const CountMatrix& counts,
                             const std::vector<std::string>& row_ids,
                             const std::vector<std::string>& col_ids,
                             const std::string& corner = "gene") {
  write_tsv(path, counts.cast<double>(), row_ids, col_ids, corner);
}

inline NamedMatrix read_tsv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("read_tsv: cannot open " + path.string());
  }
  NamedMatrix out;
  std::string line;
  if (!std::getline(in, line)) {
    throw std::invalid_argument(path.string() + ": empty file");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = io_detail::split_tabs(line);
  check(header.size() >= 2, path.string() + ": header has no data columns");
  out.col_ids.assign(header.begin() + 1, header.end());
  const std::size_t n_cols = out.col_ids.size();

  std::vector<double> buffer;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tokens = io_detail::split_tabs(line);
    if (tokens.size() != n_cols + 1) {
      throw std::invalid_argument(
          path.string() + ": row " + std::to_string(row) + " has " +
          std::to_string(tokens.size() - 1) + " cells, expected " +
          std::to_string(n_cols));
    }
    out.row_ids.push_back(tokens[0]);
    for (std::size_t j = 0; j < n_cols; ++j) {
      buffer.push_back(
          io_detail::parse_double(tokens[j + 1], path.string(), row, j + 2));
    }
  }
  const std::size_t n_rows = out.row_ids.size();
  check(n_rows > 0, path.string() + ": no data rows");
  out.values.resize(n_rows, n_cols);
  for (std::size_t i = 0; i < n_rows; ++i) {
    for (std::size_t j = 0; j < n_cols; ++j) {
      out.values(i, j) = buffer[i * n_cols + j];
    }
  }
  return out;
}

/// Reads a count matrix, rejecting negative and non-integer cells.
inline CountMatrix to_counts(const NamedMatrix& matrix,
                             const std::string& what) {
  CountMatrix out(matrix.values.rows(), matrix.values.cols());
  for (Eigen::Index j = 0; j < matrix.values.cols(); ++j) {
    for (Eigen::Index i = 0; i < matrix.values.rows(); ++i) {
      const double v = matrix.values(i, j);
      if (v < 0.0 || v != std::floor(v)) {
        throw std::invalid_argument(
            what + ": row '" + matrix.row_ids[i] + "', column '" +
            matrix.col_ids[j] + "': counts must be nonnegative integers, got " +
            io_detail::format_double(v));
      }
      out(i, j) = static_cast<std::int64_t>(v);
    }
  }
  return out;
}

/// labels.tsv: two columns (cell id, 1-based type), one row per cell, in the
/// same order as the single-cell matrix columns.
inline void write_labels_tsv(const std::filesystem::path& path,
                             const Eigen::VectorXi& labels,
                             const std::vector<std::string>& cell_ids) {
  check(static_cast<Eigen::Index>(cell_ids.size()) == labels.size(),
        "write_labels_tsv: id count mismatch");
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error("write_labels_tsv: cannot open " + path.string());
  }
  out << "cell\ttype\n";
  for (Eigen::Index c = 0; c < labels.size(); ++c) {
    out << cell_ids[c] << '\t' << labels[c] + 1 << '\n';
  }
}

inline Eigen::VectorXi read_labels_tsv(const std::filesystem::path& path,
                                       const std::vector<std::string>& cell_ids,
                                       int n_cell_types) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("read_labels_tsv: cannot open " + path.string());
  }
  std::string line;
  check(static_cast<bool>(std::getline(in, line)),
        path.string() + ": empty file");
  Eigen::VectorXi labels(static_cast<Eigen::Index>(cell_ids.size()));
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto tokens = io_detail::split_tabs(line);
    if (tokens.size() != 2) {
      throw std::invalid_argument(path.string() + ": each row needs exactly "
                                  "two columns (cell, type)");
    }
    if (row >= cell_ids.size()) {
      throw std::invalid_argument(path.string() +
                                  ": more labels than single-cell columns");
    }
    if (tokens[0] != cell_ids[row]) {
      throw std::invalid_argument(
          path.string() + ": row " + std::to_string(row + 2) + ": cell id '" +
          tokens[0] + "' does not match single-cell column '" +
          cell_ids[row] + "'");
    }
    const double t =
        io_detail::parse_double(tokens[1], path.string(), row + 2, 2);
    if (t != std::floor(t) || t < 1 || t > n_cell_types) {
      throw std::invalid_argument(path.string() + ": row " +
                                  std::to_string(row + 2) +
                                  ": type must be an integer in [1, " +
                                  std::to_string(n_cell_types) + "]");
    }
    labels[static_cast<Eigen::Index>(row)] = static_cast<int>(t) - 1;
    ++row;
  }
  if (row != cell_ids.size()) {
    throw std::invalid_argument(path.string() +
                                ": fewer labels than single-cell columns");
  }
  return labels;
}

// ---------------------------------------------------------------------------
// Run configuration (JSON) and manifests.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::uint64_t seed = 0;
  double threshold = 0.5;
  SimConfig sim;
  FitConfig fit;
  Eigen::VectorXd prior_proportions;  // optional; empty = flat alpha
  std::vector<std::uint64_t> benchmark_seeds{1, 2, 3};
};

namespace io_detail {

using nlohmann::json;

inline void reject_unknown_keys(const json& obj, const char* section,
                                std::initializer_list<const char*> known) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    bool ok = false;
    for (const char* k : known) {
      if (key == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw std::invalid_argument(std::string("config: unknown key '") + key +
                                  "' in section '" + section + "'");
    }
  }
}

template <typename T>
void maybe(const json& obj, const char* key, T& target) {
  if (obj.contains(key)) target = obj.at(key).get<T>();
}

inline void parse_sim_section(const json& obj, SimConfig& sim) {
  reject_unknown_keys(obj, "sim",
                      {"n_genes", "n_cell_types", "n_cells", "n_bulk",
                       "cell_type_props", "alpha_true", "n_marker", "n_anti",
                       "n_house", "kappa_mean", "kappa_sd", "tau_mean_factor",
                       "tau_sd_factor", "bulk_depth_factor", "sc_depth_factor",
                       "sc_depth_dispersion", "profile_floor"});
  maybe(obj, "n_genes", sim.dims.n_genes);
  maybe(obj, "n_cell_types", sim.dims.n_cell_types);
  maybe(obj, "n_cells", sim.dims.n_cells);
  maybe(obj, "n_bulk", sim.dims.n_bulk);
  maybe(obj, "cell_type_props", sim.cell_type_props);
  if (obj.contains("alpha_true")) {
    const auto v = obj.at("alpha_true").get<std::vector<double>>();
    sim.alpha_true = Eigen::Map<const Eigen::VectorXd>(
        v.data(), static_cast<Eigen::Index>(v.size()));
  } else if (obj.contains("n_cell_types")) {
    // keep a matching default when only the type count changed
    sim.alpha_true = Eigen::VectorXd::Ones(sim.dims.n_cell_types);
  }
  maybe(obj, "n_marker", sim.n_marker);
  maybe(obj, "n_anti", sim.n_anti);
  maybe(obj, "n_house", sim.n_house);
  maybe(obj, "kappa_mean", sim.kappa_mean);
  maybe(obj, "kappa_sd", sim.kappa_sd);
  maybe(obj, "tau_mean_factor", sim.tau_mean_factor);
  maybe(obj, "tau_sd_factor", sim.tau_sd_factor);
  maybe(obj, "bulk_depth_factor", sim.bulk_depth_factor);
  maybe(obj, "sc_depth_factor", sim.sc_depth_factor);
  maybe(obj, "sc_depth_dispersion", sim.sc_depth_dispersion);
  maybe(obj, "profile_floor", sim.profile_floor);
  if (static_cast<int>(sim.cell_type_props.size()) != sim.dims.n_cell_types &&
      !obj.contains("cell_type_props")) {
    sim.cell_type_props.assign(sim.dims.n_cell_types,
                               1.0 / sim.dims.n_cell_types);
  }
}

inline FitMode parse_mode(const std::string& name) {
  if (name == "joint") return FitMode::kJoint;
  if (name == "sc-only") return FitMode::kSingleCellOnly;
  if (name == "map-fast") return FitMode::kMapFast;
  throw std::invalid_argument(
      "config: mode must be one of joint, sc-only, map-fast; got '" + name +
      "'");
}

inline void parse_fit_section(const json& obj, RunConfig& config) {
  reject_unknown_keys(obj, "fit",
                      {"mode", "n_sweeps", "burn_in_fraction", "thinning",
                       "max_em_iters", "tolerance", "patience",
                       "max_grad_iters", "eps_alpha", "eps_a",
                       "prior_proportions", "debug_checks"});
  FitConfig& fit = config.fit;
  if (obj.contains("mode")) fit.mode = parse_mode(obj.at("mode").get<std::string>());
  maybe(obj, "n_sweeps", fit.estep.n_sweeps);
  maybe(obj, "burn_in_fraction", fit.estep.burn_in_fraction);
  maybe(obj, "thinning", fit.estep.thinning);
  maybe(obj, "debug_checks", fit.estep.debug_checks);
  maybe(obj, "max_em_iters", fit.max_em_iters);
  maybe(obj, "tolerance", fit.tolerance);
  maybe(obj, "patience", fit.patience);
  maybe(obj, "max_grad_iters", fit.mstep.max_grad_iters);
  maybe(obj, "eps_alpha", fit.mstep.eps_alpha);
  maybe(obj, "eps_a", fit.mstep.eps_a);
  if (obj.contains("prior_proportions")) {
    const auto v = obj.at("prior_proportions").get<std::vector<double>>();
    config.prior_proportions = Eigen::Map<const Eigen::VectorXd>(
        v.data(), static_cast<Eigen::Index>(v.size()));
  }
}

}  // namespace io_detail

inline RunConfig parse_run_config(const nlohmann::json& doc) {
  io_detail::reject_unknown_keys(doc, "<root>",
                                 {"seed", "threshold", "sim", "fit",
                                  "benchmark"});
  RunConfig config;
  io_detail::maybe(doc, "seed", config.seed);
  io_detail::maybe(doc, "threshold", config.threshold);
  check(config.threshold > 0.0 && config.threshold < 1.0,
        "config: threshold must be in (0, 1)");
  if (doc.contains("sim")) io_detail::parse_sim_section(doc.at("sim"), config.sim);
  if (doc.contains("fit")) io_detail::parse_fit_section(doc.at("fit"), config);
  if (doc.contains("benchmark")) {
    io_detail::reject_unknown_keys(doc.at("benchmark"), "benchmark", {"seeds"});
    io_detail::maybe(doc.at("benchmark"), "seeds", config.benchmark_seeds);
    check(!config.benchmark_seeds.empty(),
          "config: benchmark.seeds must not be empty");
  }
  config.sim.validate();
  config.fit.validate();
  return config;
}

inline RunConfig load_run_config(const std::filesystem::path& path,
                                 nlohmann::json* raw = nullptr) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("config: cannot open " + path.string());
  }
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: " + path.string() + ": " + e.what());
  }
  if (raw) *raw = doc;
  return parse_run_config(doc);
}

/// FNV-1a hash of the canonical serialized configuration; stable across runs.
inline std::string config_hash(const nlohmann::json& doc) {
  const std::string dump = doc.dump();
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

/// Every output directory gets a manifest sufficient to reproduce the run.
inline void write_manifest(const std::filesystem::path& dir,
                           const std::string& command, std::uint64_t seed,
                           const nlohmann::json& config_doc,
                           const std::vector<std::string>& outputs,
                           const nlohmann::json& extra = {}) {
  nlohmann::json manifest;
  manifest["command"] = command;
  manifest["seed"] = seed;
  manifest["config"] = config_doc;
  manifest["config_hash"] = config_hash(config_doc);
  manifest["outputs"] = outputs;
  manifest["ursm_version"] = kVersion;
  manifest["format_version"] = 1;
  if (!extra.is_null()) manifest["info"] = extra;
  std::ofstream out(dir / "manifest.json");
  if (!out) {
    throw std::runtime_error("write_manifest: cannot open " +
                             (dir / "manifest.json").string());
  }
  out << manifest.dump(2) << '\n';
}

/// Default identifiers for generated data.
inline std::vector<std::string> default_ids(const std::string& prefix,
                                            Eigen::Index n) {
  std::vector<std::string> ids;
  ids.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    ids.push_back(prefix + std::to_string(i + 1));
  }
  return ids;
}

}  // namespace ursm
