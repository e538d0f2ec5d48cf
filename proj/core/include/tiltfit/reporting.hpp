#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tiltfit/inference.hpp"
#include "tiltfit/sim_harness.hpp"

namespace tiltfit {

using Cell = std::variant<std::monostate, double, std::string>;

struct Table {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

/// Results container persisted by the CLI: canonical config text with its
/// hash (tamper check), rendered tables, and per-fit JSON-line records.
struct ResultsArchive {
    std::string config_text;
    std::string config_hash;
    std::string timestamp;
    std::string version;
    std::vector<Table> tables;
    std::vector<std::string> fit_records;  // JSON lines
    std::vector<std::string> notes;

    void verify_hash() const;  // recomputes and compares
};

std::string config_hash(const std::string& canonical_text);

/// Flat key = value configuration with dotted sections; '#' starts a comment.
std::map<std::string, std::string> parse_config_text(const std::string& text);
std::map<std::string, std::string> parse_config_file(const std::string& path);
std::string canonical_config_text(const std::map<std::string, std::string>& kv);

ExperimentConfig experiment_from_config(const std::map<std::string, std::string>& kv);

struct CoverageSettings {
    std::vector<double> theta2_values{0.4, 0.5, 0.6, 0.7, 0.8};
    double alpha = 0.05;
};
CoverageSettings coverage_from_config(const std::map<std::string, std::string>& kv);

struct IngestResult {
    Dataset data;                     // covariates first, response last
    std::vector<std::string> labels;  // same order as columns
    int covariate_count = 0;
};

/// Header-row CSV of numeric cells; the response column (by name, or the last
/// column when the name is empty) is moved to the end and optionally
/// log-transformed.
IngestResult ingest_csv(const std::string& path, const std::string& response_column = "",
                        bool log_response = false);

struct InteractionDesign {
    Eigen::MatrixXd design;
    std::vector<std::string> labels;
};

/// Intercept (optional), the k main effects, then pairwise products x_j x_l
/// (j < l) in lexicographic order with labels like "x1*x4".
InteractionDesign expand_interactions(const Eigen::MatrixXd& covariates,
                                      bool add_intercept = true,
                                      const std::vector<std::string>& names = {});

struct BostonOptions {
    std::string input_path;
    std::string response_column;  // empty -> last column
    bool log_response = true;
    std::uint64_t seed = 1;
    PenaltySpec penalty{PenaltyKind::Scad, 0.0, 3.7, 1e-8};
    std::vector<double> gamma_grid;  // empty -> default
    FitOptions fit;
    double ci_level = 0.95;
};

/// End-to-end Boston Housing pipeline: standardize the 13 covariates, expand
/// to the 92-column interaction design, tune by GCV, fit PET and PEL, and
/// report estimates, standard errors, and Wald confidence intervals for the
/// selected coefficients.
ResultsArchive run_boston(const BostonOptions& opts);

/// Renders `metrics.csv` (full precision, RFC 4180) and `report.md` /
/// `report.txt` (3-decimal display) into output_dir; returns written paths.
std::vector<std::string> render_tables(const ResultsArchive& archive,
                                       const std::string& format,
                                       const std::filesystem::path& output_dir);

/// Writes the archive's JSON-line fit records to fits.jsonl.
std::string write_fit_records(const ResultsArchive& archive,
                              const std::filesystem::path& output_dir);

Table metrics_to_table(const MetricsTable& metrics);
Table coverage_to_table(const CoverageStudy& study);

/// Minimal RFC-4180 reader used for round-trip checks.
std::vector<std::vector<std::string>> read_csv(const std::string& path);

}  // namespace tiltfit
