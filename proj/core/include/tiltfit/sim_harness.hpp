#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tiltfit/rng.hpp"
#include "tiltfit/tuning.hpp"

namespace tiltfit {

enum class Method { Pet, Mean, Ht, St, Ql, Pel };

std::string method_name(Method m);
Method method_from_name(const std::string& name);

/// Declarative Monte Carlo study description.
struct ExperimentConfig {
    enum class Kind { Exp1, Exp2, Exp3 };
    enum class Regime { CM, MS };

    Kind experiment = Kind::Exp1;
    int n = 50;
    int p = 7;         // Exp1/Exp2 parameter dimension
    int q_omega = 3;   // Exp3 latent dimension
    double rho = 0.3;  // Exp1 equicorrelation
    Regime regime = Regime::CM;
    int reps = 200;
    std::uint64_t seed = 1;
    PenaltySpec penalty{PenaltyKind::Scad, 0.0, 3.7, 1e-8};
    CriterionKind criterion = CriterionKind::aBIC;
    bool use_gcv = false;  // tune by GCV instead of an information criterion
    std::vector<Method> methods = {Method::Pet};
    bool standardize_z = false;   // rescale (Z-1)/sqrt(2) in Exp1
    bool zero_couplings = false;  // Exp3 variant with U = 0
    std::vector<double> gamma_grid;      // empty -> default grid
    std::vector<double> threshold_grid;  // HT/ST/QL cross-validation grid
    std::optional<double> fixed_gamma;   // skip the tuning path
    bool fixed_p_criterion = false;
    int workers = 0;  // 0 -> TILTFIT_THREADS or hardware concurrency
    FitOptions fit;

    void validate() const;
};

struct MethodMetrics {
    Eigen::VectorXd rms;   // per coefficient
    Eigen::VectorXd sd;
    Eigen::VectorXd bias;  // mean estimate - true
    double T = 0.0;        // mean correctly-zero count
    double F = 0.0;        // mean incorrectly-zero count
    double ams = 0.0;      // mean active-set size
    double pcim = 0.0;     // exact support recovery fraction
    int successes = 0;
};

struct MetricsTable {
    ExperimentConfig config;
    Eigen::VectorXd theta_true;
    std::vector<int> selection_scope;  // coordinates entering T/F/AMS/PCIM
    std::vector<std::pair<Method, MethodMetrics>> per_method;
    int failures = 0;
    std::vector<std::string> failure_messages;
};

/// X_i = theta0 + R^{1/2} (Z_i - 1) with Z iid chi^2_1 (CM) or chi^2_{1.2}
/// (MS) and R the equicorrelation matrix; theta0 = (1, 0.6, 0.3, 0, ..., 0).
std::pair<Dataset, Eigen::VectorXd> gen_exp1(int n, int p, double rho,
                                             ExperimentConfig::Regime regime, Rng& rng,
                                             bool standardize_z = false);

/// gen_exp1 with an explicit true parameter (used by the coverage study).
std::pair<Dataset, Eigen::VectorXd> gen_exp1_at(int n, int p, double rho,
                                                ExperimentConfig::Regime regime, Rng& rng,
                                                const Eigen::VectorXd& theta0,
                                                bool standardize_z = false);

/// Z ~ N(0, Toeplitz(0.5^{|j-l|})), Y = Z'theta0 + eps, instruments
/// U = Z + N(0, I); rows (z, u, y); theta0 = (3, 1.5, 0, 0, 2, 0, ..., 0).
std::pair<Dataset, Eigen::VectorXd> gen_exp2(int n, int p, Rng& rng);

/// Structural equation model draws Y = Z omega + eps with
/// omega = (I-U)^{-1} zeta; all true loadings/variances 0.8, couplings 0.8 on
/// the first off-diagonals (or all zero in the zero_couplings variant).
std::pair<Dataset, Eigen::VectorXd> gen_exp3(int n, int q_omega, Rng& rng,
                                             bool zero_couplings = false);

/// Runs the configured replications concurrently (deterministically in the
/// replication index) and aggregates RMS/SD/Bias/T/F/AMS/PCIM per method.
MetricsTable run_experiment(const ExperimentConfig& config);

/// Per-coefficient metric aggregation over per-replication estimates; exposed
/// for oracle-style testing of the bookkeeping.
MethodMetrics aggregate_metrics(const std::vector<Eigen::VectorXd>& estimates,
                                const Eigen::VectorXd& theta_true,
                                const std::vector<int>& scope,
                                double zero_tol = 0.001);

struct CoverageRow {
    double theta2 = 0.0;
    double non_coverage = 0.0;        // rejection frequency of the reference value
    std::vector<double> statistics;   // LR statistics per successful replication
    int successes = 0;
    int failures = 0;
};

struct CoverageStudy {
    double alpha = 0.05;
    double null_value = 0.6;  // tested reference value of theta_2
    std::vector<CoverageRow> rows;
};

/// For each generating value of theta_2, fits/selects on fresh Exp1 data and
/// tests H0: theta_2 = 0.6, recording how often the reference value falls
/// outside the (1-alpha) confidence region.
CoverageStudy coverage_study(const ExperimentConfig& config,
                             const std::vector<double>& theta2_values, double alpha = 0.05);

/// Worker count: explicit request, else TILTFIT_THREADS, else hardware.
int resolve_workers(int requested, int tasks);

}  // namespace tiltfit
