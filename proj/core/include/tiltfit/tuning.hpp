#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tiltfit/baselines.hpp"
#include "tiltfit/pet_optimizer.hpp"

namespace tiltfit {

enum class CriterionKind { aBIC, BIC, AIC };

/// Fits along an ascending gamma grid with their criterion scores; `chosen`
/// minimizes the score with ties broken toward larger gamma (sparser model).
struct GammaPath {
    std::vector<double> grid;
    std::vector<PetFit> fits;
    std::vector<bool> ok;
    std::vector<std::string> failures;
    std::vector<double> scores;
    int chosen = -1;

    const PetFit& chosen_fit() const;
};

/// aBIC(gamma) = -2 l(theta_hat) + C_n (log n / n) df with
/// C_n = max(log log p, 1); BIC uses C_n = 1, AIC the penalty 2/n per df.
/// fixed_p forces C_n = 1 for large fixed dimensions.
double information_criterion(const PetFit& fit, int n, int p, CriterionKind kind,
                             bool fixed_p = false);

/// 40 log-spaced points on [0.01, 2] * sqrt(log p / n).
std::vector<double> default_gamma_grid(int p, int n, int points = 40);

GammaPath select_gamma(const MomentModel& model, const Dataset& data,
                       const PenaltySpec& family, const FitOptions& opts,
                       const std::vector<double>& grid, CriterionKind kind,
                       bool fixed_p = false);

/// Rescores an existing path under another criterion; returns the chosen index.
int choose_on_path(const GammaPath& path, int n, int p, CriterionKind kind,
                   bool fixed_p = false);

/// GCV(gamma) = n^{-1} ||Y - X theta||^2 / (1 - e(gamma)/n)^2 with
/// e(gamma) = tr(X_A (X_A'X_A + n B_A)^{-1} X_A') over the active columns.
double gcv_score(const Eigen::VectorXd& theta_gamma, const Eigen::MatrixXd& X,
                 const Eigen::VectorXd& Y, const PenaltySpec& penalty);

GammaPath select_gamma_gcv(const MomentModel& model, const Dataset& data,
                           const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                           const PenaltySpec& family, const FitOptions& opts,
                           const std::vector<double>& grid);

/// Five-fold (or k-fold) cross-validated threshold for the HT/ST/QL baselines,
/// minimizing held-out squared predictive error for the mean vector. Ties
/// resolve toward the larger threshold.
double cv_threshold(const Dataset& data, BaselineMethod kind, const std::vector<double>& grid,
                    int folds = 5, std::uint64_t seed = 0);

}  // namespace tiltfit
