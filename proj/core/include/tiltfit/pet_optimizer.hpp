#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "tiltfit/et_dual.hpp"
#include "tiltfit/moment_models.hpp"
#include "tiltfit/penalties.hpp"

namespace tiltfit {

enum class DualKind { ExponentialTilt, EmpiricalLikelihood };

struct FitOptions {
    double zero_threshold = 0.001;  // components below this are set to exact zero
    double outer_tol = 1e-6;        // sup-norm step tolerance
    int max_outer = 200;
    std::optional<int> sieve_cap;   // max cardinality of the nonzero set
    bool auto_adjust = true;        // retry with adjusted moments on hull violations
    std::optional<Eigen::VectorXd> init;
    DualOptions dual;
    DualKind dual_kind = DualKind::ExponentialTilt;
    std::vector<int> penalized;     // empty -> all coordinates penalized

    void validate() const;
};

struct PetFit {
    Eigen::VectorXd theta;
    ActiveSet active;            // indices with theta_j != 0
    DualSolution dual;           // inner solution at theta
    double objective_unpenalized = 0.0;
    double objective_penalized = 0.0;
    double gamma = 0.0;
    int outer_iterations = 0;
    std::vector<std::pair<Eigen::VectorXd, double>> trace;  // (theta, penalized objective)
    bool adjusted = false;
    bool converged = false;
};

/// Profiled objective l(nu(theta), theta): evaluates the moments at theta and
/// solves the inner dual. The estimator maximizes this over theta after the
/// inner infimum over nu. Convex-hull violations propagate to the caller.
std::pair<double, DualSolution> profiled_objective(
    const MomentModel& model, const Dataset& data, const Eigen::VectorXd& theta,
    const DualOptions& opts = {}, DualKind kind = DualKind::ExponentialTilt);

/// Exact gradient of the profiled objective by the envelope property:
/// sum_i w_i (dg_i/dtheta')' nu for exponential tilting (sign flipped for the
/// empirical-likelihood multiplier).
Eigen::VectorXd theta_gradient(const MomentModel& model, const Dataset& data,
                               const Eigen::VectorXd& theta, const DualSolution& dual,
                               DualKind kind = DualKind::ExponentialTilt);

/// Appends the pseudo-observation -(a/n) sum_i g_i with a = max(1, log(n)/2),
/// guaranteeing zero lies in the convex hull of the augmented rows.
Eigen::MatrixXd adjusted_moments(const Eigen::MatrixXd& G);

/// Maximizes the penalized profiled objective by an LQA-Newton loop with
/// damped steps, zero-thresholding of penalized coordinates, and an optional
/// sieve cardinality cap. On a convex-hull violation with auto_adjust the fit
/// transparently restarts on adjusted moments and is flagged `adjusted`.
PetFit fit_pet(const MomentModel& model, const Dataset& data, const PenaltySpec& penalty,
               const FitOptions& opts = {});

/// Selection rule {j : |theta_j| > gamma}.
ActiveSet apply_selection(const PetFit& fit, double gamma);

/// Unpenalized profiled fit with the coordinates outside `support` pinned to
/// zero and every moment row kept: the sieve-restricted estimator reported
/// for a selected support. An empty support evaluates theta = 0.
PetFit fit_on_support(const MomentModel& model, const Dataset& data,
                      const ActiveSet& support, const FitOptions& opts = {},
                      const Eigen::VectorXd* init = nullptr);

/// Cyclic blockwise fitting for the structural equation model: couplings,
/// measurement variances, latent variances, loadings in turn, each block
/// maximized by the LQA loop with the others frozen. Only the coupling
/// parameters are penalized; variances are optimized on the log scale and
/// reported on the natural scale. Adjusted moments are used throughout.
PetFit fit_pet_blockwise(const MomentModel& sem, const Dataset& data,
                         const PenaltySpec& penalty, const FitOptions& opts = {});

namespace detail {

/// Maximizes l_p(offset + basis * beta) over beta with the fit_pet machinery
/// but no thresholding (the parameterization is not axis-aligned). Used for
/// constrained fits; penalty applies to the theta coordinates.
PetFit fit_linear_subspace(const MomentModel& model, const Dataset& data,
                           const PenaltySpec& penalty, const Eigen::VectorXd& offset,
                           const Eigen::MatrixXd& basis, const Eigen::VectorXd& beta0,
                           const FitOptions& opts);

}  // namespace detail

}  // namespace tiltfit
