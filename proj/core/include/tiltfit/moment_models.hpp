#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "tiltfit/errors.hpp"

namespace tiltfit {

/// n observations of identical length, row per observation.
struct Dataset {
    Eigen::MatrixXd rows;
    std::vector<std::string> column_names;

    Dataset() = default;
    explicit Dataset(Eigen::MatrixXd m, std::vector<std::string> names = {});

    int n() const { return static_cast<int>(rows.rows()); }
    int dim() const { return static_cast<int>(rows.cols()); }
};

/// Ordered set of free (nonzero) parameter indices, 0-based; the complement
/// is treated as pinned to zero.
struct ActiveSet {
    std::vector<int> indices;

    static ActiveSet of(std::vector<int> idx, int p);
    static ActiveSet full(int p);

    int size() const { return static_cast<int>(indices.size()); }
    bool contains(int j) const;
};

/// A moment-condition specification: r estimating functions of an observation
/// and a p-dimensional parameter, with Jacobian d g / d theta' (r x p).
struct MomentModel {
    int p = 0;
    int r = 0;
    std::string label;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> g;
    std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> jac;

    /// Rows that stay informative when only `active` (original indices) are
    /// free; unset means every row is kept under restriction.
    std::function<std::vector<int>(const std::vector<int>&)> informative_rows;

    /// Model-specific initial value (sample mean, least squares, ...).
    std::function<Eigen::VectorXd(const Dataset&)> init;
};

/// g(x, theta) = x - theta, r = p.
MomentModel mean_model(int p);

/// Scores of a linear regression. Observation layout (z_1..z_p, y), or
/// (z_1..z_p, u_1..u_p, y) when instrumented; g_j = z_j (y - z'theta), with
/// the instrument block u_j (y - z'theta) appended when instrumented (r = 2p).
MomentModel linear_regression_model(int p, bool instrumented = false);

struct ProjectedIvModel {
    MomentModel model;  // g(xt, y; theta) = xt (y - xt'theta), r = p
    Dataset data;       // rows (xt_1..xt_p, y) with xt the projected regressors
};

/// Projects the endogenous regressors onto the instrument column space,
/// Xt = D (D'D)^{-1} D' Y, and returns the r = p model on the transformed data.
ProjectedIvModel projected_iv_model(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& D,
                                    const Eigen::VectorXd& y);

/// Index layout of the structural-equation-model parameter vector:
/// loadings b_{2l,l} (q), coupling off-diagonals row-major (q(q-1)),
/// measurement variances (2q), latent variances (q).
struct SemLayout {
    int q_omega = 0;
    int p_y = 0;
    int p = 0;
    int r = 0;
    std::pair<int, int> loadings;   // [begin, end)
    std::pair<int, int> couplings;
    std::pair<int, int> phi;
    std::pair<int, int> psi;

    std::vector<int> coupling_indices() const;
    std::vector<int> variance_indices() const;  // phi then psi
};

SemLayout sem_layout(int q_omega);

/// Implied covariance Z (I-U)^{-1} Psi (I-U)^{-T} Z' + Phi at the packed theta.
Eigen::MatrixXd sem_implied_covariance(int q_omega, const Eigen::VectorXd& theta);

/// Second-moment model g(y; theta) = vech(y y' - O(theta)) with p_y = 2 q_omega
/// manifest variables and r = p_y (p_y + 1) / 2 moment components.
MomentModel sem_model(int q_omega);

/// Reduced model with free parameters = active indices and the rest pinned to
/// zero; moment rows that become uninformative are dropped where the model
/// declares them (mean and regression models).
MomentModel restrict(const MomentModel& model, const ActiveSet& active);

/// Central finite differences of g columnwise. h <= 0 selects the default
/// per-coordinate step 1e-6 * max(1, |theta_j|).
Eigen::MatrixXd fd_jacobian(const MomentModel& model, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& theta, double h = 0.0);

/// n x r matrix of moment evaluations, row i = g(x_i, theta)'.
Eigen::MatrixXd moment_matrix(const MomentModel& model, const Dataset& data,
                              const Eigen::VectorXd& theta);

/// sum_i w_i dg(x_i;theta)/dtheta' (r x p). Weights of length n.
Eigen::MatrixXd weighted_jacobian(const MomentModel& model, const Dataset& data,
                                  const Eigen::VectorXd& theta,
                                  const Eigen::VectorXd& weights);

/// Model-declared initial value, or zero when the model does not declare one.
Eigen::VectorXd default_initial_theta(const MomentModel& model, const Dataset& data);

}  // namespace tiltfit
