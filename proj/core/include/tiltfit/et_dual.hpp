#pragma once

#include <limits>

#include <Eigen/Dense>

#include "tiltfit/errors.hpp"

namespace tiltfit {

struct DualOptions {
    double tol = 1e-9;             // sup-norm tolerance on the dual gradient
    int max_iter = 100;
    double line_search_shrink = 0.5;
    int max_backtracks = 50;
    bool warm_start = true;        // start at the first-order dual approximation

    void validate() const;
};

/// Solution of the inner dual problem at fixed theta. `nu` is the Lagrange
/// multiplier (nu for exponential tilting, lambda for empirical likelihood),
/// `objective` the profiled per-observation objective value, and `weights`
/// the implied probabilities (strictly positive, summing to one).
struct DualSolution {
    Eigen::VectorXd nu;
    double objective = 0.0;
    Eigen::VectorXd weights;
    double grad_norm = std::numeric_limits<double>::infinity();
    int iterations = 0;
    bool converged = false;
};

/// log[(1/n) sum_i exp(nu' g_i)] with max-shift stabilization.
double et_objective(const Eigen::MatrixXd& G, const Eigen::VectorXd& nu);

/// Softmax of G*nu: the implied probabilities of the tilted distribution.
Eigen::VectorXd implied_weights(const Eigen::MatrixXd& G, const Eigen::VectorXd& nu);

/// First-order dual approximation -Sigma^{-1} gbar, with Sigma the sample
/// covariance of the rows of G (divisor n) and gbar the row mean. Falls back
/// to the zero vector when Sigma is numerically singular; `fallback` reports
/// whether that happened.
Eigen::VectorXd lemma_warm_start(const Eigen::MatrixXd& G, bool* fallback = nullptr);

/// Minimizes et_objective over nu by damped Newton with backtracking.
/// Throws ConvexHullViolation when the dual is unbounded (zero outside the
/// convex hull of the rows) and ConditioningError when the Hessian stays
/// singular after ridge escalation. Exhausting max_iter is not an error:
/// the solution is returned with converged = false.
DualSolution solve_dual(const Eigen::MatrixXd& G, const DualOptions& opts = {});

/// Internal variant with an explicit starting point candidate (the better of
/// `hint` and the lemma warm start is used).
DualSolution solve_dual(const Eigen::MatrixXd& G, const DualOptions& opts,
                        const Eigen::VectorXd* hint);

/// Empirical-likelihood inner problem: minimizes -(1/n) sum_i log(1+lambda' g_i)
/// over lambda with the interior safeguard 1 + lambda' g_i >= 1/n maintained by
/// step clipping. Weights are 1/(n (1 + lambda' g_i)).
DualSolution el_dual(const Eigen::MatrixXd& G, const DualOptions& opts = {});

DualSolution el_dual(const Eigen::MatrixXd& G, const DualOptions& opts,
                     const Eigen::VectorXd* hint);

}  // namespace tiltfit
