#pragma once

#include "tiltfit/pet_optimizer.hpp"

namespace tiltfit {

/// Linear hypothesis B theta_1 = target with orthonormal rows (B B' = I_d).
struct Hypothesis {
    Eigen::MatrixXd B;       // d x q
    Eigen::VectorXd target;  // d-vector; empty means zero

    int d() const { return static_cast<int>(B.rows()); }
    int q() const { return static_cast<int>(B.cols()); }
    Eigen::VectorXd xi() const;
    void validate() const;

    /// Single-coordinate hypothesis theta_{1,j} = value (0-based j).
    static Hypothesis coordinate(int q, int j, double value = 0.0);
};

struct TestResult {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    PetFit fit_unconstrained;
    PetFit fit_constrained;
};

struct ConfidenceInterval {
    double lo = 0.0;
    double hi = 0.0;
    bool non_monotone = false;  // profile was not monotone while bracketing
};

/// chi^2_d lower CDF via the regularized incomplete gamma function
/// (series + continued fraction), absolute accuracy ~1e-10.
double chisq_cdf(double x, int d);

/// Upper-p quantile inverse of chisq_cdf, cdf(quantile(p,d), d) = p to ~1e-8.
double chisq_quantile(double p, int d);

/// Maximizes the penalized profiled objective subject to B theta_1 = xi by
/// reparameterizing theta_1 = B' xi + N beta over an orthonormal null-space
/// basis N of B. The returned fit satisfies the constraint to ~1e-10.
PetFit constrained_fit(const MomentModel& model_reduced, const Dataset& data,
                       const PenaltySpec& penalty, const Hypothesis& hyp,
                       const FitOptions& opts = {});

/// Likelihood-ratio statistic 2n { l_p(theta_hat) - max_{B theta = xi} l_p }
/// referred to chi^2_d. A precomputed unconstrained fit may be supplied.
TestResult lr_test(const MomentModel& model_reduced, const Dataset& data,
                   const PenaltySpec& penalty, const Hypothesis& hyp,
                   const FitOptions& opts = {}, const PetFit* unconstrained = nullptr);

/// Inverts the d=1 test by expanding brackets outward from B theta_hat and
/// bisecting each endpoint to absolute tolerance 1e-4.
ConfidenceInterval confidence_interval(const MomentModel& model_reduced, const Dataset& data,
                                       const PenaltySpec& penalty, const Hypothesis& hyp,
                                       double alpha, const FitOptions& opts = {});

/// Plug-in standard errors sqrt(diag((Gamma1' Sigma1^{-1} Gamma1)^{-1}) / n)
/// with sample analogues weighted by the implied probabilities at theta_hat.
Eigen::VectorXd asymptotic_se(const PetFit& fit, const MomentModel& model_reduced,
                              const Dataset& data);

}  // namespace tiltfit
