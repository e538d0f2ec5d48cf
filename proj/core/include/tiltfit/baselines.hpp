#pragma once

#include "tiltfit/pet_optimizer.hpp"

namespace tiltfit {

enum class BaselineMethod { Mean, HardThreshold, SoftThreshold, QuadraticLoss, Pel };

struct BaselineEstimate {
    Eigen::VectorXd theta;
    BaselineMethod method = BaselineMethod::Mean;
    double tuning = 0.0;
};

/// Columnwise sample mean.
BaselineEstimate mean_estimator(const Dataset& data);

/// Keep coordinates with |xbar_j| > gamma1, zero the rest.
BaselineEstimate hard_threshold(const Eigen::VectorXd& xbar, double gamma1);

/// sign(xbar_j) (|xbar_j| - gamma2)_+ componentwise.
BaselineEstimate soft_threshold(const Eigen::VectorXd& xbar, double gamma2);

/// argmin (xbar-theta)' Wn^{-1} (xbar-theta) + gamma3 sum |theta_j| with Wn the
/// sample covariance (ridge 1e-8 fallback), solved by cyclic coordinate descent.
BaselineEstimate quadratic_loss(const Dataset& data, double gamma3);

/// Penalized empirical likelihood: identical contract to fit_pet with the
/// empirical-likelihood inner problem.
PetFit pel_fit(const MomentModel& model, const Dataset& data, const PenaltySpec& penalty,
               const FitOptions& opts = {});

}  // namespace tiltfit
