#pragma once

#include "tiltfit/errors.hpp"

namespace tiltfit {

enum class PenaltyKind { Scad, L1, Hard };

/// Folded-concave (or L1) penalty family with tuning parameter gamma.
/// SCAD uses shape constant a (> 2); the conventional choice is a = 3.7.
struct PenaltySpec {
    PenaltyKind kind = PenaltyKind::Scad;
    double gamma = 0.0;
    double a = 3.7;
    double lqa_epsilon = 1e-8;

    void validate() const;
};

/// p'_gamma(t) for t >= 0.
///   SCAD: gamma * { I(t <= gamma) + (a*gamma - t)_+ / ((a-1)*gamma) * I(t > gamma) }
///   L1:   gamma
///   Hard: gamma * I(t <= gamma)
double penalty_derivative(const PenaltySpec& spec, double t);

/// p_gamma(t) for t >= 0, the integral of penalty_derivative over [0, t].
double penalty_value(const PenaltySpec& spec, double t);

/// Local quadratic approximation coefficient p'_gamma(|theta|) / max(|theta|, eps).
/// Callers multiply by theta^2 / 2 to form the quadratic surrogate.
double lqa_coefficient(const PenaltySpec& spec, double theta_m);

}  // namespace tiltfit
