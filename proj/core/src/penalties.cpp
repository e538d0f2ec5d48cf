#include "tiltfit/penalties.hpp"

#include <algorithm>
#include <cmath>

namespace tiltfit {

void PenaltySpec::validate() const {
    if (gamma < 0.0) throw ConfigError("penalty gamma must be >= 0");
    if (kind == PenaltyKind::Scad && a <= 2.0)
        throw ConfigError("SCAD shape constant a must exceed 2");
    if (lqa_epsilon <= 0.0) throw ConfigError("lqa_epsilon must be positive");
}

double penalty_derivative(const PenaltySpec& spec, double t) {
    if (t < 0.0) throw NumericError("penalty_derivative: negative magnitude");
    const double g = spec.gamma;
    switch (spec.kind) {
        case PenaltyKind::L1:
            return g;
        case PenaltyKind::Hard:
            return t <= g ? g : 0.0;
        case PenaltyKind::Scad: {
            if (t <= g) return g;
            const double clipped = std::max(spec.a * g - t, 0.0);
            return clipped / (spec.a - 1.0);
        }
    }
    return 0.0;
}

double penalty_value(const PenaltySpec& spec, double t) {
    if (t < 0.0) throw NumericError("penalty_value: negative magnitude");
    const double g = spec.gamma;
    switch (spec.kind) {
        case PenaltyKind::L1:
            return g * t;
        case PenaltyKind::Hard:
            return t <= g ? g * t : g * g;
        case PenaltyKind::Scad: {
            const double a = spec.a;
            if (t <= g) return g * t;
            if (t <= a * g) return -(t * t - 2.0 * a * g * t + g * g) / (2.0 * (a - 1.0));
            return 0.5 * (a + 1.0) * g * g;
        }
    }
    return 0.0;
}

double lqa_coefficient(const PenaltySpec& spec, double theta_m) {
    const double t = std::abs(theta_m);
    return penalty_derivative(spec, t) / std::max(t, spec.lqa_epsilon);
}

}  // namespace tiltfit
