#include <doctest.h>

#include <cmath>
#include <vector>

#include "tiltfit/penalties.hpp"

using namespace tiltfit;

namespace {

// Quadrature oracle for penalty_value: composite Simpson on each interval
// between the knots gamma and a*gamma, where the derivative is smooth.
double integrate_derivative(const PenaltySpec& spec, double t) {
    if (t == 0.0) return 0.0;
    std::vector<double> knots{0.0};
    for (double k : {spec.gamma, spec.a * spec.gamma})
        if (k > 0.0 && k < t) knots.push_back(k);
    knots.push_back(t);

    double total = 0.0;
    const int panels = 2000;  // even
    for (size_t seg = 0; seg + 1 < knots.size(); ++seg) {
        const double lo = knots[seg], hi = knots[seg + 1];
        const double h = (hi - lo) / panels;
        // stay strictly inside the segment so jump points are never sampled
        double sum = penalty_derivative(spec, lo + h * 1e-9) +
                     penalty_derivative(spec, hi - h * 1e-9);
        for (int i = 1; i < panels; ++i)
            sum += (i % 2 ? 4.0 : 2.0) * penalty_derivative(spec, lo + i * h);
        total += sum * h / 3.0;
    }
    return total;
}

}  // namespace

TEST_SUITE_BEGIN("penalties");

TEST_CASE("SCAD derivative matches the closed formula") {
    PenaltySpec scad{PenaltyKind::Scad, 1.0, 3.7, 1e-8};
    CHECK(penalty_derivative(scad, 0.5) == doctest::Approx(1.0));
    CHECK(penalty_derivative(scad, 3.7) == doctest::Approx(0.0));
    CHECK(penalty_derivative(scad, 2.0) == doctest::Approx((3.7 - 2.0) / 2.7));
    CHECK(penalty_derivative(scad, 100.0) == 0.0);
    CHECK_THROWS_AS(penalty_derivative(scad, -0.1), NumericError);
}

TEST_CASE("penalty values at zero and in the flat region") {
    for (PenaltyKind kind : {PenaltyKind::Scad, PenaltyKind::L1, PenaltyKind::Hard}) {
        PenaltySpec spec{kind, 0.7, 3.7, 1e-8};
        CHECK(penalty_value(spec, 0.0) == 0.0);
    }
    PenaltySpec scad{PenaltyKind::Scad, 1.0, 3.7, 1e-8};
    CHECK(penalty_value(scad, 10.0) == doctest::Approx(0.5 * 4.7));  // (a+1) g^2 / 2
}

TEST_CASE("SCAD value is continuous at the knots") {
    PenaltySpec scad{PenaltyKind::Scad, 0.8, 3.7, 1e-8};
    const double g = scad.gamma, a = scad.a;
    const double eps = 1e-9;
    CHECK(std::abs(penalty_value(scad, g - eps) - penalty_value(scad, g + eps)) < 1e-7);
    CHECK(std::abs(penalty_value(scad, a * g - eps) - penalty_value(scad, a * g + eps)) < 1e-7);
    // exact agreement of the piecewise forms at the knots
    CHECK(penalty_value(scad, g) == doctest::Approx(g * g).epsilon(1e-12));
    CHECK(penalty_value(scad, a * g) == doctest::Approx(0.5 * (a + 1) * g * g).epsilon(1e-12));
}

TEST_CASE("penalty value equals quadrature of the derivative") {
    for (PenaltyKind kind : {PenaltyKind::Scad, PenaltyKind::L1, PenaltyKind::Hard}) {
        PenaltySpec spec{kind, 0.6, 3.7, 1e-8};
        for (double t : {0.1, 0.45, 0.6, 1.3, 2.22, 5.0}) {
            const double oracle = integrate_derivative(spec, t);
            CHECK(std::abs(penalty_value(spec, t) - oracle) < 1e-8);
        }
    }
}

TEST_CASE("SCAD derivative is nonnegative and non-increasing") {
    PenaltySpec scad{PenaltyKind::Scad, 0.9, 3.7, 1e-8};
    double prev = penalty_derivative(scad, 0.0);
    for (int i = 1; i <= 1000; ++i) {
        const double t = 5.0 * i / 1000.0;
        const double d = penalty_derivative(scad, t);
        CHECK(d >= 0.0);
        CHECK(d <= prev + 1e-15);
        prev = d;
    }
}

TEST_CASE("L1 has no unbiasedness region, SCAD does") {
    PenaltySpec l1{PenaltyKind::L1, 0.4, 3.7, 1e-8};
    PenaltySpec scad{PenaltyKind::Scad, 0.4, 3.7, 1e-8};
    for (double t : {0.01, 1.0, 10.0, 100.0})
        CHECK(penalty_derivative(l1, t) == doctest::Approx(0.4));
    for (double t : {1.48, 2.0, 50.0})  // t >= a*gamma
        CHECK(penalty_derivative(scad, t) == 0.0);
}

TEST_CASE("LQA coefficients") {
    PenaltySpec scad{PenaltyKind::Scad, 1.0, 3.7, 1e-8};
    CHECK(lqa_coefficient(scad, 0.5) == doctest::Approx(2.0));
    CHECK(lqa_coefficient(scad, -0.5) == doctest::Approx(2.0));
    CHECK(lqa_coefficient(scad, 5.0) == 0.0);
    // at zero the floor applies: gamma / epsilon, finite and large
    const double at_zero = lqa_coefficient(scad, 0.0);
    CHECK(at_zero == doctest::Approx(1.0 / 1e-8));
    CHECK(std::isfinite(at_zero));
}

TEST_CASE("spec validation") {
    PenaltySpec bad{PenaltyKind::Scad, 1.0, 1.5, 1e-8};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    PenaltySpec neg{PenaltyKind::L1, -0.1, 3.7, 1e-8};
    CHECK_THROWS_AS(neg.validate(), ConfigError);
}

TEST_SUITE_END();
