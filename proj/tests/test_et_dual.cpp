#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "tiltfit/et_dual.hpp"

using namespace tiltfit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd two_point(double a, double b) {
    MatrixXd G(2, 1);
    G << a, b;
    return G;
}

// 1-D bisection oracle on the ET stationarity sum_i g_i exp(nu g_i) = 0.
double bisect_et_scalar(const MatrixXd& G, double lo, double hi) {
    auto s = [&](double nu) {
        double acc = 0.0;
        for (int i = 0; i < G.rows(); ++i) acc += G(i, 0) * std::exp(nu * G(i, 0));
        return acc;
    };
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (s(lo) * s(mid) <= 0.0)
            hi = mid;
        else
            lo = mid;
    }
    return 0.5 * (lo + hi);
}

MatrixXd random_gaussian(int n, int r, std::mt19937_64& eng, double mean_scale = 0.3) {
    std::normal_distribution<double> nd;
    MatrixXd G(n, r);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < r; ++j) G(i, j) = nd(eng) + mean_scale * (j + 1) / r;
    return G;
}

}  // namespace

TEST_SUITE_BEGIN("et_dual");

TEST_CASE("et_objective closed forms") {
    MatrixXd G = two_point(-1.0, 1.0);
    CHECK(et_objective(G, VectorXd::Zero(1)) == doctest::Approx(0.0));

    VectorXd nu(1);
    nu << 0.5;
    CHECK(et_objective(G, nu) == doctest::Approx(std::log(std::cosh(0.5))).epsilon(1e-12));

    MatrixXd bad = G;
    bad(0, 0) = std::nan("");
    CHECK_THROWS_AS(et_objective(bad, nu), DataError);
}

TEST_CASE("shifting the moments shifts the objective by nu'c") {
    std::mt19937_64 eng(7);
    MatrixXd G = random_gaussian(12, 3, eng);
    VectorXd nu(3);
    nu << 0.3, -0.2, 0.15;
    VectorXd c(3);
    c << 1.5, -2.0, 0.4;
    MatrixXd Gs = G;
    Gs.rowwise() += c.transpose();
    CHECK(et_objective(Gs, nu) ==
          doctest::Approx(et_objective(G, nu) + nu.dot(c)).epsilon(1e-12));
}

TEST_CASE("log-sum-exp stabilization matches the naive formula") {
    std::mt19937_64 eng(11);
    for (int rep = 0; rep < 20; ++rep) {
        MatrixXd G = random_gaussian(15, 2, eng);
        VectorXd nu = VectorXd::Random(2);
        double naive = 0.0;
        for (int i = 0; i < G.rows(); ++i) naive += std::exp(nu.dot(G.row(i)));
        naive = std::log(naive / G.rows());
        CHECK(std::abs(et_objective(G, nu) - naive) < 1e-12);
    }
}

TEST_CASE("implied weights: uniform at zero, hand softmax, shift invariance") {
    MatrixXd G = two_point(-1.0, 1.0);
    const VectorXd w0 = implied_weights(G, VectorXd::Zero(1));
    CHECK(w0(0) == doctest::Approx(0.5));
    CHECK(w0(1) == doctest::Approx(0.5));

    // n=2 with G*nu = (ln 3, 0) -> weights (0.75, 0.25)
    MatrixXd G2 = two_point(std::log(3.0), 0.0);
    VectorXd one(1);
    one << 1.0;
    const VectorXd w = implied_weights(G2, one);
    CHECK(w(0) == doctest::Approx(0.75).epsilon(1e-12));
    CHECK(w(1) == doctest::Approx(0.25).epsilon(1e-12));

    // adding a constant to every nu'g_i leaves weights unchanged
    MatrixXd G3 = G2;
    G3.array() += 17.0;
    CHECK((implied_weights(G3, one) - w).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("solve_dual: symmetric data gives nu = 0") {
    DualSolution sol = solve_dual(two_point(-1.0, 1.0));
    CHECK(sol.converged);
    CHECK(std::abs(sol.nu(0)) < 1e-9);
    CHECK(sol.objective == doctest::Approx(0.0));
    CHECK(sol.weights.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("solve_dual: two-point instance against the bisection oracle") {
    MatrixXd G = two_point(-1.2, 0.8);
    DualSolution sol = solve_dual(G);
    CHECK(sol.converged);
    const double analytic = 0.5 * std::log(1.5);  // stationarity solved in closed form
    CHECK(sol.nu(0) == doctest::Approx(analytic).epsilon(1e-8));
    const double oracle = bisect_et_scalar(G, -5.0, 5.0);
    CHECK(sol.nu(0) == doctest::Approx(oracle).epsilon(1e-8));
}

TEST_CASE("solve_dual: strictly positive scalar moments violate the hull") {
    MatrixXd G(4, 1);
    G << 0.5, 1.0, 1.5, 2.0;
    CHECK_THROWS_AS(solve_dual(G), ConvexHullViolation);
}

TEST_CASE("solve_dual: weighted moment identity and gradient tolerance") {
    std::mt19937_64 eng(23);
    for (int rep = 0; rep < 10; ++rep) {
        MatrixXd G = random_gaussian(20, 3, eng);
        DualSolution sol = solve_dual(G);
        REQUIRE(sol.converged);
        const VectorXd q = G.transpose() * sol.weights;
        CHECK(q.lpNorm<Eigen::Infinity>() <= 1e-9);
        CHECK(sol.grad_norm <= 1e-9);
        CHECK(sol.weights.minCoeff() > 0.0);
        CHECK(std::abs(sol.weights.sum() - 1.0) < 1e-10);
    }
}

TEST_CASE("dual objective gradient matches finite differences") {
    std::mt19937_64 eng(29);
    MatrixXd G = random_gaussian(18, 3, eng);
    VectorXd nu(3);
    nu << 0.2, -0.1, 0.05;
    const VectorXd w = implied_weights(G, nu);
    const VectorXd analytic = G.transpose() * w;
    for (int j = 0; j < 3; ++j) {
        const double h = 1e-6;
        VectorXd hi = nu, lo = nu;
        hi(j) += h;
        lo(j) -= h;
        const double fd = (et_objective(G, hi) - et_objective(G, lo)) / (2 * h);
        CHECK(std::abs(fd - analytic(j)) / std::max(1.0, std::abs(analytic(j))) < 1e-6);
    }
}

TEST_CASE("lemma warm start closed forms and fallback") {
    // gbar = 0 -> zero warm start
    bool fb = false;
    VectorXd ws = lemma_warm_start(two_point(-1.0, 1.0), &fb);
    CHECK(!fb);
    CHECK(std::abs(ws(0)) < 1e-14);

    // scalar G = {0, 2}: gbar = 1, population variance 1 -> nu0 = -1
    ws = lemma_warm_start(two_point(0.0, 2.0), &fb);
    CHECK(!fb);
    CHECK(ws(0) == doctest::Approx(-1.0).epsilon(1e-12));

    // identical rows -> singular covariance -> zero with fallback flag
    MatrixXd same(3, 2);
    same << 1.0, 2.0, 1.0, 2.0, 1.0, 2.0;
    ws = lemma_warm_start(same, &fb);
    CHECK(fb);
    CHECK(ws.lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("warm start reduces Newton iterations on random instances") {
    std::mt19937_64 eng(31);
    std::vector<int> warm_iters, cold_iters;
    for (int rep = 0; rep < 20; ++rep) {
        MatrixXd G = random_gaussian(30, 3, eng);
        DualOptions warm;
        DualOptions cold;
        cold.warm_start = false;
        DualSolution sw = solve_dual(G, warm);
        DualSolution sc = solve_dual(G, cold);
        REQUIRE(sw.converged);
        REQUIRE(sc.converged);
        CHECK(sw.objective == doctest::Approx(sc.objective).epsilon(1e-9));
        warm_iters.push_back(sw.iterations);
        cold_iters.push_back(sc.iterations);
    }
    std::sort(warm_iters.begin(), warm_iters.end());
    std::sort(cold_iters.begin(), cold_iters.end());
    CHECK(warm_iters[10] < cold_iters[10]);  // median strictly smaller
}

TEST_CASE("warm-start consistency on a shrinking-perturbation ladder") {
    std::mt19937_64 eng(37);
    MatrixXd base = random_gaussian(40, 2, eng, 0.0);
    base.rowwise() -= base.colwise().mean();  // exact zero mean
    VectorXd dir(2);
    dir << 1.0, -0.5;

    double prev_gap = -1.0;
    for (int k = 0; k < 5; ++k) {
        const double scale = 0.2 / std::pow(2.0, k);
        MatrixXd G = base;
        G.rowwise() += (scale * dir).transpose();
        DualSolution sol = solve_dual(G);
        REQUIRE(sol.converged);
        const double gap = (sol.nu - lemma_warm_start(G)).norm();
        if (prev_gap >= 0.0) CHECK(gap <= 0.5 * prev_gap + 1e-12);
        prev_gap = gap;
    }
}

TEST_CASE("dual objective is non-increasing along accepted steps") {
    // indirectly: solution objective never exceeds the starting value 0
    std::mt19937_64 eng(41);
    for (int rep = 0; rep < 10; ++rep) {
        MatrixXd G = random_gaussian(25, 2, eng);
        DualSolution sol = solve_dual(G);
        CHECK(sol.objective <= 1e-12);
    }
}

TEST_CASE("el_dual: centered data gives lambda = 0 and uniform weights") {
    DualSolution sol = el_dual(two_point(-1.0, 1.0));
    CHECK(sol.converged);
    CHECK(std::abs(sol.nu(0)) < 1e-9);
    CHECK(sol.weights(0) == doctest::Approx(0.5));
}

TEST_CASE("el_dual: two-point closed form") {
    DualSolution sol = el_dual(two_point(-1.2, 0.8));
    CHECK(sol.converged);
    CHECK(sol.nu(0) == doctest::Approx(-0.4 / 1.92).epsilon(1e-8));
    CHECK(sol.weights.sum() == doctest::Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_AS(el_dual(MatrixXd::Constant(4, 1, 0.7)), ConvexHullViolation);
}

TEST_CASE("EL and ET multipliers agree to first order on small-mean instances") {
    // Both multipliers equal Sigma^{-1} gbar to first order, with opposite
    // orientation under the 1 + lambda'g weight convention (the two-point
    // closed forms above fix the signs: nu = +0.2027, lambda = -0.2083).
    std::mt19937_64 eng(43);
    for (int rep = 0; rep < 10; ++rep) {
        MatrixXd G = random_gaussian(60, 2, eng, 0.0);
        G.rowwise() -= G.colwise().mean();
        VectorXd shift = 0.03 * VectorXd::Random(2);
        G.rowwise() += shift.transpose();
        DualSolution et = solve_dual(G);
        DualSolution el = el_dual(G);
        REQUIRE(et.converged);
        REQUIRE(el.converged);
        if (et.nu.norm() > 1e-8)
            CHECK((el.nu + et.nu).norm() <= 0.1 * et.nu.norm());
    }
}

TEST_SUITE_END();
