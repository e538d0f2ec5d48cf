#include <doctest.h>

#include <cmath>
#include <random>

#include "tiltfit/pet_optimizer.hpp"
#include "tiltfit/rng.hpp"
#include "tiltfit/sim_harness.hpp"
#include "tiltfit/tuning.hpp"

using namespace tiltfit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset gaussian_data(int n, int p, unsigned seed, double shift = 0.0) {
    std::mt19937_64 eng(seed);
    std::normal_distribution<double> nd;
    MatrixXd rows(n, p);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < p; ++j) rows(i, j) = nd(eng) + shift;
    return Dataset(rows);
}

double penalized_objective_at(const MomentModel& model, const Dataset& data,
                              const PenaltySpec& pen, const VectorXd& theta,
                              bool adjusted) {
    MatrixXd G = moment_matrix(model, data, theta);
    if (adjusted) G = adjusted_moments(G);
    DualSolution d;
    try {
        d = solve_dual(G);
    } catch (const ConvexHullViolation&) {
        return -std::numeric_limits<double>::infinity();  // infeasible theta
    }
    double s = 0.0;
    for (int j = 0; j < theta.size(); ++j) s += penalty_value(pen, std::abs(theta(j)));
    return d.objective - s;
}

}  // namespace

TEST_SUITE_BEGIN("pet_optimizer");

TEST_CASE("profiled objective closed forms") {
    MomentModel m = mean_model(2);
    Dataset data = gaussian_data(30, 2, 5);
    const VectorXd xbar = data.rows.colwise().mean();

    auto [at_mean, dual] = profiled_objective(m, data, xbar);
    CHECK(at_mean == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(dual.converged);
    CHECK(dual.nu.lpNorm<Eigen::Infinity>() < 1e-9);

    VectorXd off = xbar;
    off(0) += 0.3;
    auto away = profiled_objective(m, data, off);
    CHECK(away.first < 0.0);

    // two-point scalar instance: data {-1, 1} at theta = 0.2
    MatrixXd tp(2, 1);
    tp << -1.0, 1.0;
    auto res = profiled_objective(mean_model(1), Dataset(tp), VectorXd::Constant(1, 0.2));
    const double nu_star = 0.5 * std::log(1.5);
    MatrixXd G(2, 1);
    G << -1.2, 0.8;
    CHECK(res.first ==
          doctest::Approx(et_objective(G, VectorXd::Constant(1, nu_star))).epsilon(1e-9));
    CHECK(res.first == doctest::Approx(-0.020135).epsilon(1e-3));
    CHECK(res.second.nu(0) == doctest::Approx(nu_star).epsilon(1e-7));
}

TEST_CASE("theta gradient: closed forms and the stale-dual guard") {
    MomentModel m = mean_model(2);
    Dataset data = gaussian_data(25, 2, 7);
    const VectorXd xbar = data.rows.colwise().mean();

    auto at_mean = profiled_objective(m, data, xbar);
    // nu = 0 -> zero gradient
    CHECK(theta_gradient(m, data, xbar, at_mean.second).lpNorm<Eigen::Infinity>() < 1e-9);

    VectorXd off = xbar + VectorXd::Constant(2, 0.2);
    auto away = profiled_objective(m, data, off);
    // mean model: gradient = -nu
    CHECK((theta_gradient(m, data, off, away.second) + away.second.nu)
              .lpNorm<Eigen::Infinity>() < 1e-9);

    DualSolution stale = away.second;
    stale.converged = false;
    CHECK_THROWS_AS(theta_gradient(m, data, off, stale), NumericError);
}

TEST_CASE("theta gradient matches finite differences across models") {
    std::mt19937_64 eng(11);
    std::normal_distribution<double> nd;
    DualOptions tight;
    tight.tol = 1e-11;

    auto check_fd = [&](const MomentModel& model, const Dataset& data, const VectorXd& th) {
        auto at = profiled_objective(model, data, th, tight);
        REQUIRE(at.second.converged);
        const VectorXd grad = theta_gradient(model, data, th, at.second);
        for (int j = 0; j < th.size(); ++j) {
            const double h = 1e-5 * std::max(1.0, std::abs(th(j)));
            VectorXd hi = th, lo = th;
            hi(j) += h;
            lo(j) -= h;
            const double fd = (profiled_objective(model, data, hi, tight).first -
                               profiled_objective(model, data, lo, tight).first) /
                              (2 * h);
            CHECK(std::abs(fd - grad(j)) / std::max(1.0, std::abs(grad(j))) <= 1e-5);
        }
    };

    for (int rep = 0; rep < 5; ++rep) {
        Dataset d1 = gaussian_data(40, 3, 100 + rep);
        VectorXd th1 = VectorXd::NullaryExpr(3, [&](Eigen::Index) { return 0.3 * nd(eng); });
        check_fd(mean_model(3), d1, th1);

        // regression with instruments
        MatrixXd rows(50, 5);
        for (int i = 0; i < 50; ++i) {
            const double z1 = nd(eng), z2 = nd(eng);
            rows(i, 0) = z1;
            rows(i, 1) = z2;
            rows(i, 2) = z1 + nd(eng);
            rows(i, 3) = z2 + nd(eng);
            rows(i, 4) = 1.4 * z1 - 0.5 * z2 + nd(eng);
        }
        VectorXd th2(2);
        th2 << 1.4 + 0.2 * nd(eng), -0.5 + 0.2 * nd(eng);
        check_fd(linear_regression_model(2, true), Dataset(rows), th2);
    }
}

TEST_CASE("unpenalized just-identified fit returns the sample mean") {
    for (unsigned seed : {1u, 2u, 3u, 4u, 5u}) {
        Dataset data = gaussian_data(20, 3, seed, 0.4);
        PenaltySpec none{PenaltyKind::Scad, 0.0, 3.7, 1e-8};
        PetFit fit = fit_pet(mean_model(3), data, none);
        const VectorXd xbar = data.rows.colwise().mean();
        CHECK((fit.theta - xbar).lpNorm<Eigen::Infinity>() < 1e-8);
        CHECK(fit.converged);
    }
}

TEST_CASE("pure noise with a dominating penalty is crushed to zero") {
    Dataset data = gaussian_data(10, 2, 9);  // theta_0 = 0, unit noise
    PenaltySpec scad{PenaltyKind::Scad, 0.5, 3.7, 1e-8};
    PetFit fit = fit_pet(mean_model(2), data, scad);
    CHECK(fit.theta.lpNorm<Eigen::Infinity>() == 0.0);
    CHECK(fit.active.size() == 0);

    // cross-check against an exhaustive grid over [-0.5, 0.5]^2
    double best = -std::numeric_limits<double>::infinity();
    VectorXd arg = VectorXd::Zero(2);
    for (int i = 0; i <= 100; ++i)
        for (int j = 0; j <= 100; ++j) {
            VectorXd th(2);
            th << -0.5 + 0.01 * i, -0.5 + 0.01 * j;
            const double v = penalized_objective_at(mean_model(2), data, scad, th, false);
            if (v > best) {
                best = v;
                arg = th;
            }
        }
    CHECK(arg.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("penalized objective is within 1e-3 of an exhaustive grid search") {
    Dataset data = gaussian_data(10, 2, 13, 0.6);
    for (double gamma : {0.1, 0.5}) {
        PenaltySpec scad{PenaltyKind::Scad, gamma, 3.7, 1e-8};
        PetFit fit = fit_pet(mean_model(2), data, scad);

        double best = -std::numeric_limits<double>::infinity();
        for (int i = 0; i <= 400; ++i)
            for (int j = 0; j <= 400; ++j) {
                VectorXd th(2);
                th << -2.0 + 0.01 * i, -2.0 + 0.01 * j;
                best = std::max(best,
                                penalized_objective_at(mean_model(2), data, scad, th, false));
            }
        CHECK(fit.objective_penalized >= best - 1e-3);
    }
}

TEST_CASE("trace is monotone, freezing is sound, stored objective is consistent") {
    Dataset data = gaussian_data(50, 4, 17, 0.25);
    PenaltySpec scad{PenaltyKind::Scad, 0.3, 3.7, 1e-8};
    PetFit fit = fit_pet(mean_model(4), data, scad);

    REQUIRE(fit.trace.size() >= 1);
    for (size_t i = 1; i < fit.trace.size(); ++i)
        CHECK(fit.trace[i].second >= fit.trace[i - 1].second);

    // once a coordinate hits exact zero it stays there
    for (int j = 0; j < 4; ++j) {
        bool frozen = false;
        for (const auto& step : fit.trace) {
            if (frozen) CHECK(step.first(j) == 0.0);
            if (step.first(j) == 0.0) frozen = true;
        }
    }

    const double recomputed =
        penalized_objective_at(mean_model(4), data, scad, fit.theta, fit.adjusted);
    CHECK(std::abs(recomputed - fit.objective_penalized) < 1e-10);

    double pen_sum = 0.0;
    for (int j = 0; j < 4; ++j) pen_sum += penalty_value(scad, std::abs(fit.theta(j)));
    CHECK(std::abs(fit.objective_penalized - (fit.objective_unpenalized - pen_sum)) < 1e-12);

    for (int j = 0; j < 4; ++j)
        if (!fit.active.contains(j)) CHECK(fit.theta(j) == 0.0);
}

TEST_CASE("joint rescaling of the moments leaves the estimate unchanged") {
    Dataset data = gaussian_data(40, 3, 19, 0.3);
    PenaltySpec scad{PenaltyKind::Scad, 0.15, 3.7, 1e-8};

    MomentModel base = mean_model(3);
    PetFit f1 = fit_pet(base, data, scad);

    const double c = 3.7;
    MomentModel scaled = base;
    MomentModel base_copy = base;
    scaled.g = [base_copy, c](const VectorXd& x, const VectorXd& th) {
        return (c * base_copy.g(x, th)).eval();
    };
    scaled.jac = [base_copy, c](const VectorXd& x, const VectorXd& th) {
        return (c * base_copy.jac(x, th)).eval();
    };
    PetFit f2 = fit_pet(scaled, data, scad);

    CHECK((f1.theta - f2.theta).lpNorm<Eigen::Infinity>() < 1e-6);
    CHECK(f1.active.indices == f2.active.indices);
    if (f1.dual.nu.norm() > 1e-10)
        CHECK((f2.dual.nu - f1.dual.nu / c).lpNorm<Eigen::Infinity>() <
              1e-6 * std::max(1.0, f1.dual.nu.norm()));
}

TEST_CASE("selection rule") {
    PetFit fit;
    fit.theta = VectorXd::Zero(6);
    fit.theta << 1.0, 0.6, 0.3, 0.0, 0.0, 0.0;
    CHECK(apply_selection(fit, 0.1).indices == std::vector<int>{0, 1, 2});
    CHECK(apply_selection(fit, 0.0).indices == std::vector<int>{0, 1, 2});
    CHECK(apply_selection(fit, 1.5).indices.empty());
}

TEST_CASE("adjusted moments") {
    MatrixXd G = MatrixXd::Random(50, 3);
    MatrixXd Ga = adjusted_moments(G);
    CHECK(Ga.rows() == 51);
    const double a = std::log(50.0) / 2.0;
    CHECK(a == doctest::Approx(1.95601).epsilon(1e-5));
    CHECK((Ga.row(50).transpose() + a * G.colwise().mean().transpose())
              .lpNorm<Eigen::Infinity>() < 1e-14);

    // n = 7: the max branch gives a = 1
    MatrixXd G7 = MatrixXd::Random(7, 2);
    MatrixXd G7a = adjusted_moments(G7);
    CHECK((G7a.row(7).transpose() + G7.colwise().mean().transpose())
              .lpNorm<Eigen::Infinity>() < 1e-14);

    // centered rows append an exact zero row, leaving the dual solution alone
    MatrixXd C = MatrixXd::Random(20, 2);
    C.rowwise() -= C.colwise().mean();
    MatrixXd Ca = adjusted_moments(C);
    CHECK(Ca.row(20).lpNorm<Eigen::Infinity>() < 1e-14);
    CHECK(std::abs(solve_dual(Ca).objective - solve_dual(C).objective) < 1e-10);
}

TEST_CASE("convex-hull violations trigger the adjusted path") {
    MatrixXd rows(12, 1);
    rows << 0.5, 0.7, 0.9, 1.1, 1.3, 0.6, 0.8, 1.0, 1.2, 1.4, 0.55, 0.95;
    Dataset data{rows};
    PenaltySpec scad{PenaltyKind::Scad, 2.0, 3.7, 1e-8};  // crushes theta to 0

    FitOptions no_adjust;
    no_adjust.auto_adjust = false;
    no_adjust.init = VectorXd::Zero(1);
    CHECK_THROWS_AS(fit_pet(mean_model(1), data, scad, no_adjust), ConvexHullViolation);

    FitOptions with_adjust;
    with_adjust.init = VectorXd::Zero(1);
    PetFit fit = fit_pet(mean_model(1), data, scad, with_adjust);
    CHECK(fit.adjusted);
}

TEST_CASE("sieve cap limits the active-set size deterministically") {
    Dataset data = gaussian_data(60, 5, 23, 1.0);  // every coordinate strong
    PenaltySpec scad{PenaltyKind::Scad, 0.05, 3.7, 1e-8};
    FitOptions opts;
    opts.sieve_cap = 3;
    PetFit fit = fit_pet(mean_model(5), data, scad, opts);
    CHECK(fit.active.size() <= 3);
}

TEST_CASE("experiment-1 style instance selects the true support") {
    Rng rng(99, 0);
    auto gen = gen_exp1(50, 7, 0.7, ExperimentConfig::Regime::CM, rng);
    PenaltySpec family{PenaltyKind::Scad, 0.0, 3.7, 1e-8};
    FitOptions opts;
    GammaPath path = select_gamma(mean_model(7), gen.first, family, opts,
                                  default_gamma_grid(7, 50), CriterionKind::aBIC);
    const PetFit& fit = path.chosen_fit();
    CHECK(fit.active.indices == std::vector<int>{0, 1, 2});
}

TEST_CASE("blockwise SEM fit: packing and stability at the truth") {
    const SemLayout lay = sem_layout(3);
    CHECK(lay.p == 18);
    CHECK(static_cast<int>(lay.coupling_indices().size()) == 6);

    Rng rng(7, 0);
    auto gen = gen_exp3(10000, 3, rng);
    PenaltySpec scad{PenaltyKind::Scad, 0.1, 3.7, 1e-8};
    FitOptions opts;
    opts.init = gen.second;
    PetFit fit = fit_pet_blockwise(sem_model(3), gen.first, scad, opts);
    CHECK(fit.adjusted);
    REQUIRE(!fit.trace.empty());
    // the first cycle stays near the truth on a large sample
    CHECK((fit.trace.front().first - gen.second).lpNorm<Eigen::Infinity>() < 0.2);
}

TEST_CASE("blockwise SEM fit recovers zero couplings at large n") {
    const SemLayout lay = sem_layout(3);
    int total_T = 0;
    int converged = 0;
    const int reps = 3;
    for (int rep = 0; rep < reps; ++rep) {
        Rng rng(500 + rep, 0);
        auto gen = gen_exp3(1500, 3, rng, /*zero_couplings=*/true);
        PenaltySpec scad{PenaltyKind::Scad, 0.2, 3.7, 1e-8};
        PetFit fit = fit_pet_blockwise(sem_model(3), gen.first, scad, FitOptions{});
        if (fit.converged) ++converged;
        for (int j : lay.coupling_indices())
            if (std::abs(fit.theta(j)) < 0.001) ++total_T;
    }
    CHECK(converged >= 2);
    CHECK(total_T >= 5 * reps);  // T -> 6 of 6
}

TEST_SUITE_END();
