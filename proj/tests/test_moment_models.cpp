#include <doctest.h>

#include <cmath>
#include <random>

#include "tiltfit/moment_models.hpp"
#include "tiltfit/rng.hpp"

using namespace tiltfit;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> vals) {
    VectorXd v(static_cast<int>(vals.size()));
    int i = 0;
    for (double x : vals) v(i++) = x;
    return v;
}

double max_rel_err(const MatrixXd& A, const MatrixXd& B) {
    double worst = 0.0;
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j) {
            const double denom = std::max({1.0, std::abs(A(i, j)), std::abs(B(i, j))});
            worst = std::max(worst, std::abs(A(i, j) - B(i, j)) / denom);
        }
    return worst;
}

}  // namespace

TEST_SUITE_BEGIN("moment_models");

TEST_CASE("mean model basics") {
    MomentModel m = mean_model(3);
    CHECK(m.r == 3);
    CHECK((m.g(vec({1, 2, 3}), vec({1, 2, 3}))).lpNorm<Eigen::Infinity>() == 0.0);

    MomentModel m2 = mean_model(2);
    CHECK(m2.g(vec({1.0, 0.6}), vec({0.0, 0.0})).isApprox(vec({1.0, 0.6})));

    MomentModel m7 = mean_model(7);
    CHECK(m7.jac(VectorXd::Random(7), VectorXd::Random(7))
              .isApprox(-MatrixXd::Identity(7, 7)));
    CHECK_THROWS_AS(mean_model(0), ConfigError);
}

TEST_CASE("linear regression scores with and without instruments") {
    MomentModel plain = linear_regression_model(1, false);
    CHECK(plain.g(vec({2.0, 6.0}), vec({3.0}))(0) == doctest::Approx(0.0));

    MomentModel iv = linear_regression_model(1, true);
    const VectorXd g = iv.g(vec({1.0, 2.0, 5.0}), vec({3.0}));
    CHECK(g(0) == doctest::Approx(2.0));
    CHECK(g(1) == doctest::Approx(4.0));

    MomentModel p2 = linear_regression_model(2, false);
    const VectorXd g2 = p2.g(vec({1.0, 1.0, 0.0}), vec({3.0, 1.5}));
    CHECK(g2(0) == doctest::Approx(-4.5));
    CHECK(g2(1) == doctest::Approx(-4.5));

    CHECK_THROWS_AS(plain.g(vec({1.0, 2.0, 3.0}), vec({0.0})), DataError);
}

TEST_CASE("projected IV model") {
    // instruments equal to the regressors: projection is the identity on them
    MatrixXd Y(3, 1);
    Y << 1, 2, 3;
    VectorXd y(3);
    y << 2, 4, 6;
    ProjectedIvModel self = projected_iv_model(Y, Y, y);
    CHECK(self.data.rows.col(0).isApprox(Y.col(0), 1e-12));

    // OLS normal equations: gbar(theta_hat) = 0 at the least-squares solution
    const double theta_ols = (Y.col(0).dot(y)) / Y.col(0).squaredNorm();
    VectorXd gbar = VectorXd::Zero(1);
    for (int i = 0; i < 3; ++i)
        gbar += self.model.g(self.data.rows.row(i), vec({theta_ols}));
    CHECK(std::abs(gbar(0) / 3.0) < 1e-12);

    // constant instrument: projected regressors collapse to the column mean
    MatrixXd D = MatrixXd::Ones(3, 1);
    ProjectedIvModel proj = projected_iv_model(Y, D, y);
    for (int i = 0; i < 3; ++i) CHECK(proj.data.rows(i, 0) == doctest::Approx(2.0));

    // exact linear data: residual moments vanish at the truth
    MatrixXd D2(4, 2);
    D2 << 1, 0, 0, 1, 1, 1, 1, -1;
    MatrixXd Y2 = D2 * (MatrixXd(2, 1) << 0.5, -0.25).finished();
    VectorXd truth(1);
    truth << 1.7;
    VectorXd y2 = Y2 * truth;
    ProjectedIvModel exact = projected_iv_model(Y2, D2, y2);
    VectorXd acc = VectorXd::Zero(1);
    for (int i = 0; i < 4; ++i) acc += exact.model.g(exact.data.rows.row(i), truth);
    CHECK(acc.lpNorm<Eigen::Infinity>() < 1e-10);

    // rank-deficient instruments
    MatrixXd Dbad(3, 2);
    Dbad << 1, 2, 1, 2, 1, 2;
    CHECK_THROWS_AS(projected_iv_model(Y, Dbad, y), NumericError);
}

TEST_CASE("sem layout and implied covariance") {
    const SemLayout lay = sem_layout(3);
    CHECK(lay.p_y == 6);
    CHECK(lay.r == 21);
    CHECK(lay.p == 18);
    CHECK(static_cast<int>(lay.coupling_indices().size()) == 6);

    MomentModel sem = sem_model(3);
    CHECK(sem.r == 21);
    CHECK(sem.p == 18);

    // U = 0, unit loadings, Phi = Psi = I -> O = ZZ' + I, symmetric PD
    VectorXd theta = VectorXd::Zero(18);
    theta.segment(lay.loadings.first, 3).setOnes();
    theta.segment(lay.phi.first, 6).setOnes();
    theta.segment(lay.psi.first, 3).setOnes();
    const MatrixXd O = sem_implied_covariance(3, theta);
    CHECK((O - O.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(O);
    CHECK(es.eigenvalues().minCoeff() > 0.0);

    // negative variance rejected
    VectorXd bad = theta;
    bad(lay.phi.first) = -0.5;
    CHECK_THROWS_AS(sem_implied_covariance(3, bad), NumericError);

    // singular I - U rejected
    VectorXd sing = theta;
    sing(lay.couplings.first) = 1.0;      // U(0,1) = 1
    sing(lay.couplings.first + 2) = 1.0;  // U(1,0) = 1 -> det(I-U) = 0
    CHECK_THROWS_AS(sem_implied_covariance(3, sing), NumericError);
}

TEST_CASE("sem implied covariance is symmetric across random parameters") {
    const SemLayout lay = sem_layout(3);
    std::mt19937_64 eng(5);
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (int rep = 0; rep < 25; ++rep) {
        VectorXd theta(lay.p);
        for (int l = 0; l < 3; ++l) theta(lay.loadings.first + l) = 0.5 + u(eng);
        for (int k = lay.couplings.first; k < lay.couplings.second; ++k) theta(k) = u(eng);
        for (int k = lay.phi.first; k < lay.phi.second; ++k) theta(k) = 0.6 + u(eng);
        for (int k = lay.psi.first; k < lay.psi.second; ++k) theta(k) = 0.6 + u(eng);
        const MatrixXd O = sem_implied_covariance(3, theta);
        CHECK((O - O.transpose()).lpNorm<Eigen::Infinity>() == 0.0);
    }
}

TEST_CASE("sem moment mean vanishes at the truth (Monte Carlo)") {
    const SemLayout lay = sem_layout(3);
    VectorXd theta0 = VectorXd::Zero(lay.p);
    theta0.segment(lay.loadings.first, 3).setConstant(0.8);
    int k = lay.couplings.first;
    for (int j = 0; j < 3; ++j)
        for (int l = 0; l < 3; ++l) {
            if (l == j) continue;
            theta0(k++) = std::abs(j - l) == 1 ? 0.8 : 0.0;
        }
    theta0.segment(lay.phi.first, 6).setConstant(0.8);
    theta0.segment(lay.psi.first, 3).setConstant(0.8);

    // draw 1e5 observations and check each moment mean against 3 * SE
    MomentModel sem = sem_model(3);
    MatrixXd Z = MatrixXd::Zero(6, 3);
    for (int l = 0; l < 3; ++l) {
        Z(2 * l, l) = 1.0;
        Z(2 * l + 1, l) = 0.8;
    }
    MatrixXd U = MatrixXd::Zero(3, 3);
    U(0, 1) = U(1, 0) = U(1, 2) = U(2, 1) = 0.8;
    const MatrixXd A = (MatrixXd::Identity(3, 3) - U).inverse();

    Rng rng(1234, 0);
    const int n = 100000;
    VectorXd mean_g = VectorXd::Zero(21);
    VectorXd m2_g = VectorXd::Zero(21);
    VectorXd zeta(3), eps(6);
    const double sd = std::sqrt(0.8);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < 3; ++j) zeta(j) = sd * rng.normal();
        for (int j = 0; j < 6; ++j) eps(j) = sd * rng.normal();
        const VectorXd y = Z * (A * zeta) + eps;
        const VectorXd g = sem.g(y, theta0);
        mean_g += g;
        m2_g += g.cwiseAbs2();
    }
    mean_g /= n;
    m2_g /= n;
    for (int j = 0; j < 21; ++j) {
        const double se = std::sqrt((m2_g(j) - mean_g(j) * mean_g(j)) / n);
        CHECK(std::abs(mean_g(j)) < 3.0 * se + 1e-12);
    }
}

TEST_CASE("restrict: mean model keeps the active rows") {
    MomentModel m = mean_model(7);
    MomentModel r = restrict(m, ActiveSet::of({0, 1, 2}, 7));
    CHECK(r.p == 3);
    CHECK(r.r == 3);
    VectorXd x = VectorXd::LinSpaced(7, 1.0, 7.0);
    const VectorXd psi = r.g(x, vec({0.5, 0.25, 0.1}));
    CHECK(psi(0) == doctest::Approx(1.0 - 0.5));
    CHECK(psi(1) == doctest::Approx(2.0 - 0.25));
    CHECK(psi(2) == doctest::Approx(3.0 - 0.1));
    CHECK_THROWS_AS(restrict(m, ActiveSet::of({}, 7)), ConfigError);
}

TEST_CASE("restrict: identity restriction leaves the model unchanged") {
    MomentModel m = linear_regression_model(3, true);
    MomentModel r = restrict(m, ActiveSet::full(3));
    CHECK(r.p == m.p);
    CHECK(r.r == m.r);
    VectorXd x = VectorXd::Random(7);
    VectorXd th = VectorXd::Random(3);
    CHECK(r.g(x, th).isApprox(m.g(x, th), 1e-14));
    CHECK(r.jac(x, th).isApprox(m.jac(x, th), 1e-14));
}

TEST_CASE("restrict: regression keeps score rows of active covariates") {
    MomentModel m = linear_regression_model(5, false);
    MomentModel r = restrict(m, ActiveSet::of({0, 1, 4}, 5));
    CHECK(r.p == 3);
    CHECK(r.r == 3);
    // with instruments both blocks survive
    MomentModel miv = linear_regression_model(5, true);
    MomentModel riv = restrict(miv, ActiveSet::of({0, 1, 4}, 5));
    CHECK(riv.r == 6);
}

TEST_CASE("nested restriction equals direct restriction to the inner set") {
    MomentModel m = mean_model(7);
    MomentModel outer = restrict(m, ActiveSet::of({0, 1, 2, 4, 6}, 7));
    // inner positions {0,1,3} of the outer active set = original {0,1,4}
    MomentModel nested = restrict(outer, ActiveSet::of({0, 1, 3}, 5));
    MomentModel direct = restrict(m, ActiveSet::of({0, 1, 4}, 7));
    CHECK(nested.p == direct.p);
    CHECK(nested.r == direct.r);
    VectorXd x = VectorXd::Random(7);
    VectorXd th = VectorXd::Random(3);
    CHECK(nested.g(x, th).isApprox(direct.g(x, th), 1e-14));
    CHECK(nested.jac(x, th).isApprox(direct.jac(x, th), 1e-14));
}

TEST_CASE("finite-difference Jacobian closed forms") {
    MomentModel m = mean_model(3);
    const MatrixXd J = fd_jacobian(m, vec({1, 2, 3}), vec({0.2, 0.4, 0.6}));
    CHECK((J + MatrixXd::Identity(3, 3)).lpNorm<Eigen::Infinity>() < 1e-9);

    MomentModel reg = linear_regression_model(1, false);
    const MatrixXd Jr = fd_jacobian(reg, vec({2.0, 0.0}), vec({1.0}));
    CHECK(Jr(0, 0) == doctest::Approx(-4.0).epsilon(1e-8));
}

TEST_CASE("analytic Jacobians match finite differences on random points") {
    std::mt19937_64 eng(77);
    std::normal_distribution<double> nd;

    auto check_model = [&](const MomentModel& m, auto draw_x, auto draw_theta,
                           int reps = 100) {
        for (int rep = 0; rep < reps; ++rep) {
            const VectorXd x = draw_x();
            const VectorXd th = draw_theta();
            const MatrixXd Ja = m.jac(x, th);
            const MatrixXd Jf = fd_jacobian(m, x, th);
            CHECK(max_rel_err(Ja, Jf) <= 1e-5);
        }
    };

    MomentModel mm = mean_model(4);
    check_model(
        mm, [&] { return VectorXd::NullaryExpr(4, [&](int) { return nd(eng); }); },
        [&] { return VectorXd::NullaryExpr(4, [&](int) { return nd(eng); }); });

    MomentModel reg = linear_regression_model(3, true);
    check_model(
        reg, [&] { return VectorXd::NullaryExpr(7, [&](int) { return nd(eng); }); },
        [&] { return VectorXd::NullaryExpr(3, [&](int) { return nd(eng); }); });

    const SemLayout lay = sem_layout(3);
    MomentModel sem = sem_model(3);
    std::uniform_real_distribution<double> u(-0.25, 0.25);
    check_model(
        sem, [&] { return VectorXd::NullaryExpr(6, [&](int) { return nd(eng); }); },
        [&] {
            VectorXd th(lay.p);
            for (int l = 0; l < 3; ++l) th(lay.loadings.first + l) = 0.8 + u(eng);
            for (int k = lay.couplings.first; k < lay.couplings.second; ++k) th(k) = u(eng);
            for (int k = lay.phi.first; k < lay.phi.second; ++k) th(k) = 0.8 + u(eng);
            for (int k = lay.psi.first; k < lay.psi.second; ++k) th(k) = 0.8 + u(eng);
            return th;
        },
        40);
}

TEST_CASE("exact-fit data gives zero moment means") {
    // mean model: residuals identically zero at theta = the constant row
    MomentModel m = mean_model(2);
    MatrixXd rows(4, 2);
    rows << 1.5, -2.0, 1.5, -2.0, 1.5, -2.0, 1.5, -2.0;
    Dataset data(rows);
    const MatrixXd G = moment_matrix(m, data, vec({1.5, -2.0}));
    CHECK(G.lpNorm<Eigen::Infinity>() == 0.0);

    // regression: y constructed exactly from theta
    MomentModel reg = linear_regression_model(2, false);
    MatrixXd zr(5, 3);
    std::mt19937_64 eng(3);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 5; ++i) {
        zr(i, 0) = nd(eng);
        zr(i, 1) = nd(eng);
        zr(i, 2) = 2.0 * zr(i, 0) - 0.7 * zr(i, 1);
    }
    const MatrixXd Gr = moment_matrix(reg, Dataset(zr), vec({2.0, -0.7}));
    CHECK(Gr.lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("dataset and active-set validation") {
    CHECK_THROWS_AS(Dataset(MatrixXd(0, 2)), DataError);
    MatrixXd nanrow(1, 2);
    nanrow << 1.0, std::nan("");
    CHECK_THROWS_AS(Dataset{nanrow}, DataError);
    CHECK_THROWS_AS(ActiveSet::of({0, 0}, 3), ConfigError);
    CHECK_THROWS_AS(ActiveSet::of({3}, 3), ConfigError);
    CHECK(ActiveSet::of({2, 0}, 3).indices == std::vector<int>{0, 2});
}

TEST_SUITE_END();
