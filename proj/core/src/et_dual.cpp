#include "tiltfit/et_dual.hpp"

#include <cmath>

namespace tiltfit {

namespace {

// Past these marks the dual is unbounded: for a feasible problem the infimum
// of the ET objective is bounded below by -log(n).
constexpr double kDivergenceObjective = -50.0;
constexpr double kDivergenceNorm = 1e6;
constexpr double kArmijo = 1e-4;

void check_finite(const Eigen::MatrixXd& G) {
    if (!G.allFinite()) throw DataError("moment matrix contains non-finite entries");
    if (G.rows() < 1 || G.cols() < 1) throw DataError("moment matrix is empty");
}

// Solves H d = -grad with ridge escalation (0 -> 1e-10 -> 1e-6) before
// giving up. Near-collinear moment components are common when r approaches n.
Eigen::VectorXd newton_direction(const Eigen::MatrixXd& H, const Eigen::VectorXd& grad) {
    const int r = static_cast<int>(H.rows());
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(r, r);
    for (double ridge : {0.0, 1e-10, 1e-6}) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(H + ridge * eye);
        if (ldlt.info() != Eigen::Success) continue;
        Eigen::VectorXd d = ldlt.solve(-grad);
        if (d.allFinite() && grad.dot(d) < 0.0) return d;
    }
    throw ConditioningError("dual Hessian numerically singular after ridge escalation");
}

struct EtState {
    double objective;
    Eigen::VectorXd weights;  // softmax of G*nu
};

EtState et_state(const Eigen::MatrixXd& G, const Eigen::VectorXd& nu) {
    Eigen::VectorXd t = G * nu;
    const double m = t.maxCoeff();
    Eigen::ArrayXd e = (t.array() - m).exp();
    const double s = e.sum();
    EtState st;
    st.objective = m + std::log(s / static_cast<double>(G.rows()));
    st.weights = (e / s).matrix();
    return st;
}

}  // namespace

void DualOptions::validate() const {
    if (tol <= 0.0) throw ConfigError("dual tolerance must be positive");
    if (max_iter < 1) throw ConfigError("dual max_iter must be >= 1");
    if (line_search_shrink <= 0.0 || line_search_shrink >= 1.0)
        throw ConfigError("line_search_shrink must lie in (0,1)");
    if (max_backtracks < 1) throw ConfigError("max_backtracks must be >= 1");
}

double et_objective(const Eigen::MatrixXd& G, const Eigen::VectorXd& nu) {
    check_finite(G);
    if (nu.size() != G.cols()) throw DataError("nu dimension does not match moment matrix");
    return et_state(G, nu).objective;
}

Eigen::VectorXd implied_weights(const Eigen::MatrixXd& G, const Eigen::VectorXd& nu) {
    check_finite(G);
    if (nu.size() != G.cols()) throw DataError("nu dimension does not match moment matrix");
    return et_state(G, nu).weights;
}

Eigen::VectorXd lemma_warm_start(const Eigen::MatrixXd& G, bool* fallback) {
    check_finite(G);
    const double n = static_cast<double>(G.rows());
    const Eigen::VectorXd gbar = G.colwise().mean();
    Eigen::MatrixXd sigma = G.transpose() * G / n - gbar * gbar.transpose();

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sigma);
    const double max_eig = es.eigenvalues().maxCoeff();
    const double min_eig = es.eigenvalues().minCoeff();
    if (es.info() != Eigen::Success || min_eig <= 1e-12 * std::max(1.0, max_eig)) {
        if (fallback) *fallback = true;
        return Eigen::VectorXd::Zero(G.cols());
    }
    if (fallback) *fallback = false;
    Eigen::VectorXd scaled = es.eigenvectors().transpose() * gbar;
    scaled.array() /= es.eigenvalues().array();
    return -(es.eigenvectors() * scaled);
}

DualSolution solve_dual(const Eigen::MatrixXd& G, const DualOptions& opts) {
    return solve_dual(G, opts, nullptr);
}

DualSolution solve_dual(const Eigen::MatrixXd& G, const DualOptions& opts,
                        const Eigen::VectorXd* hint) {
    opts.validate();
    check_finite(G);
    const int r = static_cast<int>(G.cols());

    Eigen::VectorXd nu = Eigen::VectorXd::Zero(r);
    if (opts.warm_start) {
        nu = lemma_warm_start(G);
        if (nu.squaredNorm() > 0.0 && et_state(G, nu).objective > 0.0) {
            // The first-order formula overshot; zero is always feasible.
            nu.setZero();
        }
        if (hint && hint->size() == r && hint->allFinite()) {
            if (et_state(G, *hint).objective < et_state(G, nu).objective) nu = *hint;
        }
    }

    DualSolution sol;
    int iter = 0;
    while (true) {
        const EtState st = et_state(G, nu);
        const Eigen::VectorXd grad = G.transpose() * st.weights;
        const double gn = grad.lpNorm<Eigen::Infinity>();

        sol.nu = nu;
        sol.objective = st.objective;
        sol.weights = st.weights;
        sol.grad_norm = gn;
        sol.iterations = iter;

        if (gn <= opts.tol) {
            sol.converged = true;
            return sol;
        }
        if (st.objective < kDivergenceObjective ||
            nu.lpNorm<Eigen::Infinity>() > kDivergenceNorm)
            throw ConvexHullViolation(
                "ET dual unbounded: zero lies outside the convex hull of the moments");
        if (iter >= opts.max_iter) return sol;
        ++iter;

        Eigen::MatrixXd H =
            G.transpose() * st.weights.asDiagonal() * G - grad * grad.transpose();
        const Eigen::VectorXd d = newton_direction(H, grad);
        const double gd = grad.dot(d);

        double alpha = 1.0;
        bool accepted = false;
        for (int bt = 0; bt < opts.max_backtracks; ++bt) {
            const Eigen::VectorXd cand = nu + alpha * d;
            const double fc = et_state(G, cand).objective;
            if (fc <= st.objective + kArmijo * alpha * gd) {
                nu = cand;
                accepted = true;
                break;
            }
            alpha *= opts.line_search_shrink;
        }
        if (!accepted) return sol;  // no progress possible at this scale
    }
}

namespace {

struct ElState {
    double objective;      // -(1/n) sum log(u_i)
    Eigen::VectorXd u;     // 1 + lambda' g_i
};

ElState el_state(const Eigen::MatrixXd& G, const Eigen::VectorXd& lambda) {
    ElState st;
    st.u = (G * lambda).array() + 1.0;
    st.objective = -st.u.array().log().mean();
    return st;
}

}  // namespace

DualSolution el_dual(const Eigen::MatrixXd& G, const DualOptions& opts) {
    return el_dual(G, opts, nullptr);
}

DualSolution el_dual(const Eigen::MatrixXd& G, const DualOptions& opts,
                     const Eigen::VectorXd* hint) {
    opts.validate();
    check_finite(G);
    const int r = static_cast<int>(G.cols());
    const double n = static_cast<double>(G.rows());
    const double floor = 1.0 / n;

    Eigen::VectorXd lambda = Eigen::VectorXd::Zero(r);
    if (hint && hint->size() == r && hint->allFinite()) {
        const ElState sh = el_state(G, *hint);
        if (sh.u.minCoeff() >= floor && sh.objective < 0.0) lambda = *hint;
    }

    DualSolution sol;
    int iter = 0;
    while (true) {
        const ElState st = el_state(G, lambda);
        Eigen::VectorXd winv = st.u.cwiseInverse() / n;  // g-weights 1/(n u_i)
        const Eigen::VectorXd grad = -(G.transpose() * winv);
        const double gn = grad.lpNorm<Eigen::Infinity>();

        sol.nu = lambda;
        sol.objective = st.objective;
        sol.weights = winv / winv.sum();
        sol.grad_norm = gn;
        sol.iterations = iter;

        if (gn <= opts.tol) {
            sol.converged = true;
            return sol;
        }
        if (st.objective < kDivergenceObjective ||
            lambda.lpNorm<Eigen::Infinity>() > kDivergenceNorm)
            throw ConvexHullViolation(
                "EL dual unbounded: zero lies outside the convex hull of the moments");
        if (iter >= opts.max_iter) return sol;
        ++iter;

        Eigen::ArrayXd u2 = st.u.array().square();
        Eigen::MatrixXd H =
            G.transpose() * (1.0 / (n * u2)).matrix().asDiagonal() * G;
        const Eigen::VectorXd d = newton_direction(H, grad);
        const double gd = grad.dot(d);

        // Clip the step so every 1 + lambda' g_i stays >= 1/n.
        const Eigen::VectorXd c = G * d;
        double alpha_cap = 1.0;
        for (int i = 0; i < c.size(); ++i) {
            if (c(i) < 0.0) {
                const double bound = (floor - st.u(i)) / c(i);
                alpha_cap = std::min(alpha_cap, bound);
            }
        }
        double alpha = std::max(0.0, alpha_cap);
        bool accepted = false;
        for (int bt = 0; bt < opts.max_backtracks && alpha > 0.0; ++bt) {
            const Eigen::VectorXd cand = lambda + alpha * d;
            const ElState sc = el_state(G, cand);
            if (sc.u.minCoeff() >= floor &&
                sc.objective <= st.objective + kArmijo * alpha * gd) {
                lambda = cand;
                accepted = true;
                break;
            }
            alpha *= opts.line_search_shrink;
        }
        if (!accepted) return sol;
    }
}

}  // namespace tiltfit
