#include "tiltfit/baselines.hpp"

#include <cmath>

namespace tiltfit {

BaselineEstimate mean_estimator(const Dataset& data) {
    BaselineEstimate est;
    est.method = BaselineMethod::Mean;
    est.theta = data.rows.colwise().mean();
    return est;
}

BaselineEstimate hard_threshold(const Eigen::VectorXd& xbar, double gamma1) {
    if (gamma1 < 0.0) throw ConfigError("hard_threshold: gamma must be >= 0");
    BaselineEstimate est;
    est.method = BaselineMethod::HardThreshold;
    est.tuning = gamma1;
    est.theta = (xbar.array().abs() > gamma1).select(xbar, 0.0);
    return est;
}

BaselineEstimate soft_threshold(const Eigen::VectorXd& xbar, double gamma2) {
    if (gamma2 < 0.0) throw ConfigError("soft_threshold: gamma must be >= 0");
    BaselineEstimate est;
    est.method = BaselineMethod::SoftThreshold;
    est.tuning = gamma2;
    est.theta = xbar.array().sign() * (xbar.array().abs() - gamma2).max(0.0);
    return est;
}

BaselineEstimate quadratic_loss(const Dataset& data, double gamma3) {
    if (gamma3 < 0.0) throw ConfigError("quadratic_loss: gamma must be >= 0");
    const int p = data.dim();
    const int n = data.n();
    const Eigen::VectorXd xbar = data.rows.colwise().mean();

    Eigen::MatrixXd centered = data.rows.rowwise() - xbar.transpose();
    Eigen::MatrixXd Wn = centered.transpose() * centered / static_cast<double>(n);

    Eigen::LDLT<Eigen::MatrixXd> ldlt(Wn);
    Eigen::MatrixXd A;  // Wn^{-1}
    if (ldlt.info() == Eigen::Success &&
        (A = ldlt.solve(Eigen::MatrixXd::Identity(p, p))).allFinite() &&
        (Wn * A - Eigen::MatrixXd::Identity(p, p)).lpNorm<Eigen::Infinity>() < 1e-6) {
        // usable inverse
    } else {
        Wn.diagonal().array() += 1e-8;
        A = Wn.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    }

    // Coordinate minimizer of A_jj t^2 - 2 c_j t + gamma3 |t| is the
    // soft-thresholded t = S(c_j, gamma3/2) / A_jj.
    const Eigen::VectorXd Axbar = A * xbar;
    Eigen::VectorXd theta = xbar;
    const double half = 0.5 * gamma3;
    bool converged = false;
    for (int sweep = 0; sweep < 10000; ++sweep) {
        double max_change = 0.0;
        for (int j = 0; j < p; ++j) {
            const double cj = Axbar(j) - (A.row(j).dot(theta) - A(j, j) * theta(j));
            const double mag = std::abs(cj) - half;
            const double next = mag > 0.0 ? (cj > 0 ? mag : -mag) / A(j, j) : 0.0;
            max_change = std::max(max_change, std::abs(next - theta(j)));
            theta(j) = next;
        }
        if (max_change < 1e-10) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NumericError("quadratic_loss: coordinate descent did not converge");

    BaselineEstimate est;
    est.method = BaselineMethod::QuadraticLoss;
    est.tuning = gamma3;
    est.theta = std::move(theta);
    return est;
}

PetFit pel_fit(const MomentModel& model, const Dataset& data, const PenaltySpec& penalty,
               const FitOptions& opts) {
    FitOptions el = opts;
    el.dual_kind = DualKind::EmpiricalLikelihood;
    return fit_pet(model, data, penalty, el);
}

}  // namespace tiltfit
