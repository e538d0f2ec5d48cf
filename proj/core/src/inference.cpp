#include "tiltfit/inference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tiltfit {

namespace {

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x) {
    if (x < 0.0 || a <= 0.0) throw NumericError("gamma_p: out of domain");
    if (x == 0.0) return 0.0;
    const double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // series expansion
        double term = 1.0 / a;
        double sum = term;
        for (int k = 1; k < 10000; ++k) {
            term *= x / (a + k);
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        return sum * std::exp(-x + a * std::log(x) - lg);
    }
    // continued fraction for Q(a, x) (modified Lentz)
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -static_cast<double>(i) * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < 1e-16) break;
    }
    const double q = std::exp(-x + a * std::log(x) - lg) * h;
    return 1.0 - q;
}

double chisq_pdf(double x, int d) {
    if (x <= 0.0) return 0.0;
    const double a = 0.5 * d;
    return std::exp((a - 1.0) * std::log(x) - 0.5 * x - std::lgamma(a) - a * std::log(2.0));
}

}  // namespace

double chisq_cdf(double x, int d) {
    if (d < 1) throw ConfigError("chisq_cdf: degrees of freedom must be >= 1");
    if (x < 0.0) throw NumericError("chisq_cdf: x must be >= 0");
    return gamma_p(0.5 * d, 0.5 * x);
}

double chisq_quantile(double p, int d) {
    if (d < 1) throw ConfigError("chisq_quantile: degrees of freedom must be >= 1");
    if (p <= 0.0 || p >= 1.0) throw ConfigError("chisq_quantile: p must lie in (0,1)");

    // Wilson-Hilferty start, then safeguarded Newton.
    const double z = [&] {
        // Acklam-style rational approximation of the normal quantile is more
        // than enough for a starting point; precision comes from Newton.
        const double t = p < 0.5 ? std::sqrt(-2.0 * std::log(p))
                                 : std::sqrt(-2.0 * std::log(1.0 - p));
        double v = t - (2.30753 + 0.27061 * t) / (1.0 + 0.99229 * t + 0.04481 * t * t);
        return p < 0.5 ? -v : v;
    }();
    const double dd = static_cast<double>(d);
    double x = dd * std::pow(1.0 - 2.0 / (9.0 * dd) + z * std::sqrt(2.0 / (9.0 * dd)), 3.0);
    if (!(x > 0.0)) x = 0.5;

    double lo = 0.0, hi = std::max(x, 1.0);
    while (chisq_cdf(hi, d) < p) hi *= 2.0;

    for (int it = 0; it < 200; ++it) {
        const double f = chisq_cdf(x, d) - p;
        if (f > 0.0)
            hi = x;
        else
            lo = x;
        const double dens = chisq_pdf(x, d);
        double next = dens > 0.0 ? x - f / dens : 0.0;
        if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - x) < 1e-12 * (1.0 + x)) {
            x = next;
            break;
        }
        x = next;
    }
    return x;
}

Eigen::VectorXd Hypothesis::xi() const {
    if (target.size() == 0) return Eigen::VectorXd::Zero(d());
    return target;
}

void Hypothesis::validate() const {
    if (B.rows() < 1 || B.cols() < 1) throw ConfigError("hypothesis: empty contrast matrix");
    if (d() > q()) throw ConfigError("hypothesis: more constraints than parameters");
    if (target.size() != 0 && target.size() != d())
        throw ConfigError("hypothesis: target length must equal the constraint count");
    const Eigen::MatrixXd BBt = B * B.transpose();
    if ((BBt - Eigen::MatrixXd::Identity(d(), d())).lpNorm<Eigen::Infinity>() > 1e-10)
        throw ConfigError("hypothesis: rows of B must be orthonormal (B B' = I)");
}

Hypothesis Hypothesis::coordinate(int q, int j, double value) {
    if (j < 0 || j >= q) throw ConfigError("hypothesis: coordinate index out of range");
    Hypothesis h;
    h.B = Eigen::MatrixXd::Zero(1, q);
    h.B(0, j) = 1.0;
    h.target = Eigen::VectorXd::Constant(1, value);
    return h;
}

PetFit constrained_fit(const MomentModel& model_reduced, const Dataset& data,
                       const PenaltySpec& penalty, const Hypothesis& hyp,
                       const FitOptions& opts) {
    hyp.validate();
    if (hyp.q() != model_reduced.p)
        throw ConfigError("constrained_fit: contrast width does not match model dimension");
    const int q = hyp.q();
    const int d = hyp.d();
    const Eigen::VectorXd offset = hyp.B.transpose() * hyp.xi();

    if (d == q) {
        // Fully constrained: the feasible set is a single point.
        auto [obj, dual] = [&] {
            try {
                return profiled_objective(model_reduced, data, offset, opts.dual,
                                          opts.dual_kind);
            } catch (const ConvexHullViolation&) {
                if (!opts.auto_adjust) throw;
                Eigen::MatrixXd G =
                    adjusted_moments(moment_matrix(model_reduced, data, offset));
                DualSolution ds = opts.dual_kind == DualKind::ExponentialTilt
                                      ? solve_dual(G, opts.dual)
                                      : el_dual(G, opts.dual);
                return std::pair<double, DualSolution>{ds.objective, ds};
            }
        }();
        double pen_sum = 0.0;
        for (int j = 0; j < q; ++j) pen_sum += penalty_value(penalty, std::abs(offset(j)));
        PetFit fit;
        fit.theta = offset;
        std::vector<int> nz;
        for (int j = 0; j < q; ++j)
            if (offset(j) != 0.0) nz.push_back(j);
        fit.active = ActiveSet::of(std::move(nz), q);
        fit.dual = dual;
        fit.objective_unpenalized = obj;
        fit.objective_penalized = obj - pen_sum;
        fit.gamma = penalty.gamma;
        fit.adjusted = dual.weights.size() == data.n() + 1;
        fit.converged = true;
        fit.trace.push_back({fit.theta, fit.objective_penalized});
        return fit;
    }

    // Orthonormal null-space basis of B from the full QR of B'.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(hyp.B.transpose());
    const Eigen::MatrixXd Q = qr.householderQ();
    const Eigen::MatrixXd N = Q.rightCols(q - d);
    if ((hyp.B * N).lpNorm<Eigen::Infinity>() > 1e-8)
        throw NumericError("constrained_fit: null-space computation failed");

    Eigen::VectorXd theta_init =
        opts.init ? *opts.init : default_initial_theta(model_reduced, data);
    if (theta_init.size() != q)
        throw ConfigError("constrained_fit: initial theta length mismatch");
    const Eigen::VectorXd beta0 = N.transpose() * (theta_init - offset);

    FitOptions sub = opts;
    sub.init.reset();
    return detail::fit_linear_subspace(model_reduced, data, penalty, offset, N, beta0, sub);
}

TestResult lr_test(const MomentModel& model_reduced, const Dataset& data,
                   const PenaltySpec& penalty, const Hypothesis& hyp,
                   const FitOptions& opts, const PetFit* unconstrained) {
    hyp.validate();
    TestResult res;
    res.df = hyp.d();

    PetFit unc = unconstrained ? *unconstrained : fit_pet(model_reduced, data, penalty, opts);
    PetFit con = constrained_fit(model_reduced, data, penalty, hyp, opts);

    const double n = static_cast<double>(data.n());
    double stat = 2.0 * n * (unc.objective_penalized - con.objective_penalized);
    if (stat < 0.0) {
        // The constrained optimum beat the unconstrained fit: restart the
        // unconstrained problem from the (feasible) constrained solution.
        FitOptions retry = opts;
        retry.init = con.theta;
        PetFit unc2 = fit_pet(model_reduced, data, penalty, retry);
        if (unc2.objective_penalized > unc.objective_penalized) unc = unc2;
        stat = 2.0 * n * (unc.objective_penalized - con.objective_penalized);
    }

    res.statistic = std::max(stat, 0.0);
    res.p_value = 1.0 - chisq_cdf(res.statistic, res.df);
    res.fit_unconstrained = std::move(unc);
    res.fit_constrained = std::move(con);
    return res;
}

ConfidenceInterval confidence_interval(const MomentModel& model_reduced, const Dataset& data,
                                       const PenaltySpec& penalty, const Hypothesis& hyp,
                                       double alpha, const FitOptions& opts) {
    hyp.validate();
    if (hyp.d() != 1) throw ConfigError("confidence_interval: requires a single contrast");
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("confidence_interval: alpha in (0,1)");

    const double crit = chisq_quantile(1.0 - alpha, 1);
    const PetFit unc = fit_pet(model_reduced, data, penalty, opts);
    const double n = static_cast<double>(data.n());
    const double center = (hyp.B * unc.theta)(0);

    Eigen::VectorXd warm = unc.theta;
    auto stat_at = [&](double xi_val) -> double {
        Hypothesis h = hyp;
        h.target = Eigen::VectorXd::Constant(1, xi_val);
        FitOptions o = opts;
        o.init = warm;
        try {
            const PetFit con = constrained_fit(model_reduced, data, penalty, h, o);
            warm = con.theta;
            return std::max(0.0, 2.0 * n * (unc.objective_penalized - con.objective_penalized));
        } catch (const NumericError&) {
            return std::numeric_limits<double>::infinity();
        }
    };

    ConfidenceInterval ci;
    bool non_monotone = false;

    auto endpoint = [&](double direction) -> double {
        warm = unc.theta;
        double step = std::max(1e-3, 0.1 * (1.0 + std::abs(center)));
        double inside = center;
        double last_stat = 0.0;
        double outside = center;
        bool crossed = false;
        for (int k = 0; k < 60; ++k) {
            const double xi_val = center + direction * step;
            const double s = stat_at(xi_val);
            if (s < last_stat - 1e-9) non_monotone = true;
            if (s > crit) {
                outside = xi_val;
                crossed = true;
                break;
            }
            inside = xi_val;
            last_stat = s;
            step *= 2.0;
        }
        if (!crossed)
            throw NumericError("confidence_interval: no crossing found while bracketing");
        while (std::abs(outside - inside) > 1e-4) {
            const double mid = 0.5 * (inside + outside);
            if (stat_at(mid) > crit)
                outside = mid;
            else
                inside = mid;
        }
        return 0.5 * (inside + outside);
    };

    ci.lo = endpoint(-1.0);
    ci.hi = endpoint(+1.0);
    ci.non_monotone = non_monotone;
    return ci;
}

Eigen::VectorXd asymptotic_se(const PetFit& fit, const MomentModel& model_reduced,
                              const Dataset& data) {
    const int q = model_reduced.p;
    if (fit.theta.size() != q) throw ConfigError("asymptotic_se: fit/model dimension mismatch");

    const Eigen::MatrixXd G = moment_matrix(model_reduced, data, fit.theta);
    const Eigen::VectorXd w = implied_weights(G, fit.dual.nu.size() == model_reduced.r
                                                     ? fit.dual.nu
                                                     : Eigen::VectorXd::Zero(model_reduced.r));
    const Eigen::MatrixXd Gamma1 = weighted_jacobian(model_reduced, data, fit.theta, w);
    const Eigen::MatrixXd Sigma1 = G.transpose() * w.asDiagonal() * G;

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Gamma1);
    if (qr.rank() < q) {
        std::string cols;
        const auto perm = qr.colsPermutation().indices();
        for (int k = qr.rank(); k < q; ++k)
            cols += (cols.empty() ? "" : ", ") + std::to_string(perm(k));
        throw NumericError("asymptotic_se: singular information, dependent columns {" + cols +
                           "}");
    }

    Eigen::LDLT<Eigen::MatrixXd> sig(Sigma1);
    if (sig.info() != Eigen::Success)
        throw NumericError("asymptotic_se: singular moment covariance");
    const Eigen::MatrixXd K_inv = Gamma1.transpose() * sig.solve(Gamma1);
    Eigen::LDLT<Eigen::MatrixXd> kld(K_inv);
    const Eigen::MatrixXd K = kld.solve(Eigen::MatrixXd::Identity(q, q));

    Eigen::VectorXd se(q);
    const double n = static_cast<double>(data.n());
    for (int j = 0; j < q; ++j) {
        const double v = K(j, j);
        if (!(v > 0.0) || !std::isfinite(v))
            throw NumericError("asymptotic_se: nonpositive variance estimate at column " +
                               std::to_string(j));
        se(j) = std::sqrt(v / n);
    }
    return se;
}

}  // namespace tiltfit
