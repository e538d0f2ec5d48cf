#include "tiltfit/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "tiltfit/rng.hpp"

namespace tiltfit {

const PetFit& GammaPath::chosen_fit() const {
    if (chosen < 0 || chosen >= static_cast<int>(fits.size()))
        throw NumericError("gamma path has no chosen fit");
    return fits[chosen];
}

double information_criterion(const PetFit& fit, int n, int p, CriterionKind kind,
                             bool fixed_p) {
    const int df = fit.active.size();
    if (df > p) throw NumericError("information_criterion: df exceeds dimension");
    if (n < 2) throw ConfigError("information_criterion: n must be >= 2");

    const double ell = fit.objective_unpenalized;
    const double nn = static_cast<double>(n);
    switch (kind) {
        case CriterionKind::AIC:
            return -2.0 * ell + (2.0 / nn) * df;
        case CriterionKind::BIC:
            return -2.0 * ell + (std::log(nn) / nn) * df;
        case CriterionKind::aBIC: {
            double cn = 1.0;
            if (!fixed_p) {
                const double lp = std::log(static_cast<double>(p));
                if (lp > 0.0) cn = std::max(std::log(lp), 1.0);
            }
            return -2.0 * ell + cn * (std::log(nn) / nn) * df;
        }
    }
    return 0.0;
}

std::vector<double> default_gamma_grid(int p, int n, int points) {
    if (points < 1) throw ConfigError("gamma grid needs at least one point");
    const double scale = std::sqrt(std::log(static_cast<double>(std::max(p, 2))) / n);
    const double lo = 0.5 * scale;
    const double hi = 2.0 * scale;
    std::vector<double> grid(points);
    if (points == 1) {
        grid[0] = hi;
        return grid;
    }
    const double step = (std::log(hi) - std::log(lo)) / (points - 1);
    for (int i = 0; i < points; ++i) grid[i] = std::exp(std::log(lo) + i * step);
    return grid;
}

namespace {

std::vector<double> clean_grid(std::vector<double> grid) {
    if (grid.empty()) throw ConfigError("gamma grid must be nonempty");
    std::sort(grid.begin(), grid.end());
    grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
    if (grid.front() < 0.0) throw ConfigError("gamma grid values must be >= 0");
    return grid;
}

int argmin_prefer_larger(const std::vector<double>& scores) {
    int best = -1;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) continue;
        if (best < 0 || scores[i] <= scores[best]) best = static_cast<int>(i);
    }
    return best;
}

// Candidate supports at one gamma: the selection rule {j : |theta_j| > gamma}
// applied to the penalized fit, followed by backward elimination on the
// sieve-restricted refits (repeatedly dropping the penalized coordinate with
// the smallest refit magnitude). Every chain member is a candidate.
std::vector<PetFit> support_chain(const MomentModel& model, const Dataset& data,
                                  const FitOptions& opts, double gamma,
                                  const PetFit& pen_fit) {
    std::vector<char> pen_mask(model.p, opts.penalized.empty() ? 1 : 0);
    for (int j : opts.penalized) pen_mask[j] = 1;

    std::vector<PetFit> out;
    ActiveSet J = apply_selection(pen_fit, gamma);
    Eigen::VectorXd init = pen_fit.theta;
    while (true) {
        PetFit r;
        try {
            r = fit_on_support(model, data, J, opts, &init);
        } catch (const Error&) {
            break;
        }
        out.push_back(r);
        init = r.theta;

        int j_min = -1;
        double mag = std::numeric_limits<double>::infinity();
        for (int j : J.indices)
            if (pen_mask[j] && std::abs(r.theta(j)) < mag) {
                mag = std::abs(r.theta(j));
                j_min = j;
            }
        if (j_min < 0) break;
        std::vector<int> keep;
        for (int j : J.indices)
            if (j != j_min) keep.push_back(j);
        J = ActiveSet::of(std::move(keep), model.p);
        if (J.indices.empty() && out.back().active.size() == 0) break;
    }
    return out;
}

// The path machinery: at each gamma the penalized LQA fit proposes candidate
// supports; the best-scoring sieve-restricted refit is recorded for that
// gamma. Penalized fits warm-start from the previous solution with frozen
// zeros re-seeded from the cold init, so no support decision is inherited.
template <typename Fitter, typename Candidates, typename Scorer>
GammaPath run_path(const std::vector<double>& raw_grid, const Eigen::VectorXd& cold_init,
                   Fitter fit_at, Candidates candidates_at, Scorer score_of) {
    GammaPath path;
    path.grid = clean_grid(raw_grid);
    const size_t m = path.grid.size();
    path.fits.resize(m);
    path.ok.assign(m, false);
    path.failures.assign(m, "");
    path.scores.assign(m, std::numeric_limits<double>::infinity());

    PetFit prev;
    bool have_prev = false;
    for (size_t i = 0; i < m; ++i) {
        Eigen::VectorXd init = cold_init;
        if (have_prev)
            for (int j = 0; j < init.size(); ++j)
                if (prev.theta(j) != 0.0) init(j) = prev.theta(j);
        try {
            PetFit pen = fit_at(path.grid[i], init);
            const std::vector<PetFit> cands = candidates_at(path.grid[i], pen);
            if (cands.empty()) throw NumericError("no feasible support candidate");
            bool found = false;
            for (const PetFit& c : cands) {
                const double s = score_of(c, path.grid[i]);
                if (!std::isfinite(s)) continue;
                // ties resolve toward the sparser (later) candidate
                if (!found || s <= path.scores[i]) {
                    path.scores[i] = s;
                    path.fits[i] = c;
                    found = true;
                }
            }
            if (!found) throw NumericError("no candidate with a finite criterion score");
            path.ok[i] = true;
            prev = std::move(pen);
            have_prev = true;
        } catch (const Error& e) {
            path.failures[i] = e.what();
        }
    }
    path.chosen = argmin_prefer_larger(path.scores);
    if (path.chosen < 0) {
        std::string msg = "all gamma path fits failed:";
        for (size_t i = 0; i < m; ++i)
            msg += "\n  gamma=" + std::to_string(path.grid[i]) + ": " + path.failures[i];
        throw NumericError(msg);
    }
    return path;
}

}  // namespace

GammaPath select_gamma(const MomentModel& model, const Dataset& data,
                       const PenaltySpec& family, const FitOptions& opts,
                       const std::vector<double>& grid, CriterionKind kind, bool fixed_p) {
    const Eigen::VectorXd cold =
        opts.init ? *opts.init : default_initial_theta(model, data);
    return run_path(
        grid, cold,
        [&](double gamma, const Eigen::VectorXd& init) {
            PenaltySpec pen = family;
            pen.gamma = gamma;
            FitOptions o = opts;
            o.init = init;
            return fit_pet(model, data, pen, o);
        },
        [&](double gamma, const PetFit& pen) {
            return support_chain(model, data, opts, gamma, pen);
        },
        [&](const PetFit& fit, double) {
            PetFit scored = fit;
            if (fit.adjusted) {
                // keep the criterion comparable across the path: score by the
                // plain profiled objective at theta, infeasible -> +inf
                try {
                    scored.objective_unpenalized =
                        profiled_objective(model, data, fit.theta, opts.dual,
                                           opts.dual_kind)
                            .first;
                } catch (const ConvexHullViolation&) {
                    return std::numeric_limits<double>::infinity();
                }
            }
            return information_criterion(scored, data.n(), model.p, kind, fixed_p);
        });
}

int choose_on_path(const GammaPath& path, int n, int p, CriterionKind kind, bool fixed_p) {
    std::vector<double> scores(path.grid.size(), std::numeric_limits<double>::infinity());
    for (size_t i = 0; i < path.grid.size(); ++i)
        if (path.ok[i]) scores[i] = information_criterion(path.fits[i], n, p, kind, fixed_p);
    const int best = argmin_prefer_larger(scores);
    if (best < 0) throw NumericError("choose_on_path: no usable fit on the path");
    return best;
}

double gcv_score(const Eigen::VectorXd& theta_gamma, const Eigen::MatrixXd& X,
                 const Eigen::VectorXd& Y, const PenaltySpec& penalty) {
    const int n = static_cast<int>(X.rows());
    if (X.cols() != theta_gamma.size() || Y.size() != n)
        throw DataError("gcv_score: dimension mismatch");

    std::vector<int> active;
    for (int j = 0; j < theta_gamma.size(); ++j)
        if (theta_gamma(j) != 0.0) active.push_back(j);

    double e = 0.0;
    if (!active.empty()) {
        const int q = static_cast<int>(active.size());
        Eigen::MatrixXd XA(n, q);
        Eigen::VectorXd b(q);
        for (int k = 0; k < q; ++k) {
            XA.col(k) = X.col(active[k]);
            b(k) = penalty_derivative(penalty, std::abs(theta_gamma(active[k]))) /
                   std::abs(theta_gamma(active[k]));
        }
        Eigen::MatrixXd gram = XA.transpose() * XA;
        Eigen::MatrixXd M = gram + static_cast<double>(n) * Eigen::MatrixXd(b.asDiagonal());
        Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
        if (ldlt.info() != Eigen::Success)
            throw NumericError("gcv_score: singular penalized Gram matrix");
        e = ldlt.solve(gram).trace();
        if (!std::isfinite(e)) throw NumericError("gcv_score: ill-conditioned design");
    }
    if (e >= n) throw NumericError("gcv_score: effective degrees of freedom reach n");

    const double rss = (Y - X * theta_gamma).squaredNorm() / n;
    const double denom = 1.0 - e / n;
    return rss / (denom * denom);
}

GammaPath select_gamma_gcv(const MomentModel& model, const Dataset& data,
                           const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                           const PenaltySpec& family, const FitOptions& opts,
                           const std::vector<double>& grid) {
    const Eigen::VectorXd cold =
        opts.init ? *opts.init : default_initial_theta(model, data);
    return run_path(
        grid, cold,
        [&](double gamma, const Eigen::VectorXd& init) {
            PenaltySpec pen = family;
            pen.gamma = gamma;
            FitOptions o = opts;
            o.init = init;
            return fit_pet(model, data, pen, o);
        },
        [&](double gamma, const PetFit& pen) {
            return support_chain(model, data, opts, gamma, pen);
        },
        [&](const PetFit& fit, double gamma) {
            PenaltySpec pen = family;
            pen.gamma = gamma;
            return gcv_score(fit.theta, X, Y, pen);
        });
}

double cv_threshold(const Dataset& data, BaselineMethod kind, const std::vector<double>& grid,
                    int folds, std::uint64_t seed) {
    if (grid.empty()) throw ConfigError("cv_threshold: empty grid");
    if (folds < 2 || folds > data.n()) throw ConfigError("cv_threshold: need n >= folds >= 2");
    if (kind != BaselineMethod::HardThreshold && kind != BaselineMethod::SoftThreshold &&
        kind != BaselineMethod::QuadraticLoss)
        throw ConfigError("cv_threshold: estimator must be HT, ST, or QL");

    const int n = data.n();
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed, 0x5eedf01d);
    for (int i = n - 1; i > 0; --i) {
        const int j = static_cast<int>(rng.next_u64() % static_cast<std::uint64_t>(i + 1));
        std::swap(order[i], order[j]);
    }
    std::vector<int> fold_of(n);
    for (int pos = 0; pos < n; ++pos) fold_of[order[pos]] = pos % folds;

    std::vector<double> grid_sorted = grid;
    std::sort(grid_sorted.begin(), grid_sorted.end());

    double best_err = std::numeric_limits<double>::infinity();
    double best_t = grid_sorted.back();
    for (double t : grid_sorted) {
        double err = 0.0;
        for (int f = 0; f < folds; ++f) {
            std::vector<int> train;
            train.reserve(n);
            for (int i = 0; i < n; ++i)
                if (fold_of[i] != f) train.push_back(i);
            if (train.empty()) continue;

            Eigen::MatrixXd tr(train.size(), data.dim());
            for (size_t k = 0; k < train.size(); ++k) tr.row(k) = data.rows.row(train[k]);

            Eigen::VectorXd theta;
            if (kind == BaselineMethod::QuadraticLoss) {
                theta = quadratic_loss(Dataset(tr), t).theta;
            } else {
                const Eigen::VectorXd xbar = tr.colwise().mean();
                theta = kind == BaselineMethod::HardThreshold ? hard_threshold(xbar, t).theta
                                                              : soft_threshold(xbar, t).theta;
            }
            for (int i = 0; i < n; ++i)
                if (fold_of[i] == f)
                    err += (data.rows.row(i).transpose() - theta).squaredNorm();
        }
        if (err <= best_err) {  // ties resolve toward the larger threshold
            best_err = err;
            best_t = t;
        }
    }
    return best_t;
}

}  // namespace tiltfit
