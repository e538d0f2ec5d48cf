#include "tiltfit/pet_optimizer.hpp"

#include <algorithm>
#include <cmath>

namespace tiltfit {

namespace {

constexpr double kArmijo = 1e-4;
constexpr double kOuterShrink = 0.5;
constexpr int kMaxOuterBacktracks = 40;
constexpr int kBlockInnerIterations = 25;
constexpr int kMaxBlockCycles = 50;

double adjust_constant(int n) {
    return std::max(1.0, std::log(static_cast<double>(n)) / 2.0);
}

// Solves A X = B for symmetric PSD A with ridge escalation.
Eigen::MatrixXd spd_solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    const int d = static_cast<int>(A.rows());
    const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(d, d);
    for (double ridge : {0.0, 1e-10, 1e-6}) {
        Eigen::LDLT<Eigen::MatrixXd> ldlt(A + ridge * eye);
        if (ldlt.info() != Eigen::Success) continue;
        Eigen::MatrixXd X = ldlt.solve(B);
        if (X.allFinite()) return X;
    }
    throw ConditioningError("weighted moment covariance singular after ridge escalation");
}

struct EngineInput {
    const MomentModel* model = nullptr;
    const Dataset* data = nullptr;
    const PenaltySpec* penalty = nullptr;
    FitOptions opts;

    bool axis_mode = true;
    Eigen::VectorXd theta0;       // axis mode: full starting theta
    std::vector<int> active0;     // axis mode: coordinates being optimized

    Eigen::VectorXd offset;       // subspace mode: theta = offset + basis * beta
    Eigen::MatrixXd basis;
    Eigen::VectorXd beta0;

    bool start_adjusted = false;
    int max_outer_override = -1;
    bool polish = true;  // try zeroing trailing coefficients after convergence
};

struct Eval {
    DualSolution dual;
    Eigen::MatrixXd G;  // rows used by the dual (includes the pseudo-row when adjusted)
};

PetFit run_lqa(const EngineInput& in) {
    const MomentModel& model = *in.model;
    const Dataset& data = *in.data;
    const PenaltySpec& pen = *in.penalty;
    const FitOptions& opts = in.opts;
    const int p = model.p;
    const int n = data.n();
    const int max_outer = in.max_outer_override > 0 ? in.max_outer_override : opts.max_outer;

    std::vector<char> pen_mask(p, opts.penalized.empty() ? 1 : 0);
    for (int j : opts.penalized) {
        if (j < 0 || j >= p) throw ConfigError("penalized index out of range");
        pen_mask[j] = 1;
    }
    const bool thresholding = pen.gamma > 0.0 && opts.zero_threshold > 0.0 && in.axis_mode;

    bool adjusted = in.start_adjusted;
    Eigen::VectorXd nu_hint;

    auto penalty_sum = [&](const Eigen::VectorXd& th) {
        if (pen.gamma == 0.0) return 0.0;
        double s = 0.0;
        for (int j = 0; j < p; ++j)
            if (pen_mask[j]) s += penalty_value(pen, std::abs(th(j)));
        return s;
    };

    auto evaluate = [&](const Eigen::VectorXd& th) -> Eval {
        Eigen::MatrixXd G = moment_matrix(model, data, th);
        if (adjusted) G = adjusted_moments(G);
        const Eigen::VectorXd* hint = nu_hint.size() == model.r ? &nu_hint : nullptr;
        Eval ev;
        ev.dual = opts.dual_kind == DualKind::ExponentialTilt
                      ? solve_dual(G, opts.dual, hint)
                      : el_dual(G, opts.dual, hint);
        ev.G = std::move(G);
        return ev;
    };

    // Zeroes penalized coordinates below the threshold and enforces the sieve
    // cap; returns the updated theta and the surviving active coordinates.
    auto threshold_and_cap = [&](Eigen::VectorXd th, std::vector<int> active)
        -> std::pair<Eigen::VectorXd, std::vector<int>> {
        std::vector<int> dropped;
        if (thresholding) {
            for (int j : active)
                if (pen_mask[j] && th(j) != 0.0 && std::abs(th(j)) < opts.zero_threshold) {
                    th(j) = 0.0;
                    dropped.push_back(j);
                }
        }
        if (opts.sieve_cap && in.axis_mode) {
            std::vector<int> nonzero;
            for (int j : active)
                if (th(j) != 0.0) nonzero.push_back(j);
            const int cap = *opts.sieve_cap;
            if (static_cast<int>(nonzero.size()) > cap) {
                // smallest magnitude first; ties resolved by zeroing the
                // highest index first
                std::sort(nonzero.begin(), nonzero.end(), [&](int a, int b) {
                    const double ma = std::abs(th(a)), mb = std::abs(th(b));
                    if (ma != mb) return ma < mb;
                    return a > b;
                });
                for (size_t k = 0; k + cap < nonzero.size(); ++k) {
                    th(nonzero[k]) = 0.0;
                    dropped.push_back(nonzero[k]);
                }
            }
        }
        if (!dropped.empty()) {
            std::sort(dropped.begin(), dropped.end());
            std::vector<int> keep;
            for (int j : active)
                if (!std::binary_search(dropped.begin(), dropped.end(), j))
                    keep.push_back(j);
            active = std::move(keep);
        }
        return {std::move(th), std::move(active)};
    };

    Eigen::VectorXd theta;
    std::vector<int> active = in.active0;
    Eigen::VectorXd beta;
    if (in.axis_mode) {
        theta = in.theta0;
        std::tie(theta, active) = threshold_and_cap(std::move(theta), std::move(active));
    } else {
        beta = in.beta0;
        theta = in.offset + in.basis * beta;
    }

    std::vector<std::pair<Eigen::VectorXd, double>> trace;
    Eval ev;
    double Lp = 0.0;

    auto eval_current = [&]() {
        while (true) {
            try {
                ev = evaluate(theta);
                break;
            } catch (const ConvexHullViolation&) {
                if (opts.auto_adjust && !adjusted) {
                    adjusted = true;
                    trace.clear();
                    continue;
                }
                throw;
            }
        }
        Lp = ev.dual.objective - penalty_sum(theta);
    };
    eval_current();
    trace.push_back({theta, Lp});

    bool converged = false;
    int accepted_steps = 0;

    for (int iter = 0; iter < max_outer; ++iter) {
        const int m = in.axis_mode ? static_cast<int>(active.size())
                                   : static_cast<int>(in.basis.cols());
        if (m == 0) {
            converged = true;
            break;
        }

        // Effective per-observation weights fold the pseudo-row into the rows
        // it aggregates, so the weighted Jacobian stays an n-term sum.
        Eigen::VectorXd w_eff = ev.dual.weights.head(n);
        if (adjusted) w_eff.array() -= ev.dual.weights(n) * adjust_constant(n) / n;

        const Eigen::MatrixXd Gamma = weighted_jacobian(model, data, theta, w_eff);
        const double sign = opts.dual_kind == DualKind::ExponentialTilt ? 1.0 : -1.0;
        const Eigen::VectorXd grad_theta = sign * (Gamma.transpose() * ev.dual.nu);

        const Eigen::MatrixXd Sigma =
            ev.G.transpose() * ev.dual.weights.asDiagonal() * ev.G;
        const Eigen::MatrixXd S = spd_solve(Sigma, Gamma);  // Sigma^{-1} Gamma
        const Eigen::MatrixXd H_theta = Gamma.transpose() * S;

        Eigen::VectorXd d_lqa = Eigen::VectorXd::Zero(p);
        if (pen.gamma > 0.0)
            for (int j = 0; j < p; ++j)
                if (pen_mask[j]) d_lqa(j) = lqa_coefficient(pen, theta(j));

        Eigen::VectorXd g_beta(m);
        Eigen::MatrixXd H_beta(m, m);
        if (in.axis_mode) {
            for (int a = 0; a < m; ++a) {
                const int ja = active[a];
                g_beta(a) = grad_theta(ja) - d_lqa(ja) * theta(ja);
                for (int b = 0; b < m; ++b) H_beta(a, b) = H_theta(active[a], active[b]);
                H_beta(a, a) += d_lqa(ja);
            }
        } else {
            g_beta = in.basis.transpose() *
                     (grad_theta - d_lqa.asDiagonal() * theta);
            H_beta = in.basis.transpose() *
                     (H_theta + Eigen::MatrixXd(d_lqa.asDiagonal())) * in.basis;
        }

        Eigen::VectorXd delta;
        double gd = 0.0;
        try {
            delta = spd_solve(H_beta, g_beta);
            gd = g_beta.dot(delta);
        } catch (const ConditioningError&) {
            gd = -1.0;
        }
        if (!(gd > 0.0)) {
            if (g_beta.lpNorm<Eigen::Infinity>() <= 1e-12 * (1.0 + std::abs(Lp))) {
                converged = true;
                break;
            }
            delta = g_beta;  // steepest-ascent fallback
            gd = g_beta.squaredNorm();
        }

        double alpha = 1.0;
        bool accepted = false;
        bool switched = false;
        Eigen::VectorXd theta_new;
        std::vector<int> active_new;
        Eigen::VectorXd beta_new;
        Eval ev_new;
        double Lp_new = 0.0;

        for (int bt = 0; bt < kMaxOuterBacktracks; ++bt) {
            Eigen::VectorXd cand_theta;
            std::vector<int> cand_active;
            Eigen::VectorXd cand_beta;
            if (in.axis_mode) {
                cand_theta = theta;
                for (int a = 0; a < m; ++a) cand_theta(active[a]) += alpha * delta(a);
                std::tie(cand_theta, cand_active) =
                    threshold_and_cap(std::move(cand_theta), active);
            } else {
                cand_beta = beta + alpha * delta;
                cand_theta = in.offset + in.basis * cand_beta;
            }

            Eval evc;
            try {
                evc = evaluate(cand_theta);
            } catch (const ConvexHullViolation&) {
                if (opts.auto_adjust && !adjusted) {
                    adjusted = true;
                    trace.clear();
                    eval_current();
                    trace.push_back({theta, Lp});
                    switched = true;
                    break;  // redo this iteration under the adjusted objective
                }
                if (!opts.auto_adjust) throw;
                alpha *= kOuterShrink;
                continue;
            } catch (const ConditioningError&) {
                alpha *= kOuterShrink;
                continue;
            }
            const double Lpc = evc.dual.objective - penalty_sum(cand_theta);
            if (Lpc >= Lp + kArmijo * alpha * gd) {
                theta_new = std::move(cand_theta);
                active_new = std::move(cand_active);
                beta_new = std::move(cand_beta);
                ev_new = std::move(evc);
                Lp_new = Lpc;
                accepted = true;
                break;
            }
            alpha *= kOuterShrink;
        }
        if (switched) continue;
        if (!accepted) {
            if (delta.lpNorm<Eigen::Infinity>() < opts.outer_tol ||
                gd <= 1e-10 * (1.0 + std::abs(Lp))) {
                converged = true;
                break;
            }
            throw StalledOptimization(
                "penalized optimization stalled: no ascent after backtracking", theta, Lp);
        }

        const double step_norm = (theta_new - theta).lpNorm<Eigen::Infinity>();
        theta = std::move(theta_new);
        if (in.axis_mode)
            active = std::move(active_new);
        else
            beta = std::move(beta_new);
        ev = std::move(ev_new);
        Lp = Lp_new;
        nu_hint = ev.dual.nu;
        ++accepted_steps;
        trace.push_back({theta, Lp});

        if (step_norm < opts.outer_tol) {
            converged = true;
            break;
        }
    }

    DualSolution final_dual = ev.dual;

    // Local-search refinement: the LQA loop cannot leave the basin it started
    // in, so small surviving coefficients (held up by the tilt of already
    // frozen coordinates) are tried at exact zero with the remaining
    // coordinates re-maximized; the move is adopted only when the true
    // penalized objective improves, keeping the trace monotone.
    if (in.axis_mode && in.polish && thresholding) {
        while (true) {
            int j_min = -1;
            double mag = std::numeric_limits<double>::infinity();
            for (int j : active)
                if (pen_mask[j] && theta(j) != 0.0 && std::abs(theta(j)) < mag) {
                    mag = std::abs(theta(j));
                    j_min = j;
                }
            if (j_min < 0) break;

            EngineInput sub = in;
            sub.polish = false;
            sub.theta0 = theta;
            sub.theta0(j_min) = 0.0;
            sub.active0.clear();
            for (int j : active)
                if (j != j_min) sub.active0.push_back(j);
            sub.start_adjusted = adjusted;
            sub.max_outer_override = 40;

            PetFit cand;
            try {
                cand = run_lqa(sub);
            } catch (const Error&) {
                break;
            }
            if (cand.adjusted != adjusted || !(cand.objective_penalized > Lp)) break;

            theta = cand.theta;
            std::vector<int> next_active;
            for (int j : sub.active0)
                if (!pen_mask[j] || theta(j) != 0.0) next_active.push_back(j);
            active = std::move(next_active);
            Lp = cand.objective_penalized;
            final_dual = cand.dual;
            converged = converged && cand.converged;
            ++accepted_steps;
            trace.push_back({theta, Lp});
        }
    }

    PetFit fit;
    fit.theta = theta;
    std::vector<int> nonzero;
    for (int j = 0; j < p; ++j)
        if (theta(j) != 0.0) nonzero.push_back(j);
    fit.active = ActiveSet::of(std::move(nonzero), p);
    fit.dual = final_dual;
    fit.objective_unpenalized = final_dual.objective;
    fit.objective_penalized = Lp;
    fit.gamma = pen.gamma;
    fit.outer_iterations = accepted_steps;
    fit.trace = std::move(trace);
    fit.adjusted = adjusted;
    fit.converged = converged;
    return fit;
}

}  // namespace

void FitOptions::validate() const {
    if (zero_threshold < 0.0) throw ConfigError("zero_threshold must be >= 0");
    if (outer_tol <= 0.0) throw ConfigError("outer_tol must be positive");
    if (max_outer < 1) throw ConfigError("max_outer must be >= 1");
    if (sieve_cap && *sieve_cap < 1) throw ConfigError("sieve_cap must be >= 1");
    dual.validate();
}

std::pair<double, DualSolution> profiled_objective(const MomentModel& model,
                                                   const Dataset& data,
                                                   const Eigen::VectorXd& theta,
                                                   const DualOptions& opts, DualKind kind) {
    if (theta.size() != model.p) throw DataError("profiled_objective: theta length mismatch");
    const Eigen::MatrixXd G = moment_matrix(model, data, theta);
    DualSolution dual =
        kind == DualKind::ExponentialTilt ? solve_dual(G, opts) : el_dual(G, opts);
    return {dual.objective, dual};
}

Eigen::VectorXd theta_gradient(const MomentModel& model, const Dataset& data,
                               const Eigen::VectorXd& theta, const DualSolution& dual,
                               DualKind kind) {
    if (!dual.converged)
        throw NumericError("theta_gradient: stale dual (inner solve not converged)");
    if (dual.weights.size() != data.n())
        throw DataError("theta_gradient: dual weight length does not match data");
    const Eigen::MatrixXd S = weighted_jacobian(model, data, theta, dual.weights);
    const double sign = kind == DualKind::ExponentialTilt ? 1.0 : -1.0;
    return sign * (S.transpose() * dual.nu);
}

Eigen::MatrixXd adjusted_moments(const Eigen::MatrixXd& G) {
    const int n = static_cast<int>(G.rows());
    if (n < 1) throw DataError("adjusted_moments: empty moment matrix");
    const double a = adjust_constant(n);
    Eigen::MatrixXd out(n + 1, G.cols());
    out.topRows(n) = G;
    out.row(n) = -a * G.colwise().mean();
    return out;
}

PetFit fit_pet(const MomentModel& model, const Dataset& data, const PenaltySpec& penalty,
               const FitOptions& opts) {
    opts.validate();
    penalty.validate();
    Eigen::VectorXd theta0 =
        opts.init ? *opts.init : default_initial_theta(model, data);
    if (theta0.size() != model.p) throw ConfigError("fit_pet: initial theta length mismatch");
    if (!theta0.allFinite()) throw ConfigError("fit_pet: initial theta not finite");
    if (data.n() <= model.p)
        throw DataError("fit_pet: sample size must exceed the active dimension");

    EngineInput in;
    in.model = &model;
    in.data = &data;
    in.penalty = &penalty;
    in.opts = opts;
    in.axis_mode = true;
    in.theta0 = std::move(theta0);
    in.active0 = ActiveSet::full(model.p).indices;
    return run_lqa(in);
}

ActiveSet apply_selection(const PetFit& fit, double gamma) {
    if (gamma < 0.0) throw ConfigError("apply_selection: gamma must be >= 0");
    std::vector<int> idx;
    for (int j = 0; j < fit.theta.size(); ++j)
        if (std::abs(fit.theta(j)) > gamma) idx.push_back(j);
    return ActiveSet::of(std::move(idx), static_cast<int>(fit.theta.size()));
}

PetFit fit_on_support(const MomentModel& model, const Dataset& data,
                      const ActiveSet& support, const FitOptions& opts,
                      const Eigen::VectorXd* init) {
    opts.validate();
    if (!support.indices.empty() && support.indices.back() >= model.p)
        throw ConfigError("fit_on_support: support index out of range");

    Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(model.p);
    if (init && init->size() == model.p) {
        for (int j : support.indices) theta0(j) = (*init)(j);
    } else {
        const Eigen::VectorXd cold = default_initial_theta(model, data);
        for (int j : support.indices) theta0(j) = cold(j);
    }

    PenaltySpec none{PenaltyKind::Scad, 0.0, 3.7, 1e-8};
    EngineInput in;
    in.model = &model;
    in.data = &data;
    in.penalty = &none;
    in.opts = opts;
    in.opts.init.reset();
    in.opts.penalized.clear();
    in.opts.sieve_cap.reset();
    in.axis_mode = true;
    in.theta0 = std::move(theta0);
    in.active0 = support.indices;
    in.polish = false;
    return run_lqa(in);
}

namespace detail {

PetFit fit_linear_subspace(const MomentModel& model, const Dataset& data,
                           const PenaltySpec& penalty, const Eigen::VectorXd& offset,
                           const Eigen::MatrixXd& basis, const Eigen::VectorXd& beta0,
                           const FitOptions& opts) {
    opts.validate();
    penalty.validate();
    if (offset.size() != model.p || basis.rows() != model.p)
        throw ConfigError("fit_linear_subspace: parameterization dimension mismatch");
    if (beta0.size() != basis.cols())
        throw ConfigError("fit_linear_subspace: starting point dimension mismatch");

    EngineInput in;
    in.model = &model;
    in.data = &data;
    in.penalty = &penalty;
    in.opts = opts;
    in.axis_mode = false;
    in.offset = offset;
    in.basis = basis;
    in.beta0 = beta0;
    return run_lqa(in);
}

}  // namespace detail

namespace {

// theta reparameterization for blockwise SEM fitting: variance coordinates
// live on the log scale inside the optimizer.
struct LogVarianceTransform {
    std::vector<char> is_var;

    Eigen::VectorXd to_internal(Eigen::VectorXd nat) const {
        for (int j = 0; j < nat.size(); ++j)
            if (is_var[j]) {
                if (nat(j) <= 0.0)
                    throw NumericError("sem fit: variance parameters must be positive");
                nat(j) = std::log(nat(j));
            }
        return nat;
    }
    Eigen::VectorXd to_natural(Eigen::VectorXd t) const {
        for (int j = 0; j < t.size(); ++j)
            if (is_var[j]) t(j) = std::exp(t(j));
        return t;
    }
};

}  // namespace

PetFit fit_pet_blockwise(const MomentModel& sem, const Dataset& data,
                         const PenaltySpec& penalty, const FitOptions& opts) {
    opts.validate();
    penalty.validate();

    // Recover the latent dimension from p = q^2 + 3q.
    const int p = sem.p;
    const int q = static_cast<int>(std::lround((-3.0 + std::sqrt(9.0 + 4.0 * p)) / 2.0));
    if (q < 2 || q * q + 3 * q != p)
        throw ConfigError("fit_pet_blockwise: model is not a packed SEM parameterization");
    const SemLayout lay = sem_layout(q);
    if (lay.r != sem.r) throw ConfigError("fit_pet_blockwise: moment dimension mismatch");
    if (data.dim() != lay.p_y)
        throw DataError("fit_pet_blockwise: observation length must be 2*q_omega");

    LogVarianceTransform tf;
    tf.is_var.assign(p, 0);
    for (int j : lay.variance_indices()) tf.is_var[j] = 1;

    MomentModel tm;
    tm.p = p;
    tm.r = sem.r;
    tm.label = sem.label + "|logvar";
    tm.g = [&sem, tf](const Eigen::VectorXd& x, const Eigen::VectorXd& t) {
        return sem.g(x, tf.to_natural(t));
    };
    tm.jac = [&sem, tf](const Eigen::VectorXd& x, const Eigen::VectorXd& t) {
        const Eigen::VectorXd nat = tf.to_natural(t);
        Eigen::MatrixXd J = sem.jac(x, nat);
        for (int j = 0; j < nat.size(); ++j)
            if (tf.is_var[j]) J.col(j) *= nat(j);
        return J;
    };

    Eigen::VectorXd theta_nat =
        opts.init ? *opts.init : default_initial_theta(sem, data);
    if (theta_nat.size() != p) throw ConfigError("fit_pet_blockwise: init length mismatch");
    Eigen::VectorXd theta_t = tf.to_internal(theta_nat);

    const std::vector<int> pen_idx = lay.coupling_indices();
    std::vector<char> frozen(p, 0);

    auto block_range = [&](std::pair<int, int> rng) {
        std::vector<int> idx;
        for (int j = rng.first; j < rng.second; ++j)
            if (!frozen[j]) idx.push_back(j);
        return idx;
    };

    FitOptions block_opts = opts;
    block_opts.init.reset();
    block_opts.penalized = pen_idx;
    block_opts.sieve_cap.reset();

    std::vector<std::pair<Eigen::VectorXd, double>> cycle_trace;
    double last_Lp = 0.0;
    bool converged = false;
    int cycles = 0;

    const std::pair<int, int> order[] = {lay.couplings, lay.phi, lay.psi, lay.loadings};

    for (int cycle = 0; cycle < kMaxBlockCycles; ++cycle) {
        cycles = cycle + 1;
        const Eigen::VectorXd prev_nat = tf.to_natural(theta_t);
        for (const auto& rng : order) {
            const std::vector<int> active = block_range(rng);
            if (active.empty()) continue;

            EngineInput in;
            in.model = &tm;
            in.data = &data;
            in.penalty = &penalty;
            in.opts = block_opts;
            in.axis_mode = true;
            in.theta0 = theta_t;
            in.active0 = active;
            in.start_adjusted = true;
            in.max_outer_override = kBlockInnerIterations;

            try {
                PetFit bf = run_lqa(in);
                theta_t = bf.theta;
                last_Lp = bf.objective_penalized;
            } catch (const StalledOptimization& st) {
                theta_t = st.best_theta;
                last_Lp = st.best_objective;
            }
            for (int j : pen_idx)
                if (theta_t(j) == 0.0) frozen[j] = 1;
        }
        const Eigen::VectorXd cur_nat = tf.to_natural(theta_t);
        cycle_trace.push_back({cur_nat, last_Lp});
        if ((cur_nat - prev_nat).lpNorm<Eigen::Infinity>() < opts.outer_tol) {
            converged = true;
            break;
        }
    }

    const Eigen::VectorXd theta_final = tf.to_natural(theta_t);

    // Final inner solve at the solution for reporting.
    Eigen::MatrixXd G = adjusted_moments(moment_matrix(sem, data, theta_final));
    DualSolution dual = opts.dual_kind == DualKind::ExponentialTilt
                            ? solve_dual(G, opts.dual)
                            : el_dual(G, opts.dual);

    double pen_sum = 0.0;
    for (int j : pen_idx) pen_sum += penalty_value(penalty, std::abs(theta_final(j)));

    PetFit fit;
    fit.theta = theta_final;
    std::vector<int> nonzero;
    for (int j = 0; j < p; ++j)
        if (theta_final(j) != 0.0) nonzero.push_back(j);
    fit.active = ActiveSet::of(std::move(nonzero), p);
    fit.dual = dual;
    fit.objective_unpenalized = dual.objective;
    fit.objective_penalized = dual.objective - pen_sum;
    fit.gamma = penalty.gamma;
    fit.outer_iterations = cycles;
    fit.trace = std::move(cycle_trace);
    fit.adjusted = true;
    fit.converged = converged;
    return fit;
}

}  // namespace tiltfit
