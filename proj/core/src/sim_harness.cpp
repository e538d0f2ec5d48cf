#include "tiltfit/sim_harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>

#include "tiltfit/inference.hpp"

namespace tiltfit {

std::string method_name(Method m) {
    switch (m) {
        case Method::Pet: return "PET";
        case Method::Mean: return "Mean";
        case Method::Ht: return "HT";
        case Method::St: return "ST";
        case Method::Ql: return "QL";
        case Method::Pel: return "PEL";
    }
    return "?";
}

Method method_from_name(const std::string& name) {
    std::string s;
    for (char c : name) s += static_cast<char>(std::tolower(c));
    if (s == "pet") return Method::Pet;
    if (s == "mean") return Method::Mean;
    if (s == "ht") return Method::Ht;
    if (s == "st") return Method::St;
    if (s == "ql") return Method::Ql;
    if (s == "pel") return Method::Pel;
    throw ConfigError("unknown method '" + name + "'");
}

void ExperimentConfig::validate() const {
    if (reps < 1) throw ConfigError("reps must be >= 1");
    if (experiment == Kind::Exp1) {
        if (p < 3) throw ConfigError("Experiment 1 requires p >= 3");
        if (rho < 0.0 || rho >= 1.0) throw ConfigError("Experiment 1 requires rho in [0,1)");
    }
    if (experiment == Kind::Exp2 && p < 5) throw ConfigError("Experiment 2 requires p >= 5");
    if (experiment == Kind::Exp3 && q_omega < 2)
        throw ConfigError("Experiment 3 requires q_omega >= 2");
    if (n < 2) throw ConfigError("sample size must be >= 2");
    penalty.validate();
}

int resolve_workers(int requested, int tasks) {
    int w = requested;
    if (w <= 0) {
        if (const char* env = std::getenv("TILTFIT_THREADS")) {
            w = std::atoi(env);
        }
    }
    if (w <= 0) w = static_cast<int>(std::thread::hardware_concurrency());
    if (w <= 0) w = 1;
    return std::max(1, std::min(w, tasks));
}

std::pair<Dataset, Eigen::VectorXd> gen_exp1_at(int n, int p, double rho,
                                                ExperimentConfig::Regime regime, Rng& rng,
                                                const Eigen::VectorXd& theta0,
                                                bool standardize_z) {
    if (p < 1) throw ConfigError("gen_exp1: p must be >= 1");
    if (rho < 0.0 || rho >= 1.0) throw NumericError("gen_exp1: equicorrelation not PSD");
    if (theta0.size() != p) throw ConfigError("gen_exp1: theta0 length mismatch");

    Eigen::MatrixXd R = Eigen::MatrixXd::Constant(p, p, rho);
    R.diagonal().setOnes();
    const Eigen::MatrixXd S = matrix_sqrt(R);
    const double df = regime == ExperimentConfig::Regime::MS ? 1.2 : 1.0;

    Eigen::MatrixXd X(n, p);
    Eigen::VectorXd v(p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) v(j) = rng.chi_squared(df) - 1.0;
        if (standardize_z) v /= std::sqrt(2.0);
        X.row(i) = (theta0 + S * v).transpose();
    }
    return {Dataset(std::move(X)), theta0};
}

std::pair<Dataset, Eigen::VectorXd> gen_exp1(int n, int p, double rho,
                                             ExperimentConfig::Regime regime, Rng& rng,
                                             bool standardize_z) {
    if (p < 3) throw ConfigError("gen_exp1: p must be >= 3");
    Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(p);
    theta0(0) = 1.0;
    theta0(1) = 0.6;
    theta0(2) = 0.3;
    return gen_exp1_at(n, p, rho, regime, rng, theta0, standardize_z);
}

std::pair<Dataset, Eigen::VectorXd> gen_exp2(int n, int p, Rng& rng) {
    if (p < 5) throw ConfigError("gen_exp2: p must be >= 5");
    Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(p);
    theta0(0) = 3.0;
    theta0(1) = 1.5;
    theta0(4) = 2.0;

    Eigen::MatrixXd R(p, p);
    for (int j = 0; j < p; ++j)
        for (int l = 0; l < p; ++l) R(j, l) = std::pow(0.5, std::abs(j - l));
    const Eigen::MatrixXd S = matrix_sqrt(R);

    Eigen::MatrixXd rows(n, 2 * p + 1);
    Eigen::VectorXd xi(p);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < p; ++j) xi(j) = rng.normal();
        const Eigen::VectorXd z = S * xi;
        const double y = z.dot(theta0) + rng.normal();
        rows.row(i).head(p) = z.transpose();
        for (int j = 0; j < p; ++j) rows(i, p + j) = z(j) + rng.normal();
        rows(i, 2 * p) = y;
    }
    return {Dataset(std::move(rows)), theta0};
}

std::pair<Dataset, Eigen::VectorXd> gen_exp3(int n, int q_omega, Rng& rng,
                                             bool zero_couplings) {
    const SemLayout lay = sem_layout(q_omega);
    Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(lay.p);
    theta0.segment(lay.loadings.first, q_omega).setConstant(0.8);
    if (!zero_couplings) {
        int k = lay.couplings.first;
        for (int j = 0; j < q_omega; ++j)
            for (int l = 0; l < q_omega; ++l) {
                if (l == j) continue;
                theta0(k++) = std::abs(j - l) == 1 ? 0.8 : 0.0;
            }
    }
    theta0.segment(lay.phi.first, lay.p_y).setConstant(0.8);
    theta0.segment(lay.psi.first, q_omega).setConstant(0.8);

    // structural pieces at the truth
    Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(lay.p_y, q_omega);
    for (int l = 0; l < q_omega; ++l) {
        Z(2 * l, l) = 1.0;
        Z(2 * l + 1, l) = theta0(lay.loadings.first + l);
    }
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(q_omega, q_omega);
    int k = lay.couplings.first;
    for (int j = 0; j < q_omega; ++j)
        for (int l = 0; l < q_omega; ++l)
            if (l != j) U(j, l) = theta0(k++);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(Eigen::MatrixXd::Identity(q_omega, q_omega) - U);
    if (!lu.isInvertible()) throw NumericError("gen_exp3: singular (I - U) at the truth");
    const Eigen::MatrixXd A = lu.inverse();

    const double sd = std::sqrt(0.8);
    Eigen::MatrixXd Y(n, lay.p_y);
    Eigen::VectorXd zeta(q_omega), eps(lay.p_y);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < q_omega; ++j) zeta(j) = sd * rng.normal();
        for (int j = 0; j < lay.p_y; ++j) eps(j) = sd * rng.normal();
        Y.row(i) = (Z * (A * zeta) + eps).transpose();
    }
    return {Dataset(std::move(Y)), theta0};
}

MethodMetrics aggregate_metrics(const std::vector<Eigen::VectorXd>& estimates,
                                const Eigen::VectorXd& theta_true,
                                const std::vector<int>& scope, double zero_tol) {
    MethodMetrics mm;
    const int p = static_cast<int>(theta_true.size());
    mm.successes = static_cast<int>(estimates.size());
    mm.rms = Eigen::VectorXd::Zero(p);
    mm.sd = Eigen::VectorXd::Zero(p);
    mm.bias = Eigen::VectorXd::Zero(p);
    if (estimates.empty()) return mm;
    const double R = static_cast<double>(estimates.size());

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd sq_err = Eigen::VectorXd::Zero(p);
    for (const auto& est : estimates) {
        mean += est;
        sq_err += (est - theta_true).cwiseAbs2();
    }
    mean /= R;
    mm.bias = mean - theta_true;
    mm.rms = (sq_err / R).cwiseSqrt();

    if (estimates.size() > 1) {
        Eigen::VectorXd ss = Eigen::VectorXd::Zero(p);
        for (const auto& est : estimates) ss += (est - mean).cwiseAbs2();
        mm.sd = (ss / (R - 1.0)).cwiseSqrt();
    }

    std::vector<int> true_zero, true_nonzero;
    for (int j : scope)
        (theta_true(j) == 0.0 ? true_zero : true_nonzero).push_back(j);

    double T = 0, F = 0, ams = 0, pcim = 0;
    for (const auto& est : estimates) {
        int t = 0, f = 0, sz = 0;
        bool exact = true;
        for (int j : scope) {
            const bool est_zero = std::abs(est(j)) < zero_tol;
            const bool is_zero = theta_true(j) == 0.0;
            if (est_zero && is_zero) ++t;
            if (est_zero && !is_zero) ++f;
            if (!est_zero) ++sz;
            if (est_zero != is_zero) exact = false;
        }
        T += t;
        F += f;
        ams += sz;
        pcim += exact ? 1.0 : 0.0;
    }
    mm.T = T / R;
    mm.F = F / R;
    mm.ams = ams / R;
    mm.pcim = pcim / R;
    return mm;
}

namespace {

struct RepOutcome {
    std::map<Method, Eigen::VectorXd> estimates;
    bool failed = false;
    std::string message;
};

std::vector<double> threshold_grid_or_default(const ExperimentConfig& cfg) {
    if (!cfg.threshold_grid.empty()) return cfg.threshold_grid;
    std::vector<double> grid;
    for (int i = 0; i <= 20; ++i) grid.push_back(0.05 * i);  // 0 .. 1
    return grid;
}

std::vector<double> gamma_grid_or_default(const ExperimentConfig& cfg, int p) {
    if (cfg.fixed_gamma) return {*cfg.fixed_gamma};
    if (!cfg.gamma_grid.empty()) return cfg.gamma_grid;
    if (cfg.experiment == ExperimentConfig::Kind::Exp3)
        return {0.05, 0.1, 0.2, 0.4, 0.8};
    return default_gamma_grid(p, cfg.n);
}

Eigen::VectorXd ms_start(int p) {
    Eigen::VectorXd v = Eigen::VectorXd::Constant(p, 0.01);
    v(0) = 1.0;
    v(1) = 0.6;
    v(2) = 0.3;
    return v;
}

// Penalized-likelihood estimate (ET or EL inner) with the configured tuning.
Eigen::VectorXd run_penalized(const ExperimentConfig& cfg, const MomentModel& model,
                              const Dataset& data, DualKind kind) {
    FitOptions opts = cfg.fit;
    opts.dual_kind = kind;
    if (cfg.experiment == ExperimentConfig::Kind::Exp1 &&
        cfg.regime == ExperimentConfig::Regime::MS)
        opts.init = ms_start(model.p);

    const std::vector<double> grid = gamma_grid_or_default(cfg, model.p);

    if (cfg.experiment == ExperimentConfig::Kind::Exp3) {
        PenaltySpec pen = cfg.penalty;
        double best_score = std::numeric_limits<double>::infinity();
        Eigen::VectorXd best;
        std::string failures;
        for (double gamma : grid) {
            pen.gamma = gamma;
            try {
                PetFit fit = fit_pet_blockwise(model, data, pen, opts);
                const double score = information_criterion(fit, data.n(), model.p,
                                                           cfg.criterion,
                                                           cfg.fixed_p_criterion);
                if (score <= best_score) {
                    best_score = score;
                    best = fit.theta;
                }
            } catch (const Error& e) {
                failures += std::string(" [gamma=") + std::to_string(gamma) + "] " + e.what();
            }
        }
        if (best.size() == 0)
            throw NumericError("blockwise path failed:" + failures);
        return best;
    }

    if (grid.size() == 1) {
        PenaltySpec pen = cfg.penalty;
        pen.gamma = grid.front();
        return fit_pet(model, data, pen, opts).theta;
    }

    if (cfg.use_gcv) {
        const int p = model.p;
        const Eigen::MatrixXd X = data.rows.leftCols(p);
        const Eigen::VectorXd Y = data.rows.rightCols(1);
        return select_gamma_gcv(model, data, X, Y, cfg.penalty, opts, grid)
            .chosen_fit()
            .theta;
    }
    return select_gamma(model, data, cfg.penalty, opts, grid, cfg.criterion,
                        cfg.fixed_p_criterion)
        .chosen_fit()
        .theta;
}

RepOutcome run_rep(const ExperimentConfig& cfg, int rep) {
    RepOutcome out;
    try {
        Rng base(cfg.seed, static_cast<std::uint64_t>(rep));
        Rng data_rng = base.split(0);

        Dataset data{Eigen::MatrixXd::Zero(1, 1)};
        Eigen::VectorXd theta0;
        MomentModel model;
        switch (cfg.experiment) {
            case ExperimentConfig::Kind::Exp1: {
                auto gen = gen_exp1(cfg.n, cfg.p, cfg.rho, cfg.regime, data_rng,
                                    cfg.standardize_z);
                data = std::move(gen.first);
                theta0 = std::move(gen.second);
                model = mean_model(cfg.p);
                break;
            }
            case ExperimentConfig::Kind::Exp2: {
                auto gen = gen_exp2(cfg.n, cfg.p, data_rng);
                data = std::move(gen.first);
                theta0 = std::move(gen.second);
                model = linear_regression_model(cfg.p, true);
                break;
            }
            case ExperimentConfig::Kind::Exp3: {
                auto gen = gen_exp3(cfg.n, cfg.q_omega, data_rng, cfg.zero_couplings);
                data = std::move(gen.first);
                theta0 = std::move(gen.second);
                model = sem_model(cfg.q_omega);
                break;
            }
        }

        int method_slot = 0;
        for (Method m : cfg.methods) {
            Rng method_rng = base.split(1 + method_slot++);
            switch (m) {
                case Method::Mean:
                    out.estimates[m] = mean_estimator(data).theta;
                    break;
                case Method::Ht: {
                    const double t = cv_threshold(data, BaselineMethod::HardThreshold,
                                                  threshold_grid_or_default(cfg), 5,
                                                  method_rng.next_u64());
                    out.estimates[m] = hard_threshold(data.rows.colwise().mean(), t).theta;
                    break;
                }
                case Method::St: {
                    const double t = cv_threshold(data, BaselineMethod::SoftThreshold,
                                                  threshold_grid_or_default(cfg), 5,
                                                  method_rng.next_u64());
                    out.estimates[m] = soft_threshold(data.rows.colwise().mean(), t).theta;
                    break;
                }
                case Method::Ql: {
                    const double t = cv_threshold(data, BaselineMethod::QuadraticLoss,
                                                  threshold_grid_or_default(cfg), 5,
                                                  method_rng.next_u64());
                    out.estimates[m] = quadratic_loss(data, t).theta;
                    break;
                }
                case Method::Pet:
                    out.estimates[m] =
                        run_penalized(cfg, model, data, DualKind::ExponentialTilt);
                    break;
                case Method::Pel:
                    out.estimates[m] =
                        run_penalized(cfg, model, data, DualKind::EmpiricalLikelihood);
                    break;
            }
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.message = e.what();
    }
    return out;
}

// Runs fn(i) for i in [0, tasks) over a small worker pool; results are
// written into index-addressed slots so scheduling cannot affect the output.
template <typename Fn>
void parallel_for(int tasks, int workers, Fn fn) {
    if (workers <= 1) {
        for (int i = 0; i < tasks; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            while (true) {
                const int i = next.fetch_add(1);
                if (i >= tasks) break;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

}  // namespace

MetricsTable run_experiment(const ExperimentConfig& config) {
    config.validate();

    std::vector<RepOutcome> outcomes(config.reps);
    const int workers = resolve_workers(config.workers, config.reps);
    parallel_for(config.reps, workers,
                 [&](int rep) { outcomes[rep] = run_rep(config, rep); });

    MetricsTable table;
    table.config = config;
    {
        Rng probe(config.seed, 0);
        Rng probe_data = probe.split(0);
        switch (config.experiment) {
            case ExperimentConfig::Kind::Exp1:
                table.theta_true = gen_exp1(2, config.p, config.rho, config.regime,
                                            probe_data, config.standardize_z)
                                       .second;
                break;
            case ExperimentConfig::Kind::Exp2:
                table.theta_true = gen_exp2(2, config.p, probe_data).second;
                break;
            case ExperimentConfig::Kind::Exp3:
                table.theta_true =
                    gen_exp3(2, config.q_omega, probe_data, config.zero_couplings).second;
                break;
        }
    }
    if (config.experiment == ExperimentConfig::Kind::Exp3)
        table.selection_scope = sem_layout(config.q_omega).coupling_indices();
    else
        table.selection_scope = ActiveSet::full(static_cast<int>(table.theta_true.size())).indices;

    for (int rep = 0; rep < config.reps; ++rep) {
        if (outcomes[rep].failed) {
            ++table.failures;
            if (table.failure_messages.size() < 20)
                table.failure_messages.push_back("rep " + std::to_string(rep) + ": " +
                                                 outcomes[rep].message);
        }
    }
    if (table.failures * 10 > config.reps)
        throw NumericError("run_experiment: more than 10% of replications failed (" +
                           std::to_string(table.failures) + "/" +
                           std::to_string(config.reps) + ")");

    for (Method m : config.methods) {
        std::vector<Eigen::VectorXd> est;
        est.reserve(config.reps);
        for (const auto& oc : outcomes) {
            if (oc.failed) continue;
            const auto it = oc.estimates.find(m);
            if (it != oc.estimates.end()) est.push_back(it->second);
        }
        table.per_method.emplace_back(
            m, aggregate_metrics(est, table.theta_true, table.selection_scope));
    }
    return table;
}

CoverageStudy coverage_study(const ExperimentConfig& config,
                             const std::vector<double>& theta2_values, double alpha) {
    config.validate();
    if (config.experiment != ExperimentConfig::Kind::Exp1)
        throw ConfigError("coverage_study: requires an Experiment 1 configuration");
    if (theta2_values.empty()) throw ConfigError("coverage_study: no theta_2 values");
    if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("coverage_study: alpha in (0,1)");

    CoverageStudy study;
    study.alpha = alpha;
    study.null_value = 0.6;
    const double crit = chisq_quantile(1.0 - alpha, 1);
    const std::vector<double> grid = gamma_grid_or_default(config, config.p);

    for (double t2 : theta2_values) {
        CoverageRow row;
        row.theta2 = t2;

        struct RepStat {
            bool ok = false;
            bool reject = false;
            double stat = 0.0;
            std::string message;
        };
        std::vector<RepStat> stats(config.reps);

        auto one_rep = [&](int rep) {
            RepStat rs;
            try {
                Rng base(config.seed, static_cast<std::uint64_t>(rep));
                Rng data_rng = base.split(0);
                Eigen::VectorXd theta0 = Eigen::VectorXd::Zero(config.p);
                theta0(0) = 1.0;
                theta0(1) = t2;
                theta0(2) = 0.3;
                auto gen = gen_exp1_at(config.n, config.p, config.rho, config.regime,
                                       data_rng, theta0, config.standardize_z);
                const Dataset& data = gen.first;
                const MomentModel model = mean_model(config.p);

                FitOptions opts = config.fit;
                PenaltySpec pen = config.penalty;
                if (grid.size() == 1) {
                    pen.gamma = grid.front();
                } else {
                    GammaPath path = select_gamma(model, data, config.penalty, opts, grid,
                                                  config.criterion, config.fixed_p_criterion);
                    pen.gamma = path.grid[path.chosen];
                }

                PetFit full = [&] {
                    PenaltySpec ps = pen;
                    return fit_pet(model, data, ps, opts);
                }();

                // The tested coordinate always enters the reduced model.
                std::vector<int> reduced = full.active.indices;
                if (!std::binary_search(reduced.begin(), reduced.end(), 1)) {
                    reduced.push_back(1);
                    std::sort(reduced.begin(), reduced.end());
                }
                const ActiveSet act = ActiveSet::of(reduced, config.p);
                const MomentModel mr = restrict(model, act);
                const int pos = static_cast<int>(
                    std::lower_bound(act.indices.begin(), act.indices.end(), 1) -
                    act.indices.begin());

                FitOptions ropts = opts;
                ropts.init.reset();
                const Hypothesis h =
                    Hypothesis::coordinate(mr.p, pos, study.null_value);
                const TestResult res = lr_test(mr, data, pen, h, ropts);
                rs.ok = true;
                rs.stat = res.statistic;
                rs.reject = res.statistic > crit;
            } catch (const std::exception& e) {
                rs.message = e.what();
            }
            stats[rep] = rs;
        };

        parallel_for(config.reps, resolve_workers(config.workers, config.reps), one_rep);

        for (const auto& rs : stats) {
            if (!rs.ok) {
                ++row.failures;
                continue;
            }
            ++row.successes;
            row.statistics.push_back(rs.stat);
            if (rs.reject) row.non_coverage += 1.0;
        }
        if (row.successes == 0)
            throw NumericError("coverage_study: every replication failed at theta2=" +
                               std::to_string(t2));
        row.non_coverage /= row.successes;
        study.rows.push_back(std::move(row));
    }
    return study;
}

}  // namespace tiltfit
