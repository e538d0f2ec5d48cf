// tiltfit command-line interface: fitting, testing, confidence intervals,
// Monte Carlo studies, and the Boston Housing pipeline.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "tiltfit/baselines.hpp"
#include "tiltfit/inference.hpp"
#include "tiltfit/reporting.hpp"
#include "tiltfit/sim_harness.hpp"

namespace tf = tiltfit;

namespace {

struct FitArgs {
    std::string input;
    std::string model = "mean";
    std::string response;
    std::string penalty = "scad";
    std::string gamma = "auto";
    std::string criterion = "abic";
    std::string out = "out";
    std::string format = "markdown";
    std::uint64_t seed = 1;
    bool fixed_p = false;
    double scad_a = 3.7;
    // test/ci extras
    std::string contrast;
    double null_value = 0.0;
    double alpha = 0.05;
    int coef = 0;  // 1-based coordinate for ci
};

tf::PenaltyKind penalty_kind(const std::string& s) {
    if (s == "scad") return tf::PenaltyKind::Scad;
    if (s == "l1") return tf::PenaltyKind::L1;
    if (s == "hard") return tf::PenaltyKind::Hard;
    throw tf::ConfigError("penalty must be scad|l1|hard");
}

tf::CriterionKind criterion_kind(const std::string& s) {
    if (s == "abic") return tf::CriterionKind::aBIC;
    if (s == "bic") return tf::CriterionKind::BIC;
    if (s == "aic") return tf::CriterionKind::AIC;
    throw tf::ConfigError("criterion must be abic|bic|aic|gcv");
}

struct LoadedModel {
    tf::MomentModel model;
    tf::Dataset data;
    std::vector<std::string> labels;  // per coordinate
    bool sem = false;
};

LoadedModel load_model(const FitArgs& args) {
    LoadedModel lm;
    if (args.model == "mean") {
        tf::IngestResult ing = tf::ingest_csv(args.input);
        // every column is a coordinate of the mean vector
        lm.data = ing.data;
        lm.model = tf::mean_model(lm.data.dim());
        lm.labels = ing.labels;
    } else if (args.model == "linreg") {
        tf::IngestResult ing = tf::ingest_csv(args.input, args.response);
        lm.data = ing.data;
        lm.model = tf::linear_regression_model(ing.covariate_count, false);
        lm.labels.assign(ing.labels.begin(), ing.labels.end() - 1);
    } else if (args.model == "iv") {
        tf::IngestResult ing = tf::ingest_csv(args.input, args.response);
        const int cols = ing.covariate_count;
        if (cols % 2 != 0)
            throw tf::DataError("iv layout needs (z_1..z_p, u_1..u_p, response) columns");
        lm.data = ing.data;
        lm.model = tf::linear_regression_model(cols / 2, true);
        lm.labels.assign(ing.labels.begin(), ing.labels.begin() + cols / 2);
    } else if (args.model == "sem") {
        tf::IngestResult ing = tf::ingest_csv(args.input);
        if (ing.data.dim() % 2 != 0)
            throw tf::DataError("sem model needs an even number of manifest columns");
        const int q = ing.data.dim() / 2;
        lm.data = ing.data;
        lm.model = tf::sem_model(q);
        lm.sem = true;
        const tf::SemLayout lay = tf::sem_layout(q);
        lm.labels.assign(lay.p, "");
        for (int l = 0; l < q; ++l) lm.labels[lay.loadings.first + l] = "b" + std::to_string(l + 1);
        int k = lay.couplings.first;
        for (int j = 0; j < q; ++j)
            for (int l = 0; l < q; ++l)
                if (l != j) lm.labels[k++] = "phi" + std::to_string(j + 1) + std::to_string(l + 1);
        for (int j = 0; j < lay.p_y; ++j)
            lm.labels[lay.phi.first + j] = "var_eps" + std::to_string(j + 1);
        for (int l = 0; l < q; ++l) lm.labels[lay.psi.first + l] = "var_zeta" + std::to_string(l + 1);
    } else {
        throw tf::ConfigError("model must be mean|linreg|iv|sem");
    }
    return lm;
}

tf::PetFit fit_with_tuning(const LoadedModel& lm, const FitArgs& args, double* chosen_gamma) {
    tf::PenaltySpec family{penalty_kind(args.penalty), 0.0, args.scad_a, 1e-8};
    tf::FitOptions opts;

    if (args.gamma != "auto") {
        family.gamma = std::stod(args.gamma);
        *chosen_gamma = family.gamma;
        return lm.sem ? tf::fit_pet_blockwise(lm.model, lm.data, family, opts)
                      : tf::fit_pet(lm.model, lm.data, family, opts);
    }

    const std::vector<double> grid = tf::default_gamma_grid(lm.model.p, lm.data.n());
    if (lm.sem) {
        double best_score = 0.0;
        tf::PetFit best;
        bool have = false;
        tf::PenaltySpec pen = family;
        for (double g : grid) {
            pen.gamma = g;
            try {
                tf::PetFit fit = tf::fit_pet_blockwise(lm.model, lm.data, pen, opts);
                const double score = tf::information_criterion(
                    fit, lm.data.n(), lm.model.p, criterion_kind(args.criterion), args.fixed_p);
                if (!have || score <= best_score) {
                    best_score = score;
                    best = fit;
                    have = true;
                }
            } catch (const tf::Error&) {
            }
        }
        if (!have) throw tf::NumericError("every gamma on the path failed");
        *chosen_gamma = best.gamma;
        return best;
    }
    if (args.criterion == "gcv") {
        if (args.model != "linreg" && args.model != "iv")
            throw tf::ConfigError("gcv tuning requires a regression model");
        const int p = lm.model.p;
        const Eigen::MatrixXd X = lm.data.rows.leftCols(p);
        const Eigen::VectorXd Y = lm.data.rows.rightCols(1);
        tf::GammaPath path = tf::select_gamma_gcv(lm.model, lm.data, X, Y, family, opts, grid);
        *chosen_gamma = path.grid[path.chosen];
        return path.chosen_fit();
    }
    tf::GammaPath path = tf::select_gamma(lm.model, lm.data, family, opts, grid,
                                          criterion_kind(args.criterion), args.fixed_p);
    *chosen_gamma = path.grid[path.chosen];
    return path.chosen_fit();
}

tf::ResultsArchive archive_for(const std::string& command, const FitArgs& args) {
    tf::ResultsArchive archive;
    std::map<std::string, std::string> cfg;
    cfg["command"] = command;
    cfg["input"] = args.input;
    cfg["model"] = args.model;
    cfg["penalty"] = args.penalty;
    cfg["gamma"] = args.gamma;
    cfg["criterion"] = args.criterion;
    cfg["seed"] = std::to_string(args.seed);
    archive.config_text = tf::canonical_config_text(cfg);
    archive.config_hash = tf::config_hash(archive.config_text);
    archive.version = "0.1.0";
    archive.timestamp = "";
    return archive;
}

int parse_contrast(const std::string& contrast) {
    std::string s = contrast;
    if (s.rfind("j=", 0) == 0) s = s.substr(2);
    try {
        return std::stoi(s);
    } catch (const std::exception&) {
        throw tf::ConfigError("contrast must look like \"j=2\"");
    }
}

// Two-stage protocol: select on the full model, then operate on the reduced
// model containing the selected coordinates plus the tested one.
struct ReducedProblem {
    tf::MomentModel model;
    tf::ActiveSet active;
    int position = 0;  // of the tested coordinate inside the reduced model
    double gamma = 0.0;
};

ReducedProblem reduce_for_inference(const LoadedModel& lm, const FitArgs& args, int coord0) {
    double gamma = 0.0;
    tf::PetFit fit = fit_with_tuning(lm, args, &gamma);
    std::vector<int> idx = fit.active.indices;
    if (!std::binary_search(idx.begin(), idx.end(), coord0)) {
        idx.push_back(coord0);
        std::sort(idx.begin(), idx.end());
    }
    ReducedProblem rp;
    rp.active = tf::ActiveSet::of(idx, lm.model.p);
    rp.model = tf::restrict(lm.model, rp.active);
    rp.position = static_cast<int>(std::lower_bound(idx.begin(), idx.end(), coord0) -
                                   idx.begin());
    rp.gamma = gamma;
    return rp;
}

int run_fit(const FitArgs& args) {
    LoadedModel lm = load_model(args);
    double gamma = 0.0;
    tf::PetFit fit = fit_with_tuning(lm, args, &gamma);

    tf::ResultsArchive archive = archive_for("fit", args);
    tf::Table tb;
    tb.name = "fit";
    tb.columns = {"coef", "estimate"};
    for (int j : fit.active.indices)
        tb.rows.push_back({tf::Cell{lm.labels.empty() ? "theta" + std::to_string(j + 1)
                                                      : lm.labels[j]},
                           tf::Cell{fit.theta(j)}});
    archive.tables.push_back(std::move(tb));
    archive.notes.push_back("gamma = " + std::to_string(gamma) +
                            ", active size = " + std::to_string(fit.active.size()) +
                            (fit.adjusted ? ", adjusted moments" : ""));
    nlohmann::json rec;
    rec["command"] = "fit";
    rec["gamma"] = gamma;
    rec["active"] = fit.active.indices;
    rec["theta"] = std::vector<double>(fit.theta.data(), fit.theta.data() + fit.theta.size());
    rec["objective"] = fit.objective_unpenalized;
    rec["converged"] = fit.converged;
    archive.fit_records.push_back(rec.dump());

    tf::render_tables(archive, args.format, args.out);
    tf::write_fit_records(archive, args.out);
    std::cout << "fit: " << fit.active.size() << " active coordinate(s), gamma=" << gamma
              << ", outputs in " << args.out << "\n";
    return 0;
}

int run_test(const FitArgs& args) {
    if (args.contrast.empty()) throw tf::ConfigError("test requires --contrast \"j=2\"");
    LoadedModel lm = load_model(args);
    const int coord = parse_contrast(args.contrast);
    if (coord < 1 || coord > lm.model.p)
        throw tf::ConfigError("contrast coordinate out of range (1-based)");

    ReducedProblem rp = reduce_for_inference(lm, args, coord - 1);
    tf::PenaltySpec pen{penalty_kind(args.penalty), rp.gamma, args.scad_a, 1e-8};
    const tf::Hypothesis h =
        tf::Hypothesis::coordinate(rp.model.p, rp.position, args.null_value);
    const tf::TestResult res = tf::lr_test(rp.model, lm.data, pen, h, tf::FitOptions{});

    tf::ResultsArchive archive = archive_for("test", args);
    tf::Table tb;
    tb.name = "test";
    tb.columns = {"coordinate", "null_value", "statistic", "df", "p_value"};
    tb.rows.push_back({tf::Cell{static_cast<double>(coord)}, tf::Cell{args.null_value},
                       tf::Cell{res.statistic}, tf::Cell{static_cast<double>(res.df)},
                       tf::Cell{res.p_value}});
    archive.tables.push_back(std::move(tb));
    tf::render_tables(archive, args.format, args.out);
    tf::write_fit_records(archive, args.out);
    std::cout << "test theta_" << coord << " = " << args.null_value
              << ": statistic=" << res.statistic << ", p=" << res.p_value << "\n";
    return 0;
}

int run_ci(const FitArgs& args) {
    if (args.coef < 1) throw tf::ConfigError("ci requires --coef (1-based)");
    LoadedModel lm = load_model(args);
    if (args.coef > lm.model.p) throw tf::ConfigError("--coef out of range");

    ReducedProblem rp = reduce_for_inference(lm, args, args.coef - 1);
    tf::PenaltySpec pen{penalty_kind(args.penalty), rp.gamma, args.scad_a, 1e-8};
    const tf::Hypothesis h = tf::Hypothesis::coordinate(rp.model.p, rp.position, 0.0);
    const tf::ConfidenceInterval ci =
        tf::confidence_interval(rp.model, lm.data, pen, h, args.alpha, tf::FitOptions{});

    tf::ResultsArchive archive = archive_for("ci", args);
    tf::Table tb;
    tb.name = "ci";
    tb.columns = {"coordinate", "alpha", "lo", "hi", "non_monotone"};
    tb.rows.push_back({tf::Cell{static_cast<double>(args.coef)}, tf::Cell{args.alpha},
                       tf::Cell{ci.lo}, tf::Cell{ci.hi},
                       tf::Cell{std::string(ci.non_monotone ? "yes" : "no")}});
    archive.tables.push_back(std::move(tb));
    tf::render_tables(archive, args.format, args.out);
    tf::write_fit_records(archive, args.out);
    std::cout << "ci theta_" << args.coef << ": [" << ci.lo << ", " << ci.hi << "]\n";
    return 0;
}

int run_simulate(const std::string& config_path, const std::string& out,
                 const std::string& format) {
    const auto kv = tf::parse_config_file(config_path);
    tf::ExperimentConfig cfg = tf::experiment_from_config(kv);
    const tf::MetricsTable metrics = tf::run_experiment(cfg);

    tf::ResultsArchive archive;
    archive.config_text = tf::canonical_config_text(kv);
    archive.config_hash = tf::config_hash(archive.config_text);
    archive.version = "0.1.0";
    archive.tables.push_back(tf::metrics_to_table(metrics));
    for (const auto& [method, mm] : metrics.per_method) {
        nlohmann::json rec;
        rec["method"] = tf::method_name(method);
        rec["T"] = mm.T;
        rec["F"] = mm.F;
        rec["AMS"] = mm.ams;
        rec["PCIM"] = mm.pcim;
        rec["successes"] = mm.successes;
        rec["rms"] = std::vector<double>(mm.rms.data(), mm.rms.data() + mm.rms.size());
        rec["bias"] = std::vector<double>(mm.bias.data(), mm.bias.data() + mm.bias.size());
        rec["sd"] = std::vector<double>(mm.sd.data(), mm.sd.data() + mm.sd.size());
        archive.fit_records.push_back(rec.dump());
    }
    if (metrics.failures > 0)
        archive.notes.push_back(std::to_string(metrics.failures) + " replication(s) failed");

    tf::render_tables(archive, format, out);
    tf::write_fit_records(archive, out);
    std::cout << "simulate: " << cfg.reps << " reps done, " << metrics.failures
              << " failure(s), outputs in " << out << "\n";
    return 0;
}

int run_coverage(const std::string& config_path, const std::string& out,
                 const std::string& format) {
    const auto kv = tf::parse_config_file(config_path);
    tf::ExperimentConfig cfg = tf::experiment_from_config(kv);
    const tf::CoverageSettings cs = tf::coverage_from_config(kv);
    const tf::CoverageStudy study = tf::coverage_study(cfg, cs.theta2_values, cs.alpha);

    tf::ResultsArchive archive;
    archive.config_text = tf::canonical_config_text(kv);
    archive.config_hash = tf::config_hash(archive.config_text);
    archive.version = "0.1.0";
    archive.tables.push_back(tf::coverage_to_table(study));

    tf::render_tables(archive, format, out);
    tf::write_fit_records(archive, out);
    std::cout << "coverage: " << study.rows.size() << " theta2 value(s), outputs in " << out
              << "\n";
    return 0;
}

int run_boston_cmd(const FitArgs& args) {
    tf::BostonOptions opts;
    opts.input_path = args.input;
    opts.response_column = args.response;
    opts.seed = args.seed;
    opts.penalty = tf::PenaltySpec{penalty_kind(args.penalty), 0.0, args.scad_a, 1e-8};
    tf::ResultsArchive archive = tf::run_boston(opts);
    tf::render_tables(archive, args.format, args.out);
    tf::write_fit_records(archive, args.out);
    std::cout << "boston: report written to " << args.out << "\n";
    for (const auto& note : archive.notes) std::cout << "  " << note << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Penalized exponentially tilted likelihood estimation and inference"};
    app.require_subcommand(1);

    FitArgs args;
    std::string config_path;

    auto add_common = [&](CLI::App* sub, bool needs_input) {
        if (needs_input)
            sub->add_option("--input", args.input, "input CSV file")->required();
        sub->add_option("--out", args.out, "output directory (default ./out)");
        sub->add_option("--format", args.format, "csv|markdown|text");
        sub->add_option("--seed", args.seed, "random seed");
    };

    CLI::App* fit = app.add_subcommand("fit", "penalized fit on a CSV dataset");
    add_common(fit, true);
    fit->add_option("--model", args.model, "mean|linreg|iv|sem");
    fit->add_option("--response", args.response, "response column name (default: last)");
    fit->add_option("--penalty", args.penalty, "scad|l1|hard");
    fit->add_option("--gamma", args.gamma, "auto or a numeric value");
    fit->add_option("--criterion", args.criterion, "abic|bic|aic|gcv");
    fit->add_option("--scad-a", args.scad_a, "SCAD shape constant");
    fit->add_flag("--fixed-p", args.fixed_p, "force C_n = 1 in aBIC");

    CLI::App* test = app.add_subcommand("test", "likelihood-ratio test of one coordinate");
    add_common(test, true);
    test->add_option("--model", args.model, "mean|linreg|iv");
    test->add_option("--response", args.response, "response column name");
    test->add_option("--penalty", args.penalty, "scad|l1|hard");
    test->add_option("--gamma", args.gamma, "auto or numeric");
    test->add_option("--criterion", args.criterion, "abic|bic|aic|gcv");
    test->add_option("--contrast", args.contrast, "coordinate, e.g. \"j=2\" (1-based)")
        ->required();
    test->add_option("--null", args.null_value, "hypothesized value (default 0)");

    CLI::App* ci = app.add_subcommand("ci", "confidence interval for one coordinate");
    add_common(ci, true);
    ci->add_option("--model", args.model, "mean|linreg|iv");
    ci->add_option("--response", args.response, "response column name");
    ci->add_option("--penalty", args.penalty, "scad|l1|hard");
    ci->add_option("--gamma", args.gamma, "auto or numeric");
    ci->add_option("--criterion", args.criterion, "abic|bic|aic|gcv");
    ci->add_option("--coef", args.coef, "coordinate (1-based)")->required();
    ci->add_option("--alpha", args.alpha, "significance level (default 0.05)");

    CLI::App* sim = app.add_subcommand("simulate", "run a Monte Carlo experiment");
    sim->add_option("--config", config_path, "experiment config file")->required();
    sim->add_option("--out", args.out, "output directory");
    sim->add_option("--format", args.format, "csv|markdown|text");

    CLI::App* cov = app.add_subcommand("coverage", "confidence-region coverage study");
    cov->add_option("--config", config_path, "coverage config file")->required();
    cov->add_option("--out", args.out, "output directory");
    cov->add_option("--format", args.format, "csv|markdown|text");

    CLI::App* boston = app.add_subcommand("boston", "Boston Housing pipeline");
    add_common(boston, true);
    boston->add_option("--response", args.response, "response column name (default: last)");
    boston->add_option("--penalty", args.penalty, "scad|l1|hard");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (fit->parsed()) return run_fit(args);
        if (test->parsed()) return run_test(args);
        if (ci->parsed()) return run_ci(args);
        if (sim->parsed()) return run_simulate(config_path, args.out, args.format);
        if (cov->parsed()) return run_coverage(config_path, args.out, args.format);
        if (boston->parsed()) return run_boston_cmd(args);
    } catch (const tf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const tf::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const tf::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 4;
    } catch (const tf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 4;
    }
    return 2;
}
