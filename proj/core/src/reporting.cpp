#include "tiltfit/reporting.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tiltfit {

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fmt_full(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string fmt_display(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string lower(std::string s) {
    for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

std::vector<std::string> split(const std::string& s, char delim) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == delim) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

double parse_double(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("cannot parse number '" + s + "' for " + what);
    }
}

long long parse_int(const std::string& s, const std::string& what) {
    try {
        size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("cannot parse integer '" + s + "' for " + what);
    }
}

bool parse_bool(const std::string& s, const std::string& what) {
    const std::string v = lower(s);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ConfigError("cannot parse boolean '" + s + "' for " + what);
}

std::string csv_quote(const std::string& field) {
    if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        out += c;
        if (c == '"') out += '"';
    }
    out += '"';
    return out;
}

std::string cell_text(const Cell& c, bool full_precision) {
    if (std::holds_alternative<std::monostate>(c)) return "";
    if (std::holds_alternative<double>(c))
        return full_precision ? fmt_full(std::get<double>(c))
                              : fmt_display(std::get<double>(c));
    return std::get<std::string>(c);
}

std::string cell_display(const Cell& c) {
    if (std::holds_alternative<std::monostate>(c)) return "—";  // em dash
    return cell_text(c, false);
}

std::string now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm_utc{};
    gmtime_r(&t, &tm_utc);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
    return buf;
}

}  // namespace

std::string config_hash(const std::string& canonical_text) {
    // FNV-1a, 64-bit
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : canonical_text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void ResultsArchive::verify_hash() const {
    if (tiltfit::config_hash(config_text) != this->config_hash)
        throw DataError("archive config hash mismatch (tampered or truncated archive)");
}

std::map<std::string, std::string> parse_config_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) +
                              ": expected 'key = value'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw ConfigError("config: duplicate key '" + key + "'");
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string canonical_config_text(const std::map<std::string, std::string>& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
    return out;
}

ExperimentConfig experiment_from_config(const std::map<std::string, std::string>& kv) {
    ExperimentConfig cfg;
    static const std::vector<std::string> known = {
        "config_version", "experiment", "n", "p", "q_omega", "rho", "regime", "reps",
        "seed", "methods", "penalty.kind", "penalty.a", "tuning.criterion",
        "tuning.grid_points", "tuning.grid_min", "tuning.grid_max", "tuning.fixed_gamma",
        "tuning.fixed_p", "standardize_z", "zero_couplings", "workers",
        "theta2_values", "alpha"};
    for (const auto& [k, v] : kv) {
        (void)v;
        if (std::find(known.begin(), known.end(), k) == known.end())
            throw ConfigError("unknown config key '" + k + "'");
    }
    auto get = [&](const char* key) -> const std::string* {
        const auto it = kv.find(key);
        return it == kv.end() ? nullptr : &it->second;
    };

    if (const auto* v = get("config_version")) {
        if (*v != "1") throw ConfigError("unsupported config_version '" + *v + "'");
    }
    if (const auto* v = get("experiment")) {
        const std::string e = lower(*v);
        if (e == "exp1") cfg.experiment = ExperimentConfig::Kind::Exp1;
        else if (e == "exp2") cfg.experiment = ExperimentConfig::Kind::Exp2;
        else if (e == "exp3") cfg.experiment = ExperimentConfig::Kind::Exp3;
        else throw ConfigError("experiment must be exp1|exp2|exp3");
    }
    if (const auto* v = get("n")) cfg.n = static_cast<int>(parse_int(*v, "n"));
    if (const auto* v = get("p")) cfg.p = static_cast<int>(parse_int(*v, "p"));
    if (const auto* v = get("q_omega"))
        cfg.q_omega = static_cast<int>(parse_int(*v, "q_omega"));
    if (const auto* v = get("rho")) cfg.rho = parse_double(*v, "rho");
    if (const auto* v = get("regime")) {
        const std::string r = lower(*v);
        if (r == "cm") cfg.regime = ExperimentConfig::Regime::CM;
        else if (r == "ms") cfg.regime = ExperimentConfig::Regime::MS;
        else throw ConfigError("regime must be cm|ms");
    }
    if (const auto* v = get("reps")) cfg.reps = static_cast<int>(parse_int(*v, "reps"));
    if (const auto* v = get("seed"))
        cfg.seed = static_cast<std::uint64_t>(parse_int(*v, "seed"));
    if (const auto* v = get("methods")) {
        cfg.methods.clear();
        for (const auto& name : split(*v, ','))
            if (!name.empty()) cfg.methods.push_back(method_from_name(name));
        if (cfg.methods.empty()) throw ConfigError("methods list is empty");
    }
    if (const auto* v = get("penalty.kind")) {
        const std::string k = lower(*v);
        if (k == "scad") cfg.penalty.kind = PenaltyKind::Scad;
        else if (k == "l1") cfg.penalty.kind = PenaltyKind::L1;
        else if (k == "hard") cfg.penalty.kind = PenaltyKind::Hard;
        else throw ConfigError("penalty.kind must be scad|l1|hard");
    }
    if (const auto* v = get("penalty.a")) cfg.penalty.a = parse_double(*v, "penalty.a");
    if (const auto* v = get("tuning.criterion")) {
        const std::string c = lower(*v);
        if (c == "abic") cfg.criterion = CriterionKind::aBIC;
        else if (c == "bic") cfg.criterion = CriterionKind::BIC;
        else if (c == "aic") cfg.criterion = CriterionKind::AIC;
        else if (c == "gcv") cfg.use_gcv = true;
        else throw ConfigError("tuning.criterion must be abic|bic|aic|gcv");
    }
    int grid_points = 40;
    std::optional<double> grid_min, grid_max;
    if (const auto* v = get("tuning.grid_points"))
        grid_points = static_cast<int>(parse_int(*v, "grid_points"));
    if (const auto* v = get("tuning.grid_min")) grid_min = parse_double(*v, "grid_min");
    if (const auto* v = get("tuning.grid_max")) grid_max = parse_double(*v, "grid_max");
    if (grid_min && grid_max) {
        if (*grid_min <= 0 || *grid_max <= *grid_min)
            throw ConfigError("tuning grid bounds must satisfy 0 < min < max");
        cfg.gamma_grid.resize(grid_points);
        const double step = (std::log(*grid_max) - std::log(*grid_min)) /
                            std::max(1, grid_points - 1);
        for (int i = 0; i < grid_points; ++i)
            cfg.gamma_grid[i] = std::exp(std::log(*grid_min) + i * step);
    } else if (grid_min || grid_max) {
        throw ConfigError("tuning.grid_min and tuning.grid_max must be given together");
    }
    if (const auto* v = get("tuning.fixed_gamma"))
        cfg.fixed_gamma = parse_double(*v, "fixed_gamma");
    if (const auto* v = get("tuning.fixed_p"))
        cfg.fixed_p_criterion = parse_bool(*v, "fixed_p");
    if (const auto* v = get("standardize_z"))
        cfg.standardize_z = parse_bool(*v, "standardize_z");
    if (const auto* v = get("zero_couplings"))
        cfg.zero_couplings = parse_bool(*v, "zero_couplings");
    if (const auto* v = get("workers")) cfg.workers = static_cast<int>(parse_int(*v, "workers"));
    return cfg;
}

CoverageSettings coverage_from_config(const std::map<std::string, std::string>& kv) {
    CoverageSettings cs;
    if (const auto it = kv.find("theta2_values"); it != kv.end()) {
        cs.theta2_values.clear();
        for (const auto& s : split(it->second, ','))
            if (!s.empty()) cs.theta2_values.push_back(parse_double(s, "theta2_values"));
    }
    if (const auto it = kv.find("alpha"); it != kv.end())
        cs.alpha = parse_double(it->second, "alpha");
    return cs;
}

namespace {

std::vector<std::vector<std::string>> parse_csv_text(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> row;
    std::string field;
    bool quoted = false;
    size_t i = 0;
    auto end_field = [&]() {
        row.push_back(field);
        field.clear();
    };
    auto end_row = [&]() {
        end_field();
        rows.push_back(row);
        row.clear();
    };
    while (i < text.size()) {
        const char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            if (!field.empty() || !row.empty()) end_row();
        } else if (c != '\r') {
            field += c;
        }
        ++i;
    }
    if (!field.empty() || !row.empty()) end_row();
    return rows;
}

}  // namespace

std::vector<std::vector<std::string>> read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv_text(ss.str());
}

IngestResult ingest_csv(const std::string& path, const std::string& response_column,
                        bool log_response) {
    const auto cells = read_csv(path);
    if (cells.size() < 2) throw DataError("CSV '" + path + "' needs a header and data rows");
    const std::vector<std::string>& header = cells.front();
    const size_t ncol = header.size();
    if (ncol < 2) throw DataError("CSV needs at least two columns");

    int resp = -1;
    if (response_column.empty()) {
        resp = static_cast<int>(ncol) - 1;
    } else {
        for (size_t j = 0; j < ncol; ++j)
            if (lower(trim(header[j])) == lower(response_column)) resp = static_cast<int>(j);
        if (resp < 0)
            throw DataError("response column '" + response_column + "' not found in header");
    }

    const int n = static_cast<int>(cells.size()) - 1;
    Eigen::MatrixXd values(n, ncol);
    for (int i = 0; i < n; ++i) {
        const auto& row = cells[i + 1];
        if (row.size() != ncol)
            throw DataError("CSV row " + std::to_string(i + 2) + " has " +
                            std::to_string(row.size()) + " cells, expected " +
                            std::to_string(ncol));
        for (size_t j = 0; j < ncol; ++j) {
            try {
                size_t pos = 0;
                values(i, static_cast<int>(j)) = std::stod(trim(row[j]), &pos);
                if (pos != trim(row[j]).size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                throw DataError("non-numeric cell at row " + std::to_string(i + 2) +
                                ", column " + std::to_string(j + 1) + " ('" + row[j] + "')");
            }
        }
    }

    IngestResult out;
    out.covariate_count = static_cast<int>(ncol) - 1;
    Eigen::MatrixXd rows(n, ncol);
    std::vector<std::string> labels;
    int k = 0;
    for (size_t j = 0; j < ncol; ++j) {
        if (static_cast<int>(j) == resp) continue;
        rows.col(k++) = values.col(static_cast<int>(j));
        labels.push_back(trim(header[j]));
    }
    Eigen::VectorXd y = values.col(resp);
    if (log_response) {
        if ((y.array() <= 0.0).any())
            throw DataError("log transform requires a strictly positive response");
        y = y.array().log();
    }
    rows.col(k) = y;
    labels.push_back(trim(header[resp]));
    out.data = Dataset(std::move(rows), labels);
    out.labels = std::move(labels);
    return out;
}

InteractionDesign expand_interactions(const Eigen::MatrixXd& covariates, bool add_intercept,
                                      const std::vector<std::string>& names) {
    const int n = static_cast<int>(covariates.rows());
    const int k = static_cast<int>(covariates.cols());
    if (k < 1) throw DataError("expand_interactions: no covariates");
    if (!names.empty() && static_cast<int>(names.size()) != k)
        throw DataError("expand_interactions: name count mismatch");

    const int total = (add_intercept ? 1 : 0) + k + k * (k - 1) / 2;
    InteractionDesign out;
    out.design.resize(n, total);
    int c = 0;
    if (add_intercept) {
        out.design.col(c).setOnes();
        out.labels.push_back("intercept");
        ++c;
    }
    for (int j = 0; j < k; ++j) {
        out.design.col(c++) = covariates.col(j);
        out.labels.push_back("x" + std::to_string(j + 1));
    }
    for (int j = 0; j < k; ++j)
        for (int l = j + 1; l < k; ++l) {
            out.design.col(c++) = covariates.col(j).cwiseProduct(covariates.col(l));
            out.labels.push_back("x" + std::to_string(j + 1) + "*" + std::to_string(l + 1));
        }
    return out;
}

namespace {

struct MethodReport {
    std::string name;
    double gamma = 0.0;
    std::vector<int> active;
    Eigen::VectorXd est;  // on active coordinates
    Eigen::VectorXd se;
    Eigen::VectorXd lo, hi;
};

MethodReport boston_method_report(const std::string& name, const MomentModel& model,
                                  const Dataset& data, const PenaltySpec& family,
                                  const FitOptions& fit_opts, const std::vector<double>& grid,
                                  const Eigen::MatrixXd& X, const Eigen::VectorXd& Y,
                                  double level) {
    MethodReport rep;
    rep.name = name;
    GammaPath path = select_gamma_gcv(model, data, X, Y, family, fit_opts, grid);
    const PetFit& fit = path.chosen_fit();
    rep.gamma = path.grid[path.chosen];
    rep.active = fit.active.indices;
    if (rep.active.empty()) return rep;

    const ActiveSet act = ActiveSet::of(rep.active, model.p);
    const MomentModel mr = restrict(model, act);
    Eigen::VectorXd theta1(act.size());
    for (int i = 0; i < act.size(); ++i) theta1(i) = fit.theta(act.indices[i]);

    auto [obj, dual] = profiled_objective(mr, data, theta1, fit_opts.dual, fit_opts.dual_kind);
    (void)obj;
    PetFit reduced;
    reduced.theta = theta1;
    reduced.active = ActiveSet::full(act.size());
    reduced.dual = dual;

    rep.est = theta1;
    rep.se = asymptotic_se(reduced, mr, data);
    const double z = std::sqrt(chisq_quantile(level, 1));
    rep.lo = rep.est - z * rep.se;
    rep.hi = rep.est + z * rep.se;
    return rep;
}

}  // namespace

ResultsArchive run_boston(const BostonOptions& opts) {
    IngestResult ingest = ingest_csv(opts.input_path, opts.response_column, opts.log_response);
    const int k = ingest.covariate_count;
    if (k != 13)
        throw DataError("Boston preset expects 13 covariates plus a response, got " +
                        std::to_string(k) + " covariates");
    const int n = ingest.data.n();

    // standardize covariates to zero mean and unit variance
    Eigen::MatrixXd cov = ingest.data.rows.leftCols(k);
    const Eigen::VectorXd y = ingest.data.rows.col(k);
    Eigen::VectorXd mu(k), sd(k);
    std::string degenerate;
    for (int j = 0; j < k; ++j) {
        mu(j) = cov.col(j).mean();
        cov.col(j).array() -= mu(j);
        sd(j) = std::sqrt(cov.col(j).squaredNorm() / n);
        if (sd(j) <= 0.0) {
            degenerate += (degenerate.empty() ? "" : ", ") + ingest.labels[j];
            sd(j) = 1.0;
        } else {
            cov.col(j) /= sd(j);
        }
    }
    if (!degenerate.empty())
        throw DataError("zero-variance covariate column(s): " + degenerate);

    InteractionDesign design = expand_interactions(cov, true, {});
    const int p = static_cast<int>(design.design.cols());

    if (n >= p) {
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design.design);
        if (qr.rank() < p) {
            std::string cols;
            const auto perm = qr.colsPermutation().indices();
            for (int i = qr.rank(); i < p; ++i)
                cols += (cols.empty() ? "" : ", ") + design.labels[perm(i)];
            throw DataError("rank-deficient design after standardization; collinear columns: " +
                            cols);
        }
    }

    Eigen::MatrixXd rows(n, p + 1);
    rows.leftCols(p) = design.design;
    rows.col(p) = y;
    const Dataset data{rows};
    const MomentModel model = linear_regression_model(p, false);

    const std::vector<double> grid =
        opts.gamma_grid.empty() ? default_gamma_grid(p, n) : opts.gamma_grid;

    FitOptions pet_opts = opts.fit;
    FitOptions pel_opts = opts.fit;
    pel_opts.dual_kind = DualKind::EmpiricalLikelihood;

    const MethodReport pet =
        boston_method_report("PET", model, data, opts.penalty, pet_opts, grid,
                             design.design, y, opts.ci_level);
    const MethodReport pel =
        boston_method_report("PEL", model, data, opts.penalty, pel_opts, grid,
                             design.design, y, opts.ci_level);

    ResultsArchive archive;
    std::map<std::string, std::string> cfg;
    cfg["command"] = "boston";
    cfg["input"] = opts.input_path;
    cfg["seed"] = std::to_string(opts.seed);
    cfg["penalty.kind"] = opts.penalty.kind == PenaltyKind::Scad
                              ? "scad"
                              : (opts.penalty.kind == PenaltyKind::L1 ? "l1" : "hard");
    cfg["penalty.a"] = fmt_full(opts.penalty.a);
    cfg["ci_level"] = fmt_full(opts.ci_level);
    cfg["grid_size"] = std::to_string(grid.size());
    archive.config_text = canonical_config_text(cfg);
    archive.config_hash = config_hash(archive.config_text);
    archive.timestamp = now_iso8601();
    archive.version = kVersion;

    std::vector<int> union_active;
    for (int j : pet.active) union_active.push_back(j);
    for (int j : pel.active)
        if (std::find(union_active.begin(), union_active.end(), j) == union_active.end())
            union_active.push_back(j);
    std::sort(union_active.begin(), union_active.end());

    Table tb;
    tb.name = "boston";
    tb.columns = {"coef",   "PET_est", "PET_se", "PET_lo", "PET_hi",
                  "PEL_est", "PEL_se",  "PEL_lo", "PEL_hi"};
    auto find_pos = [](const std::vector<int>& v, int j) {
        const auto it = std::find(v.begin(), v.end(), j);
        return it == v.end() ? -1 : static_cast<int>(it - v.begin());
    };
    for (int j : union_active) {
        std::vector<Cell> row;
        row.emplace_back(design.labels[j]);
        for (const MethodReport* mr : {&pet, &pel}) {
            const int pos = find_pos(mr->active, j);
            if (pos < 0) {
                row.emplace_back(std::monostate{});
                row.emplace_back(std::monostate{});
                row.emplace_back(std::monostate{});
                row.emplace_back(std::monostate{});
            } else {
                row.emplace_back(mr->est(pos));
                row.emplace_back(mr->se(pos));
                row.emplace_back(mr->lo(pos));
                row.emplace_back(mr->hi(pos));
            }
        }
        tb.rows.push_back(std::move(row));
    }
    archive.tables.push_back(std::move(tb));

    for (const MethodReport* mr : {&pet, &pel}) {
        nlohmann::json rec;
        rec["method"] = mr->name;
        rec["gamma"] = mr->gamma;
        rec["active"] = mr->active;
        std::vector<std::string> lbl;
        std::vector<double> est, se;
        for (size_t i = 0; i < mr->active.size(); ++i) {
            lbl.push_back(design.labels[mr->active[i]]);
            est.push_back(mr->est(static_cast<int>(i)));
            se.push_back(mr->se(static_cast<int>(i)));
        }
        rec["labels"] = lbl;
        rec["estimate"] = est;
        rec["se"] = se;
        archive.fit_records.push_back(rec.dump());
    }
    {
        nlohmann::json rec;
        rec["standardization"] = {{"mean", std::vector<double>(mu.data(), mu.data() + k)},
                                  {"sd", std::vector<double>(sd.data(), sd.data() + k)}};
        archive.fit_records.push_back(rec.dump());
    }

    auto mean_width = [](const MethodReport& mr) {
        if (mr.active.empty()) return 0.0;
        return (mr.hi - mr.lo).mean();
    };
    archive.notes.push_back("mean 95% CI width: PET " + fmt_display(mean_width(pet)) +
                            ", PEL " + fmt_display(mean_width(pel)) +
                            " (informational comparison)");
    return archive;
}

Table metrics_to_table(const MetricsTable& metrics) {
    Table tb;
    tb.name = "summary";
    std::vector<int> nonzero;
    for (int j = 0; j < metrics.theta_true.size(); ++j)
        if (metrics.theta_true(j) != 0.0) nonzero.push_back(j);
    if (nonzero.size() > 3) nonzero.resize(3);

    tb.columns = {"method"};
    for (int j : nonzero) tb.columns.push_back("rms_theta" + std::to_string(j + 1));
    for (int j : nonzero) tb.columns.push_back("bias_theta" + std::to_string(j + 1));
    for (int j : nonzero) tb.columns.push_back("sd_theta" + std::to_string(j + 1));
    tb.columns.insert(tb.columns.end(), {"T", "F", "AMS", "PCIM", "successes"});

    for (const auto& [method, mm] : metrics.per_method) {
        std::vector<Cell> row;
        row.emplace_back(method_name(method));
        for (int j : nonzero) row.emplace_back(mm.rms(j));
        for (int j : nonzero) row.emplace_back(mm.bias(j));
        for (int j : nonzero) row.emplace_back(mm.sd(j));
        if (method == Method::Mean) {
            row.emplace_back(std::monostate{});
            row.emplace_back(std::monostate{});
        } else {
            row.emplace_back(mm.T);
            row.emplace_back(mm.F);
        }
        row.emplace_back(mm.ams);
        row.emplace_back(mm.pcim);
        row.emplace_back(static_cast<double>(mm.successes));
        tb.rows.push_back(std::move(row));
    }
    return tb;
}

Table coverage_to_table(const CoverageStudy& study) {
    Table tb;
    tb.name = "coverage";
    tb.columns = {"theta2", "non_coverage", "successes", "failures", "alpha"};
    for (const auto& row : study.rows) {
        tb.rows.push_back({Cell{row.theta2}, Cell{row.non_coverage},
                           Cell{static_cast<double>(row.successes)},
                           Cell{static_cast<double>(row.failures)}, Cell{study.alpha}});
    }
    return tb;
}

std::vector<std::string> render_tables(const ResultsArchive& archive, const std::string& format,
                                       const std::filesystem::path& output_dir) {
    const std::string fmt = lower(format);
    if (fmt != "csv" && fmt != "markdown" && fmt != "text")
        throw ConfigError("format must be csv, markdown, or text");
    if (archive.tables.empty()) throw ConfigError("render_tables: archive has no tables");

    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec) throw Error(ErrorKind::Data, "cannot create output directory: " + ec.message());

    std::vector<std::string> written;
    auto write_file = [&](const std::filesystem::path& path, const std::string& content) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw Error(ErrorKind::Data, "cannot write '" + path.string() + "'");
        out << content;
        written.push_back(path.string());
    };

    for (size_t t = 0; t < archive.tables.size(); ++t) {
        const Table& tb = archive.tables[t];
        std::string csv;
        for (size_t c = 0; c < tb.columns.size(); ++c)
            csv += (c ? "," : "") + csv_quote(tb.columns[c]);
        csv += "\r\n";
        for (const auto& row : tb.rows) {
            for (size_t c = 0; c < row.size(); ++c)
                csv += (c ? "," : "") + csv_quote(cell_text(row[c], true));
            csv += "\r\n";
        }
        const std::string fname = t == 0 ? "metrics.csv" : tb.name + ".csv";
        write_file(output_dir / fname, csv);
    }

    if (fmt == "markdown" || fmt == "text") {
        std::string doc;
        const bool md = fmt == "markdown";
        doc += md ? "# tiltfit report\n\n" : "tiltfit report\n==============\n\n";
        doc += "version: " + archive.version + "\n";
        doc += "config hash: " + archive.config_hash + "\n\n";
        for (const Table& tb : archive.tables) {
            doc += md ? "## " + tb.name + "\n\n" : tb.name + "\n" + std::string(tb.name.size(), '-') + "\n";
            std::vector<size_t> width(tb.columns.size());
            std::vector<std::vector<std::string>> cells;
            for (size_t c = 0; c < tb.columns.size(); ++c)
                width[c] = tb.columns[c].size();
            for (const auto& row : tb.rows) {
                std::vector<std::string> r;
                for (size_t c = 0; c < row.size(); ++c) {
                    r.push_back(cell_display(row[c]));
                    width[c] = std::max(width[c], r.back().size());
                }
                cells.push_back(std::move(r));
            }
            auto pad = [&](const std::string& s, size_t w) {
                return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
            };
            if (md) {
                doc += "|";
                for (size_t c = 0; c < tb.columns.size(); ++c)
                    doc += " " + pad(tb.columns[c], width[c]) + " |";
                doc += "\n|";
                for (size_t c = 0; c < tb.columns.size(); ++c)
                    doc += std::string(width[c] + 2, '-') + "|";
                doc += "\n";
                for (const auto& r : cells) {
                    doc += "|";
                    for (size_t c = 0; c < r.size(); ++c) doc += " " + pad(r[c], width[c]) + " |";
                    doc += "\n";
                }
                doc += "\n";
            } else {
                for (size_t c = 0; c < tb.columns.size(); ++c)
                    doc += pad(tb.columns[c], width[c]) + "  ";
                doc += "\n";
                for (const auto& r : cells) {
                    for (size_t c = 0; c < r.size(); ++c) doc += pad(r[c], width[c]) + "  ";
                    doc += "\n";
                }
                doc += "\n";
            }
        }
        for (const auto& note : archive.notes) doc += (md ? "> " : "note: ") + note + "\n";
        write_file(output_dir / (md ? "report.md" : "report.txt"), doc);
    }
    return written;
}

std::string write_fit_records(const ResultsArchive& archive,
                              const std::filesystem::path& output_dir) {
    std::error_code ec;
    std::filesystem::create_directories(output_dir, ec);
    if (ec) throw Error(ErrorKind::Data, "cannot create output directory: " + ec.message());
    const std::filesystem::path path = output_dir / "fits.jsonl";
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::Data, "cannot write '" + path.string() + "'");
    nlohmann::json meta;
    meta["config_hash"] = archive.config_hash;
    meta["timestamp"] = archive.timestamp;
    meta["version"] = archive.version;
    out << meta.dump() << "\n";
    for (const auto& rec : archive.fit_records) out << rec << "\n";
    return path.string();
}

}  // namespace tiltfit
