#include "tiltfit/moment_models.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

namespace tiltfit {

Dataset::Dataset(Eigen::MatrixXd m, std::vector<std::string> names)
    : rows(std::move(m)), column_names(std::move(names)) {
    if (rows.rows() < 1) throw DataError("dataset must contain at least one observation");
    if (!rows.allFinite()) throw DataError("dataset contains non-finite entries");
    if (!column_names.empty() &&
        column_names.size() != static_cast<size_t>(rows.cols()))
        throw DataError("column_names length does not match observation length");
}

ActiveSet ActiveSet::of(std::vector<int> idx, int p) {
    std::sort(idx.begin(), idx.end());
    if (std::adjacent_find(idx.begin(), idx.end()) != idx.end())
        throw ConfigError("active set contains duplicate indices");
    if (!idx.empty() && (idx.front() < 0 || idx.back() >= p))
        throw ConfigError("active set index out of range");
    ActiveSet a;
    a.indices = std::move(idx);
    return a;
}

ActiveSet ActiveSet::full(int p) {
    ActiveSet a;
    a.indices.resize(p);
    for (int j = 0; j < p; ++j) a.indices[j] = j;
    return a;
}

bool ActiveSet::contains(int j) const {
    return std::binary_search(indices.begin(), indices.end(), j);
}

MomentModel mean_model(int p) {
    if (p < 1) throw ConfigError("mean_model: parameter dimension must be >= 1");
    MomentModel m;
    m.p = p;
    m.r = p;
    m.label = "mean";
    m.g = [p](const Eigen::VectorXd& x, const Eigen::VectorXd& theta) -> Eigen::VectorXd {
        if (x.size() != p) throw DataError("mean_model: observation length mismatch");
        return x - theta;
    };
    m.jac = [p](const Eigen::VectorXd&, const Eigen::VectorXd&) -> Eigen::MatrixXd {
        return -Eigen::MatrixXd::Identity(p, p);
    };
    m.informative_rows = [](const std::vector<int>& active) { return active; };
    m.init = [](const Dataset& data) -> Eigen::VectorXd {
        return data.rows.colwise().mean();
    };
    return m;
}

MomentModel linear_regression_model(int p, bool instrumented) {
    if (p < 1) throw ConfigError("linear_regression_model: dimension must be >= 1");
    const int dim = instrumented ? 2 * p + 1 : p + 1;
    MomentModel m;
    m.p = p;
    m.r = instrumented ? 2 * p : p;
    m.label = instrumented ? "linreg_iv" : "linreg";
    m.g = [p, dim, instrumented](const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& theta) -> Eigen::VectorXd {
        if (x.size() != dim)
            throw DataError("linear_regression_model: observation layout mismatch");
        const auto z = x.head(p);
        const double resid = x(dim - 1) - z.dot(theta);
        if (!instrumented) return z * resid;
        Eigen::VectorXd out(2 * p);
        out.head(p) = z * resid;
        out.tail(p) = x.segment(p, p) * resid;
        return out;
    };
    m.jac = [p, dim, instrumented](const Eigen::VectorXd& x,
                                   const Eigen::VectorXd&) -> Eigen::MatrixXd {
        if (x.size() != dim)
            throw DataError("linear_regression_model: observation layout mismatch");
        const auto z = x.head(p);
        if (!instrumented) return -z * z.transpose();
        Eigen::MatrixXd J(2 * p, p);
        J.topRows(p) = -z * z.transpose();
        J.bottomRows(p) = -x.segment(p, p) * z.transpose();
        return J;
    };
    m.informative_rows = [p, instrumented](const std::vector<int>& active) {
        std::vector<int> rows = active;
        if (instrumented)
            for (int j : active) rows.push_back(p + j);
        return rows;
    };
    m.init = [p](const Dataset& data) -> Eigen::VectorXd {
        const Eigen::MatrixXd Z = data.rows.leftCols(p);
        const Eigen::VectorXd y = data.rows.rightCols(1);
        return Z.colPivHouseholderQr().solve(y);
    };
    return m;
}

ProjectedIvModel projected_iv_model(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& D,
                                    const Eigen::VectorXd& y) {
    const int n = static_cast<int>(Y.rows());
    const int p = static_cast<int>(Y.cols());
    const int K = static_cast<int>(D.cols());
    if (D.rows() != n || y.size() != n)
        throw DataError("projected_iv_model: row counts of Y, D, y disagree");
    if (K < p) throw ConfigError("projected_iv_model: need at least as many instruments as regressors");

    const Eigen::MatrixXd gram = D.transpose() * D;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(gram);
    if (qr.rank() < K)
        throw NumericError("projected_iv_model: instrument Gram matrix rank deficient ("
                           + std::to_string(K - qr.rank()) + " deficient column(s))");

    const Eigen::MatrixXd Xt = D * qr.solve(D.transpose() * Y);

    Eigen::MatrixXd rows(n, p + 1);
    rows.leftCols(p) = Xt;
    rows.col(p) = y;

    ProjectedIvModel out;
    out.model = linear_regression_model(p, false);
    out.model.label = "projected_iv";
    out.data = Dataset(std::move(rows));
    return out;
}

SemLayout sem_layout(int q_omega) {
    if (q_omega < 2) throw ConfigError("sem_model: latent dimension must be >= 2");
    SemLayout lay;
    lay.q_omega = q_omega;
    lay.p_y = 2 * q_omega;
    lay.r = lay.p_y * (lay.p_y + 1) / 2;
    const int nc = q_omega * (q_omega - 1);
    lay.loadings = {0, q_omega};
    lay.couplings = {q_omega, q_omega + nc};
    lay.phi = {q_omega + nc, q_omega + nc + lay.p_y};
    lay.psi = {q_omega + nc + lay.p_y, q_omega + nc + lay.p_y + q_omega};
    lay.p = lay.psi.second;
    return lay;
}

std::vector<int> SemLayout::coupling_indices() const {
    std::vector<int> idx;
    for (int j = couplings.first; j < couplings.second; ++j) idx.push_back(j);
    return idx;
}

std::vector<int> SemLayout::variance_indices() const {
    std::vector<int> idx;
    for (int j = phi.first; j < psi.second; ++j) idx.push_back(j);
    return idx;
}

namespace {

struct SemParts {
    Eigen::MatrixXd Z;    // p_y x q loading matrix
    Eigen::MatrixXd A;    // (I - U)^{-1}
    Eigen::VectorXd phi;  // measurement variances
    Eigen::VectorXd psi;  // latent variances
};

SemParts sem_parts(const SemLayout& lay, const Eigen::VectorXd& theta) {
    const int q = lay.q_omega;
    if (theta.size() != lay.p) throw DataError("sem_model: parameter length mismatch");

    SemParts parts;
    parts.Z = Eigen::MatrixXd::Zero(lay.p_y, q);
    for (int l = 0; l < q; ++l) {
        parts.Z(2 * l, l) = 1.0;
        parts.Z(2 * l + 1, l) = theta(lay.loadings.first + l);
    }
    Eigen::MatrixXd U = Eigen::MatrixXd::Zero(q, q);
    int k = lay.couplings.first;
    for (int j = 0; j < q; ++j)
        for (int l = 0; l < q; ++l)
            if (l != j) U(j, l) = theta(k++);

    parts.phi = theta.segment(lay.phi.first, lay.p_y);
    parts.psi = theta.segment(lay.psi.first, q);
    if ((parts.phi.array() < 0.0).any() || (parts.psi.array() < 0.0).any())
        throw NumericError("sem_model: negative variance parameter");

    const Eigen::MatrixXd ImU = Eigen::MatrixXd::Identity(q, q) - U;
    Eigen::FullPivLU<Eigen::MatrixXd> lu(ImU);
    if (!lu.isInvertible())
        throw NumericError("sem_model: singular structural matrix (I - U)");
    parts.A = lu.inverse();
    return parts;
}

Eigen::MatrixXd sem_covariance(const SemParts& parts) {
    const Eigen::MatrixXd ZA = parts.Z * parts.A;
    Eigen::MatrixXd O = ZA * parts.psi.asDiagonal() * ZA.transpose();
    O = 0.5 * (O + O.transpose()).eval();  // exact symmetry
    O.diagonal() += parts.phi;
    return O;
}

Eigen::VectorXd vech(const Eigen::MatrixXd& S) {
    const int d = static_cast<int>(S.rows());
    Eigen::VectorXd v(d * (d + 1) / 2);
    int k = 0;
    for (int c = 0; c < d; ++c)
        for (int rw = c; rw < d; ++rw) v(k++) = S(rw, c);
    return v;
}

}  // namespace

Eigen::MatrixXd sem_implied_covariance(int q_omega, const Eigen::VectorXd& theta) {
    const SemLayout lay = sem_layout(q_omega);
    return sem_covariance(sem_parts(lay, theta));
}

MomentModel sem_model(int q_omega) {
    const SemLayout lay = sem_layout(q_omega);
    MomentModel m;
    m.p = lay.p;
    m.r = lay.r;
    m.label = "sem:" + std::to_string(q_omega);
    m.g = [lay](const Eigen::VectorXd& y, const Eigen::VectorXd& theta) -> Eigen::VectorXd {
        if (y.size() != lay.p_y) throw DataError("sem_model: observation length mismatch");
        const Eigen::MatrixXd O = sem_covariance(sem_parts(lay, theta));
        return vech(y * y.transpose() - O);
    };
    m.jac = [lay](const Eigen::VectorXd& y, const Eigen::VectorXd& theta) -> Eigen::MatrixXd {
        if (y.size() != lay.p_y) throw DataError("sem_model: observation length mismatch");
        const int q = lay.q_omega;
        const SemParts parts = sem_parts(lay, theta);
        const Eigen::MatrixXd M = parts.A * parts.psi.asDiagonal() * parts.A.transpose();
        const Eigen::MatrixXd ZA = parts.Z * parts.A;
        const Eigen::MatrixXd ZM = parts.Z * M;

        Eigen::MatrixXd J(lay.r, lay.p);
        const int py = lay.p_y;
        Eigen::MatrixXd dO(py, py);

        auto emit = [&](int col) {
            int k = 0;
            for (int c = 0; c < py; ++c)
                for (int rw = c; rw < py; ++rw) J(k++, col) = -dO(rw, c);
        };

        for (int l = 0; l < q; ++l) {
            dO.setZero();
            dO.col(2 * l + 1) += ZM.col(l);
            dO.row(2 * l + 1) += ZM.col(l).transpose();
            emit(lay.loadings.first + l);
        }
        int col = lay.couplings.first;
        for (int j = 0; j < q; ++j)
            for (int l = 0; l < q; ++l) {
                if (l == j) continue;
                dO.noalias() = ZA.col(j) * ZM.col(l).transpose();
                dO += dO.transpose().eval();
                emit(col++);
            }
        for (int j = 0; j < py; ++j) {
            dO.setZero();
            dO(j, j) = 1.0;
            emit(lay.phi.first + j);
        }
        for (int l = 0; l < q; ++l) {
            dO.noalias() = ZA.col(l) * ZA.col(l).transpose();
            emit(lay.psi.first + l);
        }
        return J;
    };
    m.init = [lay](const Dataset&) -> Eigen::VectorXd {
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(lay.p);
        theta.segment(lay.loadings.first, lay.q_omega).setOnes();
        theta.segment(lay.couplings.first, lay.couplings.second - lay.couplings.first)
            .setConstant(0.01);
        theta.segment(lay.phi.first, lay.p_y).setOnes();
        theta.segment(lay.psi.first, lay.q_omega).setOnes();
        return theta;
    };
    return m;
}

MomentModel restrict(const MomentModel& model, const ActiveSet& active) {
    if (active.indices.empty()) throw ConfigError("restrict: active set must be nonempty");
    if (!active.indices.empty() && active.indices.back() >= model.p)
        throw ConfigError("restrict: active index out of range");

    std::vector<int> rows;
    if (model.informative_rows) {
        rows = model.informative_rows(active.indices);
        std::sort(rows.begin(), rows.end());
    } else {
        rows.resize(model.r);
        for (int i = 0; i < model.r; ++i) rows[i] = i;
    }

    const int p_full = model.p;
    const std::vector<int> act = active.indices;

    MomentModel red;
    red.p = static_cast<int>(act.size());
    red.r = static_cast<int>(rows.size());
    red.label = model.label;

    auto embed = [p_full, act](const Eigen::VectorXd& theta1) {
        Eigen::VectorXd theta = Eigen::VectorXd::Zero(p_full);
        for (size_t k = 0; k < act.size(); ++k) theta(act[k]) = theta1(k);
        return theta;
    };

    red.g = [model, rows, embed](const Eigen::VectorXd& x,
                                 const Eigen::VectorXd& theta1) -> Eigen::VectorXd {
        const Eigen::VectorXd full = model.g(x, embed(theta1));
        Eigen::VectorXd out(rows.size());
        for (size_t i = 0; i < rows.size(); ++i) out(i) = full(rows[i]);
        return out;
    };
    red.jac = [model, rows, act, embed](const Eigen::VectorXd& x,
                                        const Eigen::VectorXd& theta1) -> Eigen::MatrixXd {
        const Eigen::MatrixXd full = model.jac(x, embed(theta1));
        Eigen::MatrixXd out(rows.size(), act.size());
        for (size_t i = 0; i < rows.size(); ++i)
            for (size_t k = 0; k < act.size(); ++k) out(i, k) = full(rows[i], act[k]);
        return out;
    };
    if (model.informative_rows) {
        red.informative_rows = [model, rows, act](const std::vector<int>& active2) {
            std::vector<int> orig;
            for (int k : active2) orig.push_back(act[k]);
            std::vector<int> keep = model.informative_rows(orig);
            std::unordered_map<int, int> pos;
            for (size_t i = 0; i < rows.size(); ++i) pos[rows[i]] = static_cast<int>(i);
            std::vector<int> out;
            for (int rw : keep) {
                auto it = pos.find(rw);
                if (it != pos.end()) out.push_back(it->second);
            }
            return out;
        };
    }
    if (model.init) {
        red.init = [model, act](const Dataset& data) -> Eigen::VectorXd {
            const Eigen::VectorXd full = model.init(data);
            Eigen::VectorXd out(act.size());
            for (size_t k = 0; k < act.size(); ++k) out(k) = full(act[k]);
            return out;
        };
    }
    return red;
}

Eigen::MatrixXd fd_jacobian(const MomentModel& model, const Eigen::VectorXd& x,
                            const Eigen::VectorXd& theta, double h) {
    Eigen::MatrixXd J(model.r, model.p);
    Eigen::VectorXd lo = theta, hi = theta;
    for (int j = 0; j < model.p; ++j) {
        const double step = h > 0.0 ? h : 1e-6 * std::max(1.0, std::abs(theta(j)));
        hi(j) = theta(j) + step;
        lo(j) = theta(j) - step;
        J.col(j) = (model.g(x, hi) - model.g(x, lo)) / (2.0 * step);
        hi(j) = theta(j);
        lo(j) = theta(j);
    }
    return J;
}

Eigen::MatrixXd moment_matrix(const MomentModel& model, const Dataset& data,
                              const Eigen::VectorXd& theta) {
    Eigen::MatrixXd G(data.n(), model.r);
    for (int i = 0; i < data.n(); ++i) {
        const Eigen::VectorXd gi = model.g(data.rows.row(i), theta);
        if (gi.size() != model.r)
            throw DataError("moment evaluation has wrong length for model " + model.label);
        G.row(i) = gi.transpose();
    }
    return G;
}

Eigen::MatrixXd weighted_jacobian(const MomentModel& model, const Dataset& data,
                                  const Eigen::VectorXd& theta,
                                  const Eigen::VectorXd& weights) {
    if (weights.size() != data.n())
        throw DataError("weighted_jacobian: weight length mismatch");
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(model.r, model.p);
    for (int i = 0; i < data.n(); ++i)
        S.noalias() += weights(i) * model.jac(data.rows.row(i), theta);
    return S;
}

Eigen::VectorXd default_initial_theta(const MomentModel& model, const Dataset& data) {
    if (model.init) {
        Eigen::VectorXd v = model.init(data);
        if (v.size() == model.p && v.allFinite()) return v;
    }
    return Eigen::VectorXd::Zero(model.p);
}

}  // namespace tiltfit
