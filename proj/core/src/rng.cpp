#include "tiltfit/rng.hpp"

#include <cmath>

namespace tiltfit {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    return splitmix64(splitmix64(a) ^ (0x9e3779b97f4a7c15ULL + b));
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {
    const std::uint64_t s0 = mix(seed, stream);
    const std::uint64_t s1 = mix(stream, ~seed);
    std::seed_seq seq{static_cast<std::uint32_t>(s0), static_cast<std::uint32_t>(s0 >> 32),
                      static_cast<std::uint32_t>(s1), static_cast<std::uint32_t>(s1 >> 32)};
    engine_.seed(seq);
}

Rng Rng::split(std::uint64_t child) const { return Rng(seed_, mix(stream_, child)); }

std::uint64_t Rng::next_u64() { return engine_(); }

double Rng::uniform() {
    // 53-bit mantissa in (0, 1); never returns an exact endpoint.
    const std::uint64_t bits = engine_() >> 11;
    return (static_cast<double>(bits) + 0.5) * (1.0 / 9007199254740992.0);
}

double Rng::normal() {
    if (has_cached_normal_) {
        has_cached_normal_ = false;
        return cached_normal_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * M_PI * u2;
    cached_normal_ = radius * std::sin(angle);
    has_cached_normal_ = true;
    return radius * std::cos(angle);
}

double Rng::gamma(double shape, double scale) {
    if (shape <= 0.0 || scale <= 0.0) throw ConfigError("gamma: shape and scale must be positive");
    if (shape < 1.0) {
        // boost: Gamma(a) = Gamma(a+1) * U^{1/a}
        const double g = gamma(shape + 1.0, 1.0);
        return g * std::pow(uniform(), 1.0 / shape) * scale;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
        double x, v;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
        if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
}

double Rng::chi_squared(double df) {
    if (df <= 0.0) throw ConfigError("chi_squared: df must be positive");
    return gamma(0.5 * df, 2.0);
}

Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& R) {
    if (R.rows() != R.cols()) throw NumericError("matrix_sqrt: matrix must be square");
    if ((R - R.transpose()).lpNorm<Eigen::Infinity>() > 1e-10)
        throw NumericError("matrix_sqrt: matrix must be symmetric");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
    if (es.info() != Eigen::Success) throw NumericError("matrix_sqrt: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    for (int i = 0; i < ev.size(); ++i) {
        if (ev(i) < -1e-10) throw NumericError("matrix_sqrt: matrix is not PSD");
        ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace tiltfit
