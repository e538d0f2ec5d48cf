#pragma once

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include "tiltfit/errors.hpp"

namespace tiltfit {

/// Deterministic splittable random stream: every (seed, stream) pair yields an
/// independent, reproducible sequence, and child streams are derived by a
/// counter-based mix so that adding consumers never perturbs existing streams.
class Rng {
public:
    Rng(std::uint64_t seed, std::uint64_t stream = 0);

    Rng split(std::uint64_t child) const;

    double uniform();                  // (0, 1)
    double normal();                   // standard normal (Box-Muller)
    double gamma(double shape, double scale);  // Marsaglia-Tsang
    double chi_squared(double df);     // gamma(df/2, 2)
    std::uint64_t next_u64();

    std::uint64_t seed_value() const { return seed_; }
    std::uint64_t stream_value() const { return stream_; }

private:
    std::uint64_t seed_;
    std::uint64_t stream_;
    std::mt19937_64 engine_;
    bool has_cached_normal_ = false;
    double cached_normal_ = 0.0;
};

/// Symmetric PSD square root via eigendecomposition; eigenvalues below -1e-10
/// raise an error, small negatives are clamped to zero.
Eigen::MatrixXd matrix_sqrt(const Eigen::MatrixXd& R);

}  // namespace tiltfit
