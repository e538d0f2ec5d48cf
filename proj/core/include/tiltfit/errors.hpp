#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tiltfit {

/// Broad failure categories, mapped to CLI exit codes (2/3/4).
enum class ErrorKind { Config, Data, Numeric };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

/// The dual objective is unbounded below: zero is outside the convex hull of
/// the moment rows. Callers may retry with adjusted (augmented) moments.
class ConvexHullViolation : public NumericError {
public:
    explicit ConvexHullViolation(const std::string& what) : NumericError(what) {}
};

/// Inner linear algebra became unusable even after ridge escalation.
class ConditioningError : public NumericError {
public:
    explicit ConditioningError(const std::string& what) : NumericError(what) {}
};

/// Outer line search found no acceptable step; carries the best iterate seen.
class StalledOptimization : public NumericError {
public:
    StalledOptimization(const std::string& what, Eigen::VectorXd best_theta,
                        double best_objective)
        : NumericError(what),
          best_theta(std::move(best_theta)),
          best_objective(best_objective) {}

    Eigen::VectorXd best_theta;
    double best_objective;
};

}  // namespace tiltfit
