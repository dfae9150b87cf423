#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>

namespace dpg {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Which randomness drives the rollouts: a random x0 with noiseless dynamics,
// or x0 = 0 with i.i.d. additive process noise.
enum class Setting { InitialState, AdditiveNoise };

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

// A precondition on a scalar argument does not hold (e.g. gamma >= 1 where the
// formula diverges).
class DomainError : public Error {
public:
    using Error::Error;
};

class NumericalError : public Error {
public:
    using Error::Error;
};

// sqrt(gamma) * rho(A - BK) >= 1, so the discounted cost is infinite.
class UnstablePairError : public Error {
public:
    UnstablePairError(const std::string& what, double rho, double gamma)
        : Error(what), rho_(rho), gamma_(gamma) {}

    [[nodiscard]] double rho() const noexcept { return rho_; }
    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    [[nodiscard]] double scaled_rho() const noexcept;

private:
    double rho_;
    double gamma_;
};

inline double UnstablePairError::scaled_rho() const noexcept {
    return std::sqrt(gamma_) * rho_;
}

class NotStabilizableError : public Error {
public:
    using Error::Error;
};

// A cost estimate cannot be turned into a discount step (diverged rollouts, or
// an estimate below the sigma/2 floor).
class EstimateError : public Error {
public:
    using Error::Error;
};

template <typename Derived>
[[nodiscard]] bool all_finite(const Eigen::MatrixBase<Derived>& m) {
    return m.allFinite();
}

} // namespace dpg
