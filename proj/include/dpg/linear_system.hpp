#pragma once

#include "dpg/rng.hpp"
#include "dpg/types.hpp"

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace dpg {

// Discrete-time plant x_{t+1} = A x_t + B u_t. Immutable after construction.
template <typename Scalar = double>
class LinearSystem {
public:
    LinearSystem(Matrix<Scalar> A, Matrix<Scalar> B) : A_(std::move(A)), B_(std::move(B)) {
        if (A_.rows() < 1 || A_.rows() != A_.cols()) {
            throw DimensionError("LinearSystem: A must be square and non-empty");
        }
        if (B_.rows() != A_.rows() || B_.cols() < 1) {
            throw DimensionError("LinearSystem: B must have n rows and at least one column");
        }
        if (!A_.allFinite() || !B_.allFinite()) {
            throw DomainError("LinearSystem: non-finite matrix entry");
        }
    }

    [[nodiscard]] const Matrix<Scalar>& A() const noexcept { return A_; }
    [[nodiscard]] const Matrix<Scalar>& B() const noexcept { return B_; }
    [[nodiscard]] Index n() const noexcept { return A_.rows(); }
    [[nodiscard]] Index m() const noexcept { return B_.cols(); }

    [[nodiscard]] Matrix<Scalar> closed_loop(const Matrix<Scalar>& K) const {
        check_gain(K);
        return A_ - B_ * K;
    }

    void check_gain(const Matrix<Scalar>& K) const {
        if (K.rows() != m() || K.cols() != n()) {
            throw DimensionError("gain must be m x n");
        }
    }

private:
    Matrix<Scalar> A_;
    Matrix<Scalar> B_;
};

enum class DistributionKind { UnitSphereScaled, TruncatedGaussian };

namespace detail {

// Per-coordinate variance of a standard normal in R^n conditioned on
// ||z|| <= radius. With a = n/2, x = radius^2/2 this is P(a+1,x)/P(a,x) for
// the regularized lower incomplete gamma P, which reduces to 1 - 1/S with
// S = sum_k x^k / ((a+1)(a+2)...(a+k)).
template <typename Scalar>
[[nodiscard]] Scalar truncated_normal_variance(Index dim, Scalar radius) {
    const Scalar a = Scalar(dim) / 2;
    const Scalar x = radius * radius / 2;
    if (x > Scalar(600)) {
        return Scalar(1);
    }
    Scalar term = 1;
    Scalar sum = 1;
    for (int k = 1; k < 100000; ++k) {
        term *= x / (a + Scalar(k));
        sum += term;
        if (Scalar(k) > x && term < std::numeric_limits<Scalar>::epsilon() * sum) {
            break;
        }
    }
    return Scalar(1) - Scalar(1) / sum;
}

} // namespace detail

// Zero-mean, unit-covariance distribution with bounded support ||x|| <= bound.
//
// UnitSphereScaled is uniform on the sphere of radius sqrt(dim): exactly zero
// mean, exactly identity covariance, bound sqrt(dim).
//
// TruncatedGaussian draws a standard normal conditioned on ||z|| <= radius and
// rescales it to unit covariance. The radius is chosen so that the rescaled
// support is exactly ||x|| <= bound, which requires bound > sqrt(dim + 2).
template <typename Scalar = double>
class BoundedDistribution {
public:
    [[nodiscard]] static BoundedDistribution unit_sphere(Index dim) {
        if (dim < 1) {
            throw DimensionError("distribution dimension must be positive");
        }
        BoundedDistribution d;
        d.kind_ = DistributionKind::UnitSphereScaled;
        d.dim_ = dim;
        d.bound_ = std::sqrt(Scalar(dim));
        return d;
    }

    [[nodiscard]] static BoundedDistribution truncated_gaussian(Index dim, Scalar bound) {
        if (dim < 1) {
            throw DimensionError("distribution dimension must be positive");
        }
        const Scalar floor = std::sqrt(Scalar(dim + 2));
        if (!(bound > floor)) {
            throw DomainError("truncated gaussian bound must exceed sqrt(n + 2)");
        }
        // rescaled radius r / sqrt(c(r)) is increasing in r and never below r
        Scalar lo = 0;
        Scalar hi = bound;
        for (int it = 0; it < 200; ++it) {
            const Scalar mid = (lo + hi) / 2;
            const Scalar reach = mid / std::sqrt(detail::truncated_normal_variance(dim, mid));
            (reach > bound ? hi : lo) = mid;
        }
        BoundedDistribution d;
        d.kind_ = DistributionKind::TruncatedGaussian;
        d.dim_ = dim;
        d.bound_ = bound;
        d.radius_ = lo;
        d.scale_ = Scalar(1) / std::sqrt(detail::truncated_normal_variance(dim, lo));
        return d;
    }

    [[nodiscard]] DistributionKind kind() const noexcept { return kind_; }
    [[nodiscard]] Index dimension() const noexcept { return dim_; }
    [[nodiscard]] Scalar bound() const noexcept { return bound_; }

    template <typename Generator>
    [[nodiscard]] Vector<Scalar> sample(Generator& gen) const {
        std::normal_distribution<Scalar> normal;
        Vector<Scalar> z(dim_);
        if (kind_ == DistributionKind::UnitSphereScaled) {
            Scalar norm = 0;
            do {
                for (Index k = 0; k < dim_; ++k) {
                    z(k) = normal(gen);
                }
                norm = z.norm();
            } while (norm == Scalar(0));
            return z * (bound_ / norm);
        }
        for (long attempt = 0; attempt < 10'000'000; ++attempt) {
            for (Index k = 0; k < dim_; ++k) {
                z(k) = normal(gen);
            }
            const Scalar norm = z.norm();
            if (norm <= radius_) {
                z *= scale_;
                const Scalar out = z.norm();
                if (out > bound_) {
                    z *= bound_ / out;
                }
                return z;
            }
        }
        throw NumericalError("truncated gaussian rejection sampler did not accept a draw");
    }

private:
    BoundedDistribution() = default;

    DistributionKind kind_ = DistributionKind::UnitSphereScaled;
    Index dim_ = 1;
    Scalar bound_ = 1;
    Scalar radius_ = 0;
    Scalar scale_ = 1;
};

template <typename Scalar, typename Generator>
[[nodiscard]] Vector<Scalar> sample_initial_state(const BoundedDistribution<Scalar>& dist, Generator& gen) {
    return dist.sample(gen);
}

// Additive process noise w_t ~ dist, drawn from a stream seeded by `seed`.
// Two rollouts given the same NoiseSpec see the same realization.
template <typename Scalar = double>
struct NoiseSpec {
    BoundedDistribution<Scalar> dist;
    std::uint64_t seed = 0;
};

template <typename Scalar = double>
struct Trajectory {
    std::vector<Vector<Scalar>> states;  // x_0 .. x_tau (shorter if diverged)
    std::vector<Vector<Scalar>> inputs;  // u_0 .. u_{tau-1}
    int horizon = 0;
    std::optional<int> diverged_at;      // first step whose state left the finite range

    [[nodiscard]] bool diverged() const noexcept { return diverged_at.has_value(); }
};

// States with any |entry| above this are treated as divergence.
template <typename Scalar>
inline constexpr Scalar divergence_threshold = Scalar(1e150);

namespace detail {

template <typename Scalar>
[[nodiscard]] bool state_escaped(const Vector<Scalar>& x) {
    if (!x.allFinite()) {
        return true;
    }
    return x.size() > 0 && x.cwiseAbs().maxCoeff() > divergence_threshold<Scalar>;
}

// Closed-loop rollout under u = -Kx. Calls visit(t, x_t, u_t) for
// t = 0..tau-1 and returns the step index at which the state escaped, if any.
// When final_state is given and the rollout stayed finite, x_tau is written to it.
template <typename Scalar, typename Visitor>
std::optional<int> rollout(const Matrix<Scalar>& A, const Matrix<Scalar>& B, const Matrix<Scalar>& K,
                           const Vector<Scalar>& x0, int tau, const NoiseSpec<Scalar>* noise,
                           Visitor&& visit, Vector<Scalar>* final_state = nullptr) {
    const Index n = A.rows();
    if (K.rows() != B.cols() || K.cols() != n) {
        throw DimensionError("rollout: gain must be m x n");
    }
    if (x0.size() != n) {
        throw DimensionError("rollout: initial state must have n entries");
    }
    if (tau < 1) {
        throw DomainError("rollout: horizon must be at least 1");
    }
    std::optional<Rng> noise_rng;
    if (noise != nullptr) {
        if (noise->dist.dimension() != n) {
            throw DimensionError("rollout: noise dimension must equal n");
        }
        if (!x0.isZero(0)) {
            throw DomainError("rollout: additive-noise rollouts start from x0 = 0");
        }
        noise_rng.emplace(noise->seed);
    }
    if (detail::state_escaped(x0)) {
        return 0;
    }
    Vector<Scalar> x = x0;
    Vector<Scalar> u(K.rows());
    Vector<Scalar> next(n);
    for (int t = 0; t < tau; ++t) {
        u.noalias() = -K * x;
        visit(t, x, u);
        next.noalias() = A * x;
        next.noalias() += B * u;
        if (noise != nullptr) {
            next += noise->dist.sample(*noise_rng);
        }
        if (detail::state_escaped(next)) {
            return t + 1;
        }
        x.swap(next);
    }
    if (final_state != nullptr) {
        *final_state = std::move(x);
    }
    return std::nullopt;
}

} // namespace detail

template <typename Scalar>
[[nodiscard]] Trajectory<Scalar> simulate(const LinearSystem<Scalar>& sys, const Matrix<Scalar>& K,
                                          const Vector<Scalar>& x0, int tau,
                                          const NoiseSpec<Scalar>* noise = nullptr) {
    Trajectory<Scalar> traj;
    traj.horizon = tau;
    traj.states.reserve(static_cast<std::size_t>(tau) + 1);
    traj.inputs.reserve(static_cast<std::size_t>(tau));
    Vector<Scalar> last;
    traj.diverged_at = detail::rollout(
        sys.A(), sys.B(), K, x0, tau, noise,
        [&](int, const Vector<Scalar>& x, const Vector<Scalar>& u) {
            traj.states.push_back(x);
            traj.inputs.push_back(u);
        },
        &last);
    if (!traj.diverged_at) {
        traj.states.push_back(std::move(last));
    }
    return traj;
}

// Black-box handle on a plant: the model-free algorithm can roll out policies
// but has no access to (A, B).
template <typename Scalar = double>
class Simulator {
public:
    explicit Simulator(LinearSystem<Scalar> sys) : sys_(std::move(sys)) {}

    [[nodiscard]] Index state_dim() const noexcept { return sys_.n(); }
    [[nodiscard]] Index input_dim() const noexcept { return sys_.m(); }

    [[nodiscard]] Trajectory<Scalar> simulate(const Matrix<Scalar>& K, const Vector<Scalar>& x0, int tau,
                                              const NoiseSpec<Scalar>* noise = nullptr) const {
        return dpg::simulate(sys_, K, x0, tau, noise);
    }

    template <typename Visitor>
    std::optional<int> rollout(const Matrix<Scalar>& K, const Vector<Scalar>& x0, int tau,
                               const NoiseSpec<Scalar>* noise, Visitor&& visit) const {
        return detail::rollout(sys_.A(), sys_.B(), K, x0, tau, noise, std::forward<Visitor>(visit));
    }

private:
    LinearSystem<Scalar> sys_;
};

// Entries of A i.i.d. N(0, a_std^2), entries of B i.i.d. N(0, b_std^2), drawn
// row-major from a single stream (A first, then B).
template <typename Scalar = double>
[[nodiscard]] LinearSystem<Scalar> random_system(Index n, Index m, Scalar a_std, Scalar b_std,
                                                 std::uint64_t seed) {
    if (n < 1 || m < 1) {
        throw DimensionError("random_system: n and m must be positive");
    }
    if (!(a_std > 0) || !(b_std > 0)) {
        throw DomainError("random_system: standard deviations must be positive");
    }
    Rng rng(seed);
    std::normal_distribution<Scalar> normal;
    Matrix<Scalar> A(n, n);
    Matrix<Scalar> B(n, m);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            A(i, j) = a_std * normal(rng);
        }
    }
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < m; ++j) {
            B(i, j) = b_std * normal(rng);
        }
    }
    return LinearSystem<Scalar>(std::move(A), std::move(B));
}

// Plain-text system file: "n m", then n rows of A, then n rows of B.
template <typename Scalar = double>
[[nodiscard]] LinearSystem<Scalar> read_system(std::istream& in) {
    long long n = 0;
    long long m = 0;
    if (!(in >> n >> m) || n < 1 || m < 1) {
        throw DimensionError("system file: expected positive dimensions 'n m' on the first line");
    }
    auto read_block = [&](Index rows, Index cols, const char* name) {
        Matrix<Scalar> M(rows, cols);
        for (Index i = 0; i < rows; ++i) {
            for (Index j = 0; j < cols; ++j) {
                std::string token;
                if (!(in >> token)) {
                    throw DimensionError(std::string("system file: too few entries in ") + name);
                }
                std::istringstream ts(token);
                Scalar v;
                if (!(ts >> v) || !ts.eof()) {
                    throw DomainError(std::string("system file: bad number '") + token + "' in " + name);
                }
                M(i, j) = v;
            }
        }
        return M;
    };
    Matrix<Scalar> A = read_block(n, n, "A");
    Matrix<Scalar> B = read_block(n, m, "B");
    std::string extra;
    if (in >> extra) {
        throw DimensionError("system file: trailing data after B");
    }
    return LinearSystem<Scalar>(std::move(A), std::move(B));
}

template <typename Scalar>
void write_system(std::ostream& out, const LinearSystem<Scalar>& sys) {
    const auto flags = out.flags();
    const auto prec = out.precision();
    out << sys.n() << ' ' << sys.m() << '\n';
    out << std::setprecision(17);
    auto write_block = [&](const Matrix<Scalar>& M) {
        for (Index i = 0; i < M.rows(); ++i) {
            for (Index j = 0; j < M.cols(); ++j) {
                out << (j ? " " : "") << M(i, j);
            }
            out << '\n';
        }
    };
    write_block(sys.A());
    write_block(sys.B());
    out.flags(flags);
    out.precision(prec);
}

} // namespace dpg
