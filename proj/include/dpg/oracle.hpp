#pragma once

// Model-based ground truth for the discounted LQR problem. Nothing in here is
// reachable from the model-free code path; it backs verification, the
// model-based variant of the outer loop and the harness diagnostics.

#include "dpg/linear_system.hpp"
#include "dpg/types.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <string>
#include <utility>

namespace dpg {

// Smallest eigenvalue of a symmetric matrix. Asymmetry above 1e-10 (relative
// to max(1, ||M||_F)) is rejected.
template <typename Scalar>
[[nodiscard]] Scalar min_eigenvalue(const Matrix<Scalar>& M) {
    if (M.rows() != M.cols() || M.rows() == 0) {
        throw DimensionError("min_eigenvalue: matrix must be square");
    }
    const Scalar scale = std::max(Scalar(1), M.norm());
    if ((M - M.transpose()).norm() > Scalar(1e-10) * scale) {
        throw DomainError("min_eigenvalue: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(M, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) {
        throw NumericalError("min_eigenvalue: symmetric eigensolver did not converge");
    }
    return es.eigenvalues().minCoeff();
}

template <typename Scalar>
[[nodiscard]] Scalar spectral_radius(const Matrix<Scalar>& M) {
    if (M.rows() != M.cols() || M.rows() == 0) {
        throw DimensionError("spectral_radius: matrix must be square");
    }
    if (!M.allFinite()) {
        throw DomainError("spectral_radius: non-finite entry");
    }
    Eigen::EigenSolver<Matrix<Scalar>> es(M, false);
    if (es.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "spectral_radius: eigensolver did not converge (n=" << M.rows()
            << ", ||M||_F=" << M.norm() << ", max|entry|=" << M.cwiseAbs().maxCoeff() << ")";
        throw NumericalError(msg.str());
    }
    return es.eigenvalues().cwiseAbs().maxCoeff();
}

// Penalty weights Q (n x n) and R (m x m), both symmetric positive definite.
template <typename Scalar = double>
class CostModel {
public:
    CostModel(Matrix<Scalar> Q, Matrix<Scalar> R) : Q_(std::move(Q)), R_(std::move(R)) {
        check_spd(Q_, "Q");
        check_spd(R_, "R");
    }

    [[nodiscard]] const Matrix<Scalar>& Q() const noexcept { return Q_; }
    [[nodiscard]] const Matrix<Scalar>& R() const noexcept { return R_; }
    [[nodiscard]] Index state_dim() const noexcept { return Q_.rows(); }
    [[nodiscard]] Index input_dim() const noexcept { return R_.rows(); }

    // Q + K^T R K, the per-step weight on x_t under u = -Kx.
    [[nodiscard]] Matrix<Scalar> stage_weight(const Matrix<Scalar>& K) const {
        if (K.rows() != R_.rows() || K.cols() != Q_.rows()) {
            throw DimensionError("stage_weight: gain must be m x n");
        }
        Matrix<Scalar> S = Q_;
        S.noalias() += K.transpose() * R_ * K;
        return Scalar(0.5) * (S + S.transpose());
    }

    // sigma_min(Q + K^T R K)
    [[nodiscard]] Scalar min_stage_eigenvalue(const Matrix<Scalar>& K) const {
        return min_eigenvalue(stage_weight(K));
    }

    [[nodiscard]] Scalar min_q_eigenvalue() const { return min_eigenvalue(Q_); }

    [[nodiscard]] Scalar stage_cost(const Vector<Scalar>& x, const Vector<Scalar>& u) const {
        return x.dot(Q_ * x) + u.dot(R_ * u);
    }

    [[nodiscard]] CostModel scaled(Scalar c) const { return CostModel(c * Q_, c * R_); }

    void check_system(const LinearSystem<Scalar>& sys) const {
        if (sys.n() != state_dim() || sys.m() != input_dim()) {
            throw DimensionError("cost model dimensions do not match the system");
        }
    }

private:
    static void check_spd(const Matrix<Scalar>& M, const char* name) {
        if (M.rows() < 1 || M.rows() != M.cols()) {
            throw DimensionError(std::string("CostModel: ") + name + " must be square");
        }
        if (!M.allFinite()) {
            throw DomainError(std::string("CostModel: ") + name + " has non-finite entries");
        }
        if ((M - M.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-12)) {
            throw DomainError(std::string("CostModel: ") + name + " must be symmetric");
        }
        if (!(min_eigenvalue(M) > 0)) {
            throw DomainError(std::string("CostModel: ") + name + " must be positive definite");
        }
    }

    Matrix<Scalar> Q_;
    Matrix<Scalar> R_;
};

template <typename Scalar = double>
struct LyapunovCertificate {
    Matrix<Scalar> P;
    Scalar gamma = 1;
    Scalar residual = 0;
};

// Above this state dimension the Kronecker (n^2 x n^2) solve is replaced by
// squared Smith iteration.
inline constexpr Index kDirectLyapunovMaxDim = 24;

namespace detail {

// Solves P = S + F^T P F for rho(F) < 1.
template <typename Scalar>
[[nodiscard]] Matrix<Scalar> stein_direct(const Matrix<Scalar>& F, const Matrix<Scalar>& S) {
    const Index n = F.rows();
    const Index nn = n * n;
    // column-major vec: vec(F^T P F) = (F^T kron F^T) vec(P)
    Matrix<Scalar> L = Matrix<Scalar>::Identity(nn, nn);
    for (Index i = 0; i < n; ++i) {
        for (Index j = 0; j < n; ++j) {
            L.block(i * n, j * n, n, n).noalias() -= F(j, i) * F.transpose();
        }
    }
    Eigen::PartialPivLU<Matrix<Scalar>> lu(L);
    Vector<Scalar> rhs = Eigen::Map<const Vector<Scalar>>(S.data(), nn);
    Vector<Scalar> p = lu.solve(rhs);
    // one step of iterative refinement
    Vector<Scalar> r = rhs - L * p;
    p += lu.solve(r);
    Matrix<Scalar> P = Eigen::Map<Matrix<Scalar>>(p.data(), n, n);
    return Scalar(0.5) * (P + P.transpose());
}

template <typename Scalar>
[[nodiscard]] Matrix<Scalar> stein_smith(const Matrix<Scalar>& F, const Matrix<Scalar>& S) {
    Matrix<Scalar> P = S;
    Matrix<Scalar> Fk = F;
    for (int k = 0; k < 64; ++k) {
        Matrix<Scalar> delta = Fk.transpose() * P * Fk;
        P += delta;
        Fk = (Fk * Fk).eval();
        if (!P.allFinite()) {
            throw NumericalError("Lyapunov doubling iteration overflowed");
        }
        if (delta.norm() <= Scalar(1e-12) * P.norm()) {
            return Scalar(0.5) * (P + P.transpose());
        }
    }
    throw NumericalError("Lyapunov doubling iteration did not converge");
}

template <typename Scalar>
[[nodiscard]] Matrix<Scalar> solve_stein(const Matrix<Scalar>& F, const Matrix<Scalar>& S) {
    return F.rows() <= kDirectLyapunovMaxDim ? stein_direct(F, S) : stein_smith(F, S);
}

template <typename Scalar>
void require_stable(const Matrix<Scalar>& closed_loop, Scalar gamma) {
    if (!(gamma > 0) || !(gamma <= 1)) {
        throw DomainError("discount factor must lie in (0, 1]");
    }
    const Scalar rho = spectral_radius(closed_loop);
    if (!(std::sqrt(gamma) * rho < 1)) {
        std::ostringstream msg;
        msg << "unstable pair: sqrt(gamma)*rho(A-BK) = " << std::sqrt(gamma) * rho << " >= 1 (rho = " << rho
            << ", gamma = " << gamma << ")";
        throw UnstablePairError(msg.str(), double(rho), double(gamma));
    }
}

} // namespace detail

// ||P - (Q + K^T R K + gamma (A-BK)^T P (A-BK))||_F
template <typename Scalar>
[[nodiscard]] Scalar lyapunov_residual(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                       const Matrix<Scalar>& K, Scalar gamma, const Matrix<Scalar>& P) {
    const Matrix<Scalar> Acl = sys.closed_loop(K);
    return (P - cost.stage_weight(K) - gamma * Acl.transpose() * P * Acl).norm();
}

template <typename Scalar>
[[nodiscard]] LyapunovCertificate<Scalar> solve_discounted_lyapunov(const LinearSystem<Scalar>& sys,
                                                                    const CostModel<Scalar>& cost,
                                                                    const Matrix<Scalar>& K, Scalar gamma) {
    cost.check_system(sys);
    const Matrix<Scalar> Acl = sys.closed_loop(K);
    detail::require_stable(Acl, gamma);
    LyapunovCertificate<Scalar> cert;
    cert.gamma = gamma;
    cert.P = detail::solve_stein<Scalar>(std::sqrt(gamma) * Acl, cost.stage_weight(K));
    cert.residual = lyapunov_residual(sys, cost, K, gamma, cert.P);
    if (!cert.P.allFinite() || cert.residual > Scalar(1e-9) * cert.P.norm()) {
        std::ostringstream msg;
        msg << "Lyapunov solve residual " << cert.residual << " exceeds tolerance (||P||_F = " << cert.P.norm()
            << ")";
        throw NumericalError(msg.str());
    }
    if (cert.P.llt().info() != Eigen::Success) {
        throw NumericalError("Lyapunov solution is not positive definite");
    }
    return cert;
}

// J_gamma(K) = Tr(P) for the initial-state setting with E[x0 x0^T] = I.
template <typename Scalar>
[[nodiscard]] Scalar closed_form_cost(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                      const Matrix<Scalar>& K, Scalar gamma) {
    return solve_discounted_lyapunov(sys, cost, K, gamma).P.trace();
}

// Additive-noise setting: gamma / (1 - gamma) * Tr(P).
template <typename Scalar>
[[nodiscard]] Scalar closed_form_cost_noise(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                            const Matrix<Scalar>& K, Scalar gamma) {
    if (!(gamma < 1)) {
        throw DomainError("additive-noise cost requires gamma < 1");
    }
    return gamma / (Scalar(1) - gamma) * closed_form_cost(sys, cost, K, gamma);
}

template <typename Scalar>
[[nodiscard]] Scalar setting_cost(Setting setting, const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                  const Matrix<Scalar>& K, Scalar gamma) {
    return setting == Setting::InitialState ? closed_form_cost(sys, cost, K, gamma)
                                            : closed_form_cost_noise(sys, cost, K, gamma);
}

// Exact gradient of J_gamma(K) = Tr(P_K):
//   2 [ (R + gamma B^T P B) K - gamma B^T P A ] Sigma,
// where Sigma = I + gamma (A-BK) Sigma (A-BK)^T is the discounted state
// covariance.
template <typename Scalar>
[[nodiscard]] Matrix<Scalar> cost_gradient(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                           const Matrix<Scalar>& K, Scalar gamma) {
    const Matrix<Scalar> P = solve_discounted_lyapunov(sys, cost, K, gamma).P;
    const Matrix<Scalar> Acl = sys.closed_loop(K);
    const Matrix<Scalar> F = std::sqrt(gamma) * Acl.transpose();
    const Matrix<Scalar> Sigma = detail::solve_stein<Scalar>(F, Matrix<Scalar>::Identity(sys.n(), sys.n()));
    const Matrix<Scalar> BtP = sys.B().transpose() * P;
    const Matrix<Scalar> E = (cost.R() + gamma * BtP * sys.B()) * K - gamma * BtP * sys.A();
    return Scalar(2) * E * Sigma;
}

template <typename Scalar = double>
struct OptimalCost {
    Scalar value = 0;      // J*_gamma = Tr(P*)
    Matrix<Scalar> gain;   // K*_gamma
    Matrix<Scalar> P;
    int iterations = 0;
    Scalar residual = 0;   // relative Riccati residual
};

// Discrete Riccati value iteration on the scaled pair (sqrt(gamma) A, sqrt(gamma) B).
template <typename Scalar>
[[nodiscard]] OptimalCost<Scalar> optimal_discounted_cost(const LinearSystem<Scalar>& sys,
                                                          const CostModel<Scalar>& cost, Scalar gamma,
                                                          int max_iterations = 100000) {
    cost.check_system(sys);
    if (!(gamma > 0) || !(gamma <= 1)) {
        throw DomainError("discount factor must lie in (0, 1]");
    }
    const Scalar s = std::sqrt(gamma);
    const Matrix<Scalar> A = s * sys.A();
    const Matrix<Scalar> B = s * sys.B();
    const Matrix<Scalar>& Q = cost.Q();
    const Matrix<Scalar>& R = cost.R();

    auto riccati_map = [&](const Matrix<Scalar>& P, Matrix<Scalar>& gain) {
        const Matrix<Scalar> BtP = B.transpose() * P;
        gain = (R + BtP * B).ldlt().solve(BtP * A);
        Matrix<Scalar> next = Q + A.transpose() * P * A - (BtP * A).transpose() * gain;
        return Matrix<Scalar>(Scalar(0.5) * (next + next.transpose()));
    };

    OptimalCost<Scalar> out;
    Matrix<Scalar> P = Q;
    Matrix<Scalar> gain;
    for (int it = 1; it <= max_iterations; ++it) {
        Matrix<Scalar> next = riccati_map(P, gain);
        if (!next.allFinite() || next.norm() > Scalar(1e100)) {
            throw NotStabilizableError("Riccati iteration diverged: pair not stabilizable at this gamma");
        }
        const Scalar change = (next - P).norm();
        P = std::move(next);
        if (change <= Scalar(1e-12) * P.norm()) {
            out.iterations = it;
            Matrix<Scalar> check_gain;
            const Matrix<Scalar> image = riccati_map(P, check_gain);
            out.residual = (image - P).norm() / P.norm();
            if (out.residual > Scalar(1e-9)) {
                throw NumericalError("Riccati fixed point residual above tolerance");
            }
            out.P = P;
            out.gain = check_gain;
            out.value = P.trace();
            return out;
        }
    }
    throw NotStabilizableError("Riccati iteration did not converge: pair not stabilizable at this gamma");
}

// Largest discount certified safe for K by the trace bound:
//   gamma' = (1 + s / (J - s)) gamma,  s = sigma_min(Q + K^T R K), J = Tr(P).
// Returns +inf when J == s (only possible for n = 1 with a dead-beat loop).
template <typename Scalar>
[[nodiscard]] Scalar exact_discount_step(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                         const Matrix<Scalar>& K, Scalar gamma) {
    const Scalar J = closed_form_cost(sys, cost, K, gamma);
    const Scalar s = cost.min_stage_eigenvalue(K);
    if (!(J > s)) {
        return std::numeric_limits<Scalar>::infinity();
    }
    return (Scalar(1) + s / (J - s)) * gamma;
}

// |J_gamma(K; A, B) - J_1(K; sqrt(gamma) A, sqrt(gamma) B)|
template <typename Scalar>
[[nodiscard]] Scalar scaling_identity_check(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                            const Matrix<Scalar>& K, Scalar gamma) {
    const Scalar lhs = closed_form_cost(sys, cost, K, gamma);
    if (gamma == Scalar(1)) {
        return std::abs(lhs - closed_form_cost(sys, cost, K, gamma));
    }
    const Scalar s = std::sqrt(gamma);
    const LinearSystem<Scalar> scaled(s * sys.A(), s * sys.B());
    return std::abs(lhs - closed_form_cost(scaled, cost, K, Scalar(1)));
}

} // namespace dpg
