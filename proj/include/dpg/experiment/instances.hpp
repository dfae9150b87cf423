#pragma once

// Random problem instances for property checks.

#include "dpg/linear_system.hpp"
#include "dpg/oracle.hpp"
#include "dpg/rng.hpp"

#include <random>

namespace dpg::experiment {

struct StableInstance {
    LinearSystem<double> system;
    CostModel<double> cost;
    Matrix<double> K;
    double gamma;
    double rho;  // rho(A - B K)
};

// Random (A, B, Q, R, K) with n in [n_min, n_max], m in [1, n], and gamma
// placed so that sqrt(gamma) rho(A - BK) is uniform in [lo, hi]; gamma is
// capped at 1.
inline StableInstance random_stable_instance(Rng& rng, int n_min = 2, int n_max = 5, double lo = 0.05,
                                             double hi = 0.95) {
    std::uniform_int_distribution<int> dim(n_min, n_max);
    const int n = dim(rng);
    const int m = std::uniform_int_distribution<int>(1, n)(rng);
    std::normal_distribution<double> normal;
    auto gauss = [&](int r, int c, double s) {
        Matrix<double> M(r, c);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < c; ++j) {
                M(i, j) = s * normal(rng);
            }
        }
        return M;
    };
    Matrix<double> A = gauss(n, n, 1.0 / std::sqrt(double(n)));
    Matrix<double> B = gauss(n, m, 1.0);
    const Matrix<double> Lq = gauss(n, n, 0.5);
    const Matrix<double> Lr = gauss(m, m, 0.5);
    Matrix<double> Q = Lq * Lq.transpose() + Matrix<double>::Identity(n, n) * 0.5;
    Matrix<double> R = Lr * Lr.transpose() + Matrix<double>::Identity(m, m) * 0.5;
    Matrix<double> K = gauss(m, n, 0.3);
    LinearSystem<double> sys(std::move(A), std::move(B));
    const double rho = spectral_radius<double>(sys.closed_loop(K));
    const double target = std::uniform_real_distribution<double>(lo, hi)(rng);
    const double gamma = std::min(1.0, (target / rho) * (target / rho));
    return {std::move(sys), CostModel<double>(std::move(Q), std::move(R)), std::move(K), gamma, rho};
}

// Random system with A ~ N(0, a_std^2) entries scaled so rho(A) is in
// [rho_lo, rho_hi], B ~ N(0, 1). Controllable with probability one.
inline LinearSystem<double> random_system_with_radius(Rng& rng, int n, int m, double rho_lo, double rho_hi) {
    std::normal_distribution<double> normal;
    Matrix<double> A(n, n);
    Matrix<double> B(n, m);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            A(i, j) = normal(rng);
        }
        for (int j = 0; j < m; ++j) {
            B(i, j) = normal(rng);
        }
    }
    const double target = std::uniform_real_distribution<double>(rho_lo, rho_hi)(rng);
    A *= target / spectral_radius<double>(A);
    return {std::move(A), std::move(B)};
}

} // namespace dpg::experiment
