#pragma once

// Two-point zeroth-order gradient estimation of J_gamma(K).

#include "dpg/linear_system.hpp"
#include "dpg/oracle.hpp"
#include "dpg/rng.hpp"
#include "dpg/rollout.hpp"
#include "dpg/types.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace dpg {

// Uniform draw from the sphere of radius sqrt(mn) in R^{m x n}: a standard
// Gaussian matrix (filled row-major) rescaled to Frobenius norm sqrt(mn).
template <typename Scalar, typename Generator>
[[nodiscard]] Matrix<Scalar> sample_sphere_perturbation(Index m, Index n, Generator& gen) {
    if (m < 1 || n < 1) {
        throw DimensionError("sample_sphere_perturbation: m and n must be positive");
    }
    std::normal_distribution<Scalar> normal;
    Matrix<Scalar> U(m, n);
    Scalar norm = 0;
    do {
        for (Index i = 0; i < m; ++i) {
            for (Index j = 0; j < n; ++j) {
                U(i, j) = normal(gen);
            }
        }
        norm = U.norm();
    } while (norm == Scalar(0));
    return U * (std::sqrt(Scalar(m * n)) / norm);
}

template <typename Scalar = double>
struct GradientConfig {
    Scalar r = Scalar(2e-3);  // smoothing radius
    Index M = 10;             // perturbation pairs
    int tau = 100;

    void validate() const {
        if (!(r > 0) || M < 1 || tau < 1) {
            throw DomainError("GradientConfig: need r > 0, M >= 1, tau >= 1");
        }
    }
};

template <typename Scalar = double>
struct GradientEstimate {
    Matrix<Scalar> G;
    Scalar r = 0;
    Index M = 0;
    int tau = 0;
    std::uint64_t seed = 0;
    // First perturbation (j, sign) whose rollout diverged; sign is +1 for K + rU.
    std::optional<std::pair<Index, int>> divergence;

    [[nodiscard]] bool usable() const noexcept { return !divergence.has_value(); }
};

// Core of the estimator for explicit perturbations U_j and per-pair sample
// streams. Both policies K +- r U_j see the same x0 (or the same noise
// realization) drawn from sample_seeds[j]. Stops at the first divergence.
template <typename Scalar>
[[nodiscard]] GradientEstimate<Scalar> two_point_estimate(const Simulator<Scalar>& sim,
                                                          const CostModel<Scalar>& cost, const Matrix<Scalar>& K,
                                                          Scalar gamma, Scalar r, int tau, Setting setting,
                                                          const BoundedDistribution<Scalar>& dist,
                                                          std::span<const Matrix<Scalar>> perturbations,
                                                          std::span<const std::uint64_t> sample_seeds) {
    if (perturbations.size() != sample_seeds.size() || perturbations.empty()) {
        throw DimensionError("two_point_estimate: need one sample seed per perturbation");
    }
    if (!(r > 0)) {
        throw DomainError("two_point_estimate: smoothing radius must be positive");
    }
    GradientEstimate<Scalar> est;
    est.r = r;
    est.M = static_cast<Index>(perturbations.size());
    est.tau = tau;
    est.G = Matrix<Scalar>::Zero(K.rows(), K.cols());
    for (std::size_t j = 0; j < perturbations.size(); ++j) {
        const Matrix<Scalar>& U = perturbations[j];
        if (U.rows() != K.rows() || U.cols() != K.cols()) {
            throw DimensionError("two_point_estimate: perturbation shape must match the gain");
        }
        const Matrix<Scalar> plus = K + r * U;
        const Matrix<Scalar> minus = K - r * U;
        const auto v_plus = detail::sample_rollout(sim, cost, plus, gamma, tau, setting, dist, sample_seeds[j]);
        if (v_plus.diverged()) {
            est.divergence = std::pair{static_cast<Index>(j), +1};
            return est;
        }
        const auto v_minus = detail::sample_rollout(sim, cost, minus, gamma, tau, setting, dist, sample_seeds[j]);
        if (v_minus.diverged()) {
            est.divergence = std::pair{static_cast<Index>(j), -1};
            return est;
        }
        est.G += (v_plus.value - v_minus.value) * U;
    }
    est.G /= Scalar(2) * r * Scalar(est.M);
    return est;
}

// Pair j draws U_j from derive_seed(seed, {j, 0}) and its x0 / noise stream
// from derive_seed(seed, {j, 1}).
template <typename Scalar>
[[nodiscard]] GradientEstimate<Scalar> estimate_gradient(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                                         const Matrix<Scalar>& K, Scalar gamma,
                                                         const GradientConfig<Scalar>& cfg,
                                                         const BoundedDistribution<Scalar>& dist, Setting setting,
                                                         std::uint64_t seed) {
    cfg.validate();
    if (dist.dimension() != sim.state_dim()) {
        throw DimensionError("estimate_gradient: distribution dimension must equal n");
    }
    std::vector<Matrix<Scalar>> perturbations;
    std::vector<std::uint64_t> sample_seeds;
    perturbations.reserve(static_cast<std::size_t>(cfg.M));
    sample_seeds.reserve(static_cast<std::size_t>(cfg.M));
    for (Index j = 0; j < cfg.M; ++j) {
        const auto label = static_cast<std::uint64_t>(j);
        Rng rng(derive_seed(seed, {label, 0}));
        perturbations.push_back(sample_sphere_perturbation<Scalar>(K.rows(), K.cols(), rng));
        sample_seeds.push_back(derive_seed(seed, {label, 1}));
    }
    auto est = two_point_estimate<Scalar>(sim, cost, K, gamma, cfg.r, cfg.tau, setting, dist, perturbations,
                                          sample_seeds);
    est.seed = seed;
    return est;
}

} // namespace dpg
