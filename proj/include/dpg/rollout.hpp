#pragma once

// Model-free cost evaluation by simulated rollouts.

#include "dpg/linear_system.hpp"
#include "dpg/oracle.hpp"
#include "dpg/rng.hpp"
#include "dpg/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace dpg {

template <typename Scalar = double>
struct EvalConfig {
    Index N = 50;
    int tau = 100;
    Setting setting = Setting::InitialState;
    BoundedDistribution<Scalar> dist = BoundedDistribution<Scalar>::unit_sphere(1);
    std::uint64_t seed = 0;

    void validate(Index n) const {
        if (N < 1 || tau < 1) {
            throw DomainError("EvalConfig: N and tau must be positive");
        }
        if (dist.dimension() != n) {
            throw DimensionError("EvalConfig: distribution dimension must equal n");
        }
    }
};

template <typename Scalar = double>
struct RolloutCost {
    Scalar value = 0;                // +inf when diverged
    std::optional<int> diverged_at;

    [[nodiscard]] bool diverged() const noexcept { return diverged_at.has_value(); }
};

template <typename Scalar = double>
struct CostEstimate {
    Scalar mean = 0;                      // +inf when any rollout diverged
    std::vector<Scalar> per_trajectory;
    Index diverged_count = 0;
    std::optional<int> first_divergence_step;

    [[nodiscard]] bool usable() const noexcept { return diverged_count == 0 && std::isfinite(mean); }

    [[nodiscard]] Scalar sample_std() const {
        const auto n = per_trajectory.size();
        if (n < 2 || !usable()) {
            return std::numeric_limits<Scalar>::quiet_NaN();
        }
        Scalar ss = 0;
        for (Scalar v : per_trajectory) {
            ss += (v - mean) * (v - mean);
        }
        return std::sqrt(ss / Scalar(n - 1));
    }

    [[nodiscard]] Scalar standard_error() const {
        return sample_std() / std::sqrt(Scalar(per_trajectory.size()));
    }
};

// Pairwise summation in index order; the result does not depend on how the
// summands were produced.
template <typename Scalar>
[[nodiscard]] Scalar pairwise_sum(std::span<const Scalar> v) {
    if (v.size() <= 8) {
        Scalar s = 0;
        for (Scalar x : v) {
            s += x;
        }
        return s;
    }
    const std::size_t half = v.size() / 2;
    return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

// V^tau_gamma(K, x0) = sum_{t<tau} gamma^t (x_t^T Q x_t + u_t^T R u_t) along one rollout.
template <typename Scalar>
[[nodiscard]] RolloutCost<Scalar> truncated_cost(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                                 const Matrix<Scalar>& K, Scalar gamma, const Vector<Scalar>& x0,
                                                 int tau, const NoiseSpec<Scalar>* noise = nullptr) {
    if (cost.state_dim() != sim.state_dim() || cost.input_dim() != sim.input_dim()) {
        throw DimensionError("truncated_cost: cost model does not match the plant");
    }
    RolloutCost<Scalar> out;
    Scalar discount = 1;
    Scalar sum = 0;
    out.diverged_at = sim.rollout(K, x0, tau, noise, [&](int, const Vector<Scalar>& x, const Vector<Scalar>& u) {
        sum += discount * cost.stage_cost(x, u);
        discount *= gamma;
    });
    if (!out.diverged_at && !std::isfinite(sum)) {
        out.diverged_at = tau;
    }
    out.value = out.diverged_at ? std::numeric_limits<Scalar>::infinity() : sum;
    return out;
}

namespace detail {

// The rollout for sample j: x0 ~ dist from the j-th stream, or x0 = 0 with
// the j-th stream driving the noise.
template <typename Scalar>
[[nodiscard]] RolloutCost<Scalar> sample_rollout(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                                 const Matrix<Scalar>& K, Scalar gamma, int tau, Setting setting,
                                                 const BoundedDistribution<Scalar>& dist,
                                                 std::uint64_t sample_seed) {
    if (setting == Setting::InitialState) {
        Rng rng(sample_seed);
        const Vector<Scalar> x0 = dist.sample(rng);
        return truncated_cost(sim, cost, K, gamma, x0, tau);
    }
    const NoiseSpec<Scalar> noise{dist, sample_seed};
    return truncated_cost(sim, cost, K, gamma, Vector<Scalar>::Zero(sim.state_dim()).eval(), tau, &noise);
}

} // namespace detail

// Monte Carlo mean over N rollouts. Trajectory j uses the stream
// derive_seed(cfg.seed, {j}).
template <typename Scalar>
[[nodiscard]] CostEstimate<Scalar> estimate_cost(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                                 const Matrix<Scalar>& K, Scalar gamma,
                                                 const EvalConfig<Scalar>& cfg) {
    cfg.validate(sim.state_dim());
    CostEstimate<Scalar> est;
    est.per_trajectory.reserve(static_cast<std::size_t>(cfg.N));
    for (Index j = 0; j < cfg.N; ++j) {
        const auto seed = derive_seed(cfg.seed, {static_cast<std::uint64_t>(j)});
        const RolloutCost<Scalar> v =
            detail::sample_rollout(sim, cost, K, gamma, cfg.tau, cfg.setting, cfg.dist, seed);
        if (v.diverged()) {
            ++est.diverged_count;
            if (!est.first_divergence_step || *v.diverged_at < *est.first_divergence_step) {
                est.first_divergence_step = v.diverged_at;
            }
        }
        est.per_trajectory.push_back(v.value);
    }
    est.mean = est.diverged_count > 0
                   ? std::numeric_limits<Scalar>::infinity()
                   : pairwise_sum(std::span<const Scalar>(est.per_trajectory)) / Scalar(cfg.N);
    return est;
}

template <typename Scalar = double>
struct HorizonSizing {
    int tau = 1;
    Scalar contraction = 0;  // per-step decay certificate used for sizing
    bool vacuous = false;    // contraction >= 1: tau is the fallback
};

// Smallest tau >= 1 with J_upper d^2 c^tau <= eps / 2, where c is a per-step
// contraction of the discounted stage cost. Without a measured decay rate c is
// J_upper / sigma_Q, which is never below 1, so the analytic form only ever
// yields the fallback; pass the rate from probe_decay_rate to get a real size.
template <typename Scalar>
[[nodiscard]] HorizonSizing<Scalar> required_horizon(Scalar J_upper, Scalar d, Scalar sigma_q, Scalar eps,
                                                     std::optional<Scalar> decay_rate = std::nullopt,
                                                     int fallback = 100) {
    if (!(sigma_q > 0) || !(J_upper > sigma_q) || !(d > 0) || !(eps > 0)) {
        throw DomainError("required_horizon: need J_upper > sigma_Q > 0, d > 0, eps > 0");
    }
    HorizonSizing<Scalar> out;
    out.contraction = decay_rate.value_or(J_upper / sigma_q);
    if (!(out.contraction < 1) || !(out.contraction >= 0)) {
        out.vacuous = true;
        out.tau = fallback;
        return out;
    }
    if (out.contraction == 0) {
        out.tau = 1;
        return out;
    }
    const Scalar ratio = eps / (Scalar(2) * J_upper * d * d);
    const Scalar t = std::ceil(std::log(ratio) / std::log(out.contraction) - Scalar(1e-12));
    out.tau = std::max(1, static_cast<int>(std::max(Scalar(0), t)));
    return out;
}

// Per-step decay of the discounted stage cost measured on one probe rollout:
// the geometric-mean ratio over the second half of the horizon. Terms are kept
// as logs since gamma^t alone underflows long before the ratio settles.
template <typename Scalar>
[[nodiscard]] std::optional<Scalar> probe_decay_rate(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                                     const Matrix<Scalar>& K, Scalar gamma,
                                                     const Vector<Scalar>& x0, int probe_tau = 200) {
    if (!(gamma > 0)) {
        throw DomainError("probe_decay_rate: gamma must be positive");
    }
    constexpr Scalar kNone = -std::numeric_limits<Scalar>::infinity();
    const Scalar log_gamma = std::log(gamma);
    std::vector<Scalar> log_terms;
    log_terms.reserve(static_cast<std::size_t>(probe_tau));
    // an unstable open loop can escape before probe_tau while its discounted
    // terms still shrink; the terms seen up to that point are kept
    (void)sim.rollout(K, x0, probe_tau, nullptr, [&](int t, const Vector<Scalar>& x, const Vector<Scalar>& u) {
        const Scalar c = cost.stage_cost(x, u);
        log_terms.push_back(c > std::numeric_limits<Scalar>::min() ? std::log(c) + Scalar(t) * log_gamma : kNone);
    });
    if (log_terms.size() < 4) {
        return std::nullopt;
    }
    const std::size_t mid = log_terms.size() / 2;
    std::size_t last = log_terms.size() - 1;
    // stop at the first state that decayed to zero
    while (last > mid && log_terms[last] == kNone) {
        --last;
    }
    if (last <= mid || log_terms[mid] == kNone) {
        return Scalar(0);
    }
    return std::exp((log_terms[last] - log_terms[mid]) / Scalar(last - mid));
}

// Hoeffding sizing for |J_hat - J| <= J/2 with probability 1 - delta. Each
// rollout cost lies in [0, J_upper d^2]; with eps = J_est / 2,
//   N = ceil( J_upper^2 d^4 / (2 eps^2) * log(2 / delta) ).
// J_upper defaults to 2 J_est.
template <typename Scalar>
[[nodiscard]] Index required_samples(Scalar J_est, Scalar d, Scalar delta,
                                     std::optional<Scalar> J_upper = std::nullopt) {
    if (!(J_est > 0) || !(d > 0) || !(delta > 0) || !(delta < 1)) {
        throw DomainError("required_samples: need J_est > 0, d > 0, 0 < delta < 1");
    }
    const Scalar jbar = J_upper.value_or(Scalar(2) * J_est);
    const Scalar eps = J_est / Scalar(2);
    const Scalar range = jbar * d * d;
    const Scalar n = range * range / (Scalar(2) * eps * eps) * std::log(Scalar(2) / delta);
    return static_cast<Index>(std::ceil(n));
}

} // namespace dpg
