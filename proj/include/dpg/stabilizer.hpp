#pragma once

// Discount policy gradient: alternate a discount-factor increase computed from
// a cost estimate with gradient steps on the discounted cost, until the
// discount reaches 1.

#include "dpg/discount.hpp"
#include "dpg/linear_system.hpp"
#include "dpg/oracle.hpp"
#include "dpg/rng.hpp"
#include "dpg/rollout.hpp"
#include "dpg/types.hpp"
#include "dpg/zeroth_order.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace dpg {

enum class Mode { ModelFree, ModelBased };

// How the model-based variant turns the exact cost into a rate:
// ExactBound uses alpha = s / (J - s) (the largest certified step, shrunk by
// rate_margin); EstimateRule uses the model-free formula s / (2J - s).
enum class ModelBasedRule { ExactBound, EstimateRule };

// Fixed: K+ = K - eta G. Backtracking (model-based only): start from eta and
// halve until K+ stays stabilizable at the new discount and the exact cost
// drops by at least armijo * step * ||G||^2.
enum class StepControl { Fixed, Backtracking };

template <typename Scalar = double>
struct JbarPolicy {
    enum class Kind { Fixed, AutoFromFirstEstimate };
    Kind kind = Kind::AutoFromFirstEstimate;
    Scalar value = 2;  // the fixed J_bar, or the multiplier on the first estimate

    [[nodiscard]] static JbarPolicy fixed(Scalar v) { return {Kind::Fixed, v}; }
    [[nodiscard]] static JbarPolicy auto_from_first(Scalar c) { return {Kind::AutoFromFirstEstimate, c}; }
};

template <typename Scalar = double>
struct StabilizerConfig {
    Scalar gamma0 = Scalar(1e-3);
    Scalar eta = Scalar(1e-3);
    int inner_steps = 1;
    bool early_exit = false;  // stop the inner loop once an estimate falls below J_bar
    JbarPolicy<Scalar> jbar;
    Index N = 50;
    int tau = 100;
    GradientConfig<Scalar> grad;
    Setting setting = Setting::InitialState;
    std::optional<BoundedDistribution<Scalar>> dist;  // unit sphere of dimension n when unset
    int max_outer_iterations = 5000;
    int max_retries = 1;
    std::uint64_t seed = 0;
    Mode mode = Mode::ModelFree;
    ModelBasedRule model_based_rule = ModelBasedRule::ExactBound;
    Scalar rate_margin = Scalar(1e-3);
    StepControl step_control = StepControl::Fixed;
    Scalar armijo = Scalar(1e-4);
    int snapshot_every = 10;

    void validate() const {
        if (!(gamma0 > 0) || !(gamma0 < 1)) {
            throw DomainError("config: gamma0 must lie in (0, 1)");
        }
        if (!(eta >= 0)) {
            throw DomainError("config: eta must be nonnegative");
        }
        if (inner_steps < 1) {
            throw DomainError("config: inner_steps must be at least 1");
        }
        if (N < 1 || tau < 1) {
            throw DomainError("config: N and tau must be positive");
        }
        grad.validate();
        if (max_outer_iterations < 1 || max_retries < 0) {
            throw DomainError("config: max_outer_iterations must be positive, max_retries nonnegative");
        }
        if (jbar.kind == JbarPolicy<Scalar>::Kind::AutoFromFirstEstimate && !(jbar.value > 1)) {
            throw DomainError("config: automatic J_bar multiplier must exceed 1");
        }
        if (jbar.kind == JbarPolicy<Scalar>::Kind::Fixed && !(jbar.value > 0)) {
            throw DomainError("config: fixed J_bar must be positive");
        }
        if (!(rate_margin >= 0) || !(rate_margin < 1)) {
            throw DomainError("config: rate_margin must lie in [0, 1)");
        }
        if (snapshot_every < 1) {
            throw DomainError("config: snapshot_every must be at least 1");
        }
        if (step_control == StepControl::Backtracking && mode != Mode::ModelBased) {
            throw DomainError("config: backtracking step control needs exact costs (mode = model_based)");
        }
        if (!(armijo >= 0) || !(armijo < 1)) {
            throw DomainError("config: armijo must lie in [0, 1)");
        }
    }

    [[nodiscard]] BoundedDistribution<Scalar> distribution(Index n) const {
        if (dist) {
            if (dist->dimension() != n) {
                throw DimensionError("config: distribution dimension must equal n");
            }
            return *dist;
        }
        return BoundedDistribution<Scalar>::unit_sphere(n);
    }
};

template <typename Scalar = double>
struct IterationRecord {
    int i = 0;
    Scalar gamma = 0;       // gamma^i, the discount the estimate was taken at
    Scalar alpha = 0;
    Scalar gamma_next = 0;  // (1 + alpha) gamma^i
    Scalar j_hat = 0;
    Scalar sigma_term = 0;
    Scalar grad_norm = std::numeric_limits<Scalar>::quiet_NaN();  // NaN on the terminal iteration
    Scalar step = std::numeric_limits<Scalar>::quiet_NaN();       // step size of the last inner step
    std::optional<Matrix<Scalar>> K;  // K^i snapshot
    double wall_ms = 0;
    std::optional<Scalar> rho_closed_loop;  // rho(A - B K^i), ground truth only
    std::optional<Scalar> j_exact;          // exact cost of K^i at gamma^i, ground truth only
    Index rollouts = 0;
    int retries = 0;
};

template <typename Scalar = double>
struct StabilizerState {
    Matrix<Scalar> K;
    Scalar gamma = 0;
    int iteration = 0;
    std::vector<IterationRecord<Scalar>> history;
};

enum class Outcome { Stabilized, Failed };

template <typename Scalar = double>
struct RunResult {
    Outcome outcome = Outcome::Failed;
    std::string reason;
    Matrix<Scalar> K;
    StabilizerState<Scalar> state;
    Scalar final_gamma = 0;  // gamma^{i+1} at termination (>= 1 on success)
    Scalar jbar = 0;
    Index rollouts = 0;        // every simulated trajectory, 2 per perturbation pair
    Index rollouts_n_plus_m = 0;  // N per evaluation plus M per gradient estimate
    int retries = 0;

    [[nodiscard]] bool stabilized() const noexcept { return outcome == Outcome::Stabilized; }
    [[nodiscard]] int iterations_used() const noexcept { return static_cast<int>(state.history.size()); }
};

// Called once per outer iteration with the finished record and the policy K^i
// it describes; the harness uses it to attach ground truth.
template <typename Scalar>
using IterationObserver = std::function<void(IterationRecord<Scalar>&, const Matrix<Scalar>&)>;

template <typename Scalar>
[[nodiscard]] Matrix<Scalar> pg_step(const Matrix<Scalar>& K, const Matrix<Scalar>& G, Scalar eta) {
    if (G.rows() != K.rows() || G.cols() != K.cols()) {
        throw DimensionError("pg_step: gradient shape must match the gain");
    }
    if (eta == Scalar(0)) {
        return K;
    }
    return K - eta * G;
}

template <typename Scalar = double>
struct PgStepResult {
    Matrix<Scalar> K;
    GradientEstimate<Scalar> estimate;
};

// K+ = K - eta * grad_hat J_gamma(K) with a fresh two-point estimate.
template <typename Scalar>
[[nodiscard]] PgStepResult<Scalar> pg_step(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                           const Matrix<Scalar>& K, Scalar gamma, Scalar eta,
                                           const GradientConfig<Scalar>& grad,
                                           const BoundedDistribution<Scalar>& dist, Setting setting,
                                           std::uint64_t seed) {
    auto est = estimate_gradient(sim, cost, K, gamma, grad, dist, setting, seed);
    if (!est.usable()) {
        std::ostringstream msg;
        msg << "inner step failed: perturbed rollout diverged (pair " << est.divergence->first << ", sign "
            << (est.divergence->second > 0 ? '+' : '-') << ", seed " << seed << ")";
        throw EstimateError(msg.str());
    }
    Matrix<Scalar> next = pg_step(K, est.G, eta);
    return {std::move(next), std::move(est)};
}

template <typename Scalar>
[[nodiscard]] Scalar choose_jbar(Scalar first_estimate, const JbarPolicy<Scalar>& policy) {
    if (policy.kind == JbarPolicy<Scalar>::Kind::Fixed) {
        return policy.value;
    }
    if (!std::isfinite(first_estimate)) {
        throw EstimateError("choose_jbar: first estimate is not finite");
    }
    return policy.value * first_estimate;
}

template <typename Scalar = double>
struct IterationBudget {
    int exact = 1;            // ceil(log(1/gamma0) / log(1 + floor))
    Scalar linearized = 0;    // (3 J_bar - sigma_Q) / sigma_Q * log(1/gamma0)
};

template <typename Scalar>
[[nodiscard]] IterationBudget<Scalar> iteration_budget(Scalar sigma_q, Scalar jbar, Scalar gamma0) {
    if (!(gamma0 > 0) || !(gamma0 < 1)) {
        throw DomainError("iteration_budget: gamma0 must lie in (0, 1)");
    }
    const Scalar floor = lower_bound_rate(sigma_q, jbar);
    const Scalar log_span = std::log(Scalar(1) / gamma0);
    IterationBudget<Scalar> b;
    b.exact = std::max(1, static_cast<int>(std::ceil(log_span / std::log1p(floor) - Scalar(1e-12))));
    b.linearized = log_span / floor;
    return b;
}

namespace detail {

template <typename Scalar>
struct CostResult {
    bool ok = false;
    Scalar value = 0;
    Index rollouts = 0;
    int retries = 0;
    std::string reason;
};

template <typename Scalar>
struct GradientResult {
    bool ok = false;
    Matrix<Scalar> G;
    Index rollouts = 0;
    Index pairs = 0;
    int retries = 0;
    std::string reason;
};

// Stream labels under the run seed.
enum : std::uint64_t { kEvalStream = 0, kGradStream = 1, kEarlyExitStream = 2 };

// Estimates from rollouts; sees only the black-box simulator.
template <typename Scalar>
class SampledEvaluator {
public:
    SampledEvaluator(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost, const StabilizerConfig<Scalar>& cfg)
        : sim_(sim), cost_(cost), cfg_(cfg), dist_(cfg.distribution(sim.state_dim())) {}

    CostResult<Scalar> cost(const Matrix<Scalar>& K, Scalar gamma, std::uint64_t i, std::uint64_t stream,
                            std::uint64_t sub) const {
        CostResult<Scalar> out;
        Index N = cfg_.N;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt, N *= 2) {
            EvalConfig<Scalar> eval{N, cfg_.tau, cfg_.setting, dist_,
                                    derive_seed(cfg_.seed, {i, stream, sub, static_cast<std::uint64_t>(attempt)})};
            const auto est = estimate_cost(sim_, cost_, K, gamma, eval);
            out.rollouts += N;
            if (est.usable()) {
                out.ok = true;
                out.value = est.mean;
                return out;
            }
            out.retries += attempt < cfg_.max_retries ? 1 : 0;
            std::ostringstream msg;
            msg << est.diverged_count << " of " << N << " evaluation rollouts diverged (first at step "
                << est.first_divergence_step.value_or(-1) << ")";
            out.reason = msg.str();
        }
        return out;
    }

    GradientResult<Scalar> gradient(const Matrix<Scalar>& K, Scalar gamma, std::uint64_t i, std::uint64_t step) const {
        GradientResult<Scalar> out;
        GradientConfig<Scalar> grad = cfg_.grad;
        for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt, grad.M *= 2) {
            const auto seed = derive_seed(cfg_.seed, {i, kGradStream, step, static_cast<std::uint64_t>(attempt)});
            auto est = estimate_gradient(sim_, cost_, K, gamma, grad, dist_, cfg_.setting, seed);
            if (est.usable()) {
                out.rollouts += 2 * grad.M;
                out.pairs += grad.M;
                out.ok = true;
                out.G = std::move(est.G);
                return out;
            }
            const auto [j, sign] = *est.divergence;
            out.rollouts += 2 * j + (sign > 0 ? 1 : 2);
            out.pairs += j + 1;
            out.retries += attempt < cfg_.max_retries ? 1 : 0;
            std::ostringstream msg;
            msg << "perturbed rollout diverged (pair " << j << ", sign " << (sign > 0 ? '+' : '-') << ")";
            out.reason = msg.str();
        }
        return out;
    }

    Scalar rate(Scalar j_hat, Scalar sigma_term, Scalar gamma) const {
        return cfg_.setting == Setting::InitialState ? update_rate(j_hat, sigma_term)
                                                     : update_rate_noise(j_hat, sigma_term, gamma);
    }

private:
    const Simulator<Scalar>& sim_;
    const CostModel<Scalar>& cost_;
    const StabilizerConfig<Scalar>& cfg_;
    BoundedDistribution<Scalar> dist_;
};

// Exact costs and gradients from the oracle.
template <typename Scalar>
class ExactEvaluator {
public:
    ExactEvaluator(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost, const StabilizerConfig<Scalar>& cfg)
        : sys_(sys), cost_(cost), cfg_(cfg) {}

    CostResult<Scalar> cost(const Matrix<Scalar>& K, Scalar gamma, std::uint64_t, std::uint64_t,
                            std::uint64_t) const {
        CostResult<Scalar> out;
        try {
            out.value = setting_cost(cfg_.setting, sys_, cost_, K, gamma);
            out.ok = true;
        } catch (const UnstablePairError& e) {
            out.reason = e.what();
        }
        return out;
    }

    GradientResult<Scalar> gradient(const Matrix<Scalar>& K, Scalar gamma, std::uint64_t, std::uint64_t) const {
        GradientResult<Scalar> out;
        try {
            out.G = cost_gradient(sys_, cost_, K, gamma);
            if (cfg_.setting == Setting::AdditiveNoise) {
                out.G *= gamma / (Scalar(1) - gamma);
            }
            out.ok = true;
        } catch (const UnstablePairError& e) {
            out.reason = e.what();
        }
        return out;
    }

    Scalar rate(Scalar j, Scalar sigma_term, Scalar gamma) const {
        if (cfg_.model_based_rule == ModelBasedRule::EstimateRule) {
            return cfg_.setting == Setting::InitialState ? update_rate(j, sigma_term)
                                                         : update_rate_noise(j, sigma_term, gamma);
        }
        const Scalar J = cfg_.setting == Setting::InitialState ? j : (Scalar(1) / gamma - Scalar(1)) * j;
        if (!(J > sigma_term)) {
            return std::numeric_limits<Scalar>::infinity();
        }
        return sigma_term / (J - sigma_term) * (Scalar(1) - cfg_.rate_margin);
    }

private:
    const LinearSystem<Scalar>& sys_;
    const CostModel<Scalar>& cost_;
    const StabilizerConfig<Scalar>& cfg_;
};

template <typename Scalar, typename Evaluator>
[[nodiscard]] RunResult<Scalar> run_loop(const Evaluator& ev, Index m, Index n, const CostModel<Scalar>& cost,
                                         const StabilizerConfig<Scalar>& cfg,
                                         const IterationObserver<Scalar>& observer) {
    using Clock = std::chrono::steady_clock;
    RunResult<Scalar> res;
    StabilizerState<Scalar>& state = res.state;
    state.K = Matrix<Scalar>::Zero(m, n);
    state.gamma = cfg.gamma0;

    auto finish = [&](IterationRecord<Scalar>& rec, const Matrix<Scalar>& K_i, Clock::time_point t0) {
        rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
        if (rec.i % cfg.snapshot_every == 0) {
            rec.K = K_i;
        }
        if (observer) {
            observer(rec, K_i);
        }
        res.rollouts += rec.rollouts;
        res.retries += rec.retries;
        state.history.push_back(std::move(rec));
        state.iteration = static_cast<int>(state.history.size());
    };
    auto fail = [&](std::string reason) {
        res.outcome = Outcome::Failed;
        res.reason = std::move(reason);
        res.K = state.K;
        return res;
    };

    for (int i = 0; i < cfg.max_outer_iterations; ++i) {
        const auto t0 = Clock::now();
        const auto label = static_cast<std::uint64_t>(i);
        IterationRecord<Scalar> rec;
        rec.i = i;
        rec.gamma = state.gamma;

        const auto c = ev.cost(state.K, state.gamma, label, kEvalStream, 0);
        rec.rollouts += c.rollouts;
        res.rollouts_n_plus_m += c.rollouts;
        rec.retries += c.retries;
        if (!c.ok) {
            rec.j_hat = std::numeric_limits<Scalar>::infinity();
            rec.alpha = std::numeric_limits<Scalar>::quiet_NaN();
            rec.gamma_next = std::numeric_limits<Scalar>::quiet_NaN();
            const Matrix<Scalar> K_i = state.K;
            finish(rec, K_i, t0);
            std::ostringstream msg;
            msg << "cost evaluation failed at iteration " << i << ": " << c.reason;
            if (i == 0) {
                msg << "; the initial discount gamma0 = " << cfg.gamma0 << " is likely too large";
            }
            return fail(msg.str());
        }
        rec.j_hat = c.value;
        if (i == 0) {
            res.jbar = choose_jbar(c.value, cfg.jbar);
        }
        rec.sigma_term = cost.min_stage_eigenvalue(state.K);
        try {
            rec.alpha = ev.rate(c.value, rec.sigma_term, state.gamma);
        } catch (const EstimateError& e) {
            rec.alpha = std::numeric_limits<Scalar>::quiet_NaN();
            rec.gamma_next = std::numeric_limits<Scalar>::quiet_NaN();
            const Matrix<Scalar> K_i = state.K;
            finish(rec, K_i, t0);
            return fail(std::string("discount update failed at iteration ") + std::to_string(i) + ": " + e.what());
        }
        rec.gamma_next = (Scalar(1) + rec.alpha) * state.gamma;

        if (rec.gamma_next >= Scalar(1)) {
            const Matrix<Scalar> K_i = state.K;
            rec.K = K_i;
            finish(rec, K_i, t0);
            res.outcome = Outcome::Stabilized;
            res.K = state.K;
            res.final_gamma = state.history.back().gamma_next;
            return res;
        }

        const Matrix<Scalar> K_i = state.K;
        Matrix<Scalar> K = state.K;
        for (int s = 0; s < cfg.inner_steps; ++s) {
            const auto g = ev.gradient(K, rec.gamma_next, label, static_cast<std::uint64_t>(s));
            rec.rollouts += g.rollouts;
            res.rollouts_n_plus_m += g.pairs;
            rec.retries += g.retries;
            if (!g.ok) {
                finish(rec, K_i, t0);
                std::ostringstream msg;
                msg << "gradient estimate failed at iteration " << i << ", inner step " << s << ": " << g.reason;
                return fail(msg.str());
            }
            rec.grad_norm = g.G.norm();
            if (cfg.step_control == StepControl::Backtracking) {
                const auto base = ev.cost(K, rec.gamma_next, label, kEarlyExitStream, static_cast<std::uint64_t>(s));
                if (!base.ok) {
                    finish(rec, K_i, t0);
                    return fail("backtracking failed at iteration " + std::to_string(i) + ": " + base.reason);
                }
                const Scalar decrease = cfg.armijo * g.G.squaredNorm();
                Scalar step = cfg.eta;
                bool accepted = false;
                for (int halving = 0; halving < 60 && !accepted; ++halving, step /= 2) {
                    Matrix<Scalar> trial = pg_step(K, g.G, step);
                    const auto c = ev.cost(trial, rec.gamma_next, label, kEarlyExitStream, static_cast<std::uint64_t>(s));
                    if (c.ok && c.value <= base.value - step * decrease) {
                        K = std::move(trial);
                        rec.step = step;
                        accepted = true;
                    }
                }
                if (!accepted) {
                    finish(rec, K_i, t0);
                    return fail("backtracking found no decrease at iteration " + std::to_string(i));
                }
            } else {
                K = pg_step(K, g.G, cfg.eta);
                rec.step = cfg.eta;
            }
            if (cfg.early_exit && s + 1 < cfg.inner_steps) {
                const auto e = ev.cost(K, rec.gamma_next, label, kEarlyExitStream, static_cast<std::uint64_t>(s));
                rec.rollouts += e.rollouts;
                res.rollouts_n_plus_m += e.rollouts;
                rec.retries += e.retries;
                if (e.ok && e.value < res.jbar) {
                    break;
                }
            }
        }
        finish(rec, K_i, t0);
        state.K = std::move(K);
        state.gamma = state.history.back().gamma_next;
    }
    std::ostringstream msg;
    msg << "maximum outer iterations (" << cfg.max_outer_iterations << ") exceeded at gamma = " << state.gamma;
    return fail(msg.str());
}

} // namespace detail

// Model-free run: only rollouts of the black-box plant are used.
template <typename Scalar>
[[nodiscard]] RunResult<Scalar> run(const Simulator<Scalar>& sim, const CostModel<Scalar>& cost,
                                    const StabilizerConfig<Scalar>& cfg, const std::type_identity_t<IterationObserver<Scalar>>& observer = {}) {
    cfg.validate();
    if (cost.state_dim() != sim.state_dim() || cost.input_dim() != sim.input_dim()) {
        throw DimensionError("run: cost model does not match the plant");
    }
    const detail::SampledEvaluator<Scalar> ev(sim, cost, cfg);
    return detail::run_loop(ev, sim.input_dim(), sim.state_dim(), cost, cfg, observer);
}

// Model-based run: exact closed-form costs and gradients. Records the true
// closed-loop spectral radius and exact cost every iteration.
template <typename Scalar>
[[nodiscard]] RunResult<Scalar> run_model_based(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                                const StabilizerConfig<Scalar>& cfg,
                                                const std::type_identity_t<IterationObserver<Scalar>>& observer = {}) {
    cfg.validate();
    cost.check_system(sys);
    const detail::ExactEvaluator<Scalar> ev(sys, cost, cfg);
    auto with_truth = [&](IterationRecord<Scalar>& rec, const Matrix<Scalar>& K) {
        rec.rho_closed_loop = spectral_radius<Scalar>(sys.closed_loop(K));
        rec.j_exact = rec.j_hat;
        if (observer) {
            observer(rec, K);
        }
    };
    return detail::run_loop(ev, sys.m(), sys.n(), cost, cfg, IterationObserver<Scalar>(with_truth));
}

// Harness entry point with ground truth available: validates gamma0 against
// rho(A), dispatches on cfg.mode, and attaches rho(A - B K^i) and the exact
// cost to every record. The model-free loop itself still sees only a
// Simulator.
template <typename Scalar>
[[nodiscard]] RunResult<Scalar> run(const LinearSystem<Scalar>& sys, const CostModel<Scalar>& cost,
                                    const StabilizerConfig<Scalar>& cfg, const std::type_identity_t<IterationObserver<Scalar>>& observer = {}) {
    cfg.validate();
    cost.check_system(sys);
    const Scalar rho_open = spectral_radius<Scalar>(sys.A());
    if (!(std::sqrt(cfg.gamma0) * rho_open < 1)) {
        RunResult<Scalar> res;
        res.outcome = Outcome::Failed;
        std::ostringstream msg;
        msg << "initial discount gamma0 = " << cfg.gamma0 << " is too large: sqrt(gamma0)*rho(A) = "
            << std::sqrt(cfg.gamma0) * rho_open << " >= 1 (need gamma0 < " << 1 / (rho_open * rho_open) << ")";
        res.reason = msg.str();
        res.K = Matrix<Scalar>::Zero(sys.m(), sys.n());
        res.state.K = res.K;
        res.state.gamma = cfg.gamma0;
        return res;
    }
    if (cfg.mode == Mode::ModelBased) {
        return run_model_based(sys, cost, cfg, observer);
    }
    auto with_truth = [&](IterationRecord<Scalar>& rec, const Matrix<Scalar>& K) {
        rec.rho_closed_loop = spectral_radius<Scalar>(sys.closed_loop(K));
        try {
            rec.j_exact = setting_cost(cfg.setting, sys, cost, K, rec.gamma);
        } catch (const UnstablePairError&) {
            rec.j_exact.reset();
        }
        if (observer) {
            observer(rec, K);
        }
    };
    const Simulator<Scalar> sim(sys);
    return run(sim, cost, cfg, IterationObserver<Scalar>(with_truth));
}

} // namespace dpg
