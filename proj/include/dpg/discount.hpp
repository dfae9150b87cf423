#pragma once

// Discount-factor growth rules.

#include "dpg/types.hpp"

#include <cmath>
#include <sstream>

namespace dpg {

// alpha = s / (2 J_hat - s), s = sigma_min(Q + K^T R K). The factor 2 absorbs
// an estimate anywhere in [J/2, 3J/2].
template <typename Scalar>
[[nodiscard]] Scalar update_rate(Scalar j_hat, Scalar sigma_term) {
    if (!std::isfinite(j_hat)) {
        throw EstimateError("update_rate: cost estimate is not finite");
    }
    if (!(sigma_term > 0)) {
        throw DomainError("update_rate: sigma term must be positive");
    }
    const Scalar denom = Scalar(2) * j_hat - sigma_term;
    if (!(denom > 0)) {
        std::ostringstream msg;
        msg << "update_rate: estimate below lower bound (J_hat = " << j_hat << ", sigma/2 = " << sigma_term / 2
            << ")";
        throw EstimateError(msg.str());
    }
    return sigma_term / denom;
}

// Additive-noise form: (1/gamma - 1) J_add plays the role of J.
template <typename Scalar>
[[nodiscard]] Scalar update_rate_noise(Scalar j_add_hat, Scalar sigma_term, Scalar gamma) {
    if (!(gamma > 0) || !(gamma < 1)) {
        throw DomainError("update_rate_noise: gamma must lie in (0, 1)");
    }
    return update_rate((Scalar(1) / gamma - Scalar(1)) * j_add_hat, sigma_term);
}

// Per-iteration floor on alpha when every cost stays below J_bar:
//   sigma_Q / (3 J_bar - sigma_Q).
template <typename Scalar>
[[nodiscard]] Scalar lower_bound_rate(Scalar sigma_q, Scalar jbar) {
    if (!(sigma_q > 0) || !(jbar > sigma_q)) {
        throw DomainError("lower_bound_rate: need J_bar > sigma_Q > 0");
    }
    return sigma_q / (Scalar(3) * jbar - sigma_q);
}

// Additive-noise floor: sigma_Q / (2 (1/gamma0 - 1) J_bar - sigma_Q).
template <typename Scalar>
[[nodiscard]] Scalar lower_bound_rate_noise(Scalar sigma_q, Scalar jbar, Scalar gamma0) {
    if (!(gamma0 > 0) || !(gamma0 < 1)) {
        throw DomainError("lower_bound_rate_noise: gamma0 must lie in (0, 1)");
    }
    const Scalar denom = Scalar(2) * (Scalar(1) / gamma0 - Scalar(1)) * jbar - sigma_q;
    if (!(sigma_q > 0) || !(denom > 0)) {
        throw DomainError("lower_bound_rate_noise: denominator must be positive");
    }
    return sigma_q / denom;
}

template <typename Scalar = double>
struct DiscountStep {
    Scalar gamma_old = 0;
    Scalar alpha = 0;
    Scalar gamma_new = 0;
    Scalar sigma_term = 0;
    Scalar j_hat_used = 0;
};

template <typename Scalar>
[[nodiscard]] DiscountStep<Scalar> make_discount_step(Scalar gamma_old, Scalar j_hat, Scalar sigma_term,
                                                      Setting setting = Setting::InitialState) {
    if (!(gamma_old > 0) || !(gamma_old < 1)) {
        throw DomainError("discount step: gamma must lie in (0, 1)");
    }
    DiscountStep<Scalar> step;
    step.gamma_old = gamma_old;
    step.sigma_term = sigma_term;
    step.j_hat_used = j_hat;
    step.alpha = setting == Setting::InitialState ? update_rate(j_hat, sigma_term)
                                                  : update_rate_noise(j_hat, sigma_term, gamma_old);
    step.gamma_new = (Scalar(1) + step.alpha) * gamma_old;
    return step;
}

} // namespace dpg
