#pragma once

#include "iiv/data_model.hpp"

#include <algorithm>

namespace iiv {

enum class Sign { plus, minus };
enum class DeltaMode { sdc, lei };
enum class Side { lower, upper };

/// Weighting parameters. gamma = (1 - beta) mu is the weight on the
/// less-endogenous-instrument constraint; mu is ignored in SDC mode.
struct DeltaParams {
    double alpha = 0.0;
    double beta = 0.0;
    double mu = 0.0;
    Sign sign = Sign::plus;
    DeltaMode mode = DeltaMode::sdc;
};

/// delta = 1 +/- alpha * (mixture of centered D and Z).
///   SDC: beta d~ + (1 - beta) z~
///   LEI: (1 - beta) mu (d~ sd_z - z~ sd_d) + beta d~ + (1 - beta)(1 - mu) z~
/// With mu = 0 the LEI expression evaluates bit-for-bit to the SDC one.
inline double delta(const DeltaParams& p, double d_tilde, double z_tilde, double sd_d,
                    double sd_z) noexcept {
    double mix = 0.0;
    if (p.mode == DeltaMode::sdc) {
        mix = p.beta * d_tilde + (1.0 - p.beta) * z_tilde;
    } else {
        mix = (1.0 - p.beta) * p.mu * (d_tilde * sd_z - z_tilde * sd_d) + p.beta * d_tilde +
              (1.0 - p.beta) * (1.0 - p.mu) * z_tilde;
    }
    return p.sign == Sign::plus ? 1.0 + p.alpha * mix : 1.0 - p.alpha * mix;
}

namespace detail {
inline double pick(Side side, double a, double b) noexcept {
    return side == Side::lower ? std::min(a, b) : std::max(a, b);
}
}  // namespace detail

/// Bounded-support kernel: factual units contribute delta * y, the rest the
/// worst case of delta times the target level's support endpoints.
inline double f_kernel(Side side, double y, int d, int target, double delta_i,
                       const SupportBounds& supports) noexcept {
    if (d == target) return delta_i * y;
    const auto t = static_cast<std::size_t>(target);
    return detail::pick(side, delta_i * supports.lo[t], delta_i * supports.hi[t]);
}

/// Monotone-response kernel: above the target the observed outcome caps the
/// counterfactual from above, below the target it floors it.
inline double m_kernel(Side side, double y, int d, int target, double delta_i,
                       const SupportBounds& supports) noexcept {
    if (d == target) return delta_i * y;
    const auto t = static_cast<std::size_t>(target);
    if (d > target) return detail::pick(side, delta_i * supports.lo[t], delta_i * y);
    return detail::pick(side, delta_i * supports.hi[t], delta_i * y);
}

}  // namespace iiv
