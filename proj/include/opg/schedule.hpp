// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cmath>
#include <cstddef>
#include <string_view>

#include "opg/errors.hpp"

namespace opg {

/// Dynamic proposal constraint: a decreasing sigmoid of training progress
/// that sets how many proposals the active set may hold.
///
///   gamma(theta) = 1 / (1 + exp(alpha * (omega * theta - beta)))
///   n_v(theta)   = max(floor(gamma(theta) * |P|), n_min)
///
/// alpha sets the width of the transition, beta / omega its midpoint.
struct ScheduleConfig {
    double alpha = 10.0;
    double beta = 0.8;
    double omega = 1.36;
    std::size_t n_min = 128;

    void validate() const {
        if (!(alpha > 0.0) || !std::isfinite(alpha)) throw DomainError("schedule: alpha must be > 0");
        if (!std::isfinite(beta)) throw DomainError("schedule: beta must be finite");
        if (!(omega > 0.0) || !std::isfinite(omega)) throw DomainError("schedule: omega must be > 0");
        if (n_min < 1) throw DomainError("schedule: n_min must be >= 1");
    }
};

/// Training progress in [0, 1]: step / total_steps.
struct ScheduleState {
    double theta = 0.0;

    static ScheduleState at(std::size_t step, std::size_t total_steps) {
        if (total_steps == 0) throw DomainError("schedule: total_steps must be positive");
        if (step > total_steps) throw DomainError("schedule: step past total_steps");
        return {static_cast<double>(step) / static_cast<double>(total_steps)};
    }

    void validate() const {
        if (!(theta >= 0.0 && theta <= 1.0)) throw DomainError("schedule: theta must lie in [0, 1]");
    }
};

enum class Stage { WarmUp, Transition, Stable };

inline std::string_view to_string(Stage s) {
    switch (s) {
        case Stage::WarmUp: return "warmup";
        case Stage::Transition: return "transition";
        case Stage::Stable: return "stable";
    }
    return "?";
}

/// Default stage tolerances: warm-up while gamma >= 1 - 0.05, stable once gamma <= 0.05.
inline constexpr double kDefaultWarmFrac = 0.05;
inline constexpr double kDefaultStableFrac = 0.05;

inline double gamma(const ScheduleConfig& cfg, ScheduleState s) {
    cfg.validate();
    s.validate();
    const double z = cfg.alpha * (cfg.omega * s.theta - cfg.beta);
    // Both branches are the same logistic; pick the one that cannot overflow.
    if (z >= 0.0) {
        const double e = std::exp(-z);
        return e / (1.0 + e);
    }
    return 1.0 / (1.0 + std::exp(z));
}

inline std::size_t n_v(const ScheduleConfig& cfg, ScheduleState s, std::size_t total_proposals) {
    if (total_proposals == 0) throw DomainError("n_v: total_proposals must be positive");
    const double budget = std::floor(gamma(cfg, s) * static_cast<double>(total_proposals));
    const auto scaled = static_cast<std::size_t>(budget);
    return scaled > cfg.n_min ? scaled : cfg.n_min;
}

inline Stage stage_of(const ScheduleConfig& cfg, ScheduleState s,
                      double warm_frac = kDefaultWarmFrac, double stable_frac = kDefaultStableFrac) {
    if (!(warm_frac > 0.0) || !(stable_frac > 0.0) || !(warm_frac + stable_frac < 1.0))
        throw DomainError("stage_of: need 0 < warm_frac, 0 < stable_frac, warm_frac + stable_frac < 1");
    const double g = gamma(cfg, s);
    if (g >= 1.0 - warm_frac) return Stage::WarmUp;
    if (g <= stable_frac) return Stage::Stable;
    return Stage::Transition;
}

struct Occupancy {
    double warm_share = 0.0;
    double transition_share = 0.0;
    double stable_share = 0.0;
};

/// Fraction of `steps` evenly spaced theta values in [0, 1] (both ends
/// included) that fall in each stage.
inline Occupancy occupancy(const ScheduleConfig& cfg, std::size_t steps,
                           double warm_frac = kDefaultWarmFrac, double stable_frac = kDefaultStableFrac) {
    if (steps < 3) throw DomainError("occupancy: steps must be >= 3");
    std::size_t counts[3] = {0, 0, 0};
    for (std::size_t i = 0; i < steps; ++i) {
        const double theta = static_cast<double>(i) / static_cast<double>(steps - 1);
        ++counts[static_cast<int>(stage_of(cfg, {theta}, warm_frac, stable_frac))];
    }
    const double n = static_cast<double>(steps);
    return {counts[0] / n, counts[1] / n, counts[2] / n};
}

}  // namespace opg
