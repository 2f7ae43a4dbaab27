// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "cisprobe/error.hpp"

namespace cisprobe {

inline constexpr double kMaxTimestep = 1000.0;

/// Position on the normalized diffusion-time axis, 1 = pure noise, 0 = clean.
struct NormalizedTime {
    double tau = 0.0;

    auto operator<=>(const NormalizedTime&) const = default;
};

/// Discrete inference schedule t_k = 1000 - k * (1000 / T), k = 0..T.
///
/// Switch index k means "the first k steps ran under the first prompt", so
/// k = 0 is the concept prompt from the start and k = T is never switched.
class TimestepGrid {
public:
    explicit TimestepGrid(std::size_t steps) : steps_(steps) {
        if (steps == 0) throw ArgumentError("timestep grid needs at least one step");
        delta_ = kMaxTimestep / static_cast<double>(steps);
        timesteps_.reserve(steps + 1);
        // Written as 1000 (T - k) / T so both endpoints are exact.
        for (std::size_t k = 0; k <= steps; ++k) {
            timesteps_.push_back(kMaxTimestep * static_cast<double>(steps - k) / static_cast<double>(steps));
        }
    }

    std::size_t steps() const noexcept { return steps_; }
    std::size_t size() const noexcept { return timesteps_.size(); }
    double delta() const noexcept { return delta_; }
    const std::vector<double>& timesteps() const noexcept { return timesteps_; }

    double timestep(std::size_t k) const {
        if (k > steps_) throw ArgumentError("step index " + std::to_string(k) + " outside grid of " + std::to_string(steps_) + " steps");
        return timesteps_[k];
    }

    double tau(std::size_t k) const { return timestep(k) / kMaxTimestep; }

    /// Grid spacing on the normalized axis.
    double delta_tau() const noexcept { return delta_ / kMaxTimestep; }

    bool operator==(const TimestepGrid& other) const { return steps_ == other.steps_; }

private:
    std::size_t steps_;
    double delta_ = 0.0;
    std::vector<double> timesteps_;
};

inline TimestepGrid build_grid(std::size_t steps) { return TimestepGrid(steps); }

inline NormalizedTime normalize(double t) {
    if (!(t >= 0.0 && t <= kMaxTimestep)) throw ArgumentError("timestep " + std::to_string(t) + " outside [0, 1000]");
    return {t / kMaxTimestep};
}

/// Step whose normalized time is closest to `tau`; ties go to the smaller k.
inline std::size_t nearest_step(const TimestepGrid& grid, NormalizedTime tau) {
    if (!(tau.tau >= 0.0 && tau.tau <= 1.0)) throw ArgumentError("tau outside [0, 1]");
    constexpr double kTieTolerance = 1e-12;
    std::size_t best = 0;
    double best_distance = std::abs(grid.tau(0) - tau.tau);
    for (std::size_t k = 1; k <= grid.steps(); ++k) {
        const double d = std::abs(grid.tau(k) - tau.tau);
        if (d < best_distance - kTieTolerance) {
            best = k;
            best_distance = d;
        }
    }
    return best;
}

}  // namespace cisprobe
