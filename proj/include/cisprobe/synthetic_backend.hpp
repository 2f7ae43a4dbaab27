// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>
#include <string>

#include "cisprobe/backend.hpp"
#include "cisprobe/taxonomy.hpp"

namespace cisprobe {

/// Desk-scale oracle backend.
///
/// Concept presence is decided symbolically and written into the image tags:
/// concept c with lock time L is present iff the prompt active at step d
/// mentions c, where d is the last step whose normalized time is still >= L.
/// For an insertion switch at tau_s this is exactly "present iff tau_s >= L",
/// and for a deletion switch "present iff tau_s < L".
///
/// Seeds may also carry a concept regardless of the prompt (structural prior,
/// `spurious_rate`). A negative prompt naming the concept with positive guidance
/// removes that spurious presence for a `negative_suppression` fraction of seeds.
/// Latent values evolve under a DDIM-style update with an ideal denoiser and
/// are decorative.
struct SyntheticBackendSpec {
    TimestepGrid grid{50};
    std::map<std::string, double> lock_tau;
    std::map<std::string, double> spurious_rate;
    double negative_suppression = 0.5;
    double guidance_scale = 7.5;
    /// Flip probability for the paired mock scorer (see score.hpp).
    double response_noise = 0.0;
    std::size_t latent_channels = 4;
    std::size_t latent_side = 8;

    void validate() const {
        for (const auto& [c, v] : lock_tau)
            if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("lock_tau for \"" + c + "\" outside [0, 1]");
        for (const auto& [c, v] : spurious_rate)
            if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("spurious_rate for \"" + c + "\" outside [0, 1]");
        if (!(negative_suppression >= 0.0 && negative_suppression <= 1.0)) throw ArgumentError("negative_suppression outside [0, 1]");
        if (!(response_noise >= 0.0 && response_noise < 0.5)) throw ArgumentError("response_noise must lie in [0, 0.5)");
        if (latent_channels < 3) throw ArgumentError("synthetic latent needs at least 3 channels");
    }
};

/// Reads the keys written by SyntheticBackend::config(); absent keys keep defaults.
inline SyntheticBackendSpec synthetic_spec_from_json(const nlohmann::json& j) {
    SyntheticBackendSpec spec;
    try {
        if (j.contains("T")) spec.grid = TimestepGrid(j.at("T").get<std::size_t>());
        if (j.contains("lock_tau")) spec.lock_tau = j.at("lock_tau").get<std::map<std::string, double>>();
        if (j.contains("spurious_rate")) spec.spurious_rate = j.at("spurious_rate").get<std::map<std::string, double>>();
        spec.negative_suppression = j.value("negative_suppression", spec.negative_suppression);
        spec.guidance_scale = j.value("guidance_scale", spec.guidance_scale);
        spec.response_noise = j.value("response_noise", spec.response_noise);
        spec.latent_channels = j.value("latent_channels", spec.latent_channels);
        spec.latent_side = j.value("latent_side", spec.latent_side);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad synthetic backend config: ") + e.what(), "/");
    }
    spec.validate();
    return spec;
}

namespace detail {

/// Deterministic unit-variance pattern keyed by a string.
inline std::vector<double> keyed_pattern(std::uint64_t key, std::size_t n) {
    SplitMix rng(key);
    std::vector<double> out(n);
    for (auto& v : out) v = rng.normal();
    return out;
}

}  // namespace detail

class SyntheticBackend final : public Backend {
public:
    explicit SyntheticBackend(SyntheticBackendSpec spec)
        : spec_(std::move(spec)), schedule_(NoiseSchedule::scaled_linear()) {
        spec_.validate();
    }

    std::string id() const override { return "synthetic/1"; }
    const TimestepGrid& grid() const override { return spec_.grid; }
    double guidance_scale() const override { return spec_.guidance_scale; }
    const SyntheticBackendSpec& spec() const noexcept { return spec_; }
    const NoiseSchedule& schedule() const noexcept { return schedule_; }

    nlohmann::json config() const override {
        return {{"id", id()},
                {"T", spec_.grid.steps()},
                {"lock_tau", spec_.lock_tau},
                {"spurious_rate", spec_.spurious_rate},
                {"negative_suppression", spec_.negative_suppression},
                {"guidance_scale", spec_.guidance_scale},
                {"latent_channels", spec_.latent_channels},
                {"latent_side", spec_.latent_side}};
    }

    std::unique_ptr<BackendSession> open_session() const override;

    /// The step whose condition decides concept presence for lock time `lock`.
    std::size_t decision_step(double lock) const {
        std::size_t d = 0;
        for (std::size_t k = 0; k < spec_.grid.steps(); ++k)
            if (spec_.grid.tau(k) >= lock) d = k;
        return d;
    }

    bool spurious(std::uint64_t seed, const std::string& surface) const {
        auto it = spec_.spurious_rate.find(surface);
        if (it == spec_.spurious_rate.end()) return false;
        return unit_from_bits(mix_keys(seed, fnv1a64(surface), 1)) < it->second;
    }

    bool suppressible(std::uint64_t seed, const std::string& surface) const {
        return unit_from_bits(mix_keys(seed, fnv1a64(surface), 2)) < spec_.negative_suppression;
    }

    /// Symbolic content of a finished trajectory.
    std::set<std::string> present_concepts(const LatentState& state) const {
        std::set<std::string> tags;
        std::set<std::string> universe;
        for (const auto& [c, _] : spec_.lock_tau) universe.insert(c);
        for (const auto& [c, _] : spec_.spurious_rate) universe.insert(c);
        for (const auto& c : universe) {
            auto lock_it = spec_.lock_tau.find(c);
            const double lock = lock_it == spec_.lock_tau.end() ? 1.0 : lock_it->second;
            const Condition& decisive = state.condition_at(decision_step(lock));
            const bool prompted = lock_it != spec_.lock_tau.end() && text::contains_word(decisive.prompt, c);
            const bool negated = decisive.negative_prompt && decisive.guidance_scale > 0.0 &&
                                 text::contains_word(*decisive.negative_prompt, c);
            const bool prior = spurious(state.seed, c) && !(negated && suppressible(state.seed, c));
            if (prompted || prior) tags.insert(c);
        }
        return tags;
    }

private:
    SyntheticBackendSpec spec_;
    NoiseSchedule schedule_;
};

class SyntheticSession final : public BackendSession {
public:
    explicit SyntheticSession(const SyntheticBackend& backend) : backend_(backend) {}

    LatentState init(std::uint64_t seed) override {
        const auto& spec = backend_.spec();
        LatentState s;
        s.grid = spec.grid;
        s.seed = seed;
        s.k = 0;
        s.values = Tensor({spec.latent_channels, spec.latent_side, spec.latent_side},
                          detail::keyed_pattern(mix_keys(seed, 0x6e6f697365ULL), latent_size()));
        return s;
    }

protected:
    LatentState run_steps(const LatentState& state, const Condition& condition, std::size_t from_k, std::size_t to_k) override {
        const auto& schedule = backend_.schedule();
        const Tensor scene = target(state.seed, "");
        const Tensor cond_target = target(state.seed, condition.prompt);
        const Tensor uncond_target = condition.negative_prompt ? target(state.seed, *condition.negative_prompt) : scene;

        LatentState next = state;
        for (std::size_t k = from_k; k < to_k; ++k) {
            const double abar = schedule.alpha_bar_at(state.grid.timestep(k));
            const double abar_next = schedule.alpha_bar_at(state.grid.timestep(k + 1));
            const Tensor eps_cond = ideal_eps(next.values, cond_target, abar);
            const Tensor eps_uncond = ideal_eps(next.values, uncond_target, abar);
            const Tensor eps_hat = cfg_combine(eps_cond, eps_uncond, condition.guidance_scale);
            const Tensor x0 = invert_to_x0(next.values, eps_hat, abar);
            next.values = forward_diffuse(x0, abar_next, eps_hat);
        }
        next.trace.push_back(tensor_checksum(next.values));
        return next;
    }

    Image render(const LatentState& state) override {
        const auto& spec = backend_.spec();
        const std::size_t plane = spec.latent_side * spec.latent_side;

        // Layout is a blend of every step's guided target, noisier steps
        // weighing more; the final latent adds the fine detail.
        std::vector<double> content(latent_size(), 0.0);
        double total_weight = 0.0;
        for (const auto& segment : state.history) {
            const Tensor clean = guided_clean(state.seed, segment.condition);
            for (std::size_t k = segment.from_k; k < segment.to_k; ++k) {
                const double w = state.grid.tau(k);
                total_weight += w;
                for (std::size_t i = 0; i < content.size(); ++i) content[i] += w * clean.values[i];
            }
        }

        Image img;
        img.width = spec.latent_side;
        img.height = spec.latent_side;
        img.pixels.resize(plane * 3);
        for (std::size_t p = 0; p < plane; ++p) {
            for (std::size_t c = 0; c < 3; ++c) {
                const std::size_t i = c * plane + p;
                const double v = 0.8 * content[i] / total_weight + 0.2 * state.values.values[i];
                img.pixels[p * 3 + c] = static_cast<std::uint8_t>(std::lround(255.0 * (0.5 + 0.5 * std::tanh(v))));
            }
        }
        img.tags = backend_.present_concepts(state);
        return img;
    }

private:
    std::size_t latent_size() const {
        const auto& spec = backend_.spec();
        return spec.latent_channels * spec.latent_side * spec.latent_side;
    }

    // Clean latent the ideal denoiser steers toward: seed scene plus a
    // prompt-specific offset.
    Tensor target(std::uint64_t seed, const std::string& prompt) const {
        const auto& spec = backend_.spec();
        auto scene = detail::keyed_pattern(mix_keys(seed, 0x7363656e65ULL), latent_size());
        if (!prompt.empty()) {
            const auto offset = detail::keyed_pattern(fnv1a64(prompt), latent_size());
            for (std::size_t i = 0; i < scene.size(); ++i) scene[i] = 0.5 * scene[i] + 0.06 * offset[i];
        } else {
            for (auto& v : scene) v *= 0.5;
        }
        return Tensor({spec.latent_channels, spec.latent_side, spec.latent_side}, std::move(scene));
    }

    Tensor guided_clean(std::uint64_t seed, const Condition& condition) const {
        const Tensor uncond = condition.negative_prompt ? target(seed, *condition.negative_prompt) : target(seed, "");
        return cfg_combine(target(seed, condition.prompt), uncond, condition.guidance_scale);
    }

    static Tensor ideal_eps(const Tensor& x, const Tensor& clean, double abar) {
        const double signal = std::sqrt(abar), noise = std::sqrt(1.0 - abar);
        Tensor eps = x;
        for (std::size_t i = 0; i < eps.size(); ++i) eps.values[i] = (x.values[i] - signal * clean.values[i]) / noise;
        return eps;
    }

    const SyntheticBackend& backend_;
};

inline std::unique_ptr<BackendSession> SyntheticBackend::open_session() const {
    return std::make_unique<SyntheticSession>(*this);
}

}  // namespace cisprobe
