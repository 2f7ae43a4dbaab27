// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "cisprobe/error.hpp"
#include "cisprobe/hash.hpp"
#include "cisprobe/trajectory.hpp"
#include "json.hpp"

namespace cisprobe {

/// Dense real tensor with an explicit shape.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> values;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        if (n != values.size()) throw ArgumentError("tensor shape does not match value count");
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor zeros(std::vector<std::size_t> s) {
        std::size_t n = 1;
        for (auto d : s) n *= d;
        return Tensor(std::move(s), std::vector<double>(n, 0.0));
    }

    std::size_t size() const noexcept { return values.size(); }

    bool operator==(const Tensor&) const = default;
};

namespace detail {
inline void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
    if (a.shape != b.shape) throw ArgumentError(std::string("shape mismatch in ") + what);
}
}  // namespace detail

/// Variance schedule: betas for t = 1..N, with alpha_bar(0) = 1 (empty product).
class NoiseSchedule {
public:
    explicit NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
        if (betas_.empty()) throw ArgumentError("noise schedule needs at least one beta");
        alpha_bars_.reserve(betas_.size() + 1);
        alpha_bars_.push_back(1.0);
        for (double b : betas_) {
            if (!(b > 0.0 && b < 1.0)) throw ArgumentError("beta values must lie in (0, 1)");
            alpha_bars_.push_back(alpha_bars_.back() * (1.0 - b));
        }
    }

    /// Latent-diffusion default: betas linear in sqrt space.
    static NoiseSchedule scaled_linear(std::size_t steps = 1000, double beta_start = 0.00085, double beta_end = 0.012) {
        std::vector<double> betas(steps);
        const double a = std::sqrt(beta_start), b = std::sqrt(beta_end);
        for (std::size_t i = 0; i < steps; ++i) {
            const double s = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
            const double r = a + (b - a) * s;
            betas[i] = r * r;
        }
        return NoiseSchedule(std::move(betas));
    }

    std::size_t steps() const noexcept { return betas_.size(); }
    double beta(std::size_t t) const { return betas_.at(t - 1); }
    double alpha(std::size_t t) const { return 1.0 - beta(t); }
    double alpha_bar(std::size_t t) const {
        if (t > betas_.size()) throw ArgumentError("schedule index " + std::to_string(t) + " out of range");
        return alpha_bars_[t];
    }

    /// alpha_bar at a (possibly fractional) grid timestep, rounded to the nearest index.
    double alpha_bar_at(double timestep) const {
        const double scaled = timestep * static_cast<double>(steps()) / kMaxTimestep;
        return alpha_bar(static_cast<std::size_t>(std::lround(scaled)));
    }

private:
    std::vector<double> betas_;
    std::vector<double> alpha_bars_;
};

/// x_t = sqrt(abar) x0 + sqrt(1 - abar) eps
inline Tensor forward_diffuse(const Tensor& x0, double alpha_bar, const Tensor& epsilon) {
    detail::require_same_shape(x0, epsilon, "forward_diffuse");
    if (!(alpha_bar >= 0.0 && alpha_bar <= 1.0)) throw ArgumentError("alpha_bar outside [0, 1]");
    const double signal = std::sqrt(alpha_bar), noise = std::sqrt(1.0 - alpha_bar);
    Tensor out = x0;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = signal * x0.values[i] + noise * epsilon.values[i];
    return out;
}

inline Tensor forward_diffuse(const Tensor& x0, std::size_t t, const NoiseSchedule& schedule, const Tensor& epsilon) {
    return forward_diffuse(x0, schedule.alpha_bar(t), epsilon);
}

/// x0* = (x_t - sqrt(1 - abar) eps_hat) / sqrt(abar)
inline Tensor invert_to_x0(const Tensor& xt, const Tensor& predicted_eps, double alpha_bar) {
    detail::require_same_shape(xt, predicted_eps, "invert_to_x0");
    if (!(alpha_bar > 0.0)) throw ArgumentError("cannot invert the forward process at alpha_bar = 0");
    if (alpha_bar > 1.0) throw ArgumentError("alpha_bar above 1");
    const double signal = std::sqrt(alpha_bar), noise = std::sqrt(1.0 - alpha_bar);
    Tensor out = xt;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = (xt.values[i] - noise * predicted_eps.values[i]) / signal;
    return out;
}

inline Tensor invert_to_x0(const Tensor& xt, const Tensor& predicted_eps, std::size_t t, const NoiseSchedule& schedule) {
    return invert_to_x0(xt, predicted_eps, schedule.alpha_bar(t));
}

/// Classifier-free guidance: (1 + w) eps_cond - w eps_uncond.
inline Tensor cfg_combine(const Tensor& eps_cond, const Tensor& eps_uncond, double omega) {
    detail::require_same_shape(eps_cond, eps_uncond, "cfg_combine");
    Tensor out = eps_cond;
    for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = (1.0 + omega) * eps_cond.values[i] - omega * eps_uncond.values[i];
    return out;
}

/// Guidance inverted against a concept: the concept prediction takes the
/// unconditional slot, so the extrapolation points away from it.
inline Tensor negative_guidance_combine(const Tensor& eps_base, const Tensor& eps_away_from, double omega) {
    return cfg_combine(eps_base, eps_away_from, omega);
}

struct Condition {
    std::string prompt;
    std::optional<std::string> negative_prompt;
    double guidance_scale = 0.0;

    Condition() = default;
    Condition(std::string p, std::optional<std::string> negative, double omega)
        : prompt(std::move(p)), negative_prompt(std::move(negative)), guidance_scale(omega) {
        if (!(omega >= 0.0)) throw ArgumentError("guidance scale must be non-negative");
    }

    bool operator==(const Condition&) const = default;
};

/// One contiguous run of denoising steps [from_k, to_k) under a condition.
struct Segment {
    std::size_t from_k = 0;
    std::size_t to_k = 0;
    Condition condition;

    bool operator==(const Segment&) const = default;
};

struct LatentState {
    Tensor values;
    std::size_t k = 0;
    TimestepGrid grid{1};
    std::uint64_t seed = 0;
    std::vector<Segment> history;
    std::vector<std::string> trace;  // per-segment checksums

    /// Condition that governed step `step` (0 <= step < T).
    const Condition& condition_at(std::size_t step) const {
        for (const auto& s : history)
            if (s.from_k <= step && step < s.to_k) return s.condition;
        throw StateError("no segment covers step " + std::to_string(step));
    }
};

/// Decoded RGB image. Tags carry symbolic content for synthetic backends.
struct Image {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;  // RGB, row-major
    std::set<std::string> tags;

    bool operator==(const Image&) const = default;

    /// Binary PPM (P6); tags travel in a header comment line.
    std::string encode() const {
        std::ostringstream out;
        out << "P6\n";
        if (!tags.empty()) {
            out << "# tags:";
            bool first = true;
            for (const auto& t : tags) {
                out << (first ? " " : ",") << t;
                first = false;
            }
            out << "\n";
        }
        out << width << " " << height << "\n255\n";
        out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
        return out.str();
    }

    static Image decode(const std::string& bytes) {
        std::istringstream in(bytes);
        std::string magic;
        std::getline(in, magic);
        if (magic != "P6") throw ParseError("not a binary PPM image", "magic");
        Image img;
        std::string line;
        while (in.peek() == '#') {
            std::getline(in, line);
            constexpr std::string_view kPrefix = "# tags: ";
            if (line.rfind(kPrefix, 0) == 0) {
                std::stringstream ss(line.substr(kPrefix.size()));
                for (std::string tag; std::getline(ss, tag, ',');)
                    if (!tag.empty()) img.tags.insert(tag);
            }
        }
        int maxval = 0;
        in >> img.width >> img.height >> maxval;
        in.get();
        if (!in || maxval != 255) throw ParseError("malformed PPM header", "header");
        img.pixels.resize(img.width * img.height * 3);
        in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
        if (static_cast<std::size_t>(in.gcount()) != img.pixels.size()) throw ParseError("truncated PPM payload", "pixels");
        return img;
    }

    /// Content address of the encoded image.
    std::string ref() const { return sha256_hex(encode()).substr(0, 32); }
};

/// One trajectory in flight. Sessions are not shared between threads.
class BackendSession {
public:
    virtual ~BackendSession() = default;

    virtual LatentState init(std::uint64_t seed) = 0;

    /// Runs steps from_k .. to_k - 1 under `condition`.
    LatentState denoise_range(const LatentState& state, const Condition& condition, std::size_t from_k, std::size_t to_k) {
        if (from_k > to_k) throw ArgumentError("denoise range is inverted: " + std::to_string(from_k) + " > " + std::to_string(to_k));
        if (to_k > state.grid.steps()) throw ArgumentError("denoise range ends past the grid");
        if (state.k != from_k) {
            throw StateError("latent is at step " + std::to_string(state.k) + ", range starts at " + std::to_string(from_k));
        }
        if (from_k == to_k) return state;
        LatentState next = run_steps(state, condition, from_k, to_k);
        next.k = to_k;
        next.history.push_back({from_k, to_k, condition});
        return next;
    }

    Image decode(const LatentState& state) {
        if (state.k != state.grid.steps()) {
            throw StateError("decode requested at step " + std::to_string(state.k) + " of " + std::to_string(state.grid.steps()));
        }
        return render(state);
    }

protected:
    virtual LatentState run_steps(const LatentState& state, const Condition& condition, std::size_t from_k, std::size_t to_k) = 0;
    virtual Image render(const LatentState& state) = 0;
};

/// Generative backend: a factory of independent trajectory sessions.
class Backend {
public:
    virtual ~Backend() = default;
    virtual std::string id() const = 0;
    virtual const TimestepGrid& grid() const = 0;
    /// Native positive guidance scale; also the default negative-guidance scale.
    virtual double guidance_scale() const = 0;
    virtual std::unique_ptr<BackendSession> open_session() const = 0;
    virtual nlohmann::json config() const { return {{"id", id()}, {"T", grid().steps()}}; }
};

inline std::string tensor_checksum(const Tensor& t) {
    return sha256_hex(std::string_view(reinterpret_cast<const char*>(t.values.data()), t.values.size() * sizeof(double)))
        .substr(0, 16);
}

}  // namespace cisprobe
