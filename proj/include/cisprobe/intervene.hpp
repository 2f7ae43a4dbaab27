// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cisprobe/backend.hpp"
#include "cisprobe/parallel.hpp"
#include "cisprobe/score.hpp"
#include "cisprobe/taxonomy.hpp"
#include "cisprobe/trajectory.hpp"

namespace cisprobe {

enum class Direction { insertion, deletion };

inline std::string to_string(Direction d) { return d == Direction::insertion ? "insertion" : "deletion"; }

inline Direction direction_from_string(std::string_view s) {
    if (s == "insertion") return Direction::insertion;
    if (s == "deletion") return Direction::deletion;
    throw ParseError("unknown direction", std::string(s));
}

/// One prompt-switch experiment.
///
/// Insertion runs the base prompt for steps [0, switch_k) and the concept
/// prompt for [switch_k, T); deletion runs them in the opposite order. The
/// switch replaces the whole condition: a seed-control negative prompt only
/// applies while the base prompt is active during insertion. The
/// unconditional branch stays the empty prompt throughout.
struct InterventionPlan {
    Direction direction = Direction::insertion;
    std::string pair_key;
    std::string base_prompt;
    std::string concept_prompt;
    std::vector<ConceptEntry> targets;
    TimestepGrid grid{50};
    std::size_t switch_k = 0;
    std::uint64_t seed = 0;
    double guidance_scale = 7.5;
    bool negative_guidance = false;

    void validate() const {
        if (switch_k > grid.steps()) {
            throw ArgumentError("switch step " + std::to_string(switch_k) + " outside grid of " + std::to_string(grid.steps()) + " steps");
        }
        if (targets.empty()) throw ArgumentError("intervention plan has no target concept");
        if (!(guidance_scale >= 0.0)) throw ArgumentError("guidance scale must be non-negative");
    }

    double tau() const { return grid.tau(switch_k); }

    Condition base_condition() const {
        std::optional<std::string> negative;
        if (negative_guidance && direction == Direction::insertion) {
            std::string joined;
            for (const auto& t : targets) joined += (joined.empty() ? "" : ", ") + t.surface;
            negative = joined;
        }
        return {base_prompt, negative, guidance_scale};
    }
    Condition concept_condition() const { return {concept_prompt, std::nullopt, guidance_scale}; }

    Condition first_condition() const { return direction == Direction::insertion ? base_condition() : concept_condition(); }
    Condition second_condition() const { return direction == Direction::insertion ? concept_condition() : base_condition(); }

    nlohmann::json to_json() const {
        nlohmann::json t = nlohmann::json::array();
        for (const auto& e : targets) t.push_back({{"surface", e.surface}, {"question", render_question(e)}});
        return {{"direction", to_string(direction)}, {"pair", pair_key},     {"base_prompt", base_prompt},
                {"concept_prompt", concept_prompt},  {"targets", t},         {"T", grid.steps()},
                {"switch_k", switch_k},              {"seed", seed},         {"omega", guidance_scale},
                {"negative_guidance", negative_guidance}};
    }

    /// Content hash over every field that influences the outcome.
    std::string fingerprint() const { return sha256_hex(to_json().dump()); }
};

inline InterventionPlan make_plan(const PromptPair& pair, Direction direction, const TimestepGrid& grid, std::size_t switch_k,
                                  std::uint64_t seed, double guidance_scale, bool negative_guidance = false) {
    InterventionPlan plan{direction, pair.key(), pair.base_prompt, pair.concept_prompt, {pair.entry}, grid, switch_k, seed,
                          guidance_scale, negative_guidance};
    plan.validate();
    return plan;
}

inline InterventionPlan make_multi_plan(const MultiConceptPrompt& prompt, const TimestepGrid& grid, std::size_t switch_k,
                                        std::uint64_t seed, double guidance_scale) {
    std::string key = "multi";
    for (const auto& t : prompt.targets) key += (key == "multi" ? ":" : "+") + t.surface;
    InterventionPlan plan{Direction::insertion, key + "|" + prompt.base_prompt, prompt.base_prompt, prompt.combined_prompt,
                          prompt.targets, grid, switch_k, seed, guidance_scale, false};
    plan.validate();
    return plan;
}

struct RunRecord {
    std::string fingerprint;
    std::string pair_key;
    Direction direction = Direction::insertion;
    std::uint64_t seed = 0;
    std::size_t switch_k = 0;
    double tau = 0.0;
    std::map<std::string, Answer> outcomes;  // target surface -> verdict
    std::string image_ref;
    std::string scorer_id;
    double wall_ms = 0.0;
    std::optional<std::string> error;

    bool ok() const noexcept { return !error.has_value(); }
};

struct RunOutput {
    RunRecord record;
    Image image;
};

/// Runs the two denoising phases of a plan and decodes, without scoring.
inline Image generate(const InterventionPlan& plan, const Backend& backend) {
    plan.validate();
    if (plan.grid.steps() != backend.grid().steps()) throw ArgumentError("plan grid does not match backend grid");
    auto session = backend.open_session();
    LatentState state;
    auto phase = [&](const Condition& condition, std::size_t from, std::size_t to) {
        try {
            state = session->denoise_range(state, condition, from, to);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            throw BackendError(e.what(), from);
        }
    };
    state = session->init(plan.seed);
    phase(plan.first_condition(), 0, plan.switch_k);
    phase(plan.second_condition(), plan.switch_k, plan.grid.steps());
    return session->decode(state);
}

/// Executes a plan end to end: two denoising phases, decode, one question per target.
inline RunOutput run_intervention(const InterventionPlan& plan, const Backend& backend, Scorer& scorer) {
    const auto started = std::chrono::steady_clock::now();
    RunOutput out;
    out.image = generate(plan, backend);
    RunRecord& r = out.record;
    r.fingerprint = plan.fingerprint();
    r.pair_key = plan.pair_key;
    r.direction = plan.direction;
    r.seed = plan.seed;
    r.switch_k = plan.switch_k;
    r.tau = plan.tau();
    r.image_ref = out.image.ref();
    r.scorer_id = scorer.id();
    for (const auto& target : plan.targets) {
        const std::string question = render_question(target);
        try {
            r.outcomes[target.surface] = assess(out.image, question, scorer).answer;
        } catch (const ParseError& e) {
            throw ParseError("unparseable answer to \"" + question + "\"", e.path());
        }
    }
    r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return out;
}

inline RunRecord run_pci(const InterventionPlan& plan, const Backend& backend, Scorer& scorer) {
    if (plan.direction != Direction::insertion) throw ArgumentError("run_pci expects an insertion plan");
    return run_intervention(plan, backend, scorer).record;
}

/// Deletion run; outcome "yes" means the concept persisted.
inline RunRecord run_cds(const InterventionPlan& plan, const Backend& backend, Scorer& scorer) {
    if (plan.direction != Direction::deletion) throw ArgumentError("run_cds expects a deletion plan");
    return run_intervention(plan, backend, scorer).record;
}

/// Multi-concept insertion, scored separately for every target.
inline RunRecord run_multi(const InterventionPlan& plan, const Backend& backend, Scorer& scorer) {
    if (plan.targets.size() < 2) throw ArgumentError("run_multi expects at least two targets");
    for (const auto& t : plan.targets) {
        if (!text::contains_word(plan.concept_prompt, t.surface)) {
            throw ArgumentError("combined prompt does not render \"" + t.surface + "\"");
        }
    }
    return run_intervention(plan, backend, scorer).record;
}

struct SeedChoice {
    std::uint64_t seed = 0;
    bool negative_guidance = false;

    bool operator==(const SeedChoice&) const = default;
};

struct SweepOptions {
    std::size_t workers = 1;
    std::optional<double> guidance_scale;  // defaults to the backend's native scale
};

struct SweepResult {
    std::vector<InterventionPlan> plans;
    std::vector<RunRecord> records;  // seed-major, then switch step

    std::size_t completed() const {
        return static_cast<std::size_t>(std::count_if(records.begin(), records.end(), [](const RunRecord& r) { return r.ok(); }));
    }
    std::size_t failed() const { return records.size() - completed(); }
    bool complete() const { return failed() == 0; }
};

namespace detail {
inline RunRecord failed_record(const InterventionPlan& plan, const std::string& message) {
    RunRecord r;
    r.fingerprint = plan.fingerprint();
    r.pair_key = plan.pair_key;
    r.direction = plan.direction;
    r.seed = plan.seed;
    r.switch_k = plan.switch_k;
    r.tau = plan.tau();
    r.error = message;
    return r;
}

inline void run_cells(SweepResult& result, const std::vector<std::size_t>& cells, const Backend& backend, Scorer& scorer,
                      std::size_t workers) {
    parallel_for(cells.size(), workers, [&](std::size_t i) {
        const auto& plan = result.plans[cells[i]];
        try {
            result.records[cells[i]] = run_intervention(plan, backend, scorer).record;
        } catch (const std::exception& e) {
            result.records[cells[i]] = failed_record(plan, e.what());
        }
    });
}
}  // namespace detail

/// Every seed crossed with every switch step 0..T. Cells fail independently.
inline SweepResult sweep(const PromptPair& pair, const TimestepGrid& grid, const std::vector<SeedChoice>& seeds, Direction direction,
                         const Backend& backend, Scorer& scorer, const SweepOptions& options = {}) {
    if (seeds.empty()) throw ArgumentError("sweep needs at least one seed");
    const double omega = options.guidance_scale.value_or(backend.guidance_scale());
    SweepResult result;
    for (const auto& s : seeds)
        for (std::size_t k = 0; k <= grid.steps(); ++k)
            result.plans.push_back(make_plan(pair, direction, grid, k, s.seed, omega, s.negative_guidance));
    result.records.resize(result.plans.size());
    std::vector<std::size_t> cells(result.plans.size());
    std::iota(cells.begin(), cells.end(), std::size_t{0});
    detail::run_cells(result, cells, backend, scorer, options.workers);
    return result;
}

/// Re-runs only the failed cells of a sweep; completed cells are untouched.
inline std::size_t retry_failed(SweepResult& result, const Backend& backend, Scorer& scorer, std::size_t workers = 1) {
    std::vector<std::size_t> cells;
    for (std::size_t i = 0; i < result.records.size(); ++i)
        if (!result.records[i].ok()) cells.push_back(i);
    detail::run_cells(result, cells, backend, scorer, workers);
    return cells.size();
}

inline std::vector<SeedChoice> plain_seeds(const std::vector<std::uint64_t>& seeds) {
    std::vector<SeedChoice> out;
    out.reserve(seeds.size());
    for (auto s : seeds) out.push_back({s, false});
    return out;
}

}  // namespace cisprobe
