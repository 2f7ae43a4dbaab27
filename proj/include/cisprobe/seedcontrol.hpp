// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cisprobe/intervene.hpp"

namespace cisprobe {

enum class SeedStatus { unchecked, valid, concept_present, failed };

inline std::string to_string(SeedStatus s) {
    switch (s) {
        case SeedStatus::unchecked: return "unchecked";
        case SeedStatus::valid: return "valid";
        case SeedStatus::concept_present: return "concept_present";
        case SeedStatus::failed: return "failed";
    }
    return "unchecked";
}

inline SeedStatus seed_status_from_string(std::string_view s) {
    if (s == "unchecked") return SeedStatus::unchecked;
    if (s == "valid") return SeedStatus::valid;
    if (s == "concept_present") return SeedStatus::concept_present;
    if (s == "failed") return SeedStatus::failed;
    throw ParseError("unknown seed status", std::string(s));
}

struct SeedEntry {
    std::uint64_t seed = 0;
    SeedStatus status = SeedStatus::unchecked;
    bool negative_guidance = false;  // status was decided under negative guidance
    std::string note;

    bool operator==(const SeedEntry&) const = default;
};

struct SeedPool {
    std::vector<SeedEntry> entries;
    bool negative_guidance_used = false;
    std::size_t target_count = 0;

    std::size_t count(SeedStatus s) const {
        return static_cast<std::size_t>(std::count_if(entries.begin(), entries.end(), [s](const SeedEntry& e) { return e.status == s; }));
    }
    std::size_t valid_count() const { return count(SeedStatus::valid); }
    std::size_t checked_count() const { return entries.size() - count(SeedStatus::unchecked); }

    /// Escalation flag: filtering alone did not reach the target.
    bool short_of_target() const { return valid_count() < target_count; }

    /// Valid seeds in candidate order, with the configuration they were validated under.
    std::vector<SeedChoice> valid() const {
        std::vector<SeedChoice> out;
        for (const auto& e : entries)
            if (e.status == SeedStatus::valid) out.push_back({e.seed, e.negative_guidance});
        return out;
    }

    nlohmann::json to_json() const {
        nlohmann::json list = nlohmann::json::array();
        for (const auto& e : entries) {
            nlohmann::json j{{"seed", e.seed}, {"status", to_string(e.status)}, {"negative_guidance", e.negative_guidance}};
            if (!e.note.empty()) j["note"] = e.note;
            list.push_back(std::move(j));
        }
        return {{"entries", list}, {"negative_guidance_used", negative_guidance_used}, {"target_count", target_count}};
    }

    static SeedPool from_json(const nlohmann::json& j) {
        SeedPool pool;
        pool.negative_guidance_used = j.at("negative_guidance_used").get<bool>();
        pool.target_count = j.at("target_count").get<std::size_t>();
        for (const auto& e : j.at("entries")) {
            pool.entries.push_back({e.at("seed").get<std::uint64_t>(), seed_status_from_string(e.at("status").get<std::string>()),
                                    e.at("negative_guidance").get<bool>(), e.value("note", std::string{})});
        }
        return pool;
    }

    bool operator==(const SeedPool&) const = default;
};

/// Deterministic candidate seeds keyed by an experiment identifier.
inline std::vector<std::uint64_t> candidate_seeds(std::string_view experiment_key, std::size_t count, std::size_t offset = 0) {
    std::vector<std::uint64_t> out;
    out.reserve(count);
    const std::uint64_t base = fnv1a64(experiment_key);
    for (std::size_t i = 0; i < count; ++i) out.push_back(mix_keys(base, offset + i) >> 1);
    return out;
}

struct SeedFilterOptions {
    std::size_t workers = 1;
    std::optional<double> guidance_scale;  // positive and negative scale; backend default
};

namespace detail {

/// Generates under P_b only (the never-switched insertion cell) and asks the
/// concept question.
inline SeedEntry check_seed(const PromptPair& pair, std::uint64_t seed, bool negative, const Backend& backend, Scorer& scorer,
                            double omega) {
    SeedEntry entry{seed, SeedStatus::failed, negative, {}};
    try {
        const auto plan = make_plan(pair, Direction::insertion, backend.grid(), backend.grid().steps(), seed, omega, negative);
        const auto record = run_intervention(plan, backend, scorer).record;
        entry.status = record.outcomes.at(pair.entry.surface) == Answer::yes ? SeedStatus::concept_present : SeedStatus::valid;
    } catch (const std::exception& e) {
        entry.note = e.what();
    }
    return entry;
}

inline void filter_into(SeedPool& pool, const PromptPair& pair, const std::vector<std::uint64_t>& candidates, bool negative,
                        const Backend& backend, Scorer& scorer, const SeedFilterOptions& options) {
    const double omega = options.guidance_scale.value_or(backend.guidance_scale());
    const std::size_t batch = std::max<std::size_t>(1, options.workers);
    std::size_t next = 0;
    while (next < candidates.size() && pool.valid_count() < pool.target_count) {
        const std::size_t n = std::min(batch, candidates.size() - next);
        std::vector<SeedEntry> checked(n);
        parallel_for(n, batch, [&](std::size_t i) { checked[i] = check_seed(pair, candidates[next + i], negative, backend, scorer, omega); });
        // Single-writer assembly in candidate order; stop at the target.
        for (auto& entry : checked) {
            if (pool.valid_count() >= pool.target_count) break;
            auto it = std::find_if(pool.entries.begin(), pool.entries.end(), [&](const SeedEntry& e) { return e.seed == entry.seed; });
            if (it == pool.entries.end()) {
                pool.entries.push_back(std::move(entry));
            } else if (it->status != SeedStatus::valid) {
                *it = std::move(entry);
            }
        }
        next += n;
    }
}

}  // namespace detail

/// First stage: keep seeds whose plain base-prompt generation does not show
/// the concept. Stops once `target_count` valid seeds are found; candidates
/// not reached stay unchecked and are not recorded.
inline SeedPool filter_seeds(const PromptPair& pair, const std::vector<std::uint64_t>& candidates, const Backend& backend,
                             Scorer& scorer, std::size_t target_count, const SeedFilterOptions& options = {}) {
    if (target_count == 0) throw ArgumentError("target seed count must be at least 1");
    SeedPool pool;
    pool.target_count = target_count;
    detail::filter_into(pool, pair, candidates, false, backend, scorer, options);
    return pool;
}

/// Second stage: regenerate `fresh` candidates under P_b with the concept as a
/// negative prompt and filter again with the same scorer.
inline SeedPool resample_with_negative_guidance(const PromptPair& pair, const SeedPool& prior, const std::vector<std::uint64_t>& fresh,
                                                const Backend& backend, Scorer& scorer, std::size_t target_count,
                                                const SeedFilterOptions& options = {}) {
    if (target_count == 0) throw ArgumentError("target seed count must be at least 1");
    if (prior.valid_count() >= target_count) {
        throw StateError("negative-guidance resampling requested although the target of " + std::to_string(target_count) +
                         " valid seeds is already met");
    }
    SeedPool pool = prior;
    pool.target_count = target_count;
    pool.negative_guidance_used = true;
    detail::filter_into(pool, pair, fresh, true, backend, scorer, options);
    if (pool.valid_count() < target_count) {
        throw InsufficientSeedsError(target_count, pool.valid_count(), pool.checked_count());
    }
    return pool;
}

/// Combined strategy: filtering first, negative guidance on the rejected and
/// remaining candidates only if filtering falls short.
inline SeedPool controlled_seed_pool(const PromptPair& pair, const std::vector<std::uint64_t>& candidates, const Backend& backend,
                                     Scorer& scorer, std::size_t target_count, const SeedFilterOptions& options = {}) {
    SeedPool pool = filter_seeds(pair, candidates, backend, scorer, target_count, options);
    if (!pool.short_of_target()) return pool;
    std::vector<std::uint64_t> retry;
    for (const auto& e : pool.entries)
        if (e.status != SeedStatus::valid) retry.push_back(e.seed);
    return resample_with_negative_guidance(pair, pool, retry, backend, scorer, target_count, options);
}

struct PresenceRow {
    std::string concept_name;
    std::size_t total = 0;
    std::size_t present = 0;
    double fraction_present = 0.0;
    double fraction_absent = 0.0;
};

/// Per-concept share of base generations that already show the concept,
/// sorted by that share, descending.
inline std::vector<PresenceRow> presence_report(const std::map<std::string, std::vector<bool>>& outcomes) {
    std::vector<PresenceRow> rows;
    for (const auto& [name, list] : outcomes) {
        if (list.empty()) continue;
        PresenceRow row{name, list.size(), static_cast<std::size_t>(std::count(list.begin(), list.end(), true)), 0.0, 0.0};
        row.fraction_present = static_cast<double>(row.present) / static_cast<double>(row.total);
        row.fraction_absent = static_cast<double>(row.total - row.present) / static_cast<double>(row.total);
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(), [](const PresenceRow& a, const PresenceRow& b) { return a.fraction_present > b.fraction_present; });
    return rows;
}

/// Presence outcomes of the checked seeds in a pool.
inline std::vector<bool> presence_outcomes(const SeedPool& pool) {
    std::vector<bool> out;
    for (const auto& e : pool.entries) {
        if (e.status == SeedStatus::valid) out.push_back(false);
        if (e.status == SeedStatus::concept_present) out.push_back(true);
    }
    return out;
}

}  // namespace cisprobe
