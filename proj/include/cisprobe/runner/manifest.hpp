// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <chrono>
#include <ctime>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cisprobe/intervene.hpp"
#include "cisprobe/runner/registry.hpp"
#include "cisprobe/taxonomy.hpp"

namespace cisprobe::runner {

inline constexpr int kSchemaVersion = 1;

struct SeedPolicy {
    std::size_t count = 100;       // valid seeds per pair
    std::size_t candidates = 0;    // 0 means 4 x count
    bool filter = true;            // run the concept-presence filter
    bool negative_fallback = true; // escalate to negative guidance when short
    std::uint64_t rng_seed = 0;

    std::size_t candidate_count() const { return candidates ? candidates : 4 * count; }

    Json to_json() const {
        return {{"count", count}, {"candidates", candidate_count()}, {"filter", filter}, {"negative_fallback", negative_fallback}, {"rng_seed", rng_seed}};
    }
    static SeedPolicy from_json(const Json& j) {
        return {j.at("count").get<std::size_t>(), j.value("candidates", std::size_t{0}), j.value("filter", true),
                j.value("negative_fallback", true), j.value("rng_seed", std::uint64_t{0})};
    }
};

inline Json filter_to_json(const PairFilter& f) {
    Json j = Json::object();
    if (f.category) j["category"] = *f.category;
    if (f.subcategory) j["subcategory"] = *f.subcategory;
    if (f.surface) j["concept"] = *f.surface;
    if (f.context) j["context"] = *f.context;
    return j;
}

inline PairFilter filter_from_json(const Json& j) {
    PairFilter f;
    auto opt = [&](const char* key) -> std::optional<std::string> {
        if (j.contains(key)) return j.at(key).get<std::string>();
        return std::nullopt;
    };
    f.category = opt("category");
    f.subcategory = opt("subcategory");
    f.surface = opt("concept");
    f.context = opt("context");
    return f;
}

/// User-editable experiment request. Components are referenced by registry id.
struct ManifestDraft {
    std::string backend = "synthetic";
    std::string scorer = "mock";
    std::vector<PairFilter> selectors;  // union; empty means the whole taxonomy
    std::vector<Direction> directions{Direction::insertion};
    bool variants = false;              // include stored prompt paraphrases
    SeedPolicy seeds;
    std::optional<double> guidance_scale;
    std::string created_at;             // informational, excluded from the id

    static ManifestDraft from_json(const Json& j) {
        ManifestDraft d;
        d.backend = j.value("backend", d.backend);
        d.scorer = j.value("scorer", d.scorer);
        if (j.contains("selectors"))
            for (const auto& s : j.at("selectors")) d.selectors.push_back(filter_from_json(s));
        if (j.contains("directions")) {
            d.directions.clear();
            for (const auto& s : j.at("directions")) d.directions.push_back(direction_from_string(s.get<std::string>()));
        }
        d.variants = j.value("variants", false);
        if (j.contains("seeds")) d.seeds = SeedPolicy::from_json(j.at("seeds"));
        if (j.contains("guidance_scale")) d.guidance_scale = j.at("guidance_scale").get<double>();
        d.created_at = j.value("created_at", std::string{});
        return d;
    }
};

/// Frozen, content-addressed experiment description.
struct ExperimentManifest {
    std::string id;
    std::string taxonomy_version;
    std::string taxonomy_hash;
    std::string backend_id;
    Json backend_config;
    std::string scorer_id;
    Json scorer_config;
    std::size_t steps = 0;
    double guidance_scale = 0.0;
    SeedPolicy seeds;
    std::vector<std::string> pairs;  // resolved pair keys, sorted
    std::vector<Direction> directions;
    bool variants = false;
    std::size_t task_count = 0;
    std::string created_at;
    std::string status = "planned";

    /// Everything that determines results; the id is a hash of exactly this.
    Json content() const {
        Json dirs = Json::array();
        for (auto d : directions) dirs.push_back(to_string(d));
        return {{"taxonomy", {{"version", taxonomy_version}, {"hash", taxonomy_hash}}},
                {"backend", {{"id", backend_id}, {"config", backend_config}}},
                {"scorer", {{"id", scorer_id}, {"config", scorer_config}}},
                {"T", steps},
                {"guidance_scale", guidance_scale},
                {"seeds", seeds.to_json()},
                {"scope", {{"pairs", pairs}, {"directions", dirs}, {"variants", variants}}},
                {"task_count", task_count}};
    }

    std::string compute_id() const { return sha256_hex(content().dump()).substr(0, 16); }

    TimestepGrid grid() const { return TimestepGrid(steps); }

    Json to_json() const {
        Json j = content();
        j["id"] = id;
        j["created_at"] = created_at;
        j["status"] = status;
        j["schema_version"] = kSchemaVersion;
        return j;
    }

    static ExperimentManifest from_json(const Json& j) {
        try {
            ExperimentManifest m;
            m.id = j.at("id").get<std::string>();
            m.taxonomy_version = j.at("taxonomy").at("version").get<std::string>();
            m.taxonomy_hash = j.at("taxonomy").at("hash").get<std::string>();
            m.backend_id = j.at("backend").at("id").get<std::string>();
            m.backend_config = j.at("backend").at("config");
            m.scorer_id = j.at("scorer").at("id").get<std::string>();
            m.scorer_config = j.at("scorer").at("config");
            m.steps = j.at("T").get<std::size_t>();
            m.guidance_scale = j.at("guidance_scale").get<double>();
            m.seeds = SeedPolicy::from_json(j.at("seeds"));
            m.pairs = j.at("scope").at("pairs").get<std::vector<std::string>>();
            for (const auto& d : j.at("scope").at("directions")) m.directions.push_back(direction_from_string(d.get<std::string>()));
            m.variants = j.at("scope").at("variants").get<bool>();
            m.task_count = j.at("task_count").get<std::size_t>();
            m.created_at = j.value("created_at", std::string{});
            m.status = j.value("status", std::string("planned"));
            if (m.compute_id() != m.id) throw ValidationError("manifest content does not match its id " + m.id);
            return m;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("malformed manifest: ") + e.what(), "/");
        }
    }
};

inline std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Resolves every reference, expands the scope to pair keys and freezes the
/// result. Identical drafts give identical ids.
inline ExperimentManifest plan_experiment(const ManifestDraft& draft, const Taxonomy& taxonomy, const Registry& registry) {
    if (draft.directions.empty()) throw ValidationError("manifest needs at least one direction");
    if (draft.seeds.count == 0) throw ValidationError("seed count must be at least 1");
    if (draft.seeds.candidate_count() < draft.seeds.count) throw ValidationError("fewer candidate seeds than the seed count");

    ExperimentManifest m;
    m.taxonomy_version = taxonomy.version();
    m.taxonomy_hash = taxonomy_hash(taxonomy);
    m.backend_config = resolve_backend_config(registry.backend(draft.backend), taxonomy);
    m.scorer_config = registry.scorer(draft.scorer);
    const auto backend = make_backend(m.backend_config);
    const auto scorer = make_scorer(m.scorer_config);
    m.backend_id = backend->id();
    m.scorer_id = scorer->id();
    m.steps = backend->grid().steps();
    m.guidance_scale = draft.guidance_scale.value_or(backend->guidance_scale());
    if (!(m.guidance_scale >= 0.0)) throw ValidationError("guidance scale must be non-negative");
    m.seeds = draft.seeds;
    m.seeds.candidates = draft.seeds.candidate_count();
    m.variants = draft.variants;
    m.directions = draft.directions;
    std::sort(m.directions.begin(), m.directions.end());
    m.directions.erase(std::unique(m.directions.begin(), m.directions.end()), m.directions.end());

    std::vector<PairFilter> selectors = draft.selectors;
    if (selectors.empty()) selectors.push_back({});
    std::set<std::string> keys;
    for (const auto& sel : selectors) {
        std::vector<PromptPair> found;
        try {
            found = enumerate_pairs(taxonomy, sel);
        } catch (const LookupError& e) {
            throw ValidationError(e.what());
        }
        for (const auto& p : found) {
            keys.insert(p.key());
            if (draft.variants)
                for (const auto& v : variant_set(taxonomy, p).variants) keys.insert(v.key());
        }
    }
    if (keys.empty()) throw ValidationError("manifest scope selects no pairs");
    m.pairs.assign(keys.begin(), keys.end());
    m.task_count = m.pairs.size() * m.seeds.count * (m.steps + 1) * m.directions.size();
    m.id = m.compute_id();
    m.created_at = draft.created_at.empty() ? utc_now() : draft.created_at;
    return m;
}

}  // namespace cisprobe::runner
