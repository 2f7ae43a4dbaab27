// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "cisprobe/runner/execute.hpp"
#include "cisprobe/runner/store.hpp"
#include "cisprobe/stats.hpp"

namespace cisprobe::runner {

/// Curve of one (pair, direction) computed from the stored log.
struct PairCurve {
    std::string pair;
    Direction direction = Direction::insertion;
    std::vector<std::uint64_t> seeds;
    CisCurve curve;
    CrossingSummary summary;
    std::size_t missing_cells = 0;
};

/// Outcome curves for the requested pairs (all manifest pairs when empty).
/// Rows are the stored seed pool of each pair; cells without a successful
/// record stay missing and are counted. Crossing times are summarized for
/// insertion curves only: on a persistence curve min{tau : C >= q} is 0.
inline std::vector<PairCurve> compute_curves(const ResultsStore& store, const ExperimentManifest& m, const std::vector<std::string>& only = {}) {
    const auto taxonomy = store.load_taxonomy(m.id);
    const auto records = latest_per_fingerprint(store.read_log(m.id).records);
    const auto grid = m.grid();
    std::vector<PairCurve> out;
    for (const auto& key : m.pairs) {
        if (!only.empty() && std::find(only.begin(), only.end(), key) == only.end()) continue;
        const auto pair = taxonomy.pair(key);
        std::vector<std::uint64_t> seeds;
        if (auto pool = store.load_seed_pool(m.id, key)) {
            for (const auto& s : pool->valid()) seeds.push_back(s.seed);
            if (seeds.size() > m.seeds.count) seeds.resize(m.seeds.count);
        }
        for (auto dir : m.directions) {
            PairCurve pc;
            pc.pair = key;
            pc.direction = dir;
            pc.seeds = seeds;
            const auto matrix = OutcomeMatrix::from_records(records, grid, dir, key, pair.entry.surface, seeds);
            pc.curve = estimate_curve(matrix);
            pc.curve.label = key;
            for (std::size_t r = 0; r < matrix.rows(); ++r)
                for (std::size_t k = 0; k < matrix.columns(); ++k) pc.missing_cells += matrix.at(r, k) == Cell::missing;
            if (matrix.rows() == 0) pc.missing_cells = m.seeds.count * grid.size();
            if (dir == Direction::insertion && pc.curve.any_defined()) pc.summary = summarize(pc.curve);
            out.push_back(std::move(pc));
        }
    }
    return out;
}

inline std::optional<PairCurve> find_curve(const ResultsStore& store, const ExperimentManifest& m, const std::string& pair, Direction dir) {
    if (std::find(m.pairs.begin(), m.pairs.end(), pair) == m.pairs.end()) return std::nullopt;
    if (std::find(m.directions.begin(), m.directions.end(), dir) == m.directions.end()) return std::nullopt;
    for (auto& pc : compute_curves(store, m, {pair}))
        if (pc.direction == dir) return pc;
    return std::nullopt;
}

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline Json summary_json(const CrossingSummary& s) {
    return {{"tau50", optional_json(s.tau50)},
            {"tau70", optional_json(s.tau70)},
            {"bandwidth", optional_json(s.bandwidth)},
            {"tau50_defined", s.tau50.has_value()},
            {"tau70_defined", s.tau70.has_value()},
            {"bandwidth_defined", s.bandwidth.has_value()}};
}

/// Curve rows in export-column order: step_k, tau, n, yes, estimate, wilson_lo, wilson_hi.
inline Json curve_rows_json(const CisCurve& curve) {
    Json rows = Json::array();
    for (const auto& p : curve.points)
        rows.push_back({p.k, p.tau, p.n, p.yes, optional_json(p.estimate), p.lo, p.hi});
    return rows;
}

inline Json plot_json(const PairCurve& pc) {
    Json series = Json::array();
    for (const auto& p : pc.curve.points)
        series.push_back({{"tau", p.tau}, {"estimate", optional_json(p.estimate)}, {"lo", p.lo}, {"hi", p.hi}});
    return {{"pair", pc.pair},
            {"direction", to_string(pc.direction)},
            {"kind", to_string(pc.curve.kind)},
            {"series", series},
            {"markers", summary_json(pc.summary)},
            {"recommended_band", {0.5, 0.7}}};
}

inline Json aggregate_json(const AggregateReport& report) {
    Json stats = Json::array(), omitted = Json::array();
    for (const auto& s : report.stats) {
        stats.push_back({{"name", s.name}, {"mean", s.mean}, {"std", s.std}, {"n_defined", s.n_defined}, {"n_undefined", s.n_undefined},
                         {"single", s.single}});
    }
    for (const auto& [name, n] : report.omitted) omitted.push_back({{"name", name}, {"n_undefined", n}});
    return {{"stats", stats}, {"omitted", omitted}};
}

inline std::string artifact_stem(const std::string& pair, Direction dir) {
    return sha256_hex(pair).substr(0, 16) + "." + to_string(dir);
}

struct ReportBundle {
    std::string manifest_id;
    std::map<std::string, std::string> files;  // relative path -> sha256
    bool partial = false;
    std::vector<std::string> incomplete;       // "pair [direction]: n missing"

    /// Hash over the index; equal bundles have equal digests.
    std::string digest() const {
        Json j = files;
        return sha256_hex(j.dump());
    }
};

/// Writes the export bundle for the given pairs (all when empty):
///   curves/<stem>.csv, summaries/<stem>.csv, plots/<stem>.json,
///   summaries.csv, aggregates.json, plots/overlay.<direction>.json,
///   variants/<stem>.json (when paraphrases are in scope), presence.csv,
///   index.json (every other file with its hash).
inline ReportBundle report(ResultsStore& store, const std::string& manifest_id, const std::vector<std::string>& scope = {}) {
    const auto m = store.load_manifest(manifest_id);
    for (const auto& key : scope)
        if (std::find(m.pairs.begin(), m.pairs.end(), key) == m.pairs.end()) throw NotFoundError("pair \"" + key + "\" not in manifest");
    const auto taxonomy = store.load_taxonomy(m.id);
    const auto curves = compute_curves(store, m, scope);

    ReportBundle bundle;
    bundle.manifest_id = m.id;
    auto put = [&](const std::string& rel, const std::string& content) { bundle.files[rel] = store.write_artifact(m.id, rel, content); };

    std::string index_csv = "pair,direction," + std::string(kSummaryColumns) + ",monotonicity_violations,missing_cells\n";
    std::map<std::pair<std::string, Direction>, std::vector<CrossingSummary>> by_subcategory;
    std::map<Direction, Json> overlays;
    for (const auto& pc : curves) {
        const auto stem = artifact_stem(pc.pair, pc.direction);
        put("curves/" + stem + ".csv", curve_to_csv(pc.curve));
        put("summaries/" + stem + ".csv", std::string(kSummaryColumns) + "\n" + summary_row(pc.summary) + "\n");
        const auto plot = plot_json(pc);
        put("plots/" + stem + ".json", plot.dump(2) + "\n");
        overlays[pc.direction].push_back(plot);
        index_csv += "\"" + pc.pair + "\"," + to_string(pc.direction) + "," + summary_row(pc.summary) + "," +
                     std::to_string(pc.curve.monotonicity_violations()) + "," + std::to_string(pc.missing_cells) + "\n";
        if (pc.missing_cells > 0) {
            bundle.partial = true;
            bundle.incomplete.push_back(pc.pair + " [" + to_string(pc.direction) + "]: " + std::to_string(pc.missing_cells) + " missing");
        }
        const auto pair = taxonomy.pair(pc.pair);
        if (pc.direction == Direction::insertion && pc.curve.any_defined() && pair.variant == 0)
            by_subcategory[{pair.entry.category + "|" + pair.entry.subcategory, pc.direction}].push_back(pc.summary);
    }
    put("summaries.csv", index_csv);
    for (const auto& [dir, series] : overlays)
        put("plots/overlay." + to_string(dir) + ".json", Json{{"direction", to_string(dir)}, {"series", series}}.dump(2) + "\n");

    Json aggregates = Json::array();
    for (const auto& [key, summaries] : by_subcategory) {
        aggregates.push_back({{"subcategory", key.first}, {"direction", to_string(key.second)}, {"pairs", summaries.size()},
                              {"aggregate", aggregate_json(aggregate(summaries))}});
    }
    put("aggregates.json", Json{{"groups", aggregates}, {"schema_version", kSchemaVersion}}.dump(2) + "\n");

    // Prompt-robustness bundles: canonical wording and its paraphrases side by side.
    if (m.variants) {
        std::map<std::pair<std::string, Direction>, Json> groups;
        for (const auto& pc : curves) {
            const auto hash = pc.pair.rfind("#v");
            const auto base_key = hash == std::string::npos ? pc.pair : pc.pair.substr(0, hash);
            groups[{base_key, pc.direction}].push_back(plot_json(pc));
        }
        for (const auto& [key, series] : groups) {
            if (series.size() < 2) continue;
            put("variants/" + artifact_stem(key.first, key.second) + ".json",
                Json{{"pair", key.first}, {"direction", to_string(key.second)}, {"series", series}}.dump(2) + "\n");
        }
    }

    std::string presence = "pair,total,present,fraction_present,negative_guidance_used\n";
    for (const auto& key : m.pairs) {
        if (!scope.empty() && std::find(scope.begin(), scope.end(), key) == scope.end()) continue;
        if (auto pool = store.load_seed_pool(m.id, key)) {
            const auto outcomes = presence_outcomes(*pool);
            const auto rows = presence_report({{key, outcomes}});
            if (rows.empty()) continue;
            presence += "\"" + key + "\"," + std::to_string(rows[0].total) + "," + std::to_string(rows[0].present) + "," +
                        format_double(rows[0].fraction_present) + "," + (pool->negative_guidance_used ? "1" : "0") + "\n";
        }
    }
    put("presence.csv", presence);

    Json index{{"manifest_id", m.id},
               {"schema_version", kSchemaVersion},
               {"partial", bundle.partial},
               {"incomplete", bundle.incomplete},
               {"files", bundle.files}};
    store.write_artifact(m.id, "index.json", index.dump(2) + "\n");
    return bundle;
}

}  // namespace cisprobe::runner
