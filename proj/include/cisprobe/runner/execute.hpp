// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <set>
#include <string>
#include <vector>

#include "cisprobe/intervene.hpp"
#include "cisprobe/runner/manifest.hpp"
#include "cisprobe/runner/registry.hpp"
#include "cisprobe/runner/store.hpp"
#include "cisprobe/seedcontrol.hpp"

namespace cisprobe::runner {

struct ExecuteOptions {
    std::size_t workers = 1;
    /// Stop after this many new task attempts (used to simulate interruption).
    std::optional<std::size_t> max_tasks;
    bool keep_images = false;
};

struct CompletionSummary {
    std::string manifest_id;
    std::size_t total = 0;          // tasks in the manifest
    std::size_t completed = 0;      // tasks with a successful record after this call
    std::size_t failed = 0;         // attempted in this call and failed
    std::size_t skipped = 0;        // already complete before this call
    std::size_t new_completed = 0;  // completed in this call
    std::size_t blocked = 0;        // tasks of pairs without a usable seed pool
    std::size_t not_attempted = 0;  // left over because of max_tasks
    std::vector<std::string> pair_errors;

    bool complete() const { return completed == total; }

    Json to_json() const {
        return {{"manifest_id", manifest_id}, {"total", total},       {"completed", completed},         {"failed", failed},
                {"skipped", skipped},         {"new_completed", new_completed}, {"blocked", blocked},   {"not_attempted", not_attempted},
                {"pair_errors", pair_errors}, {"complete", complete()},          {"schema_version", kSchemaVersion}};
    }
};

/// Candidate seeds for one pair, independent of the manifest they appear in.
inline std::vector<std::uint64_t> pair_candidates(const std::string& pair_key, const SeedPolicy& policy) {
    return candidate_seeds(pair_key + "#" + std::to_string(policy.rng_seed), policy.candidate_count());
}

/// Builds (or reloads) the seed pool of a pair. Pools persist next to the
/// manifest so a resumed run reuses exactly the seeds of the first attempt.
inline SeedPool ensure_seed_pool(ResultsStore& store, const ExperimentManifest& m, const PromptPair& pair, const Backend& backend,
                                 std::size_t workers) {
    if (auto pool = store.load_seed_pool(m.id, pair.key())) return *pool;
    const auto candidates = pair_candidates(pair.key(), m.seeds);
    SeedPool pool;
    if (!m.seeds.filter) {
        pool.target_count = m.seeds.count;
        for (std::size_t i = 0; i < m.seeds.count; ++i) pool.entries.push_back({candidates[i], SeedStatus::valid, false, "unfiltered"});
    } else {
        const auto scorer = make_scorer(m.scorer_config);
        const SeedFilterOptions options{workers, m.guidance_scale};
        pool = m.seeds.negative_fallback ? controlled_seed_pool(pair, candidates, backend, *scorer, m.seeds.count, options)
                                         : filter_seeds(pair, candidates, backend, *scorer, m.seeds.count, options);
        if (pool.short_of_target()) throw InsufficientSeedsError(m.seeds.count, pool.valid_count(), pool.checked_count());
    }
    store.save_seed_pool(m.id, pair.key(), pool);
    return pool;
}

/// Every plan of the manifest for one pair: direction, then seed, then switch step.
inline std::vector<InterventionPlan> pair_plans(const ExperimentManifest& m, const PromptPair& pair, const SeedPool& pool) {
    std::vector<InterventionPlan> plans;
    auto seeds = pool.valid();
    seeds.resize(std::min(seeds.size(), m.seeds.count));
    const auto grid = m.grid();
    for (auto dir : m.directions)
        for (const auto& s : seeds)
            for (std::size_t k = 0; k <= grid.steps(); ++k)
                plans.push_back(make_plan(pair, dir, grid, k, s.seed, m.guidance_scale, dir == Direction::insertion && s.negative_guidance));
    return plans;
}

/// Runs every task not yet completed. Each task uses its own scorer instance
/// so answers never depend on scheduling. Failures are logged, not thrown.
inline CompletionSummary execute(ResultsStore& store, const std::string& manifest_id, const ExecuteOptions& options = {}) {
    const auto m = store.load_manifest(manifest_id);
    const auto taxonomy = store.load_taxonomy(manifest_id);
    const auto backend = make_backend(m.backend_config);
    if (backend->grid().steps() != m.steps) throw ValidationError("backend grid does not match manifest");

    CompletionSummary summary;
    summary.manifest_id = m.id;
    summary.total = m.task_count;

    std::set<std::string> done;
    for (const auto& r : store.read_log(m.id).records)
        if (r.ok()) done.insert(r.fingerprint);

    std::vector<InterventionPlan> pending;
    for (const auto& key : m.pairs) {
        const auto pair = taxonomy.pair(key);
        SeedPool pool;
        try {
            pool = ensure_seed_pool(store, m, pair, *backend, options.workers);
        } catch (const Error& e) {
            summary.pair_errors.push_back(key + ": " + e.what());
            summary.blocked += m.seeds.count * (m.steps + 1) * m.directions.size();
            continue;
        }
        for (auto& plan : pair_plans(m, pair, pool)) {
            if (done.count(plan.fingerprint())) {
                ++summary.skipped;
            } else {
                pending.push_back(std::move(plan));
            }
        }
    }

    if (options.max_tasks && pending.size() > *options.max_tasks) {
        summary.not_attempted = pending.size() - *options.max_tasks;
        pending.resize(*options.max_tasks);
    }

    store.update_status(m.id, "running");
    std::atomic<std::size_t> ok{0}, bad{0};
    parallel_for(pending.size(), std::max<std::size_t>(1, options.workers), [&](std::size_t i) {
        const auto& plan = pending[i];
        RunRecord record;
        try {
            const auto scorer = make_scorer(m.scorer_config);
            auto out = run_intervention(plan, *backend, *scorer);
            if (options.keep_images) store.put_image(out.image);
            record = std::move(out.record);
            ++ok;
        } catch (const std::exception& e) {
            record = detail::failed_record(plan, e.what());
            ++bad;
        }
        store.append_record(m.id, record);
    });

    summary.new_completed = ok;
    summary.failed = bad;
    summary.completed = summary.skipped + summary.new_completed;
    store.update_status(m.id, summary.complete() ? "complete" : "partial");
    return summary;
}

}  // namespace cisprobe::runner
