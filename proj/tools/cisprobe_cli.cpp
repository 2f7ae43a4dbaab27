// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: plan, run, curve, stats, bootstrap, cds, edit,
// report, serve.

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "cisprobe/cisprobe.hpp"

using namespace cisprobe;
using namespace cisprobe::runner;

namespace {

struct Globals {
    std::string taxonomy_path = "data/taxonomy.json";
    std::string store_path = "results";
    std::string backend_config;
    std::string scorer_config;
    std::string embedding_config;
    std::size_t workers = 1;
};

Json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open " + path);
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("bad JSON in ") + path + ": " + e.what(), "/");
    }
}

Direction parse_direction(const std::string& s) { return direction_from_string(s); }

std::string resolve_pair(const ExperimentManifest& m, const std::string& pair) {
    if (!pair.empty()) return pair;
    if (m.pairs.size() == 1) return m.pairs.front();
    throw ArgumentError("manifest has " + std::to_string(m.pairs.size()) + " pairs; choose one with --pair");
}

PairCurve require_curve(const ResultsStore& store, const ExperimentManifest& m, const std::string& pair, Direction dir) {
    auto pc = find_curve(store, m, pair, dir);
    if (!pc) throw NotFoundError("no " + to_string(dir) + " curve for \"" + pair + "\" in manifest " + m.id);
    return *pc;
}

void print(const Json& j) { std::cout << j.dump(2) << "\n"; }

Service* g_service = nullptr;

void on_signal(int) {
    if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cisprobe: concept insertion/deletion timing toolkit"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--taxonomy", g.taxonomy_path, "Taxonomy document")->capture_default_str();
    app.add_option("--store", g.store_path, "Results store directory")->capture_default_str();
    app.add_option("--backend-config", g.backend_config, "Backend config file; overrides the backend named in the draft");
    app.add_option("--scorer-config", g.scorer_config, "Scorer config file; overrides the scorer named in the draft");
    app.add_option("--embedding-config", g.embedding_config, "Embedding config file for edits");
    app.add_option("--workers", g.workers, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);

    // plan
    auto* plan = app.add_subcommand("plan", "Freeze an experiment manifest");
    std::string draft_path, category, subcategory, concept_name, context;
    std::vector<std::string> directions{"insertion"};
    bool variants = false, no_filter = false, no_negative = false;
    std::size_t seed_count = 100, candidates = 0;
    std::uint64_t rng_seed = 0;
    double guidance_scale = -1.0;
    plan->add_option("--draft", draft_path, "Draft JSON; other scope flags are ignored when given");
    plan->add_option("--category", category);
    plan->add_option("--subcategory", subcategory);
    plan->add_option("--concept", concept_name);
    plan->add_option("--context", context);
    plan->add_option("--direction", directions, "insertion and/or deletion")->capture_default_str();
    plan->add_flag("--variants", variants, "Include stored paraphrases");
    plan->add_option("--seeds", seed_count, "Valid seeds per pair")->capture_default_str();
    plan->add_option("--candidates", candidates, "Candidate seeds per pair (default 4x seeds)");
    plan->add_option("--rng-seed", rng_seed, "Seed-candidate stream")->capture_default_str();
    plan->add_flag("--no-filter", no_filter, "Skip concept-presence seed filtering");
    plan->add_flag("--no-negative-fallback", no_negative, "Never escalate to negative guidance");
    plan->add_option("--guidance", guidance_scale, "Guidance scale (backend default when omitted)");

    // run
    auto* run = app.add_subcommand("run", "Execute (or resume) a manifest");
    std::string manifest_id;
    std::size_t max_tasks = 0;
    bool keep_images = false;
    run->add_option("--manifest", manifest_id)->required();
    run->add_option("--max-tasks", max_tasks, "Stop after this many new tasks");
    run->add_flag("--keep-images", keep_images, "Store every generated image");

    // curve / cds
    std::string pair_key, direction = "insertion";
    auto* curve = app.add_subcommand("curve", "Print a curve as CSV");
    curve->add_option("--manifest", manifest_id)->required();
    curve->add_option("--pair", pair_key);
    curve->add_option("--direction", direction)->capture_default_str();
    auto* cds = app.add_subcommand("cds", "Print the deletion persistence curve as CSV");
    cds->add_option("--manifest", manifest_id)->required();
    cds->add_option("--pair", pair_key);

    // stats
    auto* stats = app.add_subcommand("stats", "Crossing times per pair and their aggregate");
    stats->add_option("--manifest", manifest_id)->required();

    // bootstrap
    auto* boot = app.add_subcommand("bootstrap", "Seed-budget stability analysis");
    std::vector<std::size_t> ks;
    BootstrapOptions bopts;
    bool thresholds_given = false;
    boot->add_option("--manifest", manifest_id)->required();
    boot->add_option("--pair", pair_key);
    boot->add_option("--direction", direction)->capture_default_str();
    boot->add_option("--k", ks, "Subsample sizes (default 1..N)");
    boot->add_option("--resamples", bopts.resamples)->capture_default_str();
    auto* vt = boot->add_option("--variance-threshold", bopts.variance_threshold)->capture_default_str();
    auto* dt = boot->add_option("--deviation-threshold", bopts.deviation_threshold)->capture_default_str();
    boot->add_option("--rng-seed", bopts.rng_seed)->capture_default_str();

    // edit
    auto* edit = app.add_subcommand("edit", "Edit at a target insertion probability");
    double probability = 0.6;
    std::uint64_t edit_seed = 0;
    bool dry_run = false;
    edit->add_option("--manifest", manifest_id)->required();
    edit->add_option("--pair", pair_key);
    edit->add_option("-p,--probability", probability)->capture_default_str()->check(CLI::Range(0.0, 1.0));
    edit->add_option("--seed", edit_seed)->capture_default_str();
    edit->add_flag("--dry-run", dry_run, "Only report the selected step");

    // report
    auto* rep = app.add_subcommand("report", "Write the export bundle");
    std::vector<std::string> scope;
    rep->add_option("--manifest", manifest_id)->required();
    rep->add_option("--pair", scope, "Restrict to these pairs");

    // pairs
    auto* pairs = app.add_subcommand("pairs", "List taxonomy pairs");
    pairs->add_option("--category", category);
    pairs->add_option("--subcategory", subcategory);
    pairs->add_option("--concept", concept_name);
    pairs->add_option("--context", context);

    // serve
    auto* serve = app.add_subcommand("serve", "Serve the results store over HTTP");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--host", host)->capture_default_str();
    serve->add_option("--port", port)->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    auto opt = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<std::string>(s); };
    try {
        if (*pairs) {
            const auto taxonomy = load_taxonomy_file(g.taxonomy_path);
            for (const auto& p : enumerate_pairs(taxonomy, {opt(category), opt(subcategory), opt(concept_name), opt(context)}))
                std::cout << p.key() << "\t" << p.base_prompt << "\t" << p.concept_prompt << "\n";
            return 0;
        }

        ResultsStore store(g.store_path);

        if (*plan) {
            const auto taxonomy = load_taxonomy_file(g.taxonomy_path);
            auto registry = Registry::with_defaults();
            ManifestDraft draft;
            if (!draft_path.empty()) {
                draft = ManifestDraft::from_json(read_json_file(draft_path));
            } else {
                if (opt(category) || opt(subcategory) || opt(concept_name) || opt(context))
                    draft.selectors.push_back({opt(category), opt(subcategory), opt(concept_name), opt(context)});
                draft.directions.clear();
                for (const auto& d : directions) draft.directions.push_back(parse_direction(d));
                draft.variants = variants;
                draft.seeds.count = seed_count;
                draft.seeds.candidates = candidates;
                draft.seeds.rng_seed = rng_seed;
                draft.seeds.filter = !no_filter;
                draft.seeds.negative_fallback = !no_negative;
                if (guidance_scale >= 0.0) draft.guidance_scale = guidance_scale;
            }
            if (!g.backend_config.empty()) {
                registry.add_backend("cli", read_json_file(g.backend_config));
                draft.backend = "cli";
            }
            if (!g.scorer_config.empty()) {
                registry.add_scorer("cli", read_json_file(g.scorer_config));
                draft.scorer = "cli";
            }
            const auto m = plan_experiment(draft, taxonomy, registry);
            const bool fresh = store.save_manifest(m, taxonomy);
            std::cerr << (fresh ? "planned " : "already planned ") << m.id << ": " << m.pairs.size() << " pairs, " << m.task_count << " tasks\n";
            std::cout << m.id << "\n";
            return 0;
        }

        if (*run) {
            ExecuteOptions eo;
            eo.workers = g.workers;
            if (max_tasks > 0) eo.max_tasks = max_tasks;
            eo.keep_images = keep_images;
            const auto summary = execute(store, manifest_id, eo);
            print(summary.to_json());
            return summary.complete() ? 0 : 3;
        }

        if (*curve || *cds) {
            const auto m = store.load_manifest(manifest_id);
            const auto dir = *cds ? Direction::deletion : parse_direction(direction);
            const auto pc = require_curve(store, m, resolve_pair(m, pair_key), dir);
            std::cout << curve_to_csv(pc.curve);
            if (pc.missing_cells) std::cerr << "warning: " << pc.missing_cells << " cells missing\n";
            return 0;
        }

        if (*stats) {
            const auto m = store.load_manifest(manifest_id);
            Json rows = Json::array();
            std::map<Direction, std::vector<CrossingSummary>> by_dir;
            for (const auto& pc : compute_curves(store, m)) {
                Json row = summary_json(pc.summary);
                row["pair"] = pc.pair;
                row["direction"] = to_string(pc.direction);
                row["missing_cells"] = pc.missing_cells;
                row["monotonicity_violations"] = pc.curve.monotonicity_violations();
                rows.push_back(row);
                if (pc.direction == Direction::insertion && pc.curve.any_defined()) by_dir[pc.direction].push_back(pc.summary);
            }
            Json aggregates = Json::object();
            for (const auto& [dir, list] : by_dir) aggregates[to_string(dir)] = aggregate_json(aggregate(list));
            print({{"manifest_id", m.id}, {"pairs", rows}, {"aggregates", aggregates}});
            return 0;
        }

        if (*boot) {
            const auto m = store.load_manifest(manifest_id);
            const auto key = resolve_pair(m, pair_key);
            const auto dir = parse_direction(direction);
            const auto pc = require_curve(store, m, key, dir);
            const auto taxonomy = store.load_taxonomy(m.id);
            const auto records = latest_per_fingerprint(store.read_log(m.id).records);
            const auto matrix = OutcomeMatrix::from_records(records, m.grid(), dir, key, taxonomy.pair(key).entry.surface, pc.seeds);
            bopts.ks = ks;
            if (bopts.ks.empty())
                for (std::size_t k = 1; k <= matrix.rows(); ++k) bopts.ks.push_back(k);
            bopts.workers = g.workers;
            thresholds_given = vt->count() > 0 || dt->count() > 0;
            const auto r = bootstrap_seed_budget(matrix, bopts);
            Json rows = Json::array();
            for (const auto& row : r.rows)
                rows.push_back({{"k", row.k}, {"mean_variance", row.mean_variance}, {"max_variance", row.max_variance},
                                {"max_deviation", row.max_deviation}, {"stable", row.stable}});
            print({{"pair", key},
                   {"direction", to_string(dir)},
                   {"seeds", matrix.rows()},
                   {"resamples", r.resamples},
                   {"variance_threshold", r.variance_threshold},
                   {"deviation_threshold", r.deviation_threshold},
                   {"default_thresholds", !thresholds_given},
                   {"smallest_stable_k", r.smallest_stable_k ? Json(*r.smallest_stable_k) : Json(nullptr)},
                   {"rows", rows}});
            return 0;
        }

        if (*edit) {
            const auto m = store.load_manifest(manifest_id);
            ServiceOptions so;
            if (!g.embedding_config.empty()) so.embedding_config = read_json_file(g.embedding_config);
            Service service(store, so);
            const EditRequest req{m.id, resolve_pair(m, pair_key), probability, edit_seed, dry_run};
            auto [status, body] = service.submit_edit(req);
            if (status == 202) {
                service.wait_idle();
                body = *store.load_edit_job(req.job_id());
            } else if (body.contains("job_id")) {
                body = *store.load_edit_job(req.job_id());
            }
            print(body);
            return body.value("status", "done") == "failed" ? 4 : 0;
        }

        if (*rep) {
            const auto bundle = report(store, manifest_id, scope);
            print({{"manifest_id", bundle.manifest_id},
                   {"digest", bundle.digest()},
                   {"partial", bundle.partial},
                   {"incomplete", bundle.incomplete},
                   {"directory", (store.manifest_dir(bundle.manifest_id) / "reports").string()},
                   {"files", bundle.files}});
            return bundle.partial ? 3 : 0;
        }

        if (*serve) {
            ServiceOptions so;
            so.taxonomy = load_taxonomy_file(g.taxonomy_path);
            if (!g.embedding_config.empty()) so.embedding_config = read_json_file(g.embedding_config);
            Service service(store, so);
            const int bound = service.bind(host, port);
            g_service = &service;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "serving " << g.store_path << " on http://" << host << ":" << bound << "\n";
            service.run();
            g_service = nullptr;
            return 0;
        }
    } catch (const InsufficientSeedsError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
