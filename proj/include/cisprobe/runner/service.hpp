// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <condition_variable>
#include <deque>
#include <mutex>
#include <optional>
#include <string>
#include <thread>

#include "cisprobe/editeval.hpp"
#include "cisprobe/runner/registry.hpp"
#include "cisprobe/runner/report.hpp"
#include "cisprobe/runner/store.hpp"
#include "httplib.h"

namespace cisprobe::runner {

struct EditRequest {
    std::string manifest;
    std::string pair;
    double probability = 0.5;
    std::uint64_t seed = 0;
    bool dry_run = false;

    static EditRequest from_json(const Json& j) {
        try {
            return {j.at("manifest").get<std::string>(), j.at("pair").get<std::string>(), j.at("probability").get<double>(),
                    j.value("seed", std::uint64_t{0}), j.value("dry_run", false)};
        } catch (const nlohmann::json::exception& e) {
            throw ArgumentError(std::string("edit request needs manifest, pair, probability: ") + e.what());
        }
    }

    std::string job_id() const {
        return sha256_hex(Json{{"manifest", manifest}, {"pair", pair}, {"probability", probability}, {"seed", seed}}.dump()).substr(0, 16);
    }
};

/// Where a probability lands on a curve, before anything is generated.
struct EditSelection {
    std::size_t step = 0;
    double tau = 0.0;
    double predicted = 0.0;
    bool out_of_range = false;  // p outside [min C, max C]

    Json to_json() const { return {{"step", step}, {"tau", tau}, {"predicted", predicted}, {"out_of_range", out_of_range}}; }
};

inline EditSelection select_edit(const CisCurve& curve, double p) {
    EditSelection s;
    s.step = edit_at_probability(curve, p);
    s.tau = curve.points.at(s.step).tau;
    s.predicted = *curve.points.at(s.step).estimate;
    double lo = 1.0, hi = 0.0;
    for (const auto& pt : curve.points) {
        if (!pt.defined()) continue;
        lo = std::min(lo, *pt.estimate);
        hi = std::max(hi, *pt.estimate);
    }
    s.out_of_range = p < lo || p > hi;
    return s;
}

struct ServiceOptions {
    std::optional<Taxonomy> taxonomy;
    Json embedding_config{{"type", "synthetic"}, {"dimension", 64}};
};

/// HTTP front of a results store. Reads run concurrently on the server
/// threads; edit jobs go through one queue drained by a single worker.
class Service {
public:
    Service(ResultsStore& store, ServiceOptions options = {}) : store_(store), options_(std::move(options)) {
        make_embeddings(options_.embedding_config);  // fail early on a bad config
        routes();
        worker_ = std::thread([this] { drain(); });
    }

    ~Service() {
        stop();
        {
            std::lock_guard lock(queue_mutex_);
            closing_ = true;
        }
        queue_cv_.notify_all();
        if (worker_.joinable()) worker_.join();
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds the listening socket; port 0 picks a free port. Returns the port.
    int bind(const std::string& host, int port) {
        int bound = port;
        if (port == 0) {
            bound = server_.bind_to_any_port(host);
            if (bound < 0) throw Error("cannot bind " + host);
        } else if (!server_.bind_to_port(host, port)) {
            throw Error("cannot bind " + host + ":" + std::to_string(port));
        }
        return bound;
    }

    void start() {
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }

    /// Blocks until stop() is called from elsewhere.
    void run() { server_.listen_after_bind(); }

    void stop() {
        server_.stop();
        if (listener_.joinable()) listener_.join();
    }

    /// Handles POST /edits. Returns (HTTP status, body).
    std::pair<int, Json> submit_edit(const EditRequest& req) {
        const auto m = store_.load_manifest(req.manifest);
        if (std::find(m.pairs.begin(), m.pairs.end(), req.pair) == m.pairs.end()) throw NotFoundError("pair \"" + req.pair + "\" not in manifest");
        const auto curve = find_curve(store_, m, req.pair, Direction::insertion);
        if (!curve) throw NotFoundError("manifest has no insertion curve for \"" + req.pair + "\"");
        if (!curve->curve.any_defined()) throw StateError("insertion curve for \"" + req.pair + "\" has no data yet");
        const auto sel = select_edit(curve->curve, req.probability);
        Json body = sel.to_json();
        body["schema_version"] = kSchemaVersion;
        if (req.dry_run) {
            body["dry_run"] = true;
            return {200, body};
        }
        const auto id = req.job_id();
        body["job_id"] = id;
        if (auto existing = store_.load_edit_job(id); existing && existing->value("status", "") == "done") {
            body["status"] = "done";
            return {200, body};
        }
        store_.save_edit_job(id, Json{{"job_id", id},
                                      {"status", "queued"},
                                      {"manifest", req.manifest},
                                      {"pair", req.pair},
                                      {"probability", req.probability},
                                      {"seed", req.seed},
                                      {"schema_version", kSchemaVersion}});
        {
            std::lock_guard lock(queue_mutex_);
            queue_.push_back(req);
            ++pending_;
        }
        queue_cv_.notify_all();
        body["status"] = "queued";
        return {202, body};
    }

    /// Blocks until the edit queue is empty.
    void wait_idle() {
        std::unique_lock lock(queue_mutex_);
        idle_cv_.wait(lock, [this] { return pending_ == 0; });
    }

private:
    void drain() {
        for (;;) {
            EditRequest req;
            {
                std::unique_lock lock(queue_mutex_);
                queue_cv_.wait(lock, [this] { return closing_ || !queue_.empty(); });
                if (queue_.empty()) return;
                req = queue_.front();
                queue_.pop_front();
            }
            process(req);
            {
                std::lock_guard lock(queue_mutex_);
                --pending_;
            }
            idle_cv_.notify_all();
        }
    }

    void process(const EditRequest& req) {
        const auto id = req.job_id();
        Json job{{"job_id", id}, {"manifest", req.manifest}, {"pair", req.pair}, {"probability", req.probability}, {"seed", req.seed},
                 {"schema_version", kSchemaVersion}};
        try {
            const auto m = store_.load_manifest(req.manifest);
            const auto pair = store_.load_taxonomy(m.id).pair(req.pair);
            const auto curve = find_curve(store_, m, req.pair, Direction::insertion);
            if (!curve) throw NotFoundError("no insertion curve for \"" + req.pair + "\"");
            const auto backend = make_backend(m.backend_config);
            const auto emb = make_embeddings(options_.embedding_config);
            const auto result = edit_with_probability(pair, curve->curve, req.probability, req.seed, *backend, *emb, m.id + ":" + req.pair);
            job["status"] = "done";
            job["step"] = result.step;
            job["tau"] = result.tau;
            job["predicted"] = result.predicted;
            job["base_image_ref"] = store_.put_image(result.base_image);
            job["image_ref"] = store_.put_image(result.edited_image);
            job["tags"] = result.edited_image.tags;
            job["report"] = result.report.to_json();
        } catch (const std::exception& e) {
            job["status"] = "failed";
            job["error"] = e.what();
        }
        store_.save_edit_job(id, job);
    }

    static void send(httplib::Response& res, int status, Json body) {
        if (!body.contains("schema_version")) body["schema_version"] = kSchemaVersion;
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    template <class Fn>
    static void guarded(httplib::Response& res, Fn&& fn) {
        try {
            fn();
        } catch (const NotFoundError& e) {
            send(res, 404, {{"error", e.what()}});
        } catch (const LookupError& e) {
            send(res, 404, {{"error", e.what()}});
        } catch (const StateError& e) {
            send(res, 409, {{"error", e.what()}});
        } catch (const ArgumentError& e) {
            send(res, 400, {{"error", e.what()}});
        } catch (const ValidationError& e) {
            send(res, 400, {{"error", e.what()}});
        } catch (const ParseError& e) {
            send(res, 400, {{"error", e.what()}});
        } catch (const nlohmann::json::exception& e) {
            send(res, 400, {{"error", e.what()}});
        } catch (const std::exception& e) {
            send(res, 500, {{"error", e.what()}});
        }
    }

    ExperimentManifest manifest_or_404(const std::string& id) const {
        if (!store_.has_manifest(id)) throw NotFoundError("unknown manifest \"" + id + "\"");
        return store_.load_manifest(id);
    }

    void routes() {
        server_.Get("/taxonomy", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                if (!options_.taxonomy) throw NotFoundError("service started without a taxonomy");
                send(res, 200, {{"taxonomy", to_json(*options_.taxonomy)}, {"hash", taxonomy_hash(*options_.taxonomy)}});
            });
        });

        server_.Get("/manifests", [this](const httplib::Request&, httplib::Response& res) {
            guarded(res, [&] {
                Json list = Json::array();
                for (const auto& id : store_.list_manifests()) {
                    const auto m = store_.load_manifest(id);
                    list.push_back({{"id", m.id}, {"status", m.status}, {"task_count", m.task_count}, {"created_at", m.created_at}, {"pairs", m.pairs.size()}});
                }
                send(res, 200, {{"manifests", list}});
            });
        });

        server_.Get(R"(/manifests/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] { send(res, 200, {{"manifest", manifest_or_404(req.matches[1]).to_json()}}); });
        });

        server_.Get(R"(/manifests/([^/]+)/curves)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto m = manifest_or_404(req.matches[1]);
                if (!req.has_param("pair")) throw ArgumentError("query parameter \"pair\" is required");
                const auto pair = req.get_param_value("pair");
                const auto dir = req.has_param("direction") ? direction_from_string(req.get_param_value("direction")) : Direction::insertion;
                const auto pc = find_curve(store_, m, pair, dir);
                if (!pc) throw NotFoundError("no curve for \"" + pair + "\" [" + to_string(dir) + "]");
                Json columns = Json::array();
                std::stringstream cols{std::string(kCurveColumns)};
                for (std::string c; std::getline(cols, c, ',');) columns.push_back(c);
                send(res, 200, {{"manifest_id", m.id},
                                {"pair", pair},
                                {"direction", to_string(dir)},
                                {"kind", to_string(pc->curve.kind)},
                                {"columns", columns},
                                {"rows", curve_rows_json(pc->curve)},
                                {"summary", summary_json(pc->summary)},
                                {"monotonicity_violations", pc->curve.monotonicity_violations()},
                                {"missing_cells", pc->missing_cells},
                                {"recommended_band", {0.5, 0.7}},
                                {"csv", curve_to_csv(pc->curve)}});
            });
        });

        server_.Get(R"(/manifests/([^/]+)/summary)", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto m = manifest_or_404(req.matches[1]);
                Json pairs = Json::array();
                std::map<Direction, std::vector<CrossingSummary>> by_dir;
                for (const auto& pc : compute_curves(store_, m)) {
                    Json row = summary_json(pc.summary);
                    row["pair"] = pc.pair;
                    row["direction"] = to_string(pc.direction);
                    row["missing_cells"] = pc.missing_cells;
                    row["monotonicity_violations"] = pc.curve.monotonicity_violations();
                    pairs.push_back(row);
                    if (pc.direction == Direction::insertion && pc.curve.any_defined()) by_dir[pc.direction].push_back(pc.summary);
                }
                Json aggregates = Json::object();
                for (const auto& [dir, list] : by_dir) aggregates[to_string(dir)] = aggregate_json(aggregate(list));
                send(res, 200, {{"manifest_id", m.id}, {"status", m.status}, {"pairs", pairs}, {"aggregates", aggregates}});
            });
        });

        server_.Post("/edits", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                auto [status, body] = submit_edit(EditRequest::from_json(Json::parse(req.body)));
                send(res, status, body);
            });
        });

        server_.Get(R"(/edits/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto job = store_.load_edit_job(req.matches[1]);
                if (!job) throw NotFoundError("unknown edit job");
                send(res, 200, *job);
            });
        });

        server_.Get(R"(/images/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
            guarded(res, [&] {
                const auto bytes = store_.image_bytes(req.matches[1]);
                if (!bytes) throw NotFoundError("unknown image");
                res.status = 200;
                res.set_header("X-Schema-Version", std::to_string(kSchemaVersion));
                res.set_content(*bytes, "image/x-portable-pixmap");
            });
        });
    }

    ResultsStore& store_;
    ServiceOptions options_;
    httplib::Server server_;
    std::thread listener_;
    std::thread worker_;
    std::mutex queue_mutex_;
    std::condition_variable queue_cv_;
    std::condition_variable idle_cv_;
    std::deque<EditRequest> queue_;
    std::size_t pending_ = 0;
    bool closing_ = false;
};

}  // namespace cisprobe::runner
