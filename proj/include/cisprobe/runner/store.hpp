// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cisprobe/intervene.hpp"
#include "cisprobe/runner/manifest.hpp"
#include "cisprobe/seedcontrol.hpp"

namespace cisprobe::runner {

namespace fs = std::filesystem;

inline Json record_to_json(const std::string& manifest_id, const RunRecord& r) {
    Json outcomes = Json::object();
    for (const auto& [k, v] : r.outcomes) outcomes[k] = to_string(v);
    Json j{{"manifest_id", manifest_id}, {"fingerprint", r.fingerprint}, {"pair", r.pair_key},   {"direction", to_string(r.direction)},
           {"seed", r.seed},             {"switch_k", r.switch_k},       {"tau", r.tau},         {"outcomes", outcomes},
           {"image_ref", r.image_ref},   {"scorer_id", r.scorer_id},     {"wall_ms", r.wall_ms}, {"schema_version", kSchemaVersion}};
    if (r.error) j["error"] = *r.error;
    return j;
}

inline RunRecord record_from_json(const Json& j) {
    RunRecord r;
    r.fingerprint = j.at("fingerprint").get<std::string>();
    r.pair_key = j.at("pair").get<std::string>();
    r.direction = direction_from_string(j.at("direction").get<std::string>());
    r.seed = j.at("seed").get<std::uint64_t>();
    r.switch_k = j.at("switch_k").get<std::size_t>();
    r.tau = j.at("tau").get<double>();
    for (const auto& [k, v] : j.at("outcomes").items()) r.outcomes[k] = answer_from_string(v.get<std::string>());
    r.image_ref = j.at("image_ref").get<std::string>();
    r.scorer_id = j.at("scorer_id").get<std::string>();
    r.wall_ms = j.at("wall_ms").get<double>();
    if (j.contains("error")) r.error = j.at("error").get<std::string>();
    return r;
}

struct LogContents {
    std::vector<RunRecord> records;  // file order
    std::size_t skipped_lines = 0;   // torn or foreign lines
};

/// Keeps the last successful record per fingerprint, falling back to the last
/// failure when a cell never succeeded.
inline std::vector<RunRecord> latest_per_fingerprint(const std::vector<RunRecord>& records) {
    std::map<std::string, std::size_t> pick;
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto [it, inserted] = pick.try_emplace(records[i].fingerprint, i);
        if (!inserted && (records[i].ok() || !records[it->second].ok())) it->second = i;
    }
    std::vector<RunRecord> out;
    out.reserve(pick.size());
    for (const auto& [_, i] : pick) out.push_back(records[i]);
    return out;
}

/// Filesystem layout under the root:
///   manifests/<id>/manifest.json, taxonomy.json, runs.ndjson, seeds/, reports/
///   images/<ref>.ppm
///   edits/<job id>.json
class ResultsStore {
public:
    explicit ResultsStore(fs::path root) : root_(std::move(root)) {
        fs::create_directories(root_ / "manifests");
        fs::create_directories(root_ / "images");
        fs::create_directories(root_ / "edits");
    }

    const fs::path& root() const noexcept { return root_; }
    fs::path manifest_dir(const std::string& id) const { return root_ / "manifests" / id; }

    static void write_file(const fs::path& path, const std::string& content) {
        fs::create_directories(path.parent_path());
        const fs::path tmp = path.string() + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
            if (!out) throw Error("cannot write " + tmp.string());
            out << content;
        }
        fs::rename(tmp, path);
    }

    static std::string read_file(const fs::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw NotFoundError("no such file " + path.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        return ss.str();
    }

    // Manifests ---------------------------------------------------------------

    /// Stores the manifest with a copy of its taxonomy. Saving an id that
    /// already exists leaves the stored copy (and its status) untouched.
    bool save_manifest(const ExperimentManifest& m, const Taxonomy& taxonomy) {
        std::lock_guard lock(mutex_);
        const auto dir = manifest_dir(m.id);
        if (fs::exists(dir / "manifest.json")) return false;
        if (taxonomy_hash(taxonomy) != m.taxonomy_hash) throw ValidationError("taxonomy does not match manifest hash");
        write_file(dir / "taxonomy.json", to_json(taxonomy).dump(2) + "\n");
        write_file(dir / "manifest.json", m.to_json().dump(2) + "\n");
        return true;
    }

    bool has_manifest(const std::string& id) const { return valid_id(id) && fs::exists(manifest_dir(id) / "manifest.json"); }

    ExperimentManifest load_manifest(const std::string& id) const {
        if (!has_manifest(id)) throw NotFoundError("unknown manifest \"" + id + "\"");
        return ExperimentManifest::from_json(Json::parse(read_file(manifest_dir(id) / "manifest.json")));
    }

    void update_status(const std::string& id, const std::string& status) {
        std::lock_guard lock(mutex_);
        auto j = Json::parse(read_file(manifest_dir(id) / "manifest.json"));
        j["status"] = status;
        write_file(manifest_dir(id) / "manifest.json", j.dump(2) + "\n");
    }

    std::vector<std::string> list_manifests() const {
        std::vector<std::string> ids;
        for (const auto& e : fs::directory_iterator(root_ / "manifests"))
            if (fs::exists(e.path() / "manifest.json")) ids.push_back(e.path().filename().string());
        std::sort(ids.begin(), ids.end());
        return ids;
    }

    Taxonomy load_taxonomy(const std::string& id) const {
        if (!has_manifest(id)) throw NotFoundError("unknown manifest \"" + id + "\"");
        return cisprobe::load_taxonomy(read_file(manifest_dir(id) / "taxonomy.json"));
    }

    // Run log -----------------------------------------------------------------

    /// Appends records as one line each. A torn final line left by an
    /// interrupted writer is closed off first so it stays a single bad line.
    void append_records(const std::string& manifest_id, const std::vector<RunRecord>& records) {
        if (records.empty()) return;
        std::lock_guard lock(log_mutex_);
        const auto path = manifest_dir(manifest_id) / "runs.ndjson";
        bool needs_newline = false;
        if (fs::exists(path) && fs::file_size(path) > 0) {
            std::ifstream in(path, std::ios::binary);
            in.seekg(-1, std::ios::end);
            needs_newline = in.get() != '\n';
        }
        std::ofstream out(path, std::ios::binary | std::ios::app);
        if (!out) throw Error("cannot append to " + path.string());
        if (needs_newline) out << '\n';
        for (const auto& r : records) out << record_to_json(manifest_id, r).dump() << '\n';
        out.flush();
    }

    void append_record(const std::string& manifest_id, const RunRecord& r) { append_records(manifest_id, {r}); }

    LogContents read_log(const std::string& manifest_id) const {
        LogContents out;
        const auto path = manifest_dir(manifest_id) / "runs.ndjson";
        if (!fs::exists(path)) return out;
        std::ifstream in(path, std::ios::binary);
        for (std::string line; std::getline(in, line);) {
            if (line.empty()) continue;
            try {
                const auto j = Json::parse(line);
                if (j.at("manifest_id").get<std::string>() != manifest_id) {
                    ++out.skipped_lines;
                    continue;
                }
                out.records.push_back(record_from_json(j));
            } catch (const std::exception&) {
                ++out.skipped_lines;
            }
        }
        return out;
    }

    // Seed pools --------------------------------------------------------------

    fs::path seed_pool_path(const std::string& manifest_id, const std::string& pair_key) const {
        return manifest_dir(manifest_id) / "seeds" / (sha256_hex(pair_key).substr(0, 16) + ".json");
    }

    std::optional<SeedPool> load_seed_pool(const std::string& manifest_id, const std::string& pair_key) const {
        const auto path = seed_pool_path(manifest_id, pair_key);
        if (!fs::exists(path)) return std::nullopt;
        const auto j = Json::parse(read_file(path));
        if (j.at("pair").get<std::string>() != pair_key) throw StateError("seed pool file collision for " + pair_key);
        return SeedPool::from_json(j.at("pool"));
    }

    void save_seed_pool(const std::string& manifest_id, const std::string& pair_key, const SeedPool& pool) {
        Json j{{"pair", pair_key}, {"pool", pool.to_json()}, {"schema_version", kSchemaVersion}};
        write_file(seed_pool_path(manifest_id, pair_key), j.dump(2) + "\n");
    }

    // Images ------------------------------------------------------------------

    std::string put_image(const Image& image) {
        const std::string ref = image.ref();
        const auto path = root_ / "images" / (ref + ".ppm");
        std::lock_guard lock(mutex_);
        if (!fs::exists(path)) write_file(path, image.encode());
        return ref;
    }

    std::optional<std::string> image_bytes(const std::string& ref) const {
        if (!valid_id(ref)) return std::nullopt;
        const auto path = root_ / "images" / (ref + ".ppm");
        if (!fs::exists(path)) return std::nullopt;
        return read_file(path);
    }

    // Derived artifacts -------------------------------------------------------

    /// Writes reports/<relative>; returns the content hash.
    std::string write_artifact(const std::string& manifest_id, const std::string& relative, const std::string& content) {
        write_file(manifest_dir(manifest_id) / "reports" / relative, content);
        return sha256_hex(content);
    }

    std::optional<std::string> read_artifact(const std::string& manifest_id, const std::string& relative) const {
        const auto path = manifest_dir(manifest_id) / "reports" / relative;
        if (!fs::exists(path)) return std::nullopt;
        return read_file(path);
    }

    // Edit jobs ---------------------------------------------------------------

    void save_edit_job(const std::string& job_id, const Json& job) {
        std::lock_guard lock(mutex_);
        write_file(root_ / "edits" / (job_id + ".json"), job.dump(2) + "\n");
    }

    std::optional<Json> load_edit_job(const std::string& job_id) const {
        if (!valid_id(job_id)) return std::nullopt;
        const auto path = root_ / "edits" / (job_id + ".json");
        if (!fs::exists(path)) return std::nullopt;
        return Json::parse(read_file(path));
    }

    /// Ids and refs are lowercase hex; anything else never touches the filesystem.
    static bool valid_id(std::string_view id) {
        return !id.empty() && id.size() <= 64 &&
               std::all_of(id.begin(), id.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
    }

private:
    fs::path root_;
    mutable std::mutex mutex_;
    std::mutex log_mutex_;
};

}  // namespace cisprobe::runner
