// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>

#include "cisprobe/editeval.hpp"
#include "cisprobe/http_scorer.hpp"
#include "cisprobe/remote_backend.hpp"
#include "cisprobe/score.hpp"
#include "cisprobe/synthetic_backend.hpp"
#include "cisprobe/taxonomy.hpp"

namespace cisprobe::runner {

using Json = nlohmann::json;

/// Component configs are JSON objects with a "type" key:
///   backend:   synthetic | remote
///   scorer:    mock | http
///   embedding: synthetic | http
/// Everything else is type-specific.

inline std::string config_type(const Json& config, const char* what) {
    if (!config.is_object() || !config.contains("type") || !config.at("type").is_string()) {
        throw ValidationError(std::string(what) + " config needs a string \"type\"");
    }
    return config.at("type").get<std::string>();
}

/// Fills synthetic lock times for taxonomy concepts the config leaves out,
/// when it carries "lock_range": [lo, hi]. Each concept gets a hashed value in
/// that range, so the resolved config is fully explicit.
inline Json resolve_backend_config(Json config, const Taxonomy& taxonomy) {
    if (config_type(config, "backend") != "synthetic" || !config.contains("lock_range")) return config;
    const auto range = config.at("lock_range").get<std::vector<double>>();
    if (range.size() != 2 || !(range[0] >= 0.0 && range[0] <= range[1] && range[1] <= 1.0)) {
        throw ValidationError("lock_range must be [lo, hi] within [0, 1]");
    }
    Json& locks = config["lock_tau"];
    if (locks.is_null()) locks = Json::object();
    for (const auto& e : taxonomy.entries()) {
        if (locks.contains(e.surface)) continue;
        const double u = unit_from_bits(mix_keys(fnv1a64(e.surface), 7));
        locks[e.surface] = std::round((range[0] + (range[1] - range[0]) * u) * 1000.0) / 1000.0;
    }
    config.erase("lock_range");
    return config;
}

inline std::unique_ptr<Backend> make_backend(const Json& config) {
    const auto type = config_type(config, "backend");
    try {
        if (type == "synthetic") return std::make_unique<SyntheticBackend>(synthetic_spec_from_json(config));
        if (type == "remote") {
            return std::make_unique<RemoteBackend>(config.at("base_url").get<std::string>(), config.value("path", std::string("/generate")),
                                                   config.at("adapter").get<std::string>(), TimestepGrid(config.at("T").get<std::size_t>()),
                                                   config.value("guidance_scale", 7.5), config.value("timeout_seconds", 600));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad backend config: ") + e.what());
    }
    throw ValidationError("unknown backend type \"" + type + "\"");
}

inline std::unique_ptr<Scorer> make_scorer(const Json& config) {
    const auto type = config_type(config, "scorer");
    try {
        if (type == "mock") {
            MockScript script;
            script.flip_probability = config.value("flip_probability", 0.0);
            script.seed = config.value("seed", std::uint64_t{0});
            return std::make_unique<MockScorer>(std::move(script));
        }
        if (type == "http") {
            return std::make_unique<HttpScorer>(config.at("base_url").get<std::string>(), config.value("path", std::string("/vqa")),
                                                config.at("model").get<std::string>(), config.value("limit", std::size_t{4}),
                                                config.value("timeout_seconds", 60));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad scorer config: ") + e.what());
    }
    throw ValidationError("unknown scorer type \"" + type + "\"");
}

inline std::unique_ptr<EmbeddingBackend> make_embeddings(const Json& config) {
    const auto type = config_type(config, "embedding");
    try {
        if (type == "synthetic") return std::make_unique<SyntheticEmbeddings>(config.value("dimension", std::size_t{64}));
        if (type == "http") {
            return std::make_unique<HttpEmbeddingBackend>(config.at("base_url").get<std::string>(), config.value("path", std::string("/embed")),
                                                          config.at("model").get<std::string>(), config.at("dimension").get<std::size_t>(),
                                                          config.value("limit", std::size_t{4}), config.value("timeout_seconds", 60));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("bad embedding config: ") + e.what());
    }
    throw ValidationError("unknown embedding type \"" + type + "\"");
}

/// Named component configs that manifest drafts refer to.
class Registry {
public:
    static Registry with_defaults() {
        Registry r;
        r.add_backend("synthetic", {{"type", "synthetic"}, {"T", 50}, {"lock_range", {0.4, 0.8}}});
        r.add_scorer("mock", {{"type", "mock"}, {"flip_probability", 0.0}});
        r.add_embedding("synthetic", {{"type", "synthetic"}, {"dimension", 64}});
        return r;
    }

    void add_backend(const std::string& name, Json config) { add(backends_, name, std::move(config), "backend"); }
    void add_scorer(const std::string& name, Json config) { add(scorers_, name, std::move(config), "scorer"); }
    void add_embedding(const std::string& name, Json config) { add(embeddings_, name, std::move(config), "embedding"); }

    const Json& backend(const std::string& name) const { return get(backends_, name, "backend"); }
    const Json& scorer(const std::string& name) const { return get(scorers_, name, "scorer"); }
    const Json& embedding(const std::string& name) const { return get(embeddings_, name, "embedding"); }

private:
    static void add(std::map<std::string, Json>& into, const std::string& name, Json config, const char* what) {
        config_type(config, what);
        into[name] = std::move(config);
    }
    static const Json& get(const std::map<std::string, Json>& from, const std::string& name, const char* what) {
        auto it = from.find(name);
        if (it == from.end()) throw ValidationError("unknown " + std::string(what) + " id \"" + name + "\"");
        return it->second;
    }

    std::map<std::string, Json> backends_;
    std::map<std::string, Json> scorers_;
    std::map<std::string, Json> embeddings_;
};

}  // namespace cisprobe::runner
