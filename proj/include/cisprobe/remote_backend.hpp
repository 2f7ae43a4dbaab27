// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <string>

#include "cisprobe/backend.hpp"
#include "httplib.h"

namespace cisprobe {

// Remote-adapter wire contract.
//
//   request  {"T": int, "seed": uint64, "segments": [{"from_k", "to_k", "prompt",
//             "negative_prompt"?, "omega"}]}
//   response {"image": base64 bytes, "trace": [per-segment checksum]}
//   failure  {"error": string, "step": int}
//
// Real model adapters (out of process) implement the responder side.

inline nlohmann::json to_wire_request(const LatentState& state) {
    nlohmann::json segments = nlohmann::json::array();
    for (const auto& s : state.history) {
        nlohmann::json seg{{"from_k", s.from_k}, {"to_k", s.to_k}, {"prompt", s.condition.prompt}, {"omega", s.condition.guidance_scale}};
        if (s.condition.negative_prompt) seg["negative_prompt"] = *s.condition.negative_prompt;
        segments.push_back(std::move(seg));
    }
    return {{"T", state.grid.steps()}, {"seed", state.seed}, {"segments", std::move(segments)}};
}

/// Responder side: replays a wire request on a local backend.
inline nlohmann::json answer_wire_request(const Backend& backend, const nlohmann::json& request) {
    std::size_t step = 0;
    try {
        const auto steps = request.at("T").get<std::size_t>();
        if (steps != backend.grid().steps()) {
            return {{"error", "grid mismatch: backend runs T=" + std::to_string(backend.grid().steps())}, {"step", 0}};
        }
        auto session = backend.open_session();
        LatentState state = session->init(request.at("seed").get<std::uint64_t>());
        for (const auto& seg : request.at("segments")) {
            step = seg.at("from_k").get<std::size_t>();
            std::optional<std::string> negative;
            if (seg.contains("negative_prompt")) negative = seg.at("negative_prompt").get<std::string>();
            const Condition condition(seg.at("prompt").get<std::string>(), negative, seg.at("omega").get<double>());
            state = session->denoise_range(state, condition, step, seg.at("to_k").get<std::size_t>());
        }
        step = state.k;
        const Image image = session->decode(state);
        return {{"image", base64_encode(image.encode())}, {"trace", state.trace}};
    } catch (const std::exception& e) {
        return {{"error", e.what()}, {"step", step}};
    }
}

class RemoteBackend;

class RemoteSession final : public BackendSession {
public:
    explicit RemoteSession(const RemoteBackend& backend) : backend_(backend) {}

    LatentState init(std::uint64_t seed) override;

    /// Checksums returned by the adapter for the last decode.
    const std::vector<std::string>& last_trace() const noexcept { return last_trace_; }

protected:
    // Segments are accumulated locally and shipped in one request at decode time.
    LatentState run_steps(const LatentState& state, const Condition&, std::size_t, std::size_t) override { return state; }
    Image render(const LatentState& state) override;

private:
    const RemoteBackend& backend_;
    std::vector<std::string> last_trace_;
};

/// Backend whose trajectories execute behind an HTTP endpoint.
class RemoteBackend final : public Backend {
public:
    RemoteBackend(std::string base_url, std::string path, std::string adapter_id, TimestepGrid grid, double guidance_scale,
                  int timeout_seconds = 600)
        : base_url_(std::move(base_url)),
          path_(std::move(path)),
          adapter_id_(std::move(adapter_id)),
          grid_(std::move(grid)),
          guidance_scale_(guidance_scale),
          timeout_seconds_(timeout_seconds) {}

    std::string id() const override { return "remote/" + adapter_id_; }
    const TimestepGrid& grid() const override { return grid_; }
    double guidance_scale() const override { return guidance_scale_; }
    std::unique_ptr<BackendSession> open_session() const override { return std::make_unique<RemoteSession>(*this); }
    nlohmann::json config() const override {
        return {{"id", "remote"}, {"adapter", adapter_id_}, {"url", base_url_ + path_}, {"T", grid_.steps()}, {"guidance_scale", guidance_scale_}};
    }

    nlohmann::json post(const nlohmann::json& request) const {
        httplib::Client client(base_url_);
        client.set_read_timeout(timeout_seconds_, 0);
        client.set_connection_timeout(10, 0);
        auto res = client.Post(path_, request.dump(), "application/json");
        if (!res) throw BackendError("backend adapter unreachable: " + httplib::to_string(res.error()), 0);
        if (res->status != 200) throw BackendError("backend adapter returned HTTP " + std::to_string(res->status), 0);
        try {
            return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
            throw BackendError(std::string("backend adapter sent invalid JSON: ") + e.what(), 0);
        }
    }

private:
    std::string base_url_;
    std::string path_;
    std::string adapter_id_;
    TimestepGrid grid_;
    double guidance_scale_;
    int timeout_seconds_;
};

inline LatentState RemoteSession::init(std::uint64_t seed) {
    LatentState s;
    s.grid = backend_.grid();
    s.seed = seed;
    return s;
}

inline Image RemoteSession::render(const LatentState& state) {
    const auto response = backend_.post(to_wire_request(state));
    if (response.contains("error")) {
        throw BackendError(response.at("error").get<std::string>(), response.value("step", std::size_t{0}));
    }
    last_trace_ = response.value("trace", std::vector<std::string>{});
    return Image::decode(base64_decode(response.at("image").get<std::string>()));
}

}  // namespace cisprobe
