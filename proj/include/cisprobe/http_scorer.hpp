// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "cisprobe/score.hpp"
#include "httplib.h"

namespace cisprobe {

// Scorer wire contract: POST {"image": base64 bytes, "question": string}
// -> {"text": string}. Any LVLM endpoint honoring it is interchangeable.

inline nlohmann::json to_scorer_request(const Image& image, const std::string& question) {
    return {{"image", base64_encode(image.encode())}, {"question", question}};
}

/// Responder side of the contract, used to expose a local scorer.
inline nlohmann::json answer_scorer_request(Scorer& scorer, const nlohmann::json& request) {
    const Image image = Image::decode(base64_decode(request.at("image").get<std::string>()));
    return {{"text", scorer.ask(image, request.at("question").get<std::string>())}};
}

class HttpScorer final : public Scorer {
public:
    HttpScorer(std::string base_url, std::string path, std::string model_id, std::size_t limit = 4, int timeout_seconds = 60)
        : base_url_(std::move(base_url)), path_(std::move(path)), model_id_(std::move(model_id)), limit_(limit), timeout_seconds_(timeout_seconds) {}

    std::string id() const override { return "http/" + model_id_; }
    std::size_t concurrency_limit() const override { return limit_; }

    std::string ask(const Image& image, const std::string& question) override {
        httplib::Client client(base_url_);
        client.set_read_timeout(timeout_seconds_, 0);
        client.set_connection_timeout(timeout_seconds_, 0);
        auto res = client.Post(path_, to_scorer_request(image, question).dump(), "application/json");
        if (!res) throw ScorerError("scorer endpoint unreachable: " + httplib::to_string(res.error()), question);
        if (res->status >= 500 || res->status == 429) {
            throw ScorerError("scorer endpoint returned HTTP " + std::to_string(res->status), question);
        }
        if (res->status != 200) throw Error("scorer endpoint rejected request with HTTP " + std::to_string(res->status));
        try {
            return nlohmann::json::parse(res->body).at("text").get<std::string>();
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("scorer response is not {\"text\": ...}: ") + e.what(), res->body);
        }
    }

private:
    std::string base_url_;
    std::string path_;
    std::string model_id_;
    std::size_t limit_;
    int timeout_seconds_;
};

}  // namespace cisprobe
