// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "cisprobe/backend.hpp"
#include "cisprobe/error.hpp"
#include "cisprobe/hash.hpp"
#include "cisprobe/parallel.hpp"
#include "cisprobe/taxonomy.hpp"

namespace cisprobe {

enum class Answer { no, yes };

inline std::string to_string(Answer a) { return a == Answer::yes ? "yes" : "no"; }

inline Answer answer_from_string(std::string_view s) {
    if (s == "yes") return Answer::yes;
    if (s == "no") return Answer::no;
    throw ParseError("expected \"yes\" or \"no\"", std::string(s));
}

/// Strict yes/no extraction: leading whitespace and punctuation are skipped,
/// the first alphabetic token must be exactly "yes" or "no" (any case).
inline Answer parse_answer(std::string_view raw) {
    std::size_t i = 0;
    while (i < raw.size() && !std::isalnum(static_cast<unsigned char>(raw[i]))) ++i;
    std::size_t j = i;
    while (j < raw.size() && std::isalpha(static_cast<unsigned char>(raw[j]))) ++j;
    const std::string token = text::lower(raw.substr(i, j - i));
    if (token == "yes") return Answer::yes;
    if (token == "no") return Answer::no;
    throw ParseError("unparseable scorer answer", std::string(raw));
}

struct ScorerVerdict {
    Answer answer = Answer::no;
    std::string raw_text;
    std::string scorer_id;

    bool operator==(const ScorerVerdict&) const = default;
};

/// Yes/no visual question answering. `ask` must be safe to call concurrently
/// up to `concurrency_limit()` callers.
class Scorer {
public:
    virtual ~Scorer() = default;
    virtual std::string id() const = 0;
    virtual std::string ask(const Image& image, const std::string& question) = 0;
    virtual std::size_t concurrency_limit() const { return 1; }
};

inline ScorerVerdict assess(const Image& image, const std::string& question, Scorer& scorer) {
    if (question.empty()) throw ArgumentError("scorer question must not be empty");
    std::string raw = scorer.ask(image, question);
    return {parse_answer(raw), std::move(raw), scorer.id()};
}

/// Rule + noise for the mock scorer paired with the synthetic backend.
struct MockScript {
    /// Ground truth; default: yes iff one of the image tags occurs as a whole
    /// word in the question.
    std::function<bool(const Image&, const std::string&)> rule;
    double flip_probability = 0.0;
    std::uint64_t seed = 0;
};

inline bool tag_rule(const Image& image, const std::string& question) {
    return std::any_of(image.tags.begin(), image.tags.end(), [&](const std::string& t) { return text::contains_word(question, t); });
}

/// Scriptable scorer. Flips are drawn from a counter-based generator keyed by
/// (seed, image, question, repeat index): a sweep asking each key once gets
/// the same answers in any execution order, while repeated questions on one
/// image see independent draws.
class MockScorer final : public Scorer {
public:
    explicit MockScorer(MockScript script = {}) : script_(std::move(script)) {
        if (!(script_.flip_probability >= 0.0 && script_.flip_probability < 0.5)) {
            throw ArgumentError("mock flip probability must lie in [0, 0.5)");
        }
        if (!script_.rule) script_.rule = tag_rule;
    }

    std::string id() const override { return "mock/1"; }
    std::size_t concurrency_limit() const override { return 64; }

    std::string ask(const Image& image, const std::string& question) override {
        bool truth = script_.rule(image, question);
        if (script_.flip_probability > 0.0) {
            const std::string key = image.ref() + "\n" + question;
            std::uint64_t repeat = 0;
            {
                std::lock_guard lock(mutex_);
                repeat = repeats_[key]++;
            }
            if (unit_from_bits(mix_keys(script_.seed, fnv1a64(key), repeat)) < script_.flip_probability) truth = !truth;
        }
        return truth ? "Yes." : "No.";
    }

    const MockScript& script() const noexcept { return script_; }

private:
    MockScript script_;
    std::mutex mutex_;
    std::map<std::string, std::uint64_t> repeats_;
};

struct RetryPolicy {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{100};
    double multiplier = 2.0;
    std::chrono::milliseconds max_backoff{5000};
};

struct ScoringItem {
    const Image* image = nullptr;
    std::string question;
};

struct BatchResult {
    std::optional<ScorerVerdict> verdict;
    std::string error;  // set when the slot failed
    int attempts = 0;

    bool ok() const noexcept { return verdict.has_value(); }
};

/// Retries transport failures (ScorerError) with exponential backoff; parse
/// failures are not retried. Returns the verdict or rethrows the last error.
inline ScorerVerdict assess_with_retry(const Image& image, const std::string& question, Scorer& scorer,
                                       const RetryPolicy& policy, int* attempts_out = nullptr) {
    auto backoff = policy.initial_backoff;
    for (int attempt = 1;; ++attempt) {
        if (attempts_out) *attempts_out = attempt;
        try {
            return assess(image, question, scorer);
        } catch (const ScorerError& e) {
            if (attempt >= policy.max_attempts) throw ScorerError(e.what(), question, attempt);
        }
        std::this_thread::sleep_for(backoff);
        backoff = std::min(policy.max_backoff,
                           std::chrono::milliseconds(static_cast<long long>(static_cast<double>(backoff.count()) * policy.multiplier)));
    }
}

/// Scores every item with at most `limit` calls in flight. Results keep input
/// order; a failing item only fails its own slot.
inline std::vector<BatchResult> batch_assess(const std::vector<ScoringItem>& items, Scorer& scorer, std::size_t limit,
                                             const RetryPolicy& policy = {}) {
    if (limit == 0) throw ArgumentError("batch concurrency limit must be at least 1");
    std::vector<BatchResult> results(items.size());
    parallel_for(items.size(), std::min(limit, scorer.concurrency_limit()), [&](std::size_t i) {
        auto& slot = results[i];
        try {
            if (items[i].image == nullptr) throw ArgumentError("batch item without image");
            slot.verdict = assess_with_retry(*items[i].image, items[i].question, scorer, policy, &slot.attempts);
        } catch (const std::exception& e) {
            slot.error = e.what();
        }
    });
    return results;
}

}  // namespace cisprobe
