// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>
#include <set>

#include "support.hpp"

using namespace cisprobe;
using cisprobe::testing::simple_pair;
using cisprobe::testing::spec_with_lock;
using cisprobe::testing::tiny_taxonomy;

namespace {

Answer outcome(const InterventionPlan& plan, const Backend& backend) {
    MockScorer scorer;
    return run_intervention(plan, backend, scorer).record.outcomes.at(plan.targets[0].surface);
}

/// Throws a transport error for the first `n` calls.
class OutageScorer final : public Scorer {
public:
    explicit OutageScorer(int n) : remaining_(n) {}
    std::string id() const override { return "mock/1"; }
    std::size_t concurrency_limit() const override { return 8; }
    std::string ask(const Image& image, const std::string& question) override {
        if (remaining_.fetch_sub(1) > 0) throw ScorerError("unreachable", question);
        return inner_.ask(image, question);
    }

private:
    std::atomic<int> remaining_;
    MockScorer inner_;
};

}  // namespace

TEST(Intervention, LockRuleAroundSixTenths) {
    const SyntheticBackend backend(spec_with_lock(50, "dog", 0.6));
    const auto pair = simple_pair();
    const TimestepGrid& g = backend.grid();
    EXPECT_EQ(outcome(make_plan(pair, Direction::insertion, g, nearest_step(g, {0.62}), 3, 7.5), backend), Answer::yes);
    EXPECT_EQ(outcome(make_plan(pair, Direction::insertion, g, nearest_step(g, {0.58}), 3, 7.5), backend), Answer::no);
}

TEST(Intervention, BoundarySwitchesMatchUnswitchedRuns) {
    const SyntheticBackend backend(spec_with_lock(30, "dog", 0.45));
    const auto pair = simple_pair();
    const TimestepGrid& g = backend.grid();
    for (std::uint64_t seed : {1u, 2u, 99u}) {
        auto session = backend.open_session();
        auto direct = [&](const std::string& prompt) {
            return session->decode(session->denoise_range(session->init(seed), Condition(prompt, std::nullopt, 7.5), 0, 30));
        };
        const auto base_only = direct(pair.base_prompt), concept_only = direct(pair.concept_prompt);
        EXPECT_EQ(generate(make_plan(pair, Direction::insertion, g, 30, seed, 7.5), backend), base_only);
        EXPECT_EQ(generate(make_plan(pair, Direction::insertion, g, 0, seed, 7.5), backend), concept_only);
        EXPECT_EQ(generate(make_plan(pair, Direction::deletion, g, 0, seed, 7.5), backend), base_only);
        EXPECT_EQ(generate(make_plan(pair, Direction::deletion, g, 30, seed, 7.5), backend), concept_only);
        EXPECT_EQ(outcome(make_plan(pair, Direction::insertion, g, 30, seed, 7.5), backend), Answer::no);
        EXPECT_EQ(outcome(make_plan(pair, Direction::insertion, g, 0, seed, 7.5), backend), Answer::yes);
        EXPECT_EQ(outcome(make_plan(pair, Direction::deletion, g, 0, seed, 7.5), backend), Answer::no);
        EXPECT_EQ(outcome(make_plan(pair, Direction::deletion, g, 30, seed, 7.5), backend), Answer::yes);
    }
}

TEST(Intervention, DeletionIsDualToInsertion) {
    const auto pair = simple_pair();
    for (double lock : {0.0, 0.13, 0.5, 0.6, 0.87, 1.0}) {
        const SyntheticBackend backend(spec_with_lock(20, "dog", lock));
        const TimestepGrid& g = backend.grid();
        for (std::size_t k = 0; k <= 20; ++k) {
            const bool inserted = outcome(make_plan(pair, Direction::insertion, g, k, 5, 7.5), backend) == Answer::yes;
            const bool persisted = outcome(make_plan(pair, Direction::deletion, g, k, 5, 7.5), backend) == Answer::yes;
            // k = T never switches: base only for insertion, concept only for deletion
            const bool switched = k < 20;
            EXPECT_EQ(inserted, switched && g.tau(k) >= lock) << lock << " " << k;
            EXPECT_EQ(persisted, !switched || g.tau(k) < lock) << lock << " " << k;
        }
    }
}

TEST(Intervention, DirectionChecks) {
    const SyntheticBackend backend(spec_with_lock(10, "dog", 0.5));
    MockScorer scorer;
    const auto pair = simple_pair();
    EXPECT_THROW(run_pci(make_plan(pair, Direction::deletion, backend.grid(), 3, 1, 7.5), backend, scorer), ArgumentError);
    EXPECT_THROW(run_cds(make_plan(pair, Direction::insertion, backend.grid(), 3, 1, 7.5), backend, scorer), ArgumentError);
    EXPECT_THROW(make_plan(pair, Direction::insertion, backend.grid(), 11, 1, 7.5), ArgumentError);
    EXPECT_THROW(generate(make_plan(pair, Direction::insertion, TimestepGrid(20), 3, 1, 7.5), backend), ArgumentError);
}

TEST(Intervention, NegativePromptOnlyWhileBaseIsActive) {
    auto plan = make_plan(simple_pair(), Direction::insertion, TimestepGrid(10), 4, 1, 7.5, true);
    EXPECT_EQ(plan.first_condition().negative_prompt, std::optional<std::string>("dog"));
    EXPECT_FALSE(plan.second_condition().negative_prompt);
    plan.direction = Direction::deletion;
    EXPECT_FALSE(plan.first_condition().negative_prompt);
    EXPECT_FALSE(plan.second_condition().negative_prompt);
}

TEST(Sweep, CountsAndFingerprints) {
    const SyntheticBackend backend(spec_with_lock(50, "dog", 0.6));
    MockScorer scorer;
    const auto result = sweep(simple_pair(), backend.grid(), plain_seeds({1, 2}), Direction::insertion, backend, scorer);
    EXPECT_EQ(result.records.size(), 102u);
    EXPECT_TRUE(result.complete());
    std::set<std::string> fingerprints;
    for (const auto& r : result.records) fingerprints.insert(r.fingerprint);
    EXPECT_EQ(fingerprints.size(), 102u);
    EXPECT_THROW(sweep(simple_pair(), backend.grid(), {}, Direction::insertion, backend, scorer), ArgumentError);
}

TEST(Sweep, ColumnStepAtLock) {
    const SyntheticBackend backend(spec_with_lock(50, "dog", 0.6));
    MockScorer scorer;
    const auto result = sweep(simple_pair(), backend.grid(), plain_seeds({4, 5, 6, 7}), Direction::insertion, backend, scorer, {4, {}});
    for (const auto& r : result.records) EXPECT_EQ(r.outcomes.at("dog") == Answer::yes, r.tau >= 0.6) << r.seed << " " << r.switch_k;
}

TEST(Sweep, DeterministicAcrossWorkerCounts) {
    const SyntheticBackend backend(spec_with_lock(20, "dog", 0.4));
    MockScorer a({{}, 0.2, 3}), b({{}, 0.2, 3});
    const auto one = sweep(simple_pair(), backend.grid(), plain_seeds({1, 2, 3}), Direction::deletion, backend, a, {1, {}});
    const auto many = sweep(simple_pair(), backend.grid(), plain_seeds({1, 2, 3}), Direction::deletion, backend, b, {6, {}});
    ASSERT_EQ(one.records.size(), many.records.size());
    for (std::size_t i = 0; i < one.records.size(); ++i) {
        EXPECT_EQ(one.records[i].fingerprint, many.records[i].fingerprint);
        EXPECT_EQ(one.records[i].outcomes, many.records[i].outcomes);
        EXPECT_EQ(one.records[i].image_ref, many.records[i].image_ref);
    }
}

TEST(Sweep, FailedCellsAreIsolatedAndRetried) {
    const SyntheticBackend backend(spec_with_lock(10, "dog", 0.5));
    OutageScorer outage(5);
    auto result = sweep(simple_pair(), backend.grid(), plain_seeds({1, 2}), Direction::insertion, backend, outage);
    EXPECT_EQ(result.failed(), 5u);
    EXPECT_EQ(result.completed(), 17u);
    MockScorer healthy;
    EXPECT_EQ(retry_failed(result, backend, healthy), 5u);
    EXPECT_TRUE(result.complete());
    for (const auto& r : result.records) EXPECT_EQ(r.outcomes.at("dog") == Answer::yes, r.tau >= 0.5);
}

TEST(Multi, IndependentLocks) {
    SyntheticBackendSpec spec;
    spec.grid = TimestepGrid(50);
    spec.lock_tau = {{"dog", 0.4}, {"cat", 0.7}};
    const SyntheticBackend backend(spec);
    const auto tax = tiny_taxonomy();
    const auto combined = combine_pairs(tax.pair("Animals|Pets|dog|park"), tax.pair("Animals|Pets|cat|park"));
    MockScorer scorer;
    const auto& g = backend.grid();
    const auto mid = run_multi(make_multi_plan(combined, g, nearest_step(g, {0.5}), 1, 7.5), backend, scorer);
    EXPECT_EQ(mid.outcomes.at("dog"), Answer::yes);
    EXPECT_EQ(mid.outcomes.at("cat"), Answer::no);
    const auto first = run_multi(make_multi_plan(combined, g, 0, 1, 7.5), backend, scorer);
    EXPECT_EQ(first.outcomes, (std::map<std::string, Answer>{{"cat", Answer::yes}, {"dog", Answer::yes}}));
    const auto never = run_multi(make_multi_plan(combined, g, 50, 1, 7.5), backend, scorer);
    EXPECT_EQ(never.outcomes, (std::map<std::string, Answer>{{"cat", Answer::no}, {"dog", Answer::no}}));
    EXPECT_THROW(run_multi(make_plan(simple_pair(), Direction::insertion, g, 3, 1, 7.5), backend, scorer), ArgumentError);
}
