// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <atomic>

#include "support.hpp"

using namespace cisprobe;

namespace {

Image tagged(std::set<std::string> tags) {
    Image img;
    img.width = img.height = 2;
    img.pixels.assign(12, 40);
    img.tags = std::move(tags);
    return img;
}

/// Fails the first `failures` calls for questions containing "flaky", always for "down".
class FlakyScorer final : public Scorer {
public:
    explicit FlakyScorer(int failures) : failures_(failures) {}
    std::string id() const override { return "flaky/1"; }
    std::size_t concurrency_limit() const override { return 8; }
    std::string ask(const Image& image, const std::string& question) override {
        ++calls;
        if (text::contains_word(question, "down")) throw ScorerError("timeout", question);
        if (text::contains_word(question, "flaky") && remaining_.fetch_sub(1) > 0) throw ScorerError("unreachable", question);
        if (text::contains_word(question, "garbled")) return "perhaps";
        return tag_rule(image, question) ? "yes" : "no";
    }
    std::atomic<int> calls{0};

private:
    int failures_;
    std::atomic<int> remaining_{failures_};
};

RetryPolicy fast_retry(int attempts) { return {attempts, std::chrono::milliseconds(1), 2.0, std::chrono::milliseconds(4)}; }

}  // namespace

TEST(ParseAnswer, Examples) {
    EXPECT_EQ(parse_answer("Yes."), Answer::yes);
    EXPECT_EQ(parse_answer("  no, there is not"), Answer::no);
    EXPECT_EQ(parse_answer("NO"), Answer::no);
    EXPECT_EQ(parse_answer("\n\"yes\" it is"), Answer::yes);
    EXPECT_THROW(parse_answer("maybe"), ParseError);
    EXPECT_THROW(parse_answer(""), ParseError);
    EXPECT_THROW(parse_answer("yesterday"), ParseError);
    EXPECT_THROW(parse_answer("nope"), ParseError);
    try {
        parse_answer("I think so");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.path(), "I think so");
    }
}

TEST(ParseAnswer, TotalOnPrefixedStrings) {
    for (const char* prefix : {"", " ", "...", "\t- ", "*"})
        for (const char* word : {"yes", "Yes", "YES", "no", "No"})
            for (const char* rest : {"", ".", ", indeed", "!"}) {
                const std::string s = std::string(prefix) + word + rest;
                EXPECT_EQ(parse_answer(s), text::lower(word) == "yes" ? Answer::yes : Answer::no) << s;
            }
}

TEST(MockScorer, TagRule) {
    MockScorer scorer;
    const auto img = tagged({"old"});
    EXPECT_EQ(assess(img, "Is the person in the image old?", scorer).answer, Answer::yes);
    EXPECT_EQ(assess(img, "Is the person in the image a baby?", scorer).answer, Answer::no);
    const auto v = assess(img, "Is the person in the image old?", scorer);
    EXPECT_EQ(v.scorer_id, "mock/1");
    EXPECT_EQ(v.raw_text, "Yes.");
    EXPECT_THROW(assess(img, "", scorer), ArgumentError);
}

TEST(MockScorer, NoiselessIsPure) {
    MockScorer a, b;
    const auto img = tagged({"dog"});
    for (int i = 0; i < 50; ++i) EXPECT_EQ(assess(img, "Is there a dog?", a), assess(img, "Is there a dog?", b));
}

TEST(MockScorer, FlipRate) {
    MockScorer scorer({{}, 0.1, 31});
    const auto img = tagged({"old"});
    int flips = 0;
    for (int i = 0; i < 10000; ++i) flips += assess(img, "Is the person old?", scorer).answer == Answer::no;
    EXPECT_NEAR(flips / 10000.0, 0.1, 0.01);
}

TEST(MockScorer, SameSeedSameDraws) {
    MockScorer a({{}, 0.3, 8}), b({{}, 0.3, 8});
    const auto img = tagged({});
    for (int i = 0; i < 200; ++i) EXPECT_EQ(assess(img, "Is there a cat?", a), assess(img, "Is there a cat?", b));
    EXPECT_THROW(MockScorer({{}, 0.5, 0}), ArgumentError);
}

TEST(MockScorer, CustomRule) {
    MockScorer scorer({[](const Image&, const std::string&) { return true; }, 0.0, 0});
    EXPECT_EQ(assess(tagged({}), "anything?", scorer).answer, Answer::yes);
}

TEST(BatchAssess, SequentialOrderPreserved) {
    MockScorer scorer;
    const auto dog = tagged({"dog"}), cat = tagged({"cat"});
    const std::vector<ScoringItem> items{{&dog, "Is there a dog?"}, {&cat, "Is there a dog?"}, {&cat, "Is there a cat?"}};
    const auto out = batch_assess(items, scorer, 1);
    ASSERT_EQ(out.size(), 3u);
    EXPECT_EQ(out[0].verdict->answer, Answer::yes);
    EXPECT_EQ(out[1].verdict->answer, Answer::no);
    EXPECT_EQ(out[2].verdict->answer, Answer::yes);
    EXPECT_THROW(batch_assess(items, scorer, 0), ArgumentError);
}

TEST(BatchAssess, EquivalentToSingleCalls) {
    std::vector<Image> images;
    for (int i = 0; i < 100; ++i) images.push_back(tagged(i % 3 == 0 ? std::set<std::string>{"dog"} : std::set<std::string>{}));
    for (int i = 0; i < 100; ++i) images[i].pixels[0] = static_cast<std::uint8_t>(i);
    std::vector<ScoringItem> items;
    for (const auto& img : images) items.push_back({&img, "Is there a dog?"});
    MockScorer batch_scorer({{}, 0.2, 4}), single_scorer({{}, 0.2, 4});
    const auto out = batch_assess(items, batch_scorer, 16);
    for (std::size_t i = 0; i < items.size(); ++i) {
        ASSERT_TRUE(out[i].ok());
        EXPECT_EQ(*out[i].verdict, assess(images[i], items[i].question, single_scorer));
    }
}

TEST(BatchAssess, FailureIsIsolated) {
    FlakyScorer scorer(0);
    const auto img = tagged({"dog"});
    std::vector<ScoringItem> items(100, {&img, "Is there a dog?"});
    items[37].question = "Is the server down?";
    const auto out = batch_assess(items, scorer, 4, fast_retry(3));
    std::size_t ok = 0;
    for (const auto& r : out) ok += r.ok();
    EXPECT_EQ(ok, 99u);
    EXPECT_FALSE(out[37].ok());
    EXPECT_EQ(out[37].attempts, 3);
    EXPECT_NE(out[37].error.find("attempts: 3"), std::string::npos);
}

TEST(Retry, RecoversFromTransientFailures) {
    FlakyScorer scorer(2);
    int attempts = 0;
    const auto v = assess_with_retry(tagged({"dog"}), "Is there a flaky dog?", scorer, fast_retry(3), &attempts);
    EXPECT_EQ(v.answer, Answer::yes);
    EXPECT_EQ(attempts, 3);
}

TEST(Retry, ParseFailuresAreNotRetried) {
    FlakyScorer scorer(0);
    int attempts = 0;
    EXPECT_THROW(assess_with_retry(tagged({}), "garbled question", scorer, fast_retry(5), &attempts), ParseError);
    EXPECT_EQ(attempts, 1);
    EXPECT_EQ(scorer.calls, 1);
}
