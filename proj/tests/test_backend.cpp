// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace cisprobe;
using cisprobe::testing::spec_with_lock;

namespace {

Tensor random_tensor(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> d;
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return Tensor({n}, v);
}

/// Runs base until step k, then `second` until T.
Image switched(const Backend& backend, std::uint64_t seed, const std::string& first, const std::string& second, std::size_t k) {
    auto session = backend.open_session();
    const std::size_t T = backend.grid().steps();
    const double w = backend.guidance_scale();
    auto s = session->init(seed);
    s = session->denoise_range(s, Condition(first, std::nullopt, w), 0, k);
    s = session->denoise_range(s, Condition(second, std::nullopt, w), k, T);
    return session->decode(s);
}

}  // namespace

TEST(Forward, ClosedFormExamples) {
    EXPECT_NEAR(forward_diffuse(Tensor::scalar(2), 0.25, Tensor::scalar(4)).values[0], 0.5 * 2 + std::sqrt(0.75) * 4, 1e-12);
    EXPECT_NEAR(forward_diffuse(Tensor::scalar(2), 0.25, Tensor::scalar(4)).values[0], 4.4641, 1e-4);
    EXPECT_DOUBLE_EQ(forward_diffuse(Tensor::scalar(3), 1.0, Tensor::scalar(100)).values[0], 3.0);
    EXPECT_THROW(forward_diffuse(Tensor::scalar(1), 1.5, Tensor::scalar(0)), ArgumentError);
}

TEST(Invert, ClosedFormExamples) {
    EXPECT_DOUBLE_EQ(invert_to_x0(Tensor::scalar(1), Tensor::scalar(0), 0.25).values[0], 2.0);
    EXPECT_THROW(invert_to_x0(Tensor::scalar(1), Tensor::scalar(0), 0.0), ArgumentError);
}

TEST(Invert, RoundTripRecoversX0) {
    std::mt19937_64 rng(5);
    const auto schedule = NoiseSchedule::scaled_linear();
    for (int i = 0; i < 200; ++i) {
        const auto x0 = random_tensor(rng, 16);
        const auto eps = random_tensor(rng, 16);
        const std::size_t t = 1 + rng() % 1000;
        const auto back = invert_to_x0(forward_diffuse(x0, t, schedule, eps), eps, t, schedule);
        for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(back.values[j], x0.values[j], 1e-9);
    }
}

TEST(Schedule, AlphaBarDecreasing) {
    const auto s = NoiseSchedule::scaled_linear();
    for (std::size_t t = 2; t <= 1000; ++t) EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.alpha_bar(1), 0.99);
}

TEST(Guidance, Examples) {
    EXPECT_DOUBLE_EQ(cfg_combine(Tensor::scalar(0.2), Tensor::scalar(0.1), 0).values[0], 0.2);
    EXPECT_NEAR(cfg_combine(Tensor::scalar(0.2), Tensor::scalar(0.1), 1).values[0], 0.3, 1e-15);
    // steering away from 0.2 starting at 0.1
    EXPECT_NEAR(negative_guidance_combine(Tensor::scalar(0.1), Tensor::scalar(0.2), 1).values[0], 0.0, 1e-15);
    EXPECT_THROW(cfg_combine(Tensor({2}, {0, 0}), Tensor::scalar(0), 1), ArgumentError);
}

TEST(Guidance, LinearInInputs) {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 100; ++i) {
        const auto a = random_tensor(rng, 4), b = random_tensor(rng, 4), c = random_tensor(rng, 4), d = random_tensor(rng, 4);
        const double w = std::uniform_real_distribution<double>(0, 10)(rng);
        Tensor ac = a, bd = b;
        for (std::size_t j = 0; j < 4; ++j) {
            ac.values[j] += c.values[j];
            bd.values[j] += d.values[j];
        }
        const auto lhs = cfg_combine(ac, bd, w);
        const auto r1 = cfg_combine(a, b, w), r2 = cfg_combine(c, d, w);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(lhs.values[j], r1.values[j] + r2.values[j], 1e-9);
    }
}

TEST(Session, EmptyRangeReturnsStateUnchanged) {
    const SyntheticBackend backend(spec_with_lock(10, "dog", 0.5));
    auto session = backend.open_session();
    const auto s = session->init(3);
    const auto same = session->denoise_range(s, Condition("a park", std::nullopt, 7.5), 0, 0);
    EXPECT_EQ(same.values.values, s.values.values);
    EXPECT_TRUE(same.history.empty());
}

TEST(Session, RangeErrors) {
    const SyntheticBackend backend(spec_with_lock(10, "dog", 0.5));
    auto session = backend.open_session();
    const auto s = session->init(3);
    const Condition c("a park", std::nullopt, 7.5);
    EXPECT_THROW(session->denoise_range(s, c, 3, 2), ArgumentError);
    EXPECT_THROW(session->denoise_range(s, c, 0, 11), ArgumentError);
    EXPECT_THROW(session->denoise_range(s, c, 2, 5), StateError);
    EXPECT_THROW(session->decode(session->denoise_range(s, c, 0, 9)), StateError);
    EXPECT_THROW(Condition("x", std::nullopt, -1), ArgumentError);
}

TEST(Session, BasePromptNeverCarriesConcept) {
    const SyntheticBackend backend(spec_with_lock(20, "dog", 0.5));
    for (std::uint64_t seed = 0; seed < 20; ++seed) EXPECT_EQ(switched(backend, seed, "a park", "a park", 0).tags.count("dog"), 0u);
}

TEST(Session, LockRuleOld) {
    const SyntheticBackend backend(spec_with_lock(50, "old", 0.6));
    const TimestepGrid& g = backend.grid();
    const std::string base = "a photo of a person in a cafe", concept_prompt = "a photo of an old person in a cafe";
    EXPECT_EQ(switched(backend, 1, base, concept_prompt, nearest_step(g, {0.7})).tags.count("old"), 1u);
    EXPECT_EQ(switched(backend, 1, base, concept_prompt, nearest_step(g, {0.5})).tags.count("old"), 0u);
    // every switch step against the lock rule, both directions
    for (std::size_t k = 0; k <= g.steps(); ++k) {
        const bool expect_insert = g.tau(k) >= 0.6;
        EXPECT_EQ(switched(backend, 2, base, concept_prompt, k).tags.count("old") == 1, expect_insert) << k;
        EXPECT_EQ(switched(backend, 2, concept_prompt, base, k).tags.count("old") == 1, !expect_insert) << k;
    }
}

TEST(Session, DecodeIsDeterministic) {
    const SyntheticBackend backend(spec_with_lock(25, "dog", 0.4));
    const auto a = switched(backend, 77, "a park", "a park with a dog", 12);
    const auto b = switched(backend, 77, "a park", "a park with a dog", 12);
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.encode(), b.encode());
    EXPECT_NE(a.pixels, switched(backend, 78, "a park", "a park with a dog", 12).pixels);
}

TEST(Session, SwitchChangesPixels) {
    const SyntheticBackend backend(spec_with_lock(25, "dog", 0.4));
    EXPECT_NE(switched(backend, 5, "a park", "a park with a dog", 0).pixels, switched(backend, 5, "a park", "a park with a dog", 25).pixels);
}

TEST(Image, EncodeDecodeRoundTrip) {
    const SyntheticBackend backend(spec_with_lock(10, "dog", 0.4));
    const auto img = switched(backend, 1, "a park", "a park with a dog", 0);
    ASSERT_EQ(img.tags.count("dog"), 1u);
    const auto back = Image::decode(img.encode());
    EXPECT_EQ(back, img);
    EXPECT_EQ(back.ref(), img.ref());
    EXPECT_THROW(Image::decode("P5\n1 1\n255\n"), ParseError);
    EXPECT_THROW(Image::decode("P6\n4 4\n255\nabc"), ParseError);
}

TEST(Synthetic, SpuriousAndSuppression) {
    auto spec = spec_with_lock(10, "dog", 0.5);
    spec.spurious_rate["dog"] = 1.0;
    spec.negative_suppression = 1.0;
    const SyntheticBackend backend(spec);
    auto session = backend.open_session();
    auto s = session->init(4);
    auto plain = session->decode(session->denoise_range(s, Condition("a park", std::nullopt, 7.5), 0, 10));
    auto negated = session->decode(session->denoise_range(s, Condition("a park", "dog", 7.5), 0, 10));
    auto unguided = session->decode(session->denoise_range(s, Condition("a park", "dog", 0.0), 0, 10));
    EXPECT_EQ(plain.tags.count("dog"), 1u);
    EXPECT_EQ(negated.tags.count("dog"), 0u);
    EXPECT_EQ(unguided.tags.count("dog"), 1u);
}

TEST(Synthetic, SpecValidation) {
    auto spec = spec_with_lock(10, "dog", 1.5);
    EXPECT_THROW(SyntheticBackend{spec}, ArgumentError);
    spec = spec_with_lock(10, "dog", 0.5);
    spec.response_noise = 0.5;
    EXPECT_THROW(SyntheticBackend{spec}, ArgumentError);
}

TEST(Synthetic, ConfigRoundTrip) {
    auto spec = spec_with_lock(40, "dog", 0.35);
    spec.spurious_rate["dog"] = 0.2;
    const SyntheticBackend backend(spec);
    const auto again = synthetic_spec_from_json(backend.config());
    EXPECT_EQ(again.grid.steps(), 40u);
    EXPECT_EQ(again.lock_tau, spec.lock_tau);
    EXPECT_EQ(again.spurious_rate, spec.spurious_rate);
}
