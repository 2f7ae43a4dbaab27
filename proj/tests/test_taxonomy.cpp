// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "support.hpp"

using namespace cisprobe;
using cisprobe::testing::full_taxonomy;
using cisprobe::testing::tiny_taxonomy;

TEST(Taxonomy, EntriesCarrySubcategoryQuestion) {
    const auto tax = full_taxonomy();
    const auto e = tax.entry("Objects", "Animals", "horse");
    EXPECT_EQ(e.question_template, "Is there a <concept> in the image?");
    EXPECT_EQ(render_question(e), "Is there a horse in the image?");
}

TEST(Taxonomy, AgeGroupConcepts) {
    const auto tax = full_taxonomy();
    const auto& sub = tax.subcategory("Demographics", "Age group");
    EXPECT_EQ(sub.concepts, (std::vector<std::string>{"baby", "child", "teenager", "adult", "old"}));
    std::size_t n = 0;
    for (const auto& e : tax.entries()) n += e.subcategory == "Age group";
    EXPECT_EQ(n, 5u);
    EXPECT_EQ(render_question(tax.entry("Demographics", "Age group", "baby")), "Is the person in the image a baby?");
}

TEST(Taxonomy, EmptyConceptListIsParseError) {
    const char* doc = R"({"version": "x", "categories": [{"name": "A", "subcategories": [
        {"name": "B", "question_template": "Is there a <concept>?", "concepts": [],
         "contexts": [{"name": "c", "template": "a room"}]}]}]})";
    EXPECT_THROW(load_taxonomy(doc), ParseError);
}

TEST(Taxonomy, QuestionWithoutSlotIsParseError) {
    const char* doc = R"({"version": "x", "categories": [{"name": "A", "subcategories": [
        {"name": "B", "question_template": "Is there something?", "concepts": ["dog"],
         "contexts": [{"name": "c", "template": "a room"}]}]}]})";
    EXPECT_THROW(load_taxonomy(doc), ParseError);
}

TEST(Taxonomy, MalformedJsonIsParseError) {
    EXPECT_THROW(load_taxonomy("{not json"), ParseError);
    EXPECT_THROW(load_taxonomy(R"({"categories": []})"), ParseError);
}

TEST(Taxonomy, RoundTripsThroughJson) {
    const auto tax = full_taxonomy();
    const auto again = taxonomy_from_json(to_json(tax));
    EXPECT_EQ(tax, again);
    EXPECT_EQ(taxonomy_hash(tax), taxonomy_hash(again));
}

TEST(Taxonomy, PairCounts) {
    const auto tax = full_taxonomy();
    EXPECT_EQ(enumerate_pairs(tax, {"Objects", "Animals", "horse", {}}).size(), 8u);
    const auto tiny = tiny_taxonomy();
    EXPECT_EQ(enumerate_pairs(tiny, {"Animals", "Pets", {}, {}}).size(), 4u);
    // 5 concepts x 2 contexts
    const char* doc = R"({"version": "x", "categories": [{"name": "A", "subcategories": [
        {"name": "B", "question_template": "Is there a <concept>?", "concepts": ["fox", "owl", "bee", "elk", "yak"],
         "contexts": [{"name": "c1", "template": "a field[ with <a> <concept>]"},
                      {"name": "c2", "template": "a lake[ and <a> <concept>]"}]}]}]})";
    EXPECT_EQ(enumerate_pairs(load_taxonomy(doc)).size(), 10u);
}

TEST(Taxonomy, UnknownSelectorIsLookupError) {
    const auto tax = tiny_taxonomy();
    EXPECT_THROW(enumerate_pairs(tax, {"Plants", {}, {}, {}}), LookupError);
    EXPECT_THROW(enumerate_pairs(tax, {{}, {}, "wolf", {}}), LookupError);
    EXPECT_THROW(tax.pair("Animals|Pets|dog|garage"), LookupError);
}

TEST(Taxonomy, DisjointSelectorsGiveEmptyList) {
    const auto tax = tiny_taxonomy();
    EXPECT_TRUE(enumerate_pairs(tax, {"Animals", {}, "old", {}}).empty());
}

TEST(Taxonomy, PairsRespectContainment) {
    for (const auto& p : enumerate_pairs(full_taxonomy())) {
        EXPECT_FALSE(text::contains_word(p.base_prompt, p.entry.surface)) << p.key();
        EXPECT_TRUE(text::contains_word(p.concept_prompt, p.entry.surface)) << p.key();
    }
}

TEST(Taxonomy, RendersOptionalGroupsAndArticles) {
    const auto tax = tiny_taxonomy();
    const auto p = tax.pair("Animals|Pets|dog|park");
    EXPECT_EQ(p.base_prompt, "an image of a park");
    EXPECT_EQ(p.concept_prompt, "an image of a park with a dog");
    const auto s = tax.pair("Animals|Pets|cat|sofa");
    EXPECT_EQ(s.base_prompt, "a photo of a sofa");
    EXPECT_EQ(s.concept_prompt, "a photo of a sofa with a cat on it");
    const auto a = tax.pair("Demographics|Age group|old|cafe");
    EXPECT_EQ(a.base_prompt, "a photo of a person in a cafe");
    EXPECT_EQ(a.concept_prompt, "a photo of an old person in a cafe");
}

TEST(Taxonomy, SlotlessContextAppendsConcept) {
    ConceptEntry e{"A", "B", "lamp", "Is there a <concept>?"};
    const auto p = make_pair(e, {"c", "a quiet room"});
    EXPECT_EQ(p.base_prompt, "a quiet room");
    EXPECT_EQ(p.concept_prompt, "a quiet room, lamp");
}

TEST(Taxonomy, BaseMentioningConceptIsRejected) {
    ConceptEntry e{"A", "B", "dog", "Is there a <concept>?"};
    EXPECT_THROW(make_pair(e, {"c", "a dog park[ with <a> <concept>]"}), ValidationError);
}

TEST(Taxonomy, PairKeysRoundTrip) {
    const auto tax = tiny_taxonomy();
    for (const auto& p : enumerate_pairs(tax)) {
        EXPECT_EQ(tax.pair(p.key()), p);
        for (const auto& v : variant_set(tax, p).variants) EXPECT_EQ(tax.pair(v.key()), v);
    }
}

TEST(Taxonomy, VariantsShareBaseContainment) {
    const auto tax = tiny_taxonomy();
    const auto set = variant_set(tax, tax.pair("Animals|Pets|dog|park"));
    ASSERT_EQ(set.variants.size(), 2u);
    EXPECT_EQ(set.variants[0].key(), "Animals|Pets|dog|park#v1");
    EXPECT_EQ(set.variants[1].concept_prompt, "a sunny park and a dog in spring");
    EXPECT_EQ(set.variants[1].base_prompt, "a sunny park in spring");
    EXPECT_TRUE(variant_set(tax, tax.pair("Animals|Pets|dog|sofa")).variants.empty());
}

TEST(Taxonomy, EnumerationIsPureAndSorted) {
    const auto tax = full_taxonomy();
    const auto a = enumerate_pairs(tax);
    const auto b = enumerate_pairs(tax);
    EXPECT_EQ(a, b);
    for (std::size_t i = 1; i < a.size(); ++i) {
        const auto& x = a[i - 1].entry;
        const auto& y = a[i].entry;
        EXPECT_LE(std::tie(x.category, x.subcategory, x.surface, a[i - 1].context),
                  std::tie(y.category, y.subcategory, y.surface, a[i].context));
    }
}

TEST(Taxonomy, CombinePairsNeedsSharedBase) {
    const auto tax = tiny_taxonomy();
    const auto m = combine_pairs(tax.pair("Animals|Pets|dog|park"), tax.pair("Animals|Pets|cat|park"));
    EXPECT_TRUE(text::contains_word(m.combined_prompt, "dog"));
    EXPECT_TRUE(text::contains_word(m.combined_prompt, "cat"));
    EXPECT_THROW(combine_pairs(tax.pair("Animals|Pets|dog|park"), tax.pair("Animals|Pets|cat|sofa")), ArgumentError);
}

TEST(Text, WholeWordMatching) {
    EXPECT_TRUE(text::contains_word("A Dog runs", "dog"));
    EXPECT_FALSE(text::contains_word("a dogma", "dog"));
    EXPECT_TRUE(text::contains_word("with curly hair today", "curly hair"));
    EXPECT_EQ(text::resolve_articles("<a> owl and <a> cat"), "an owl and a cat");
}
