// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "cisprobe/error.hpp"
#include "cisprobe/hash.hpp"
#include "json.hpp"

namespace cisprobe {

inline constexpr std::string_view kConceptSlot = "<concept>";
inline constexpr std::string_view kArticleSlot = "<a>";

namespace text {

inline std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

inline bool is_word_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

/// Case-insensitive whole-word occurrences of `word` (which may span several words).
inline std::size_t count_word(std::string_view haystack, std::string_view word) {
    if (word.empty()) return 0;
    const std::string h = lower(haystack);
    const std::string w = lower(word);
    std::size_t count = 0;
    for (std::size_t pos = h.find(w); pos != std::string::npos; pos = h.find(w, pos + 1)) {
        const bool left_ok = pos == 0 || !is_word_char(h[pos - 1]);
        const std::size_t end = pos + w.size();
        const bool right_ok = end == h.size() || !is_word_char(h[end]);
        if (left_ok && right_ok) ++count;
    }
    return count;
}

inline bool contains_word(std::string_view haystack, std::string_view word) { return count_word(haystack, word) > 0; }

inline std::size_t count_substr(std::string_view haystack, std::string_view needle) {
    std::size_t count = 0;
    for (std::size_t pos = haystack.find(needle); pos != std::string_view::npos; pos = haystack.find(needle, pos + 1)) ++count;
    return count;
}

inline std::string replace_all(std::string s, std::string_view from, std::string_view to) {
    for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
        s.replace(pos, from.size(), to);
    }
    return s;
}

/// Collapses whitespace runs and trims; also removes spaces before , . ? !
inline std::string squeeze(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space && c != ',' && c != '.' && c != '?' && c != '!') out.push_back(' ');
        pending_space = false;
        out.push_back(c);
    }
    return out;
}

/// Removes every "[...]" group, brackets included.
inline std::string drop_groups(std::string_view s) {
    std::string out;
    int depth = 0;
    for (char c : s) {
        if (c == '[') {
            ++depth;
        } else if (c == ']' && depth > 0) {
            --depth;
        } else if (depth == 0) {
            out.push_back(c);
        }
    }
    return out;
}

inline std::string strip_group_marks(std::string_view s) {
    std::string out;
    for (char c : s)
        if (c != '[' && c != ']') out.push_back(c);
    return out;
}

/// Resolves each "<a>" to "a" or "an" from the first letter of the following word.
inline std::string resolve_articles(std::string s) {
    for (std::size_t pos = s.find(kArticleSlot); pos != std::string::npos; pos = s.find(kArticleSlot)) {
        std::size_t next = pos + kArticleSlot.size();
        while (next < s.size() && std::isspace(static_cast<unsigned char>(s[next]))) ++next;
        const char c = next < s.size() ? static_cast<char>(std::tolower(static_cast<unsigned char>(s[next]))) : 'x';
        const bool vowel = c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u';
        s.replace(pos, kArticleSlot.size(), vowel ? "an" : "a");
    }
    return s;
}

}  // namespace text

struct ConceptEntry {
    std::string category;
    std::string subcategory;
    std::string surface;
    std::string question_template;

    auto operator<=>(const ConceptEntry&) const = default;
};

/// A base-prompt template; an optional "<concept>" slot marks where the concept
/// goes in the concept-prompt form. "<a>" renders as the matching article.
struct ContextSpec {
    std::string name;
    std::string prompt_template;

    bool operator==(const ContextSpec&) const = default;
};

struct Subcategory {
    std::string name;
    std::string question_template;
    std::vector<std::string> concepts;
    std::vector<ContextSpec> contexts;
    // context name -> paraphrased templates (the canonical template excluded)
    std::map<std::string, std::vector<std::string>> variants;

    bool operator==(const Subcategory&) const = default;
};

struct Category {
    std::string name;
    std::vector<Subcategory> subcategories;

    bool operator==(const Category&) const = default;
};

/// Template text in "[...]" only appears in the concept prompt, e.g.
/// "an image of a park[ with <a> <concept>]".
inline std::string render_base_prompt(std::string_view prompt_template) {
    std::string s = text::replace_all(text::drop_groups(prompt_template), kConceptSlot, "");
    return text::squeeze(text::resolve_articles(text::squeeze(s)));
}

inline std::string render_concept_prompt(std::string_view prompt_template, std::string_view surface) {
    const std::string plain = text::strip_group_marks(prompt_template);
    if (plain.find(kConceptSlot) == std::string::npos) {
        return text::squeeze(text::resolve_articles(plain)) + ", " + std::string(surface);
    }
    std::string s = text::replace_all(plain, kConceptSlot, surface);
    return text::squeeze(text::resolve_articles(text::squeeze(s)));
}

struct PromptPair {
    std::string base_prompt;
    std::string concept_prompt;
    ConceptEntry entry;
    std::string context;
    std::string prompt_template;
    std::size_t variant = 0;  // 0 = canonical wording

    /// Stable identifier: category|subcategory|concept|context[#vN].
    std::string key() const {
        std::string k = entry.category + "|" + entry.subcategory + "|" + entry.surface + "|" + context;
        if (variant > 0) k += "#v" + std::to_string(variant);
        return k;
    }

    bool operator==(const PromptPair&) const = default;
};

struct PromptVariantSet {
    PromptPair canonical;
    std::vector<PromptPair> variants;
};

inline std::string render_question(const ConceptEntry& entry) {
    return text::replace_all(entry.question_template, kConceptSlot, entry.surface);
}

/// Builds P_b / P_c for one concept and context template, enforcing the
/// containment rules (base never mentions the concept, concept prompt does).
inline PromptPair make_pair(const ConceptEntry& entry, const ContextSpec& context, std::size_t variant = 0) {
    PromptPair pair{render_base_prompt(context.prompt_template),
                    render_concept_prompt(context.prompt_template, entry.surface),
                    entry,
                    context.name,
                    context.prompt_template,
                    variant};
    if (text::contains_word(pair.base_prompt, entry.surface)) {
        throw ValidationError("base prompt \"" + pair.base_prompt + "\" already mentions concept \"" + entry.surface + "\"");
    }
    if (!text::contains_word(pair.concept_prompt, entry.surface)) {
        throw ValidationError("concept prompt \"" + pair.concept_prompt + "\" does not mention \"" + entry.surface + "\"");
    }
    return pair;
}

struct PairFilter {
    std::optional<std::string> category;
    std::optional<std::string> subcategory;
    std::optional<std::string> surface;
    std::optional<std::string> context;
};

class Taxonomy {
public:
    Taxonomy() = default;
    Taxonomy(std::string version, std::vector<Category> categories)
        : version_(std::move(version)), categories_(std::move(categories)) {}

    const std::string& version() const noexcept { return version_; }
    const std::vector<Category>& categories() const noexcept { return categories_; }

    std::vector<ConceptEntry> entries() const {
        std::vector<ConceptEntry> out;
        for (const auto& cat : categories_)
            for (const auto& sub : cat.subcategories)
                for (const auto& c : sub.concepts) out.push_back({cat.name, sub.name, c, sub.question_template});
        return out;
    }

    const Subcategory& subcategory(std::string_view category, std::string_view name) const {
        for (const auto& cat : categories_) {
            if (cat.name != category) continue;
            for (const auto& sub : cat.subcategories)
                if (sub.name == name) return sub;
        }
        throw LookupError("unknown subcategory \"" + std::string(category) + "/" + std::string(name) + "\"");
    }

    ConceptEntry entry(std::string_view category, std::string_view subcategory_name, std::string_view surface) const {
        const auto& sub = subcategory(category, subcategory_name);
        if (std::find(sub.concepts.begin(), sub.concepts.end(), surface) == sub.concepts.end()) {
            throw LookupError("unknown concept \"" + std::string(surface) + "\" in " + std::string(subcategory_name));
        }
        return {std::string(category), sub.name, std::string(surface), sub.question_template};
    }

    /// Pair from its key() form.
    PromptPair pair(std::string_view key) const {
        std::string k(key);
        std::size_t variant = 0;
        if (auto hash = k.rfind("#v"); hash != std::string::npos) {
            variant = std::stoul(k.substr(hash + 2));
            k.resize(hash);
        }
        std::vector<std::string> parts;
        std::stringstream ss(k);
        for (std::string part; std::getline(ss, part, '|');) parts.push_back(part);
        if (parts.size() != 4) throw LookupError("malformed pair key \"" + std::string(key) + "\"");
        const auto e = entry(parts[0], parts[1], parts[2]);
        const auto& sub = subcategory(parts[0], parts[1]);
        for (const auto& ctx : sub.contexts) {
            if (ctx.name != parts[3]) continue;
            if (variant == 0) return make_pair(e, ctx);
            auto it = sub.variants.find(ctx.name);
            if (it == sub.variants.end() || variant > it->second.size()) {
                throw LookupError("unknown variant in pair key \"" + std::string(key) + "\"");
            }
            return make_pair(e, {ctx.name, it->second[variant - 1]}, variant);
        }
        throw LookupError("unknown context \"" + parts[3] + "\"");
    }

    bool operator==(const Taxonomy&) const = default;

private:
    std::string version_;
    std::vector<Category> categories_;
};

/// All canonical pairs under `filter`, ordered by (category, subcategory,
/// concept, context) lexicographically.
inline std::vector<PromptPair> enumerate_pairs(const Taxonomy& taxonomy, const PairFilter& filter = {}) {
    bool cat_seen = !filter.category, sub_seen = !filter.subcategory, con_seen = !filter.surface, ctx_seen = !filter.context;
    std::vector<PromptPair> out;
    for (const auto& cat : taxonomy.categories()) {
        cat_seen = cat_seen || cat.name == *filter.category;
        for (const auto& sub : cat.subcategories) {
            sub_seen = sub_seen || sub.name == *filter.subcategory;
            for (const auto& c : sub.concepts) con_seen = con_seen || c == *filter.surface;
            for (const auto& ctx : sub.contexts) ctx_seen = ctx_seen || ctx.name == *filter.context;

            if (filter.category && cat.name != *filter.category) continue;
            if (filter.subcategory && sub.name != *filter.subcategory) continue;
            for (const auto& c : sub.concepts) {
                if (filter.surface && c != *filter.surface) continue;
                const ConceptEntry e{cat.name, sub.name, c, sub.question_template};
                for (const auto& ctx : sub.contexts) {
                    if (filter.context && ctx.name != *filter.context) continue;
                    out.push_back(make_pair(e, ctx));
                }
            }
        }
    }
    if (!cat_seen) throw LookupError("unknown category selector \"" + *filter.category + "\"");
    if (!sub_seen) throw LookupError("unknown subcategory selector \"" + *filter.subcategory + "\"");
    if (!con_seen) throw LookupError("unknown concept selector \"" + *filter.surface + "\"");
    if (!ctx_seen) throw LookupError("unknown context selector \"" + *filter.context + "\"");

    std::sort(out.begin(), out.end(), [](const PromptPair& a, const PromptPair& b) {
        return std::tie(a.entry.category, a.entry.subcategory, a.entry.surface, a.context) <
               std::tie(b.entry.category, b.entry.subcategory, b.entry.surface, b.context);
    });
    return out;
}

/// Canonical pair plus its stored paraphrases (empty when none are stored).
inline PromptVariantSet variant_set(const Taxonomy& taxonomy, const PromptPair& canonical) {
    PromptVariantSet set{canonical, {}};
    const auto& sub = taxonomy.subcategory(canonical.entry.category, canonical.entry.subcategory);
    if (auto it = sub.variants.find(canonical.context); it != sub.variants.end()) {
        for (std::size_t i = 0; i < it->second.size(); ++i) {
            set.variants.push_back(make_pair(canonical.entry, {canonical.context, it->second[i]}, i + 1));
        }
    }
    return set;
}

/// Two concepts introduced together (P_b -> P_{c1,c2}).
struct MultiConceptPrompt {
    std::string base_prompt;
    std::string combined_prompt;
    std::vector<ConceptEntry> targets;
};

inline MultiConceptPrompt combine_pairs(const PromptPair& first, const PromptPair& second) {
    if (first.base_prompt != second.base_prompt) {
        throw ArgumentError("multi-concept pairs must share a base prompt: \"" + first.base_prompt + "\" vs \"" +
                            second.base_prompt + "\"");
    }
    std::string combined;
    if (first.prompt_template == second.prompt_template &&
        first.prompt_template.find(kConceptSlot) != std::string::npos) {
        combined = render_concept_prompt(first.prompt_template, first.entry.surface + " " + second.entry.surface);
    } else {
        combined = first.concept_prompt + ", " + second.entry.surface;
    }
    for (const auto* p : {&first, &second}) {
        if (!text::contains_word(combined, p->entry.surface)) {
            throw ValidationError("combined prompt \"" + combined + "\" does not render \"" + p->entry.surface + "\"");
        }
    }
    return {first.base_prompt, combined, {first.entry, second.entry}};
}

// ---------------------------------------------------------------------------
// Document I/O

namespace detail {

inline const nlohmann::json& require(const nlohmann::json& node, const char* key, const std::string& path) {
    if (!node.is_object() || !node.contains(key)) throw ParseError(std::string("missing field \"") + key + "\"", path);
    return node.at(key);
}

inline std::string require_string(const nlohmann::json& node, const char* key, const std::string& path) {
    const auto& v = require(node, key, path);
    if (!v.is_string() || v.get<std::string>().empty()) {
        throw ParseError(std::string("field \"") + key + "\" must be a non-empty string", path + "/" + key);
    }
    return v.get<std::string>();
}

inline const nlohmann::json& require_array(const nlohmann::json& node, const char* key, const std::string& path) {
    const auto& v = require(node, key, path);
    if (!v.is_array()) throw ParseError(std::string("field \"") + key + "\" must be an array", path + "/" + key);
    if (v.empty()) throw ParseError(std::string("field \"") + key + "\" must not be empty", path + "/" + key);
    return v;
}

}  // namespace detail

inline Taxonomy taxonomy_from_json(const nlohmann::json& doc) {
    using detail::require_array;
    using detail::require_string;
    const std::string version = require_string(doc, "version", "");
    std::vector<Category> categories;
    std::set<std::tuple<std::string, std::string, std::string>> seen;

    const auto& cats = require_array(doc, "categories", "");
    for (std::size_t ci = 0; ci < cats.size(); ++ci) {
        const std::string cpath = "/categories/" + std::to_string(ci);
        Category cat{require_string(cats[ci], "name", cpath), {}};
        const auto& subs = require_array(cats[ci], "subcategories", cpath);
        for (std::size_t si = 0; si < subs.size(); ++si) {
            const std::string spath = cpath + "/subcategories/" + std::to_string(si);
            const auto& node = subs[si];
            Subcategory sub;
            sub.name = require_string(node, "name", spath);
            sub.question_template = require_string(node, "question_template", spath);
            if (text::count_substr(sub.question_template, kConceptSlot) != 1) {
                throw ParseError("question_template must contain exactly one <concept> placeholder",
                                 spath + "/question_template");
            }
            const auto& concepts = require_array(node, "concepts", spath);
            for (std::size_t k = 0; k < concepts.size(); ++k) {
                const std::string kpath = spath + "/concepts/" + std::to_string(k);
                if (!concepts[k].is_string() || concepts[k].get<std::string>().empty()) {
                    throw ParseError("concept must be a non-empty string", kpath);
                }
                const auto surface = concepts[k].get<std::string>();
                if (!seen.emplace(cat.name, sub.name, surface).second) {
                    throw ParseError("duplicate concept (" + cat.name + ", " + sub.name + ", " + surface + ")", kpath);
                }
                sub.concepts.push_back(surface);
            }
            const auto& contexts = require_array(node, "contexts", spath);
            for (std::size_t x = 0; x < contexts.size(); ++x) {
                const std::string xpath = spath + "/contexts/" + std::to_string(x);
                if (contexts[x].is_string()) {
                    const auto t = contexts[x].get<std::string>();
                    if (t.empty()) throw ParseError("context must be non-empty", xpath);
                    sub.contexts.push_back({t, t});
                } else {
                    sub.contexts.push_back({require_string(contexts[x], "name", xpath),
                                            require_string(contexts[x], "template", xpath)});
                }
                if (text::count_substr(sub.contexts.back().prompt_template, kConceptSlot) > 1) {
                    throw ParseError("context template has more than one <concept> slot", xpath);
                }
            }
            if (node.contains("variants")) {
                const auto& variants = node.at("variants");
                if (!variants.is_object()) throw ParseError("variants must be an object", spath + "/variants");
                for (const auto& [ctx_name, list] : variants.items()) {
                    const std::string vpath = spath + "/variants/" + ctx_name;
                    const bool known = std::any_of(sub.contexts.begin(), sub.contexts.end(),
                                                   [&](const ContextSpec& c) { return c.name == ctx_name; });
                    if (!known) throw ParseError("variants reference unknown context", vpath);
                    if (!list.is_array()) throw ParseError("variant list must be an array", vpath);
                    for (const auto& v : list) {
                        if (!v.is_string()) throw ParseError("variant must be a string", vpath);
                        sub.variants[ctx_name].push_back(v.get<std::string>());
                    }
                }
            }
            // Every pair (canonical and paraphrased) must satisfy the containment rules.
            for (const auto& surface : sub.concepts) {
                const ConceptEntry e{cat.name, sub.name, surface, sub.question_template};
                for (const auto& ctx : sub.contexts) {
                    try {
                        make_pair(e, ctx);
                        if (auto it = sub.variants.find(ctx.name); it != sub.variants.end())
                            for (const auto& v : it->second) make_pair(e, {ctx.name, v});
                    } catch (const ValidationError& err) {
                        throw ParseError(err.what(), spath + "/contexts");
                    }
                }
            }
            cat.subcategories.push_back(std::move(sub));
        }
        categories.push_back(std::move(cat));
    }
    return Taxonomy(version, std::move(categories));
}

inline nlohmann::json to_json(const Taxonomy& taxonomy) {
    nlohmann::json doc;
    doc["version"] = taxonomy.version();
    doc["categories"] = nlohmann::json::array();
    for (const auto& cat : taxonomy.categories()) {
        nlohmann::json c{{"name", cat.name}, {"subcategories", nlohmann::json::array()}};
        for (const auto& sub : cat.subcategories) {
            nlohmann::json s{{"name", sub.name}, {"question_template", sub.question_template}, {"concepts", sub.concepts}};
            s["contexts"] = nlohmann::json::array();
            for (const auto& ctx : sub.contexts) s["contexts"].push_back({{"name", ctx.name}, {"template", ctx.prompt_template}});
            if (!sub.variants.empty()) s["variants"] = sub.variants;
            c["subcategories"].push_back(std::move(s));
        }
        doc["categories"].push_back(std::move(c));
    }
    return doc;
}

inline Taxonomy load_taxonomy(std::string_view document) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("taxonomy is not valid JSON: ") + e.what(), "");
    }
    return taxonomy_from_json(doc);
}

inline Taxonomy load_taxonomy_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw NotFoundError("cannot open taxonomy file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return load_taxonomy(ss.str());
}

/// Content hash of the canonical serialization.
inline std::string taxonomy_hash(const Taxonomy& taxonomy) { return sha256_hex(to_json(taxonomy).dump()); }

}  // namespace cisprobe
