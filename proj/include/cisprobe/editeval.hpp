// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cisprobe/backend.hpp"
#include "cisprobe/error.hpp"
#include "cisprobe/hash.hpp"
#include "cisprobe/intervene.hpp"
#include "cisprobe/parallel.hpp"
#include "cisprobe/stats.hpp"
#include "httplib.h"

namespace cisprobe {

using Embedding = std::vector<double>;

inline double dot(const Embedding& a, const Embedding& b) {
    if (a.size() != b.size()) throw ArgumentError("embedding dimensions differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Embedding& a) { return std::sqrt(dot(a, a)); }

inline Embedding normalized(Embedding v) {
    const double n = norm(v);
    if (!(n > 0.0)) throw ArgumentError("cannot normalize a zero vector");
    for (auto& x : v) x /= n;
    return v;
}

/// Cosine similarity clamped to [-1, 1].
inline double cosine(const Embedding& a, const Embedding& b) {
    const double na = norm(a), nb = norm(b);
    if (!(na > 0.0 && nb > 0.0)) throw ArgumentError("cosine of a zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

/// Image and text encoders sharing one space. Returned vectors are unit-norm.
class EmbeddingBackend {
public:
    virtual ~EmbeddingBackend() = default;
    virtual std::string id() const = 0;
    virtual std::size_t dimension() const = 0;
    virtual Embedding embed_image(const Image& image) = 0;
    virtual Embedding embed_text(const std::string& text) = 0;
    virtual std::size_t concurrency_limit() const { return 1; }
};

/// Fixed vectors registered per image ref and per text, for hand-computed fixtures.
class PlantedEmbeddings final : public EmbeddingBackend {
public:
    explicit PlantedEmbeddings(std::size_t dimension) : dimension_(dimension) {
        if (dimension == 0) throw ArgumentError("embedding dimension must be positive");
    }

    std::string id() const override { return "planted/" + std::to_string(dimension_); }
    std::size_t dimension() const override { return dimension_; }
    std::size_t concurrency_limit() const override { return 64; }

    void plant_image(const std::string& image_ref, const Embedding& v) {
        std::lock_guard lock(mutex_);
        images_[image_ref] = checked(v);
    }
    void plant_image(const Image& image, const Embedding& v) { plant_image(image.ref(), v); }
    void plant_text(const std::string& text, const Embedding& v) {
        std::lock_guard lock(mutex_);
        texts_[text] = checked(v);
    }

    Embedding embed_image(const Image& image) override {
        std::lock_guard lock(mutex_);
        auto it = images_.find(image.ref());
        if (it == images_.end()) throw LookupError("no planted embedding for image " + image.ref());
        return it->second;
    }
    Embedding embed_text(const std::string& text) override {
        std::lock_guard lock(mutex_);
        auto it = texts_.find(text);
        if (it == texts_.end()) throw LookupError("no planted embedding for text \"" + text + "\"");
        return it->second;
    }

private:
    Embedding checked(const Embedding& v) const {
        if (v.size() != dimension_) throw ArgumentError("planted embedding has wrong dimension");
        return normalized(v);
    }

    std::size_t dimension_;
    std::mutex mutex_;
    std::map<std::string, Embedding> images_;
    std::map<std::string, Embedding> texts_;
};

/// Deterministic hashed bag-of-words encoder for the synthetic stack. Text maps
/// to the sum of per-word vectors; an image maps to the sum of its tag vectors
/// plus a pixel-derived component, so concept tags pull images toward prompts
/// mentioning them.
class SyntheticEmbeddings final : public EmbeddingBackend {
public:
    explicit SyntheticEmbeddings(std::size_t dimension = 64, double tag_weight = 1.5) : dimension_(dimension), tag_weight_(tag_weight) {
        if (dimension < 2) throw ArgumentError("embedding dimension must be at least 2");
    }

    std::string id() const override { return "synthetic-embed/" + std::to_string(dimension_); }
    std::size_t dimension() const override { return dimension_; }
    std::size_t concurrency_limit() const override { return 64; }

    Embedding embed_text(const std::string& text) override {
        Embedding v(dimension_, 0.0);
        for (const auto& w : words(text)) add(v, word_vector(w), 1.0);
        if (!(norm(v) > 0.0)) v[0] = 1.0;
        return normalized(std::move(v));
    }

    Embedding embed_image(const Image& image) override {
        Embedding v(dimension_, 0.0);
        if (!image.pixels.empty()) {
            Embedding bins(dimension_, 0.0);
            std::vector<double> counts(dimension_, 0.0);
            double mean = 0.0;
            for (auto p : image.pixels) mean += p;
            mean /= static_cast<double>(image.pixels.size());
            for (std::size_t i = 0; i < image.pixels.size(); ++i) {
                bins[i % dimension_] += (static_cast<double>(image.pixels[i]) - mean) / 255.0;
                counts[i % dimension_] += 1.0;
            }
            for (std::size_t i = 0; i < dimension_; ++i) bins[i] /= counts[i] > 0 ? counts[i] : 1.0;
            if (norm(bins) > 0.0) add(v, normalized(bins), 1.0);
        }
        for (const auto& tag : image.tags)
            for (const auto& w : words(tag)) add(v, word_vector(w), tag_weight_);
        if (!(norm(v) > 0.0)) v[0] = 1.0;
        return normalized(std::move(v));
    }

private:
    static std::vector<std::string> words(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (std::isalnum(static_cast<unsigned char>(c))) {
                cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            } else if (!cur.empty()) {
                out.push_back(std::move(cur));
                cur.clear();
            }
        }
        if (!cur.empty()) out.push_back(std::move(cur));
        return out;
    }

    Embedding word_vector(const std::string& w) const {
        return normalized(detail::keyed_pattern(mix_keys(fnv1a64(w), dimension_), dimension_));
    }

    static void add(Embedding& into, const Embedding& v, double weight) {
        for (std::size_t i = 0; i < into.size(); ++i) into[i] += weight * v[i];
    }

    std::size_t dimension_;
    double tag_weight_;
};

// Embedding wire contract: POST {"image": base64 bytes} or {"text": string}
// -> {"embedding": [numbers], "dimension": integer}.

inline nlohmann::json answer_embedding_request(EmbeddingBackend& backend, const nlohmann::json& request) {
    Embedding v;
    if (request.contains("image")) {
        v = backend.embed_image(Image::decode(base64_decode(request.at("image").get<std::string>())));
    } else if (request.contains("text")) {
        v = backend.embed_text(request.at("text").get<std::string>());
    } else {
        throw ArgumentError("embedding request needs \"image\" or \"text\"");
    }
    return {{"embedding", v}, {"dimension", v.size()}};
}

class HttpEmbeddingBackend final : public EmbeddingBackend {
public:
    HttpEmbeddingBackend(std::string base_url, std::string path, std::string model_id, std::size_t dimension, std::size_t limit = 4,
                         int timeout_seconds = 60)
        : base_url_(std::move(base_url)),
          path_(std::move(path)),
          model_id_(std::move(model_id)),
          dimension_(dimension),
          limit_(limit),
          timeout_seconds_(timeout_seconds) {}

    std::string id() const override { return "http/" + model_id_; }
    std::size_t dimension() const override { return dimension_; }
    std::size_t concurrency_limit() const override { return limit_; }

    Embedding embed_image(const Image& image) override { return post({{"image", base64_encode(image.encode())}}); }
    Embedding embed_text(const std::string& text) override { return post({{"text", text}}); }

private:
    Embedding post(const nlohmann::json& request) const {
        httplib::Client client(base_url_);
        client.set_read_timeout(timeout_seconds_, 0);
        client.set_connection_timeout(timeout_seconds_, 0);
        auto res = client.Post(path_, request.dump(), "application/json");
        if (!res) throw Error("embedding endpoint unreachable: " + httplib::to_string(res.error()));
        if (res->status != 200) throw Error("embedding endpoint returned HTTP " + std::to_string(res->status));
        Embedding v;
        try {
            const auto body = nlohmann::json::parse(res->body);
            v = body.at("embedding").get<Embedding>();
            if (body.at("dimension").get<std::size_t>() != v.size()) throw ParseError("declared dimension disagrees with vector length", "/dimension");
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("embedding response malformed: ") + e.what(), "/");
        }
        if (v.size() != dimension_) throw ParseError("embedding has dimension " + std::to_string(v.size()), "/embedding");
        return normalized(std::move(v));
    }

    std::string base_url_;
    std::string path_;
    std::string model_id_;
    std::size_t dimension_;
    std::size_t limit_;
    int timeout_seconds_;
};

// ---------------------------------------------------------------------------
// Probability to step

/// Point-wise mean of the concept curves of one subcategory. n and yes are the
/// totals across concepts; the band is the Wilson interval of the mean at that n.
inline CisCurve representative_curve(const std::vector<CisCurve>& curves, double z = kDefaultZ) {
    if (curves.empty()) throw ArgumentError("representative curve needs at least one curve");
    const auto& first = curves.front();
    for (const auto& c : curves) {
        if (c.points.size() != first.points.size()) throw ArgumentError("curves are on different grids");
        for (std::size_t i = 0; i < c.points.size(); ++i)
            if (c.points[i].k != first.points[i].k || c.points[i].tau != first.points[i].tau) throw ArgumentError("curves are on different grids");
    }
    if (curves.size() == 1) return first;
    CisCurve out{first.kind, "representative", {}};
    for (std::size_t i = 0; i < first.points.size(); ++i) {
        CurvePoint p{first.points[i].k, first.points[i].tau, 0, 0, std::nullopt, 0.0, 1.0};
        double sum = 0.0;
        std::size_t defined = 0;
        for (const auto& c : curves) {
            const auto& q = c.points[i];
            p.n += q.n;
            p.yes += q.yes;
            if (q.defined()) {
                sum += *q.estimate;
                ++defined;
            }
        }
        if (defined) {
            p.estimate = sum / static_cast<double>(defined);
            if (p.n > 0) {
                const auto iv = wilson_from_proportion(*p.estimate, static_cast<double>(p.n), z);
                p.lo = iv.lo;
                p.hi = iv.hi;
            }
        }
        out.points.push_back(p);
    }
    return out;
}

/// Grid step whose C is nearest to p; ties go to the larger tau (earlier intervention).
inline std::size_t edit_at_probability(const CisCurve& curve, double p) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("edit probability must lie in [0, 1]");
    std::optional<std::size_t> best;
    double best_gap = 0.0, best_tau = 0.0;
    constexpr double kTie = 1e-12;
    for (const auto& pt : curve.points) {
        if (!pt.defined()) continue;
        const double gap = std::abs(*pt.estimate - p);
        if (!best || gap < best_gap - kTie || (std::abs(gap - best_gap) <= kTie && pt.tau > best_tau)) {
            best = pt.k;
            best_gap = gap;
            best_tau = pt.tau;
        }
    }
    if (!best) throw ArgumentError("edit probability needs a curve with at least one defined point");
    return *best;
}

/// Default operating band in tau: between the 50% and 70% crossing levels.
inline constexpr std::array<double, 2> kRecommendedBand{0.5, 0.7};

inline bool in_recommended_band(double tau) { return tau >= kRecommendedBand[0] && tau <= kRecommendedBand[1]; }

// ---------------------------------------------------------------------------
// Metrics

inline double clip_img(const Embedding& base_image, const Embedding& edited_image) { return cosine(base_image, edited_image); }

inline double clip_txt(const Embedding& edited_image, const Embedding& concept_text) { return cosine(edited_image, concept_text); }

struct DirectionScore {
    double value = 0.0;
    bool degenerate = false;
};

inline constexpr double kDegenerateNorm = 1e-8;

/// Cosine between the image-edit direction and the text-edit direction.
inline DirectionScore clip_dir(const Embedding& base_image, const Embedding& edited_image, const Embedding& base_text,
                               const Embedding& concept_text) {
    if (base_image.size() != edited_image.size() || base_text.size() != concept_text.size() || base_image.size() != base_text.size()) {
        throw ArgumentError("embedding dimensions differ");
    }
    Embedding di(base_image.size()), dt(base_text.size());
    for (std::size_t i = 0; i < di.size(); ++i) {
        di[i] = edited_image[i] - base_image[i];
        dt[i] = concept_text[i] - base_text[i];
    }
    if (norm(di) < kDegenerateNorm || norm(dt) < kDegenerateNorm) return {0.0, true};
    return {cosine(di, dt), false};
}

inline double clip_img(const Image& base, const Image& edited, EmbeddingBackend& emb) {
    return clip_img(emb.embed_image(base), emb.embed_image(edited));
}

inline double clip_txt(const Image& edited, const std::string& concept_prompt, EmbeddingBackend& emb) {
    return clip_txt(emb.embed_image(edited), emb.embed_text(concept_prompt));
}

inline DirectionScore clip_dir(const Image& base, const Image& edited, const std::string& base_prompt, const std::string& concept_prompt,
                               EmbeddingBackend& emb) {
    return clip_dir(emb.embed_image(base), emb.embed_image(edited), emb.embed_text(base_prompt), emb.embed_text(concept_prompt));
}

struct EditReport {
    double clip_img = 0.0;
    double clip_txt = 0.0;
    double clip_dir = 0.0;
    bool degenerate_direction = false;
    double tau = 0.0;
    std::size_t step = 0;
    std::string curve_ref;
    std::string embedding_id;

    nlohmann::json to_json() const {
        return {{"clip_img", clip_img},     {"clip_txt", clip_txt}, {"clip_dir", clip_dir},
                {"degenerate_direction", degenerate_direction},      {"tau", tau},
                {"step", step},             {"curve_ref", curve_ref}, {"embedding_id", embedding_id},
                {"in_recommended_band", in_recommended_band(tau)}};
    }
};

inline EditReport evaluate_edit(const Image& base, const Image& edited, const std::string& base_prompt, const std::string& concept_prompt,
                                EmbeddingBackend& emb) {
    const auto eb = emb.embed_image(base), ee = emb.embed_image(edited);
    const auto tb = emb.embed_text(base_prompt), tc = emb.embed_text(concept_prompt);
    const auto dir = clip_dir(eb, ee, tb, tc);
    EditReport r;
    r.clip_img = clip_img(eb, ee);
    r.clip_txt = clip_txt(ee, tc);
    r.clip_dir = dir.value;
    r.degenerate_direction = dir.degenerate;
    r.embedding_id = emb.id();
    return r;
}

// ---------------------------------------------------------------------------
// Editing pipeline

struct EditResult {
    std::size_t step = 0;
    double tau = 0.0;
    double predicted = 0.0;  // C at the chosen step
    Image base_image;
    Image edited_image;
    EditReport report;
};

/// Probability to step, then a base-only generation and a switched generation
/// from the same seed, scored with the three metrics.
inline EditResult edit_with_probability(const PromptPair& pair, const CisCurve& curve, double p, std::uint64_t seed, const Backend& backend,
                                        EmbeddingBackend& emb, std::string curve_ref = {}) {
    EditResult out;
    out.step = edit_at_probability(curve, p);
    if (out.step > backend.grid().steps() || curve.points.size() != backend.grid().size()) throw ArgumentError("curve grid does not match backend grid");
    out.tau = backend.grid().tau(out.step);
    out.predicted = *curve.points[out.step].estimate;
    const auto omega = backend.guidance_scale();
    out.base_image = generate(make_plan(pair, Direction::insertion, backend.grid(), backend.grid().steps(), seed, omega), backend);
    out.edited_image = generate(make_plan(pair, Direction::insertion, backend.grid(), out.step, seed, omega), backend);
    out.report = evaluate_edit(out.base_image, out.edited_image, pair.base_prompt, pair.concept_prompt, emb);
    out.report.step = out.step;
    out.report.tau = out.tau;
    out.report.curve_ref = std::move(curve_ref);
    return out;
}

// ---------------------------------------------------------------------------
// Suite

struct EditCase {
    std::string method;  // e.g. "PCI-tau50"
    Image base_image;
    Image edited_image;
    std::string base_prompt;
    std::string concept_prompt;
    double tau = 0.0;
};

struct SuiteRow {
    std::string method;
    double clip_img = 0.0;
    double clip_txt = 0.0;
    double clip_dir = 0.0;
    std::size_t count = 0;
    std::size_t failed = 0;
    std::size_t degenerate = 0;
};

struct SuiteTable {
    std::vector<SuiteRow> rows;  // first-appearance order of methods
    std::string embedding_id;
    std::vector<std::string> errors;

    const SuiteRow* find(std::string_view method) const {
        for (const auto& r : rows)
            if (r.method == method) return &r;
        return nullptr;
    }
};

/// Per-method means of the three metrics. Failing cases are excluded and counted.
inline SuiteTable evaluate_suite(const std::vector<EditCase>& cases, EmbeddingBackend& emb, std::size_t workers = 1) {
    if (cases.empty()) throw ArgumentError("edit suite needs at least one case");
    std::vector<std::optional<EditReport>> reports(cases.size());
    std::vector<std::string> errors(cases.size());
    parallel_for(cases.size(), std::min(std::max<std::size_t>(1, workers), emb.concurrency_limit()), [&](std::size_t i) {
        try {
            const auto& c = cases[i];
            reports[i] = evaluate_edit(c.base_image, c.edited_image, c.base_prompt, c.concept_prompt, emb);
            reports[i]->tau = c.tau;
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    SuiteTable table;
    table.embedding_id = emb.id();
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        auto [it, inserted] = index.try_emplace(cases[i].method, table.rows.size());
        if (inserted) table.rows.push_back(SuiteRow{cases[i].method});
        auto& row = table.rows[it->second];
        if (!reports[i]) {
            ++row.failed;
            table.errors.push_back(cases[i].method + ": " + errors[i]);
            continue;
        }
        ++row.count;
        row.clip_img += reports[i]->clip_img;
        row.clip_txt += reports[i]->clip_txt;
        row.clip_dir += reports[i]->clip_dir;
        row.degenerate += reports[i]->degenerate_direction;
    }
    for (auto& row : table.rows) {
        if (row.count == 0) continue;
        const double n = static_cast<double>(row.count);
        row.clip_img /= n;
        row.clip_txt /= n;
        row.clip_dir /= n;
    }
    return table;
}

struct ReferenceRow {
    std::string_view method;
    std::string_view clip_img;
    std::string_view clip_txt;
    std::string_view clip_dir;
};

/// Published editing results, kept verbatim for side-by-side display only.
/// They come from large production models and are not reproduced here.
inline constexpr std::array<ReferenceRow, 7> kPublishedEditReference{{
    {"NTI+P2P", "0.8666", "0.2215", "0.0979"},
    {"Stable Flow", "0.8324", "0.2152", "0.0631"},
    {"PCI-tau30", "0.9343", "0.2125", "0.1014"},
    {"PCI-tau50", "0.8885", "0.2236", "0.1387"},
    {"PCI-tau60", "0.8625", "0.2289", "0.1531"},
    {"PCI-tau70", "0.8353", "0.2341", "0.1678"},
    {"PCI-tau90", "0.7679", "0.2449", "0.1963"},
}};

inline std::string format_metric(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

/// Text table with the columns Method | CLIP_img | CLIP_txt | CLIP_dir.
inline std::string render_suite_table(const SuiteTable& table, bool with_reference = true) {
    std::ostringstream out;
    out << "Method | CLIP_img | CLIP_txt | CLIP_dir | n | failed\n";
    for (const auto& r : table.rows) {
        out << r.method << " | " << (r.count ? format_metric(r.clip_img) : "-") << " | " << (r.count ? format_metric(r.clip_txt) : "-")
            << " | " << (r.count ? format_metric(r.clip_dir) : "-") << " | " << r.count << " | " << r.failed << "\n";
    }
    out << "embedding: " << table.embedding_id << "\n";
    if (with_reference) {
        out << "\nPublished reference values (NOT REPRODUCED; external models, shown for comparison only)\n";
        out << "Method | CLIP_img | CLIP_txt | CLIP_dir\n";
        for (const auto& r : kPublishedEditReference)
            out << r.method << " | " << r.clip_img << " | " << r.clip_txt << " | " << r.clip_dir << "\n";
    }
    return out.str();
}

inline nlohmann::json suite_to_json(const SuiteTable& table) {
    nlohmann::json rows = nlohmann::json::array(), ref = nlohmann::json::array();
    for (const auto& r : table.rows) {
        rows.push_back({{"method", r.method}, {"clip_img", r.clip_img}, {"clip_txt", r.clip_txt}, {"clip_dir", r.clip_dir},
                        {"count", r.count}, {"failed", r.failed}, {"degenerate", r.degenerate}});
    }
    for (const auto& r : kPublishedEditReference) {
        ref.push_back({{"method", r.method}, {"clip_img", r.clip_img}, {"clip_txt", r.clip_txt}, {"clip_dir", r.clip_dir}});
    }
    return {{"embedding_id", table.embedding_id}, {"rows", rows}, {"errors", table.errors},
            {"reference", {{"reproduced", false}, {"rows", ref}}}};
}

}  // namespace cisprobe
