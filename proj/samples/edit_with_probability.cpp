// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Chooses the switch step from a target insertion probability and scores the
// resulting edits with the synthetic embedding backend.

#include <cstdio>
#include <vector>

#include "cisprobe/cisprobe.hpp"

using namespace cisprobe;

int main() {
    const ConceptEntry entry{"Objects", "Animals", "horse", "Is there a <concept> in the image?"};
    const auto pair = make_pair(entry, {"park", "an image of a park[ with <a> <concept>]"});

    // A smooth curve: average of several concepts with different lock times.
    std::vector<CisCurve> curves;
    const auto seeds = candidate_seeds("sample-edit", 40);
    for (double lock : {0.3, 0.45, 0.55, 0.7, 0.85}) {
        SyntheticBackendSpec spec;
        spec.lock_tau["horse"] = lock;
        SyntheticBackend backend(spec);
        MockScorer scorer;
        const auto r = sweep(pair, backend.grid(), plain_seeds(seeds), Direction::insertion, backend, scorer);
        curves.push_back(estimate_curve(OutcomeMatrix::from_records(r.records, backend.grid(), Direction::insertion, pair.key(), "horse")));
    }
    const auto curve = representative_curve(curves);

    SyntheticBackendSpec spec;
    spec.lock_tau["horse"] = 0.55;
    SyntheticBackend backend(spec);
    SyntheticEmbeddings emb;

    std::printf("p     step  tau   C(tau) horse  CLIP_img CLIP_txt CLIP_dir  band\n");
    for (double p : {0.3, 0.5, 0.6, 0.7, 0.9}) {
        const auto e = edit_with_probability(pair, curve, p, seeds.front(), backend, emb, "sample");
        std::printf("%.2f  %4zu  %.2f  %.2f   %-5s  %.4f   %.4f   %.4f    %s\n", p, e.step, e.tau, e.predicted,
                    e.edited_image.tags.count("horse") ? "yes" : "no", e.report.clip_img, e.report.clip_txt, e.report.clip_dir,
                    in_recommended_band(e.tau) ? "in [0.5, 0.7]" : "");
    }
    std::printf("\n%s", render_suite_table(SuiteTable{{}, emb.id(), {}}, true).c_str());
    return 0;
}
