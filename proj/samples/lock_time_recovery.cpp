// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

// Sweeps every switch step for one prompt pair on the synthetic backend and
// recovers the planted lock time from the insertion curve.
//
//   sample_lock_time_recovery [lock_tau] [T] [flip_probability]

#include <cstdio>
#include <string>

#include "cisprobe/cisprobe.hpp"

using namespace cisprobe;

int main(int argc, char** argv) {
    const double lock = argc > 1 ? std::stod(argv[1]) : 0.6;
    const std::size_t T = argc > 2 ? std::stoul(argv[2]) : 50;
    const double flip = argc > 3 ? std::stod(argv[3]) : 0.0;

    const ConceptEntry entry{"Demographics", "Age group", "old", "Is the person in the image <concept>?"};
    const auto pair = make_pair(entry, {"cafe", "a photo of a person[ who is <concept>] in a cafe"});
    std::printf("P_b: %s\nP_c: %s\n", pair.base_prompt.c_str(), pair.concept_prompt.c_str());

    SyntheticBackendSpec spec;
    spec.grid = TimestepGrid(T);
    spec.lock_tau["old"] = lock;
    SyntheticBackend backend(spec);
    MockScorer scorer({{}, flip, 1});

    const auto seeds = candidate_seeds("sample", 100);
    const auto result = sweep(pair, backend.grid(), plain_seeds(seeds), Direction::insertion, backend, scorer, {4, {}});
    const auto matrix = OutcomeMatrix::from_records(result.records, backend.grid(), Direction::insertion, pair.key(), "old");
    const auto curve = estimate_curve(matrix);

    std::printf("\n%s", curve_to_csv(curve).c_str());
    const auto s = summarize(curve);
    auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("undefined"); };
    std::printf("\nplanted lock %.3f  tau50 %s  tau70 %s  W %s  monotonicity violations %zu\n", lock, show(s.tau50).c_str(),
                show(s.tau70).c_str(), show(s.bandwidth).c_str(), curve.monotonicity_violations());
    return 0;
}
