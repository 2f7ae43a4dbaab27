// Copyright (C) 2026 The cisprobe Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cisprobe/error.hpp"
#include "cisprobe/hash.hpp"
#include "cisprobe/intervene.hpp"
#include "cisprobe/parallel.hpp"
#include "cisprobe/trajectory.hpp"

namespace cisprobe {

/// Two-sided 95% normal quantile.
inline constexpr double kDefaultZ = 1.96;

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// Outcome matrix

enum class Cell : std::uint8_t { no, yes, missing };

/// Binary outcomes for one (pair, target, direction): rows are seeds, columns
/// switch steps 0..T.
class OutcomeMatrix {
public:
    OutcomeMatrix(TimestepGrid grid, std::vector<std::uint64_t> seeds, Direction direction = Direction::insertion,
                  std::string pair_key = {}, std::string target = {})
        : grid_(std::move(grid)),
          seeds_(std::move(seeds)),
          direction_(direction),
          pair_key_(std::move(pair_key)),
          target_(std::move(target)),
          cells_(seeds_.size() * grid_.size(), Cell::missing) {}

    const TimestepGrid& grid() const noexcept { return grid_; }
    const std::vector<std::uint64_t>& seeds() const noexcept { return seeds_; }
    Direction direction() const noexcept { return direction_; }
    const std::string& pair_key() const noexcept { return pair_key_; }
    const std::string& target() const noexcept { return target_; }
    std::size_t rows() const noexcept { return seeds_.size(); }
    std::size_t columns() const noexcept { return grid_.size(); }

    Cell at(std::size_t row, std::size_t k) const { return cells_.at(index(row, k)); }
    void set(std::size_t row, std::size_t k, Cell c) { cells_.at(index(row, k)) = c; }
    void set(std::size_t row, std::size_t k, bool present) { set(row, k, present ? Cell::yes : Cell::no); }

    /// Builds from run records; failed records and absent cells stay missing.
    /// Rows are `seeds` when given (records of other seeds are ignored),
    /// otherwise every seed seen in the matching records; sorted either way.
    static OutcomeMatrix from_records(const std::vector<RunRecord>& records, const TimestepGrid& grid, Direction direction,
                                      const std::string& pair_key, const std::string& target,
                                      std::optional<std::vector<std::uint64_t>> only_seeds = std::nullopt) {
        std::vector<std::uint64_t> seeds;
        if (only_seeds) {
            seeds = std::move(*only_seeds);
        } else {
            for (const auto& r : records)
                if (r.pair_key == pair_key && r.direction == direction) seeds.push_back(r.seed);
        }
        std::sort(seeds.begin(), seeds.end());
        seeds.erase(std::unique(seeds.begin(), seeds.end()), seeds.end());
        OutcomeMatrix m(grid, seeds, direction, pair_key, target);
        for (const auto& r : records) {
            if (r.pair_key != pair_key || r.direction != direction || !r.ok()) continue;
            auto it = r.outcomes.find(target);
            if (it == r.outcomes.end() || r.switch_k > grid.steps()) continue;
            const auto pos = std::lower_bound(seeds.begin(), seeds.end(), r.seed);
            if (pos == seeds.end() || *pos != r.seed) continue;
            const auto row = static_cast<std::size_t>(pos - seeds.begin());
            m.set(row, r.switch_k, it->second == Answer::yes);
        }
        return m;
    }

    /// Same matrix restricted to the given rows (in the given order).
    OutcomeMatrix select_rows(const std::vector<std::size_t>& rows) const {
        std::vector<std::uint64_t> s;
        for (auto r : rows) s.push_back(seeds_.at(r));
        OutcomeMatrix m(grid_, s, direction_, pair_key_, target_);
        for (std::size_t i = 0; i < rows.size(); ++i)
            for (std::size_t k = 0; k < columns(); ++k) m.set(i, k, at(rows[i], k));
        return m;
    }

private:
    std::size_t index(std::size_t row, std::size_t k) const {
        if (row >= rows() || k >= columns()) throw ArgumentError("outcome matrix index out of range");
        return row * columns() + k;
    }

    TimestepGrid grid_;
    std::vector<std::uint64_t> seeds_;
    Direction direction_;
    std::string pair_key_;
    std::string target_;
    std::vector<Cell> cells_;
};

// ---------------------------------------------------------------------------
// Wilson score interval

struct Interval {
    double lo = 0.0;
    double hi = 1.0;

    bool operator==(const Interval&) const = default;
};

/// Wilson interval around a proportion `p` observed over `n` trials.
inline Interval wilson_from_proportion(double p, double n, double z = kDefaultZ) {
    if (!(n > 0.0)) throw ArgumentError("Wilson interval needs at least one trial");
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("proportion outside [0, 1]");
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = (z / denom) * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n));
    Interval iv{std::max(0.0, center - half), std::min(1.0, center + half)};
    // The bound at an extreme proportion is the proportion itself.
    if (p == 0.0) iv.lo = 0.0;
    if (p == 1.0) iv.hi = 1.0;
    iv.lo = std::min(iv.lo, p);
    iv.hi = std::max(iv.hi, p);
    return iv;
}

inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = kDefaultZ) {
    if (trials == 0) throw ArgumentError("Wilson interval needs at least one trial");
    if (successes > trials) throw ArgumentError("more successes than trials");
    return wilson_from_proportion(static_cast<double>(successes) / static_cast<double>(trials), static_cast<double>(trials), z);
}

// ---------------------------------------------------------------------------
// Curves

enum class CurveKind { insertion, persistence };

inline std::string to_string(CurveKind k) { return k == CurveKind::insertion ? "insertion" : "persistence"; }

struct CurvePoint {
    std::size_t k = 0;
    double tau = 0.0;
    std::size_t n = 0;
    std::size_t yes = 0;
    std::optional<double> estimate;  // undefined when n = 0
    double lo = 0.0;
    double hi = 1.0;

    bool defined() const noexcept { return estimate.has_value(); }
    bool operator==(const CurvePoint&) const = default;
};

/// Per-step success probability with Wilson bands. For deletion sweeps the
/// same shape holds the persistence probability (low = removal succeeded).
struct CisCurve {
    CurveKind kind = CurveKind::insertion;
    std::string label;
    std::vector<CurvePoint> points;  // indexed by switch step k

    bool any_defined() const {
        return std::any_of(points.begin(), points.end(), [](const CurvePoint& p) { return p.defined(); });
    }

    /// Places where the estimate drops as tau grows. Reported, never enforced.
    std::size_t monotonicity_violations() const {
        std::size_t violations = 0;
        std::optional<double> previous;  // estimate at the next-smaller tau
        for (auto it = points.rbegin(); it != points.rend(); ++it) {
            if (!it->defined()) continue;
            if (previous && *it->estimate < *previous) ++violations;
            previous = it->estimate;
        }
        return violations;
    }

    bool operator==(const CisCurve&) const = default;
};

inline CisCurve estimate_curve(const OutcomeMatrix& matrix, double z = kDefaultZ) {
    CisCurve curve;
    curve.kind = matrix.direction() == Direction::insertion ? CurveKind::insertion : CurveKind::persistence;
    curve.label = matrix.pair_key();
    curve.points.reserve(matrix.columns());
    for (std::size_t k = 0; k < matrix.columns(); ++k) {
        CurvePoint p;
        p.k = k;
        p.tau = matrix.grid().tau(k);
        for (std::size_t r = 0; r < matrix.rows(); ++r) {
            const Cell c = matrix.at(r, k);
            if (c == Cell::missing) continue;
            ++p.n;
            if (c == Cell::yes) ++p.yes;
        }
        if (p.n > 0) {
            p.estimate = static_cast<double>(p.yes) / static_cast<double>(p.n);
            const auto iv = wilson_interval(p.yes, p.n, z);
            p.lo = iv.lo;
            p.hi = iv.hi;
        }
        curve.points.push_back(p);
    }
    return curve;
}

/// Concept persistence after switching back to the base prompt.
inline CisCurve cds_curve(const OutcomeMatrix& matrix, double z = kDefaultZ) {
    if (matrix.direction() != Direction::deletion) throw ArgumentError("cds_curve expects a deletion outcome matrix");
    return estimate_curve(matrix, z);
}

// ---------------------------------------------------------------------------
// Crossing times

/// tau_q = min { tau : C(tau) >= q } over defined grid points; nullopt when
/// the level is never reached.
inline std::optional<double> crossing_time(const CisCurve& curve, double q) {
    if (!curve.any_defined()) throw ArgumentError("crossing time needs a curve with at least one defined point");
    std::optional<double> best;
    for (const auto& p : curve.points) {
        if (p.defined() && *p.estimate >= q && (!best || p.tau < *best)) best = p.tau;
    }
    return best;
}

struct CrossingSummary {
    std::optional<double> tau50;
    std::optional<double> tau70;
    std::optional<double> bandwidth;  // tau70 - tau50

    bool operator==(const CrossingSummary&) const = default;
};

inline CrossingSummary summarize(const CisCurve& curve) {
    CrossingSummary s{crossing_time(curve, 0.5), crossing_time(curve, 0.7), std::nullopt};
    if (s.tau50 && s.tau70) s.bandwidth = *s.tau70 - *s.tau50;
    return s;
}

struct AggregateStat {
    std::string name;
    double mean = 0.0;
    double std = 0.0;  // sample standard deviation (n - 1)
    std::size_t n_defined = 0;
    std::size_t n_undefined = 0;
    bool single = false;  // n_defined == 1, std reported as 0

    bool operator==(const AggregateStat&) const = default;
};

struct AggregateReport {
    std::vector<AggregateStat> stats;
    /// Statistics with no defined entry at all: name -> number of undefined entries.
    std::vector<std::pair<std::string, std::size_t>> omitted;

    const AggregateStat* find(std::string_view name) const {
        for (const auto& s : stats)
            if (s.name == name) return &s;
        return nullptr;
    }
};

inline std::optional<AggregateStat> aggregate_values(std::string name, const std::vector<std::optional<double>>& values) {
    std::vector<double> defined;
    for (const auto& v : values)
        if (v) defined.push_back(*v);
    if (defined.empty()) return std::nullopt;
    AggregateStat s;
    s.name = std::move(name);
    s.n_defined = defined.size();
    s.n_undefined = values.size() - defined.size();
    s.mean = std::accumulate(defined.begin(), defined.end(), 0.0) / static_cast<double>(defined.size());
    if (defined.size() == 1) {
        s.single = true;
    } else {
        double ss = 0.0;
        for (double v : defined) ss += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(ss / static_cast<double>(defined.size() - 1));
    }
    return s;
}

/// Mean and sample std of tau50, tau70 and bandwidth across pairs.
inline AggregateReport aggregate(const std::vector<CrossingSummary>& summaries) {
    AggregateReport report;
    auto add = [&](const char* name, auto member) {
        std::vector<std::optional<double>> values;
        for (const auto& s : summaries) values.push_back(s.*member);
        if (auto stat = aggregate_values(name, values)) {
            report.stats.push_back(*stat);
        } else {
            report.omitted.emplace_back(name, values.size());
        }
    };
    add("tau50", &CrossingSummary::tau50);
    add("tau70", &CrossingSummary::tau70);
    add("bandwidth", &CrossingSummary::bandwidth);
    return report;
}

// ---------------------------------------------------------------------------
// Bootstrap seed budget

struct BootstrapOptions {
    std::vector<std::size_t> ks;
    std::size_t resamples = 100;
    // Not published values; flagged as defaults in every report.
    double variance_threshold = 1e-3;
    double deviation_threshold = 0.05;
    std::uint64_t rng_seed = 0;
    std::size_t workers = 1;
};

struct BootstrapRow {
    std::size_t k = 0;
    double mean_variance = 0.0;  // across steps, of the variance across subsample mean curves
    double max_variance = 0.0;
    double max_deviation = 0.0;  // max |subsample mean curve - full-sample curve|
    bool stable = false;
};

struct BootstrapReport {
    std::vector<BootstrapRow> rows;
    std::optional<std::size_t> smallest_stable_k;
    std::size_t resamples = 0;
    double variance_threshold = 0.0;
    double deviation_threshold = 0.0;
    bool default_thresholds = true;
};

/// For each k: `resamples` subsamples of k distinct seeds, their mean curves,
/// the per-step variance across those means, and the largest deviation from
/// the full-sample curve. Stable iff both stay under their thresholds.
inline BootstrapReport bootstrap_seed_budget(const OutcomeMatrix& matrix, const BootstrapOptions& options) {
    if (options.resamples < 2) throw ArgumentError("bootstrap needs at least two resamples");
    const std::size_t rows = matrix.rows(), cols = matrix.columns();
    for (auto k : options.ks) {
        if (k == 0) throw ArgumentError("bootstrap subsample size must be at least 1");
        if (k > rows) throw ArgumentError("bootstrap subsample size " + std::to_string(k) + " exceeds " + std::to_string(rows) + " seeds");
    }

    std::vector<std::optional<double>> full(cols);
    {
        const auto curve = estimate_curve(matrix);
        for (std::size_t c = 0; c < cols; ++c) full[c] = curve.points[c].estimate;
    }

    BootstrapReport report;
    report.resamples = options.resamples;
    report.variance_threshold = options.variance_threshold;
    report.deviation_threshold = options.deviation_threshold;
    report.default_thresholds = options.variance_threshold == BootstrapOptions{}.variance_threshold &&
                                options.deviation_threshold == BootstrapOptions{}.deviation_threshold;
    report.rows.resize(options.ks.size());

    parallel_for(options.ks.size(), options.workers, [&](std::size_t ki) {
        const std::size_t k = options.ks[ki];
        // means[r][c]; NaN marks a step with no observed cell in that subsample.
        std::vector<std::vector<double>> means(options.resamples, std::vector<double>(cols));
        std::vector<std::size_t> order(rows);
        for (std::size_t r = 0; r < options.resamples; ++r) {
            SplitMix rng(mix_keys(options.rng_seed, k, r));
            std::iota(order.begin(), order.end(), std::size_t{0});
            for (std::size_t i = 0; i < k; ++i) std::swap(order[i], order[i + rng.below(rows - i)]);
            for (std::size_t c = 0; c < cols; ++c) {
                std::size_t n = 0, yes = 0;
                for (std::size_t i = 0; i < k; ++i) {
                    const Cell cell = matrix.at(order[i], c);
                    if (cell == Cell::missing) continue;
                    ++n;
                    yes += cell == Cell::yes;
                }
                means[r][c] = n ? static_cast<double>(yes) / static_cast<double>(n) : std::nan("");
            }
        }

        BootstrapRow row;
        row.k = k;
        std::size_t var_steps = 0;
        for (std::size_t c = 0; c < cols; ++c) {
            std::vector<double> vals;
            for (std::size_t r = 0; r < options.resamples; ++r)
                if (!std::isnan(means[r][c])) vals.push_back(means[r][c]);
            if (vals.size() >= 2) {
                const double m = std::accumulate(vals.begin(), vals.end(), 0.0) / static_cast<double>(vals.size());
                double ss = 0.0;
                for (double v : vals) ss += (v - m) * (v - m);
                const double var = ss / static_cast<double>(vals.size() - 1);
                row.mean_variance += var;
                row.max_variance = std::max(row.max_variance, var);
                ++var_steps;
            }
            if (full[c]) {
                for (double v : vals) row.max_deviation = std::max(row.max_deviation, std::abs(v - *full[c]));
            }
        }
        if (var_steps) row.mean_variance /= static_cast<double>(var_steps);
        row.stable = row.max_variance <= options.variance_threshold && row.max_deviation <= options.deviation_threshold;
        report.rows[ki] = row;
    });

    for (const auto& row : report.rows) {
        if (row.stable && (!report.smallest_stable_k || row.k < *report.smallest_stable_k)) report.smallest_stable_k = row.k;
    }
    return report;
}

// ---------------------------------------------------------------------------
// Tabular export

inline constexpr std::string_view kCurveColumns = "step_k,tau,n,yes,estimate,wilson_lo,wilson_hi";
inline constexpr std::string_view kSummaryColumns = "tau50,tau70,bandwidth,tau50_defined,tau70_defined,bandwidth_defined";

inline std::string curve_to_csv(const CisCurve& curve) {
    std::ostringstream out;
    out << kCurveColumns << "\n";
    for (const auto& p : curve.points) {
        out << p.k << "," << format_double(p.tau) << "," << p.n << "," << p.yes << ","
            << (p.defined() ? format_double(*p.estimate) : "") << "," << format_double(p.lo) << "," << format_double(p.hi) << "\n";
    }
    return out.str();
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::stringstream ss(line);
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}
}  // namespace detail

inline CisCurve curve_from_csv(const std::string& csv, CurveKind kind = CurveKind::insertion, std::string label = {}) {
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    if (line != kCurveColumns) throw ParseError("unexpected curve header", line);
    CisCurve curve{kind, std::move(label), {}};
    for (std::size_t row = 1; std::getline(in, line); ++row) {
        if (line.empty()) continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 7) throw ParseError("curve row needs 7 fields", "row " + std::to_string(row));
        CurvePoint p;
        p.k = std::stoul(f[0]);
        p.tau = std::stod(f[1]);
        p.n = std::stoul(f[2]);
        p.yes = std::stoul(f[3]);
        if (!f[4].empty()) p.estimate = std::stod(f[4]);
        p.lo = std::stod(f[5]);
        p.hi = std::stod(f[6]);
        curve.points.push_back(p);
    }
    return curve;
}

inline std::string summary_row(const CrossingSummary& s) {
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string{}; };
    return opt(s.tau50) + "," + opt(s.tau70) + "," + opt(s.bandwidth) + "," + (s.tau50 ? "1" : "0") + "," + (s.tau70 ? "1" : "0") +
           "," + (s.bandwidth ? "1" : "0");
}

inline CrossingSummary summary_from_row(std::string line) {
    while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
    const auto f = detail::split_csv_line(line);
    if (f.size() < 6) throw ParseError("summary row needs 6 fields", line);
    auto opt = [](const std::string& v, const std::string& flag) -> std::optional<double> {
        if (flag == "1") return std::stod(v);
        return std::nullopt;
    };
    return {opt(f[0], f[3]), opt(f[1], f[4]), opt(f[2], f[5])};
}

}  // namespace cisprobe
