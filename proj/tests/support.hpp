#pragma once

#include "covtune/core.hpp"
#include "covtune/ingest.hpp"
#include "covtune/random.hpp"

#include <filesystem>
#include <unistd.h>
#include <set>
#include <string>
#include <vector>

namespace testing_support {

using namespace covtune;
namespace fs = std::filesystem;

class TempDir {
public:
    TempDir() {
        static int counter = 0;
        path_ = fs::temp_directory_path() /
                ("covtune-test-" + std::to_string(::getpid()) + "-" + std::to_string(++counter));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

inline ParameterDef make_binary(const std::string& name, ParamValue dflt = false) {
    ParameterDef d;
    d.name = name;
    d.label = name;
    d.kind = ParamKind::binary;
    d.default_value = dflt;
    return d;
}

inline ParameterDef make_nominal(const std::string& name, std::vector<std::string> symbols, ParamValue dflt = {}) {
    ParameterDef d;
    d.name = name;
    d.label = name;
    d.kind = ParamKind::nominal;
    d.symbols = std::move(symbols);
    d.default_value = dflt.index() == 0 ? ParamValue(d.symbols.front()) : dflt;
    return d;
}

inline ParameterDef make_continuous(const std::string& name, double lo, double hi, ParamValue dflt = {}) {
    ParameterDef d;
    d.name = name;
    d.label = name;
    d.kind = ParamKind::continuous;
    d.range = {lo, hi};
    d.default_value = dflt.index() == 0 ? ParamValue((lo + hi) / 2.0) : dflt;
    return d;
}

/// Deterministic experiment with branch ids 10, 20, ... and sets given as dense indices.
inline Experiment experiment_from_sets(const std::vector<std::set<std::size_t>>& sets, std::size_t n_branches,
                                       ParameterSpace space = {}) {
    Experiment exp;
    exp.space = std::move(space);
    exp.n_branches = n_branches;
    for (std::size_t b = 0; b < n_branches; ++b) {
        exp.branch_ids.push_back(static_cast<std::int64_t>(10 * (b + 1)));
        exp.locations.push_back(SourceLocation{b % 2 ? "b.c" : "a.c", static_cast<int>(1 + b / 4)});
    }
    for (std::size_t i = 0; i < sets.size(); ++i) {
        Trial t;
        t.id = static_cast<int>(i + 1);
        t.coverage = CoverageVector(n_branches);
        for (auto b : sets[i]) t.coverage.set(b);
        t.coverage_value = static_cast<std::int64_t>(sets[i].size());
        exp.trials.push_back(std::move(t));
    }
    return exp;
}

/// Random value from a parameter's domain, unset with probability `p_unset`.
inline ParamValue random_value(const ParameterDef& def, Rng& rng, double p_unset = 0.1) {
    if (rng.bernoulli(p_unset)) return {};
    switch (def.kind) {
    case ParamKind::binary:
        return def.truth_values[rng.below(def.truth_values.size())];
    case ParamKind::nominal:
        return def.symbols[rng.below(def.symbols.size())];
    case ParamKind::continuous:
        return std::round(rng.uniform(def.range.lo, def.range.hi) * 100.0) / 100.0;
    }
    return {};
}

inline ParameterSpace random_space(Rng& rng, std::size_t n_params) {
    ParameterSpace s;
    for (std::size_t p = 0; p < n_params; ++p) {
        const auto name = "p" + std::to_string(p);
        switch (rng.below(3)) {
        case 0: s.params.push_back(make_binary(name, rng.bernoulli(0.5))); break;
        case 1: s.params.push_back(make_nominal(name, {"a", "b", "c", "d"})); break;
        default: s.params.push_back(make_continuous(name, 0.0, 100.0)); break;
        }
    }
    return s;
}

/**
 * Random experiment: `n_trials` trials over `n_branches` branches spread across three
 * files, each trial covering each branch with probability `density` (some trials fail).
 */
inline Experiment random_experiment(Rng& rng, std::size_t n_trials, std::size_t n_branches, std::size_t n_params = 3,
                                    double density = 0.3, double p_fail = 0.1) {
    Experiment exp;
    exp.space = random_space(rng, n_params);
    exp.n_branches = n_branches;
    std::int64_t id = 3;
    for (std::size_t b = 0; b < n_branches; ++b) {
        id += 1 + static_cast<std::int64_t>(rng.below(5));
        exp.branch_ids.push_back(id);
        exp.locations.push_back(
            SourceLocation{"f" + std::to_string(rng.below(3)) + ".c", 1 + static_cast<int>(rng.below(20))});
    }
    for (std::size_t i = 0; i < n_trials; ++i) {
        Trial t;
        t.id = static_cast<int>(i + 1);
        t.coverage = CoverageVector(n_branches);
        if (!rng.bernoulli(p_fail)) {
            for (std::size_t b = 0; b < n_branches; ++b) {
                if (rng.bernoulli(density)) t.coverage.set(b);
            }
        }
        t.coverage_value = static_cast<std::int64_t>(t.coverage.popcount());
        for (const auto& def : exp.space.params) t.config.set(def.name, random_value(def, rng));
        exp.trials.push_back(std::move(t));
    }
    return exp;
}

inline std::vector<int> random_ids(Rng& rng, std::size_t n_trials, double p = 0.4) {
    std::vector<int> ids;
    for (std::size_t i = 1; i <= n_trials; ++i) {
        if (rng.bernoulli(p)) ids.push_back(static_cast<int>(i));
    }
    if (ids.empty()) ids.push_back(1 + static_cast<int>(rng.below(n_trials)));
    return ids;
}

/// Per-bit set of covered dense indices, rebuilt without CoverageVector helpers.
inline std::set<std::size_t> bit_set(const CoverageVector& v) {
    std::set<std::size_t> out;
    for (std::size_t b = 0; b < v.size(); ++b) {
        if (v.test(b)) out.insert(b);
    }
    return out;
}

/**
 * Three clusters of `per_cluster` trials: each cluster owns a prototype branch set and
 * trials keep each prototype bit with 0.95 and add stray bits with 0.005, which gives
 * within-cluster Jaccard distances near 0.1 and between-cluster ones near 0.9+.
 */
inline Experiment three_clusters(std::uint64_t seed, std::size_t per_cluster = 100, std::vector<int>* labels = nullptr) {
    Rng rng(seed);
    const std::size_t n_branches = 300;
    std::vector<std::set<std::size_t>> sets;
    for (int c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < per_cluster; ++i) {
            std::set<std::size_t> s;
            for (std::size_t b = 0; b < n_branches; ++b) {
                const bool own = b / 100 == static_cast<std::size_t>(c);
                if (own ? rng.bernoulli(0.95) : rng.bernoulli(0.005)) s.insert(b);
            }
            sets.push_back(std::move(s));
            if (labels) labels->push_back(c);
        }
    }
    // Interleave so trial order does not reveal the clusters.
    std::vector<std::size_t> order(sets.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    shuffle(order, rng);
    std::vector<std::set<std::size_t>> shuffled;
    std::vector<int> shuffled_labels;
    for (auto i : order) {
        shuffled.push_back(sets[i]);
        if (labels) shuffled_labels.push_back((*labels)[i]);
    }
    if (labels) *labels = shuffled_labels;
    return experiment_from_sets(shuffled, n_branches);
}

} // namespace testing_support
