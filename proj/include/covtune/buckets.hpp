#pragma once

#include "core.hpp"

#include <algorithm>
#include <string>
#include <vector>

/**
 * @file buckets.hpp
 *
 * @brief Value buckets: the discrete view of a parameter's values shared by the effect
 * report, the embedding color classes, parameter-value groups and the statistical tests.
 *
 * - binary: `true`, `false`, `unset`
 * - nominal: each domain symbol in declaration order, then `unset`
 * - continuous: deciles of the observed values, merged left to right until every bucket
 *   holds at least `min_bucket_size` trials, then `unset`
 */

namespace covtune {

inline constexpr std::size_t min_bucket_size = 10;
inline constexpr const char* unset_label = "unset";

struct Bucket {
    std::string label;
    bool unset = false;
    ParamValue value;    ///< binary and nominal buckets
    Range range;         ///< continuous buckets: observed min and max
    double median = 0.0; ///< continuous buckets: median of the observed values
};

struct BucketScheme {
    std::size_t param_index = 0;
    ParamKind kind = ParamKind::binary;
    std::vector<Bucket> buckets;

    std::size_t size() const { return buckets.size(); }

    std::size_t unset_bucket() const { return buckets.size() - 1; }

    /// Bucket of a value. Continuous values outside the observed range clamp to the end buckets.
    std::size_t bucket_of(const ParamValue& value) const {
        if (is_unset(value)) {
            return unset_bucket();
        }
        if (kind == ParamKind::continuous) {
            const double v = std::get<double>(value);
            const std::size_t n = buckets.size() - 1;
            for (std::size_t b = 0; b < n; ++b) {
                if (v <= buckets[b].range.hi) {
                    return b;
                }
            }
            return n == 0 ? unset_bucket() : n - 1;
        }
        for (std::size_t b = 0; b + 1 < buckets.size(); ++b) {
            if (buckets[b].value == value) {
                return b;
            }
        }
        fail(ErrorCode::domain_violation, "value '" + value_text(value) + "' has no bucket");
    }

    std::optional<std::size_t> find(std::string_view label) const {
        for (std::size_t b = 0; b < buckets.size(); ++b) {
            if (buckets[b].label == label) {
                return b;
            }
        }
        return std::nullopt;
    }
};

inline std::string range_label(const Range& r) {
    return "[" + format_number(r.lo) + ", " + format_number(r.hi) + "]";
}

/// Splits sorted values into decile groups, then merges groups smaller than `min_size`.
inline std::vector<std::vector<double>> decile_groups(const std::vector<double>& sorted, std::size_t min_size) {
    std::vector<std::vector<double>> groups;
    const std::size_t n = sorted.size();
    if (n == 0) {
        return groups;
    }
    // Upper edges at the lower empirical deciles; equal edges collapse.
    std::vector<double> edges;
    for (std::size_t q = 1; q < 10; ++q) {
        const std::size_t rank = (q * n + 9) / 10;
        const double e = sorted[rank == 0 ? 0 : rank - 1];
        if (edges.empty() || e > edges.back()) {
            edges.push_back(e);
        }
    }
    std::vector<std::vector<double>> raw(edges.size() + 1);
    for (double v : sorted) {
        const auto it = std::lower_bound(edges.begin(), edges.end(), v);
        raw[static_cast<std::size_t>(it - edges.begin())].push_back(v);
    }
    std::vector<double> pending;
    for (auto& bucket : raw) {
        pending.insert(pending.end(), bucket.begin(), bucket.end());
        if (pending.size() >= min_size) {
            groups.push_back(std::move(pending));
            pending.clear();
        }
    }
    if (!pending.empty()) {
        if (groups.empty()) {
            groups.push_back(std::move(pending));
        } else {
            groups.back().insert(groups.back().end(), pending.begin(), pending.end());
        }
    }
    return groups;
}

inline BucketScheme make_bucket_scheme(const Experiment& exp, std::size_t param_index) {
    const ParameterDef& def = exp.space.params.at(param_index);
    BucketScheme scheme;
    scheme.param_index = param_index;
    scheme.kind = def.kind;
    switch (def.kind) {
    case ParamKind::binary:
        for (bool b : {true, false}) {
            Bucket bucket;
            bucket.label = b ? "true" : "false";
            bucket.value = b;
            scheme.buckets.push_back(std::move(bucket));
        }
        break;
    case ParamKind::nominal:
        for (const auto& s : def.symbols) {
            Bucket bucket;
            bucket.label = s;
            bucket.value = s;
            scheme.buckets.push_back(std::move(bucket));
        }
        break;
    case ParamKind::continuous: {
        std::vector<double> observed;
        for (const auto& t : exp.trials) {
            if (const double* d = std::get_if<double>(&t.config.get(def.name))) {
                observed.push_back(*d);
            }
        }
        std::sort(observed.begin(), observed.end());
        for (auto& values : decile_groups(observed, min_bucket_size)) {
            Bucket bucket;
            bucket.range = Range{values.front(), values.back()};
            const std::size_t m = values.size();
            bucket.median = m % 2 == 1 ? values[m / 2] : 0.5 * (values[m / 2 - 1] + values[m / 2]);
            bucket.label = range_label(bucket.range);
            scheme.buckets.push_back(std::move(bucket));
        }
        break;
    }
    }
    Bucket unset;
    unset.label = unset_label;
    unset.unset = true;
    scheme.buckets.push_back(std::move(unset));
    return scheme;
}

inline BucketScheme make_bucket_scheme(const Experiment& exp, std::string_view param) {
    const auto idx = exp.space.index_of(param);
    if (!idx) {
        fail(ErrorCode::unknown_parameter, "unknown parameter '" + std::string(param) + "'");
    }
    return make_bucket_scheme(exp, *idx);
}

/// Bucket index of every trial (in trial order) for one parameter.
inline std::vector<std::size_t> assign_buckets(const Experiment& exp, const BucketScheme& scheme) {
    const auto& name = exp.space.params[scheme.param_index].name;
    std::vector<std::size_t> out;
    out.reserve(exp.trials.size());
    for (const auto& t : exp.trials) {
        out.push_back(scheme.bucket_of(t.config.get(name)));
    }
    return out;
}

/// Bucket holding the declared default, or the unset bucket when there is no default.
inline std::size_t default_bucket(const BucketScheme& scheme, const ParameterDef& def) {
    if (!def.has_default()) {
        return scheme.unset_bucket();
    }
    return scheme.bucket_of(def.default_value);
}

} // namespace covtune
