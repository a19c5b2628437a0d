#pragma once

#include "buckets.hpp"
#include "compare.hpp"
#include "core.hpp"

#include <json.hpp>

#include <algorithm>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

/**
 * @file groups.hpp
 *
 * @brief Trial-group lifecycle, builtin groups and the pairwise group matrices.
 */

namespace covtune {

inline constexpr const char* all_group_name = "All";
inline constexpr const char* top_group_name = "Top 10%";
inline constexpr const char* bottom_group_name = "Bottom 10%";

/// round(0.1 * n) with halves rounded up, at least 1.
inline std::size_t tenth_size(std::size_t n_trials) { return std::max<std::size_t>(1, (n_trials + 5) / 10); }

struct BuiltinGroups {
    TrialGroup all;
    TrialGroup top10;
    TrialGroup bottom10;
};

/**
 * `Top 10%` and `Bottom 10%` take the highest and lowest coverage values; equal
 * coverage values are taken in increasing trial id order.
 */
inline BuiltinGroups builtin_groups(const Experiment& exp) {
    if (exp.trials.empty()) {
        fail(ErrorCode::invalid_group, "experiment has no trials");
    }
    const std::size_t k = tenth_size(exp.n_trials());
    std::vector<int> ids = exp.all_ids();
    std::vector<int> top(ids), bottom(ids);
    std::stable_sort(top.begin(), top.end(), [&](int a, int b) {
        return exp.trial(a).coverage_value > exp.trial(b).coverage_value;
    });
    std::stable_sort(bottom.begin(), bottom.end(), [&](int a, int b) {
        return exp.trial(a).coverage_value < exp.trial(b).coverage_value;
    });
    top.resize(k);
    bottom.resize(k);
    return BuiltinGroups{TrialGroup(all_group_name, ids, GroupOrigin::builtin),
                         TrialGroup(top_group_name, top, GroupOrigin::builtin),
                         TrialGroup(bottom_group_name, bottom, GroupOrigin::builtin)};
}

inline TrialGroup failed_group(const Experiment& exp, std::string name = "Failed") {
    std::vector<int> ids;
    for (const auto& t : exp.trials) {
        if (t.failed()) {
            ids.push_back(t.id);
        }
    }
    return TrialGroup(std::move(name), std::move(ids), GroupOrigin::predicate);
}

/**
 * Named groups of one session. Builtin groups are always present and locked; user
 * groups keep their creation order.
 */
class GroupStore {
public:
    GroupStore() = default;

    explicit GroupStore(const Experiment& exp) {
        auto builtin = builtin_groups(exp);
        groups_.push_back(std::move(builtin.all));
        groups_.push_back(std::move(builtin.top10));
        groups_.push_back(std::move(builtin.bottom10));
    }

    const std::vector<TrialGroup>& groups() const { return groups_; }
    const std::optional<std::string>& active() const { return active_; }

    bool contains(std::string_view name) const { return find(name) != nullptr; }

    const TrialGroup* find(std::string_view name) const {
        for (const auto& g : groups_) {
            if (g.name == name) {
                return &g;
            }
        }
        return nullptr;
    }

    const TrialGroup& at(std::string_view name) const {
        const auto* g = find(name);
        if (!g) {
            fail(ErrorCode::not_found, "no group named '" + std::string(name) + "'");
        }
        return *g;
    }

    const TrialGroup& create(const Experiment& exp, std::string name, std::vector<int> member_ids,
                             GroupOrigin origin) {
        if (name.empty()) {
            fail(ErrorCode::invalid_argument, "group name must not be empty");
        }
        if (origin == GroupOrigin::builtin) {
            fail(ErrorCode::builtin_group, "builtin groups cannot be created");
        }
        if (contains(name)) {
            fail(ErrorCode::duplicate_name, "a group named '" + name + "' already exists");
        }
        TrialGroup group(std::move(name), std::move(member_ids), origin);
        if (group.member_ids.empty()) {
            fail(ErrorCode::empty_group, "group '" + group.name + "' has no members");
        }
        validate_group(group, exp);
        groups_.push_back(std::move(group));
        return groups_.back();
    }

    void rename(std::string_view from, std::string to) {
        auto& g = mutable_user_group(from);
        if (to.empty()) {
            fail(ErrorCode::invalid_argument, "group name must not be empty");
        }
        if (to == from) {
            return;
        }
        if (contains(to)) {
            fail(ErrorCode::duplicate_name, "a group named '" + to + "' already exists");
        }
        if (active_ && *active_ == from) {
            active_ = to;
        }
        g.name = std::move(to);
    }

    void remove(std::string_view name) {
        mutable_user_group(name);
        if (active_ && *active_ == name) {
            active_.reset();
        }
        groups_.erase(std::remove_if(groups_.begin(), groups_.end(), [&](const TrialGroup& g) { return g.name == name; }),
                      groups_.end());
    }

    void set_active(std::optional<std::string> name) {
        if (name && !contains(*name)) {
            fail(ErrorCode::not_found, "no group named '" + *name + "'");
        }
        active_ = std::move(name);
    }

private:
    TrialGroup& mutable_user_group(std::string_view name) {
        for (auto& g : groups_) {
            if (g.name == name) {
                if (g.origin == GroupOrigin::builtin) {
                    fail(ErrorCode::builtin_group, "builtin group '" + g.name + "' cannot be changed");
                }
                return g;
            }
        }
        fail(ErrorCode::not_found, "no group named '" + std::string(name) + "'");
    }

    std::vector<TrialGroup> groups_;
    std::optional<std::string> active_;
};

namespace detail {

inline std::optional<Range> parse_range(std::string_view text) {
    std::string s(text);
    std::string lo, hi;
    if (s.size() >= 2 && s.front() == '[' && s.back() == ']') {
        const auto comma = s.find(',');
        if (comma == std::string::npos) {
            return std::nullopt;
        }
        lo = s.substr(1, comma - 1);
        hi = s.substr(comma + 1, s.size() - comma - 2);
    } else if (const auto dots = s.find(".."); dots != std::string::npos) {
        lo = s.substr(0, dots);
        hi = s.substr(dots + 2);
    } else {
        return std::nullopt;
    }
    try {
        std::size_t used_lo = 0, used_hi = 0;
        const auto trim = [](std::string t) {
            t.erase(0, t.find_first_not_of(' '));
            t.erase(t.find_last_not_of(' ') + 1);
            return t;
        };
        lo = trim(lo);
        hi = trim(hi);
        const double a = std::stod(lo, &used_lo);
        const double b = std::stod(hi, &used_hi);
        if (used_lo != lo.size() || used_hi != hi.size() || a > b) {
            return std::nullopt;
        }
        return Range{a, b};
    } catch (const std::exception&) {
        return std::nullopt;
    }
}

} // namespace detail

/**
 * Trials whose value of `param` falls in `bucket`. `bucket` is a bucket label (`true`,
 * a nominal symbol, `unset`, or a continuous bucket label); continuous parameters also
 * accept an inclusive range `[lo, hi]` / `lo..hi` or a single number.
 */
inline TrialGroup group_by_parameter_value(const Experiment& exp, std::string_view param, std::string_view bucket) {
    const auto scheme = make_bucket_scheme(exp, param);
    const auto& def = exp.space.params[scheme.param_index];
    std::vector<int> ids;
    if (const auto b = scheme.find(bucket)) {
        const auto assigned = assign_buckets(exp, scheme);
        for (std::size_t i = 0; i < assigned.size(); ++i) {
            if (assigned[i] == *b) {
                ids.push_back(exp.trials[i].id);
            }
        }
    } else if (def.kind == ParamKind::continuous) {
        std::optional<Range> range = detail::parse_range(bucket);
        if (!range) {
            try {
                const auto v = std::get<double>(def.parse_value(bucket));
                range = Range{v, v};
            } catch (const Error&) {
                fail(ErrorCode::unknown_bucket, "'" + std::string(bucket) + "' is not a bucket of '" + def.name + "'");
            }
        }
        for (const auto& t : exp.trials) {
            if (const double* v = std::get_if<double>(&t.config.get(def.name)); v && range->contains(*v)) {
                ids.push_back(t.id);
            }
        }
    } else {
        fail(ErrorCode::unknown_bucket, "'" + std::string(bucket) + "' is not a bucket of '" + def.name + "'");
    }
    if (ids.empty()) {
        fail(ErrorCode::empty_group, "no trial has " + def.name + "=" + std::string(bucket));
    }
    return TrialGroup(def.name + "=" + std::string(bucket), std::move(ids), GroupOrigin::parameter_value);
}

/**
 * Resolves a textual group spec: `all`, `top10`, `bottom10`, `failed`,
 * `param:NAME=VALUE`, `ids:1,5,9`, or the name of a group in `store`.
 */
inline TrialGroup resolve_group_spec(const Experiment& exp, std::string_view spec, const GroupStore* store = nullptr) {
    if (spec == "all" || spec == "top10" || spec == "bottom10") {
        auto builtin = builtin_groups(exp);
        return spec == "all" ? builtin.all : spec == "top10" ? builtin.top10 : builtin.bottom10;
    }
    if (spec == "failed") {
        auto g = failed_group(exp);
        if (g.member_ids.empty()) {
            fail(ErrorCode::empty_group, "experiment has no failed trials");
        }
        return g;
    }
    if (spec.starts_with("param:")) {
        const auto body = spec.substr(6);
        const auto eq = body.find('=');
        if (eq == std::string_view::npos) {
            fail(ErrorCode::invalid_argument, "group spec '" + std::string(spec) + "' must be param:NAME=VALUE");
        }
        return group_by_parameter_value(exp, body.substr(0, eq), body.substr(eq + 1));
    }
    if (spec.starts_with("ids:")) {
        std::vector<int> ids;
        std::string body(spec.substr(4));
        std::stringstream in(body);
        std::string token;
        while (std::getline(in, token, ',')) {
            std::int64_t id = 0;
            std::size_t used = 0;
            try {
                id = std::stoll(token, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != token.size()) {
                fail(ErrorCode::invalid_argument, "bad trial id '" + token + "' in group spec");
            }
            ids.push_back(static_cast<int>(id));
        }
        TrialGroup g(std::string(spec), std::move(ids), GroupOrigin::table_selection);
        validate_group(g, exp);
        return g;
    }
    if (store) {
        if (const auto* g = store->find(spec)) {
            return *g;
        }
    }
    fail(ErrorCode::invalid_argument, "unrecognized group spec '" + std::string(spec) + "'");
}

enum class MatrixMode { difference, union_mode };

inline std::optional<MatrixMode> parse_matrix_mode(std::string_view text) {
    if (text == "difference") return MatrixMode::difference;
    if (text == "union") return MatrixMode::union_mode;
    return std::nullopt;
}

struct GroupMatrix {
    MatrixMode mode = MatrixMode::union_mode;
    std::vector<std::string> labels;
    std::vector<std::vector<std::int64_t>> cells;
};

/**
 * Union mode: complementarity of each pair. Difference mode: number of parameters that
 * differ significantly after multiplicity correction.
 */
inline GroupMatrix group_matrix(const std::vector<TrialGroup>& groups, const Experiment& exp, MatrixMode mode,
                                double alpha = 0.05) {
    if (groups.size() < 2) {
        fail(ErrorCode::invalid_argument, "group matrix needs at least two groups");
    }
    GroupMatrix m;
    m.mode = mode;
    const std::size_t n = groups.size();
    m.cells.assign(n, std::vector<std::int64_t>(n, 0));
    std::vector<CoverageVector> vecs;
    for (const auto& g : groups) {
        m.labels.push_back(g.name);
        vecs.push_back(group_vector(g, exp));
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            std::int64_t cell = 0;
            if (mode == MatrixMode::union_mode) {
                cell = static_cast<std::int64_t>(vecs[i].union_count(vecs[j])) -
                       static_cast<std::int64_t>(std::max(vecs[i].popcount(), vecs[j].popcount()));
            } else {
                cell = static_cast<std::int64_t>(parameter_tests(groups[i], groups[j], exp, alpha).significant_count());
            }
            m.cells[i][j] = cell;
            m.cells[j][i] = cell;
        }
    }
    return m;
}

inline GroupMatrix group_matrix(const GroupStore& store, const Experiment& exp, MatrixMode mode, double alpha = 0.05) {
    return group_matrix(store.groups(), exp, mode, alpha);
}

inline nlohmann::json to_json(const TrialGroup& g, const Experiment& exp) {
    nlohmann::json j = {{"name", g.name},
                        {"origin", std::string(to_string(g.origin))},
                        {"size", g.size()},
                        {"members", g.member_ids}};
    double mean = 0.0;
    for (int id : g.member_ids) {
        mean += static_cast<double>(exp.trial(id).coverage_value);
    }
    j["mean"] = g.member_ids.empty() ? 0.0 : mean / static_cast<double>(g.size());
    j["accumulated"] = g.member_ids.empty() ? 0 : accum(g, exp);
    return j;
}

inline nlohmann::json to_json(const GroupMatrix& m) {
    return {{"mode", m.mode == MatrixMode::union_mode ? "union" : "difference"}, {"labels", m.labels}, {"cells", m.cells}};
}

} // namespace covtune
