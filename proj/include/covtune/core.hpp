#pragma once

#include "error.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

/**
 * @file core.hpp
 *
 * @brief Domain types and coverage algebra: parameters, configurations, coverage bitsets,
 * trials, experiments and trial groups.
 */

namespace covtune {

enum class ParamKind { binary, continuous, nominal };

inline std::string_view to_string(ParamKind kind) {
    switch (kind) {
    case ParamKind::binary: return "binary";
    case ParamKind::continuous: return "continuous";
    case ParamKind::nominal: return "nominal";
    }
    return "unknown";
}

inline std::optional<ParamKind> parse_kind(std::string_view text) {
    if (text == "binary") return ParamKind::binary;
    if (text == "continuous") return ParamKind::continuous;
    if (text == "nominal") return ParamKind::nominal;
    return std::nullopt;
}

/**
 * A single parameter value. `std::monostate` is "unset": the engine default applies.
 */
using ParamValue = std::variant<std::monostate, bool, double, std::string>;

inline bool is_unset(const ParamValue& value) { return std::holds_alternative<std::monostate>(value); }

/// Shortest decimal text that parses back to the same double.
inline std::string format_number(double value) {
    if (std::isfinite(value) && value == std::floor(value) && std::fabs(value) < 1e15) {
        std::ostringstream out;
        out << static_cast<long long>(value);
        return out.str();
    }
    for (int precision = 6; precision <= 17; ++precision) {
        std::ostringstream out;
        out.precision(precision);
        out << value;
        if (std::stod(out.str()) == value) {
            return out.str();
        }
    }
    std::ostringstream out;
    out.precision(17);
    out << value;
    return out.str();
}

/// Text form used in CSV cells and bucket labels; unset is the empty string.
inline std::string value_text(const ParamValue& value) {
    struct Visitor {
        std::string operator()(std::monostate) const { return ""; }
        std::string operator()(bool b) const { return b ? "true" : "false"; }
        std::string operator()(double d) const { return format_number(d); }
        std::string operator()(const std::string& s) const { return s; }
    };
    return std::visit(Visitor{}, value);
}

struct Range {
    double lo = 0.0;
    double hi = 0.0;

    bool contains(double v) const { return v >= lo && v <= hi; }
    bool operator==(const Range&) const = default;
};

struct ParameterDef {
    std::string name;
    std::string label;
    ParamKind kind = ParamKind::binary;
    ParamValue default_value; ///< unset when the parameter declares no default
    Range range;                      ///< continuous only
    std::vector<std::string> symbols; ///< nominal only
    std::vector<bool> truth_values{false, true}; ///< binary only; shrinks when a value is excluded
    std::string description;

    bool has_default() const { return !is_unset(default_value); }

    /// Whether a (non-unset) value lies in the domain. Kind mismatches are never contained.
    bool contains(const ParamValue& value) const {
        switch (kind) {
        case ParamKind::binary:
            if (const bool* b = std::get_if<bool>(&value)) {
                return std::find(truth_values.begin(), truth_values.end(), *b) != truth_values.end();
            }
            return false;
        case ParamKind::continuous:
            if (const double* d = std::get_if<double>(&value)) {
                return range.contains(*d);
            }
            return false;
        case ParamKind::nominal:
            if (const std::string* s = std::get_if<std::string>(&value)) {
                return std::find(symbols.begin(), symbols.end(), *s) != symbols.end();
            }
            return false;
        }
        return false;
    }

    /// Throws schema_error/domain_violation when an invariant is broken.
    void validate() const {
        if (name.empty()) {
            fail(ErrorCode::schema_error, "parameter with empty name");
        }
        switch (kind) {
        case ParamKind::binary:
            if (truth_values.empty()) {
                fail(ErrorCode::domain_violation, "binary parameter '" + name + "' has an empty domain");
            }
            break;
        case ParamKind::continuous:
            if (!(range.lo <= range.hi) || !std::isfinite(range.lo) || !std::isfinite(range.hi)) {
                fail(ErrorCode::domain_violation, "continuous parameter '" + name + "' has lo > hi");
            }
            break;
        case ParamKind::nominal: {
            if (symbols.empty()) {
                fail(ErrorCode::domain_violation, "nominal parameter '" + name + "' has an empty value list");
            }
            std::set<std::string> seen(symbols.begin(), symbols.end());
            if (seen.size() != symbols.size()) {
                fail(ErrorCode::domain_violation, "nominal parameter '" + name + "' has duplicate values");
            }
            break;
        }
        }
        if (has_default() && !contains(default_value)) {
            fail(ErrorCode::domain_violation, "default of parameter '" + name + "' lies outside its domain");
        }
    }

    /// Parses cell text into a value of this parameter's kind. Empty text is unset.
    ParamValue parse_value(std::string_view text) const {
        if (text.empty()) {
            return std::monostate{};
        }
        switch (kind) {
        case ParamKind::binary:
            if (text == "true") return true;
            if (text == "false") return false;
            fail(ErrorCode::domain_violation,
                 "value '" + std::string(text) + "' is not a boolean for parameter '" + name + "'");
        case ParamKind::continuous: {
            std::string owned(text);
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(owned, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != owned.size() || !std::isfinite(v)) {
                fail(ErrorCode::domain_violation,
                     "value '" + owned + "' is not a number for parameter '" + name + "'");
            }
            return v;
        }
        case ParamKind::nominal:
            return std::string(text);
        }
        return std::monostate{};
    }

    bool operator==(const ParameterDef&) const = default;
};

struct ParameterSpace {
    std::vector<ParameterDef> params;

    std::size_t size() const { return params.size(); }

    std::optional<std::size_t> index_of(std::string_view name) const {
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].name == name) {
                return i;
            }
        }
        return std::nullopt;
    }

    const ParameterDef& at(std::string_view name) const {
        auto idx = index_of(name);
        if (!idx) {
            fail(ErrorCode::unknown_parameter, "unknown parameter '" + std::string(name) + "'");
        }
        return params[*idx];
    }

    void validate() const {
        std::set<std::string> names;
        for (const auto& p : params) {
            p.validate();
            if (!names.insert(p.name).second) {
                fail(ErrorCode::schema_error, "duplicate parameter name '" + p.name + "'");
            }
        }
    }

    std::size_t count(ParamKind kind) const {
        return static_cast<std::size_t>(
            std::count_if(params.begin(), params.end(), [&](const ParameterDef& p) { return p.kind == kind; }));
    }

    bool operator==(const ParameterSpace&) const = default;
};

/**
 * Parameter assignment for one trial. Absent keys are unset.
 */
struct Configuration {
    std::map<std::string, ParamValue> values;

    const ParamValue& get(const std::string& name) const {
        static const ParamValue unset{};
        auto it = values.find(name);
        return it == values.end() ? unset : it->second;
    }

    void set(const std::string& name, ParamValue value) {
        if (is_unset(value)) {
            values.erase(name);
        } else {
            values[name] = std::move(value);
        }
    }

    /// Throws unknown_parameter or domain_violation.
    void validate(const ParameterSpace& space) const {
        for (const auto& [name, value] : values) {
            const auto& def = space.at(name);
            if (!is_unset(value) && !def.contains(value)) {
                fail(ErrorCode::domain_violation,
                     "value '" + value_text(value) + "' outside the domain of parameter '" + name + "'");
            }
        }
    }

    bool operator==(const Configuration&) const = default;
};

/**
 * Fixed-length branch bitset packed into 64-bit words. Bits beyond `size()` are always zero.
 */
class CoverageVector {
public:
    CoverageVector() = default;
    explicit CoverageVector(std::size_t n_bits) : n_bits_(n_bits), words_((n_bits + 63) / 64, 0) {}

    std::size_t size() const { return n_bits_; }
    std::span<const std::uint64_t> words() const { return words_; }

    void set(std::size_t j) {
        check(j);
        words_[j >> 6] |= (std::uint64_t{1} << (j & 63));
    }

    void reset(std::size_t j) {
        check(j);
        words_[j >> 6] &= ~(std::uint64_t{1} << (j & 63));
    }

    bool test(std::size_t j) const {
        check(j);
        return (words_[j >> 6] >> (j & 63)) & 1U;
    }

    std::size_t popcount() const {
        std::size_t total = 0;
        for (auto w : words_) {
            total += static_cast<std::size_t>(std::popcount(w));
        }
        return total;
    }

    bool none() const {
        return std::all_of(words_.begin(), words_.end(), [](std::uint64_t w) { return w == 0; });
    }

    CoverageVector& operator|=(const CoverageVector& other) {
        require_same_size(other);
        for (std::size_t w = 0; w < words_.size(); ++w) {
            words_[w] |= other.words_[w];
        }
        return *this;
    }

    std::size_t intersection_count(const CoverageVector& other) const {
        require_same_size(other);
        std::size_t total = 0;
        for (std::size_t w = 0; w < words_.size(); ++w) {
            total += static_cast<std::size_t>(std::popcount(words_[w] & other.words_[w]));
        }
        return total;
    }

    std::size_t union_count(const CoverageVector& other) const {
        require_same_size(other);
        std::size_t total = 0;
        for (std::size_t w = 0; w < words_.size(); ++w) {
            total += static_cast<std::size_t>(std::popcount(words_[w] | other.words_[w]));
        }
        return total;
    }

    /// Indices of set bits in increasing order.
    std::vector<std::size_t> indices() const {
        std::vector<std::size_t> out;
        out.reserve(popcount());
        for (std::size_t w = 0; w < words_.size(); ++w) {
            std::uint64_t word = words_[w];
            while (word != 0) {
                const int bit = std::countr_zero(word);
                out.push_back(w * 64 + static_cast<std::size_t>(bit));
                word &= word - 1;
            }
        }
        return out;
    }

    void require_same_size(const CoverageVector& other) const {
        if (other.n_bits_ != n_bits_) {
            fail(ErrorCode::invalid_argument, "coverage vector length mismatch: " + std::to_string(n_bits_) +
                                                  " vs " + std::to_string(other.n_bits_));
        }
    }

    bool operator==(const CoverageVector&) const = default;

private:
    void check(std::size_t j) const {
        if (j >= n_bits_) {
            fail(ErrorCode::invalid_argument, "branch index " + std::to_string(j) + " out of range");
        }
    }

    std::size_t n_bits_ = 0;
    std::vector<std::uint64_t> words_;
};

struct Trial {
    int id = 0;
    Configuration config;
    std::int64_t coverage_value = 0;
    CoverageVector coverage;

    bool failed() const { return coverage_value == 0; }
    bool operator==(const Trial&) const = default;
};

struct SourceLocation {
    std::string file;
    int line = 1;

    bool operator==(const SourceLocation&) const = default;
};

/**
 * One tuner run. Branches are addressed by dense index `0..n_branches-1`; `branch_ids`
 * keeps the original identifiers from the input bundle.
 */
struct Experiment {
    ParameterSpace space;
    std::vector<Trial> trials; ///< iteration order; trials[k].id == k + 1
    std::size_t n_branches = 0;
    std::vector<std::int64_t> branch_ids;
    std::vector<std::optional<SourceLocation>> locations; ///< per dense branch index
    std::string source_root;
    std::vector<std::string> warnings;

    std::size_t n_trials() const { return trials.size(); }

    bool has_trial(int id) const { return id >= 1 && static_cast<std::size_t>(id) <= trials.size(); }

    const Trial& trial(int id) const {
        if (!has_trial(id)) {
            fail(ErrorCode::invalid_group, "unknown trial id " + std::to_string(id));
        }
        return trials[static_cast<std::size_t>(id - 1)];
    }

    std::optional<std::size_t> dense_index(std::int64_t branch_id) const {
        auto it = std::lower_bound(branch_ids.begin(), branch_ids.end(), branch_id);
        if (it == branch_ids.end() || *it != branch_id) {
            return std::nullopt;
        }
        return static_cast<std::size_t>(it - branch_ids.begin());
    }

    /// Dense branch indices grouped by file, ordered by file name then branch index.
    std::map<std::string, std::vector<std::size_t>> branches_by_file() const {
        std::map<std::string, std::vector<std::size_t>> out;
        for (std::size_t b = 0; b < locations.size(); ++b) {
            if (locations[b]) {
                out[locations[b]->file].push_back(b);
            }
        }
        return out;
    }

    std::vector<int> all_ids() const {
        std::vector<int> ids(trials.size());
        for (std::size_t i = 0; i < trials.size(); ++i) {
            ids[i] = static_cast<int>(i + 1);
        }
        return ids;
    }
};

enum class GroupOrigin { builtin, lasso, table_selection, parameter_value, predicate };

inline std::string_view to_string(GroupOrigin origin) {
    switch (origin) {
    case GroupOrigin::builtin: return "builtin";
    case GroupOrigin::lasso: return "lasso";
    case GroupOrigin::table_selection: return "table-selection";
    case GroupOrigin::parameter_value: return "parameter-value";
    case GroupOrigin::predicate: return "predicate";
    }
    return "unknown";
}

inline std::optional<GroupOrigin> parse_origin(std::string_view text) {
    if (text == "builtin") return GroupOrigin::builtin;
    if (text == "lasso") return GroupOrigin::lasso;
    if (text == "table-selection") return GroupOrigin::table_selection;
    if (text == "parameter-value") return GroupOrigin::parameter_value;
    if (text == "predicate") return GroupOrigin::predicate;
    return std::nullopt;
}

struct TrialGroup {
    std::string name;
    std::vector<int> member_ids; ///< sorted, unique
    GroupOrigin origin = GroupOrigin::predicate;

    TrialGroup() = default;
    TrialGroup(std::string group_name, std::vector<int> ids, GroupOrigin group_origin = GroupOrigin::predicate)
        : name(std::move(group_name)), member_ids(std::move(ids)), origin(group_origin) {
        std::sort(member_ids.begin(), member_ids.end());
        member_ids.erase(std::unique(member_ids.begin(), member_ids.end()), member_ids.end());
    }

    std::size_t size() const { return member_ids.size(); }

    bool contains(int id) const { return std::binary_search(member_ids.begin(), member_ids.end(), id); }

    bool operator==(const TrialGroup&) const = default;
};

inline TrialGroup group_union(const TrialGroup& a, const TrialGroup& b) {
    std::vector<int> ids;
    std::set_union(a.member_ids.begin(), a.member_ids.end(), b.member_ids.begin(), b.member_ids.end(),
                   std::back_inserter(ids));
    return TrialGroup(a.name + " | " + b.name, std::move(ids), GroupOrigin::predicate);
}

inline void validate_group(const TrialGroup& group, const Experiment& exp) {
    if (group.member_ids.empty()) {
        fail(ErrorCode::invalid_group, "group '" + group.name + "' is empty");
    }
    for (int id : group.member_ids) {
        if (!exp.has_trial(id)) {
            fail(ErrorCode::invalid_group, "group '" + group.name + "' references unknown trial id " + std::to_string(id));
        }
    }
}

/// OR of the members' coverage vectors.
inline CoverageVector group_vector(const TrialGroup& group, const Experiment& exp) {
    validate_group(group, exp);
    CoverageVector out(exp.n_branches);
    for (int id : group.member_ids) {
        out |= exp.trial(id).coverage;
    }
    return out;
}

/// Accumulated coverage: branches covered by the merged test suite of the group.
inline std::int64_t accum(const TrialGroup& group, const Experiment& exp) {
    return static_cast<std::int64_t>(group_vector(group, exp).popcount());
}

/// Coverage gained by merging two groups beyond the better of the two.
inline std::int64_t complementarity(const TrialGroup& g1, const TrialGroup& g2, const Experiment& exp) {
    const auto v1 = group_vector(g1, exp);
    const auto v2 = group_vector(g2, exp);
    const auto merged = static_cast<std::int64_t>(v1.union_count(v2));
    return merged - static_cast<std::int64_t>(std::max(v1.popcount(), v2.popcount()));
}

struct JaccardCounts {
    std::size_t intersection = 0;
    std::size_t union_size = 0;

    /// 1 - |a & b| / |a | b|; two empty sets are at distance 0.
    double distance() const {
        if (union_size == 0) {
            return 0.0;
        }
        return 1.0 - static_cast<double>(intersection) / static_cast<double>(union_size);
    }
};

inline JaccardCounts jaccard_counts(const CoverageVector& a, const CoverageVector& b) {
    a.require_same_size(b);
    JaccardCounts counts;
    const auto wa = a.words();
    const auto wb = b.words();
    for (std::size_t w = 0; w < wa.size(); ++w) {
        counts.intersection += static_cast<std::size_t>(std::popcount(wa[w] & wb[w]));
        counts.union_size += static_cast<std::size_t>(std::popcount(wa[w] | wb[w]));
    }
    return counts;
}

inline double jaccard_distance(const CoverageVector& a, const CoverageVector& b) {
    return jaccard_counts(a, b).distance();
}

/// Per dense branch index, the number of group members covering it.
inline std::vector<int> branch_frequency(const TrialGroup& group, const Experiment& exp) {
    validate_group(group, exp);
    std::vector<int> freq(exp.n_branches, 0);
    for (int id : group.member_ids) {
        const auto words = exp.trial(id).coverage.words();
        for (std::size_t w = 0; w < words.size(); ++w) {
            std::uint64_t word = words[w];
            while (word != 0) {
                const int bit = std::countr_zero(word);
                ++freq[w * 64 + static_cast<std::size_t>(bit)];
                word &= word - 1;
            }
        }
    }
    return freq;
}

} // namespace covtune
