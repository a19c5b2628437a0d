#pragma once

#include "buckets.hpp"
#include "core.hpp"
#include "stats.hpp"

#include <json.hpp>

#include <algorithm>
#include <map>
#include <string>
#include <vector>

/**
 * @file compare.hpp
 *
 * @brief Pairwise group analytics: coverage statistics, per-branch frequencies,
 * per-parameter tests and file/line coverage differences.
 */

namespace covtune {

struct CoverageSummary {
    std::int64_t max = 0;
    std::int64_t min = 0;
    double mean = 0.0;
    std::int64_t accumulated = 0;
    std::size_t size = 0;
};

struct GroupStats {
    CoverageSummary first;
    CoverageSummary second;
    std::int64_t merged = 0;
    std::int64_t complementarity = 0;
};

inline CoverageSummary summarize(const TrialGroup& g, const Experiment& exp, const CoverageVector& vec) {
    CoverageSummary s;
    s.size = g.size();
    s.max = std::numeric_limits<std::int64_t>::min();
    s.min = std::numeric_limits<std::int64_t>::max();
    double total = 0.0;
    for (int id : g.member_ids) {
        const auto c = exp.trial(id).coverage_value;
        s.max = std::max(s.max, c);
        s.min = std::min(s.min, c);
        total += static_cast<double>(c);
    }
    s.mean = total / static_cast<double>(g.size());
    s.accumulated = static_cast<std::int64_t>(vec.popcount());
    return s;
}

inline GroupStats group_stats(const TrialGroup& g1, const TrialGroup& g2, const Experiment& exp) {
    const auto v1 = group_vector(g1, exp);
    const auto v2 = group_vector(g2, exp);
    GroupStats stats;
    stats.first = summarize(g1, exp, v1);
    stats.second = summarize(g2, exp, v2);
    stats.merged = static_cast<std::int64_t>(v1.union_count(v2));
    stats.complementarity = stats.merged - std::max(stats.first.accumulated, stats.second.accumulated);
    return stats;
}

struct FrequencyRow {
    std::size_t branch = 0; ///< dense index
    std::int64_t branch_id = 0;
    int freq1 = 0;
    int freq2 = 0;
};

enum class ActiveGroup { first, second };

/// Branches covered by either group, by descending frequency in the active group, ties by branch id.
inline std::vector<FrequencyRow> frequency_diff(const TrialGroup& g1, const TrialGroup& g2, const Experiment& exp,
                                               ActiveGroup order_by = ActiveGroup::first) {
    const auto f1 = branch_frequency(g1, exp);
    const auto f2 = branch_frequency(g2, exp);
    std::vector<FrequencyRow> rows;
    for (std::size_t b = 0; b < exp.n_branches; ++b) {
        if (f1[b] > 0 || f2[b] > 0) {
            rows.push_back(FrequencyRow{b, exp.branch_ids[b], f1[b], f2[b]});
        }
    }
    const bool first = order_by == ActiveGroup::first;
    std::stable_sort(rows.begin(), rows.end(), [first](const FrequencyRow& a, const FrequencyRow& b) {
        const int fa = first ? a.freq1 : a.freq2;
        const int fb = first ? b.freq1 : b.freq2;
        if (fa != fb) {
            return fa > fb;
        }
        return a.branch_id < b.branch_id;
    });
    return rows;
}

inline constexpr std::size_t min_test_group_size = 5;

struct ParamTestResult {
    std::string parameter;
    std::string test; ///< "chi-square", "exact", "rank-sum", or "untestable"
    double statistic = 0.0;
    double p_value = 1.0;
    double adjusted_p = 1.0;
    double effect_size = 0.0;
    bool significant = false;
    int effect_class = 0;
    bool testable = true;
};

struct ParamTests {
    std::vector<ParamTestResult> results; ///< space order
    bool overlapping = false;              ///< some trials belong to both groups
    double alpha = 0.05;

    std::size_t significant_count() const {
        return static_cast<std::size_t>(
            std::count_if(results.begin(), results.end(), [](const ParamTestResult& r) { return r.significant; }));
    }
};

/**
 * Per-parameter two-group tests. Binary and nominal parameters use the value-bucket
 * contingency table (unset is its own column); continuous parameters use the rank-sum
 * test on set values only. P-values are BH-adjusted across the testable parameters.
 */
inline ParamTests parameter_tests(const TrialGroup& g1, const TrialGroup& g2, const Experiment& exp,
                                  double alpha = 0.05) {
    if (!(alpha > 0.0 && alpha < 1.0)) {
        fail(ErrorCode::invalid_argument, "alpha must lie in (0, 1)");
    }
    validate_group(g1, exp);
    validate_group(g2, exp);
    ParamTests out;
    out.alpha = alpha;
    for (int id : g1.member_ids) {
        if (g2.contains(id)) {
            out.overlapping = true;
            break;
        }
    }
    const bool big_enough = g1.size() >= min_test_group_size && g2.size() >= min_test_group_size;
    std::vector<std::size_t> testable;
    for (std::size_t p = 0; p < exp.space.size(); ++p) {
        const auto& def = exp.space.params[p];
        ParamTestResult r;
        r.parameter = def.name;
        if (!big_enough) {
            r.testable = false;
            r.test = "untestable";
            out.results.push_back(r);
            continue;
        }
        if (def.kind == ParamKind::continuous) {
            std::vector<double> x, y;
            for (int id : g1.member_ids) {
                if (const double* v = std::get_if<double>(&exp.trial(id).config.get(def.name))) {
                    x.push_back(*v);
                }
            }
            for (int id : g2.member_ids) {
                if (const double* v = std::get_if<double>(&exp.trial(id).config.get(def.name))) {
                    y.push_back(*v);
                }
            }
            if (x.size() < min_test_group_size || y.size() < min_test_group_size) {
                r.testable = false;
                r.test = "untestable";
                out.results.push_back(r);
                continue;
            }
            const auto t = stats::rank_sum_test(x, y);
            r.test = "rank-sum";
            r.statistic = t.statistic;
            r.p_value = t.p_value;
            r.effect_size = t.effect_size;
        } else {
            const auto scheme = make_bucket_scheme(exp, p);
            std::vector<long> a(scheme.size(), 0), b(scheme.size(), 0);
            for (int id : g1.member_ids) {
                ++a[scheme.bucket_of(exp.trial(id).config.get(def.name))];
            }
            for (int id : g2.member_ids) {
                ++b[scheme.bucket_of(exp.trial(id).config.get(def.name))];
            }
            const auto t = stats::contingency_test(a, b);
            r.test = t.exact ? "exact" : "chi-square";
            r.statistic = t.statistic;
            r.p_value = t.p_value;
            r.effect_size = t.effect_size;
        }
        r.effect_class = stats::effect_class(r.effect_size);
        testable.push_back(out.results.size());
        out.results.push_back(r);
    }
    std::vector<double> raw;
    for (auto i : testable) {
        raw.push_back(out.results[i].p_value);
    }
    const auto adjusted = stats::benjamini_hochberg(raw);
    for (std::size_t k = 0; k < testable.size(); ++k) {
        auto& r = out.results[testable[k]];
        r.adjusted_p = adjusted[k];
        r.significant = adjusted[k] <= alpha;
    }
    return out;
}

inline std::map<std::size_t, std::vector<std::size_t>> branches_by_line(const std::vector<std::size_t>& branches,
                                                                        const Experiment& exp) {
    std::map<std::size_t, std::vector<std::size_t>> out;
    for (auto b : branches) {
        out[static_cast<std::size_t>(exp.locations[b]->line)].push_back(b);
    }
    return out;
}

namespace detail {

inline const std::vector<std::size_t>& file_branches(const std::map<std::string, std::vector<std::size_t>>& files,
                                                     const std::string& file) {
    auto it = files.find(file);
    if (it == files.end() || it->second.empty()) {
        fail(ErrorCode::not_found, "file '" + file + "' has no located branches");
    }
    return it->second;
}

inline double covered_ratio(const std::vector<std::size_t>& branches, const CoverageVector& vec) {
    std::size_t hit = 0;
    for (auto b : branches) {
        hit += vec.test(b) ? 1 : 0;
    }
    return static_cast<double>(hit) / static_cast<double>(branches.size());
}

inline double mean_frequency(const std::vector<std::size_t>& branches, const std::vector<int>& freq,
                             std::size_t group_size) {
    // One division of the exact integer total keeps the result correctly rounded.
    std::int64_t total = 0;
    for (auto b : branches) {
        total += freq[b];
    }
    return static_cast<double>(total) / static_cast<double>(group_size * branches.size());
}

} // namespace detail

/// Fraction of the file's branches covered by at least one group member.
inline double file_coverage(const TrialGroup& group, const Experiment& exp, const std::string& file) {
    const auto files = exp.branches_by_file();
    const auto& branches = detail::file_branches(files, file);
    return detail::covered_ratio(branches, group_vector(group, exp));
}

/// Mean over the line's branches of the fraction of members covering that branch.
inline double line_coverage(const TrialGroup& group, const Experiment& exp, const std::string& file, int line) {
    const auto files = exp.branches_by_file();
    const auto& branches = detail::file_branches(files, file);
    const auto lines = branches_by_line(branches, exp);
    auto it = lines.find(static_cast<std::size_t>(line));
    if (it == lines.end()) {
        fail(ErrorCode::not_found, file + ":" + std::to_string(line) + " has no located branches");
    }
    return detail::mean_frequency(it->second, branch_frequency(group, exp), group.size());
}

struct FileDiff {
    std::string file;
    double coverage1 = 0.0;
    double coverage2 = 0.0;
    double value = 0.0; ///< coverage1 - coverage2
};

struct LineDiff {
    std::string file;
    int line = 0;
    double coverage1 = 0.0;
    double coverage2 = 0.0;
    double value = 0.0; ///< coverage1 - coverage2, in [-1, 1]
};

struct CodeDiff {
    std::vector<FileDiff> files;
    std::vector<LineDiff> lines; ///< every line holding a branch, zero differences included
};

inline CodeDiff code_diff(const TrialGroup& g1, const TrialGroup& g2, const Experiment& exp) {
    const auto v1 = group_vector(g1, exp);
    const auto v2 = group_vector(g2, exp);
    const auto f1 = branch_frequency(g1, exp);
    const auto f2 = branch_frequency(g2, exp);
    CodeDiff out;
    for (const auto& [file, branches] : exp.branches_by_file()) {
        FileDiff fd{file, detail::covered_ratio(branches, v1), detail::covered_ratio(branches, v2), 0.0};
        fd.value = fd.coverage1 - fd.coverage2;
        out.files.push_back(fd);
        for (const auto& [line, line_branches] : branches_by_line(branches, exp)) {
            LineDiff ld;
            ld.file = file;
            ld.line = static_cast<int>(line);
            ld.coverage1 = detail::mean_frequency(line_branches, f1, g1.size());
            ld.coverage2 = detail::mean_frequency(line_branches, f2, g2.size());
            ld.value = ld.coverage1 - ld.coverage2;
            out.lines.push_back(ld);
        }
    }
    return out;
}

inline nlohmann::json to_json(const CoverageSummary& s) {
    return {{"size", s.size}, {"max", s.max}, {"min", s.min}, {"mean", s.mean}, {"accumulated", s.accumulated}};
}

inline nlohmann::json to_json(const GroupStats& s) {
    return {{"first", to_json(s.first)},
            {"second", to_json(s.second)},
            {"merged", s.merged},
            {"complementarity", s.complementarity}};
}

inline nlohmann::json to_json(const std::vector<FrequencyRow>& rows) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& r : rows) {
        out.push_back({{"branch", r.branch_id}, {"freq1", r.freq1}, {"freq2", r.freq2}});
    }
    return out;
}

inline nlohmann::json to_json(const ParamTests& tests) {
    nlohmann::json results = nlohmann::json::array();
    for (const auto& r : tests.results) {
        results.push_back({{"parameter", r.parameter},
                           {"test", r.test},
                           {"statistic", r.statistic},
                           {"p_value", r.p_value},
                           {"adjusted_p", r.adjusted_p},
                           {"effect_size", r.effect_size},
                           {"significant", r.significant},
                           {"effect_class", r.effect_class},
                           {"testable", r.testable}});
    }
    return {{"alpha", tests.alpha},
            {"overlapping", tests.overlapping},
            {"significant_count", tests.significant_count()},
            {"results", results}};
}

inline nlohmann::json to_json(const CodeDiff& diff) {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : diff.files) {
        files.push_back({{"file", f.file}, {"coverage1", f.coverage1}, {"coverage2", f.coverage2}, {"value", f.value}});
    }
    nlohmann::json lines = nlohmann::json::array();
    for (const auto& l : diff.lines) {
        lines.push_back({{"file", l.file},
                         {"line", l.line},
                         {"coverage1", l.coverage1},
                         {"coverage2", l.coverage2},
                         {"value", l.value}});
    }
    return {{"files", files}, {"lines", lines}};
}

} // namespace covtune
