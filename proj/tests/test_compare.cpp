#include "support.hpp"

#include "covtune/compare.hpp"
#include "covtune/groups.hpp"
#include "covtune/simlab.hpp"

#include <gtest/gtest.h>

#include <map>

using namespace covtune;
using namespace testing_support;

namespace {

std::set<std::size_t> union_of(const Experiment& exp, const TrialGroup& g) {
    std::set<std::size_t> out;
    for (int id : g.member_ids) {
        const auto s = bit_set(exp.trial(id).coverage);
        out.insert(s.begin(), s.end());
    }
    return out;
}

std::vector<std::set<std::size_t>> ranges(std::initializer_list<std::pair<std::size_t, std::size_t>> spans) {
    std::vector<std::set<std::size_t>> out;
    for (auto [lo, hi] : spans) {
        std::set<std::size_t> s;
        for (auto b = lo; b < hi; ++b) s.insert(b);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace

TEST(GroupStats, SingletonGroup) {
    Rng rng(1);
    const auto exp = random_experiment(rng, 10, 50);
    const TrialGroup g("one", {4});
    const auto s = group_stats(g, g, exp);
    const auto c = exp.trial(4).coverage_value;
    EXPECT_EQ(s.first.max, c);
    EXPECT_EQ(s.first.min, c);
    EXPECT_DOUBLE_EQ(s.first.mean, static_cast<double>(c));
    EXPECT_EQ(s.first.accumulated, c);
    EXPECT_EQ(s.merged, c);
    EXPECT_EQ(s.complementarity, 0);
}

TEST(GroupStats, MergedCoverageExample) {
    // g1 covers 2,820 branches, g2 covers 2,668 of which 277 are new.
    const auto sets = ranges({{0, 1500}, {1000, 2820}, {2820 - 2391, 3097}});
    const auto exp = experiment_from_sets(sets, 3200);
    const auto s = group_stats(TrialGroup("g1", {1, 2}), TrialGroup("g2", {3}), exp);
    EXPECT_EQ(s.first.accumulated, 2820);
    EXPECT_EQ(s.second.accumulated, 2668);
    EXPECT_EQ(s.merged, 3097);
    EXPECT_EQ(s.complementarity, 277);
    EXPECT_EQ(s.first.max, 1820);
    EXPECT_EQ(s.first.min, 1500);
    EXPECT_DOUBLE_EQ(s.first.mean, 1660.0);
}

TEST(GroupStats, RandomGroupsMatchSetOracle) {
    Rng rng(2);
    for (int rep = 0; rep < 100; ++rep) {
        const auto exp = random_experiment(rng, 5 + rng.below(30), 1 + rng.below(200));
        const TrialGroup g1("a", random_ids(rng, exp.n_trials())), g2("b", random_ids(rng, exp.n_trials()));
        const auto s = group_stats(g1, g2, exp);
        const auto u1 = union_of(exp, g1), u2 = union_of(exp, g2);
        std::set<std::size_t> merged(u1);
        merged.insert(u2.begin(), u2.end());
        ASSERT_EQ(s.first.accumulated, static_cast<std::int64_t>(u1.size()));
        ASSERT_EQ(s.second.accumulated, static_cast<std::int64_t>(u2.size()));
        ASSERT_EQ(s.merged, static_cast<std::int64_t>(merged.size()));
        ASSERT_EQ(s.complementarity, complementarity(g1, g2, exp));
        ASSERT_GE(s.merged, std::max(s.first.accumulated, s.second.accumulated));
        std::int64_t hi = 0, lo = INT64_MAX;
        double total = 0;
        for (int id : g1.member_ids) {
            hi = std::max(hi, exp.trial(id).coverage_value);
            lo = std::min(lo, exp.trial(id).coverage_value);
            total += static_cast<double>(exp.trial(id).coverage_value);
        }
        ASSERT_EQ(s.first.max, hi);
        ASSERT_EQ(s.first.min, lo);
        ASSERT_NEAR(s.first.mean, total / static_cast<double>(g1.size()), 1e-12);
    }
}

TEST(FrequencyDiff, CountingOracleAndOrdering) {
    Rng rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        const auto exp = random_experiment(rng, 5 + rng.below(30), 1 + rng.below(100));
        const TrialGroup g1("a", random_ids(rng, exp.n_trials())), g2("b", random_ids(rng, exp.n_trials()));
        for (auto active : {ActiveGroup::first, ActiveGroup::second}) {
            const auto rows = frequency_diff(g1, g2, exp, active);
            std::size_t expected_rows = 0;
            std::map<std::size_t, std::pair<int, int>> oracle;
            for (std::size_t b = 0; b < exp.n_branches; ++b) {
                int f1 = 0, f2 = 0;
                for (int id : g1.member_ids) f1 += exp.trial(id).coverage.test(b);
                for (int id : g2.member_ids) f2 += exp.trial(id).coverage.test(b);
                if (f1 || f2) {
                    ++expected_rows;
                    oracle[b] = {f1, f2};
                }
            }
            ASSERT_EQ(rows.size(), expected_rows);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                const auto& r = rows[i];
                ASSERT_EQ(r.branch_id, exp.branch_ids[r.branch]);
                ASSERT_EQ(std::make_pair(r.freq1, r.freq2), oracle.at(r.branch));
                if (i == 0) continue;
                const auto& p = rows[i - 1];
                const int fp = active == ActiveGroup::first ? p.freq1 : p.freq2;
                const int fr = active == ActiveGroup::first ? r.freq1 : r.freq2;
                ASSERT_TRUE(fp > fr || (fp == fr && p.branch_id < r.branch_id));
            }
        }
    }
}

TEST(FrequencyDiff, DisjointAndIdenticalGroups) {
    const auto exp = experiment_from_sets({{0, 1}, {1}, {2, 3}, {3}}, 5);
    for (const auto& r : frequency_diff(TrialGroup("a", {1, 2}), TrialGroup("b", {3, 4}), exp)) {
        EXPECT_TRUE((r.freq1 == 0) != (r.freq2 == 0));
    }
    const TrialGroup g("g", {1, 3, 4});
    for (const auto& r : frequency_diff(g, g, exp)) EXPECT_EQ(r.freq1, r.freq2);
}

TEST(ParameterTests, IdenticalGroupsHaveNoSignificantParameter) {
    Rng rng(4);
    const auto exp = random_experiment(rng, 80, 20, 8);
    const TrialGroup g("g", random_ids(rng, 80, 0.5));
    const auto t = parameter_tests(g, g, exp);
    EXPECT_EQ(t.significant_count(), 0u);
    EXPECT_TRUE(t.overlapping);
    for (const auto& r : t.results) EXPECT_EQ(r.effect_size, 0.0) << r.parameter;
}

TEST(ParameterTests, CompleteSeparationOnContinuousParameter) {
    Rng rng(5);
    auto exp = random_experiment(rng, 40, 10, 0);
    exp.space.params = {make_continuous("MF", 0, 1), make_binary("A")};
    for (auto& t : exp.trials) {
        t.config.set("MF", t.id <= 20 ? 0.0 : 1.0);
        t.config.set("A", rng.bernoulli(0.5));
    }
    std::vector<int> lo(20), hi(20);
    std::iota(lo.begin(), lo.end(), 1);
    std::iota(hi.begin(), hi.end(), 21);
    const auto t = parameter_tests(TrialGroup("lo", lo), TrialGroup("hi", hi), exp);
    EXPECT_EQ(t.results[0].test, "rank-sum");
    EXPECT_DOUBLE_EQ(t.results[0].effect_size, -1.0);
    EXPECT_TRUE(t.results[0].significant);
    EXPECT_EQ(t.results[0].effect_class, 3);
    EXPECT_FALSE(t.overlapping);
}

TEST(ParameterTests, SmallGroupsAreUntestableAndAlphaIsChecked) {
    Rng rng(6);
    const auto exp = random_experiment(rng, 20, 10, 3);
    const auto t = parameter_tests(TrialGroup("a", {1, 2, 3, 4}), TrialGroup("b", {5, 6, 7, 8, 9}), exp);
    for (const auto& r : t.results) {
        EXPECT_FALSE(r.testable);
        EXPECT_FALSE(r.significant);
    }
    EXPECT_THROW(parameter_tests(TrialGroup("a", {1}), TrialGroup("b", {2}), exp, 0.0), Error);
    EXPECT_THROW(parameter_tests(TrialGroup("a", {1}), TrialGroup("b", {2}), exp, 1.0), Error);
}

TEST(ParameterTests, SwapFlipsSignedEffectsOnly) {
    Rng rng(7);
    for (int rep = 0; rep < 20; ++rep) {
        const auto exp = random_experiment(rng, 60, 20, 6);
        const TrialGroup g1("a", random_ids(rng, 60, 0.4)), g2("b", random_ids(rng, 60, 0.4));
        const auto ab = parameter_tests(g1, g2, exp), ba = parameter_tests(g2, g1, exp);
        for (std::size_t p = 0; p < ab.results.size(); ++p) {
            const auto &x = ab.results[p], &y = ba.results[p];
            ASSERT_EQ(x.p_value, y.p_value);
            ASSERT_EQ(x.significant, y.significant);
            if (x.test == "rank-sum") {
                ASSERT_DOUBLE_EQ(x.effect_size, -y.effect_size);
            } else {
                ASSERT_EQ(x.effect_size, y.effect_size);
            }
        }
    }
}

TEST(ParameterTests, NullSplitsRejectNearAlpha) {
    // Pre-correction rejection rate over 200 random halvings of 10 null parameters.
    Rng rng(8);
    int rejected = 0, total = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const auto exp = random_experiment(rng, 100, 5, 10, 0.3, 0.0);
        std::vector<int> ids = exp.all_ids();
        shuffle(ids, rng);
        const TrialGroup g1("a", {ids.begin(), ids.begin() + 50}), g2("b", {ids.begin() + 50, ids.end()});
        for (const auto& r : parameter_tests(g1, g2, exp).results) {
            rejected += r.p_value <= 0.05;
            ++total;
        }
    }
    const double rate = static_cast<double>(rejected) / total;
    EXPECT_GT(rate, 0.025);
    EXPECT_LT(rate, 0.075);
}

TEST(FileLineCoverage, HandExamples) {
    // File a.c holds 10 branches; the group covers 4 of them.
    Experiment exp = experiment_from_sets({{0, 1}, {2, 3}}, 10);
    for (std::size_t b = 0; b < 10; ++b) exp.locations[b] = SourceLocation{"a.c", static_cast<int>(b / 2 + 1)};
    const TrialGroup g("g", {1, 2});
    EXPECT_DOUBLE_EQ(file_coverage(g, exp, "a.c"), 0.4);
    // Line 1 holds branches 0 and 1; covered by 4/4 and 2/4 members.
    const auto line = experiment_from_sets({{0, 1}, {0, 1}, {0}, {0}}, 2);
    const TrialGroup four("four", {1, 2, 3, 4});
    Experiment same_line = line;
    same_line.locations[1] = same_line.locations[0];
    EXPECT_DOUBLE_EQ(line_coverage(four, same_line, "a.c", 1), 0.75);
    EXPECT_DOUBLE_EQ(line_coverage(g, exp, "a.c", 5), 0.0);
}

TEST(FileLineCoverage, MissingFileOrLineIsAnError) {
    const auto exp = experiment_from_sets({{0}}, 4);
    const TrialGroup g("g", {1});
    try {
        file_coverage(g, exp, "nope.c");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::not_found);
    }
    EXPECT_THROW(line_coverage(g, exp, "a.c", 99), Error);
}

TEST(FileLineCoverage, RandomFixtureMatchesOracle) {
    Rng rng(9);
    for (int rep = 0; rep < 30; ++rep) {
        const auto exp = random_experiment(rng, 5 + rng.below(20), 1 + rng.below(150));
        const TrialGroup g("g", random_ids(rng, exp.n_trials()));
        const auto u = union_of(exp, g);
        std::map<std::string, std::pair<int, int>> files;
        std::map<std::pair<std::string, int>, std::vector<std::size_t>> lines;
        for (std::size_t b = 0; b < exp.n_branches; ++b) {
            auto& f = files[exp.locations[b]->file];
            ++f.second;
            f.first += u.count(b) ? 1 : 0;
            lines[{exp.locations[b]->file, exp.locations[b]->line}].push_back(b);
        }
        for (const auto& [file, counts] : files) {
            ASSERT_DOUBLE_EQ(file_coverage(g, exp, file), static_cast<double>(counts.first) / counts.second);
        }
        for (const auto& [key, branches] : lines) {
            double total = 0;
            for (auto b : branches) {
                int hits = 0;
                for (int id : g.member_ids) hits += exp.trial(id).coverage.test(b);
                total += static_cast<double>(hits) / static_cast<double>(g.size());
            }
            ASSERT_NEAR(line_coverage(g, exp, key.first, key.second), total / static_cast<double>(branches.size()),
                        1e-12);
        }
        const auto all = builtin_groups(exp).all;
        for (const auto& [file, branches] : exp.branches_by_file()) {
            const bool every = std::all_of(branches.begin(), branches.end(),
                                           [&](std::size_t b) { return union_of(exp, all).count(b) > 0; });
            if (every) {
                ASSERT_EQ(file_coverage(all, exp, file), 1.0);
            }
        }
    }
}

TEST(CodeDiff, IdenticalGroupsAndBounds) {
    Rng rng(10);
    for (int rep = 0; rep < 20; ++rep) {
        const auto exp = random_experiment(rng, 20, 80);
        const TrialGroup g1("a", random_ids(rng, 20)), g2("b", random_ids(rng, 20));
        for (const auto& l : code_diff(g1, g1, exp).lines) ASSERT_EQ(l.value, 0.0);
        for (const auto& f : code_diff(g1, g1, exp).files) ASSERT_EQ(f.value, 0.0);
        const auto d = code_diff(g1, g2, exp);
        for (const auto& f : d.files) {
            ASSERT_DOUBLE_EQ(f.value, file_coverage(g1, exp, f.file) - file_coverage(g2, exp, f.file));
        }
        for (const auto& l : d.lines) {
            ASSERT_GE(l.value, -1.0);
            ASSERT_LE(l.value, 1.0);
            ASSERT_NEAR(l.value, line_coverage(g1, exp, l.file, l.line) - line_coverage(g2, exp, l.file, l.line), 1e-12);
        }
    }
}

TEST(CodeDiff, NestedDepthSearchHeuristics) {
    const auto prog = make_benchmark_program("nested-depth", 3);
    TunerSettings uniform;
    uniform.epsilon = 1.0;
    const auto exp = run_experiment(prog, prog.space, uniform, 300, 11);
    const auto dfs = group_by_parameter_value(exp, "S", "dfs");
    const auto bfs = group_by_parameter_value(exp, "S", "bfs");
    const auto diff = code_diff(dfs, bfs, exp);
    double deep_total = 0;
    int deep_lines = 0;
    for (const auto& l : diff.lines) {
        if (l.file == "wide.c") {
            EXPECT_LT(l.value, 0.0) << l.line;
        }
        if (l.file == "deep.c") {
            EXPECT_GE(l.value, 0.0) << l.line;
            deep_total += l.value;
            ++deep_lines;
        }
    }
    ASSERT_GT(deep_lines, 0);
    EXPECT_GT(deep_total / deep_lines, 0.1);
    for (const auto& f : diff.files) EXPECT_EQ(f.value > 0, f.file == "deep.c") << f.file;
}

TEST(CompareJson, Shapes) {
    Rng rng(12);
    const auto exp = random_experiment(rng, 30, 20);
    const TrialGroup g1("a", random_ids(rng, 30)), g2("b", random_ids(rng, 30));
    const auto s = to_json(group_stats(g1, g2, exp));
    EXPECT_TRUE(s.contains("merged"));
    EXPECT_EQ(s["first"]["size"], g1.size());
    const auto t = to_json(parameter_tests(g1, g2, exp));
    EXPECT_EQ(t["results"].size(), 3u);
    const auto d = to_json(code_diff(g1, g2, exp));
    EXPECT_TRUE(d["lines"].is_array());
    EXPECT_EQ(to_json(frequency_diff(g1, g2, exp)).size(), frequency_diff(g1, g2, exp).size());
}
