#include "covtune/random.hpp"
#include "covtune/stats.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

using namespace covtune;
using namespace covtune::stats;

namespace {

double log_factorial(long n) { return std::lgamma(static_cast<double>(n) + 1.0); }

/// Two-sided exact p-value by enumerating every 2 x c table with the observed margins.
double brute_force_exact(const std::vector<long>& a, const std::vector<long>& b) {
    std::vector<long> col;
    long n1 = 0, n = 0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        col.push_back(a[j] + b[j]);
        n1 += a[j];
        n += a[j] + b[j];
    }
    const auto log_p = [&](const std::vector<long>& row) {
        double lp = log_factorial(n1) + log_factorial(n - n1) - log_factorial(n);
        for (std::size_t j = 0; j < col.size(); ++j) {
            lp += log_factorial(col[j]) - log_factorial(row[j]) - log_factorial(col[j] - row[j]);
        }
        return lp;
    };
    const double observed = log_p(a);
    double total = 0.0;
    std::vector<long> row(col.size(), 0);
    std::function<void(std::size_t, long)> rec = [&](std::size_t j, long left) {
        if (j + 1 == col.size()) {
            if (left > col[j]) return;
            row[j] = left;
            const double lp = log_p(row);
            if (lp <= observed + 1e-7) total += std::exp(lp);
            return;
        }
        for (long v = 0; v <= std::min(left, col[j]); ++v) {
            row[j] = v;
            rec(j + 1, left - v);
        }
    };
    rec(0, n1);
    return std::min(1.0, total);
}

/// Exact rank-sum p-value by enumerating every assignment of the pooled values to x.
double brute_force_rank_sum(const std::vector<double>& x, const std::vector<double>& y) {
    std::vector<double> pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    const std::size_t n = pooled.size(), nx = x.size();
    const auto u_of = [&](unsigned mask) {
        double u = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!(mask >> i & 1u)) continue;
            for (std::size_t j = 0; j < n; ++j) {
                if (mask >> j & 1u) continue;
                u += pooled[i] > pooled[j] ? 1.0 : pooled[i] == pooled[j] ? 0.5 : 0.0;
            }
        }
        return u;
    };
    const double observed = u_of((1u << nx) - 1);
    double le = 0, ge = 0, total = 0;
    for (unsigned mask = 0; mask < (1u << n); ++mask) {
        if (static_cast<std::size_t>(__builtin_popcount(mask)) != nx) continue;
        const double u = u_of(mask);
        total += 1;
        le += u <= observed;
        ge += u >= observed;
    }
    return std::min(1.0, 2.0 * std::min(le, ge) / total);
}

double cliffs_delta(const std::vector<double>& x, const std::vector<double>& y) {
    double s = 0;
    for (double a : x) {
        for (double b : y) s += (a > b) - (a < b);
    }
    return s / static_cast<double>(x.size() * y.size());
}

} // namespace

TEST(Distributions, ReferenceTails) {
    EXPECT_NEAR(chi_square_sf(3.841458820694124, 1), 0.05, 1e-12);
    EXPECT_NEAR(chi_square_sf(10.0, 3), 0.01856613546304325, 1e-12);
    EXPECT_EQ(chi_square_sf(0.0, 2), 1.0);
    EXPECT_NEAR(normal_sf(1.959963984540054), 0.025, 1e-12);
}

TEST(ContingencyTest, ChiSquareReference) {
    const auto t = contingency_test({30, 20, 10}, {10, 25, 35});
    EXPECT_FALSE(t.exact);
    EXPECT_NEAR(t.statistic, 23.816137566137574, 1e-9);
    EXPECT_NEAR(t.p_value, 6.735834956249958e-06, 1e-12);
    EXPECT_NEAR(t.effect_size, 0.42801992734107397, 1e-12);
}

TEST(ContingencyTest, FisherReference) {
    const auto t = contingency_test({1, 8}, {5, 2});
    EXPECT_TRUE(t.exact);
    EXPECT_NEAR(t.p_value, 0.03496503496503496, 1e-12);
}

TEST(ContingencyTest, ExactMatchesTableEnumeration) {
    Rng rng(1);
    for (int rep = 0; rep < 200; ++rep) {
        const std::size_t c = 2 + rng.below(3);
        std::vector<long> a(c), b(c);
        for (std::size_t j = 0; j < c; ++j) {
            a[j] = static_cast<long>(rng.below(6));
            b[j] = static_cast<long>(rng.below(6));
        }
        if (std::accumulate(a.begin(), a.end(), 0L) == 0 || std::accumulate(b.begin(), b.end(), 0L) == 0) continue;
        std::vector<long> fa, fb;
        for (std::size_t j = 0; j < c; ++j) {
            if (a[j] + b[j] > 0) {
                fa.push_back(a[j]);
                fb.push_back(b[j]);
            }
        }
        const auto t = contingency_test(a, b);
        if (!t.exact || fa.size() < 2) continue;
        ASSERT_NEAR(t.p_value, brute_force_exact(fa, fb), 1e-9) << rep;
    }
}

TEST(ContingencyTest, SwapAndDegenerateTables) {
    const auto ab = contingency_test({3, 0, 7}, {1, 4, 2}), ba = contingency_test({1, 4, 2}, {3, 0, 7});
    EXPECT_EQ(ab.p_value, ba.p_value);
    EXPECT_EQ(ab.effect_size, ba.effect_size);
    // One non-empty column: nothing to test.
    const auto one = contingency_test({5, 0}, {7, 0});
    EXPECT_EQ(one.p_value, 1.0);
    EXPECT_EQ(one.effect_size, 0.0);
    EXPECT_THROW(contingency_test({1, 2}, {1}), Error);
    // Complete association.
    EXPECT_NEAR(contingency_test({40, 0}, {0, 40}).effect_size, 1.0, 1e-12);
}

TEST(ContingencyTest, MonteCarloFallbackIsDeterministicAndClose) {
    // Many sparse columns: expected counts below 5 but the enumeration is huge.
    std::vector<long> a, b;
    Rng rng(2);
    for (int j = 0; j < 40; ++j) {
        a.push_back(static_cast<long>(rng.below(4)));
        b.push_back(static_cast<long>(rng.below(4)) + (j < 10 ? 3 : 0));
    }
    const auto t1 = contingency_test(a, b), t2 = contingency_test(a, b);
    EXPECT_EQ(t1.p_value, t2.p_value);
    EXPECT_GE(t1.p_value, 0.0);
    EXPECT_LE(t1.p_value, 1.0);
}

TEST(RankSum, ExactReference) {
    const auto t = rank_sum_test({1.1, 2.3, 3.5, 4.0, 7.2}, {2.0, 5.1, 6.3, 8.8, 9.9, 10.5});
    EXPECT_TRUE(t.exact);
    EXPECT_DOUBLE_EQ(t.statistic, 6.0);
    EXPECT_NEAR(t.p_value, 0.12554112554112554, 1e-12);
}

TEST(RankSum, TiedNormalReference) {
    std::vector<double> x, y;
    for (int r = 0; r < 6; ++r) {
        for (double v : {1, 2, 2, 3, 3, 3, 4, 5, 5, 6}) x.push_back(v);
        for (double v : {2, 3, 3, 4, 4, 5, 5, 6, 6, 7}) y.push_back(v);
    }
    const auto t = rank_sum_test(x, y);
    EXPECT_FALSE(t.exact);
    EXPECT_DOUBLE_EQ(t.statistic, 1116.0);
    EXPECT_NEAR(t.p_value, 0.0002623372948583071, 1e-12);
    EXPECT_NEAR(t.effect_size, cliffs_delta(x, y), 1e-12);
    const auto s = rank_sum_test(y, x);
    EXPECT_EQ(s.p_value, t.p_value);
    EXPECT_DOUBLE_EQ(s.effect_size, -t.effect_size);
}

TEST(RankSum, ExactMatchesPermutationEnumeration) {
    Rng rng(3);
    for (int rep = 0; rep < 60; ++rep) {
        std::vector<double> x(2 + rng.below(5)), y(2 + rng.below(5));
        for (auto& v : x) v = rng.uniform();
        for (auto& v : y) v = rng.uniform() + 0.3;
        const auto t = rank_sum_test(x, y);
        ASSERT_TRUE(t.exact);
        ASSERT_NEAR(t.p_value, brute_force_rank_sum(x, y), 1e-12) << rep;
        ASSERT_NEAR(t.effect_size, cliffs_delta(x, y), 1e-12);
    }
}

TEST(RankSum, CompleteSeparationAndConstants) {
    const std::vector<double> zeros(20, 0.0), ones(20, 1.0);
    const auto t = rank_sum_test(zeros, ones);
    EXPECT_DOUBLE_EQ(t.effect_size, -1.0);
    EXPECT_LT(t.p_value, 1e-6);
    const auto same = rank_sum_test(ones, ones);
    EXPECT_EQ(same.p_value, 1.0);
    EXPECT_EQ(same.effect_size, 0.0);
    EXPECT_THROW(rank_sum_test({}, ones), Error);
}

TEST(BenjaminiHochberg, HandExampleAndMonotone) {
    const auto adj = benjamini_hochberg({0.01, 0.04, 0.03, 0.005});
    const std::vector<double> expected = {0.02, 0.04, 0.04, 0.02};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(adj[i], expected[i], 1e-15);
    Rng rng(4);
    std::vector<double> p(50);
    for (auto& v : p) v = rng.uniform();
    const auto a = benjamini_hochberg(p);
    for (std::size_t i = 0; i < p.size(); ++i) {
        EXPECT_GE(a[i], p[i]);
        EXPECT_LE(a[i], 1.0);
        for (std::size_t j = 0; j < p.size(); ++j) {
            if (p[i] < p[j]) {
                EXPECT_LE(a[i], a[j]);
            }
        }
    }
    EXPECT_TRUE(benjamini_hochberg({}).empty());
}

TEST(EffectClass, StarThresholds) {
    EXPECT_EQ(effect_class(0.0), 0);
    EXPECT_EQ(effect_class(0.099), 0);
    EXPECT_EQ(effect_class(-0.1), 1);
    EXPECT_EQ(effect_class(0.3), 2);
    EXPECT_EQ(effect_class(-0.5), 3);
    EXPECT_EQ(effect_class(1.0), 3);
}
