#pragma once

#include "error.hpp"
#include "random.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

/**
 * @file stats.hpp
 *
 * @brief Two-sample tests used by group comparison: 2 x c independence tests with
 * Cramér's V, the Wilcoxon rank-sum test with Cliff's delta, and Benjamini-Hochberg.
 */

namespace covtune::stats {

struct TestOutcome {
    double statistic = 0.0;
    double p_value = 1.0;
    double effect_size = 0.0;
    bool exact = false;
};

inline double chi_square_sf(double x, double df) {
    if (x <= 0.0) {
        return 1.0;
    }
    return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

inline double normal_sf(double z) { return 0.5 * boost::math::erfc(z / std::sqrt(2.0)); }

namespace detail {

inline double log_choose(double n, double k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

/// Log-probability of a 2 x c table given its first row, under fixed margins.
inline double table_log_prob(const std::vector<long>& first_row, const std::vector<long>& col, long n, long n1) {
    double lp = -log_choose(static_cast<double>(n), static_cast<double>(n1));
    for (std::size_t j = 0; j < col.size(); ++j) {
        lp += log_choose(static_cast<double>(col[j]), static_cast<double>(first_row[j]));
    }
    return lp;
}

struct ExactEnumerator {
    const std::vector<long>& col;
    long n;
    long n1;
    double log_threshold;
    std::vector<long> suffix;
    double base;
    double p = 0.0;
    std::size_t visited = 0;
    std::size_t budget;
    bool exhausted = false;

    ExactEnumerator(const std::vector<long>& columns, long total, long row1, double threshold, std::size_t limit)
        : col(columns), n(total), n1(row1), log_threshold(threshold), suffix(columns.size() + 1, 0),
          base(-log_choose(static_cast<double>(total), static_cast<double>(row1))), budget(limit) {
        for (std::size_t j = columns.size(); j-- > 0;) {
            suffix[j] = suffix[j + 1] + columns[j];
        }
    }

    void run(std::size_t j, long remaining, double lp) {
        if (exhausted) {
            return;
        }
        if (++visited > budget) {
            exhausted = true;
            return;
        }
        if (j + 1 == col.size()) {
            const double total = lp + log_choose(static_cast<double>(col[j]), static_cast<double>(remaining));
            if (total <= log_threshold) {
                p += std::exp(total);
            }
            return;
        }
        const long lo = std::max(0L, remaining - suffix[j + 1]);
        const long hi = std::min(col[j], remaining);
        for (long a = lo; a <= hi; ++a) {
            run(j + 1, remaining - a, lp + log_choose(static_cast<double>(col[j]), static_cast<double>(a)));
        }
    }
};

/// Draws one hypergeometric variate: successes among `draws` taken from `total` with `good` successes.
inline long hypergeometric(Rng& rng, long total, long good, long draws) {
    long successes = 0;
    for (long k = 0; k < draws; ++k) {
        if (rng.below(static_cast<std::uint64_t>(total - k)) < static_cast<std::uint64_t>(good - successes)) {
            ++successes;
        }
    }
    return successes;
}

} // namespace detail

inline constexpr std::size_t exact_enumeration_budget = 2'000'000;
inline constexpr int monte_carlo_draws = 20'000;

/**
 * Independence test on a 2 x c table of counts. Empty columns are dropped. An exact
 * (Freeman-Halton) p-value is used when any expected count is below 5, falling back to
 * a fixed-seed Monte Carlo estimate when full enumeration is too large; otherwise the
 * chi-square approximation. The effect size is Cramér's V.
 */
inline TestOutcome contingency_test(std::vector<long> row_a, std::vector<long> row_b) {
    if (row_a.size() != row_b.size()) {
        fail(ErrorCode::invalid_argument, "contingency rows differ in length");
    }
    // Canonical row order keeps the result bit-identical when the groups are swapped.
    if (row_b < row_a) {
        std::swap(row_a, row_b);
    }
    std::vector<long> a, col;
    for (std::size_t j = 0; j < row_a.size(); ++j) {
        if (row_a[j] + row_b[j] > 0) {
            a.push_back(row_a[j]);
            col.push_back(row_a[j] + row_b[j]);
        }
    }
    TestOutcome out;
    const long n1 = std::accumulate(a.begin(), a.end(), 0L);
    const long n = std::accumulate(col.begin(), col.end(), 0L);
    const long n2 = n - n1;
    if (col.size() < 2 || n1 == 0 || n2 == 0) {
        return out;
    }
    double chi2 = 0.0;
    bool sparse = false;
    for (std::size_t j = 0; j < col.size(); ++j) {
        const double e1 = static_cast<double>(n1) * static_cast<double>(col[j]) / static_cast<double>(n);
        const double e2 = static_cast<double>(n2) * static_cast<double>(col[j]) / static_cast<double>(n);
        const double o1 = static_cast<double>(a[j]);
        const double o2 = static_cast<double>(col[j] - a[j]);
        chi2 += (o1 - e1) * (o1 - e1) / e1 + (o2 - e2) * (o2 - e2) / e2;
        sparse = sparse || e1 < 5.0 || e2 < 5.0;
    }
    out.statistic = chi2;
    out.effect_size = std::sqrt(chi2 / static_cast<double>(n));
    if (!sparse) {
        out.p_value = chi_square_sf(chi2, static_cast<double>(col.size() - 1));
        return out;
    }
    out.exact = true;
    const double observed = detail::table_log_prob(a, col, n, n1);
    const double threshold = observed + 1e-7;
    detail::ExactEnumerator enumerator(col, n, n1, threshold, exact_enumeration_budget);
    enumerator.run(0, n1, enumerator.base);
    if (!enumerator.exhausted) {
        out.p_value = std::min(1.0, enumerator.p);
        return out;
    }
    Rng rng(0x5EED5EEDULL ^ static_cast<std::uint64_t>(n) ^ (static_cast<std::uint64_t>(n1) << 32));
    int hits = 0;
    std::vector<long> sim(col.size());
    for (int draw = 0; draw < monte_carlo_draws; ++draw) {
        long remaining_total = n;
        long remaining_row = n1;
        for (std::size_t j = 0; j + 1 < col.size(); ++j) {
            sim[j] = detail::hypergeometric(rng, remaining_total, remaining_row, col[j]);
            remaining_total -= col[j];
            remaining_row -= sim[j];
        }
        sim.back() = remaining_row;
        if (detail::table_log_prob(sim, col, n, n1) <= threshold) {
            ++hits;
        }
    }
    out.p_value = static_cast<double>(hits + 1) / static_cast<double>(monte_carlo_draws + 1);
    return out;
}

/// Midranks of the pooled sample (x followed by y), 1-based.
inline std::vector<double> midranks(const std::vector<double>& pooled) {
    std::vector<std::size_t> order(pooled.size());
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
    std::vector<double> ranks(pooled.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && pooled[order[j + 1]] == pooled[order[i]]) {
            ++j;
        }
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    return ranks;
}

inline constexpr std::size_t exact_rank_sum_limit = 50;

/**
 * Two-sided Wilcoxon rank-sum (Mann-Whitney) test. The statistic is U for x (ties count
 * one half); the effect size is Cliff's delta P(x > y) - P(x < y). Exact null distribution
 * for tie-free samples with n_x + n_y <= 50, otherwise the tie-corrected normal
 * approximation with continuity correction.
 */
inline TestOutcome rank_sum_test(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t nx = x.size();
    const std::size_t ny = y.size();
    if (nx == 0 || ny == 0) {
        fail(ErrorCode::invalid_argument, "rank-sum test needs two non-empty samples");
    }
    std::vector<double> pooled(x);
    pooled.insert(pooled.end(), y.begin(), y.end());
    const auto ranks = midranks(pooled);
    double rx = 0.0;
    for (std::size_t i = 0; i < nx; ++i) {
        rx += ranks[i];
    }
    const double dnx = static_cast<double>(nx);
    const double dny = static_cast<double>(ny);
    const double u = rx - dnx * (dnx + 1.0) / 2.0;
    const double nxy = dnx * dny;
    TestOutcome out;
    out.statistic = u;
    out.effect_size = (2.0 * u - nxy) / nxy;

    // Tie structure.
    std::vector<double> sorted(pooled);
    std::sort(sorted.begin(), sorted.end());
    double tie_term = 0.0;
    bool ties = false;
    for (std::size_t i = 0; i < sorted.size();) {
        std::size_t j = i;
        while (j + 1 < sorted.size() && sorted[j + 1] == sorted[i]) {
            ++j;
        }
        const double t = static_cast<double>(j - i + 1);
        if (t > 1.0) {
            ties = true;
            tie_term += t * t * t - t;
        }
        i = j + 1;
    }
    const double n = dnx + dny;
    if (!ties && nx + ny <= exact_rank_sum_limit) {
        // counts[k] = number of arrangements with U = k, built by the standard recurrence.
        const std::size_t max_u = nx * ny;
        // f(i, j, u): arrangements of i x-values and j y-values with statistic u.
        std::vector<std::vector<std::vector<double>>> f(nx + 1, std::vector<std::vector<double>>(ny + 1));
        for (std::size_t i = 0; i <= nx; ++i) {
            for (std::size_t j = 0; j <= ny; ++j) {
                f[i][j].assign(i * j + 1, 0.0);
                if (i == 0 || j == 0) {
                    f[i][j][0] = 1.0;
                    continue;
                }
                // Largest element is an x (contributes j to U) or a y.
                for (std::size_t k = 0; k < f[i - 1][j].size(); ++k) {
                    f[i][j][k + j] += f[i - 1][j][k];
                }
                for (std::size_t k = 0; k < f[i][j - 1].size(); ++k) {
                    f[i][j][k] += f[i][j - 1][k];
                }
            }
        }
        const auto& counts = f[nx][ny];
        const double total = std::accumulate(counts.begin(), counts.end(), 0.0);
        const auto lower = static_cast<std::size_t>(std::llround(std::min(u, nxy - u)));
        double tail = 0.0;
        for (std::size_t k = 0; k <= lower && k <= max_u; ++k) {
            tail += counts[k];
        }
        out.p_value = std::min(1.0, 2.0 * tail / total);
        out.exact = true;
        return out;
    }
    const double mean = nxy / 2.0;
    const double var = nxy / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if (var <= 0.0) {
        out.p_value = 1.0;
        return out;
    }
    const double dev = std::max(0.0, std::fabs(u - mean) - 0.5);
    out.p_value = std::min(1.0, 2.0 * normal_sf(dev / std::sqrt(var)));
    return out;
}

/// Benjamini-Hochberg adjusted p-values (step-up, monotone), same order as the input.
inline std::vector<double> benjamini_hochberg(const std::vector<double>& p) {
    const std::size_t m = p.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), 0U);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
    std::vector<double> adjusted(m, 1.0);
    double running = 1.0;
    for (std::size_t r = m; r-- > 0;) {
        const double candidate = p[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
        running = std::min(running, candidate);
        adjusted[order[r]] = std::min(1.0, running);
    }
    return adjusted;
}

/// 0 to 3 stars by |effect size|: <0.1, >=0.1, >=0.3, >=0.5.
inline int effect_class(double effect_size) {
    const double e = std::fabs(effect_size);
    if (e >= 0.5) return 3;
    if (e >= 0.3) return 2;
    if (e >= 0.1) return 1;
    return 0;
}

} // namespace covtune::stats
