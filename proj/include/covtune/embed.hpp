#pragma once

#include "buckets.hpp"
#include "core.hpp"
#include "parallel.hpp"
#include "random.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stop_token>
#include <string>
#include <vector>

/**
 * @file embed.hpp
 *
 * @brief 2D layout of trials by coverage-vector similarity, neighborhood-preservation
 * scoring, and value-weighted density fields over the layout.
 *
 * Two neighbor-embedding methods share a classical-MDS initialization:
 *
 * - `neighbor-embedding` (default): perplexity-calibrated affinities on each trial's
 *   nearest neighbors, Student-t similarities in 2D and exact all-pairs repulsion.
 * - `fuzzy-graph`: a symmetrized fuzzy k-NN graph with attractive edge forces and
 *   negatively sampled repulsion; cheaper per epoch, weaker on diffuse clusters.
 */

namespace covtune {

/// Dense symmetric matrix, row-major.
struct DistanceMatrix {
    std::size_t n = 0;
    std::vector<double> data;

    DistanceMatrix() = default;
    explicit DistanceMatrix(std::size_t size) : n(size), data(size * size, 0.0) {}

    double operator()(std::size_t i, std::size_t j) const { return data[i * n + j]; }
    double& operator()(std::size_t i, std::size_t j) { return data[i * n + j]; }
};

enum class DistanceKind { jaccard, hamming };

inline std::optional<DistanceKind> parse_distance(std::string_view name) {
    if (name == "jaccard") return DistanceKind::jaccard;
    if (name == "hamming") return DistanceKind::hamming;
    return std::nullopt;
}

inline double coverage_distance(const CoverageVector& a, const CoverageVector& b, DistanceKind kind) {
    if (kind == DistanceKind::jaccard) {
        return jaccard_distance(a, b);
    }
    const auto counts = jaccard_counts(a, b);
    if (a.size() == 0) {
        return 0.0;
    }
    return static_cast<double>(counts.union_size - counts.intersection) / static_cast<double>(a.size());
}

inline DistanceMatrix distance_matrix(const Experiment& exp, DistanceKind kind = DistanceKind::jaccard,
                                      unsigned jobs = 1) {
    const std::size_t n = exp.n_trials();
    DistanceMatrix m(n);
    parallel_for(n, jobs, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) {
                const double d = coverage_distance(exp.trials[i].coverage, exp.trials[j].coverage, kind);
                m(i, j) = d;
                m(j, i) = d;
            }
        }
    });
    return m;
}

struct EmbeddingConfig {
    std::string method = "neighbor-embedding";
    std::string distance = "jaccard";
    int n_neighbors = 15;
    std::uint64_t seed = 42;
    int iterations = 1000;
    double perplexity = 30.0; ///< neighbor-embedding; clamped to (N - 1) / 3
    double min_dist = 0.1;    ///< fuzzy-graph
    int negative_samples = 5; ///< fuzzy-graph
};

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Point2&) const = default;
};

struct EmbeddingResult {
    std::vector<Point2> coords; ///< trial order
    EmbeddingConfig config_used;
    double quality = 0.0; ///< trustworthiness at k = n_neighbors
};

namespace detail {

/// k nearest neighbors of every row, excluding self, ordered by (distance, index).
inline std::vector<std::vector<std::size_t>> nearest_neighbors(const DistanceMatrix& d, std::size_t k) {
    std::vector<std::vector<std::size_t>> out(d.n);
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < d.n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < d.n; ++j) {
            if (j != i) {
                order.push_back(j);
            }
        }
        const auto less = [&](std::size_t a, std::size_t b) { return d(i, a) < d(i, b) || (d(i, a) == d(i, b) && a < b); };
        std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), less);
        out[i].assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
    }
    return out;
}

/// Curve parameters (a, b) of 1 / (1 + a d^(2b)) fitted to the min_dist offset exponential.
inline std::pair<double, double> fit_curve(double min_dist, double spread = 1.0) {
    std::vector<double> xs, ys;
    for (int i = 1; i <= 300; ++i) {
        const double x = 3.0 * spread * static_cast<double>(i) / 300.0;
        xs.push_back(x);
        ys.push_back(x < min_dist ? 1.0 : std::exp(-(x - min_dist) / spread));
    }
    // Gauss-Newton on (log a, b).
    double la = std::log(1.6);
    double b = 0.9;
    for (int iter = 0; iter < 200; ++iter) {
        double jtj[2][2] = {{0, 0}, {0, 0}};
        double jtr[2] = {0, 0};
        const double a = std::exp(la);
        for (std::size_t k = 0; k < xs.size(); ++k) {
            const double x2b = std::pow(xs[k], 2.0 * b);
            const double denom = 1.0 + a * x2b;
            const double f = 1.0 / denom;
            const double r = f - ys[k];
            const double dfda = -x2b / (denom * denom) * a;
            const double dfdb = -a * x2b * 2.0 * std::log(xs[k]) / (denom * denom);
            jtj[0][0] += dfda * dfda;
            jtj[0][1] += dfda * dfdb;
            jtj[1][1] += dfdb * dfdb;
            jtr[0] += dfda * r;
            jtr[1] += dfdb * r;
        }
        jtj[1][0] = jtj[0][1];
        const double det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
        if (std::fabs(det) < 1e-300) {
            break;
        }
        const double step_a = (jtj[1][1] * jtr[0] - jtj[0][1] * jtr[1]) / det;
        const double step_b = (jtj[0][0] * jtr[1] - jtj[1][0] * jtr[0]) / det;
        la -= step_a;
        b -= step_b;
        if (std::fabs(step_a) < 1e-12 && std::fabs(step_b) < 1e-12) {
            break;
        }
    }
    return {std::exp(la), b};
}

/// Classical MDS by power iteration on the double-centred squared distances.
inline std::vector<Point2> mds_init(const DistanceMatrix& d, Rng& rng) {
    const std::size_t n = d.n;
    std::vector<double> centred(n * n);
    std::vector<double> row_mean(n, 0.0);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double sq = d(i, j) * d(i, j);
            centred[i * n + j] = sq;
            row_mean[i] += sq;
        }
        total += row_mean[i];
        row_mean[i] /= static_cast<double>(n);
    }
    total /= static_cast<double>(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            centred[i * n + j] = -0.5 * (centred[i * n + j] - row_mean[i] - row_mean[j] + total);
        }
    }
    std::vector<std::vector<double>> vecs;
    std::vector<double> vals;
    for (int component = 0; component < 2; ++component) {
        std::vector<double> v(n);
        for (auto& x : v) {
            x = rng.uniform(-1.0, 1.0);
        }
        double lambda = 0.0;
        for (int iter = 0; iter < 200; ++iter) {
            for (std::size_t c = 0; c < vecs.size(); ++c) {
                const double dot = std::inner_product(v.begin(), v.end(), vecs[c].begin(), 0.0);
                for (std::size_t i = 0; i < n; ++i) {
                    v[i] -= dot * vecs[c][i];
                }
            }
            std::vector<double> w(n, 0.0);
            for (std::size_t i = 0; i < n; ++i) {
                const double* row = &centred[i * n];
                double acc = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    acc += row[j] * v[j];
                }
                w[i] = acc;
            }
            const double norm = std::sqrt(std::inner_product(w.begin(), w.end(), w.begin(), 0.0));
            if (norm < 1e-300) {
                break;
            }
            lambda = norm;
            for (std::size_t i = 0; i < n; ++i) {
                v[i] = w[i] / norm;
            }
        }
        vecs.push_back(v);
        vals.push_back(lambda);
    }
    std::vector<Point2> out(n);
    double extent = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = Point2{vecs[0][i] * std::sqrt(vals[0]), vecs[1][i] * std::sqrt(vals[1])};
        extent = std::max({extent, std::fabs(out[i].x), std::fabs(out[i].y)});
    }
    // Scale to a [-10, 10] box with a little jitter so coincident points can separate.
    const double scale = extent > 0.0 ? 10.0 / extent : 1.0;
    for (auto& p : out) {
        p.x = p.x * scale + rng.uniform(-1e-4, 1e-4);
        p.y = p.y * scale + rng.uniform(-1e-4, 1e-4);
    }
    return out;
}

struct Edge {
    std::size_t head = 0;
    std::size_t tail = 0;
    double weight = 0.0;
};

/// Fuzzy k-NN membership strengths, symmetrized by probabilistic union.
inline std::vector<Edge> fuzzy_graph(const DistanceMatrix& d, const std::vector<std::vector<std::size_t>>& knn) {
    const std::size_t n = d.n;
    const std::size_t k = knn.empty() ? 0 : knn[0].size();
    const double target = std::log2(static_cast<double>(k));
    std::map<std::pair<std::size_t, std::size_t>, double> directed;
    for (std::size_t i = 0; i < n; ++i) {
        double rho = 0.0;
        for (auto j : knn[i]) {
            if (d(i, j) > 0.0) {
                rho = d(i, j);
                break;
            }
        }
        double lo = 0.0;
        double hi = std::numeric_limits<double>::infinity();
        double sigma = 1.0;
        for (int iter = 0; iter < 64; ++iter) {
            double psum = 0.0;
            for (auto j : knn[i]) {
                const double r = d(i, j) - rho;
                psum += r > 0.0 ? std::exp(-r / sigma) : 1.0;
            }
            if (std::fabs(psum - target) < 1e-5) {
                break;
            }
            if (psum > target) {
                hi = sigma;
                sigma = 0.5 * (lo + hi);
            } else {
                lo = sigma;
                sigma = std::isinf(hi) ? sigma * 2.0 : 0.5 * (lo + hi);
            }
        }
        sigma = std::max(sigma, 1e-3 * rho + 1e-12);
        for (auto j : knn[i]) {
            const double r = d(i, j) - rho;
            directed[{i, j}] = r > 0.0 ? std::exp(-r / sigma) : 1.0;
        }
    }
    std::vector<Edge> edges;
    for (const auto& [key, w] : directed) {
        const auto [i, j] = key;
        const auto back = directed.find({j, i});
        const double wt = back == directed.end() ? 0.0 : back->second;
        if (back != directed.end() && j < i) {
            continue; // emitted from the other direction
        }
        edges.push_back(Edge{i, j, w + wt - w * wt});
    }
    return edges;
}

inline double clip(double v) { return std::max(-4.0, std::min(4.0, v)); }

} // namespace detail

/**
 * Trustworthiness of a 2D layout at neighborhood size k, in [0, 1]. Original ranks break
 * distance ties by trial order.
 */
inline double trustworthiness(const DistanceMatrix& original, const std::vector<Point2>& coords, std::size_t k) {
    const std::size_t n = original.n;
    if (k == 0 || 2 * n < 3 * k + 2) {
        fail(ErrorCode::invalid_argument, "trustworthiness needs n > (3k + 1) / 2");
    }
    DistanceMatrix embedded(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            embedded(i, j) = std::hypot(coords[i].x - coords[j].x, coords[i].y - coords[j].y);
        }
    }
    const auto low_nn = detail::nearest_neighbors(embedded, k);
    double penalty = 0.0;
    std::vector<std::size_t> order;
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        order.clear();
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                order.push_back(j);
            }
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return original(i, a) < original(i, b) || (original(i, a) == original(i, b) && a < b);
        });
        for (std::size_t r = 0; r < order.size(); ++r) {
            rank[order[r]] = r + 1;
        }
        for (auto j : low_nn[i]) {
            if (rank[j] > k) {
                penalty += static_cast<double>(rank[j] - k);
            }
        }
    }
    const double nn = static_cast<double>(n);
    const double kk = static_cast<double>(k);
    return 1.0 - 2.0 / (nn * kk * (2.0 * nn - 3.0 * kk - 1.0)) * penalty;
}

/// Mean silhouette of 2D points under the given labels (Euclidean).
inline double silhouette(const std::vector<Point2>& coords, const std::vector<int>& labels) {
    const std::size_t n = coords.size();
    std::map<int, std::size_t> sizes;
    for (int l : labels) {
        ++sizes[l];
    }
    if (sizes.size() < 2) {
        fail(ErrorCode::invalid_argument, "silhouette needs at least two clusters");
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        std::map<int, double> sum;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) {
                sum[labels[j]] += std::hypot(coords[i].x - coords[j].x, coords[i].y - coords[j].y);
            }
        }
        const std::size_t own = sizes[labels[i]];
        if (own <= 1) {
            continue;
        }
        const double a = sum[labels[i]] / static_cast<double>(own - 1);
        double b = std::numeric_limits<double>::infinity();
        for (const auto& [label, s] : sum) {
            if (label != labels[i]) {
                b = std::min(b, s / static_cast<double>(sizes[label]));
            }
        }
        const double denom = std::max(a, b);
        total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    return total / static_cast<double>(n);
}

inline void validate(const EmbeddingConfig& cfg, std::size_t n_trials) {
    if (cfg.method != "neighbor-embedding" && cfg.method != "fuzzy-graph") {
        fail(ErrorCode::invalid_argument, "unknown embedding method '" + cfg.method + "'");
    }
    if (!parse_distance(cfg.distance)) {
        fail(ErrorCode::invalid_argument, "unknown distance '" + cfg.distance + "'");
    }
    if (cfg.n_neighbors < 2) {
        fail(ErrorCode::invalid_argument, "n_neighbors must be at least 2");
    }
    if (n_trials < static_cast<std::size_t>(cfg.n_neighbors) + 1) {
        fail(ErrorCode::too_few_trials, "embedding needs at least n_neighbors + 1 = " +
                                            std::to_string(cfg.n_neighbors + 1) + " trials, have " +
                                            std::to_string(n_trials));
    }
    if (cfg.iterations < 0 || cfg.negative_samples < 0 || !(cfg.min_dist >= 0.0) || !(cfg.perplexity > 0.0)) {
        fail(ErrorCode::invalid_argument, "invalid embedding optimizer settings");
    }
}

namespace detail {

using SparseRow = std::vector<std::pair<std::size_t, double>>;

/// Symmetrized joint affinities P_ij from Gaussian conditionals calibrated to the perplexity.
inline std::vector<SparseRow> joint_affinities(const DistanceMatrix& d, double perplexity) {
    const std::size_t n = d.n;
    const auto k = std::min<std::size_t>(n - 1, static_cast<std::size_t>(std::max(1.0, std::floor(3.0 * perplexity))));
    const auto knn = nearest_neighbors(d, k);
    const double target = std::log(perplexity);
    std::vector<std::map<std::size_t, double>> joint(n);
    std::vector<double> p(k);
    for (std::size_t i = 0; i < n; ++i) {
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int iter = 0; iter < 100; ++iter) {
            double sum = 0.0, weighted = 0.0;
            for (std::size_t m = 0; m < k; ++m) {
                const double sq = d(i, knn[i][m]) * d(i, knn[i][m]);
                p[m] = std::exp(-beta * sq);
                sum += p[m];
                weighted += sq * p[m];
            }
            if (sum <= 0.0) {
                hi = beta;
                beta = 0.5 * (lo + hi);
                continue;
            }
            const double entropy = std::log(sum) + beta * weighted / sum;
            if (std::fabs(entropy - target) < 1e-5) {
                break;
            }
            if (entropy > target) {
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (lo + hi);
            } else {
                hi = beta;
                beta = 0.5 * (lo + hi);
            }
        }
        double sum = 0.0;
        for (std::size_t m = 0; m < k; ++m) {
            const double sq = d(i, knn[i][m]) * d(i, knn[i][m]);
            p[m] = std::exp(-beta * sq);
            sum += p[m];
        }
        for (std::size_t m = 0; m < k; ++m) {
            const double v = sum > 0.0 ? p[m] / sum : 1.0 / static_cast<double>(k);
            const std::size_t j = knn[i][m];
            joint[i][j] += v / (2.0 * static_cast<double>(n));
            joint[j][i] += v / (2.0 * static_cast<double>(n));
        }
    }
    std::vector<SparseRow> rows(n);
    for (std::size_t i = 0; i < n; ++i) {
        rows[i].assign(joint[i].begin(), joint[i].end());
    }
    return rows;
}

/**
 * Gradient descent with momentum and per-coordinate gains; early exaggeration of the
 * affinities for the first quarter of the budget (at most 250 epochs). Each row's forces
 * are summed in index order, so the layout does not depend on `jobs`.
 */
inline std::vector<Point2> student_t_layout(const DistanceMatrix& d, const EmbeddingConfig& cfg, unsigned jobs,
                                            std::stop_token stop) {
    const std::size_t n = d.n;
    const double perplexity = std::max(1.0, std::min(cfg.perplexity, static_cast<double>(n - 1) / 3.0));
    const auto rows = joint_affinities(d, perplexity);

    Rng rng(cfg.seed);
    auto y = mds_init(d, rng);
    double mean = 0.0, var = 0.0;
    for (const auto& p : y) mean += p.x / static_cast<double>(n);
    for (const auto& p : y) var += (p.x - mean) * (p.x - mean) / static_cast<double>(n);
    const double scale = var > 0.0 ? 1e-4 / std::sqrt(var) : 1.0;
    for (auto& p : y) {
        p.x *= scale;
        p.y *= scale;
    }

    constexpr double exaggeration = 12.0;
    const int exaggerated = std::min(250, cfg.iterations / 4);
    // The usual floor of 50 oscillates on tiny inputs; below 200 points it shrinks to n / 4.
    const double rate = std::max(static_cast<double>(n) / exaggeration / 4.0, std::min(50.0, static_cast<double>(n) / 4.0));
    std::vector<Point2> update(n), gain(n, Point2{1.0, 1.0}), attract(n), repel(n);
    std::vector<double> row_z(n);
    for (int epoch = 0; epoch < cfg.iterations; ++epoch) {
        if (stop.stop_requested()) {
            fail(ErrorCode::cancelled, "embedding cancelled");
        }
        const double exag = epoch < exaggerated ? exaggeration : 1.0;
        const double momentum = epoch < exaggerated ? 0.5 : 0.8;
        parallel_for(n, jobs, [&](std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) {
                double z = 0.0, rx = 0.0, ry = 0.0;
                for (std::size_t j = 0; j < n; ++j) {
                    if (j == i) continue;
                    const double dx = y[i].x - y[j].x, dy = y[i].y - y[j].y;
                    const double w = 1.0 / (1.0 + dx * dx + dy * dy);
                    z += w;
                    rx += w * w * dx;
                    ry += w * w * dy;
                }
                double ax = 0.0, ay = 0.0;
                for (const auto& [j, pij] : rows[i]) {
                    const double dx = y[i].x - y[j].x, dy = y[i].y - y[j].y;
                    const double w = 1.0 / (1.0 + dx * dx + dy * dy);
                    ax += pij * w * dx;
                    ay += pij * w * dy;
                }
                row_z[i] = z;
                repel[i] = {rx, ry};
                attract[i] = {ax, ay};
            }
        });
        double z = 0.0;
        for (double v : row_z) z += v;
        for (std::size_t i = 0; i < n; ++i) {
            const double gx = 4.0 * (exag * attract[i].x - repel[i].x / z);
            const double gy = 4.0 * (exag * attract[i].y - repel[i].y / z);
            auto step = [&](double g, double& u, double& gn) {
                gn = (g > 0.0) != (u > 0.0) ? gn + 0.2 : std::max(0.01, gn * 0.8);
                u = momentum * u - rate * gn * g;
            };
            step(gx, update[i].x, gain[i].x);
            step(gy, update[i].y, gain[i].y);
            y[i].x += update[i].x;
            y[i].y += update[i].y;
        }
    }
    return y;
}

inline std::vector<Point2> fuzzy_graph_layout(const DistanceMatrix& d, const EmbeddingConfig& cfg,
                                              std::stop_token stop) {
    const std::size_t n = d.n;
    const auto k = static_cast<std::size_t>(cfg.n_neighbors);
    const auto knn = nearest_neighbors(d, k);
    const auto edges = fuzzy_graph(d, knn);
    const auto [a, b] = fit_curve(cfg.min_dist);

    Rng rng(cfg.seed);
    auto y = mds_init(d, rng);

    double max_w = 0.0;
    for (const auto& e : edges) {
        max_w = std::max(max_w, e.weight);
    }
    // Edge e fires every epochs_per_sample[e] epochs.
    std::vector<double> epochs_per_sample(edges.size());
    std::vector<double> next_sample(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        epochs_per_sample[e] = edges[e].weight > 0.0 ? max_w / edges[e].weight : std::numeric_limits<double>::infinity();
        next_sample[e] = epochs_per_sample[e];
    }
    const double negative_rate = static_cast<double>(cfg.negative_samples);
    std::vector<double> epochs_per_negative(edges.size());
    std::vector<double> next_negative(edges.size());
    for (std::size_t e = 0; e < edges.size(); ++e) {
        epochs_per_negative[e] = negative_rate > 0.0 ? epochs_per_sample[e] / negative_rate : 0.0;
        next_negative[e] = epochs_per_negative[e];
    }

    const int epochs = cfg.iterations;
    for (int epoch = 1; epoch <= epochs; ++epoch) {
        if (stop.stop_requested()) {
            fail(ErrorCode::cancelled, "embedding cancelled");
        }
        const double alpha = 1.0 - static_cast<double>(epoch - 1) / static_cast<double>(epochs);
        const double now = static_cast<double>(epoch);
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (next_sample[e] > now) {
                continue;
            }
            const std::size_t i = edges[e].head;
            const std::size_t j = edges[e].tail;
            double dx = y[i].x - y[j].x;
            double dy = y[i].y - y[j].y;
            double dist2 = dx * dx + dy * dy;
            if (dist2 > 0.0) {
                const double coef = -2.0 * a * b * std::pow(dist2, b - 1.0) / (1.0 + a * std::pow(dist2, b));
                const double gx = detail::clip(coef * dx) * alpha;
                const double gy = detail::clip(coef * dy) * alpha;
                y[i].x += gx;
                y[i].y += gy;
                y[j].x -= gx;
                y[j].y -= gy;
            }
            next_sample[e] += epochs_per_sample[e];

            if (negative_rate > 0.0) {
                const auto n_neg = static_cast<int>((now - next_negative[e]) / epochs_per_negative[e]);
                for (int s = 0; s < n_neg; ++s) {
                    const auto m = static_cast<std::size_t>(rng.below(n));
                    if (m == i) {
                        continue;
                    }
                    dx = y[i].x - y[m].x;
                    dy = y[i].y - y[m].y;
                    dist2 = dx * dx + dy * dy;
                    double gx = 0.0;
                    double gy = 0.0;
                    if (dist2 > 0.0) {
                        const double coef = 2.0 * b / ((0.001 + dist2) * (1.0 + a * std::pow(dist2, b)));
                        gx = detail::clip(coef * dx);
                        gy = detail::clip(coef * dy);
                    } else {
                        gx = 4.0;
                        gy = 4.0;
                    }
                    y[i].x += gx * alpha;
                    y[i].y += gy * alpha;
                }
                next_negative[e] += static_cast<double>(n_neg) * epochs_per_negative[e];
            }
        }
    }

    return y;
}

} // namespace detail

inline EmbeddingResult embed_distances(const DistanceMatrix& d, const EmbeddingConfig& cfg, std::stop_token stop = {},
                                       unsigned jobs = 1) {
    validate(cfg, d.n);
    EmbeddingResult result;
    result.coords = cfg.method == "fuzzy-graph" ? detail::fuzzy_graph_layout(d, cfg, stop)
                                                : detail::student_t_layout(d, cfg, jobs, stop);
    result.config_used = cfg;
    result.quality = trustworthiness(d, result.coords, static_cast<std::size_t>(cfg.n_neighbors));
    return result;
}

inline EmbeddingResult embed(const Experiment& exp, const EmbeddingConfig& cfg = {}, unsigned jobs = 1,
                             std::stop_token stop = {}) {
    validate(cfg, exp.n_trials());
    const auto d = distance_matrix(exp, *parse_distance(cfg.distance), jobs);
    return embed_distances(d, cfg, stop, jobs);
}

struct DensityField {
    int grid = 0;
    double x0 = 0.0; ///< left edge of the first cell column
    double y0 = 0.0; ///< bottom edge of the first cell row
    double dx = 0.0;
    double dy = 0.0;
    double bandwidth_x = 0.0;
    double bandwidth_y = 0.0;
    std::vector<double> cells; ///< row-major: cells[row * grid + col], row along y

    double at(int row, int col) const { return cells[static_cast<std::size_t>(row * grid + col)]; }

    double total() const { return std::accumulate(cells.begin(), cells.end(), 0.0); }
};

/// Padding of the grid box around the points, in bandwidths.
inline constexpr double density_padding = 6.0;

/**
 * Value-weighted Gaussian kernel density integrated over each grid cell, so the cells sum
 * to the total weight up to the kernel tails outside the padded box. Bandwidths follow
 * Scott's rule unless `bandwidth` is given.
 */
inline DensityField density_field(const EmbeddingResult& result, const std::vector<double>& values, int grid,
                                  std::optional<double> bandwidth = std::nullopt) {
    const auto& pts = result.coords;
    if (grid < 8) {
        fail(ErrorCode::invalid_argument, "density grid must be at least 8");
    }
    if (values.size() != pts.size()) {
        fail(ErrorCode::invalid_argument, "one value per trial is required");
    }
    if (pts.empty()) {
        fail(ErrorCode::invalid_argument, "no points");
    }
    const std::size_t n = pts.size();
    double hx = 0.0;
    double hy = 0.0;
    if (bandwidth) {
        if (!(*bandwidth > 0.0)) {
            fail(ErrorCode::invalid_argument, "bandwidth must be positive");
        }
        hx = hy = *bandwidth;
    } else {
        double mx = 0.0, my = 0.0;
        for (const auto& p : pts) {
            mx += p.x;
            my += p.y;
        }
        mx /= static_cast<double>(n);
        my /= static_cast<double>(n);
        double vx = 0.0, vy = 0.0;
        for (const auto& p : pts) {
            vx += (p.x - mx) * (p.x - mx);
            vy += (p.y - my) * (p.y - my);
        }
        const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
        const double factor = std::pow(static_cast<double>(n), -1.0 / 6.0);
        hx = std::sqrt(vx / denom) * factor;
        hy = std::sqrt(vy / denom) * factor;
        if (hx <= 0.0 && hy <= 0.0) {
            fail(ErrorCode::degenerate_bandwidth,
                 "all points coincide so Scott's rule gives a zero bandwidth; pass an explicit bandwidth");
        }
        if (hx <= 0.0) hx = hy;
        if (hy <= 0.0) hy = hx;
    }
    double xmin = pts[0].x, xmax = pts[0].x, ymin = pts[0].y, ymax = pts[0].y;
    for (const auto& p : pts) {
        xmin = std::min(xmin, p.x);
        xmax = std::max(xmax, p.x);
        ymin = std::min(ymin, p.y);
        ymax = std::max(ymax, p.y);
    }
    DensityField field;
    field.grid = grid;
    field.bandwidth_x = hx;
    field.bandwidth_y = hy;
    field.x0 = xmin - density_padding * hx;
    field.y0 = ymin - density_padding * hy;
    field.dx = (xmax - xmin + 2.0 * density_padding * hx) / grid;
    field.dy = (ymax - ymin + 2.0 * density_padding * hy) / grid;
    field.cells.assign(static_cast<std::size_t>(grid * grid), 0.0);
    const auto cdf = [](double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); };
    std::vector<double> px(static_cast<std::size_t>(grid)), py(static_cast<std::size_t>(grid));
    for (std::size_t k = 0; k < n; ++k) {
        if (values[k] == 0.0) {
            continue;
        }
        for (int c = 0; c < grid; ++c) {
            const double lo = field.x0 + c * field.dx;
            px[static_cast<std::size_t>(c)] = cdf((lo + field.dx - pts[k].x) / hx) - cdf((lo - pts[k].x) / hx);
            const double ylo = field.y0 + c * field.dy;
            py[static_cast<std::size_t>(c)] = cdf((ylo + field.dy - pts[k].y) / hy) - cdf((ylo - pts[k].y) / hy);
        }
        for (int r = 0; r < grid; ++r) {
            const double wy = values[k] * py[static_cast<std::size_t>(r)];
            for (int c = 0; c < grid; ++c) {
                field.cells[static_cast<std::size_t>(r * grid + c)] += wy * px[static_cast<std::size_t>(c)];
            }
        }
    }
    return field;
}

/// Per-trial class labels for color-coding by one parameter (shares the effect buckets).
inline std::vector<std::string> color_by_parameter(const Experiment& exp, std::string_view param) {
    const auto scheme = make_bucket_scheme(exp, param);
    std::vector<std::string> out;
    for (auto b : assign_buckets(exp, scheme)) {
        out.push_back(scheme.buckets[b].label);
    }
    return out;
}

inline nlohmann::json to_json(const EmbeddingConfig& cfg) {
    return {{"method", cfg.method},         {"distance", cfg.distance},   {"n_neighbors", cfg.n_neighbors},
            {"seed", cfg.seed},             {"iterations", cfg.iterations}, {"perplexity", cfg.perplexity},
            {"min_dist", cfg.min_dist},     {"negative_samples", cfg.negative_samples}};
}

inline nlohmann::json to_json(const EmbeddingResult& result) {
    nlohmann::json coords = nlohmann::json::object();
    for (std::size_t i = 0; i < result.coords.size(); ++i) {
        coords[std::to_string(i + 1)] = {result.coords[i].x, result.coords[i].y};
    }
    return {{"coords", coords}, {"quality", result.quality}, {"config", to_json(result.config_used)}};
}

inline nlohmann::json to_json(const DensityField& field) {
    return {{"grid", field.grid},         {"x0", field.x0}, {"y0", field.y0},
            {"dx", field.dx},             {"dy", field.dy}, {"bandwidth", {field.bandwidth_x, field.bandwidth_y}},
            {"cells", field.cells}};
}

} // namespace covtune
