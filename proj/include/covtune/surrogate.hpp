#pragma once

#include "core.hpp"
#include "random.hpp"

#include <functional>
#include <numeric>
#include <stop_token>
#include <string>
#include <vector>

/**
 * @file surrogate.hpp
 *
 * @brief Gradient-boosted regression trees from configurations to coverage values, and
 * exact path-dependent Shapley attribution over parameters.
 *
 * Shapley players are parameters, not encoded features: a one-hot group and its unset
 * indicator form a single player, so attributions are exact per parameter.
 */

namespace covtune {

enum class FeatureRole { value, unset_indicator, one_hot };

struct Feature {
    std::size_t param = 0;
    FeatureRole role = FeatureRole::value;
    std::string symbol; ///< one_hot only
};

/**
 * Maps a configuration onto a dense feature row.
 *
 * - binary: 0/1 value (unset imputed with the default, else 0) plus an unset indicator
 * - nominal: one-hot over the domain plus an unset indicator
 * - continuous: raw value (unset imputed with the default, else the range midpoint)
 *   plus an unset indicator
 */
class FeatureEncoding {
public:
    FeatureEncoding() = default;

    explicit FeatureEncoding(const ParameterSpace& space) : space_(space) {
        for (std::size_t p = 0; p < space_.params.size(); ++p) {
            const auto& def = space_.params[p];
            if (def.kind == ParamKind::nominal) {
                for (const auto& s : def.symbols) {
                    features_.push_back(Feature{p, FeatureRole::one_hot, s});
                }
            } else {
                features_.push_back(Feature{p, FeatureRole::value, {}});
            }
            features_.push_back(Feature{p, FeatureRole::unset_indicator, {}});
        }
        players_.reserve(features_.size());
        for (const auto& f : features_) {
            players_.push_back(static_cast<int>(f.param));
        }
    }

    std::size_t n_features() const { return features_.size(); }
    std::size_t n_players() const { return space_.params.size(); }
    const ParameterSpace& space() const { return space_; }
    const std::vector<Feature>& features() const { return features_; }
    std::span<const int> feature_players() const { return players_; }

    std::vector<double> encode(const Configuration& config) const {
        for (const auto& [name, _] : config.values) {
            if (!space_.index_of(name)) {
                fail(ErrorCode::unknown_parameter, "configuration names unknown parameter '" + name + "'");
            }
        }
        std::vector<double> row(features_.size(), 0.0);
        for (std::size_t f = 0; f < features_.size(); ++f) {
            const auto& feature = features_[f];
            const auto& def = space_.params[feature.param];
            const ParamValue& value = config.get(def.name);
            const bool unset = is_unset(value);
            switch (feature.role) {
            case FeatureRole::unset_indicator:
                row[f] = unset ? 1.0 : 0.0;
                break;
            case FeatureRole::one_hot:
                if (!unset) {
                    row[f] = std::get<std::string>(value) == feature.symbol ? 1.0 : 0.0;
                }
                break;
            case FeatureRole::value:
                if (def.kind == ParamKind::binary) {
                    const ParamValue& v = unset ? def.default_value : value;
                    row[f] = std::holds_alternative<bool>(v) && std::get<bool>(v) ? 1.0 : 0.0;
                } else {
                    if (!unset) {
                        row[f] = std::get<double>(value);
                    } else if (def.has_default()) {
                        row[f] = std::get<double>(def.default_value);
                    } else {
                        row[f] = 0.5 * (def.range.lo + def.range.hi);
                    }
                }
                break;
            }
        }
        return row;
    }

private:
    ParameterSpace space_;
    std::vector<Feature> features_;
    std::vector<int> players_;
};

/**
 * Binary regression tree stored as a flat node array; node 0 is the root.
 * Rows with `x[feature] < threshold` go left. `cover` is the number of training rows
 * reaching the node and defines the conditional expectations used by the attribution.
 */
struct TreeNode {
    int feature = -1; ///< -1 for leaves
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0; ///< leaf output
    double cover = 0.0;

    bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;

    double predict(std::span<const double> row) const {
        int n = 0;
        while (!nodes[static_cast<std::size_t>(n)].is_leaf()) {
            const auto& node = nodes[static_cast<std::size_t>(n)];
            n = row[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
        }
        return nodes[static_cast<std::size_t>(n)].value;
    }

    /// Cover-weighted mean of the leaves.
    double expected_value() const { return expected_value(0); }

    int depth() const { return depth(0); }

private:
    double expected_value(int n) const {
        const auto& node = nodes[static_cast<std::size_t>(n)];
        if (node.is_leaf()) {
            return node.value;
        }
        const auto& l = nodes[static_cast<std::size_t>(node.left)];
        const auto& r = nodes[static_cast<std::size_t>(node.right)];
        return (l.cover * expected_value(node.left) + r.cover * expected_value(node.right)) / node.cover;
    }

    int depth(int n) const {
        const auto& node = nodes[static_cast<std::size_t>(n)];
        if (node.is_leaf()) {
            return 0;
        }
        return 1 + std::max(depth(node.left), depth(node.right));
    }
};

struct SurrogateHyper {
    int n_trees = 100;
    int max_depth = 4;
    double learning_rate = 0.1;
    double lambda = 1.0;        ///< L2 penalty on leaf values
    double min_child_rows = 1;  ///< minimum training rows on each side of a split
    double min_split_gain = 1e-9;
    double subsample = 1.0;     ///< row fraction per tree; rows drawn with the fit seed
};

struct SurrogateModel {
    FeatureEncoding encoding;
    std::vector<RegressionTree> trees;
    double bias = 0.0;       ///< initial prediction (training mean)
    double base_value = 0.0; ///< mean prediction over the training set
    std::vector<std::string> warnings;

    double predict_row(std::span<const double> row) const {
        double out = bias;
        for (const auto& t : trees) {
            out += t.predict(row);
        }
        return out;
    }

    double predict(const Configuration& config) const { return predict_row(encoding.encode(config)); }

    /// Recomputes `base_value` from the trees' cover-weighted expectations.
    void refresh_base_value() {
        base_value = bias;
        for (const auto& t : trees) {
            base_value += t.expected_value();
        }
    }
};

struct FitControl {
    std::stop_token stop;
    std::function<void(double)> progress; ///< fraction of trees done
};

inline constexpr std::size_t min_training_trials = 30;

namespace detail {

struct SplitCandidate {
    double gain = 0.0;
    int feature = -1;
    double threshold = 0.0;
};

inline double leaf_score(double g, double n, double lambda) { return g * g / (n + lambda); }

inline void recompute_covers(RegressionTree& tree, const std::vector<std::vector<double>>& rows) {
    for (auto& node : tree.nodes) {
        node.cover = 0.0;
    }
    for (const auto& row : rows) {
        int n = 0;
        while (true) {
            auto& node = tree.nodes[static_cast<std::size_t>(n)];
            node.cover += 1.0;
            if (node.is_leaf()) {
                break;
            }
            n = row[static_cast<std::size_t>(node.feature)] < node.threshold ? node.left : node.right;
        }
    }
}

/**
 * Level-wise exact greedy tree growth on residuals. Each level scans every feature once
 * in presorted order and evaluates all open nodes simultaneously.
 */
inline RegressionTree grow_tree(const std::vector<std::vector<double>>& rows, const std::vector<double>& residual,
                                const std::vector<std::vector<std::uint32_t>>& sorted_by_feature,
                                const std::vector<char>& in_sample, const SurrogateHyper& hyper) {
    const std::size_t n_rows = rows.size();
    const std::size_t n_features = sorted_by_feature.size();
    RegressionTree tree;
    tree.nodes.push_back(TreeNode{});
    std::vector<int> row_node(n_rows, -1);
    double g_root = 0.0;
    double n_root = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
        if (in_sample[r]) {
            row_node[r] = 0;
            g_root += residual[r];
            n_root += 1.0;
        }
    }
    std::vector<double> node_g{g_root};
    std::vector<double> node_n{n_root};
    std::vector<int> open{0};

    for (int level = 0; level < hyper.max_depth && !open.empty(); ++level) {
        std::vector<int> slot_of(tree.nodes.size(), -1);
        for (std::size_t s = 0; s < open.size(); ++s) {
            slot_of[static_cast<std::size_t>(open[s])] = static_cast<int>(s);
        }
        std::vector<SplitCandidate> best(open.size());
        std::vector<double> gl(open.size()), nl(open.size()), last(open.size());
        for (std::size_t f = 0; f < n_features; ++f) {
            std::fill(gl.begin(), gl.end(), 0.0);
            std::fill(nl.begin(), nl.end(), 0.0);
            for (std::uint32_t r : sorted_by_feature[f]) {
                const int node = row_node[r];
                if (node < 0) {
                    continue;
                }
                const int slot = slot_of[static_cast<std::size_t>(node)];
                if (slot < 0) {
                    continue;
                }
                const auto s = static_cast<std::size_t>(slot);
                const double x = rows[r][f];
                if (nl[s] > 0.0 && x > last[s]) {
                    const double nr = node_n[static_cast<std::size_t>(node)] - nl[s];
                    if (nl[s] >= hyper.min_child_rows && nr >= hyper.min_child_rows) {
                        const double g = node_g[static_cast<std::size_t>(node)];
                        const double gain = leaf_score(gl[s], nl[s], hyper.lambda) +
                                            leaf_score(g - gl[s], nr, hyper.lambda) -
                                            leaf_score(g, node_n[static_cast<std::size_t>(node)], hyper.lambda);
                        if (gain > best[s].gain) {
                            double threshold = 0.5 * (last[s] + x);
                            if (!(threshold > last[s] && threshold <= x)) {
                                threshold = x;
                            }
                            best[s] = SplitCandidate{gain, static_cast<int>(f), threshold};
                        }
                    }
                }
                gl[s] += residual[r];
                nl[s] += 1.0;
                last[s] = x;
            }
        }
        std::vector<int> next_open;
        for (std::size_t s = 0; s < open.size(); ++s) {
            const int node = open[s];
            if (best[s].feature < 0 || best[s].gain <= hyper.min_split_gain) {
                continue;
            }
            const int left = static_cast<int>(tree.nodes.size());
            const int right = left + 1;
            tree.nodes.push_back(TreeNode{});
            tree.nodes.push_back(TreeNode{});
            node_g.push_back(0.0);
            node_g.push_back(0.0);
            node_n.push_back(0.0);
            node_n.push_back(0.0);
            auto& parent = tree.nodes[static_cast<std::size_t>(node)];
            parent.feature = best[s].feature;
            parent.threshold = best[s].threshold;
            parent.left = left;
            parent.right = right;
            next_open.push_back(left);
            next_open.push_back(right);
        }
        for (std::size_t r = 0; r < n_rows; ++r) {
            const int node = row_node[r];
            if (node < 0) {
                continue;
            }
            const auto& parent = tree.nodes[static_cast<std::size_t>(node)];
            if (parent.is_leaf()) {
                continue;
            }
            const int child = rows[r][static_cast<std::size_t>(parent.feature)] < parent.threshold ? parent.left : parent.right;
            row_node[r] = child;
            node_g[static_cast<std::size_t>(child)] += residual[r];
            node_n[static_cast<std::size_t>(child)] += 1.0;
        }
        open = std::move(next_open);
    }
    for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
        auto& node = tree.nodes[n];
        if (node.is_leaf()) {
            node.value = hyper.learning_rate * node_g[n] / (node_n[n] + hyper.lambda);
        }
    }
    recompute_covers(tree, rows);
    return tree;
}

} // namespace detail

/**
 * Fits the surrogate. Failed trials take part with coverage 0. A constant target yields
 * a constant model and a warning.
 */
inline SurrogateModel fit_surrogate(const Experiment& exp, std::uint64_t seed, const SurrogateHyper& hyper = {},
                                    const FitControl& control = {}) {
    if (exp.n_trials() < min_training_trials) {
        fail(ErrorCode::too_few_trials, "surrogate needs at least " + std::to_string(min_training_trials) +
                                            " trials, experiment has " + std::to_string(exp.n_trials()));
    }
    if (hyper.n_trees < 0 || hyper.max_depth < 0 || !(hyper.learning_rate > 0.0) || hyper.lambda < 0.0 ||
        !(hyper.subsample > 0.0 && hyper.subsample <= 1.0)) {
        fail(ErrorCode::invalid_argument, "invalid surrogate hyperparameters");
    }
    SurrogateModel model;
    model.encoding = FeatureEncoding(exp.space);
    const std::size_t n = exp.n_trials();
    std::vector<std::vector<double>> rows;
    rows.reserve(n);
    std::vector<double> target(n);
    for (std::size_t i = 0; i < n; ++i) {
        rows.push_back(model.encoding.encode(exp.trials[i].config));
        target[i] = static_cast<double>(exp.trials[i].coverage_value);
    }
    model.bias = std::accumulate(target.begin(), target.end(), 0.0) / static_cast<double>(n);
    const bool constant = std::all_of(target.begin(), target.end(), [&](double v) { return v == target[0]; });
    if (constant) {
        model.bias = target[0];
        model.warnings.push_back("all coverage values are identical; the surrogate is constant");
        model.refresh_base_value();
        if (control.progress) {
            control.progress(1.0);
        }
        return model;
    }

    const std::size_t n_features = model.encoding.n_features();
    std::vector<std::vector<std::uint32_t>> sorted(n_features);
    for (std::size_t f = 0; f < n_features; ++f) {
        auto& order = sorted[f];
        order.resize(n);
        std::iota(order.begin(), order.end(), 0U);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::uint32_t a, std::uint32_t b) { return rows[a][f] < rows[b][f]; });
    }

    Rng rng(seed);
    std::vector<double> prediction(n, model.bias);
    std::vector<double> residual(n);
    std::vector<char> in_sample(n, 1);
    for (int t = 0; t < hyper.n_trees; ++t) {
        if (control.stop.stop_requested()) {
            fail(ErrorCode::cancelled, "surrogate fit cancelled");
        }
        for (std::size_t i = 0; i < n; ++i) {
            residual[i] = target[i] - prediction[i];
        }
        if (hyper.subsample < 1.0) {
            for (std::size_t i = 0; i < n; ++i) {
                in_sample[i] = rng.uniform() < hyper.subsample ? 1 : 0;
            }
        }
        auto tree = detail::grow_tree(rows, residual, sorted, in_sample, hyper);
        for (std::size_t i = 0; i < n; ++i) {
            prediction[i] += tree.predict(rows[i]);
        }
        model.trees.push_back(std::move(tree));
        if (control.progress) {
            control.progress(static_cast<double>(t + 1) / static_cast<double>(hyper.n_trees));
        }
    }
    model.refresh_base_value();
    return model;
}

/// Coefficient of determination of the model on its training experiment.
inline double training_r2(const SurrogateModel& model, const Experiment& exp) {
    double mean = 0.0;
    for (const auto& t : exp.trials) {
        mean += static_cast<double>(t.coverage_value);
    }
    mean /= static_cast<double>(exp.n_trials());
    double ss_res = 0.0;
    double ss_tot = 0.0;
    for (const auto& t : exp.trials) {
        const double y = static_cast<double>(t.coverage_value);
        const double r = y - model.predict(t.config);
        ss_res += r * r;
        ss_tot += (y - mean) * (y - mean);
    }
    return ss_tot == 0.0 ? 1.0 : 1.0 - ss_res / ss_tot;
}

namespace detail {

struct PathElement {
    int player = -1;
    double zero_fraction = 0.0;
    double one_fraction = 0.0;
    double weight = 0.0;
};

inline void extend_path(std::vector<PathElement>& path, std::size_t depth, double zero_fraction, double one_fraction,
                        int player) {
    path[depth] = PathElement{player, zero_fraction, one_fraction, depth == 0 ? 1.0 : 0.0};
    const double d1 = static_cast<double>(depth + 1);
    for (std::size_t k = depth; k-- > 0;) {
        path[k + 1].weight += one_fraction * path[k].weight * static_cast<double>(k + 1) / d1;
        path[k].weight = zero_fraction * path[k].weight * static_cast<double>(depth - k) / d1;
    }
}

inline void unwind_path(std::vector<PathElement>& path, std::size_t depth, std::size_t index) {
    const double one_fraction = path[index].one_fraction;
    const double zero_fraction = path[index].zero_fraction;
    double next_one_portion = path[depth].weight;
    const double d1 = static_cast<double>(depth + 1);
    for (std::size_t k = depth; k-- > 0;) {
        if (one_fraction != 0.0) {
            const double tmp = path[k].weight;
            path[k].weight = next_one_portion * d1 / (static_cast<double>(k + 1) * one_fraction);
            next_one_portion = tmp - path[k].weight * zero_fraction * static_cast<double>(depth - k) / d1;
        } else {
            path[k].weight = path[k].weight * d1 / (zero_fraction * static_cast<double>(depth - k));
        }
    }
    for (std::size_t k = index; k < depth; ++k) {
        path[k].player = path[k + 1].player;
        path[k].zero_fraction = path[k + 1].zero_fraction;
        path[k].one_fraction = path[k + 1].one_fraction;
    }
}

inline double unwound_path_sum(const std::vector<PathElement>& path, std::size_t depth, std::size_t index) {
    const double one_fraction = path[index].one_fraction;
    const double zero_fraction = path[index].zero_fraction;
    double next_one_portion = path[depth].weight;
    double total = 0.0;
    for (std::size_t k = depth; k-- > 0;) {
        if (one_fraction != 0.0) {
            const double tmp = next_one_portion / (static_cast<double>(k + 1) * one_fraction);
            total += tmp;
            next_one_portion = path[k].weight - tmp * zero_fraction * static_cast<double>(depth - k);
        } else {
            total += path[k].weight / (zero_fraction * static_cast<double>(depth - k));
        }
    }
    return total * static_cast<double>(depth + 1);
}

inline void tree_shap(const RegressionTree& tree, std::span<const double> row, std::span<const int> feature_player,
                      std::vector<double>& phi, int node_index, std::vector<PathElement> path, std::size_t depth,
                      double parent_zero, double parent_one, int parent_player) {
    if (path.size() < depth + 1) {
        path.resize(depth + 1);
    }
    extend_path(path, depth, parent_zero, parent_one, parent_player);
    const auto& node = tree.nodes[static_cast<std::size_t>(node_index)];
    if (node.is_leaf()) {
        for (std::size_t k = 1; k <= depth; ++k) {
            const double w = unwound_path_sum(path, depth, k);
            phi[static_cast<std::size_t>(path[k].player)] += w * (path[k].one_fraction - path[k].zero_fraction) * node.value;
        }
        return;
    }
    const int player = feature_player[static_cast<std::size_t>(node.feature)];
    const bool go_left = row[static_cast<std::size_t>(node.feature)] < node.threshold;
    const int hot = go_left ? node.left : node.right;
    const int cold = go_left ? node.right : node.left;
    const double hot_zero = tree.nodes[static_cast<std::size_t>(hot)].cover / node.cover;
    const double cold_zero = tree.nodes[static_cast<std::size_t>(cold)].cover / node.cover;
    double incoming_zero = 1.0;
    double incoming_one = 1.0;
    std::size_t k = 1;
    for (; k <= depth; ++k) {
        if (path[k].player == player) {
            break;
        }
    }
    if (k <= depth) {
        incoming_zero = path[k].zero_fraction;
        incoming_one = path[k].one_fraction;
        unwind_path(path, depth, k);
        depth -= 1;
    }
    tree_shap(tree, row, feature_player, phi, hot, path, depth + 1, hot_zero * incoming_zero, incoming_one, player);
    tree_shap(tree, row, feature_player, phi, cold, path, depth + 1, cold_zero * incoming_zero, 0.0, player);
}

} // namespace detail

/**
 * Exact Shapley values of one tree for an encoded row, accumulated into `phi` (one slot
 * per player). Players are given per feature by `feature_player`.
 */
inline void tree_shapley(const RegressionTree& tree, std::span<const double> row, std::span<const int> feature_player,
                         std::vector<double>& phi) {
    if (tree.nodes.empty() || tree.nodes[0].is_leaf()) {
        return;
    }
    std::vector<detail::PathElement> path(static_cast<std::size_t>(tree.depth()) + 2);
    detail::tree_shap(tree, row, feature_player, phi, 0, std::move(path), 0, 1.0, 1.0, -1);
}

/// Per-parameter attributions (in space order); base_value plus their sum is the prediction.
inline std::vector<double> shapley_attribution_row(const SurrogateModel& model, std::span<const double> row) {
    std::vector<double> phi(model.encoding.n_players(), 0.0);
    for (const auto& tree : model.trees) {
        tree_shapley(tree, row, model.encoding.feature_players(), phi);
    }
    return phi;
}

inline std::map<std::string, double> shapley_attribution(const SurrogateModel& model, const Configuration& config) {
    const auto phi = shapley_attribution_row(model, model.encoding.encode(config));
    std::map<std::string, double> out;
    const auto& params = model.encoding.space().params;
    for (std::size_t p = 0; p < params.size(); ++p) {
        out[params[p].name] = phi[p];
    }
    return out;
}

} // namespace covtune
