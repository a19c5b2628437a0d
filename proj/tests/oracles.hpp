#pragma once

#include "covtune/surrogate.hpp"

#include <span>
#include <vector>

namespace testing_support {

using covtune::RegressionTree;
using covtune::SurrogateModel;

/// Conditional expectation of one tree when only the players in `coalition` are known.
inline double coalition_value(const RegressionTree& tree, int node, const std::vector<double>& row,
                              std::span<const int> players, unsigned coalition) {
    const auto& n = tree.nodes[static_cast<std::size_t>(node)];
    if (n.is_leaf()) return n.value;
    if (coalition & (1u << players[static_cast<std::size_t>(n.feature)])) {
        return coalition_value(tree, row[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right, row,
                               players, coalition);
    }
    const auto& l = tree.nodes[static_cast<std::size_t>(n.left)];
    const auto& r = tree.nodes[static_cast<std::size_t>(n.right)];
    return (l.cover * coalition_value(tree, n.left, row, players, coalition) +
            r.cover * coalition_value(tree, n.right, row, players, coalition)) /
           n.cover;
}

/// Shapley values by enumerating every coalition.
inline std::vector<double> brute_force_shapley(const SurrogateModel& model, const std::vector<double>& row) {
    const std::size_t n = model.encoding.n_players();
    const auto players = model.encoding.feature_players();
    std::vector<double> fact(n + 1, 1.0);
    for (std::size_t i = 1; i <= n; ++i) fact[i] = fact[i - 1] * static_cast<double>(i);
    std::vector<double> phi(n, 0.0);
    for (const auto& tree : model.trees) {
        for (std::size_t i = 0; i < n; ++i) {
            for (unsigned s = 0; s < (1u << n); ++s) {
                if (s & (1u << i)) continue;
                const auto size = static_cast<std::size_t>(__builtin_popcount(s));
                const double w = fact[size] * fact[n - size - 1] / fact[n];
                phi[i] += w * (coalition_value(tree, 0, row, players, s | (1u << i)) -
                               coalition_value(tree, 0, row, players, s));
            }
        }
    }
    return phi;
}

} // namespace testing_support
