#pragma once

#include "buckets.hpp"
#include "surrogate.hpp"

#include <json.hpp>

#include <cmath>
#include <set>
#include <string>
#include <vector>

/**
 * @file effects.hpp
 *
 * @brief Parameter and value-level effects from per-trial Shapley attributions.
 *
 * A value effect is the mean attribution of the parameter over the trials whose value
 * falls in that bucket, so it carries a direction. Because per-trial attributions are
 * centred on the base value, their signed average over all trials is close to zero for
 * every parameter; the parameter effect therefore weights the bucket effect magnitudes
 * by trial count.
 */

namespace covtune {

struct ValueEffect {
    std::string bucket;
    double mean_effect = 0.0;
    std::size_t trial_count = 0;
    bool is_default = false;
};

struct ParamEffect {
    std::string name;
    ParamKind kind = ParamKind::binary;
    double mean_effect = 0.0;
    std::size_t trial_count = 0;
    std::vector<ValueEffect> values; ///< non-empty buckets in scheme order
    std::vector<std::string> beats_default;
};

struct EffectReport {
    double base_value = 0.0;
    std::vector<ParamEffect> params; ///< space order

    const ParamEffect& at(std::string_view name) const {
        for (const auto& p : params) {
            if (p.name == name) {
                return p;
            }
        }
        fail(ErrorCode::unknown_parameter, "no effect for parameter '" + std::string(name) + "'");
    }

    /// Parameter names ordered by decreasing |effect|, ties by space order.
    std::vector<std::string> ranking() const {
        std::vector<std::size_t> order(params.size());
        std::iota(order.begin(), order.end(), 0U);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return std::fabs(params[a].mean_effect) > std::fabs(params[b].mean_effect);
        });
        std::vector<std::string> out;
        for (auto i : order) {
            out.push_back(params[i].name);
        }
        return out;
    }
};

/// Trial-count-weighted mean of bucket effect magnitudes.
inline double weighted_effect(const std::vector<ValueEffect>& values) {
    double total = 0.0;
    std::size_t count = 0;
    for (const auto& v : values) {
        total += static_cast<double>(v.trial_count) * std::fabs(v.mean_effect);
        count += v.trial_count;
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

/// Per-trial attribution matrix, rows in trial order, columns in space order.
inline std::vector<std::vector<double>> trial_attributions(const Experiment& exp, const SurrogateModel& model) {
    if (model.encoding.space() != exp.space) {
        fail(ErrorCode::invalid_argument, "surrogate was fitted on a different parameter space");
    }
    std::vector<std::vector<double>> out;
    out.reserve(exp.n_trials());
    for (const auto& t : exp.trials) {
        out.push_back(shapley_attribution_row(model, model.encoding.encode(t.config)));
    }
    return out;
}

inline EffectReport build_effect_report(const Experiment& exp, const SurrogateModel& model) {
    const auto phi = trial_attributions(exp, model);
    EffectReport report;
    report.base_value = model.base_value;
    for (std::size_t p = 0; p < exp.space.size(); ++p) {
        const auto& def = exp.space.params[p];
        const auto scheme = make_bucket_scheme(exp, p);
        const auto assigned = assign_buckets(exp, scheme);
        std::vector<double> sum(scheme.size(), 0.0);
        std::vector<std::size_t> count(scheme.size(), 0);
        for (std::size_t i = 0; i < assigned.size(); ++i) {
            sum[assigned[i]] += phi[i][p];
            ++count[assigned[i]];
        }
        std::size_t dflt = default_bucket(scheme, def);
        if (count[dflt] == 0) {
            dflt = scheme.unset_bucket(); // unset trials ran with the engine default
        }
        ParamEffect effect;
        effect.name = def.name;
        effect.kind = def.kind;
        for (std::size_t b = 0; b < scheme.size(); ++b) {
            if (count[b] == 0) {
                continue;
            }
            effect.values.push_back(ValueEffect{scheme.buckets[b].label, sum[b] / static_cast<double>(count[b]),
                                                count[b], b == dflt});
            effect.trial_count += count[b];
        }
        effect.mean_effect = weighted_effect(effect.values);
        if (count[dflt] > 0) {
            const double reference = sum[dflt] / static_cast<double>(count[dflt]);
            for (std::size_t b = 0; b < scheme.size(); ++b) {
                if (b == dflt || count[b] == 0 || scheme.buckets[b].unset) {
                    continue;
                }
                if (sum[b] / static_cast<double>(count[b]) > reference) {
                    effect.beats_default.push_back(scheme.buckets[b].label);
                }
            }
        }
        report.params.push_back(std::move(effect));
    }
    return report;
}

/// Parameters whose |effect| is strictly below the threshold.
inline std::set<std::string> low_effect_parameters(const EffectReport& report, double threshold = 0.3) {
    if (!(threshold >= 0.0)) {
        fail(ErrorCode::invalid_argument, "threshold must be non-negative");
    }
    std::set<std::string> out;
    for (const auto& p : report.params) {
        if (std::fabs(p.mean_effect) < threshold) {
            out.insert(p.name);
        }
    }
    return out;
}

inline nlohmann::json to_json(const EffectReport& report, double threshold = 0.3) {
    nlohmann::json j;
    j["base_value"] = report.base_value;
    j["threshold"] = threshold;
    const auto hidden = low_effect_parameters(report, threshold);
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : report.params) {
        nlohmann::json pj;
        pj["name"] = p.name;
        pj["kind"] = std::string(to_string(p.kind));
        pj["mean_effect"] = p.mean_effect;
        pj["trial_count"] = p.trial_count;
        pj["hidden"] = hidden.count(p.name) > 0;
        nlohmann::json values = nlohmann::json::array();
        for (const auto& v : p.values) {
            values.push_back({{"bucket", v.bucket},
                              {"mean_effect", v.mean_effect},
                              {"trial_count", v.trial_count},
                              {"is_default", v.is_default}});
        }
        pj["values"] = values;
        pj["beats_default"] = p.beats_default;
        params.push_back(pj);
    }
    j["params"] = params;
    j["ranking"] = report.ranking();
    return j;
}

} // namespace covtune
