#pragma once

#include "buckets.hpp"
#include "compare.hpp"
#include "core.hpp"
#include "effects.hpp"
#include "ingest.hpp"

#include <json.hpp>

#include <chrono>
#include <ctime>
#include <map>
#include <set>
#include <string>
#include <vector>

/**
 * @file refine.hpp
 *
 * @brief Parameter-space refinement: iteration metrics, suggestion fragments for human
 * review, and plan application.
 *
 * Suggestion functions never modify a space; only `apply_plan` produces a new one.
 */

namespace covtune {

struct IterationMetrics {
    std::int64_t acc_all = 0;
    std::map<std::size_t, std::int64_t> acc_k;
    std::size_t n_failed = 0;
    std::size_t n_trials = 0;
};

/// acc_k(k) is the accumulated coverage of the first k trials in iteration order.
inline IterationMetrics metrics(const Experiment& exp, const std::vector<std::size_t>& ks) {
    for (auto k : ks) {
        if (k < 1 || k > exp.n_trials()) {
            fail(ErrorCode::invalid_argument,
                 "k = " + std::to_string(k) + " outside [1, " + std::to_string(exp.n_trials()) + "]");
        }
    }
    std::set<std::size_t> wanted(ks.begin(), ks.end());
    IterationMetrics m;
    m.n_trials = exp.n_trials();
    CoverageVector prefix(exp.n_branches);
    for (std::size_t i = 0; i < exp.n_trials(); ++i) {
        const auto& t = exp.trials[i];
        prefix |= t.coverage;
        if (t.failed()) {
            ++m.n_failed;
        }
        if (wanted.count(i + 1)) {
            m.acc_k[i + 1] = static_cast<std::int64_t>(prefix.popcount());
        }
    }
    m.acc_all = static_cast<std::int64_t>(prefix.popcount());
    return m;
}

/// Domain exclusion: a discrete value, or an end slice of a continuous range.
struct Exclusion {
    std::string param;
    ParamValue value;           ///< binary / nominal
    std::optional<Range> range; ///< continuous
    std::string rationale;
};

struct DefaultUpdate {
    std::string param;
    ParamValue value;
    std::string rationale;
};

struct RefinementPlan {
    std::map<std::string, std::string> drop_params; ///< name -> rationale
    std::vector<Exclusion> exclude_values;
    std::vector<DefaultUpdate> set_defaults;
    std::vector<std::string> notices;

    bool empty() const { return drop_params.empty() && exclude_values.empty() && set_defaults.empty(); }

    /// Adds another fragment; later default updates for the same parameter win.
    RefinementPlan& merge(const RefinementPlan& other) {
        for (const auto& [name, why] : other.drop_params) {
            drop_params[name] = why;
        }
        exclude_values.insert(exclude_values.end(), other.exclude_values.begin(), other.exclude_values.end());
        for (const auto& u : other.set_defaults) {
            auto it = std::find_if(set_defaults.begin(), set_defaults.end(),
                                   [&](const DefaultUpdate& d) { return d.param == u.param; });
            if (it == set_defaults.end()) {
                set_defaults.push_back(u);
            } else {
                *it = u;
            }
        }
        notices.insert(notices.end(), other.notices.begin(), other.notices.end());
        return *this;
    }
};

inline std::string format_effect(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof buffer, "%+.3f", v);
    return buffer;
}

inline RefinementPlan suggest_low_effect_drops(const EffectReport& report, double threshold = 0.3) {
    RefinementPlan plan;
    for (const auto& name : low_effect_parameters(report, threshold)) {
        plan.drop_params[name] =
            "mean |effect| " + format_effect(report.at(name).mean_effect) + " below threshold " + format_number(threshold);
    }
    return plan;
}

/**
 * For every parameter with a bucket beating the default, proposes the best bucket's
 * representative as the new default (continuous: median of its observed values).
 */
inline RefinementPlan suggest_default_updates(const EffectReport& report, const Experiment& exp) {
    RefinementPlan plan;
    for (const auto& effect : report.params) {
        if (effect.beats_default.empty()) {
            continue;
        }
        const auto idx = exp.space.index_of(effect.name);
        if (!idx) {
            continue;
        }
        const auto scheme = make_bucket_scheme(exp, *idx);
        const ValueEffect* best = nullptr;
        for (const auto& v : effect.values) {
            if (std::find(effect.beats_default.begin(), effect.beats_default.end(), v.bucket) == effect.beats_default.end()) {
                continue;
            }
            if (!best || v.mean_effect > best->mean_effect) {
                best = &v;
            }
        }
        if (!best) {
            continue;
        }
        const auto b = scheme.find(best->bucket);
        if (!b) {
            continue;
        }
        const auto& bucket = scheme.buckets[*b];
        ParamValue value = effect.kind == ParamKind::continuous ? ParamValue(bucket.median) : bucket.value;
        const auto& def = exp.space.params[*idx];
        if (!def.contains(value)) {
            continue;
        }
        plan.set_defaults.push_back(DefaultUpdate{effect.name, value,
                                                  "bucket " + best->bucket + " effect " + format_effect(best->mean_effect) +
                                                      " beats the default bucket"});
    }
    return plan;
}

inline constexpr double failure_share_ratio = 2.0;
inline constexpr double failure_min_share = 0.5;

/**
 * Proposes value exclusions for parameters that differ significantly between the failed
 * and the top group. A bucket qualifies when its share among failed trials not yet
 * explained by an earlier proposal is at least `failure_min_share` and at least
 * `failure_share_ratio` times its share in the top group; the best qualifying bucket is
 * taken repeatedly until none qualifies. Excluding a current default also proposes the
 * top group's most common remaining value as the new default.
 */
inline RefinementPlan suggest_failure_exclusions(const Experiment& exp, const TrialGroup& failed, const TrialGroup& top,
                                                 const std::vector<ParamTestResult>& tests) {
    RefinementPlan plan;
    if (failed.member_ids.empty()) {
        plan.notices.push_back("no failed trials; nothing to exclude");
        return plan;
    }
    validate_group(failed, exp);
    validate_group(top, exp);
    struct Candidate {
        std::size_t param = 0;
        std::size_t bucket = 0;
        BucketScheme scheme;
    };
    std::vector<BucketScheme> schemes;
    std::vector<std::vector<std::size_t>> assigned;
    std::vector<std::size_t> params;
    for (const auto& r : tests) {
        if (!r.significant) {
            continue;
        }
        const auto idx = exp.space.index_of(r.parameter);
        if (!idx) {
            continue;
        }
        params.push_back(*idx);
        schemes.push_back(make_bucket_scheme(exp, *idx));
        assigned.push_back(assign_buckets(exp, schemes.back()));
    }
    std::vector<int> remaining = failed.member_ids;
    std::set<std::pair<std::size_t, std::size_t>> taken;
    const std::string rule = "share in failed >= " + format_number(failure_min_share) + " and >= " +
                             format_number(failure_share_ratio) + "x share in top (heuristic, confirm before applying)";
    while (!remaining.empty()) {
        double best_share = -1.0;
        std::size_t best_k = 0, best_b = 0;
        double best_top = 0.0;
        for (std::size_t k = 0; k < params.size(); ++k) {
            const auto& scheme = schemes[k];
            const auto& def = exp.space.params[params[k]];
            std::vector<double> in_failed(scheme.size(), 0.0), in_top(scheme.size(), 0.0);
            for (int id : remaining) {
                in_failed[assigned[k][static_cast<std::size_t>(id - 1)]] += 1.0;
            }
            for (int id : top.member_ids) {
                in_top[assigned[k][static_cast<std::size_t>(id - 1)]] += 1.0;
            }
            for (std::size_t b = 0; b < scheme.size(); ++b) {
                if (scheme.buckets[b].unset || taken.count({k, b})) {
                    continue;
                }
                if (def.kind == ParamKind::continuous && b != 0 && b + 2 != scheme.size()) {
                    continue; // only end slices can be cut from a range
                }
                const double fs = in_failed[b] / static_cast<double>(remaining.size());
                const double ts = in_top[b] / static_cast<double>(top.size());
                if (fs >= failure_min_share && fs >= failure_share_ratio * ts && fs > best_share) {
                    best_share = fs;
                    best_k = k;
                    best_b = b;
                    best_top = ts;
                }
            }
        }
        if (best_share < 0.0) {
            break;
        }
        taken.insert({best_k, best_b});
        const auto& scheme = schemes[best_k];
        const auto& def = exp.space.params[params[best_k]];
        const auto& bucket = scheme.buckets[best_b];
        Exclusion ex;
        ex.param = def.name;
        if (def.kind == ParamKind::continuous) {
            ex.range = bucket.range;
        } else {
            ex.value = bucket.value;
        }
        ex.rationale = "bucket " + bucket.label + ": " + format_number(std::round(best_share * 1000.0) / 10.0) +
                       "% of remaining failed vs " + format_number(std::round(best_top * 1000.0) / 10.0) +
                       "% of top; " + rule;
        // Would the exclusion empty the domain or remove the default?
        bool empties = false;
        if (def.kind == ParamKind::binary) {
            std::size_t left = 0;
            for (bool v : def.truth_values) {
                const bool gone = v == std::get<bool>(bucket.value) ||
                                  std::any_of(plan.exclude_values.begin(), plan.exclude_values.end(), [&](const Exclusion& e) {
                                      return e.param == def.name && e.value == ParamValue(v);
                                  });
                left += gone ? 0 : 1;
            }
            empties = left == 0;
        } else if (def.kind == ParamKind::nominal) {
            std::size_t left = 0;
            for (const auto& s : def.symbols) {
                const bool gone = ParamValue(s) == bucket.value ||
                                  std::any_of(plan.exclude_values.begin(), plan.exclude_values.end(), [&](const Exclusion& e) {
                                      return e.param == def.name && e.value == ParamValue(s);
                                  });
                left += gone ? 0 : 1;
            }
            empties = left == 0;
        } else {
            empties = bucket.range.lo <= def.range.lo && bucket.range.hi >= def.range.hi;
        }
        if (empties) {
            plan.notices.push_back("skipped excluding " + def.name + "=" + bucket.label + ": domain would be empty");
        } else {
            const bool hits_default =
                def.has_default() && (def.kind == ParamKind::continuous
                                          ? ex.range->contains(std::get<double>(def.default_value))
                                          : def.default_value == bucket.value);
            plan.exclude_values.push_back(ex);
            if (hits_default) {
                std::vector<double> counts(scheme.size(), 0.0);
                for (int id : top.member_ids) {
                    counts[assigned[best_k][static_cast<std::size_t>(id - 1)]] += 1.0;
                }
                std::optional<std::size_t> replacement;
                for (std::size_t b = 0; b < scheme.size(); ++b) {
                    if (b == best_b || scheme.buckets[b].unset || taken.count({best_k, b})) {
                        continue;
                    }
                    if (!replacement || counts[b] > counts[*replacement]) {
                        replacement = b;
                    }
                }
                if (replacement) {
                    const auto& rb = scheme.buckets[*replacement];
                    ParamValue v = def.kind == ParamKind::continuous ? ParamValue(rb.median) : rb.value;
                    if (def.kind == ParamKind::continuous) {
                        // Keep the new default inside the shrunk range.
                        v = std::clamp(rb.median, def.range.lo, def.range.hi);
                    }
                    plan.set_defaults.push_back(DefaultUpdate{def.name, v,
                                                              "replaces excluded default with the top group's most "
                                                              "common value " + rb.label});
                }
            }
        }
        std::vector<int> still;
        for (int id : remaining) {
            if (assigned[best_k][static_cast<std::size_t>(id - 1)] != best_b) {
                still.push_back(id);
            }
        }
        remaining = std::move(still);
    }
    if (plan.exclude_values.empty()) {
        plan.notices.push_back("no bucket is over-represented among failed trials");
    }
    return plan;
}

struct AuditRecord {
    RefinementPlan plan;
    std::string applied_at; ///< ISO 8601 UTC
};

struct RefinedSpace {
    ParameterSpace space;
    AuditRecord audit;
};

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buffer[32];
    std::strftime(buffer, sizeof buffer, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buffer;
}

/**
 * Applies a plan to a copy of `space`. Continuous exclusions may only cut a slice off
 * either end of the range; the cut boundary value itself stays in the domain.
 */
inline RefinedSpace apply_plan(const ParameterSpace& space, const RefinementPlan& plan,
                               std::string timestamp = utc_timestamp()) {
    ParameterSpace out = space;
    const auto find = [&](const std::string& name) -> ParameterDef& {
        for (auto& p : out.params) {
            if (p.name == name) {
                return p;
            }
        }
        fail(ErrorCode::invalid_plan, "plan references unknown parameter '" + name + "'");
    };
    for (const auto& [name, _] : plan.drop_params) {
        find(name);
    }
    std::set<std::string> excluded_default;
    for (const auto& ex : plan.exclude_values) {
        if (plan.drop_params.count(ex.param)) {
            fail(ErrorCode::invalid_plan, "parameter '" + ex.param + "' is both dropped and restricted");
        }
        auto& def = find(ex.param);
        switch (def.kind) {
        case ParamKind::binary: {
            const bool* v = std::get_if<bool>(&ex.value);
            if (!v) {
                fail(ErrorCode::invalid_plan, "exclusion for binary '" + def.name + "' needs a boolean value");
            }
            auto it = std::find(def.truth_values.begin(), def.truth_values.end(), *v);
            if (it == def.truth_values.end()) {
                fail(ErrorCode::invalid_plan, "value " + value_text(ex.value) + " is not in the domain of '" + def.name + "'");
            }
            def.truth_values.erase(it);
            if (def.truth_values.empty()) {
                fail(ErrorCode::invalid_plan, "exclusions empty the domain of '" + def.name + "'");
            }
            break;
        }
        case ParamKind::nominal: {
            const std::string* v = std::get_if<std::string>(&ex.value);
            if (!v) {
                fail(ErrorCode::invalid_plan, "exclusion for nominal '" + def.name + "' needs a symbol");
            }
            auto it = std::find(def.symbols.begin(), def.symbols.end(), *v);
            if (it == def.symbols.end()) {
                fail(ErrorCode::invalid_plan, "value '" + *v + "' is not in the domain of '" + def.name + "'");
            }
            def.symbols.erase(it);
            if (def.symbols.empty()) {
                fail(ErrorCode::invalid_plan, "exclusions empty the domain of '" + def.name + "'");
            }
            break;
        }
        case ParamKind::continuous: {
            if (!ex.range || ex.range->lo > ex.range->hi) {
                fail(ErrorCode::invalid_plan, "exclusion for continuous '" + def.name + "' needs a range");
            }
            const Range r = *ex.range;
            if (r.hi < def.range.lo || r.lo > def.range.hi) {
                fail(ErrorCode::invalid_plan, "excluded range " + range_label(r) + " misses the domain of '" + def.name + "'");
            }
            const bool cuts_low = r.lo <= def.range.lo;
            const bool cuts_high = r.hi >= def.range.hi;
            if (cuts_low && cuts_high) {
                fail(ErrorCode::invalid_plan, "exclusions empty the domain of '" + def.name + "'");
            }
            if (!cuts_low && !cuts_high) {
                fail(ErrorCode::invalid_plan, "excluded range " + range_label(r) + " would leave a hole in '" + def.name + "'");
            }
            if (cuts_low) {
                def.range.lo = r.hi;
            } else {
                def.range.hi = r.lo;
            }
            break;
        }
        }
        if (def.has_default() && !def.contains(def.default_value)) {
            excluded_default.insert(def.name);
        }
    }
    std::set<std::string> updated;
    for (const auto& u : plan.set_defaults) {
        if (plan.drop_params.count(u.param)) {
            fail(ErrorCode::invalid_plan, "parameter '" + u.param + "' is both dropped and given a new default");
        }
        auto& def = find(u.param);
        if (!def.contains(u.value)) {
            fail(ErrorCode::invalid_plan, "new default " + value_text(u.value) + " lies outside the refined domain of '" +
                                              def.name + "'");
        }
        def.default_value = u.value;
        updated.insert(u.param);
    }
    for (const auto& name : excluded_default) {
        if (!updated.count(name)) {
            fail(ErrorCode::invalid_plan, "exclusion removes the default of '" + name + "' without a new default");
        }
    }
    out.params.erase(std::remove_if(out.params.begin(), out.params.end(),
                                    [&](const ParameterDef& p) { return plan.drop_params.count(p.name) > 0; }),
                     out.params.end());
    out.validate();
    return RefinedSpace{std::move(out), AuditRecord{plan, std::move(timestamp)}};
}

namespace detail {

inline nlohmann::json value_json(const ParamValue& v) {
    struct Visitor {
        nlohmann::json operator()(std::monostate) const { return nullptr; }
        nlohmann::json operator()(bool b) const { return b; }
        nlohmann::json operator()(double d) const { return d; }
        nlohmann::json operator()(const std::string& s) const { return s; }
    };
    return std::visit(Visitor{}, v);
}

inline ParamValue value_from_json(const nlohmann::json& j, const ParameterDef* def) {
    if (j.is_boolean()) return j.get<bool>();
    if (j.is_string()) {
        if (def && def->kind != ParamKind::nominal) {
            return def->parse_value(j.get<std::string>());
        }
        return j.get<std::string>();
    }
    if (j.is_number()) {
        if (def && def->kind == ParamKind::nominal) {
            return format_number(j.get<double>());
        }
        return j.get<double>();
    }
    fail(ErrorCode::schema_error, "plan value must be a boolean, number or string");
}

} // namespace detail

inline nlohmann::json to_json(const RefinementPlan& plan) {
    nlohmann::json drops = nlohmann::json::array();
    for (const auto& [name, why] : plan.drop_params) {
        drops.push_back({{"param", name}, {"rationale", why}});
    }
    nlohmann::json excludes = nlohmann::json::array();
    for (const auto& ex : plan.exclude_values) {
        nlohmann::json e = {{"param", ex.param}, {"rationale", ex.rationale}};
        if (ex.range) {
            e["range"] = {ex.range->lo, ex.range->hi};
        } else {
            e["value"] = detail::value_json(ex.value);
        }
        excludes.push_back(e);
    }
    nlohmann::json defaults = nlohmann::json::array();
    for (const auto& u : plan.set_defaults) {
        defaults.push_back({{"param", u.param}, {"value", detail::value_json(u.value)}, {"rationale", u.rationale}});
    }
    return {{"drop_params", drops}, {"exclude_values", excludes}, {"set_defaults", defaults}, {"notices", plan.notices}};
}

/// Parses a plan; `space` (when given) types the values by parameter kind.
inline RefinementPlan plan_from_json(const nlohmann::json& j, const ParameterSpace* space = nullptr) {
    if (!j.is_object()) {
        fail(ErrorCode::schema_error, "plan must be a JSON object");
    }
    const auto def_of = [&](const std::string& name) -> const ParameterDef* {
        if (!space) return nullptr;
        const auto idx = space->index_of(name);
        return idx ? &space->params[*idx] : nullptr;
    };
    const auto rationale = [](const nlohmann::json& e) { return e.value("rationale", std::string{}); };
    RefinementPlan plan;
    try {
        for (const auto& e : j.value("drop_params", nlohmann::json::array())) {
            if (e.is_string()) {
                plan.drop_params[e.get<std::string>()] = "";
            } else {
                plan.drop_params[e.at("param").get<std::string>()] = rationale(e);
            }
        }
        for (const auto& e : j.value("exclude_values", nlohmann::json::array())) {
            Exclusion ex;
            ex.param = e.at("param").get<std::string>();
            ex.rationale = rationale(e);
            if (e.contains("range")) {
                const auto& r = e["range"];
                ex.range = Range{r.at(0).get<double>(), r.at(1).get<double>()};
            } else {
                ex.value = detail::value_from_json(e.at("value"), def_of(ex.param));
            }
            plan.exclude_values.push_back(std::move(ex));
        }
        for (const auto& e : j.value("set_defaults", nlohmann::json::array())) {
            DefaultUpdate u;
            u.param = e.at("param").get<std::string>();
            u.value = detail::value_from_json(e.at("value"), def_of(u.param));
            u.rationale = rationale(e);
            plan.set_defaults.push_back(std::move(u));
        }
        for (const auto& n : j.value("notices", nlohmann::json::array())) {
            plan.notices.push_back(n.get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::schema_error, std::string("malformed plan: ") + e.what());
    }
    return plan;
}

inline nlohmann::json to_json(const IterationMetrics& m) {
    nlohmann::json acc = nlohmann::json::object();
    for (const auto& [k, v] : m.acc_k) {
        acc[std::to_string(k)] = v;
    }
    return {{"n_trials", m.n_trials}, {"acc_all", m.acc_all}, {"acc_k", acc}, {"n_failed", m.n_failed}};
}

inline nlohmann::json to_json(const RefinedSpace& refined) {
    return {{"space", parameter_space_to_json(refined.space)},
            {"audit", {{"plan", to_json(refined.audit.plan)}, {"applied_at", refined.audit.applied_at}}}};
}

} // namespace covtune
