#pragma once

#include "compare.hpp"
#include "effects.hpp"
#include "groups.hpp"
#include "ingest.hpp"
#include "refine.hpp"

#include <json.hpp>

#include <charconv>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file reports.hpp
 *
 * @brief Report bodies shared by the command line and the HTTP service, so both emit
 * the same bytes for the same inputs.
 */

namespace covtune {

enum class ReportFormat { json, csv };

inline ReportFormat parse_format(std::string_view text) {
    if (text.empty() || text == "json") return ReportFormat::json;
    if (text == "csv") return ReportFormat::csv;
    fail(ErrorCode::invalid_argument, "unknown format '" + std::string(text) + "' (expected json or csv)");
}

inline std::string render(const nlohmann::json& j) { return j.dump(2) + "\n"; }

/// Seed used for every surrogate fit behind a report.
inline constexpr std::uint64_t report_fit_seed = 0;

inline std::vector<std::size_t> parse_k_list(std::string_view text) {
    std::vector<std::size_t> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto item = text.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
        std::size_t k = 0;
        const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), k);
        if (item.empty() || ec != std::errc{} || ptr != item.data() + item.size()) {
            fail(ErrorCode::invalid_argument, "bad k list '" + std::string(text) + "'");
        }
        out.push_back(k);
        if (comma == std::string_view::npos) break;
        start = comma + 1;
    }
    return out;
}

inline double parse_double_arg(std::string_view text, const std::string& what) {
    try {
        std::size_t used = 0;
        const std::string s(text);
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::invalid_argument, what + " must be a number, got '" + std::string(text) + "'");
    }
}

inline nlohmann::json summary_json(const Experiment& exp) {
    std::size_t failed = 0;
    for (const auto& t : exp.trials) failed += t.failed() ? 1 : 0;
    return {{"trials", exp.n_trials()},
            {"branches", exp.n_branches},
            {"params",
             {{"binary", exp.space.count(ParamKind::binary)},
              {"continuous", exp.space.count(ParamKind::continuous)},
              {"nominal", exp.space.count(ParamKind::nominal)}}},
            {"failed", failed},
            {"warnings", exp.warnings}};
}

inline EffectReport compute_effects(const Experiment& exp, const FitControl& control = {}) {
    const auto model = fit_surrogate(exp, report_fit_seed, {}, control);
    return build_effect_report(exp, model);
}

inline std::string effects_body(const EffectReport& report, double threshold, ReportFormat format) {
    if (format == ReportFormat::json) {
        return render(to_json(report, threshold));
    }
    const auto hidden = low_effect_parameters(report, threshold);
    std::ostringstream out;
    out << "parameter,kind,bucket,mean_effect,trial_count,is_default,beats_default,hidden\n";
    for (const auto& name : report.ranking()) {
        const auto& p = report.at(name);
        out << detail::csv_cell(p.name) << ',' << to_string(p.kind) << ",*," << format_number(p.mean_effect) << ','
            << p.trial_count << ",,," << (hidden.count(p.name) ? "true" : "false") << '\n';
        for (const auto& v : p.values) {
            const bool beats = std::find(p.beats_default.begin(), p.beats_default.end(), v.bucket) != p.beats_default.end();
            out << detail::csv_cell(p.name) << ',' << to_string(p.kind) << ',' << detail::csv_cell(v.bucket) << ','
                << format_number(v.mean_effect) << ',' << v.trial_count << ',' << (v.is_default ? "true" : "false") << ','
                << (beats ? "true" : "false") << ",\n";
        }
    }
    return out.str();
}

inline nlohmann::json compare_json(const Experiment& exp, const TrialGroup& g1, const TrialGroup& g2, double alpha) {
    return {{"groups", {to_json(g1, exp), to_json(g2, exp)}},
            {"stats", to_json(group_stats(g1, g2, exp))},
            {"frequency", to_json(frequency_diff(g1, g2, exp))},
            {"tests", to_json(parameter_tests(g1, g2, exp, alpha))},
            {"code_diff", to_json(code_diff(g1, g2, exp))}};
}

/// CSV form of a comparison is its parameter-test table.
inline std::string compare_body(const Experiment& exp, const TrialGroup& g1, const TrialGroup& g2, double alpha,
                                ReportFormat format) {
    if (format == ReportFormat::json) {
        return render(compare_json(exp, g1, g2, alpha));
    }
    const auto tests = parameter_tests(g1, g2, exp, alpha);
    std::ostringstream out;
    out << "parameter,test,statistic,p_value,adjusted_p,effect_size,effect_class,significant,testable\n";
    for (const auto& r : tests.results) {
        out << detail::csv_cell(r.parameter) << ',' << r.test << ',' << format_number(r.statistic) << ','
            << format_number(r.p_value) << ',' << format_number(r.adjusted_p) << ',' << format_number(r.effect_size) << ','
            << r.effect_class << ',' << (r.significant ? "true" : "false") << ',' << (r.testable ? "true" : "false")
            << '\n';
    }
    return out.str();
}

inline std::string metrics_body(const Experiment& exp, const std::vector<std::size_t>& ks, ReportFormat format) {
    const auto m = metrics(exp, ks);
    if (format == ReportFormat::json) {
        return render(to_json(m));
    }
    std::ostringstream out;
    out << "metric,value\n";
    out << "n_trials," << m.n_trials << "\nacc_all," << m.acc_all << "\nn_failed," << m.n_failed << '\n';
    for (const auto& [k, v] : m.acc_k) {
        out << "acc_" << k << ',' << v << '\n';
    }
    return out.str();
}

/// All suggestion fragments for one experiment, plus their merge.
inline nlohmann::json suggestions_json(const Experiment& exp, const EffectReport& report, double threshold,
                                       double alpha) {
    const auto drops = suggest_low_effect_drops(report, threshold);
    RefinementPlan failures;
    const auto failed = failed_group(exp);
    if (failed.member_ids.empty()) {
        failures.notices.push_back("no failed trials; nothing to exclude");
    } else {
        const auto top = builtin_groups(exp).top10;
        const auto tests = parameter_tests(failed, top, exp, alpha);
        failures = suggest_failure_exclusions(exp, failed, top, tests.results);
    }
    auto defaults = suggest_default_updates(report, exp);
    // A parameter proposed for dropping gets no new default.
    defaults.set_defaults.erase(std::remove_if(defaults.set_defaults.begin(), defaults.set_defaults.end(),
                                               [&](const DefaultUpdate& u) { return drops.drop_params.count(u.param); }),
                                defaults.set_defaults.end());
    RefinementPlan merged;
    merged.merge(drops).merge(failures).merge(defaults);
    return {{"low_effect_drops", to_json(drops)},
            {"failure_exclusions", to_json(failures)},
            {"default_updates", to_json(defaults)},
            {"merged", to_json(merged)}};
}

inline std::vector<nlohmann::json> trials_page(const Experiment& exp, const std::vector<int>& ids) {
    std::vector<nlohmann::json> rows;
    rows.reserve(ids.size());
    for (int id : ids) {
        const auto& t = exp.trial(id);
        nlohmann::json config = nlohmann::json::object();
        for (const auto& p : exp.space.params) {
            config[p.name] = detail::value_json(t.config.get(p.name));
        }
        rows.push_back({{"id", t.id}, {"coverage", t.coverage_value}, {"failed", t.failed()}, {"config", config}});
    }
    return rows;
}

} // namespace covtune
