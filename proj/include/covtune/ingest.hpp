#pragma once

#include "core.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <vector>

/**
 * @file ingest.hpp
 *
 * @brief The five-file experiment bundle: load, validate and write back.
 *
 * Layout of a bundle directory (names are the defaults used by `ExperimentBundle::in`):
 *
 * - `parameters.json`: array of `{name, label, kind, default, domain, description}`
 * - `trials.csv`: header `trial_id,coverage,<param names...>`, empty cell = unset
 * - `branches.txt`: one line per trial, `<trial_id>: <space-separated branch ids>`
 * - `locations.json`: object mapping branch id string to `{file, line}`
 * - `src/`: the target program's source tree
 */

namespace covtune {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct ExperimentBundle {
    fs::path parameters_file;
    fs::path trials_file;
    fs::path branch_sets_file;
    fs::path branch_locations_file;
    fs::path source_root;

    static ExperimentBundle in(const fs::path& dir) {
        return ExperimentBundle{dir / "parameters.json", dir / "trials.csv", dir / "branches.txt",
                                dir / "locations.json", dir / "src"};
    }
};

enum class SourceMode { copy, symlink, skip };

namespace detail {

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        fail(ErrorCode::io_error, "cannot read " + path.string());
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

inline void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        fail(ErrorCode::io_error, "cannot write " + path.string());
    }
    out << content;
    if (!out) {
        fail(ErrorCode::io_error, "write failed for " + path.string());
    }
}

[[noreturn]] inline void parse_fail(const fs::path& file, std::size_t line, const std::string& what) {
    fail(ErrorCode::parse_error, file.string() + ":" + std::to_string(line) + ": " + what);
}

inline json parse_json_file(const fs::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
        const auto line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(upto), '\n'));
        parse_fail(path, line, e.what());
    }
}

/// RFC 4180 field splitting for a single physical line.
inline std::vector<std::string> split_csv(const std::string& line, const fs::path& file, std::size_t lineno) {
    std::vector<std::string> fields;
    std::string field;
    bool quoted = false;
    bool was_quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            if (!field.empty() || was_quoted) {
                parse_fail(file, lineno, "unexpected quote");
            }
            quoted = true;
            was_quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
            was_quoted = false;
        } else {
            if (was_quoted) {
                parse_fail(file, lineno, "text after closing quote");
            }
            field.push_back(c);
        }
    }
    if (quoted) {
        parse_fail(file, lineno, "unterminated quote");
    }
    fields.push_back(std::move(field));
    return fields;
}

inline std::string csv_cell(const std::string& text) {
    if (text.find_first_of(",\"\n\r") == std::string::npos) {
        return text;
    }
    std::string out = "\"";
    for (char c : text) {
        if (c == '"') {
            out += "\"\"";
        } else {
            out.push_back(c);
        }
    }
    out.push_back('"');
    return out;
}

inline std::vector<std::string> read_lines(const fs::path& path) {
    const std::string text = read_file(path);
    std::vector<std::string> lines;
    std::string current;
    std::istringstream in(text);
    while (std::getline(in, current)) {
        if (!current.empty() && current.back() == '\r') {
            current.pop_back();
        }
        lines.push_back(current);
    }
    return lines;
}

inline bool parse_int64(std::string_view text, std::int64_t& out) {
    if (text.empty()) {
        return false;
    }
    std::size_t i = 0;
    bool negative = false;
    if (text[0] == '-' || text[0] == '+') {
        negative = text[0] == '-';
        i = 1;
        if (text.size() == 1) {
            return false;
        }
    }
    std::int64_t value = 0;
    for (; i < text.size(); ++i) {
        if (text[i] < '0' || text[i] > '9') {
            return false;
        }
        if (value > (std::numeric_limits<std::int64_t>::max() - (text[i] - '0')) / 10) {
            return false;
        }
        value = value * 10 + (text[i] - '0');
    }
    out = negative ? -value : value;
    return true;
}

inline std::string symbol_from_json(const json& v, const fs::path& file, const std::string& param) {
    if (v.is_string()) {
        return v.get<std::string>();
    }
    if (v.is_number()) {
        return format_number(v.get<double>());
    }
    parse_fail(file, 1, "nominal value of parameter '" + param + "' must be a string or number");
}

} // namespace detail

inline ParameterDef parameter_from_json(const json& j, const fs::path& file = "parameters.json") {
    if (!j.is_object()) {
        fail(ErrorCode::schema_error, file.string() + ": parameter entry is not an object");
    }
    ParameterDef def;
    if (!j.contains("name") || !j["name"].is_string()) {
        fail(ErrorCode::schema_error, file.string() + ": parameter without a string 'name'");
    }
    def.name = j["name"].get<std::string>();
    def.label = j.value("label", def.name);
    def.description = j.value("description", std::string{});
    if (!j.contains("kind") || !j["kind"].is_string()) {
        fail(ErrorCode::schema_error, file.string() + ": parameter '" + def.name + "' has no kind");
    }
    const auto kind = parse_kind(j["kind"].get<std::string>());
    if (!kind) {
        fail(ErrorCode::schema_error,
             file.string() + ": parameter '" + def.name + "' has unknown kind '" + j["kind"].get<std::string>() + "'");
    }
    def.kind = *kind;
    const json domain = j.value("domain", json());
    switch (def.kind) {
    case ParamKind::binary:
        if (domain.is_null()) {
            def.truth_values = {false, true};
        } else {
            if (!domain.is_array() || domain.empty()) {
                fail(ErrorCode::schema_error, file.string() + ": binary domain of '" + def.name + "' must be a non-empty array");
            }
            def.truth_values.clear();
            for (const auto& v : domain) {
                if (!v.is_boolean()) {
                    fail(ErrorCode::schema_error, file.string() + ": binary domain of '" + def.name + "' holds a non-boolean");
                }
                const bool b = v.get<bool>();
                if (std::find(def.truth_values.begin(), def.truth_values.end(), b) != def.truth_values.end()) {
                    fail(ErrorCode::domain_violation, file.string() + ": duplicate value in domain of '" + def.name + "'");
                }
                def.truth_values.push_back(b);
            }
            std::sort(def.truth_values.begin(), def.truth_values.end());
        }
        break;
    case ParamKind::continuous:
        if (!domain.is_array() || domain.size() != 2 || !domain[0].is_number() || !domain[1].is_number()) {
            fail(ErrorCode::schema_error, file.string() + ": continuous domain of '" + def.name + "' must be [lo, hi]");
        }
        def.range = Range{domain[0].get<double>(), domain[1].get<double>()};
        break;
    case ParamKind::nominal:
        if (!domain.is_array()) {
            fail(ErrorCode::schema_error, file.string() + ": nominal domain of '" + def.name + "' must be an array");
        }
        for (const auto& v : domain) {
            def.symbols.push_back(detail::symbol_from_json(v, file, def.name));
        }
        break;
    }
    if (j.contains("default") && !j["default"].is_null()) {
        const json& d = j["default"];
        switch (def.kind) {
        case ParamKind::binary:
            if (!d.is_boolean()) {
                fail(ErrorCode::schema_error, file.string() + ": default of '" + def.name + "' must be a boolean");
            }
            def.default_value = d.get<bool>();
            break;
        case ParamKind::continuous:
            if (!d.is_number()) {
                fail(ErrorCode::schema_error, file.string() + ": default of '" + def.name + "' must be a number");
            }
            def.default_value = d.get<double>();
            break;
        case ParamKind::nominal:
            def.default_value = detail::symbol_from_json(d, file, def.name);
            break;
        }
    }
    def.validate();
    return def;
}

inline json parameter_to_json(const ParameterDef& def) {
    json j;
    j["name"] = def.name;
    j["label"] = def.label;
    j["kind"] = std::string(to_string(def.kind));
    switch (def.kind) {
    case ParamKind::binary: {
        json domain = json::array();
        for (bool b : def.truth_values) {
            domain.push_back(b);
        }
        j["domain"] = domain;
        j["default"] = def.has_default() ? json(std::get<bool>(def.default_value)) : json();
        break;
    }
    case ParamKind::continuous:
        j["domain"] = json::array({def.range.lo, def.range.hi});
        j["default"] = def.has_default() ? json(std::get<double>(def.default_value)) : json();
        break;
    case ParamKind::nominal:
        j["domain"] = def.symbols;
        j["default"] = def.has_default() ? json(std::get<std::string>(def.default_value)) : json();
        break;
    }
    j["description"] = def.description;
    return j;
}

inline ParameterSpace parameter_space_from_json(const json& j, const fs::path& file = "parameters.json") {
    if (!j.is_array()) {
        fail(ErrorCode::schema_error, file.string() + ": top level must be an array of parameters");
    }
    ParameterSpace space;
    for (const auto& entry : j) {
        space.params.push_back(parameter_from_json(entry, file));
    }
    space.validate();
    return space;
}

inline json parameter_space_to_json(const ParameterSpace& space) {
    json out = json::array();
    for (const auto& p : space.params) {
        out.push_back(parameter_to_json(p));
    }
    return out;
}

inline ParameterSpace load_parameter_space(const fs::path& path) {
    return parameter_space_from_json(detail::parse_json_file(path), path);
}

inline void export_parameter_space(const ParameterSpace& space, const fs::path& path) {
    space.validate();
    detail::write_file(path, parameter_space_to_json(space).dump(2) + "\n");
}

/**
 * Loads and cross-validates a bundle. Unlocated branch ids end up in `Experiment::warnings`.
 */
inline Experiment load_experiment(const ExperimentBundle& bundle) {
    Experiment exp;
    exp.space = load_parameter_space(bundle.parameters_file);

    // trials.csv
    struct Row {
        std::int64_t coverage = 0;
        Configuration config;
    };
    std::vector<Row> rows;
    {
        const auto& file = bundle.trials_file;
        const auto lines = detail::read_lines(file);
        if (lines.empty()) {
            detail::parse_fail(file, 1, "missing header");
        }
        const auto header = detail::split_csv(lines[0], file, 1);
        if (header.size() < 2 || header[0] != "trial_id" || header[1] != "coverage") {
            detail::parse_fail(file, 1, "header must start with trial_id,coverage");
        }
        std::vector<std::size_t> columns;
        std::set<std::string> seen;
        for (std::size_t c = 2; c < header.size(); ++c) {
            const auto idx = exp.space.index_of(header[c]);
            if (!idx) {
                fail(ErrorCode::schema_error, file.string() + ":1: unknown parameter column '" + header[c] + "'");
            }
            if (!seen.insert(header[c]).second) {
                fail(ErrorCode::schema_error, file.string() + ":1: duplicate parameter column '" + header[c] + "'");
            }
            columns.push_back(*idx);
        }
        for (std::size_t l = 1; l < lines.size(); ++l) {
            if (lines[l].empty()) {
                continue;
            }
            const std::size_t lineno = l + 1;
            const auto cells = detail::split_csv(lines[l], file, lineno);
            if (cells.size() != header.size()) {
                detail::parse_fail(file, lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                                     std::to_string(cells.size()));
            }
            std::int64_t id = 0;
            if (!detail::parse_int64(cells[0], id)) {
                detail::parse_fail(file, lineno, "trial_id '" + cells[0] + "' is not an integer");
            }
            if (id != static_cast<std::int64_t>(rows.size()) + 1) {
                fail(ErrorCode::consistency_error, file.string() + ":" + std::to_string(lineno) + ": trial id " +
                                                       std::to_string(id) + " breaks the contiguous order (expected " +
                                                       std::to_string(rows.size() + 1) + ")");
            }
            Row row;
            if (!detail::parse_int64(cells[1], row.coverage) || row.coverage < 0) {
                detail::parse_fail(file, lineno, "coverage '" + cells[1] + "' is not a non-negative integer");
            }
            for (std::size_t c = 0; c < columns.size(); ++c) {
                const auto& def = exp.space.params[columns[c]];
                ParamValue value;
                try {
                    value = def.parse_value(cells[c + 2]);
                } catch (const Error& e) {
                    fail(e.code(), file.string() + ":" + std::to_string(lineno) + ": " + e.what());
                }
                if (!is_unset(value) && !def.contains(value)) {
                    fail(ErrorCode::domain_violation, file.string() + ":" + std::to_string(lineno) + ": value '" +
                                                          cells[c + 2] + "' outside the domain of '" + def.name + "'");
                }
                row.config.set(def.name, std::move(value));
            }
            rows.push_back(std::move(row));
        }
    }

    // branches.txt
    std::vector<std::vector<std::int64_t>> sets(rows.size());
    std::vector<bool> seen_trial(rows.size(), false);
    std::set<std::int64_t> all_ids;
    {
        const auto& file = bundle.branch_sets_file;
        const auto lines = detail::read_lines(file);
        for (std::size_t l = 0; l < lines.size(); ++l) {
            const std::size_t lineno = l + 1;
            const std::string& line = lines[l];
            if (line.empty()) {
                continue;
            }
            const auto colon = line.find(':');
            if (colon == std::string::npos) {
                detail::parse_fail(file, lineno, "expected '<trial_id>: <branch ids>'");
            }
            std::int64_t id = 0;
            if (!detail::parse_int64(line.substr(0, colon), id)) {
                detail::parse_fail(file, lineno, "trial id '" + line.substr(0, colon) + "' is not an integer");
            }
            if (id < 1 || id > static_cast<std::int64_t>(rows.size())) {
                fail(ErrorCode::consistency_error,
                     file.string() + ":" + std::to_string(lineno) + ": unknown trial id " + std::to_string(id));
            }
            const auto t = static_cast<std::size_t>(id - 1);
            if (seen_trial[t]) {
                fail(ErrorCode::consistency_error,
                     file.string() + ":" + std::to_string(lineno) + ": duplicate line for trial " + std::to_string(id));
            }
            seen_trial[t] = true;
            std::istringstream rest(line.substr(colon + 1));
            std::string token;
            std::set<std::int64_t> unique;
            while (rest >> token) {
                std::int64_t b = 0;
                if (!detail::parse_int64(token, b)) {
                    detail::parse_fail(file, lineno, "branch id '" + token + "' is not an integer");
                }
                if (!unique.insert(b).second) {
                    detail::parse_fail(file, lineno, "branch id " + token + " listed twice");
                }
                sets[t].push_back(b);
                all_ids.insert(b);
            }
        }
        for (std::size_t t = 0; t < rows.size(); ++t) {
            if (!seen_trial[t]) {
                fail(ErrorCode::consistency_error, file.string() + ": no branch set for trial " + std::to_string(t + 1));
            }
        }
    }

    // locations.json
    std::map<std::int64_t, SourceLocation> located;
    {
        const auto& file = bundle.branch_locations_file;
        const json j = detail::parse_json_file(file);
        if (!j.is_object()) {
            fail(ErrorCode::schema_error, file.string() + ": top level must be an object");
        }
        for (const auto& [key, value] : j.items()) {
            std::int64_t b = 0;
            if (!detail::parse_int64(key, b)) {
                fail(ErrorCode::schema_error, file.string() + ": branch key '" + key + "' is not an integer");
            }
            if (!value.is_object() || !value.contains("file") || !value["file"].is_string() || !value.contains("line") ||
                !value["line"].is_number_integer()) {
                fail(ErrorCode::schema_error, file.string() + ": branch " + key + " needs {file, line}");
            }
            SourceLocation loc{value["file"].get<std::string>(), value["line"].get<int>()};
            if (loc.line < 1) {
                fail(ErrorCode::schema_error, file.string() + ": branch " + key + " has line < 1");
            }
            located.emplace(b, std::move(loc));
            all_ids.insert(b);
        }
    }

    exp.branch_ids.assign(all_ids.begin(), all_ids.end());
    exp.n_branches = exp.branch_ids.size();
    exp.locations.resize(exp.n_branches);
    std::vector<std::int64_t> unlocated;
    for (std::size_t b = 0; b < exp.n_branches; ++b) {
        auto it = located.find(exp.branch_ids[b]);
        if (it != located.end()) {
            exp.locations[b] = it->second;
        } else {
            unlocated.push_back(exp.branch_ids[b]);
        }
    }
    if (!unlocated.empty()) {
        std::string msg = std::to_string(unlocated.size()) + " branch id(s) without a location:";
        for (std::size_t i = 0; i < unlocated.size() && i < 20; ++i) {
            msg += " " + std::to_string(unlocated[i]);
        }
        exp.warnings.push_back(msg);
    }

    exp.trials.reserve(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
        Trial trial;
        trial.id = static_cast<int>(t + 1);
        trial.config = std::move(rows[t].config);
        trial.coverage_value = rows[t].coverage;
        trial.coverage = CoverageVector(exp.n_branches);
        for (auto b : sets[t]) {
            trial.coverage.set(*exp.dense_index(b));
        }
        if (static_cast<std::int64_t>(trial.coverage.popcount()) != trial.coverage_value) {
            fail(ErrorCode::consistency_error, "trial " + std::to_string(trial.id) + " claims coverage " +
                                                   std::to_string(trial.coverage_value) + " but its branch set has " +
                                                   std::to_string(trial.coverage.popcount()) + " branches");
        }
        exp.trials.push_back(std::move(trial));
    }
    exp.source_root = bundle.source_root.string();
    return exp;
}

inline Experiment load_experiment(const fs::path& dir) { return load_experiment(ExperimentBundle::in(dir)); }

inline std::string trials_csv(const Experiment& exp) {
    std::string out = "trial_id,coverage";
    for (const auto& p : exp.space.params) {
        out += "," + detail::csv_cell(p.name);
    }
    out += "\n";
    for (const auto& t : exp.trials) {
        out += std::to_string(t.id) + "," + std::to_string(t.coverage_value);
        for (const auto& p : exp.space.params) {
            out += "," + detail::csv_cell(value_text(t.config.get(p.name)));
        }
        out += "\n";
    }
    return out;
}

inline std::string branch_sets_text(const Experiment& exp) {
    std::string out;
    for (const auto& t : exp.trials) {
        out += std::to_string(t.id) + ":";
        for (auto b : t.coverage.indices()) {
            out += " " + std::to_string(exp.branch_ids[b]);
        }
        out += "\n";
    }
    return out;
}

inline json branch_locations_json(const Experiment& exp) {
    json out = json::object();
    for (std::size_t b = 0; b < exp.n_branches; ++b) {
        if (exp.locations[b]) {
            out[std::to_string(exp.branch_ids[b])] = {{"file", exp.locations[b]->file}, {"line", exp.locations[b]->line}};
        }
    }
    return out;
}

/**
 * Writes all five artifacts into `dir` (created if missing).
 */
inline ExperimentBundle save_experiment(const Experiment& exp, const fs::path& dir, SourceMode mode = SourceMode::copy) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        fail(ErrorCode::io_error, "cannot create " + dir.string() + ": " + ec.message());
    }
    const auto bundle = ExperimentBundle::in(dir);
    export_parameter_space(exp.space, bundle.parameters_file);
    detail::write_file(bundle.trials_file, trials_csv(exp));
    detail::write_file(bundle.branch_sets_file, branch_sets_text(exp));
    detail::write_file(bundle.branch_locations_file, branch_locations_json(exp).dump(2) + "\n");

    const fs::path source = exp.source_root;
    const bool have_source = !exp.source_root.empty() && fs::exists(source);
    if (have_source && fs::exists(bundle.source_root) && fs::equivalent(source, bundle.source_root)) {
        return bundle;
    }
    fs::remove_all(bundle.source_root, ec);
    if (!have_source || mode == SourceMode::skip) {
        fs::create_directories(bundle.source_root, ec);
    } else if (mode == SourceMode::symlink) {
        fs::create_directory_symlink(fs::absolute(source), bundle.source_root, ec);
    } else {
        fs::copy(source, bundle.source_root, fs::copy_options::recursive, ec);
    }
    if (ec) {
        fail(ErrorCode::io_error, "cannot materialize source tree at " + bundle.source_root.string() + ": " + ec.message());
    }
    return bundle;
}

} // namespace covtune
