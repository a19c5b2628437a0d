#pragma once

#include "covtune/error.hpp"
#include "covtune/ingest.hpp"
#include "covtune/random.hpp"

#include <json.hpp>

#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace testing_support {

using covtune::ErrorCode;
using covtune::Rng;

struct BundleText {
    std::string parameters, trials, branches, locations;
};

inline BundleText read_bundle(const std::filesystem::path& dir) {
    namespace d = covtune::detail;
    return {d::read_file(dir / "parameters.json"), d::read_file(dir / "trials.csv"), d::read_file(dir / "branches.txt"),
            d::read_file(dir / "locations.json")};
}

inline void write_bundle(const std::filesystem::path& dir, const BundleText& b) {
    namespace d = covtune::detail;
    std::filesystem::create_directories(dir / "src");
    d::write_file(dir / "parameters.json", b.parameters);
    d::write_file(dir / "trials.csv", b.trials);
    d::write_file(dir / "branches.txt", b.branches);
    d::write_file(dir / "locations.json", b.locations);
}

inline std::vector<std::string> split_lines(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

inline std::string join_lines(const std::vector<std::string>& lines) {
    std::string out;
    for (const auto& l : lines) out += l + "\n";
    return out;
}

inline std::vector<std::string> split_cells(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

inline std::string join_cells(const std::vector<std::string>& cells) {
    std::string out;
    for (std::size_t i = 0; i < cells.size(); ++i) out += (i ? "," : "") + cells[i];
    return out;
}

/// One single-field edit that breaks a bundle invariant. `apply` returns false when the
/// bundle has nothing to corrupt in that way.
struct Corruption {
    std::string name;
    std::set<ErrorCode> expected;
    std::function<bool(BundleText&, Rng&)> apply;
};

inline void PrintTo(const Corruption& c, std::ostream* os) { *os << c.name; }

namespace corrupt {

using Lines = std::vector<std::string>;

template <typename F>
bool edit_row(BundleText& b, Rng& rng, F&& f) {
    auto lines = split_lines(b.trials);
    if (lines.size() < 2) return false;
    const auto r = 1 + rng.below(lines.size() - 1);
    auto cells = split_cells(lines[r]);
    if (!f(cells, split_cells(lines[0]), rng)) return false;
    lines[r] = join_cells(cells);
    b.trials = join_lines(lines);
    return true;
}

template <typename F>
bool edit_branch_line(BundleText& b, Rng& rng, F&& f) {
    auto lines = split_lines(b.branches);
    if (lines.empty()) return false;
    const auto r = rng.below(lines.size());
    if (!f(lines, r, rng)) return false;
    b.branches = join_lines(lines);
    return true;
}

inline std::vector<std::string> tokens_after_colon(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line.substr(line.find(':') + 1));
    std::string t;
    while (ss >> t) out.push_back(t);
    return out;
}

template <typename F>
bool edit_json(std::string& text, Rng& rng, F&& f) {
    auto j = nlohmann::json::parse(text);
    if (!f(j, rng)) return false;
    text = j.dump(2);
    return true;
}

} // namespace corrupt

inline std::vector<Corruption> corruption_catalog() {
    using namespace corrupt;
    using E = ErrorCode;
    std::vector<Corruption> c;

    c.push_back({"coverage-mismatch", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells[1] = std::to_string(std::stoll(cells[1]) + 1);
                         return true;
                     });
                 }});
    c.push_back({"coverage-not-integer", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells[1] = "x" + cells[1];
                         return true;
                     });
                 }});
    c.push_back({"coverage-negative", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells[1] = "-" + std::to_string(1 + std::stoll(cells[1]));
                         return true;
                     });
                 }});
    c.push_back({"trial-id-out-of-order", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells[0] = std::to_string(std::stoll(cells[0]) + 100000);
                         return true;
                     });
                 }});
    c.push_back({"trial-id-not-integer", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells[0] = "t" + cells[0];
                         return true;
                     });
                 }});
    c.push_back({"row-missing-field", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells.pop_back();
                         return true;
                     });
                 }});
    c.push_back({"row-extra-field", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_row(b, rng, [](auto& cells, const auto&, Rng&) {
                         cells.push_back("1");
                         return true;
                     });
                 }});
    c.push_back({"config-outside-domain", {E::domain_violation, E::parse_error}, [](BundleText& b, Rng& rng) {
                     const auto params = nlohmann::json::parse(b.parameters);
                     return edit_row(b, rng, [&](auto& cells, const auto& header, Rng& r) {
                         if (header.size() <= 2) return false;
                         const auto col = 2 + r.below(header.size() - 2);
                         for (const auto& p : params) {
                             if (p["name"] != header[col]) continue;
                             const auto kind = p["kind"].get<std::string>();
                             if (kind == "binary") cells[col] = "maybe";
                             else if (kind == "nominal") cells[col] = "not_a_symbol";
                             else cells[col] = covtune::format_number(p["domain"][1].get<double>() + 1.0);
                             return true;
                         }
                         return false;
                     });
                 }});
    c.push_back({"config-not-a-number", {E::domain_violation}, [](BundleText& b, Rng& rng) {
                     const auto params = nlohmann::json::parse(b.parameters);
                     return edit_row(b, rng, [&](auto& cells, const auto& header, Rng&) {
                         for (std::size_t col = 2; col < header.size(); ++col) {
                             for (const auto& p : params) {
                                 if (p["name"] == header[col] && p["kind"] == "continuous") {
                                     cells[col] = "abc";
                                     return true;
                                 }
                             }
                         }
                         return false;
                     });
                 }});
    c.push_back({"header-unknown-column", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     auto lines = split_lines(b.trials);
                     auto cells = split_cells(lines[0]);
                     if (cells.size() <= 2) return false;
                     cells[2 + rng.below(cells.size() - 2)] = "no_such_param";
                     lines[0] = join_cells(cells);
                     b.trials = join_lines(lines);
                     return true;
                 }});
    c.push_back({"header-duplicate-column", {E::schema_error}, [](BundleText& b, Rng&) {
                     auto lines = split_lines(b.trials);
                     auto cells = split_cells(lines[0]);
                     if (cells.size() <= 3) return false;
                     cells[3] = cells[2];
                     lines[0] = join_cells(cells);
                     b.trials = join_lines(lines);
                     return true;
                 }});
    c.push_back({"header-bad-first-column", {E::parse_error}, [](BundleText& b, Rng&) {
                     auto lines = split_lines(b.trials);
                     lines[0].replace(0, 8, "trial_no");
                     b.trials = join_lines(lines);
                     return true;
                 }});
    c.push_back({"branches-missing-line", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         lines.erase(lines.begin() + static_cast<std::ptrdiff_t>(r));
                         return true;
                     });
                 }});
    c.push_back({"branches-duplicate-line", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         lines.push_back(lines[r]);
                         return true;
                     });
                 }});
    c.push_back({"branches-unknown-trial", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         lines[r] = std::to_string(lines.size() + 7) + lines[r].substr(lines[r].find(':'));
                         return true;
                     });
                 }});
    c.push_back({"branches-extra-branch", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     const auto locs = nlohmann::json::parse(b.locations);
                     return edit_branch_line(b, rng, [&](Lines& lines, std::size_t r, Rng&) {
                         const auto have = tokens_after_colon(lines[r]);
                         for (const auto& [key, _] : locs.items()) {
                             if (std::find(have.begin(), have.end(), key) == have.end()) {
                                 lines[r] += " " + key;
                                 return true;
                             }
                         }
                         return false;
                     });
                 }});
    c.push_back({"branches-missing-branch", {E::consistency_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         auto toks = tokens_after_colon(lines[r]);
                         if (toks.empty()) return false;
                         toks.pop_back();
                         std::string line = lines[r].substr(0, lines[r].find(':') + 1);
                         for (const auto& t : toks) line += " " + t;
                         lines[r] = line;
                         return true;
                     });
                 }});
    c.push_back({"branches-bad-token", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         lines[r] += " 12x";
                         return true;
                     });
                 }});
    c.push_back({"branches-repeated-branch", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         const auto toks = tokens_after_colon(lines[r]);
                         if (toks.empty()) return false;
                         lines[r] += " " + toks.front();
                         return true;
                     });
                 }});
    c.push_back({"branches-no-colon", {E::parse_error}, [](BundleText& b, Rng& rng) {
                     return edit_branch_line(b, rng, [](Lines& lines, std::size_t r, Rng&) {
                         lines[r][lines[r].find(':')] = ' ';
                         return true;
                     });
                 }});
    c.push_back({"locations-line-zero", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.locations, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         auto it = j.begin();
                         std::advance(it, static_cast<std::ptrdiff_t>(r.below(j.size())));
                         (*it)["line"] = 0;
                         return true;
                     });
                 }});
    c.push_back({"locations-line-string", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.locations, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         auto it = j.begin();
                         std::advance(it, static_cast<std::ptrdiff_t>(r.below(j.size())));
                         (*it)["line"] = "7";
                         return true;
                     });
                 }});
    c.push_back({"locations-missing-file", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.locations, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         auto it = j.begin();
                         std::advance(it, static_cast<std::ptrdiff_t>(r.below(j.size())));
                         it->erase("file");
                         return true;
                     });
                 }});
    c.push_back({"locations-bad-key", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.locations, rng, [](nlohmann::json& j, Rng&) {
                         j["b99"] = {{"file", "a.c"}, {"line", 1}};
                         return true;
                     });
                 }});
    c.push_back({"locations-syntax", {E::parse_error}, [](BundleText& b, Rng&) {
                     b.locations = b.locations.substr(0, b.locations.size() / 2);
                     return true;
                 }});
    c.push_back({"params-unknown-kind", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.parameters, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         j[r.below(j.size())]["kind"] = "ordinal";
                         return true;
                     });
                 }});
    c.push_back({"params-default-outside-domain", {E::domain_violation, E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.parameters, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         auto& p = j[r.below(j.size())];
                         const auto kind = p["kind"].get<std::string>();
                         if (kind == "binary") p["default"] = "yes";
                         else if (kind == "nominal") p["default"] = "not_a_symbol";
                         else p["default"] = p["domain"][1].get<double>() + 1.0;
                         return true;
                     });
                 }});
    c.push_back({"params-bad-domain", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.parameters, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         auto& p = j[r.below(j.size())];
                         p["domain"] = p["kind"] == "continuous" ? nlohmann::json::array({1.0}) : nlohmann::json("x");
                         return true;
                     });
                 }});
    c.push_back({"params-duplicate-name", {E::schema_error, E::domain_violation, E::invalid_argument},
                 [](BundleText& b, Rng& rng) {
                     return edit_json(b.parameters, rng, [](nlohmann::json& j, Rng&) {
                         if (j.size() < 2) return false;
                         j[1]["name"] = j[0]["name"];
                         return true;
                     });
                 }});
    c.push_back({"params-missing-name", {E::schema_error}, [](BundleText& b, Rng& rng) {
                     return edit_json(b.parameters, rng, [](nlohmann::json& j, Rng& r) {
                         if (j.empty()) return false;
                         j[r.below(j.size())].erase("name");
                         return true;
                     });
                 }});
    c.push_back({"params-syntax", {E::parse_error}, [](BundleText& b, Rng&) {
                     b.parameters += "]";
                     return true;
                 }});
    return c;
}

} // namespace testing_support
