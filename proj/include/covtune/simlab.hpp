#pragma once

#include "core.hpp"
#include "ingest.hpp"
#include "random.hpp"

#include <algorithm>
#include <climits>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

/**
 * @file simlab.hpp
 *
 * @brief Synthetic engine, toy tuner and benchmark programs with planted ground truth.
 *
 * A program is a forest of branch chains. Walking a chain covers branch d only if the
 * walk reached branch d-1 and a Bernoulli draw with the branch's reach probability
 * succeeds. Parameter values scale reach probabilities of selected chains; some values
 * make the engine fail with zero coverage.
 */

namespace covtune {

/// A chain of nested branches; `reach[d]` is the probability of entering depth d.
struct Chain {
    std::string kind;
    std::string file;
    int first_line = 1;
    std::vector<double> reach;
};

/// Matches a discrete value exactly, or a continuous value inside a range.
struct ValueMatch {
    ParamValue value;
    std::optional<Range> range;

    bool matches(const ParamValue& v) const {
        if (range) {
            const double* d = std::get_if<double>(&v);
            return d && range->contains(*d);
        }
        return !is_unset(v) && v == value;
    }
};

struct Modifier {
    std::string param;
    ValueMatch match;
    std::string chain_kind; ///< empty matches every chain
    int min_depth = 0;
    int max_depth = INT_MAX;
    double factor = 1.0;
};

struct FailureRule {
    std::string param;
    ValueMatch match;
};

struct SyntheticProgram {
    std::string name;
    ParameterSpace space; ///< full engine space; its defaults are the engine defaults
    std::vector<Chain> chains;
    std::vector<Modifier> modifiers;
    std::vector<FailureRule> failures;
    std::size_t walk_budget = 0; ///< branch attempts per trial, 0 = unlimited
    std::string ground_truth;

    std::size_t n_branches() const {
        std::size_t n = 0;
        for (const auto& c : chains) n += c.reach.size();
        return n;
    }

    /// Branch id of depth d in chain c. Ids sort in (chain, depth) order.
    static std::int64_t branch_id(std::size_t chain, std::size_t depth) {
        return static_cast<std::int64_t>((chain + 1) * 1000 + depth);
    }

    std::vector<std::int64_t> branch_ids() const {
        std::vector<std::int64_t> ids;
        ids.reserve(n_branches());
        for (std::size_t c = 0; c < chains.size(); ++c) {
            for (std::size_t d = 0; d < chains[c].reach.size(); ++d) {
                ids.push_back(branch_id(c, d));
            }
        }
        return ids;
    }

    /// Value the engine runs with: the configured one, else the engine default.
    ParamValue effective(const Configuration& config, const std::string& param) const {
        const auto v = config.get(param);
        if (!is_unset(v)) {
            return v;
        }
        const auto idx = space.index_of(param);
        return idx ? space.params[*idx].default_value : ParamValue{};
    }
};

/// Per-(chain, depth) reach probability after applying matching modifiers.
inline std::vector<std::vector<double>> reach_table(const SyntheticProgram& prog, const Configuration& config) {
    std::vector<std::vector<double>> table;
    table.reserve(prog.chains.size());
    for (const auto& chain : prog.chains) {
        table.push_back(chain.reach);
    }
    for (const auto& m : prog.modifiers) {
        if (!m.match.matches(prog.effective(config, m.param))) {
            continue;
        }
        for (std::size_t c = 0; c < prog.chains.size(); ++c) {
            if (!m.chain_kind.empty() && prog.chains[c].kind != m.chain_kind) {
                continue;
            }
            for (std::size_t d = 0; d < table[c].size(); ++d) {
                const int depth = static_cast<int>(d);
                if (depth >= m.min_depth && depth <= m.max_depth) {
                    table[c][d] *= m.factor;
                }
            }
        }
    }
    for (auto& row : table) {
        for (auto& p : row) p = std::clamp(p, 0.0, 1.0);
    }
    return table;
}

inline bool engine_fails(const SyntheticProgram& prog, const Configuration& config) {
    return std::any_of(prog.failures.begin(), prog.failures.end(), [&](const FailureRule& f) {
        return f.match.matches(prog.effective(config, f.param));
    });
}

/**
 * Runs one trial. Chains are walked in order with one uniform draw per attempted
 * branch. The returned trial has id 0.
 */
inline Trial run_engine(const SyntheticProgram& prog, const Configuration& config, std::uint64_t seed) {
    config.validate(prog.space);
    Trial trial;
    trial.config = config;
    trial.coverage = CoverageVector(prog.n_branches());
    if (engine_fails(prog, config)) {
        return trial;
    }
    const auto table = reach_table(prog, config);
    Rng rng(seed);
    std::size_t attempts = 0;
    std::size_t offset = 0;
    for (std::size_t c = 0; c < table.size(); ++c) {
        for (std::size_t d = 0; d < table[c].size(); ++d) {
            if (prog.walk_budget && attempts == prog.walk_budget) {
                trial.coverage_value = static_cast<std::int64_t>(trial.coverage.popcount());
                return trial;
            }
            ++attempts;
            if (rng.uniform() >= table[c][d]) {
                break;
            }
            trial.coverage.set(offset + d);
        }
        offset += table[c].size();
    }
    trial.coverage_value = static_cast<std::int64_t>(trial.coverage.popcount());
    return trial;
}

struct TunerSettings {
    double epsilon = 0.2;           ///< per-parameter exploration probability
    double ew_rate = 0.1;           ///< weight of a new reward in the running mean
    std::size_t continuous_arms = 5; ///< equal-width sub-intervals per continuous range
};

struct TunerArm {
    std::string label;
    ParamValue value;           ///< discrete arms
    std::optional<Range> range; ///< continuous arms
};

struct TunerParam {
    std::string name;
    ParamKind kind = ParamKind::binary;
    ParamValue default_value;
    std::vector<TunerArm> arms;
    std::optional<std::size_t> default_arm;
    std::vector<double> mean;
    std::vector<std::size_t> pulls;
    std::vector<double> probability;
};

struct Proposal {
    Configuration config;
    std::vector<std::size_t> arms; ///< chosen arm per tuner parameter
};

/**
 * Coordinate-wise epsilon-greedy tuner. Each parameter picks a uniform arm with
 * probability epsilon, otherwise the arm with the best exponentially weighted mean
 * reward (the default's arm until something has been observed).
 */
class TunerState {
public:
    explicit TunerState(const ParameterSpace& space, TunerSettings settings = {}) : settings_(settings) {
        space.validate();
        if (!(settings.epsilon >= 0.0 && settings.epsilon <= 1.0)) {
            fail(ErrorCode::invalid_argument, "epsilon must lie in [0, 1]");
        }
        if (!(settings.ew_rate > 0.0 && settings.ew_rate <= 1.0)) {
            fail(ErrorCode::invalid_argument, "ew_rate must lie in (0, 1]");
        }
        if (settings.continuous_arms < 1) {
            fail(ErrorCode::invalid_argument, "continuous_arms must be positive");
        }
        for (const auto& def : space.params) {
            TunerParam p;
            p.name = def.name;
            p.kind = def.kind;
            p.default_value = def.default_value;
            switch (def.kind) {
            case ParamKind::binary:
                for (bool v : def.truth_values) p.arms.push_back({v ? "true" : "false", v, std::nullopt});
                break;
            case ParamKind::nominal:
                for (const auto& s : def.symbols) p.arms.push_back({s, s, std::nullopt});
                break;
            case ParamKind::continuous: {
                const double lo = def.range.lo, hi = def.range.hi;
                const std::size_t k = lo == hi ? 1 : settings.continuous_arms;
                for (std::size_t i = 0; i < k; ++i) {
                    const double a = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(k);
                    const double b = i + 1 == k ? hi : lo + (hi - lo) * static_cast<double>(i + 1) / static_cast<double>(k);
                    Range r{a, b};
                    p.arms.push_back({"[" + format_number(a) + ", " + format_number(b) + "]", ParamValue{}, r});
                }
                break;
            }
            }
            if (def.has_default()) {
                for (std::size_t a = 0; a < p.arms.size(); ++a) {
                    const auto& arm = p.arms[a];
                    const bool hit = arm.range ? arm.range->contains(std::get<double>(def.default_value))
                                               : arm.value == def.default_value;
                    if (hit) {
                        p.default_arm = a;
                        break;
                    }
                }
            }
            p.mean.assign(p.arms.size(), 0.0);
            p.pulls.assign(p.arms.size(), 0);
            params_.push_back(std::move(p));
        }
        for (auto& p : params_) refresh(p);
    }

    const std::vector<TunerParam>& params() const { return params_; }
    const TunerSettings& settings() const { return settings_; }
    const std::vector<double>& rewards() const { return rewards_; }

    std::size_t greedy_arm(const TunerParam& p) const {
        std::optional<std::size_t> best;
        for (std::size_t a = 0; a < p.arms.size(); ++a) {
            if (p.pulls[a] > 0 && (!best || p.mean[a] > p.mean[*best])) {
                best = a;
            }
        }
        if (best) return *best;
        return p.default_arm.value_or(0);
    }

    Proposal propose(Rng& rng) const {
        Proposal out;
        for (const auto& p : params_) {
            const bool explore = rng.uniform() < settings_.epsilon;
            const std::size_t arm = explore ? static_cast<std::size_t>(rng.below(p.arms.size())) : greedy_arm(p);
            const auto& a = p.arms[arm];
            ParamValue v = a.value;
            if (a.range) {
                if (!explore && p.default_arm == arm) {
                    v = p.default_value;
                } else {
                    v = rng.uniform(a.range->lo, a.range->hi);
                }
            }
            out.config.set(p.name, v);
            out.arms.push_back(arm);
        }
        return out;
    }

    void observe(const Proposal& proposal, double reward) {
        if (proposal.arms.size() != params_.size()) {
            fail(ErrorCode::invalid_argument, "proposal does not match the tuner's parameters");
        }
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            const auto a = proposal.arms[i];
            p.mean[a] = p.pulls[a] == 0 ? reward : (1.0 - settings_.ew_rate) * p.mean[a] + settings_.ew_rate * reward;
            ++p.pulls[a];
            refresh(p);
        }
        rewards_.push_back(reward);
    }

private:
    void refresh(TunerParam& p) const {
        const double k = static_cast<double>(p.arms.size());
        p.probability.assign(p.arms.size(), settings_.epsilon / k);
        p.probability[greedy_arm(p)] += 1.0 - settings_.epsilon;
    }

    TunerSettings settings_;
    std::vector<TunerParam> params_;
    std::vector<double> rewards_;
};

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t index) {
    std::uint64_t s = seed ^ (0x9e3779b97f4a7c15ULL * (index + 1));
    return splitmix64(s);
}

/// Tunes `space` for `n_trials` runs of the synthetic engine; trial ids are 1..n.
inline Experiment run_experiment(const SyntheticProgram& prog, const ParameterSpace& space, TunerState& tuner,
                                 std::size_t n_trials, std::uint64_t seed) {
    for (const auto& def : space.params) {
        if (!prog.space.index_of(def.name)) {
            fail(ErrorCode::unknown_parameter, "program has no parameter '" + def.name + "'");
        }
    }
    Experiment exp;
    exp.space = space;
    exp.n_branches = prog.n_branches();
    exp.branch_ids = prog.branch_ids();
    exp.locations.reserve(exp.n_branches);
    for (const auto& chain : prog.chains) {
        for (std::size_t d = 0; d < chain.reach.size(); ++d) {
            exp.locations.push_back(SourceLocation{chain.file, chain.first_line + static_cast<int>(d)});
        }
    }
    Rng rng(seed);
    exp.trials.reserve(n_trials);
    for (std::size_t i = 0; i < n_trials; ++i) {
        const auto proposal = tuner.propose(rng);
        Trial t = run_engine(prog, proposal.config, trial_seed(seed, i));
        t.id = static_cast<int>(i + 1);
        tuner.observe(proposal, static_cast<double>(t.coverage_value));
        exp.trials.push_back(std::move(t));
    }
    return exp;
}

inline Experiment run_experiment(const SyntheticProgram& prog, const ParameterSpace& space, TunerSettings settings,
                                 std::size_t n_trials, std::uint64_t seed) {
    TunerState tuner(space, settings);
    return run_experiment(prog, space, tuner, n_trials, seed);
}

/// C-like source text with one `if` per branch on the line its location names.
inline std::map<std::string, std::string> synthetic_sources(const SyntheticProgram& prog) {
    std::map<std::string, std::vector<std::string>> lines;
    for (std::size_t c = 0; c < prog.chains.size(); ++c) {
        const auto& chain = prog.chains[c];
        auto& file = lines[chain.file];
        const std::size_t last = static_cast<std::size_t>(chain.first_line) + chain.reach.size() * 2;
        if (file.size() < last) file.resize(last);
        file[static_cast<std::size_t>(chain.first_line) - 2] = "void " + chain.kind + "_" + std::to_string(c) + "(void) {";
        for (std::size_t d = 0; d < chain.reach.size(); ++d) {
            file[static_cast<std::size_t>(chain.first_line) - 1 + d] =
                std::string(4 * (d + 1), ' ') + "if (cond_" + std::to_string(c) + "_" + std::to_string(d) + ") {";
        }
        for (std::size_t d = chain.reach.size(); d-- > 0;) {
            file[static_cast<std::size_t>(chain.first_line) - 1 + chain.reach.size() + (chain.reach.size() - 1 - d)] =
                std::string(4 * (d + 1), ' ') + "}";
        }
        file[static_cast<std::size_t>(chain.first_line) - 1 + 2 * chain.reach.size()] = "}";
    }
    std::map<std::string, std::string> out;
    for (auto& [name, text] : lines) {
        std::string joined;
        for (const auto& l : text) {
            joined += l;
            joined += '\n';
        }
        out[name] = std::move(joined);
    }
    return out;
}

inline void write_sources(const SyntheticProgram& prog, const std::filesystem::path& dir) {
    for (const auto& [name, text] : synthetic_sources(prog)) {
        detail::write_file(dir / name, text);
    }
}

namespace detail {

struct ProgramBuilder {
    SyntheticProgram prog;
    Rng rng;
    std::map<std::string, int> next_line;

    explicit ProgramBuilder(std::uint64_t seed) : rng(seed) {}

    /// Adds `count` chains of `depth` branches; reach probabilities jitter by +-0.02.
    void chains(const std::string& kind, std::size_t count, std::size_t depth, double reach, const std::string& file) {
        for (std::size_t i = 0; i < count; ++i) {
            Chain c;
            c.kind = kind;
            c.file = file;
            int& line = next_line[file];
            if (line == 0) line = 1;
            c.first_line = line + 1;
            for (std::size_t d = 0; d < depth; ++d) {
                c.reach.push_back(std::clamp(reach + rng.uniform(-0.02, 0.02), 0.0, 1.0));
            }
            line = c.first_line + static_cast<int>(2 * depth) + 1;
            prog.chains.push_back(std::move(c));
        }
    }

    void param(ParameterDef def) { prog.space.params.push_back(std::move(def)); }

    void modify(const std::string& param, ValueMatch match, const std::string& kind, double factor, int min_depth = 0,
                int max_depth = INT_MAX) {
        prog.modifiers.push_back(Modifier{param, std::move(match), kind, min_depth, max_depth, factor});
    }

    void fails_on(const std::string& param, ParamValue v) { prog.failures.push_back(FailureRule{param, {v, std::nullopt}}); }
};

inline ParameterDef binary_param(const std::string& name, bool dflt, const std::string& description) {
    ParameterDef d;
    d.name = name;
    d.label = name;
    d.kind = ParamKind::binary;
    d.default_value = dflt;
    d.description = description;
    return d;
}

inline ParameterDef nominal_param(const std::string& name, std::vector<std::string> symbols, const std::string& dflt,
                                  const std::string& description) {
    ParameterDef d;
    d.name = name;
    d.label = name;
    d.kind = ParamKind::nominal;
    d.symbols = std::move(symbols);
    d.default_value = dflt;
    d.description = description;
    return d;
}

inline ParameterDef continuous_param(const std::string& name, Range r, double dflt, const std::string& description) {
    ParameterDef d;
    d.name = name;
    d.label = name;
    d.kind = ParamKind::continuous;
    d.range = r;
    d.default_value = dflt;
    d.description = description;
    return d;
}

inline void add_nested_depth(ProgramBuilder& b) {
    b.param(nominal_param("S", {"bfs", "dfs", "random-path"}, "random-path", "search heuristic"));
    b.chains("wide", 40, 4, 0.6, "wide.c");
    b.chains("deep", 8, 80, 0.8, "deep.c");
    b.modify("S", {std::string("bfs"), std::nullopt}, "wide", 1.5);
    b.modify("S", {std::string("bfs"), std::nullopt}, "deep", 0.8, 2);
    b.modify("S", {std::string("dfs"), std::nullopt}, "deep", 1.2);
    b.modify("S", {std::string("dfs"), std::nullopt}, "wide", 0.5);
}

inline void add_failure_prone(ProgramBuilder& b) {
    b.param(nominal_param("ST", {"internal", "simple", "llvm"}, "internal", "stack-trace mode"));
    b.param(binary_param("DI", false, "debug-info dump"));
    b.param(binary_param("SDC", false, "solver-driven caching"));
    b.chains("main", 30, 6, 0.75, "main.c");
    b.chains("solver", 10, 5, 0.5, "solver.c");
    b.modify("SDC", {true, std::nullopt}, "solver", 1.5);
    b.fails_on("ST", std::string("llvm"));
    b.fails_on("DI", true);
}

inline void add_inert(ProgramBuilder& b) {
    b.param(binary_param("Q", false, "no effect on coverage"));
    b.param(nominal_param("K", {"k1", "k2", "k3"}, "k1", "no effect on coverage"));
    b.param(continuous_param("T", {0.0, 10.0}, 5.0, "no effect on coverage"));
}

} // namespace detail

inline std::vector<std::string> benchmark_profiles() {
    return {"nested-depth", "failure-prone", "null-params", "failure-prone+nested-depth"};
}

/**
 * Builds a benchmark program. `seed` only jitters reach probabilities; the planted
 * structure is fixed per profile and summarized in `ground_truth`.
 */
inline SyntheticProgram make_benchmark_program(const std::string& profile, std::uint64_t seed = 1) {
    detail::ProgramBuilder b(seed);
    b.prog.name = profile;
    if (profile == "nested-depth") {
        detail::add_nested_depth(b);
        detail::add_inert(b);
        b.prog.ground_truth =
            "S=bfs favours 40 shallow chains, S=dfs favours 8 deep chains (complementary); Q, K, T are inert";
    } else if (profile == "failure-prone") {
        detail::add_failure_prone(b);
        detail::add_inert(b);
        b.prog.ground_truth = "ST=llvm and DI=true make every run fail; SDC=true boosts solver chains; Q, K, T are inert";
    } else if (profile == "null-params") {
        b.param(detail::binary_param("A", false, "unlocks planted block a"));
        b.param(detail::nominal_param("B", {"x", "y", "z"}, "x", "B=y unlocks planted block b"));
        for (int i = 1; i <= 3; ++i) {
            b.param(detail::binary_param("N" + std::to_string(i), false, "inert"));
        }
        b.param(detail::nominal_param("N4", {"p", "q", "r"}, "p", "inert"));
        b.param(detail::continuous_param("N5", {0.0, 1.0}, 0.5, "inert"));
        b.chains("base", 30, 2, 0.97, "base.c");
        b.chains("block_a", 40, 1, 1.0, "block_a.c");
        b.chains("block_b", 40, 1, 1.0, "block_b.c");
        for (auto& c : b.prog.chains) {
            if (c.kind != "base") c.reach.assign(1, 1.0);
        }
        b.modify("A", {false, std::nullopt}, "block_a", 0.0);
        b.modify("B", {std::string("x"), std::nullopt}, "block_b", 0.0);
        b.modify("B", {std::string("z"), std::nullopt}, "block_b", 0.0);
        b.prog.ground_truth = "A=true unlocks 40 branches, B=y unlocks 40 branches; N1..N5 are inert";
    } else if (profile == "failure-prone+nested-depth") {
        detail::add_nested_depth(b);
        detail::add_failure_prone(b);
        b.param(detail::continuous_param("MF", {1.0, 64.0}, 8.0, "fork budget; high values help deep chains"));
        b.modify("MF", {ParamValue{}, Range{32.0, 64.0}}, "deep", 1.02);
        detail::add_inert(b);
        b.prog.ground_truth = "S: bfs wide / dfs deep; ST=llvm and DI=true fail; SDC=true and MF>=32 boost coverage; "
                              "Q, K, T are inert; defaults S, SDC, MF are suboptimal";
    } else {
        fail(ErrorCode::invalid_argument, "unknown benchmark profile '" + profile + "'");
    }
    b.prog.space.validate();
    return std::move(b.prog);
}

} // namespace covtune
