#pragma once

#include "embed.hpp"
#include "reports.hpp"
#include "simlab.hpp"

#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <thread>
#include <vector>

#include <unistd.h>

/**
 * @file service.hpp
 *
 * @brief Session store and transport-neutral request handler behind the HTTP API.
 *
 * `Service::handle` maps a request to a response without touching sockets; the HTTP
 * binding in http.hpp only copies fields. Every body is produced by the same report
 * functions the command line uses.
 */

namespace covtune {

namespace fs = std::filesystem;

struct HttpRequest {
    std::string method;
    std::string path; ///< decoded, without query string
    std::map<std::string, std::string> query;
    std::string body;
};

struct HttpResponse {
    int status = 200;
    std::string body;
    std::string content_type = "application/json";
};

struct ServiceConfig {
    fs::path bundle_root = fs::current_path(); ///< bundle paths resolve (and stay) under here
    unsigned jobs = 1;
    std::optional<fs::path> snapshot_dir;
};

inline int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::not_found:
        return 404;
    case ErrorCode::duplicate_name:
        return 409;
    default:
        return 400;
    }
}

inline HttpResponse error_response(ErrorCode code, const std::string& message) {
    return HttpResponse{http_status(code),
                        render({{"error", {{"code", std::string(to_string(code))}, {"message", message}}}})};
}

/// Resolves `relative` under `root`, rejecting anything that escapes it.
inline fs::path confined_path(const fs::path& root, const fs::path& relative) {
    const auto base = fs::weakly_canonical(root);
    const auto target = fs::weakly_canonical(relative.is_absolute() ? relative : base / relative);
    auto b = base.begin();
    auto t = target.begin();
    for (; b != base.end(); ++b, ++t) {
        if (b->empty()) continue;
        if (t == target.end() || *t != *b) {
            fail(ErrorCode::invalid_argument, "path '" + relative.string() + "' escapes '" + base.string() + "'");
        }
    }
    return target;
}

struct Session {
    std::string id;
    std::shared_ptr<const Experiment> exp;
    fs::path bundle_dir;
    GroupStore groups;
    ParameterSpace space; ///< current space after applied plans
    std::vector<AuditRecord> applied;

    std::mutex mutex; ///< serializes mutations and cache fills
    std::shared_ptr<const EffectReport> effects;
    std::map<std::string, std::shared_ptr<const EmbeddingResult>> embeddings; ///< keyed by config JSON
};

enum class JobState { queued, running, done, failed, cancelled };

inline std::string_view to_string(JobState s) {
    switch (s) {
    case JobState::queued: return "queued";
    case JobState::running: return "running";
    case JobState::done: return "done";
    case JobState::failed: return "failed";
    case JobState::cancelled: return "cancelled";
    }
    return "failed";
}

struct Job {
    std::string id;
    std::string kind;
    std::string session;
    std::atomic<JobState> state{JobState::queued};
    std::atomic<double> progress{0.0};
    std::mutex mutex;
    nlohmann::json result;
    nlohmann::json error;
    std::jthread worker;

    nlohmann::json status() {
        std::lock_guard lock(mutex);
        nlohmann::json j = {{"id", id},
                            {"kind", kind},
                            {"session", session},
                            {"state", std::string(to_string(state.load()))},
                            {"progress", progress.load()}};
        if (!result.is_null()) j["result"] = result;
        if (!error.is_null()) j["error"] = error;
        return j;
    }
};

class Service {
public:
    explicit Service(ServiceConfig config = {}) : config_(std::move(config)) {
        if (config_.snapshot_dir) {
            fs::create_directories(*config_.snapshot_dir);
            restore_snapshots();
        }
    }

    ~Service() {
        std::vector<std::shared_ptr<Job>> jobs;
        {
            std::lock_guard lock(jobs_mutex_);
            for (auto& [_, job] : jobs_) jobs.push_back(job);
        }
        for (auto& job : jobs) {
            job->worker.request_stop();
            if (job->worker.joinable()) job->worker.join();
        }
    }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    const ServiceConfig& config() const { return config_; }

    HttpResponse handle(const HttpRequest& request) {
        try {
            return route(request);
        } catch (const Error& e) {
            return error_response(e.code(), e.what());
        } catch (const nlohmann::json::exception& e) {
            return error_response(ErrorCode::parse_error, std::string("malformed JSON body: ") + e.what());
        } catch (const std::exception& e) {
            return error_response(ErrorCode::invalid_argument, e.what());
        }
    }

    /// Creates a session from a bundle directory (used by routes and tests).
    std::string open_session(const fs::path& bundle_dir) {
        auto exp = std::make_shared<const Experiment>(load_experiment(bundle_dir));
        return add_session(std::move(exp), bundle_dir);
    }

    std::shared_ptr<Session> session(const std::string& id) const {
        std::shared_lock lock(sessions_mutex_);
        auto it = sessions_.find(id);
        if (it == sessions_.end()) {
            fail(ErrorCode::not_found, "no session '" + id + "'");
        }
        return it->second;
    }

    /// Blocks until the job is terminal; returns its status document.
    nlohmann::json wait_job(const std::string& id) {
        auto job = find_job(id);
        for (;;) {
            const auto st = job->state.load();
            if (st != JobState::queued && st != JobState::running) return job->status();
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
    }

private:
    static std::vector<std::string> split_path(const std::string& path) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (start < path.size()) {
            auto slash = path.find('/', start);
            if (slash == std::string::npos) slash = path.size();
            if (slash > start) out.push_back(path.substr(start, slash - start));
            start = slash + 1;
        }
        return out;
    }

    static std::string query(const HttpRequest& r, const std::string& key, const std::string& fallback = "") {
        auto it = r.query.find(key);
        return it == r.query.end() ? fallback : it->second;
    }

    static nlohmann::json body_json(const HttpRequest& r) {
        if (r.body.empty()) return nlohmann::json::object();
        return nlohmann::json::parse(r.body);
    }

    static HttpResponse ok(const nlohmann::json& j, int status = 200) { return HttpResponse{status, render(j)}; }

    static HttpResponse text(std::string body, ReportFormat format) {
        HttpResponse r{200, std::move(body)};
        if (format == ReportFormat::csv) r.content_type = "text/csv";
        return r;
    }

    HttpResponse route(const HttpRequest& r) {
        const auto parts = split_path(r.path);
        if (parts.size() < 2 || parts[0] != "api") {
            fail(ErrorCode::not_found, "no route for " + r.method + " " + r.path);
        }
        const auto& m = r.method;
        if (parts[1] == "health" && parts.size() == 2 && m == "GET") {
            return ok({{"status", "ok"}});
        }
        if (parts[1] == "profiles" && parts.size() == 2 && m == "GET") {
            return ok(benchmark_profiles());
        }
        if (parts[1] == "simlab" && parts.size() == 3 && parts[2] == "run" && m == "POST") {
            return simlab_run(body_json(r));
        }
        if (parts[1] == "jobs" && parts.size() == 3) {
            auto job = find_job(parts[2]);
            if (m == "GET") return ok(job->status());
            if (m == "DELETE") {
                job->worker.request_stop();
                return ok(job->status());
            }
        }
        if (parts[1] == "sessions") {
            if (parts.size() == 2) {
                if (m == "POST") return create_session(body_json(r));
                if (m == "GET") return list_sessions();
            } else {
                return session_route(r, parts);
            }
        }
        fail(ErrorCode::not_found, "no route for " + m + " " + r.path);
    }

    HttpResponse session_route(const HttpRequest& r, const std::vector<std::string>& parts) {
        auto s = session(parts[2]);
        const auto& exp = *s->exp;
        const auto& m = r.method;
        if (parts.size() == 3) {
            if (m == "GET") return ok({{"session", s->id}, {"summary", summary_json(exp)}});
            if (m == "DELETE") {
                std::unique_lock lock(sessions_mutex_);
                sessions_.erase(s->id);
                if (config_.snapshot_dir) fs::remove(*config_.snapshot_dir / (s->id + ".json"));
                return ok({{"deleted", s->id}});
            }
        }
        const std::string& what = parts[3];
        if (what == "summary" && m == "GET") {
            return ok(summary_json(exp));
        }
        if (what == "trials" && m == "GET") {
            return trials(*s, r);
        }
        if (what == "effects" && m == "GET") {
            const double threshold = parse_double_arg(query(r, "threshold", "0.3"), "threshold");
            return text(effects_body(*effects(*s), threshold, parse_format(query(r, "format"))),
                        parse_format(query(r, "format")));
        }
        if (what == "embedding" && m == "GET") {
            return ok(to_json(*embedding(*s, embedding_config(r.query))));
        }
        if (what == "density" && m == "GET") {
            return density(*s, r);
        }
        if (what == "groups") {
            return groups_route(*s, r, parts);
        }
        if (what == "active" && parts.size() == 4) {
            std::lock_guard lock(s->mutex);
            if (m == "PUT") {
                const auto j = body_json(r);
                std::optional<std::string> name;
                if (j.contains("name") && !j["name"].is_null()) name = j["name"].get<std::string>();
                s->groups.set_active(name);
                persist(*s);
            } else if (m != "GET") {
                fail(ErrorCode::not_found, "no route for " + m + " " + r.path);
            }
            const auto& a = s->groups.active();
            return ok({{"active", a ? nlohmann::json(*a) : nlohmann::json(nullptr)}});
        }
        if (what == "matrix" && m == "GET") {
            const auto mode = parse_matrix_mode(query(r, "mode", "difference"));
            if (!mode) fail(ErrorCode::invalid_argument, "mode must be difference or union");
            const double alpha = parse_double_arg(query(r, "alpha", "0.05"), "alpha");
            std::vector<TrialGroup> groups;
            {
                std::lock_guard lock(s->mutex);
                const auto names = query(r, "groups");
                if (names.empty()) {
                    groups = s->groups.groups();
                } else {
                    std::stringstream ss(names);
                    std::string name;
                    while (std::getline(ss, name, ',')) groups.push_back(resolve_group_spec(exp, name, &s->groups));
                }
            }
            return ok(to_json(group_matrix(groups, exp, *mode, alpha)));
        }
        if (what == "compare" && m == "GET") {
            const auto [g1, g2] = group_pair(*s, r);
            const double alpha = parse_double_arg(query(r, "alpha", "0.05"), "alpha");
            const auto format = parse_format(query(r, "format"));
            return text(compare_body(exp, g1, g2, alpha, format), format);
        }
        if (what == "metrics" && m == "GET") {
            const auto format = parse_format(query(r, "format"));
            return text(metrics_body(exp, parse_k_list(query(r, "k", "30")), format), format);
        }
        if (what == "code" && parts.size() == 5) {
            if (parts[4] == "files" && m == "GET") return file_tree(*s, r);
            if (parts[4] == "diff" && m == "GET") {
                const auto [g1, g2] = group_pair(*s, r);
                return ok(to_json(code_diff(g1, g2, exp)));
            }
        }
        if (what == "source" && m == "GET") {
            return source(exp, query(r, "file"));
        }
        if (what == "jobs" && parts.size() == 5 && m == "POST") {
            if (parts[4] == "fit") return start_fit(s);
            if (parts[4] == "embed") return start_embed(s, body_json(r));
        }
        if (what == "refine" && parts.size() == 5) {
            if (parts[4] == "suggest" && m == "POST") {
                const auto j = body_json(r);
                const double threshold = j.value("threshold", 0.3);
                const double alpha = j.value("alpha", 0.05);
                return ok(suggestions_json(exp, *effects(*s), threshold, alpha));
            }
            if (parts[4] == "apply" && m == "POST") {
                std::lock_guard lock(s->mutex);
                const auto plan = plan_from_json(body_json(r), &s->space);
                auto refined = apply_plan(s->space, plan);
                s->space = refined.space;
                s->applied.push_back(refined.audit);
                persist(*s);
                return ok(to_json(refined));
            }
            if (parts[4] == "export" && m == "GET") {
                std::lock_guard lock(s->mutex);
                return ok(export_json(*s));
            }
        }
        fail(ErrorCode::not_found, "no route for " + m + " " + r.path);
    }

    HttpResponse groups_route(Session& s, const HttpRequest& r, const std::vector<std::string>& parts) {
        const auto& exp = *s.exp;
        const auto& m = r.method;
        std::lock_guard lock(s.mutex);
        if (parts.size() == 4) {
            if (m == "GET") {
                nlohmann::json out = nlohmann::json::array();
                for (const auto& g : s.groups.groups()) out.push_back(to_json(g, exp));
                return ok(out);
            }
            if (m == "POST") {
                const auto j = body_json(r);
                const auto name = j.at("name").get<std::string>();
                std::vector<int> ids;
                auto origin = GroupOrigin::table_selection;
                if (j.contains("spec")) {
                    ids = resolve_group_spec(exp, j["spec"].get<std::string>(), &s.groups).member_ids;
                    origin = GroupOrigin::predicate;
                } else {
                    ids = j.at("ids").get<std::vector<int>>();
                }
                if (j.contains("origin")) {
                    const auto o = parse_origin(j["origin"].get<std::string>());
                    if (!o) fail(ErrorCode::invalid_argument, "unknown origin '" + j["origin"].get<std::string>() + "'");
                    origin = *o;
                }
                const auto& g = s.groups.create(exp, name, std::move(ids), origin);
                persist(s);
                return ok(to_json(g, exp));
            }
        } else if (parts.size() == 5) {
            const auto& name = parts[4];
            if (m == "GET") return ok(to_json(s.groups.at(name), exp));
            if (m == "PATCH") {
                const auto j = body_json(r);
                const auto to = j.at("name").get<std::string>();
                s.groups.rename(name, to);
                persist(s);
                return ok(to_json(s.groups.at(to), exp));
            }
            if (m == "DELETE") {
                s.groups.remove(name);
                persist(s);
                return ok({{"deleted", name}});
            }
        }
        fail(ErrorCode::not_found, "no route for " + m + " " + r.path);
    }

    std::pair<TrialGroup, TrialGroup> group_pair(Session& s, const HttpRequest& r) {
        const auto g1 = query(r, "g1"), g2 = query(r, "g2");
        if (g1.empty() || g2.empty()) fail(ErrorCode::invalid_argument, "both g1 and g2 are required");
        std::lock_guard lock(s.mutex);
        return {resolve_group_spec(*s.exp, g1, &s.groups), resolve_group_spec(*s.exp, g2, &s.groups)};
    }

    HttpResponse trials(Session& s, const HttpRequest& r) {
        const auto& exp = *s.exp;
        const auto offset = static_cast<std::size_t>(parse_double_arg(query(r, "offset", "0"), "offset"));
        const auto limit = static_cast<std::size_t>(parse_double_arg(query(r, "limit", "100"), "limit"));
        std::vector<int> ids;
        const auto spec = query(r, "group");
        if (spec.empty()) {
            ids = exp.all_ids();
        } else {
            std::lock_guard lock(s.mutex);
            ids = resolve_group_spec(exp, spec, &s.groups).member_ids;
        }
        const std::size_t total = ids.size();
        const auto begin = std::min(offset, total);
        const auto end = std::min(total, begin + limit);
        std::vector<int> page(ids.begin() + static_cast<std::ptrdiff_t>(begin), ids.begin() + static_cast<std::ptrdiff_t>(end));
        return ok({{"total", total}, {"offset", begin}, {"trials", trials_page(exp, page)}});
    }

    static EmbeddingConfig embedding_config(const std::map<std::string, std::string>& q) {
        EmbeddingConfig cfg;
        const auto get = [&](const char* key) -> std::optional<std::string> {
            auto it = q.find(key);
            return it == q.end() ? std::nullopt : std::optional<std::string>(it->second);
        };
        if (auto v = get("method")) cfg.method = *v;
        if (auto v = get("distance")) cfg.distance = *v;
        if (auto v = get("n_neighbors")) cfg.n_neighbors = static_cast<int>(parse_double_arg(*v, "n_neighbors"));
        if (auto v = get("seed")) cfg.seed = static_cast<std::uint64_t>(parse_double_arg(*v, "seed"));
        if (auto v = get("iterations")) cfg.iterations = static_cast<int>(parse_double_arg(*v, "iterations"));
        if (auto v = get("perplexity")) cfg.perplexity = parse_double_arg(*v, "perplexity");
        if (auto v = get("min_dist")) cfg.min_dist = parse_double_arg(*v, "min_dist");
        if (auto v = get("negative_samples")) cfg.negative_samples = static_cast<int>(parse_double_arg(*v, "negative_samples"));
        return cfg;
    }

    static std::map<std::string, std::string> flatten(const nlohmann::json& j) {
        std::map<std::string, std::string> out;
        for (const auto& [k, v] : j.items()) out[k] = v.is_string() ? v.get<std::string>() : v.dump();
        return out;
    }

    std::shared_ptr<const EffectReport> effects(Session& s, const FitControl& control = {}) {
        {
            std::lock_guard lock(s.mutex);
            if (s.effects) return s.effects;
        }
        auto report = std::make_shared<const EffectReport>(compute_effects(*s.exp, control));
        std::lock_guard lock(s.mutex);
        if (!s.effects) s.effects = report;
        return s.effects;
    }

    std::shared_ptr<const EmbeddingResult> embedding(Session& s, const EmbeddingConfig& cfg, std::stop_token stop = {}) {
        const auto key = to_json(cfg).dump();
        {
            std::lock_guard lock(s.mutex);
            auto it = s.embeddings.find(key);
            if (it != s.embeddings.end()) return it->second;
        }
        auto result = std::make_shared<const EmbeddingResult>(embed(*s.exp, cfg, config_.jobs, stop));
        std::lock_guard lock(s.mutex);
        return s.embeddings.emplace(key, result).first->second;
    }

    HttpResponse density(Session& s, const HttpRequest& r) {
        const auto& exp = *s.exp;
        const auto result = embedding(s, embedding_config(r.query));
        const int grid = static_cast<int>(parse_double_arg(query(r, "grid", "64"), "grid"));
        const auto weight = query(r, "weight", "coverage");
        std::vector<double> values(exp.n_trials(), 1.0);
        if (weight == "coverage") {
            for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<double>(exp.trials[i].coverage_value);
        } else if (weight.starts_with("group:")) {
            TrialGroup g;
            {
                std::lock_guard lock(s.mutex);
                g = resolve_group_spec(exp, weight.substr(6), &s.groups);
            }
            for (std::size_t i = 0; i < values.size(); ++i) values[i] = g.contains(exp.trials[i].id) ? 1.0 : 0.0;
        } else if (weight != "count") {
            fail(ErrorCode::invalid_argument, "weight must be coverage, count or group:<spec>");
        }
        std::optional<double> bandwidth;
        if (const auto b = query(r, "bandwidth"); !b.empty()) bandwidth = parse_double_arg(b, "bandwidth");
        return ok(to_json(density_field(*result, values, grid, bandwidth)));
    }

    HttpResponse file_tree(Session& s, const HttpRequest& r) {
        const auto& exp = *s.exp;
        std::optional<std::pair<TrialGroup, TrialGroup>> pair;
        if (!query(r, "g1").empty() || !query(r, "g2").empty()) pair = group_pair(s, r);
        nlohmann::json files = nlohmann::json::array();
        for (const auto& [file, branches] : exp.branches_by_file()) {
            nlohmann::json f = {{"file", file}, {"branches", branches.size()}};
            if (pair) {
                f["coverage1"] = file_coverage(pair->first, exp, file);
                f["coverage2"] = file_coverage(pair->second, exp, file);
            }
            files.push_back(f);
        }
        return ok({{"files", files}});
    }

    static HttpResponse source(const Experiment& exp, const std::string& file) {
        if (file.empty()) fail(ErrorCode::invalid_argument, "file is required");
        if (exp.source_root.empty()) fail(ErrorCode::not_found, "experiment has no source tree");
        const auto path = confined_path(exp.source_root, file);
        if (!fs::is_regular_file(path)) fail(ErrorCode::not_found, "no source file '" + file + "'");
        std::vector<std::string> lines = detail::read_lines(path);
        return ok({{"file", file}, {"lines", lines}});
    }

    HttpResponse create_session(const nlohmann::json& j) {
        if (j.contains("bundle")) {
            const auto dir = confined_path(config_.bundle_root, j["bundle"].get<std::string>());
            const auto id = open_session(dir);
            return ok({{"session", id}, {"summary", summary_json(*session(id)->exp)}});
        }
        if (j.contains("files")) {
            // Uploaded bundle: {"files": {"parameters.json": ..., ...}, "sources": {"a.c": "..."}}
            const auto dir = upload_dir();
            const auto& files = j["files"];
            for (const auto* name : {"parameters.json", "trials.csv", "branches.txt", "locations.json"}) {
                if (!files.contains(name) || !files[name].is_string()) {
                    fail(ErrorCode::schema_error, std::string("upload lacks ") + name);
                }
                detail::write_file(dir / name, files[name].get<std::string>());
            }
            fs::create_directories(dir / "src");
            const auto sources = j.value("sources", nlohmann::json::object());
            for (const auto& [name, content] : sources.items()) {
                detail::write_file(confined_path(dir / "src", name), content.get<std::string>());
            }
            const auto id = open_session(dir);
            return ok({{"session", id}, {"summary", summary_json(*session(id)->exp)}});
        }
        fail(ErrorCode::invalid_argument, "body needs 'bundle' or 'files'");
    }

    HttpResponse list_sessions() const {
        std::shared_lock lock(sessions_mutex_);
        nlohmann::json out = nlohmann::json::array();
        for (const auto& [id, s] : sessions_) out.push_back({{"session", id}, {"trials", s->exp->n_trials()}});
        return ok(out);
    }

    HttpResponse simlab_run(const nlohmann::json& j) {
        const auto profile = j.value("profile", std::string("nested-depth"));
        const auto trials = j.value("trials", std::size_t{800});
        const auto seed = j.value("seed", std::uint64_t{1});
        TunerSettings settings;
        settings.epsilon = j.value("epsilon", settings.epsilon);
        const auto prog = make_benchmark_program(profile, seed);
        auto exp = run_experiment(prog, prog.space, settings, trials, seed);
        const fs::path dir = j.contains("out") ? confined_path(config_.bundle_root, j["out"].get<std::string>()) : upload_dir();
        write_sources(prog, dir / "src");
        exp.source_root = dir / "src";
        save_experiment(exp, dir, SourceMode::skip);
        const auto id = open_session(dir);
        return ok({{"session", id}, {"bundle", dir.string()}, {"ground_truth", prog.ground_truth},
                   {"summary", summary_json(*session(id)->exp)}});
    }

    HttpResponse start_fit(const std::shared_ptr<Session>& s) {
        auto job = new_job("fit", s->id);
        job->worker = std::jthread([this, s, job](std::stop_token stop) {
            run_job(*job, [&] {
                FitControl control;
                control.stop = stop;
                control.progress = [job](double p) { job->progress = p; };
                return to_json(*effects(*s, control));
            });
        });
        return ok({{"job", job->id}, {"poll", "/api/jobs/" + job->id}}, 202);
    }

    HttpResponse start_embed(const std::shared_ptr<Session>& s, const nlohmann::json& body) {
        const auto cfg = embedding_config(flatten(body));
        validate(cfg, s->exp->n_trials());
        auto job = new_job("embed", s->id);
        job->worker = std::jthread([this, s, job, cfg](std::stop_token stop) {
            run_job(*job, [&] { return to_json(*embedding(*s, cfg, stop)); });
        });
        return ok({{"job", job->id}, {"poll", "/api/jobs/" + job->id}}, 202);
    }

    template <typename F>
    static void run_job(Job& job, F&& body) {
        job.state = JobState::running;
        try {
            auto result = body();
            std::lock_guard lock(job.mutex);
            job.result = std::move(result);
            job.progress = 1.0;
            job.state = JobState::done;
        } catch (const Error& e) {
            std::lock_guard lock(job.mutex);
            job.error = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
            job.state = e.code() == ErrorCode::cancelled ? JobState::cancelled : JobState::failed;
        } catch (const std::exception& e) {
            std::lock_guard lock(job.mutex);
            job.error = {{"code", "invalid_argument"}, {"message", e.what()}};
            job.state = JobState::failed;
        }
    }

    std::shared_ptr<Job> new_job(const std::string& kind, const std::string& session) {
        auto job = std::make_shared<Job>();
        job->kind = kind;
        job->session = session;
        std::lock_guard lock(jobs_mutex_);
        job->id = "j" + std::to_string(++job_counter_);
        jobs_[job->id] = job;
        return job;
    }

    std::shared_ptr<Job> find_job(const std::string& id) {
        std::lock_guard lock(jobs_mutex_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) fail(ErrorCode::not_found, "no job '" + id + "'");
        return it->second;
    }

    std::string add_session(std::shared_ptr<const Experiment> exp, const fs::path& bundle_dir,
                            std::optional<std::string> id = std::nullopt) {
        auto s = std::make_shared<Session>();
        s->exp = std::move(exp);
        s->bundle_dir = fs::absolute(bundle_dir);
        s->groups = GroupStore(*s->exp);
        s->space = s->exp->space;
        std::unique_lock lock(sessions_mutex_);
        if (!id) id = "s" + std::to_string(++session_counter_);
        s->id = *id;
        sessions_[s->id] = s;
        lock.unlock();
        persist(*s);
        return s->id;
    }

    fs::path upload_dir() {
        const auto base = config_.snapshot_dir ? *config_.snapshot_dir / "uploads"
                                               : fs::temp_directory_path() / ("covtune-" + std::to_string(::getpid()));
        std::lock_guard lock(jobs_mutex_);
        const auto dir = base / ("u" + std::to_string(++upload_counter_));
        fs::create_directories(dir);
        return dir;
    }

    static nlohmann::json export_json(const Session& s) {
        nlohmann::json audit = nlohmann::json::array();
        for (const auto& a : s.applied) audit.push_back({{"plan", to_json(a.plan)}, {"applied_at", a.applied_at}});
        return {{"space", parameter_space_to_json(s.space)}, {"audit", audit}};
    }

    /// Groups, active selection and applied plans; caches are not persisted.
    void persist(const Session& s) const {
        if (!config_.snapshot_dir) return;
        nlohmann::json groups = nlohmann::json::array();
        for (const auto& g : s.groups.groups()) {
            if (g.origin == GroupOrigin::builtin) continue;
            groups.push_back({{"name", g.name}, {"ids", g.member_ids}, {"origin", std::string(to_string(g.origin))}});
        }
        const auto& a = s.groups.active();
        nlohmann::json snap = {{"session", s.id},
                               {"bundle", s.bundle_dir.string()},
                               {"groups", groups},
                               {"active", a ? nlohmann::json(*a) : nlohmann::json(nullptr)},
                               {"audit", export_json(s)["audit"]}};
        detail::write_file(*config_.snapshot_dir / (s.id + ".json"), snap.dump(2) + "\n");
    }

    void restore_snapshots() {
        for (const auto& entry : fs::directory_iterator(*config_.snapshot_dir)) {
            if (entry.path().extension() != ".json") continue;
            const auto snap = detail::parse_json_file(entry.path());
            const auto id = snap.at("session").get<std::string>();
            auto exp = std::make_shared<const Experiment>(load_experiment(fs::path(snap.at("bundle").get<std::string>())));
            add_session(exp, snap.at("bundle").get<std::string>(), id);
            auto s = session(id);
            for (const auto& g : snap.at("groups")) {
                const auto origin = parse_origin(g.at("origin").get<std::string>()).value_or(GroupOrigin::table_selection);
                s->groups.create(*s->exp, g.at("name").get<std::string>(), g.at("ids").get<std::vector<int>>(), origin);
            }
            if (!snap.at("active").is_null()) s->groups.set_active(snap["active"].get<std::string>());
            for (const auto& a : snap.at("audit")) {
                const auto plan = plan_from_json(a.at("plan"), &s->space);
                auto refined = apply_plan(s->space, plan, a.at("applied_at").get<std::string>());
                s->space = refined.space;
                s->applied.push_back(refined.audit);
            }
            if (id.size() > 1 && id[0] == 's') {
                const auto n = std::strtoull(id.c_str() + 1, nullptr, 10);
                session_counter_ = std::max<std::uint64_t>(session_counter_, n);
            }
        }
    }

    ServiceConfig config_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<Session>> sessions_;
    std::uint64_t session_counter_ = 0;
    std::mutex jobs_mutex_;
    std::map<std::string, std::shared_ptr<Job>> jobs_;
    std::uint64_t job_counter_ = 0;
    std::uint64_t upload_counter_ = 0;
};

} // namespace covtune
