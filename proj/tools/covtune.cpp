#include "covtune/http.hpp"
#include "covtune/reports.hpp"
#include "covtune/service.hpp"
#include "covtune/simlab.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>

using namespace covtune;

namespace {

std::string env_or(const char* name, std::string fallback) {
    const char* v = std::getenv(name);
    return v && *v ? std::string(v) : fallback;
}

void emit(const std::string& body) { std::cout << body << std::flush; }

httplib::Server* running_server = nullptr;

void stop_server(int) {
    if (running_server) running_server->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coverage-driven parameter tuning workbench"};
    app.require_subcommand(1);

    unsigned jobs = 1;
    std::string bundle, format = "json";

    auto* validate_cmd = app.add_subcommand("validate", "Load a bundle and report its summary");
    validate_cmd->add_option("bundle", bundle, "Bundle directory")->required();

    double threshold = 0.3;
    auto* effects_cmd = app.add_subcommand("effects", "Parameter effect report");
    effects_cmd->add_option("bundle", bundle, "Bundle directory")->required();
    effects_cmd->add_option("--threshold", threshold, "Hide parameters with |effect| below this")->capture_default_str();
    effects_cmd->add_option("--format", format, "json or csv")->capture_default_str();

    EmbeddingConfig embed_cfg;
    auto* embed_cmd = app.add_subcommand("embed", "2D embedding of trials by coverage similarity");
    embed_cmd->add_option("bundle", bundle, "Bundle directory")->required();
    embed_cmd->add_option("--method", embed_cfg.method, "neighbor-embedding or fuzzy-graph")->capture_default_str();
    embed_cmd->add_option("--seed", embed_cfg.seed, "Random seed")->capture_default_str();
    embed_cmd->add_option("--n-neighbors", embed_cfg.n_neighbors, "Neighborhood size")->capture_default_str();
    embed_cmd->add_option("--distance", embed_cfg.distance, "jaccard or hamming")->capture_default_str();
    embed_cmd->add_option("--iterations", embed_cfg.iterations, "Optimization epochs")->capture_default_str();
    embed_cmd->add_option("--perplexity", embed_cfg.perplexity, "Effective neighbor count (neighbor-embedding)")
        ->capture_default_str();
    embed_cmd->add_option("--min-dist", embed_cfg.min_dist, "Minimum embedded distance (fuzzy-graph)")
        ->capture_default_str();
    embed_cmd->add_option("--jobs", jobs, "Worker threads")->capture_default_str();

    std::string g1, g2;
    double alpha = 0.05;
    auto* compare_cmd = app.add_subcommand("compare", "Compare two trial groups");
    compare_cmd->add_option("bundle", bundle, "Bundle directory")->required();
    compare_cmd->add_option("--g1", g1, "First group spec (top10, bottom10, failed, all, param:NAME=VALUE, ids:1,2)")
        ->required();
    compare_cmd->add_option("--g2", g2, "Second group spec")->required();
    compare_cmd->add_option("--alpha", alpha, "Significance level")->capture_default_str();
    compare_cmd->add_option("--format", format, "json or csv")->capture_default_str();

    std::string ks = "30";
    auto* metrics_cmd = app.add_subcommand("metrics", "Iteration metrics");
    metrics_cmd->add_option("bundle", bundle, "Bundle directory")->required();
    metrics_cmd->add_option("--k", ks, "Comma-separated prefix sizes")->capture_default_str();
    metrics_cmd->add_option("--format", format, "json or csv")->capture_default_str();

    auto* refine_cmd = app.add_subcommand("refine", "Parameter-space refinement");
    refine_cmd->require_subcommand(1);
    auto* suggest_cmd = refine_cmd->add_subcommand("suggest", "Print suggestion fragments");
    suggest_cmd->add_option("bundle", bundle, "Bundle directory")->required();
    suggest_cmd->add_option("--threshold", threshold, "Low-effect threshold")->capture_default_str();
    suggest_cmd->add_option("--alpha", alpha, "Significance level")->capture_default_str();
    std::string plan_file, space_out;
    auto* apply_cmd = refine_cmd->add_subcommand("apply", "Apply a plan to the bundle's parameter space");
    apply_cmd->add_option("bundle", bundle, "Bundle directory")->required();
    apply_cmd->add_option("plan", plan_file, "Plan JSON file")->required();
    apply_cmd->add_option("--out", space_out, "Write the refined parameters.json here");

    auto* simlab_cmd = app.add_subcommand("simlab", "Synthetic experiments");
    simlab_cmd->require_subcommand(1);
    std::string profile = "nested-depth", out_dir, space_file;
    std::size_t trials = 800;
    std::uint64_t seed = 1;
    double epsilon = TunerSettings{}.epsilon;
    auto* run_cmd = simlab_cmd->add_subcommand("run", "Tune a benchmark program and write a bundle");
    run_cmd->add_option("--profile", profile, "Benchmark profile")
        ->check(CLI::IsMember(benchmark_profiles()))
        ->capture_default_str();
    run_cmd->add_option("--trials", trials, "Number of trials")->capture_default_str();
    run_cmd->add_option("--seed", seed, "Random seed")->capture_default_str();
    run_cmd->add_option("--epsilon", epsilon, "Tuner exploration rate")->capture_default_str();
    run_cmd->add_option("--space", space_file, "parameters.json to tune instead of the profile's own space");
    run_cmd->add_option("--out", out_dir, "Output bundle directory")->required();

    std::string listen = env_or("COVTUNE_LISTEN", "127.0.0.1:8080");
    std::string bundle_root = env_or("COVTUNE_BUNDLE_ROOT", ".");
    std::string snapshot_dir = env_or("COVTUNE_SNAPSHOT_DIR", "");
    unsigned serve_jobs = static_cast<unsigned>(std::stoul(env_or("COVTUNE_JOBS", "1")));
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP/JSON service");
    serve_cmd->add_option("--listen", listen, "host:port")->capture_default_str();
    serve_cmd->add_option("--bundle-root", bundle_root, "Directory bundle paths resolve under")->capture_default_str();
    serve_cmd->add_option("--snapshot-dir", snapshot_dir, "Persist sessions here");
    serve_cmd->add_option("--jobs", serve_jobs, "Worker threads for pure computations")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*validate_cmd) {
            emit(render(summary_json(load_experiment(bundle))));
        } else if (*effects_cmd) {
            const auto exp = load_experiment(bundle);
            emit(effects_body(compute_effects(exp), threshold, parse_format(format)));
        } else if (*embed_cmd) {
            const auto exp = load_experiment(bundle);
            emit(render(to_json(embed(exp, embed_cfg, jobs))));
        } else if (*compare_cmd) {
            const auto exp = load_experiment(bundle);
            emit(compare_body(exp, resolve_group_spec(exp, g1), resolve_group_spec(exp, g2), alpha, parse_format(format)));
        } else if (*metrics_cmd) {
            const auto exp = load_experiment(bundle);
            emit(metrics_body(exp, parse_k_list(ks), parse_format(format)));
        } else if (*suggest_cmd) {
            const auto exp = load_experiment(bundle);
            emit(render(suggestions_json(exp, compute_effects(exp), threshold, alpha)));
        } else if (*apply_cmd) {
            const auto exp = load_experiment(bundle);
            const auto plan = plan_from_json(detail::parse_json_file(plan_file), &exp.space);
            const auto refined = apply_plan(exp.space, plan);
            if (!space_out.empty()) export_parameter_space(refined.space, space_out);
            emit(render(to_json(refined)));
        } else if (*run_cmd) {
            const auto prog = make_benchmark_program(profile, seed);
            const auto space = space_file.empty() ? prog.space : load_parameter_space(space_file);
            TunerSettings settings;
            settings.epsilon = epsilon;
            auto exp = run_experiment(prog, space, settings, trials, seed);
            write_sources(prog, std::filesystem::path(out_dir) / "src");
            exp.source_root = std::filesystem::path(out_dir) / "src";
            save_experiment(exp, out_dir, SourceMode::skip);
            emit(render({{"bundle", out_dir}, {"ground_truth", prog.ground_truth}, {"summary", summary_json(exp)},
                         {"metrics", to_json(metrics(exp, {std::min<std::size_t>(30, trials)}))}}));
        } else if (*serve_cmd) {
            ServiceConfig cfg;
            cfg.bundle_root = bundle_root;
            cfg.jobs = serve_jobs;
            if (!snapshot_dir.empty()) cfg.snapshot_dir = snapshot_dir;
            Service service(cfg);
            httplib::Server server;
            mount(server, service);
            const auto colon = listen.rfind(':');
            if (colon == std::string::npos) fail(ErrorCode::invalid_argument, "--listen must be host:port");
            const auto host = listen.substr(0, colon);
            const int port = std::stoi(listen.substr(colon + 1));
            running_server = &server;
            std::signal(SIGINT, stop_server);
            std::signal(SIGTERM, stop_server);
            std::cerr << "listening on " << host << ':' << port << std::endl;
            if (!server.listen(host, port)) fail(ErrorCode::io_error, "cannot listen on " + listen);
        }
    } catch (const Error& e) {
        std::cerr << nlohmann::json{{"error", {{"code", std::string(to_string(e.code()))}, {"message", e.what()}}}}.dump()
                  << std::endl;
        return 2;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", {{"code", "io_error"}, {"message", e.what()}}}}.dump() << std::endl;
        return 2;
    }
    return 0;
}
