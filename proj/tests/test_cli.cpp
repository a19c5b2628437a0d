#include "cli_runner.hpp"
#include "corruptions.hpp"
#include "support.hpp"

#include "covtune/service.hpp"

#include <gtest/gtest.h>

using namespace covtune;
using namespace testing_support;

namespace {

struct CliFixture : ::testing::Test {
    TempDir root;
    fs::path bundle;

    void SetUp() override {
        bundle = root / "b";
        const auto r = run_cli("simlab run --profile failure-prone+nested-depth --trials 150 --seed 3 --out " + quote(bundle));
        ASSERT_EQ(r.exit_code, 0) << r.err;
    }

    HttpResponse service_get(const std::string& what, std::map<std::string, std::string> query) {
        ServiceConfig cfg;
        cfg.bundle_root = root.path();
        Service svc(cfg);
        const auto id = svc.open_session(bundle);
        return svc.handle(HttpRequest{"GET", "/api/sessions/" + id + "/" + what, std::move(query), ""});
    }
};

} // namespace

TEST_F(CliFixture, SimlabRunWritesALoadableBundle) {
    const auto exp = load_experiment(bundle);
    EXPECT_EQ(exp.n_trials(), 150u);
    EXPECT_TRUE(fs::exists(bundle / "src" / "deep.c"));
    const auto v = run_cli("validate " + quote(bundle));
    ASSERT_EQ(v.exit_code, 0) << v.err;
    EXPECT_EQ(v.out, render(summary_json(exp)));
}

TEST_F(CliFixture, CompareMatchesService) {
    for (const std::string format : {"json", "csv"}) {
        const auto cli = run_cli("compare " + quote(bundle) + " --g1 top10 --g2 param:S=dfs --format " + format);
        ASSERT_EQ(cli.exit_code, 0) << cli.err;
        const auto svc = service_get("compare", {{"g1", "top10"}, {"g2", "param:S=dfs"}, {"format", format}});
        ASSERT_EQ(svc.status, 200);
        EXPECT_EQ(cli.out, svc.body) << format;
    }
}

TEST_F(CliFixture, EffectsAndMetricsMatchService) {
    auto cli = run_cli("effects " + quote(bundle) + " --threshold 0.1");
    ASSERT_EQ(cli.exit_code, 0) << cli.err;
    EXPECT_EQ(cli.out, service_get("effects", {{"threshold", "0.1"}}).body);
    cli = run_cli("metrics " + quote(bundle) + " --k 1,10,30 --format csv");
    ASSERT_EQ(cli.exit_code, 0) << cli.err;
    EXPECT_EQ(cli.out, service_get("metrics", {{"k", "1,10,30"}, {"format", "csv"}}).body);
}

TEST_F(CliFixture, CorruptedBundleExitsTwoWithTypedError) {
    auto text = read_bundle(bundle);
    text.branches += "999999: 1\n";
    write_bundle(bundle, text);
    const auto r = run_cli("validate " + quote(bundle));
    EXPECT_EQ(r.exit_code, 2);
    const auto err = nlohmann::json::parse(r.err);
    EXPECT_FALSE(err["error"]["code"].get<std::string>().empty());
    EXPECT_EQ(run_cli("validate " + quote(root / "missing")).exit_code, 2);
    EXPECT_NE(run_cli("compare " + quote(bundle)).exit_code, 0);
}

TEST_F(CliFixture, ExcludingFailureValuesRemovesFailures) {
    const nlohmann::json plan = {{"exclude_values", {{{"param", "ST"}, {"value", "llvm"}}, {{"param", "DI"}, {"value", true}}}}};
    detail::write_file(root / "plan.json", plan.dump());
    auto r = run_cli("refine apply " + quote(bundle) + " " + quote(root / "plan.json") + " --out " +
                     quote(root / "refined.json"));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    r = run_cli("simlab run --profile failure-prone+nested-depth --trials 150 --seed 3 --space " +
                quote(root / "refined.json") + " --out " + quote(root / "after"));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto before = nlohmann::json::parse(run_cli("validate " + quote(bundle)).out);
    const auto after = nlohmann::json::parse(r.out);
    EXPECT_GT(before["failed"].get<int>(), 0);
    EXPECT_EQ(after["summary"]["failed"], 0);
    const auto m = nlohmann::json::parse(run_cli("metrics " + quote(root / "after") + " --k 1,30").out);
    EXPECT_EQ(m, nlohmann::json::parse(metrics_body(load_experiment(root / "after"), {1, 30}, ReportFormat::json)));
}

TEST_F(CliFixture, SuggestEmitsFragments) {
    const auto r = run_cli("refine suggest " + quote(bundle));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto exp = load_experiment(bundle);
    EXPECT_EQ(nlohmann::json::parse(r.out), suggestions_json(exp, compute_effects(exp), 0.3, 0.05));
}
