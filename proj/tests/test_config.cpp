#include "rimpulse/config.hpp"
#include "rimpulse/report.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace rimpulse;

namespace {

std::filesystem::path source_dir() { return std::filesystem::path(RIMPULSE_SOURCE_DIR); }

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
    const auto dir = std::filesystem::temp_directory_path() / "rimpulse_test_config";
    std::filesystem::create_directories(dir);
    const auto p = dir / name;
    std::ofstream(p) << text;
    return p;
}

std::string field_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ConfigInvalid& e) {
        return e.field();
    }
    return "<none>";
}

} // namespace

TEST(Config, ShippedConfigsParse) {
    for (const char* name : {"cash1d", "mart1d", "pathdep1d"}) {
        const auto c = load_config(source_dir() / "configs" / (std::string(name) + ".toml"));
        EXPECT_EQ(c.problem, name);
        EXPECT_EQ(c.steps, 50u);
        EXPECT_EQ(c.paths, 20000u);
        EXPECT_TRUE(c.deterministic);
    }
    const auto cash = load_config(source_dir() / "configs" / "cash1d.toml");
    EXPECT_EQ(cash.solver.k_max, 3u);
    EXPECT_EQ(cash.solver.engine.basis.degree, 2);
    EXPECT_EQ(cash.oracle_steps, 200u);
    EXPECT_EQ(cash.dual_candidates, 100u);
    const auto pd = load_config(source_dir() / "configs" / "pathdep1d.toml");
    EXPECT_EQ(pd.overrides.at("drawdown_penalty").get<double>(), 0.25);
    EXPECT_FALSE(pd.oracle_enabled);
}

TEST(Config, TooFewPathsNamesTheField) {
    const auto p = write_temp("few.toml", "[problem]\nname = \"cash1d\"\n[monte_carlo]\npaths = 10\n");
    EXPECT_EQ(field_of([&] { load_config(p); }), "monte_carlo.paths");
}

TEST(Config, UnknownKeysRejected) {
    EXPECT_EQ(field_of([] { parse_config(nlohmann::json::parse(R"({"problem":{"name":"cash1d"},"solver":{"kmax":3}})")); }),
              "solver.kmax");
    EXPECT_EQ(field_of([] { parse_config(nlohmann::json::parse(R"({"problem":{"name":"cash1d"},"extra":{}})")); }),
              "extra");
    EXPECT_EQ(field_of([] { parse_config(nlohmann::json::parse(R"({"grid":{"steps":5}})")); }), "problem.name");
    EXPECT_EQ(field_of([] {
                  parse_config(nlohmann::json::parse(R"({"problem":{"name":"cash1d","overrides":{"nope":1}}})"));
              }),
              "problem.overrides.nope");
}

TEST(Config, TypeAndRangeChecks) {
    auto base = [](const std::string& extra) {
        return nlohmann::json::parse(R"({"problem":{"name":"cash1d"},)" + extra + "}");
    };
    EXPECT_EQ(field_of([&] { parse_config(base(R"("grid":{"steps":0})")); }), "grid.steps");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("grid":{"steps":"ten"})")); }), "grid.steps");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("solver":{"eps_picard":-1})")); }), "solver.eps_picard");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("solver":{"basis":"fourier"})")); }), "solver.basis");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("monte_carlo":{"paths":-5})")); }), "monte_carlo.paths");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("monte_carlo":{"antithetic":true,"paths":1001})")); }),
              "monte_carlo.paths");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("monte_carlo":{"dual_probability":2})")); }),
              "monte_carlo.dual_probability");
    EXPECT_EQ(field_of([&] { parse_config(base(R"("output":{"deterministic":1})")); }), "output.deterministic");
}

TEST(Config, JsonConfigEquivalentToToml) {
    const auto j = write_temp("c.json", R"({"problem":{"name":"mart1d"},"grid":{"steps":12},"monte_carlo":{"paths":500,"seed":4}})");
    const auto t = write_temp("c.toml", "[problem]\nname = \"mart1d\"\n[grid]\nsteps = 12\n[monte_carlo]\npaths = 500\nseed = 4\n");
    const auto a = load_config(j), b = load_config(t);
    EXPECT_EQ(a.steps, b.steps);
    EXPECT_EQ(a.paths, b.paths);
    EXPECT_EQ(a.seed, b.seed);
    EXPECT_EQ(a.solver_config().n_paths, 500u);
    EXPECT_EQ(a.eval_paths, 500u);
}

TEST(Config, MalformedFilesReported) {
    const auto bad = write_temp("bad.toml", "[problem\nname = 1\n");
    EXPECT_EQ(field_of([&] { load_config(bad); }), "<file>");
    EXPECT_EQ(field_of([] { load_config("/nonexistent/config.toml"); }), "<file>");
}

TEST(ExitCodes, ValidationAndNumericalFailures) {
    EXPECT_EQ(exit_code_for(ConfigInvalid("x", "y")), kExitValidation);
    EXPECT_EQ(exit_code_for(InvalidArgument("x")), kExitValidation);
    EXPECT_EQ(exit_code_for(IllConditioned("x")), kExitNumerical);
    EXPECT_EQ(exit_code_for(BarrierAboveTerminal("x")), kExitNumerical);
    EXPECT_EQ(exit_code_for(ProbabilityOutOfRange("x")), kExitNumerical);

    const auto few = write_temp("few2.toml", "[problem]\nname = \"cash1d\"\n[monte_carlo]\npaths = 10\n");
    std::ostringstream log;
    EXPECT_EQ(run(few, "", std::nullopt, log), kExitValidation);
    EXPECT_NE(log.str().find("monte_carlo.paths"), std::string::npos);
}

TEST(Run, SmallEndToEndWritesArtifacts) {
    const auto cfg = write_temp("e2e.toml",
                                "[problem]\nname = \"cash1d\"\n[grid]\nsteps = 10\n[monte_carlo]\npaths = 1000\n"
                                "dual_candidates = 3\ndual_paths = 200\neval_paths = 500\n[solver]\nk_max = 1\n"
                                "[oracle]\nsteps = 40\n[output]\ndeterministic = true\ndiagnostics = true\nsurfaces = true\n"
                                "paths_csv = true\n");
    const auto out = std::filesystem::temp_directory_path() / "rimpulse_test_config" / "e2e_out";
    std::filesystem::remove_all(out);
    std::ostringstream log;
    ASSERT_EQ(run(cfg, out.string(), 7, log), kExitOk) << log.str();
    for (const char* f : {"report.json", "levels.csv", "strategy.csv", "oracle.csv", "diagnostics_level0.csv",
                          "diagnostics_level1.csv", "surfaces.json", "paths.csv"}) {
        EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
    }
    std::ifstream in(out / "report.json");
    const auto r = nlohmann::json::parse(in);
    EXPECT_EQ(r.at("monte_carlo").at("seed").get<int>(), 7);
    EXPECT_EQ(r.at("levels").size(), 2u);
    EXPECT_FALSE(r.contains("timings"));
    EXPECT_EQ(r.at("dual").at("candidates").get<int>(), 5);
    EXPECT_TRUE(r.at("oracle").is_object());
}
