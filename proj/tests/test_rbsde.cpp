#include "rimpulse/builtins.hpp"
#include "rimpulse/hamiltonian.hpp"
#include "rimpulse/rbsde.hpp"
#include "rimpulse/simulator.hpp"
#include "rimpulse/tree_oracle.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace rimpulse;

namespace {

PathBatch paths(const ProblemSpec& spec, std::size_t steps, std::size_t n, std::uint64_t seed = 5) {
    SimConfig c;
    c.grid = TimeGrid(spec.horizon, steps);
    c.n_paths = n;
    c.seed = seed;
    return simulate_driftless(spec, {}, c);
}

std::vector<double> terminal_of(const PathBatch& b, const std::function<double(double)>& g) {
    std::vector<double> t(b.n_paths());
    for (std::size_t p = 0; p < b.n_paths(); ++p) t[p] = g(b.state(p, b.steps()));
    return t;
}

Driver constant_driver(double c) {
    return [c](std::size_t, std::size_t, double, std::span<const double>) { return c; };
}

// Optimal stopping of g(X) on a symmetric random walk with running reward f.
double binomial_stopping(double x0, double sigma, double T, std::size_t M, double f, const std::function<double(double)>& g) {
    const double dt = T / static_cast<double>(M), h = sigma * std::sqrt(dt);
    std::vector<double> v(M + 1);
    for (std::size_t j = 0; j <= M; ++j) v[j] = g(x0 + (2.0 * j - static_cast<double>(M)) * h);
    for (std::size_t i = M; i-- > 0;) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double cont = f * dt + 0.5 * (v[j] + v[j + 1]);
            v[j] = std::max(cont, g(x0 + (2.0 * j - static_cast<double>(i)) * h));
        }
    }
    return v[0];
}

} // namespace

TEST(SolveBsde, MartingaleValueAndZ) {
    const auto spec = make_builtin("mart1d", nlohmann::json{{"x0", 0.4}});
    const auto b = paths(spec, 50, 20000);
    const auto st = solve_bsde(b, Featurizer::markov(1), constant_driver(0.0), terminal_of(b, [](double x) { return x; }), {});
    const std::vector<double> f0{0.4};
    const double se = st.y0_se_at(f0);
    EXPECT_GT(se, 0.0);
    EXPECT_NEAR(st.y(0, 0), 0.4, 3.0 * se);
    double zsum = 0.0;
    for (double z : st.Z) zsum += z;
    EXPECT_NEAR(zsum / static_cast<double>(st.Z.size()), 0.2, 0.05 * 0.2);
    EXPECT_EQ(st.skorokhod_violations(), 0u);
    for (double k : st.dK) EXPECT_EQ(k, 0.0);
}

TEST(SolveBsde, ConstantDriverShiftsValueByDriverTimesT) {
    const auto spec = make_builtin("mart1d");
    const auto b = paths(spec, 20, 4000);
    const auto term = terminal_of(b, [](double x) { return x; });
    const auto a = solve_bsde(b, Featurizer::markov(1), constant_driver(0.0), term, {});
    const auto c = solve_bsde(b, Featurizer::markov(1), constant_driver(-0.7), term, {});
    for (std::size_t p = 0; p < 4000; p += 97) EXPECT_NEAR(c.y(p, 0) - a.y(p, 0), -0.7, 1e-9);
}

TEST(SolveBsde, HamiltonianDriverMatchesTreeWithoutImpulses) {
    const auto spec = make_builtin("cash1d");
    const auto b = paths(spec, 50, 20000, 9);
    const Driver driver = [&](std::size_t i, std::size_t p, double, std::span<const double> z) {
        return HamiltonianTable(spec, b.view(p, i)).minimum(z);
    };
    const auto st = solve_bsde(b, Featurizer::markov(1), driver, terminal_of(b, [](double x) { return -x * x; }), {});
    const double tree = solve_tree(make_tree_spec(spec, 200, 0)).root_values()[0];
    EXPECT_NEAR(st.y(0, 0), tree, std::max(0.05 * std::abs(tree), 0.02));
}

TEST(SolveReflected, EmptyBarrierIsTheBsde) {
    const auto spec = make_builtin("cash1d");
    const auto b = paths(spec, 15, 3000);
    const auto term = terminal_of(b, [](double x) { return -x * x; });
    const auto a = solve_bsde(b, Featurizer::markov(1), constant_driver(-1.0), term, {});
    const Barrier none = [](std::size_t, std::size_t) { return kNoBarrier; };
    const auto c = solve_reflected(b, Featurizer::markov(1), constant_driver(-1.0), term, none, {});
    EXPECT_EQ(a.Y, c.Y);
    EXPECT_EQ(a.Z, c.Z);
    for (double k : c.dK) EXPECT_EQ(k, 0.0);
}

TEST(SolveReflected, AmericanStoppingMatchesBinomialTree) {
    auto spec = make_builtin("mart1d", nlohmann::json{{"x0", 0.5}, {"sigma", 1.0}});
    const auto g = [](double x) { return -std::abs(x); };
    const double running = -1.0;
    const auto b = paths(spec, 50, 20000, 13);
    const Barrier bar = [&](std::size_t i, std::size_t p) { return g(b.state(p, i)); };
    const auto st = solve_reflected(b, Featurizer::markov(1), constant_driver(running), terminal_of(b, g), bar, {});
    const double oracle = binomial_stopping(0.5, 1.0, 1.0, 2000, running, g);
    EXPECT_NEAR(st.y(0, 0), oracle, std::max(0.05 * std::abs(oracle), 0.02));
    EXPECT_EQ(st.skorokhod_violations(), 0u);
    EXPECT_EQ(st.skorokhod_sum(), 0.0);
}

TEST(SolveReflected, ConstantBarrierDominatedAndSkorokhodExact) {
    const auto spec = make_builtin("mart1d");
    const auto b = paths(spec, 25, 5000);
    const auto term = terminal_of(b, [](double x) { return std::max(x, 0.9); });
    const Barrier bar = [](std::size_t, std::size_t) { return 0.9; };
    const auto st = solve_reflected(b, Featurizer::markov(1), constant_driver(-0.3), term, bar, {});
    std::size_t bound = 0;
    for (std::size_t p = 0; p < 5000; ++p)
        for (std::size_t i = 0; i <= 25; ++i) {
            EXPECT_GE(st.y(p, i), 0.9);
            if (i < 25 && st.dk(p, i) > 0.0) {
                ++bound;
                EXPECT_EQ(st.y(p, i), st.s(p, i));
            }
        }
    EXPECT_GT(bound, 0u);
    EXPECT_EQ(st.skorokhod_violations(), 0u);
    EXPECT_EQ(st.skorokhod_sum(), 0.0);
}

TEST(SolveReflected, ReflectionRaisesValueAndComparisonHolds) {
    const auto spec = make_builtin("cash1d");
    const auto b = paths(spec, 20, 5000);
    const auto term = terminal_of(b, [](double x) { return -x * x; });
    const auto plain = solve_bsde(b, Featurizer::markov(1), constant_driver(-1.0), term, {});
    const Barrier bar = [&](std::size_t i, std::size_t p) { return -b.state(p, i) * b.state(p, i) - 0.2; };
    const auto refl = solve_reflected(b, Featurizer::markov(1), constant_driver(-1.0), term, bar, {});
    EXPECT_GE(refl.y0_mean(), plain.y0_mean());
    const auto lower = solve_bsde(b, Featurizer::markov(1), constant_driver(-1.5), term, {});
    EXPECT_LE(lower.y0_mean(), plain.y0_mean());
    auto higher_term = term;
    for (auto& t : higher_term) t += 0.25;
    const auto higher = solve_bsde(b, Featurizer::markov(1), constant_driver(-1.0), higher_term, {});
    EXPECT_NEAR(higher.y0_mean() - plain.y0_mean(), 0.25, 1e-9);
}

TEST(SolveReflected, RealizedSumMatchesDecomposition) {
    const auto spec = make_builtin("mart1d");
    const auto b = paths(spec, 10, 1000);
    const auto term = terminal_of(b, [](double x) { return x; });
    const Barrier bar = [](std::size_t, std::size_t) { return 0.95; };
    const auto st = solve_reflected(b, Featurizer::markov(1), constant_driver(-0.2), term,
                                    [&](std::size_t i, std::size_t p) { return i == 10 ? kNoBarrier : bar(i, p); }, {});
    for (std::size_t p = 0; p < 1000; p += 50) {
        double r = term[p];
        for (std::size_t i = 0; i < 10; ++i) r += -0.2 * 0.1 + st.dk(p, i);
        EXPECT_NEAR(st.realized[p], r, 1e-12);
    }
}

TEST(SolveReflected, Errors) {
    const auto spec = make_builtin("mart1d");
    const auto b = paths(spec, 5, 200);
    const auto term = terminal_of(b, [](double x) { return x; });
    const Barrier above = [](std::size_t, std::size_t) { return 100.0; };
    try {
        solve_reflected(b, Featurizer::markov(1), constant_driver(0.0), term, above, {});
        FAIL();
    } catch (const BarrierAboveTerminal& e) {
        EXPECT_NE(std::string(e.what()).find("path"), std::string::npos);
    }
    const Driver nan = [](std::size_t, std::size_t, double, std::span<const double>) { return std::nan(""); };
    EXPECT_THROW(solve_bsde(b, Featurizer::markov(1), nan, term, {}), DriverNonFinite);
    auto bad = term;
    bad[3] = std::numeric_limits<double>::infinity();
    EXPECT_THROW(solve_bsde(b, Featurizer::markov(1), constant_driver(0.0), bad, {}), InvalidArgument);
    EXPECT_THROW(solve_bsde(b, Featurizer::markov(1), constant_driver(0.0), std::vector<double>(3, 0.0), {}),
                 InvalidArgument);
}

TEST(SolveReflected, DriverCapCountsClamps) {
    const auto spec = make_builtin("mart1d");
    const auto b = paths(spec, 5, 300);
    EngineConfig cfg;
    cfg.f_cap = 1.0;
    const auto st = solve_bsde(b, Featurizer::markov(1), constant_driver(-4.0), terminal_of(b, [](double x) { return x; }), cfg);
    std::size_t clamps = 0;
    for (const auto& d : st.diagnostics) clamps += d.clamp_count;
    EXPECT_EQ(clamps, 300u * 5u);
    EXPECT_NEAR(st.y0_mean() - 1.0, -1.0, 0.05);
}

TEST(FirstHit, Examples) {
    BackwardState st(1, 4, 1);
    const double y[] = {1.0, 0.8, 0.5, 0.7, 0.2};
    const double s[] = {0.0, 0.8, kNoBarrier, 0.7, kNoBarrier};
    for (std::size_t i = 0; i <= 4; ++i) {
        st.y(0, i) = y[i];
        st.s(0, i) = s[i];
    }
    EXPECT_EQ(first_hit(st, 0, 0), 1u);
    EXPECT_EQ(first_hit(st, 2, 0), 3u);
    EXPECT_EQ(first_hit(st, 4, 0), 4u);
    st.s(0, 3) = 0.69;
    EXPECT_EQ(first_hit(st, 2, 0), 4u);
    EXPECT_EQ(first_hit(st, 2, 0, 0.01), 3u);
    EXPECT_THROW(first_hit(st, 5, 0), InvalidArgument);
}

TEST(Diagnostics, CsvHasOneRowPerStep) {
    const auto spec = make_builtin("mart1d");
    const auto b = paths(spec, 6, 200);
    const auto st = solve_bsde(b, Featurizer::markov(1), constant_driver(0.0), terminal_of(b, [](double x) { return x; }), {});
    std::ostringstream os;
    write_diagnostics_csv(st, os);
    const auto s = os.str();
    EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 7);
    EXPECT_EQ(s.substr(0, s.find('\n')), "step,condition,mean_abs_z,max_abs_z,clamp_count,mean_dk,binding_fraction");
}
