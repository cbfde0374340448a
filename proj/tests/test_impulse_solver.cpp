#include "rimpulse/builtins.hpp"
#include "rimpulse/impulse_solver.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace rimpulse;

namespace {

SolverConfig small(std::size_t k_max = 2) {
    SolverConfig c;
    c.steps = 20;
    c.n_paths = 4000;
    c.seed = 3;
    c.k_max = k_max;
    c.early_stop = false;
    return c;
}

const RobustSolution& cash_solution() {
    static const RobustSolution sol = solve_robust(make_builtin("cash1d"), small());
    return sol;
}

} // namespace

TEST(ReachableBox, CashChains) {
    const auto spec = make_builtin("cash1d");
    auto [lo, hi] = reachable_box(spec, 3);
    EXPECT_NEAR(lo[0], -0.5, 1e-15);
    EXPECT_NEAR(hi[0], 2.5, 1e-15);
    auto [lo0, hi0] = reachable_box(spec, 0);
    EXPECT_EQ(lo0, spec.x0);
    EXPECT_EQ(hi0, spec.x0);
    auto [lo9, hi9] = reachable_box(spec, 9);
    EXPECT_NEAR(lo9[0], -3.5, 1e-12);
    EXPECT_NEAR(hi9[0], 5.0, 1e-12);
}

TEST(SolveRobust, LevelsComputedAndFinite) {
    const auto& sol = cash_solution();
    ASSERT_EQ(sol.levels().size(), 3u);
    EXPECT_TRUE(std::isnan(sol.levels()[0].sup_increment));
    for (const auto& l : sol.levels()) {
        EXPECT_TRUE(std::isfinite(l.y0));
        EXPECT_GT(l.se, 0.0);
        EXPECT_EQ(l.skorokhod_violations, 0u);
        EXPECT_EQ(l.skorokhod_sum, 0.0);
    }
    for (const auto& s : sol.surfaces()) EXPECT_TRUE(s.finite());
    EXPECT_EQ(sol.start_lo(), (std::vector<double>{0.0}));
    EXPECT_EQ(sol.start_hi(), (std::vector<double>{2.0}));
}

TEST(SolveRobust, PicardLevelsNondecreasing) {
    const auto& sol = cash_solution();
    EXPECT_FALSE(sol.monotonicity_violated());
    for (std::size_t k = 1; k < sol.levels().size(); ++k) {
        const double tol = 1e-3 * (1.0 + std::abs(sol.levels()[k].y0));
        EXPECT_GE(sol.levels()[k].y0, sol.levels()[k - 1].y0 - tol) << k;
    }
    EXPECT_GT(sol.levels()[1].y0, sol.levels()[0].y0 + 0.5);  // one impulse toward 0 is worth a lot
}

TEST(SolveRobust, BarrierEqualsBruteForceAtAPoint) {
    const auto& sol = cash_solution();
    const auto& spec = sol.spec();
    const double x = 1.4;
    PathView v;
    v.index = 7;
    v.time = sol.grid().time(7);
    v.dim = 1;
    v.current = std::span<const double>(&x, 1);
    for (std::size_t k = 1; k <= 2; ++k) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t arg = 99;
        for (std::size_t b = 0; b < spec.marks.size(); ++b) {
            const double post = std::clamp(x + spec.marks.values[b], -5.0, 5.0);
            const double val = sol.level_value(k - 1, v.with_current(std::span<const double>(&post, 1))) -
                               (0.1 + 0.05 * x);
            if (val > best) {
                best = val;
                arg = b;
            }
        }
        std::size_t got = 99;
        EXPECT_EQ(sol.barrier(k, v, &got), best);
        EXPECT_EQ(got, arg);
        EXPECT_EQ(arg, 0u);  // moving toward 0 wins at x = 1.4
    }
    EXPECT_EQ(sol.barrier(0, v), kNoBarrier);
    PathView end = v;
    end.index = sol.grid().steps();
    EXPECT_EQ(sol.barrier(2, end), kNoBarrier);
    EXPECT_EQ(sol.level_value(2, end), -x * x);
}

TEST(SolveRobust, HugeCostDisablesImpulses) {
    const auto spec = make_builtin("cash1d", nlohmann::json{{"cost_scale", 1e6}});
    const auto sol = solve_robust(spec, small());
    for (const auto& l : sol.levels()) {
        EXPECT_EQ(l.y0, sol.levels()[0].y0);
        for (double b : l.binding_fraction) EXPECT_EQ(b, 0.0);
    }
    const auto trace = extract_strategy(sol, evaluation_config(sol, 2000, 9, "eval"));
    EXPECT_EQ(trace.mean_interventions(), 0.0);
}

TEST(SolveRobust, EarlyStopAfterTwoSmallIncrements) {
    auto cfg = small(5);
    cfg.early_stop = true;
    cfg.eps_picard = 1e3;
    const auto sol = solve_robust(make_builtin("cash1d"), cfg);
    EXPECT_EQ(sol.levels().size(), 3u);
    EXPECT_EQ(sol.top(), 2u);
}

TEST(SolveRobust, ThreadCountDoesNotChangeResults) {
    auto cfg = small(1);
    cfg.n_paths = 1500;
    set_thread_count(1);
    const auto a = solve_robust(make_builtin("cash1d"), cfg);
    set_thread_count(4);
    const auto b = solve_robust(make_builtin("cash1d"), cfg);
    set_thread_count(1);
    for (std::size_t k = 0; k < a.levels().size(); ++k) {
        EXPECT_NEAR(a.levels()[k].y0, b.levels()[k].y0, 1e-12 * (1.0 + std::abs(a.levels()[k].y0)));
    }
}

TEST(ExtractStrategy, InterventionsHappenOnTheBarrier) {
    const auto& sol = cash_solution();
    const auto trace = extract_strategy(sol, evaluation_config(sol, 3000, 11, "eval"));
    std::size_t total = 0;
    for (const auto& t : trace.paths) {
        EXPECT_LE(t.impulses.size(), sol.top());
        for (std::size_t j = 0; j < t.impulses.size(); ++j) {
            ++total;
            const double bar = t.barriers_at_impulse[j];
            EXPECT_NEAR(t.values_at_impulse[j], bar, 2.0 * sol.config().tol_hit * (1.0 + std::abs(bar)));
            EXPECT_TRUE(sol.spec().marks.index_of(t.impulses.marks[j]).has_value());
        }
    }
    EXPECT_GT(total, 0u);
    double max_term = 0.0;
    for (const auto& t : trace.paths) max_term = std::max(max_term, std::abs(t.terminal));
    EXPECT_LE(trace.mean_interventions(), intervention_bound(sol, max_term));
}

TEST(ExtractStrategy, ValueCloseToY0) {
    const auto& sol = cash_solution();
    const auto trace = extract_strategy(sol, evaluation_config(sol, 4000, 12, "eval"));
    const auto [j, se] = trace.reward_estimate();
    EXPECT_LE(std::abs(j - sol.y0()), 3.0 * std::sqrt(se * se + sol.se() * sol.se()) + 0.02 * std::abs(sol.y0()));
}

TEST(RobustnessOrdering, FewerAdversaryActionsNeverLowerTheValue) {
    auto cfg = small(1);
    const auto full = solve_robust(make_builtin("cash1d"), cfg);
    const auto calm = solve_robust(make_builtin("cash1d", nlohmann::json{{"actions", nlohmann::json::array({0.0})}}), cfg);
    EXPECT_GE(calm.y0(), full.y0() - 3.0 * std::hypot(calm.se(), full.se()));
}

TEST(DualCheck, RandomPoliciesStayBelowY0) {
    const auto& sol = cash_solution();
    const auto cands = default_candidates(sol, 10, 0.05, 2);
    ASSERT_EQ(cands.size(), 12u);
    EXPECT_EQ(cands[0].name, "none");
    EXPECT_EQ(cands[1].name, "optimal");
    for (std::size_t n = 2; n < cands.size(); ++n) EXPECT_LE(cands[n].policy.budget, 2u);
    const auto rep = dual_check(sol, cands, evaluation_config(sol, 2000, 5, "dual"));
    EXPECT_EQ(rep.violations, 0u);
    EXPECT_EQ(rep.candidates.size(), 12u);
    EXPECT_NEAR(rep.gap, rep.y0 - rep.best, 1e-15);
    EXPECT_GE(rep.best, rep.candidates[0].mean);
}

TEST(SolveRobust, PathDependentProblemUsesRunningMax) {
    auto cfg = small(1);
    cfg.n_paths = 3000;
    const auto sol = solve_robust(make_builtin("pathdep1d"), cfg);
    EXPECT_EQ(sol.featurizer().name, "running_max");
    EXPECT_EQ(sol.featurizer().dim, 2u);
    EXPECT_EQ(sol.start_drawdown(), (std::vector<double>{0.5}));
    EXPECT_TRUE(cash_solution().start_drawdown().empty());
    EXPECT_TRUE(std::isfinite(sol.y0()));
    const auto plain = solve_robust(make_builtin("cash1d"), cfg);
    EXPECT_LT(sol.y0(), plain.y0() + 3.0 * std::hypot(sol.se(), plain.se()));  // the drawdown term is a penalty
}

TEST(SolveRobust, RejectsEmptyActionSetAndBadDispersion) {
    auto spec = make_builtin("cash1d");
    spec.actions = PointGrid::scalars({});
    EXPECT_THROW(solve_robust(spec, small()), InvalidArgument);
    auto cfg = small();
    cfg.dispersion = "wide";
    EXPECT_THROW(solve_robust(make_builtin("cash1d"), cfg), InvalidArgument);
}

TEST(SolveRobust, PathDependentSolverReducesToMarkovianWithoutPenalty) {
    auto cfg = small(2);
    const auto pd = solve_robust(make_builtin("pathdep1d", nlohmann::json{{"drawdown_penalty", 0.0}}), cfg);
    const auto plain = solve_robust(make_builtin("cash1d"), cfg);
    const double tol = 3.0 * std::hypot(pd.se(), plain.se());
    EXPECT_NEAR(pd.y0(), plain.y0(), tol);
    const auto trace = extract_strategy(pd, evaluation_config(pd, 4000, 12, "eval"));
    const auto [j, se] = trace.reward_estimate();
    EXPECT_NEAR(j, pd.y0(), 3.0 * std::hypot(se, pd.se()));
}
