#include "rimpulse/builtins.hpp"
#include "rimpulse/hamiltonian.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace rimpulse;

namespace {

struct Point {
    std::vector<double> x;
    PathView view() const {
        PathView v;
        v.dim = x.size();
        v.current = x;
        return v;
    }
};

} // namespace

TEST(Hamiltonian, ScalarExamples) {
    // cash1d: breve_a = alpha / 0.2, phi = -x^2
    const auto spec = make_builtin("cash1d");
    const Point at{{1.0}};
    const double z = 2.0;
    const auto h = minimize_hamiltonian(spec, at.view(), std::span<const double>(&z, 1), true);
    EXPECT_NEAR(h.value, -1.0 - 1.0, 1e-14);  // z * (-0.1/0.2) - 1
    EXPECT_EQ(h.index, 0u);
    EXPECT_EQ(h.minimizer, (Mark{-0.1}));
    ASSERT_EQ(h.per_action.size(), 3u);
    EXPECT_NEAR(h.per_action[1], -1.0, 1e-15);
    EXPECT_NEAR(h.per_action[2], 0.0, 1e-14);

    const double zn = -2.0;
    const auto hn = minimize_hamiltonian(spec, at.view(), std::span<const double>(&zn, 1));
    EXPECT_EQ(hn.index, 2u);
    EXPECT_NEAR(hn.value, -2.0, 1e-14);

    const double a = 0.1;
    EXPECT_NEAR(hamiltonian(spec, at.view(), std::span<const double>(&z, 1), std::span<const double>(&a, 1)), 0.0, 1e-14);
}

TEST(Hamiltonian, ClosedFormOnRandomZ) {
    const auto spec = make_builtin("cash1d");
    std::mt19937_64 rng(2024);
    std::normal_distribution<double> n(0.0, 3.0);
    std::uniform_real_distribution<double> ux(-3.0, 3.0);
    for (int trial = 0; trial < 1000; ++trial) {
        const Point at{{ux(rng)}};
        const double z = n(rng);
        const double phi = -at.x[0] * at.x[0];
        const auto h = minimize_hamiltonian(spec, at.view(), std::span<const double>(&z, 1));
        EXPECT_NEAR(h.value, -(0.1 / 0.2) * std::abs(z) + phi, 1e-12 * (1.0 + std::abs(phi) + std::abs(z)));
    }
}

TEST(Hamiltonian, TiesGoToLowestIndexDeterministically) {
    const auto spec = make_builtin("cash1d");
    const Point at{{0.7}};
    const double z = 0.0;
    for (int rep = 0; rep < 5; ++rep) {
        const auto h = minimize_hamiltonian(spec, at.view(), std::span<const double>(&z, 1));
        EXPECT_EQ(h.index, 0u);
        EXPECT_NEAR(h.value, -0.49, 1e-15);
    }
}

TEST(Hamiltonian, ArgminInvariantUnderPositiveScalingWhenPhiIsFlat) {
    const auto spec = make_builtin("mart1d", nlohmann::json{{"actions", nlohmann::json::array({-0.3, 0.1, 0.25})}});
    const Point at{{0.0}};
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 200; ++trial) {
        const double z = n(rng);
        const double zs = 7.5 * z;
        const auto a = minimize_hamiltonian(spec, at.view(), std::span<const double>(&z, 1));
        const auto b = minimize_hamiltonian(spec, at.view(), std::span<const double>(&zs, 1));
        EXPECT_EQ(a.index, b.index);
        EXPECT_NEAR(b.value, 7.5 * a.value, 1e-12);
    }
}

TEST(Hamiltonian, TwoDimensionalActionsMatchBruteForce) {
    ProblemSpec s;
    s.d1 = 0;
    s.d2 = 2;
    s.x0 = {0.0, 0.0};
    s.drift_a2 = [](const PathView&, std::span<const double> a, std::span<double> out) {
        out[0] = a[0] + 0.5 * a[1];
        out[1] = a[1];
    };
    s.sigma = [](const PathView&, std::span<double> out) {
        out[0] = 0.5;
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = 2.0;
    };
    s.running_reward = [](const PathView& v, std::span<const double> a) { return v.x(0) * a[0] - a[1] * a[1]; };
    s.actions = PointGrid::box({-1.0, -1.0}, {1.0, 1.0}, 5);

    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    for (int trial = 0; trial < 300; ++trial) {
        const Point at{{n(rng), n(rng)}};
        const std::vector<double> z{n(rng), n(rng)};
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t a = 0; a < s.actions.size(); ++a) {
            const auto al = s.actions.point(a);
            const double h = z[0] * (al[0] + 0.5 * al[1]) / 0.5 + z[1] * al[1] / 2.0 + at.x[0] * al[0] - al[1] * al[1];
            if (h < best) {
                best = h;
                arg = a;
            }
        }
        const auto h = minimize_hamiltonian(s, at.view(), z);
        EXPECT_NEAR(h.value, best, 1e-12 * (1.0 + std::abs(best)));
        EXPECT_EQ(h.index, arg);
    }
}

TEST(Hamiltonian, TableMatchesDirectEvaluation) {
    const auto spec = make_builtin("pathdep1d");
    const Point at{{0.4}};
    const HamiltonianTable table(spec, at.view());
    for (double z : {-3.0, -0.1, 0.0, 2.5}) {
        for (std::size_t a = 0; a < table.size(); ++a) {
            EXPECT_DOUBLE_EQ(table.value(a, std::span<const double>(&z, 1)),
                             hamiltonian(spec, at.view(), std::span<const double>(&z, 1), spec.actions.point(a)));
        }
    }
}

TEST(Hamiltonian, RefinementGapVanishesForLinearTilt) {
    const auto spec = make_builtin("cash1d");
    const Point at{{1.0}};
    for (double z : {-2.0, 0.3, 4.0}) {
        EXPECT_NEAR(hamiltonian_refinement_gap(spec, at.view(), std::span<const double>(&z, 1)), 0.0, 1e-14);
    }
}

TEST(Hamiltonian, RefinementGapDetectsCurvature) {
    auto spec = make_builtin("cash1d");
    spec.running_reward = [](const PathView&, std::span<const double> a) { return 50.0 * (a[0] - 0.03) * (a[0] - 0.03); };
    const Point at{{0.0}};
    const double z = 0.0;
    EXPECT_GT(hamiltonian_refinement_gap(spec, at.view(), std::span<const double>(&z, 1)), 0.0);
}

TEST(Hamiltonian, ErrorsOnBadInput) {
    const auto spec = make_builtin("cash1d");
    const Point at{{0.0}};
    const std::vector<double> z{1.0, 2.0};
    EXPECT_THROW(minimize_hamiltonian(spec, at.view(), z), InvalidArgument);
    auto empty = spec;
    empty.actions = PointGrid::scalars({});
    const double z1 = 1.0;
    EXPECT_THROW(minimize_hamiltonian(empty, at.view(), std::span<const double>(&z1, 1)), InvalidArgument);
}
