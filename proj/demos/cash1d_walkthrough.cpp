// Solves the cash-management problem, compares with the tree oracle and
// prints a few sample impulse paths.

#include "rimpulse/rimpulse.hpp"

#include <cstdio>

using namespace rimpulse;

int main() {
    const ProblemSpec spec = make_builtin("cash1d");

    SolverConfig cfg;
    cfg.steps = 50;
    cfg.n_paths = 20000;
    cfg.seed = 1;
    cfg.k_max = 3;
    cfg.early_stop = false;

    const RobustSolution sol = solve_robust(spec, cfg);
    const auto tree = solve_tree(make_tree_spec(spec, 200, cfg.k_max)).root_values();

    std::printf("level  Y0(k)       se        tree V(r=k)\n");
    for (const auto& l : sol.levels())
        std::printf("%5zu  %+.6f  %.2e  %+.6f\n", l.k, l.y0, l.se, tree[l.k]);

    const auto trace = extract_strategy(sol, evaluation_config(sol, 20000, 1, "eval"));
    const auto [j, se] = trace.reward_estimate();
    std::printf("\nJ(u*, a*) = %+.6f (se %.2e), E[N] = %.3f\n", j, se, trace.mean_interventions());

    std::printf("\nfirst paths with impulses:\n");
    int shown = 0;
    for (std::size_t p = 0; p < trace.paths.size() && shown < 5; ++p) {
        const auto& t = trace.paths[p];
        if (t.impulses.empty()) continue;
        ++shown;
        std::printf("  path %zu:", p);
        for (std::size_t n = 0; n < t.impulses.size(); ++n)
            std::printf(" t=%.2f mark=%+.1f", t.impulses.times[n], t.impulses.marks[n][0]);
        std::printf("  reward %+.4f\n", t.reward());
    }
    return 0;
}
