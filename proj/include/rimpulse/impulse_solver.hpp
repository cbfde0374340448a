#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/hamiltonian.hpp"
#include "rimpulse/parallel.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/problem.hpp"
#include "rimpulse/rbsde.hpp"
#include "rimpulse/regression.hpp"
#include "rimpulse/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace rimpulse {

struct SolverConfig {
    std::size_t steps = 50;
    std::size_t n_paths = 20000;
    std::uint64_t seed = 1;
    bool antithetic = false;

    std::size_t k_max = 5;
    double eps_picard = 5e-3;  // relative: threshold is eps_picard * (1 + |Y0|)
    double tol_mono = 1e-3;    // relative, same scaling
    double tol_hit = 1e-9;
    bool early_stop = true;

    EngineConfig engine;
    std::string featurizer = "auto";  // "auto", "markov" or "running_max"
    std::string dispersion = "auto";  // "auto" (reachable box) or "none"
    bool keep_paths = true;           // retain per-level backward arrays
};

struct PicardLevel {
    std::size_t k = 0;
    double y0 = 0.0;
    double se = 0.0;
    double sup_increment = std::numeric_limits<double>::quiet_NaN();  // level 0 has none
    double mean_increment = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> binding_fraction;  // per step
    double skorokhod_sum = 0.0;
    std::size_t skorokhod_violations = 0;
    std::size_t clamp_count = 0;
    double max_abs_y = 0.0;
    std::shared_ptr<const BackwardState> backward;  // empty unless keep_paths
};

/// The Picard levels of the robust impulse problem together with everything
/// needed to evaluate them at arbitrary path prefixes. Level k is the value
/// with at most k interventions left.
class RobustSolution {
public:
    RobustSolution(ProblemSpec spec, SolverConfig cfg, Featurizer fz)
        : spec_(std::move(spec)), cfg_(std::move(cfg)), fz_(std::move(fz)), grid_(spec_.horizon, cfg_.steps) {}

    const ProblemSpec& spec() const noexcept { return spec_; }
    const SolverConfig& config() const noexcept { return cfg_; }
    const Featurizer& featurizer() const noexcept { return fz_; }
    const TimeGrid& grid() const noexcept { return grid_; }
    const std::vector<PicardLevel>& levels() const noexcept { return levels_; }
    const std::vector<ValueSurface>& surfaces() const noexcept { return surfaces_; }
    std::size_t top() const { return levels_.size() - 1; }

    double y0() const { return levels_.back().y0; }
    double se() const { return levels_.back().se; }
    bool monotonicity_violated() const noexcept { return monotonicity_violated_; }
    const std::vector<double>& start_lo() const noexcept { return start_lo_; }
    const std::vector<double>& start_hi() const noexcept { return start_hi_; }
    const std::vector<double>& start_drawdown() const noexcept { return start_drawdown_; }
    std::vector<std::string> warnings;

    /// C^k_i + H*(Z^k_i) dt at a path prefix (i < M), with the minimizing
    /// action index written to `argmin` when given.
    double continuation(std::size_t k, const PathView& view, std::size_t* argmin = nullptr) const {
        const std::size_t i = view.index;
        std::vector<double> f(fz_.dim), z(spec_.dim()), work;
        fz_(view, f);
        const double c = surfaces_[k].evaluate(i, f, z, work);
        double h = HamiltonianTable(spec_, view).minimum(z, argmin);
        if (cfg_.engine.f_cap > 0.0 && std::abs(h) > cfg_.engine.f_cap) h = std::copysign(cfg_.engine.f_cap, h);
        return c + h * grid_.dt();
    }

    /// max over b in U of [level(k-1) at Gamma(view, b)] - ell(view, b), ties
    /// to the first mark; kNoBarrier at the terminal index, for k = 0 or U empty.
    double barrier(std::size_t k, const PathView& view, std::size_t* argmax = nullptr) const {
        if (k == 0 || view.index >= grid_.steps() || spec_.marks.empty()) return kNoBarrier;
        std::vector<double> post(spec_.dim());
        double best = kNoBarrier;
        std::size_t arg = 0;
        for (std::size_t b = 0; b < spec_.marks.size(); ++b) {
            const auto mark = spec_.marks.point(b);
            spec_.impulse_map(view, mark, post);
            const double v = level_value(k - 1, view.with_current(post)) - spec_.intervention_cost(view, mark);
            if (v > best) {
                best = v;
                arg = b;
            }
        }
        if (argmax) *argmax = arg;
        return best;
    }

    /// Level-k value at a path prefix: psi at T, otherwise
    /// max(continuation, barrier).
    double level_value(std::size_t k, const PathView& view) const {
        if (view.index >= grid_.steps()) return spec_.terminal_reward(view.current);
        const double c = continuation(k, view);
        return std::max(c, barrier(k, view));
    }

    /// Adversary response alpha*(t, Z) using the Z surface of level
    /// min(remaining, top).
    std::size_t adversary_index(std::size_t remaining, const PathView& view) const {
        const std::size_t k = std::min(remaining, top());
        std::vector<double> f(fz_.dim), z(spec_.dim()), work;
        fz_(view, f);
        surfaces_[k].evaluate(view.index, f, z, work);
        std::size_t arg = 0;
        HamiltonianTable(spec_, view).minimum(z, &arg);
        return arg;
    }

    PathView start_view() const {
        PathView v;
        v.index = 0;
        v.time = 0.0;
        v.dim = spec_.dim();
        v.current = spec_.x0;
        return v;
    }

private:
    friend RobustSolution solve_robust(const ProblemSpec&, const SolverConfig&);

    ProblemSpec spec_;
    SolverConfig cfg_;
    Featurizer fz_;
    TimeGrid grid_;
    std::vector<PicardLevel> levels_;
    std::vector<ValueSurface> surfaces_;
    std::vector<double> start_lo_, start_hi_, start_drawdown_;
    bool monotonicity_violated_ = false;
};

inline Featurizer choose_featurizer(const ProblemSpec& spec, const std::string& name) {
    if (name == "auto") return spec.markovian ? Featurizer::markov(spec.dim()) : Featurizer::running_max(spec.dim());
    return Featurizer::by_name(name, spec.dim());
}

/// Bounding box of the states reachable from x0 at t=0 by chains of at most
/// k impulses.
inline std::pair<std::vector<double>, std::vector<double>> reachable_box(const ProblemSpec& spec, std::size_t k) {
    const std::size_t d = spec.dim();
    std::vector<double> lo = spec.x0, hi = spec.x0;
    std::vector<std::vector<double>> frontier{spec.x0};
    for (std::size_t step = 0; step < k && !spec.marks.empty(); ++step) {
        std::vector<std::vector<double>> next;
        for (const auto& x : frontier) {
            PathView v;
            v.dim = d;
            v.current = x;
            for (std::size_t b = 0; b < spec.marks.size(); ++b) {
                std::vector<double> post(d);
                spec.impulse_map(v, spec.marks.point(b), post);
                next.push_back(std::move(post));
            }
        }
        std::sort(next.begin(), next.end());
        next.erase(std::unique(next.begin(), next.end()), next.end());
        for (const auto& x : next)
            for (std::size_t c = 0; c < d; ++c) {
                lo[c] = std::min(lo[c], x[c]);
                hi[c] = std::max(hi[c], x[c]);
            }
        frontier = std::move(next);
    }
    return {lo, hi};
}

/// Post-impulse value of level k-1 at each b minus its cost, maximized over U.
inline double barrier_from_level(const RobustSolution& sol, std::size_t k, const PathBatch& batch, std::size_t i,
                                 std::size_t p) {
    return sol.barrier(k, batch.view(p, i));
}

/// Picard iteration over the intervention budget. Level 0 is the BSDE with
/// driver H*(z); level k reflects on the barrier built from level k-1. All
/// levels share one driftless path batch.
inline RobustSolution solve_robust(const ProblemSpec& spec, const SolverConfig& cfg) {
    if (spec.actions.empty()) throw InvalidArgument("solve_robust: action set is empty");
    RobustSolution sol(spec, cfg, choose_featurizer(spec, cfg.featurizer));
    const std::size_t d = spec.dim();

    SimConfig sim;
    sim.grid = sol.grid_;
    sim.n_paths = cfg.n_paths;
    sim.seed = cfg.seed;
    sim.antithetic = cfg.antithetic;
    sim.substream = "forward";
    if (cfg.dispersion == "auto" && cfg.k_max > 0 && !spec.marks.empty()) {
        auto [lo, hi] = reachable_box(spec, cfg.k_max);
        bool wide = false;
        for (std::size_t c = 0; c < d; ++c) wide = wide || hi[c] > lo[c];
        if (wide) {
            sim.start_lo = lo;
            sim.start_hi = hi;
            // downward impulses open a drawdown that uncontrolled paths
            // would rarely show this early
            if (!spec.markovian) {
                sim.start_drawdown.resize(d);
                for (std::size_t c = 0; c < d; ++c) sim.start_drawdown[c] = std::max(spec.x0[c] - lo[c], 0.0);
            }
        }
    } else if (cfg.dispersion != "auto" && cfg.dispersion != "none") {
        throw InvalidArgument("unknown dispersion mode '" + cfg.dispersion + "'");
    }
    sol.start_lo_ = sim.start_lo;
    sol.start_hi_ = sim.start_hi;
    sol.start_drawdown_ = sim.start_drawdown;

    const PathBatch batch = simulate_driftless(spec, ImpulseSequence{}, sim);
    const FeatureTable features(batch, sol.fz_);
    const std::size_t P = batch.n_paths(), M = batch.steps();

    std::vector<double> terminal(P);
    for (std::size_t p = 0; p < P; ++p) terminal[p] = spec.terminal_reward(batch.state_at(p, M));

    const Driver driver = [&](std::size_t i, std::size_t p, double, std::span<const double> z) {
        return HamiltonianTable(spec, batch.view(p, i)).minimum(z);
    };

    std::vector<double> start_features(sol.fz_.dim);
    sol.fz_(sol.start_view(), start_features);

    std::shared_ptr<const BackwardState> prev;
    std::size_t small_increments = 0;
    for (std::size_t k = 0; k <= cfg.k_max; ++k) {
        Barrier barrier;
        if (k > 0) {
            barrier = [&](std::size_t i, std::size_t p) {
                return i >= M ? kNoBarrier : sol.barrier(k, batch.view(p, i));
            };
        }
        auto state = std::make_shared<BackwardState>(
            solve_reflected(batch, features, sol.fz_.name, driver, terminal, barrier, cfg.engine));
        sol.surfaces_.push_back(state->surface);

        PicardLevel lvl;
        lvl.k = k;
        lvl.y0 = sol.level_value(k, sol.start_view());
        lvl.se = state->y0_se_at(start_features);
        lvl.skorokhod_sum = state->skorokhod_sum();
        lvl.skorokhod_violations = state->skorokhod_violations();
        for (const auto& dg : state->diagnostics) {
            lvl.binding_fraction.push_back(dg.binding_fraction);
            lvl.clamp_count += dg.clamp_count;
        }
        for (double y : state->Y) lvl.max_abs_y = std::max(lvl.max_abs_y, std::abs(y));
        if (prev) {
            double sup = -std::numeric_limits<double>::infinity(), sum = 0.0;
            for (std::size_t n = 0; n < state->Y.size(); ++n) {
                const double inc = state->Y[n] - prev->Y[n];
                sup = std::max(sup, std::abs(inc));
                sum += inc;
            }
            lvl.sup_increment = sup;
            lvl.mean_increment = sum / static_cast<double>(state->Y.size());
            const double prev_y0 = sol.levels_.back().y0;
            if (lvl.y0 - prev_y0 < -cfg.tol_mono * (1.0 + std::abs(lvl.y0))) {
                sol.monotonicity_violated_ = true;
                sol.warnings.push_back("MonotonicityViolated: Y0 decreased from level " + std::to_string(k - 1) +
                                       " to level " + std::to_string(k));
            }
        }
        if (cfg.keep_paths) lvl.backward = state;
        sol.levels_.push_back(std::move(lvl));
        prev = state;

        if (k > 0 && cfg.early_stop) {
            const double thr = cfg.eps_picard * (1.0 + std::abs(sol.levels_.back().y0));
            small_increments = sol.levels_.back().sup_increment <= thr ? small_increments + 1 : 0;
            if (small_increments >= 2) break;
        }
    }
    return sol;
}

/// Impulse policy of the verification theorem: with r interventions left,
/// intervene at the argmax mark when the level-r continuation does not exceed
/// the barrier built from level r-1 (up to tol_hit).
inline ImpulsePolicy optimal_impulse_policy(const RobustSolution& sol) {
    const double tol = sol.config().tol_hit;
    return {sol.top(), [&sol, tol](const DecisionContext& ctx) -> std::optional<ImpulseDecision> {
                const std::size_t r = std::min(ctx.remaining, sol.top());
                if (r == 0 || ctx.view.index >= sol.grid().steps()) return std::nullopt;
                std::size_t arg = 0;
                const double bar = sol.barrier(r, ctx.view, &arg);
                if (bar == kNoBarrier) return std::nullopt;
                const double cont = sol.continuation(r, ctx.view);
                if (cont > bar + tol * (1.0 + std::abs(bar))) return std::nullopt;
                return ImpulseDecision{sol.spec().marks.point_vector(arg), std::max(cont, bar), bar};
            }};
}

/// Worst-case adversary: minimizer of H at the Z surface of the level that
/// matches the impulse budget still available.
inline AdversaryPolicy optimal_adversary(const RobustSolution& sol) {
    return {[&sol](const DecisionContext& ctx) {
        return sol.spec().actions.point_vector(sol.adversary_index(ctx.remaining, ctx.view));
    }};
}

inline SimConfig evaluation_config(const RobustSolution& sol, std::size_t n_paths, std::uint64_t seed,
                                   const std::string& substream) {
    SimConfig cfg;
    cfg.grid = sol.grid();
    cfg.n_paths = n_paths;
    cfg.seed = seed;
    cfg.antithetic = false;
    cfg.substream = substream;
    return cfg;
}

/// Forward sweep on fresh paths under (u*, alpha*).
inline StrategyTrace extract_strategy(const RobustSolution& sol, const SimConfig& eval_cfg) {
    return simulate_controlled(sol.spec(), optimal_impulse_policy(sol), optimal_adversary(sol), eval_cfg).second;
}

struct CandidateResult {
    std::string name;
    double mean = 0.0;
    double se = 0.0;
    double mean_interventions = 0.0;
    bool violation = false;  // mean > Y0 + 3 combined SE
};

struct DualReport {
    double y0 = 0.0;
    double y0_se = 0.0;
    std::vector<CandidateResult> candidates;
    double best = -std::numeric_limits<double>::infinity();
    double gap = 0.0;  // Y0 - best
    std::size_t violations = 0;
};

struct Candidate {
    std::string name;
    ImpulsePolicy policy;
};

/// Evaluates each candidate impulse policy against the worst-case adversary
/// response and compares with Y0. Candidates share the eval_cfg paths.
inline DualReport dual_check(const RobustSolution& sol, const std::vector<Candidate>& candidates,
                             const SimConfig& eval_cfg) {
    DualReport rep;
    rep.y0 = sol.y0();
    rep.y0_se = sol.se();
    const AdversaryPolicy adversary = optimal_adversary(sol);
    for (const auto& c : candidates) {
        const auto trace = simulate_controlled(sol.spec(), c.policy, adversary, eval_cfg).second;
        const auto [mean, se] = trace.reward_estimate();
        CandidateResult r{c.name, mean, se, trace.mean_interventions(), false};
        r.violation = mean > rep.y0 + 3.0 * std::sqrt(rep.y0_se * rep.y0_se + se * se);
        if (r.violation) ++rep.violations;
        rep.best = std::max(rep.best, mean);
        rep.candidates.push_back(std::move(r));
    }
    rep.gap = rep.y0 - rep.best;
    return rep;
}

/// Standard candidate set: no impulses, the extracted strategy, and n random
/// policies with per-step intervention probability q and budget <= budget.
inline std::vector<Candidate> default_candidates(const RobustSolution& sol, std::size_t n_random, double q,
                                                 std::size_t budget) {
    std::vector<Candidate> out;
    out.push_back({"none", ImpulsePolicy::none()});
    out.push_back({"optimal", optimal_impulse_policy(sol)});
    for (std::size_t n = 0; n < n_random; ++n) {
        const std::size_t b = 1 + n % std::max<std::size_t>(budget, 1);
        const double qn = q * (0.5 + static_cast<double>(n % 7) / 6.0);
        auto pol = random_policy(sol.spec(), std::min(qn, 1.0), b, n);
        out.push_back({"random_" + std::to_string(n), std::move(pol)});
    }
    return out;
}

/// Crude bound on E[N*]: (max |Y| over the backward pass + max |terminal|) / delta.
inline double intervention_bound(const RobustSolution& sol, double max_abs_terminal) {
    double my = 0.0;
    for (const auto& l : sol.levels()) my = std::max(my, l.max_abs_y);
    return (my + max_abs_terminal) / sol.spec().cost_floor;
}

} // namespace rimpulse
