#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/parallel.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/problem.hpp"
#include "rimpulse/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace rimpulse {

struct SimConfig {
    TimeGrid grid;
    std::size_t n_paths = 1;
    std::uint64_t seed = 0;
    bool antithetic = false;
    std::string substream = "forward";

    // Optional start box: when non-empty, initial states are drawn uniformly
    // from [start_lo, start_hi] instead of sitting at x0. Antithetic partners
    // share their start point.
    std::vector<double> start_lo;
    std::vector<double> start_hi;

    // Optional initial drawdown: when non-empty, every path carries a running
    // maximum drawn uniformly from [x_0, x_0 + start_drawdown] per component.
    std::vector<double> start_drawdown;

    void check(std::size_t dim) const {
        if (n_paths == 0) throw InvalidArgument("SimConfig: n_paths must be positive");
        if (antithetic && n_paths % 2 != 0) throw InvalidArgument("SimConfig: antithetic sampling needs an even path count");
        if (!start_lo.empty() && (start_lo.size() != dim || start_hi.size() != dim)) {
            throw InvalidArgument("SimConfig: start box dimension mismatch");
        }
        if (!start_drawdown.empty()) {
            if (start_drawdown.size() != dim) throw InvalidArgument("SimConfig: start drawdown dimension mismatch");
            for (double v : start_drawdown)
                if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("SimConfig: start drawdown must be finite and >= 0");
        }
    }
};

namespace detail {

// Brownian increments of path p (d values per step). Odd antithetic paths
// replay their even partner's stream with the sign flipped.
inline void draw_increments(const SimConfig& cfg, std::size_t p, std::span<double> out) {
    const bool mirror = cfg.antithetic && (p % 2 == 1);
    PathRng rng(cfg.seed, cfg.substream, mirror ? p - 1 : p);
    const double s = std::sqrt(cfg.grid.dt());
    for (double& w : out) w = s * rng.normal();
    if (mirror)
        for (double& w : out) w = -w;
}

inline void draw_start(const SimConfig& cfg, const std::vector<double>& x0, std::size_t p, std::span<double> out) {
    if (cfg.start_lo.empty()) {
        for (std::size_t k = 0; k < out.size(); ++k) out[k] = x0[k];
        return;
    }
    const std::size_t owner = cfg.antithetic ? p - (p % 2) : p;
    PathRng rng(cfg.seed, cfg.substream + "/start", owner);
    for (std::size_t k = 0; k < out.size(); ++k) {
        out[k] = cfg.start_lo[k] + (cfg.start_hi[k] - cfg.start_lo[k]) * rng.uniform();
    }
}

inline void draw_carried_max(const SimConfig& cfg, std::span<const double> start, std::size_t p, std::span<double> out) {
    const std::size_t owner = cfg.antithetic ? p - (p % 2) : p;
    PathRng rng(cfg.seed, cfg.substream + "/drawdown", owner);
    for (std::size_t k = 0; k < out.size(); ++k) out[k] = start[k] + cfg.start_drawdown[k] * rng.uniform();
}

} // namespace detail

/// Euler-Maruyama for the impulsively controlled SDE with drift (a1, 0): the
/// adversary's drift is not simulated, it enters the backward driver instead.
/// Impulses of `u` are snapped to the grid and applied at their index before
/// the diffusion step, in list order.
inline PathBatch simulate_driftless(const ProblemSpec& spec, const ImpulseSequence& u, const SimConfig& cfg) {
    const std::size_t d = spec.dim();
    cfg.check(d);
    if (!u.is_valid()) throw InvalidArgument("simulate_driftless: invalid impulse sequence");
    for (double t : u.times) {
        if (t < 0.0 || t > cfg.grid.horizon()) throw InvalidArgument("simulate_driftless: impulse time outside [0,T]");
    }
    const std::size_t M = cfg.grid.steps();
    const double dt = cfg.grid.dt();

    std::vector<std::size_t> impulse_index(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) impulse_index[j] = cfg.grid.snap(u.times[j]);

    PathBatch batch(cfg.grid, cfg.n_paths, d, cfg.seed);
    if (!cfg.start_drawdown.empty()) batch.enable_carried_max();
    parallel_for(cfg.n_paths, [&](std::size_t p) {
        std::vector<double> dw(M * d), a1(spec.d1), sig(d * d), post(d);
        detail::draw_increments(cfg, p, dw);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < d; ++k) batch.increment(p, i, k) = dw[i * d + k];
        detail::draw_start(cfg, spec.x0, p, batch.state_at(p, 0));
        if (batch.has_carried_max()) detail::draw_carried_max(cfg, batch.state_at(p, 0), p, batch.carried_max_at(p));

        std::size_t next = 0;
        for (std::size_t i = 0;; ++i) {
            while (next < u.size() && impulse_index[next] == i) {
                spec.impulse_map(batch.view(p, i), u.marks[next], post);
                auto cur = batch.state_at(p, i);
                for (std::size_t k = 0; k < d; ++k) cur[k] = post[k];
                ++next;
            }
            if (i == M) break;
            const PathView v = batch.view(p, i);
            if (spec.d1 > 0) spec.drift_a1(v, a1);
            spec.sigma(v, sig);
            for (std::size_t k = 0; k < d; ++k) {
                double x = batch.state(p, i, k);
                if (k < spec.d1) x += a1[k] * dt;
                for (std::size_t c = 0; c < d; ++c) x += sig[k * d + c] * dw[i * d + c];
                batch.state(p, i + 1, k) = x;
            }
        }
    });
    return batch;
}

/// What a policy sees when it is asked to act.
struct DecisionContext {
    const PathView& view;
    std::size_t remaining;  // impulses still allowed
    std::size_t pass;       // impulses already applied at this grid index
    std::size_t path;
    PathRng& rng;           // per-path stream reserved for randomized policies
};

struct ImpulseDecision {
    Mark mark;
    // Diagnostics filled in by value-based policies: the value and the
    // intervention barrier at the decision point.
    double value = std::numeric_limits<double>::quiet_NaN();
    double barrier = std::numeric_limits<double>::quiet_NaN();
};

struct ImpulsePolicy {
    std::size_t budget = 0;
    std::function<std::optional<ImpulseDecision>(const DecisionContext&)> decide;

    static ImpulsePolicy none() {
        return {0, [](const DecisionContext&) { return std::optional<ImpulseDecision>{}; }};
    }
};

struct AdversaryPolicy {
    std::function<Mark(const DecisionContext&)> act;

    static AdversaryPolicy constant(Mark alpha) {
        return {[alpha = std::move(alpha)](const DecisionContext&) { return alpha; }};
    }
};

struct PathTrace {
    ImpulseSequence impulses;
    std::vector<double> costs;
    std::vector<double> values_at_impulse;
    std::vector<double> barriers_at_impulse;
    double running = 0.0;
    double terminal = 0.0;

    double cost_total() const {
        double c = 0.0;
        for (double v : costs) c += v;
        return c;
    }
    double reward() const { return running + terminal - cost_total(); }
};

/// Realized impulse times/marks, adversary actions and reward decomposition
/// for every simulated path.
struct StrategyTrace {
    std::size_t steps = 0;
    std::vector<PathTrace> paths;
    std::vector<std::uint32_t> actions;  // P x M indices into A

    std::uint32_t action(std::size_t p, std::size_t i) const { return actions[p * steps + i]; }

    double mean_interventions() const {
        double s = 0.0;
        for (const auto& t : paths) s += static_cast<double>(t.impulses.size());
        return paths.empty() ? 0.0 : s / static_cast<double>(paths.size());
    }

    // Sample mean and standard error of the realized reward.
    std::pair<double, double> reward_estimate() const {
        const auto n = static_cast<double>(paths.size());
        double mean = 0.0;
        for (const auto& t : paths) mean += t.reward();
        mean /= n;
        double ss = 0.0;
        for (const auto& t : paths) ss += (t.reward() - mean) * (t.reward() - mean);
        const double var = paths.size() > 1 ? ss / (n - 1.0) : 0.0;
        return {mean, std::sqrt(var / n)};
    }
};

/// Simulation of the controlled SDE with the full drift a(t, X, alpha):
/// at each step the impulse policy may intervene (repeatedly, up to its
/// remaining budget), then the adversary picks alpha, the running reward is
/// accumulated with the rectangle rule, and the state takes an Euler step.
/// Interventions are not allowed at the terminal index.
inline std::pair<PathBatch, StrategyTrace> simulate_controlled(const ProblemSpec& spec, const ImpulsePolicy& impulses,
                                                               const AdversaryPolicy& adversary, const SimConfig& cfg) {
    const std::size_t d = spec.dim();
    cfg.check(d);
    const std::size_t M = cfg.grid.steps();
    const double dt = cfg.grid.dt();

    PathBatch batch(cfg.grid, cfg.n_paths, d, cfg.seed);
    if (!cfg.start_drawdown.empty()) batch.enable_carried_max();
    StrategyTrace trace;
    trace.steps = M;
    trace.paths.resize(cfg.n_paths);
    trace.actions.assign(cfg.n_paths * M, 0);

    parallel_for(cfg.n_paths, [&](std::size_t p) {
        std::vector<double> dw(M * d), a1(spec.d1), a2(spec.d2), sig(d * d), post(d);
        detail::draw_increments(cfg, p, dw);
        for (std::size_t i = 0; i < M; ++i)
            for (std::size_t k = 0; k < d; ++k) batch.increment(p, i, k) = dw[i * d + k];
        detail::draw_start(cfg, spec.x0, p, batch.state_at(p, 0));
        if (batch.has_carried_max()) detail::draw_carried_max(cfg, batch.state_at(p, 0), p, batch.carried_max_at(p));

        PathRng policy_rng(cfg.seed, cfg.substream + "/policy", p);
        PathTrace& tr = trace.paths[p];
        std::size_t remaining = impulses.budget;

        for (std::size_t i = 0; i < M; ++i) {
            for (std::size_t pass = 0; remaining > 0 && pass < impulses.budget; ++pass) {
                const PathView v = batch.view(p, i);
                DecisionContext ctx{v, remaining, pass, p, policy_rng};
                auto decision = impulses.decide(ctx);
                if (!decision) break;
                if (!spec.marks.index_of(decision->mark)) {
                    throw PolicyRange("impulse policy returned a mark outside U");
                }
                const double cost = spec.intervention_cost(v, decision->mark);
                spec.impulse_map(v, decision->mark, post);
                tr.impulses.push_back(v.time, decision->mark);
                tr.costs.push_back(cost);
                tr.values_at_impulse.push_back(decision->value);
                tr.barriers_at_impulse.push_back(decision->barrier);
                auto cur = batch.state_at(p, i);
                for (std::size_t k = 0; k < d; ++k) cur[k] = post[k];
                --remaining;
            }

            const PathView v = batch.view(p, i);
            DecisionContext ctx{v, remaining, 0, p, policy_rng};
            const Mark alpha = adversary.act(ctx);
            const auto a_index = spec.actions.index_of(alpha);
            if (!a_index) throw PolicyRange("adversary policy returned an action outside A");
            trace.actions[p * M + i] = static_cast<std::uint32_t>(*a_index);

            tr.running += spec.running_reward(v, alpha) * dt;

            if (spec.d1 > 0) spec.drift_a1(v, a1);
            spec.drift_a2(v, alpha, a2);
            spec.sigma(v, sig);
            for (std::size_t k = 0; k < d; ++k) {
                double x = batch.state(p, i, k);
                x += (k < spec.d1 ? a1[k] : a2[k - spec.d1]) * dt;
                for (std::size_t c = 0; c < d; ++c) x += sig[k * d + c] * dw[i * d + c];
                batch.state(p, i + 1, k) = x;
            }
        }
        tr.terminal = spec.terminal_reward(batch.state_at(p, M));
    });
    return {std::move(batch), std::move(trace)};
}

/// Monte Carlo estimate of J(u, alpha): mean and standard error of
/// running + terminal - intervention costs over cfg.n_paths paths.
inline std::pair<double, double> estimate_J(const ProblemSpec& spec, const ImpulsePolicy& impulses,
                                            const AdversaryPolicy& adversary, const SimConfig& cfg) {
    return simulate_controlled(spec, impulses, adversary, cfg).second.reward_estimate();
}

/// Open-loop policy applying a fixed impulse sequence; times are snapped to
/// the grid and interventions at the terminal index are dropped.
inline ImpulsePolicy open_loop_policy(const ImpulseSequence& u, const TimeGrid& grid) {
    std::vector<std::size_t> idx(u.size());
    for (std::size_t j = 0; j < u.size(); ++j) idx[j] = grid.snap(u.times[j]);
    return {u.size(), [u, idx](const DecisionContext& ctx) -> std::optional<ImpulseDecision> {
                const std::size_t used = u.size() - ctx.remaining;
                if (used < u.size() && idx[used] == ctx.view.index) return ImpulseDecision{u.marks[used]};
                return std::nullopt;
            }};
}

/// Randomized feasible policy: at each step before T, with probability q
/// (while budget remains), intervene once with a uniformly drawn mark. The
/// coin flips are a counter-based hash of (salt, path, step), so policies with
/// different salts are independent and evaluation stays reproducible.
inline ImpulsePolicy random_policy(const ProblemSpec& spec, double q, std::size_t budget, std::uint64_t salt = 0) {
    if (!(q >= 0.0 && q <= 1.0)) throw InvalidArgument("random_policy: probability must lie in [0,1]");
    const PointGrid marks = spec.marks;
    const std::uint64_t key = splitmix64(salt ^ stream_key("random_policy"));
    return {budget, [q, marks, key](const DecisionContext& ctx) -> std::optional<ImpulseDecision> {
                if (marks.empty() || ctx.pass > 0) return std::nullopt;
                const std::uint64_t h = splitmix64(key ^ splitmix64(ctx.path * 0x9e3779b97f4a7c15ULL + ctx.view.index));
                const double u1 = static_cast<double>(h >> 11) * 0x1.0p-53;
                if (u1 >= q) return std::nullopt;
                const double u2 = static_cast<double>(splitmix64(h) >> 11) * 0x1.0p-53;
                const auto j = static_cast<std::size_t>(u2 * static_cast<double>(marks.size()));
                return ImpulseDecision{marks.point_vector(std::min(j, marks.size() - 1))};
            }};
}

/// E[min(Bin(M, q), B)]: the expected intervention count of random_policy.
inline double random_policy_mean_count(std::size_t steps, double q, std::size_t budget) {
    double pmf = std::pow(1.0 - q, static_cast<double>(steps));
    double mean = 0.0;
    for (std::size_t n = 0; n <= steps; ++n) {
        mean += pmf * static_cast<double>(std::min(n, budget));
        if (n < steps) {
            if (q >= 1.0) {
                pmf = (n + 1 == steps) ? 1.0 : 0.0;
            } else {
                pmf *= static_cast<double>(steps - n) / static_cast<double>(n + 1) * q / (1.0 - q);
            }
        }
    }
    return mean;
}

/// Path dump: step,time,path_id,x_0..x_{d-1}
inline void write_paths_csv(const PathBatch& batch, std::ostream& os) {
    os << "step,time,path_id";
    for (std::size_t k = 0; k < batch.dim(); ++k) os << ",x_" << k;
    os << '\n';
    for (std::size_t p = 0; p < batch.n_paths(); ++p) {
        for (std::size_t i = 0; i <= batch.steps(); ++i) {
            os << i << ',' << batch.grid().time(i) << ',' << p;
            for (std::size_t k = 0; k < batch.dim(); ++k) os << ',' << batch.state(p, i, k);
            os << '\n';
        }
    }
}

} // namespace rimpulse
