#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/problem.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <vector>

namespace rimpulse {

/// Scalar Markovian data for the binomial-tree game. Node (i, j) carries the
/// state x0 + (2j - i) h with h = sigma sqrt(dt) and j in [-W, i + W]; the
/// adversary tilts the up-probability to (1 + breve_a(alpha) sqrt(dt)) / 2.
struct TreeSpec {
    std::size_t steps = 200;
    double horizon = 1.0;
    double x0 = 0.0;
    double sigma = 1.0;
    std::size_t k_max = 0;
    std::size_t width = 0;  // W, extra nodes on each side

    std::vector<double> actions;
    std::vector<double> marks;
    std::function<double(double t, double x, double alpha)> tilt;  // breve_a
    std::function<double(double t, double x, double alpha)> running;
    std::function<double(double x)> terminal;
    std::function<double(double t, double x, double b)> cost;
    std::function<double(double t, double x, double b)> impulse;

    double dt() const { return horizon / static_cast<double>(steps); }
    double h() const { return sigma * std::sqrt(dt()); }
};

/// Builds a TreeSpec from a one-dimensional Markovian ProblemSpec, with the
/// lattice wide enough that every impulse target from the reachable states
/// stays on the tree.
inline TreeSpec make_tree_spec(const ProblemSpec& spec, std::size_t steps, std::size_t k_max) {
    if (spec.dim() != 1 || spec.d1 != 0) throw InvalidArgument("tree oracle needs a scalar state with d1 = 0");
    if (!spec.markovian) throw InvalidArgument("tree oracle needs a Markovian problem");
    if (spec.actions.dim != 1 || (!spec.marks.empty() && spec.marks.dim != 1)) {
        throw InvalidArgument("tree oracle needs scalar actions and marks");
    }
    if (steps == 0) throw InvalidArgument("tree oracle needs at least one step");

    auto at = [](double t, const double& x) {
        PathView v;
        v.index = 0;
        v.time = t;
        v.dim = 1;
        v.current = std::span<const double>(&x, 1);
        return v;
    };

    TreeSpec ts;
    ts.steps = steps;
    ts.horizon = spec.horizon;
    ts.x0 = spec.x0[0];
    ts.k_max = k_max;
    ts.actions = spec.actions.values;
    ts.marks = spec.marks.values;
    {
        double s = 0.0;
        spec.sigma(at(0.0, ts.x0), std::span<double>(&s, 1));
        ts.sigma = s;
    }
    if (!(ts.sigma > 0.0)) throw SingularDiffusion("tree oracle needs a positive constant volatility");

    ts.tilt = [spec, at](double t, double x, double alpha) {
        double out = 0.0;
        DriftTilt(spec, at(t, x)).apply(std::span<const double>(&alpha, 1), std::span<double>(&out, 1));
        return out;
    };
    ts.running = [spec, at](double t, double x, double alpha) {
        return spec.running_reward(at(t, x), std::span<const double>(&alpha, 1));
    };
    ts.terminal = [spec](double x) { return spec.terminal_reward(std::span<const double>(&x, 1)); };
    ts.cost = [spec, at](double t, double x, double b) {
        return spec.intervention_cost(at(t, x), std::span<const double>(&b, 1));
    };
    ts.impulse = [spec, at](double t, double x, double b) {
        double out = 0.0;
        spec.impulse_map(at(t, x), std::span<const double>(&b, 1), std::span<double>(&out, 1));
        return out;
    };

    double jump = 0.0;
    for (double b : ts.marks) jump = std::max(jump, std::abs(ts.impulse(0.0, ts.x0, b) - ts.x0));
    const double ax0 = std::abs(ts.x0);
    const double reach = std::max(spec.gamma_bound, ax0) + ax0 + 2.0 * jump;
    ts.width = static_cast<std::size_t>(std::ceil(reach / (2.0 * ts.h()))) + 2;
    return ts;
}

/// V(i, j, r) for every node and remaining budget r = 0..k_max.
class TreeSolution {
public:
    TreeSolution(const TreeSpec& ts)
        : M_(ts.steps), W_(ts.width), R_(ts.k_max + 1), x0_(ts.x0), h_(ts.h()), offset_(M_ + 1) {
        std::size_t total = 0;
        for (std::size_t i = 0; i <= M_; ++i) {
            offset_[i] = total;
            total += nodes(i) * R_;
        }
        values_.assign(total, 0.0);
    }

    std::size_t steps() const noexcept { return M_; }
    std::size_t k_max() const noexcept { return R_ - 1; }
    std::size_t width() const noexcept { return W_; }

    // Nodes at level i, indexed 0..i+2W (node n corresponds to j = n - W).
    std::size_t nodes(std::size_t i) const noexcept { return i + 2 * W_ + 1; }

    double state(std::size_t i, std::size_t n) const {
        return x0_ + (2.0 * static_cast<double>(n) - static_cast<double>(i) - 2.0 * static_cast<double>(W_)) * h_;
    }

    // Node at time level i nearest to x (ties to the lower node).
    long nearest(std::size_t i, double x) const {
        const double pos = (x - x0_) / (2.0 * h_) + (static_cast<double>(i) / 2.0) + static_cast<double>(W_);
        return static_cast<long>(std::ceil(pos - 0.5));
    }

    std::size_t root() const noexcept { return W_; }

    double& value(std::size_t i, std::size_t n, std::size_t r) { return values_[offset_[i] + n * R_ + r]; }
    double value(std::size_t i, std::size_t n, std::size_t r) const { return values_[offset_[i] + n * R_ + r]; }

    // V(0, x0, r) for r = 0..k_max
    std::vector<double> root_values() const {
        std::vector<double> out(R_);
        for (std::size_t r = 0; r < R_; ++r) out[r] = value(0, root(), r);
        return out;
    }

private:
    std::size_t M_, W_, R_;
    double x0_, h_;
    std::vector<std::size_t> offset_;
    std::vector<double> values_;
};

/// Backward induction of the robust impulse game on the tree:
///   C(i,j,r) = min_alpha [phi dt + p_alpha V(i+1,j+1,r) + (1-p_alpha) V(i+1,j,r)]
///   V(i,j,0) = C(i,j,0)
///   V(i,j,r) = max(C(i,j,r), max_b V(i, node(Gamma(x,b)), r-1) - ell(x,b))
/// with V(M,j,r) = psi(x_j).
inline TreeSolution solve_tree(const TreeSpec& ts) {
    if (ts.actions.empty()) throw InvalidArgument("tree oracle: action set is empty");
    TreeSolution sol(ts);
    const std::size_t M = ts.steps, R = ts.k_max + 1;
    const double dt = ts.dt(), sq = std::sqrt(dt);

    for (std::size_t n = 0; n < sol.nodes(M); ++n) {
        const double v = ts.terminal(sol.state(M, n));
        for (std::size_t r = 0; r < R; ++r) sol.value(M, n, r) = v;
    }

    std::vector<double> cont(R);
    for (std::size_t i = M; i-- > 0;) {
        const double t = static_cast<double>(i) * ts.horizon / static_cast<double>(M);
        const std::size_t N = sol.nodes(i);
        // continuation for every node and budget first, then impulses in increasing r
        for (std::size_t n = 0; n < N; ++n) {
            const double x = sol.state(i, n);
            for (std::size_t r = 0; r < R; ++r) cont[r] = std::numeric_limits<double>::infinity();
            for (double a : ts.actions) {
                const double p = 0.5 * (1.0 + ts.tilt(t, x, a) * sq);
                if (!(p > 0.0 && p < 1.0)) {
                    std::ostringstream os;
                    os << "up-probability " << p << " for action " << a << " at t=" << t << ", x=" << x;
                    throw ProbabilityOutOfRange(os.str());
                }
                const double run = ts.running(t, x, a) * dt;
                for (std::size_t r = 0; r < R; ++r) {
                    const double c = run + p * sol.value(i + 1, n + 1, r) + (1.0 - p) * sol.value(i + 1, n, r);
                    cont[r] = std::min(cont[r], c);
                }
            }
            for (std::size_t r = 0; r < R; ++r) sol.value(i, n, r) = cont[r];
        }
        if (ts.marks.empty()) continue;
        for (std::size_t r = 1; r < R; ++r) {
            for (std::size_t n = 0; n < N; ++n) {
                const double x = sol.state(i, n);
                double best = sol.value(i, n, r);
                for (double b : ts.marks) {
                    const double target = ts.impulse(t, x, b);
                    const long m = sol.nearest(i, target);
                    if (m < 0 || m >= static_cast<long>(N)) {
                        std::ostringstream os;
                        os << "impulse target " << target << " from x=" << x << " at t=" << t << " is off the tree";
                        throw OffTreeImpulse(os.str());
                    }
                    best = std::max(best, sol.value(i, static_cast<std::size_t>(m), r - 1) - ts.cost(t, x, b));
                }
                sol.value(i, n, r) = best;
            }
        }
    }
    return sol;
}

/// r,value rows of V(0, x0, r).
inline void write_oracle_csv(const TreeSolution& sol, std::ostream& os) {
    os << "r,value\n";
    const auto v = sol.root_values();
    for (std::size_t r = 0; r < v.size(); ++r) os << r << ',' << v[r] << '\n';
}

} // namespace rimpulse
