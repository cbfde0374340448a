#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace rimpulse {

struct HamiltonianEval {
    double value = std::numeric_limits<double>::infinity();
    std::size_t index = 0;             // position of the minimizer in A
    Mark minimizer;
    std::vector<double> per_action;    // H(alpha) for each alpha in A, when requested
};

/// H(t, x, z, alpha) = z . breve_a(t, x, alpha) + phi(t, x, alpha)
inline double hamiltonian(const ProblemSpec& spec, const PathView& view, std::span<const double> z,
                          std::span<const double> alpha) {
    if (z.size() != spec.dim()) throw InvalidArgument("hamiltonian: z has wrong dimension");
    const auto tilt = breve_a(spec, view, alpha);
    double h = spec.running_reward(view, alpha);
    for (std::size_t k = 0; k < tilt.size(); ++k) h += z[k] * tilt[k];
    return h;
}

/// The action-dependent pieces of H at one path position: breve_a(alpha) and
/// phi(alpha) for every alpha in a grid. Evaluating H* for many z at the same
/// position then costs |A| dot products.
class HamiltonianTable {
public:
    HamiltonianTable(const ProblemSpec& spec, const PathView& view) : HamiltonianTable(spec, view, spec.actions) {}

    HamiltonianTable(const ProblemSpec& spec, const PathView& view, const PointGrid& actions)
        : d_(spec.dim()), n_(actions.size()), tilt_(n_ * d_, 0.0), phi_(n_, 0.0) {
        if (n_ == 0) throw InvalidArgument("minimize_hamiltonian: action set is empty");
        const DriftTilt tilt(spec, view);
        for (std::size_t a = 0; a < n_; ++a) {
            tilt.apply(actions.point(a), std::span<double>(tilt_.data() + a * d_, d_));
            phi_[a] = spec.running_reward(view, actions.point(a));
        }
    }

    std::size_t size() const noexcept { return n_; }

    double value(std::size_t a, std::span<const double> z) const {
        double h = phi_[a];
        for (std::size_t k = 0; k < d_; ++k) h += z[k] * tilt_[a * d_ + k];
        return h;
    }

    // Minimum over the grid; ties go to the smallest index.
    double minimum(std::span<const double> z, std::size_t* argmin = nullptr) const {
        double best = value(0, z);
        std::size_t arg = 0;
        for (std::size_t a = 1; a < n_; ++a) {
            const double h = value(a, z);
            if (h < best) {
                best = h;
                arg = a;
            }
        }
        if (argmin) *argmin = arg;
        return best;
    }

private:
    std::size_t d_, n_;
    std::vector<double> tilt_;
    std::vector<double> phi_;
};

/// H*(z) = min over A of H(z, alpha), exact on the finite grid, with the
/// minimizer chosen as the first grid point attaining the minimum.
inline HamiltonianEval minimize_hamiltonian(const ProblemSpec& spec, const PathView& view, std::span<const double> z,
                                            bool keep_per_action = false) {
    if (z.size() != spec.dim()) throw InvalidArgument("minimize_hamiltonian: z has wrong dimension");
    const HamiltonianTable table(spec, view);
    HamiltonianEval out;
    out.value = table.minimum(z, &out.index);
    out.minimizer = spec.actions.point_vector(out.index);
    if (keep_per_action) {
        out.per_action.resize(table.size());
        for (std::size_t a = 0; a < table.size(); ++a) out.per_action[a] = table.value(a, z);
    }
    return out;
}

/// Grid-refinement diagnostic for scalar action sets: H* on A minus H* on a
/// uniform grid over [min A, max A] with three times as many intervals.
/// Returns 0 for multi-dimensional or singleton sets.
inline double hamiltonian_refinement_gap(const ProblemSpec& spec, const PathView& view, std::span<const double> z) {
    if (spec.actions.dim != 1 || spec.actions.size() < 2) return 0.0;
    const auto [lo, hi] = std::minmax_element(spec.actions.values.begin(), spec.actions.values.end());
    const std::size_t n = 3 * (spec.actions.size() - 1) + 1;
    const PointGrid fine = PointGrid::box({*lo}, {*hi}, n);
    const double coarse = HamiltonianTable(spec, view).minimum(z);
    const double refined = HamiltonianTable(spec, view, fine).minimum(z);
    return coarse - refined;
}

} // namespace rimpulse
