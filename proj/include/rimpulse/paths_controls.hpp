#pragma once

#include "rimpulse/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace rimpulse {

/// Uniform discretization t_i = i*T/M of [0, T].
class TimeGrid {
public:
    TimeGrid() = default;

    TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
        if (!(horizon > 0.0) || !std::isfinite(horizon)) {
            throw InvalidArgument("TimeGrid horizon must be positive and finite");
        }
        if (steps == 0) {
            throw InvalidArgument("TimeGrid needs at least one step");
        }
    }

    double horizon() const noexcept { return horizon_; }
    std::size_t steps() const noexcept { return steps_; }
    double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }

    double time(std::size_t i) const noexcept {
        return static_cast<double>(i) * horizon_ / static_cast<double>(steps_);
    }

    // Nearest grid index, ties resolved to the lower index, clamped to [0, M].
    std::size_t snap(double t) const noexcept {
        if (!(t > 0.0)) return 0;
        const double r = t / dt();
        if (r >= static_cast<double>(steps_)) return steps_;
        const double lower = std::floor(r);
        auto idx = static_cast<std::size_t>(lower);
        if (r - lower > 0.5) ++idx;
        return std::min(idx, steps_);
    }

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;

private:
    double horizon_ = 1.0;
    std::size_t steps_ = 1;
};

/// Read-only view of a path prefix at grid index `index`: the states at
/// indices 0..index-1 (`history`, row-major, `dim` values per step) and the
/// state at `index` (`current`). The current state is passed separately so a
/// caller can evaluate coefficients at a hypothetical post-impulse state
/// without copying the history.
struct PathView {
    std::size_t index = 0;
    double time = 0.0;
    std::size_t dim = 1;
    std::span<const double> history;
    std::span<const double> current;
    // Running maximum carried in from before index 0, one per component
    // (empty when the path has no earlier history).
    std::span<const double> carried_max;

    double x(std::size_t k = 0) const { return current[k]; }

    std::span<const double> past(std::size_t j) const { return history.subspan(j * dim, dim); }

    double running_max(std::size_t k = 0) const {
        double m = carried_max.empty() ? current[k] : std::max(current[k], carried_max[k]);
        for (std::size_t j = 0; j < index; ++j) m = std::max(m, history[j * dim + k]);
        return m;
    }

    double running_min(std::size_t k = 0) const {
        double m = current[k];
        for (std::size_t j = 0; j < index; ++j) m = std::min(m, history[j * dim + k]);
        return m;
    }

    double sup_norm() const {
        double m = 0.0;
        for (double v : current) m = std::max(m, std::abs(v));
        for (double v : history) m = std::max(m, std::abs(v));
        return m;
    }

    PathView with_current(std::span<const double> state) const {
        PathView v = *this;
        v.current = state;
        return v;
    }
};

/// P simulated d-dimensional paths on a TimeGrid together with the Brownian
/// increments that drove them. Layout is path-major so every path prefix is a
/// contiguous span.
class PathBatch {
public:
    PathBatch() = default;

    PathBatch(TimeGrid grid, std::size_t n_paths, std::size_t dim, std::uint64_t seed)
        : grid_(grid), n_paths_(n_paths), dim_(dim), seed_(seed),
          states_(n_paths * (grid.steps() + 1) * dim, 0.0),
          increments_(n_paths * grid.steps() * dim, 0.0) {
        if (n_paths == 0 || dim == 0) throw InvalidArgument("PathBatch needs paths and dimension");
    }

    const TimeGrid& grid() const noexcept { return grid_; }
    std::size_t n_paths() const noexcept { return n_paths_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t steps() const noexcept { return grid_.steps(); }
    std::uint64_t seed() const noexcept { return seed_; }

    double state(std::size_t p, std::size_t i, std::size_t k = 0) const { return states_[offset(p, i) + k]; }
    double& state(std::size_t p, std::size_t i, std::size_t k = 0) { return states_[offset(p, i) + k]; }

    double increment(std::size_t p, std::size_t i, std::size_t k = 0) const {
        return increments_[(p * steps() + i) * dim_ + k];
    }
    double& increment(std::size_t p, std::size_t i, std::size_t k = 0) {
        return increments_[(p * steps() + i) * dim_ + k];
    }

    std::span<const double> state_at(std::size_t p, std::size_t i) const {
        return {states_.data() + offset(p, i), dim_};
    }
    std::span<double> state_at(std::size_t p, std::size_t i) { return {states_.data() + offset(p, i), dim_}; }

    std::span<const double> increments_at(std::size_t p, std::size_t i) const {
        return {increments_.data() + (p * steps() + i) * dim_, dim_};
    }
    std::span<double> increments_at(std::size_t p, std::size_t i) {
        return {increments_.data() + (p * steps() + i) * dim_, dim_};
    }

    PathView view(std::size_t p, std::size_t i) const {
        PathView v;
        v.index = i;
        v.time = grid_.time(i);
        v.dim = dim_;
        v.history = {states_.data() + offset(p, 0), i * dim_};
        v.current = state_at(p, i);
        if (!carried_.empty()) v.carried_max = carried_max_at(p);
        return v;
    }

    bool has_carried_max() const noexcept { return !carried_.empty(); }
    void enable_carried_max() { carried_.assign(n_paths_ * dim_, -std::numeric_limits<double>::infinity()); }
    std::span<const double> carried_max_at(std::size_t p) const { return {carried_.data() + p * dim_, dim_}; }
    std::span<double> carried_max_at(std::size_t p) { return {carried_.data() + p * dim_, dim_}; }

    const std::vector<double>& raw_states() const noexcept { return states_; }
    const std::vector<double>& raw_increments() const noexcept { return increments_; }

private:
    std::size_t offset(std::size_t p, std::size_t i) const { return (p * (grid_.steps() + 1) + i) * dim_; }

    TimeGrid grid_;
    std::size_t n_paths_ = 0;
    std::size_t dim_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> states_;
    std::vector<double> increments_;
    std::vector<double> carried_;
};

using Mark = std::vector<double>;

/// A finite impulse control (t_1..t_n; b_1..b_n) with nondecreasing times.
/// Equal times are allowed and applied in list order.
struct ImpulseSequence {
    std::vector<double> times;
    std::vector<Mark> marks;

    std::size_t size() const noexcept { return times.size(); }
    bool empty() const noexcept { return times.empty(); }

    bool is_valid() const {
        if (times.size() != marks.size()) return false;
        for (std::size_t j = 1; j < times.size(); ++j) {
            if (!(times[j - 1] <= times[j])) return false;
        }
        return true;
    }

    void push_back(double t, Mark b) {
        if (!times.empty() && t < times.back()) {
            throw InvalidArgument("impulse times must be nondecreasing");
        }
        times.push_back(t);
        marks.push_back(std::move(b));
    }

    friend bool operator==(const ImpulseSequence&, const ImpulseSequence&) = default;
};

/// v∘w: w's times are clamped from below by the last time of v.
inline ImpulseSequence concat(const ImpulseSequence& v, const ImpulseSequence& w) {
    ImpulseSequence out = v;
    const bool clamp = !v.empty();
    const double last = clamp ? v.times.back() : 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        out.times.push_back(clamp ? std::max(w.times[j], last) : w.times[j]);
        out.marks.push_back(w.marks[j]);
    }
    return out;
}

/// [v]_k: the first min(k, n) interventions.
inline ImpulseSequence truncate(const ImpulseSequence& v, std::size_t k) {
    const std::size_t n = std::min(k, v.size());
    ImpulseSequence out;
    out.times.assign(v.times.begin(), v.times.begin() + static_cast<std::ptrdiff_t>(n));
    out.marks.assign(v.marks.begin(), v.marks.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
}

/// Distance between two controls. Sequences of different length are at
/// infinite distance; that case is a tag rather than a floating infinity so
/// it survives JSON round trips.
struct ControlDistance {
    bool infinite = false;
    double value = 0.0;

    static ControlDistance infinity() { return {true, 0.0}; }

    friend bool operator==(const ControlDistance&, const ControlDistance&) = default;
};

inline double mark_distance(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    const std::size_t n = std::max(a.size(), b.size());
    for (std::size_t k = 0; k < n; ++k) {
        const double ak = k < a.size() ? a[k] : 0.0;
        const double bk = k < b.size() ? b[k] : 0.0;
        s += (ak - bk) * (ak - bk);
    }
    return std::sqrt(s);
}

inline ControlDistance control_distance(const ImpulseSequence& v, const ImpulseSequence& w) {
    if (v.size() != w.size()) return ControlDistance::infinity();
    double total = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) {
        total += std::abs(v.times[j] - w.times[j]) + mark_distance(v.marks[j], w.marks[j]);
    }
    return {false, total};
}

inline void to_json(nlohmann::json& j, const ImpulseSequence& v) {
    j = nlohmann::json{{"times", v.times}, {"marks", v.marks}};
}

inline void from_json(const nlohmann::json& j, ImpulseSequence& v) {
    v.times = j.at("times").get<std::vector<double>>();
    v.marks = j.at("marks").get<std::vector<Mark>>();
    if (!v.is_valid()) throw InvalidArgument("impulse sequence JSON: times must be nondecreasing and match marks");
}

inline void to_json(nlohmann::json& j, const ControlDistance& d) {
    if (d.infinite) {
        j = nlohmann::json{{"infinite", true}};
    } else {
        j = d.value;
    }
}

inline void from_json(const nlohmann::json& j, ControlDistance& d) {
    if (j.is_object()) {
        d = ControlDistance::infinity();
    } else {
        d = {false, j.get<double>()};
    }
}

inline void to_json(nlohmann::json& j, const TimeGrid& g) {
    j = nlohmann::json{{"horizon", g.horizon()}, {"steps", g.steps()}};
}

inline void from_json(const nlohmann::json& j, TimeGrid& g) {
    g = TimeGrid(j.at("horizon").get<double>(), j.at("steps").get<std::size_t>());
}

} // namespace rimpulse
