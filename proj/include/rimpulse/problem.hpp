#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace rimpulse {

/// Finite set of points in R^dim, stored row-major. Used for the action set A
/// and the impulse set U.
struct PointGrid {
    std::size_t dim = 1;
    std::vector<double> values;

    std::size_t size() const noexcept { return dim == 0 ? 0 : values.size() / dim; }
    bool empty() const noexcept { return values.empty(); }

    std::span<const double> point(std::size_t i) const { return {values.data() + i * dim, dim}; }

    std::vector<double> point_vector(std::size_t i) const {
        auto p = point(i);
        return {p.begin(), p.end()};
    }

    std::optional<std::size_t> index_of(std::span<const double> q, double tol = 1e-12) const {
        if (q.size() != dim) return std::nullopt;
        for (std::size_t i = 0; i < size(); ++i) {
            auto p = point(i);
            bool same = true;
            for (std::size_t k = 0; k < dim && same; ++k) same = std::abs(p[k] - q[k]) <= tol * (1.0 + std::abs(q[k]));
            if (same) return i;
        }
        return std::nullopt;
    }

    double max_norm() const {
        double m = 0.0;
        for (std::size_t i = 0; i < size(); ++i) {
            double s = 0.0;
            for (double v : point(i)) s += v * v;
            m = std::max(m, std::sqrt(s));
        }
        return m;
    }

    static PointGrid scalars(const std::vector<double>& xs) { return {1, xs}; }

    static PointGrid from_points(const std::vector<std::vector<double>>& pts, std::size_t dim) {
        PointGrid g{dim, {}};
        for (const auto& p : pts) {
            if (p.size() != dim) throw InvalidArgument("PointGrid: inconsistent point dimension");
            g.values.insert(g.values.end(), p.begin(), p.end());
        }
        return g;
    }

    // Tensor grid with n points per axis on the box [lo, hi].
    static PointGrid box(const std::vector<double>& lo, const std::vector<double>& hi, std::size_t n) {
        if (lo.size() != hi.size() || lo.empty() || n == 0) throw InvalidArgument("PointGrid::box: bad arguments");
        const std::size_t dim = lo.size();
        std::size_t total = 1;
        for (std::size_t k = 0; k < dim; ++k) total *= n;
        PointGrid g{dim, {}};
        g.values.reserve(total * dim);
        for (std::size_t flat = 0; flat < total; ++flat) {
            std::size_t rest = flat;
            for (std::size_t k = 0; k < dim; ++k) {
                const std::size_t j = rest % n;
                rest /= n;
                const double w = n == 1 ? 0.5 : static_cast<double>(j) / static_cast<double>(n - 1);
                g.values.push_back(lo[k] + w * (hi[k] - lo[k]));
            }
        }
        return g;
    }
};

/// A robust impulse control problem. Coefficient callables must be pure and
/// reentrant: the solver calls them concurrently from several threads.
///
/// State dimension d = d1 + d2. The drift splits into an uncontrolled part a1
/// (first d1 components) and an adversary-controlled part a2(.., alpha) (last
/// d2 components); sigma must be block lower triangular with an invertible
/// lower-right block sigma22.
struct ProblemSpec {
    using VectorField = std::function<void(const PathView&, std::span<double>)>;
    using ControlledField = std::function<void(const PathView&, std::span<const double>, std::span<double>)>;
    using ScalarField = std::function<double(const PathView&, std::span<const double>)>;

    std::string name;
    std::size_t d1 = 0;
    std::size_t d2 = 1;
    std::vector<double> x0{0.0};
    double horizon = 1.0;

    VectorField drift_a1;           // writes d1 values; may be empty when d1 == 0
    ControlledField drift_a2;       // (path, alpha) -> d2 values
    VectorField sigma;              // writes d*d values, row-major
    ControlledField impulse_map;    // (path, b) -> post-impulse state (d values)
    double gamma_bound = 1.0;       // K_Gamma

    ScalarField running_reward;                          // (path, alpha) -> phi
    std::function<double(std::span<const double>)> terminal_reward;  // x -> psi
    ScalarField intervention_cost;                       // (path, b) -> ell
    double cost_floor = 0.0;                             // delta

    PointGrid actions;   // A
    PointGrid marks;     // U (may be empty: no impulses)

    double growth_exponent = 2.0;     // rho, declared only
    double sigma22_inv_bound = 1e6;   // declared bound on |sigma22^{-1}|
    double max_condition = 1e10;      // SingularDiffusion threshold for the sigma22 solve

    // Coefficients depend on the current state only (required by the tree oracle).
    bool markovian = true;

    std::size_t dim() const noexcept { return d1 + d2; }
};

/// sigma evaluated at one path position, with sigma22 factored so that
/// sigma22^{-1} a2(alpha) can be computed for many alpha.
class DriftTilt {
public:
    DriftTilt(const ProblemSpec& spec, const PathView& view)
        : spec_(&spec), view_(view), d_(spec.dim()), sigma_(d_ * d_, 0.0), a2_(spec.d2, 0.0) {
        spec.sigma(view, sigma_);
        const std::size_t d1 = spec.d1, d2 = spec.d2;
        if (d2 == 1) {
            const double s = sigma_[d1 * d_ + d1];
            if (!(std::abs(s) > 0.0) || !std::isfinite(s)) {
                throw SingularDiffusion(describe("sigma22 is zero or non-finite"));
            }
            inv_scalar_ = 1.0 / s;
        } else {
            Eigen::MatrixXd s22(d2, d2);
            for (std::size_t r = 0; r < d2; ++r)
                for (std::size_t c = 0; c < d2; ++c) s22(r, c) = sigma_[(d1 + r) * d_ + d1 + c];
            lu_.compute(s22);
            const double rc = lu_.rcond();
            if (!(rc > 0.0) || 1.0 / rc > spec.max_condition) {
                throw SingularDiffusion(describe("sigma22 condition estimate exceeds bound"));
            }
        }
    }

    const std::vector<double>& sigma() const noexcept { return sigma_; }

    // out (size d) = (0, sigma22^{-1} a2(alpha)).
    void apply(std::span<const double> alpha, std::span<double> out) const {
        const std::size_t d1 = spec_->d1, d2 = spec_->d2;
        for (std::size_t k = 0; k < d1; ++k) out[k] = 0.0;
        spec_->drift_a2(view_, alpha, a2_);
        if (d2 == 1) {
            out[d1] = inv_scalar_ * a2_[0];
            return;
        }
        Eigen::Map<const Eigen::VectorXd> rhs(a2_.data(), static_cast<Eigen::Index>(d2));
        Eigen::VectorXd y = lu_.solve(rhs);
        for (std::size_t k = 0; k < d2; ++k) out[d1 + k] = y(static_cast<Eigen::Index>(k));
    }

private:
    std::string describe(const std::string& msg) const {
        std::ostringstream os;
        os << msg << " at t=" << view_.time << ", x=" << view_.x(0);
        return os.str();
    }

    const ProblemSpec* spec_;
    PathView view_;
    std::size_t d_;
    std::vector<double> sigma_;
    mutable std::vector<double> a2_;
    double inv_scalar_ = 0.0;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

/// (0, sigma22^{-1} a2(t, path, alpha)): the drift that the adversary adds,
/// expressed in Brownian units.
inline std::vector<double> breve_a(const ProblemSpec& spec, const PathView& view, std::span<const double> alpha) {
    std::vector<double> out(spec.dim(), 0.0);
    DriftTilt(spec, view).apply(alpha, out);
    return out;
}

struct ValidationCheck {
    std::string name;
    bool passed = true;
    std::string witness;  // first failing argument, empty on success
    double worst = 0.0;   // worst observed slack or statistic
};

struct ValidationReport {
    std::vector<ValidationCheck> checks;
    double drift_growth_constant = 0.0;  // sampled k_L with |breve_a| <= k_L (1 + sup|X|)

    bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }

    const ValidationCheck* find(const std::string& name) const {
        for (const auto& c : checks)
            if (c.name == name) return &c;
        return nullptr;
    }
};

/// Monte Carlo spot check of the structural assumptions on a ProblemSpec.
/// Probe paths are random walks around x0 with random scale, so the checks
/// cover states well outside the typical simulated region.
inline ValidationReport validate(const ProblemSpec& spec, std::size_t n_probe, std::uint64_t seed) {
    if (n_probe == 0) throw InvalidArgument("validate needs n_probe >= 1");
    const std::size_t d = spec.dim();
    const std::size_t probe_steps = 20;
    const TimeGrid grid(spec.horizon, probe_steps);

    ValidationCheck cost{"cost_floor"}, growth{"impulse_growth"}, block{"sigma_block_structure"},
        inverse{"sigma22_inverse_bound"}, finite{"finite_coefficients"}, sets{"control_sets"};

    cost.worst = std::numeric_limits<double>::infinity();
    if (!(spec.cost_floor > 0.0)) {
        cost.passed = false;
        cost.witness = "declared cost floor delta <= 0";
    }
    if (spec.x0.size() != d) {
        sets.passed = false;
        sets.witness = "x0 dimension does not match d1 + d2";
    }
    if (spec.actions.empty()) {
        sets.passed = false;
        sets.witness = "action set A is empty";
    }
    for (double v : spec.actions.values)
        if (!std::isfinite(v)) sets.passed = false;
    for (double v : spec.marks.values)
        if (!std::isfinite(v)) sets.passed = false;

    auto fail = [](ValidationCheck& c, const std::string& w) {
        if (c.passed) c.witness = w;
        c.passed = false;
    };
    auto where = [&](const PathView& v, std::string extra) {
        std::ostringstream os;
        os << "t=" << v.time << " x=(";
        for (std::size_t k = 0; k < v.current.size(); ++k) os << (k ? "," : "") << v.current[k];
        os << ")" << extra;
        return os.str();
    };

    double k_l = 0.0;
    std::vector<double> path((probe_steps + 1) * d), sig(d * d), tilt(d), post(d);
    PathRng rng(seed, "validate", 0);
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unit;

    const double base_scale = 1.0 + std::sqrt([&] {
        double s = 0.0;
        for (double v : spec.x0) s += v * v;
        return s;
    }());

    for (std::size_t n = 0; n < n_probe && sets.passed; ++n) {
        const auto i = static_cast<std::size_t>(unit(rng.engine()) * static_cast<double>(probe_steps + 1)) % (probe_steps + 1);
        const double scale = 3.0 * unit(rng.engine()) * base_scale;
        for (std::size_t k = 0; k < d; ++k) path[k] = spec.x0[k];
        for (std::size_t j = 1; j <= i; ++j)
            for (std::size_t k = 0; k < d; ++k)
                path[j * d + k] = path[(j - 1) * d + k] + scale * std::sqrt(grid.dt()) * normal(rng.engine());

        PathView v;
        v.index = i;
        v.time = grid.time(i);
        v.dim = d;
        v.history = std::span<const double>(path.data(), i * d);
        v.current = std::span<const double>(path.data() + i * d, d);

        spec.sigma(v, sig);
        for (std::size_t r = 0; r < spec.d1; ++r)
            for (std::size_t c = spec.d1; c < d; ++c)
                if (sig[r * d + c] != 0.0) fail(block, where(v, " sigma upper-right block nonzero"));
        {
            Eigen::MatrixXd s22(spec.d2, spec.d2);
            for (std::size_t r = 0; r < spec.d2; ++r)
                for (std::size_t c = 0; c < spec.d2; ++c) s22(r, c) = sig[(spec.d1 + r) * d + spec.d1 + c];
            Eigen::JacobiSVD<Eigen::MatrixXd> svd(s22);
            const double smin = svd.singularValues().minCoeff();
            const double inv_norm = smin > 0.0 ? 1.0 / smin : std::numeric_limits<double>::infinity();
            inverse.worst = std::max(inverse.worst, inv_norm);
            if (!(inv_norm <= spec.sigma22_inv_bound)) fail(inverse, where(v, " |sigma22^-1| too large"));
        }

        const double sup = v.sup_norm();
        double xnorm = 0.0;
        for (double x : v.current) xnorm += x * x;
        xnorm = std::sqrt(xnorm);

        if (inverse.passed) {
            DriftTilt dt(spec, v);
            for (std::size_t a = 0; a < spec.actions.size(); ++a) {
                const auto alpha = spec.actions.point(a);
                dt.apply(alpha, tilt);
                double nrm = 0.0;
                for (double t : tilt) nrm += t * t;
                nrm = std::sqrt(nrm);
                k_l = std::max(k_l, nrm / (1.0 + sup));
                const double phi = spec.running_reward(v, alpha);
                if (!std::isfinite(phi) || !std::isfinite(nrm)) fail(finite, where(v, " phi or drift non-finite"));
            }
        }
        if (!std::isfinite(spec.terminal_reward(v.current))) fail(finite, where(v, " psi non-finite"));

        for (std::size_t b = 0; b < spec.marks.size(); ++b) {
            const auto mark = spec.marks.point(b);
            const double ell = spec.intervention_cost(v, mark);
            cost.worst = std::min(cost.worst, ell);
            if (!(ell >= spec.cost_floor) || !(ell > 0.0)) {
                std::ostringstream os;
                os << " b[" << b << "] cost=" << ell;
                fail(cost, where(v, os.str()));
            }
            spec.impulse_map(v, mark, post);
            double pn = 0.0;
            for (double x : post) pn += x * x;
            pn = std::sqrt(pn);
            const double bound = std::max(spec.gamma_bound, xnorm);
            growth.worst = std::max(growth.worst, pn - bound);
            if (!(pn <= bound * (1.0 + 1e-12) + 1e-12)) {
                std::ostringstream os;
                os << " b[" << b << "] |Gamma|=" << pn << " > " << bound;
                fail(growth, where(v, os.str()));
            }
        }
    }

    if (!std::isfinite(cost.worst)) cost.worst = 0.0;

    ValidationCheck growth_diag{"drift_tilt_growth"};
    growth_diag.worst = k_l;
    if (!std::isfinite(k_l)) fail(growth_diag, "non-finite drift tilt");

    ValidationReport report;
    report.checks = {sets, cost, growth, block, inverse, finite, growth_diag};
    report.drift_growth_constant = k_l;
    return report;
}

inline void to_json(nlohmann::json& j, const ValidationReport& r) {
    j = nlohmann::json::object();
    j["passed"] = r.passed();
    j["drift_growth_constant"] = r.drift_growth_constant;
    auto arr = nlohmann::json::array();
    for (const auto& c : r.checks) {
        arr.push_back({{"name", c.name}, {"passed", c.passed}, {"witness", c.witness}, {"worst", c.worst}});
    }
    j["checks"] = arr;
}

} // namespace rimpulse
