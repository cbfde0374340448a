#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/parallel.hpp"
#include "rimpulse/paths_controls.hpp"
#include "rimpulse/regression.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <span>
#include <sstream>
#include <vector>

namespace rimpulse {

inline constexpr double kNoBarrier = -std::numeric_limits<double>::infinity();

struct EngineConfig {
    BasisDescriptor basis;
    double ridge = 1e-8;          // scaled by trace(X^T X)/B
    double f_cap = 0.0;           // |driver| clamp, 0 disables
    std::size_t refinements = 0;  // extra fixed-point passes y <- C + f(y) dt
};

/// Driver f(i, p, y, z) evaluated at grid index i on path p.
using Driver = std::function<double(std::size_t, std::size_t, double, std::span<const double>)>;
/// Barrier S(i, p); kNoBarrier where reflection is inactive.
using Barrier = std::function<double(std::size_t, std::size_t)>;

struct StepDiagnostics {
    std::size_t step = 0;
    double condition = 1.0;
    double mean_abs_z = 0.0;
    double max_abs_z = 0.0;
    std::size_t clamp_count = 0;
    double mean_dk = 0.0;
    double binding_fraction = 0.0;  // share of paths with dK > 0
};

/// Output of one backward pass. Arrays are path-major:
/// Y and S are P x (M+1), Z is P x M x d, dK is P x M.
struct BackwardState {
    std::size_t P = 0, M = 0, d = 1;
    std::vector<double> Y, Z, dK, S;
    std::vector<double> realized;  // xi + sum_i (f_i dt + dK_i), per path
    ValueSurface surface;
    std::vector<StepDiagnostics> diagnostics;  // one per step 0..M-1

    // Regression of `realized` on the step-0 basis, used for standard errors.
    Basis basis0;
    Eigen::MatrixXd gram0_inv;
    double residual_var0 = 0.0;

    BackwardState() = default;
    BackwardState(std::size_t n_paths, std::size_t steps, std::size_t dim)
        : P(n_paths), M(steps), d(dim), Y(n_paths * (steps + 1), 0.0), Z(n_paths * steps * dim, 0.0),
          dK(n_paths * steps, 0.0), S(n_paths * (steps + 1), kNoBarrier), realized(n_paths, 0.0) {}

    double& y(std::size_t p, std::size_t i) { return Y[p * (M + 1) + i]; }
    double y(std::size_t p, std::size_t i) const { return Y[p * (M + 1) + i]; }
    double& s(std::size_t p, std::size_t i) { return S[p * (M + 1) + i]; }
    double s(std::size_t p, std::size_t i) const { return S[p * (M + 1) + i]; }
    double& dk(std::size_t p, std::size_t i) { return dK[p * M + i]; }
    double dk(std::size_t p, std::size_t i) const { return dK[p * M + i]; }
    double& z(std::size_t p, std::size_t i, std::size_t k = 0) { return Z[(p * M + i) * d + k]; }
    double z(std::size_t p, std::size_t i, std::size_t k = 0) const { return Z[(p * M + i) * d + k]; }

    double cumulative_k(std::size_t p, std::size_t i) const {
        double k = 0.0;
        for (std::size_t j = 0; j < i; ++j) k += dk(p, j);
        return k;
    }

    double y0_mean() const {
        double s = 0.0;
        for (std::size_t p = 0; p < P; ++p) s += y(p, 0);
        return s / static_cast<double>(P);
    }

    // Standard error of the time-0 value predicted at step-0 features f.
    double y0_se_at(std::span<const double> f) const {
        if (gram0_inv.size() == 0) return std::numeric_limits<double>::quiet_NaN();
        const auto b = basis0.eval(f);
        const Eigen::Map<const Eigen::VectorXd> v(b.data(), static_cast<Eigen::Index>(b.size()));
        const double q = v.dot(gram0_inv * v);
        return std::sqrt(std::max(0.0, residual_var0 * q));
    }

    // Sum over all path-steps of (Y - S) dK; zero by construction.
    double skorokhod_sum() const {
        double total = 0.0;
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t i = 0; i < M; ++i)
                if (dk(p, i) > 0.0) total += (y(p, i) - s(p, i)) * dk(p, i);
        return total;
    }

    // Path-steps with dK > 0 and Y != S (bitwise).
    std::size_t skorokhod_violations() const {
        std::size_t n = 0;
        for (std::size_t p = 0; p < P; ++p)
            for (std::size_t i = 0; i < M; ++i)
                if (dk(p, i) > 0.0 && !(y(p, i) == s(p, i))) ++n;
        return n;
    }
};

namespace detail {

inline void fit_realized_regression(BackwardState& st, const StepRegression& reg0) {
    const Eigen::MatrixXd& X = reg0.design();
    Eigen::VectorXd r(static_cast<Eigen::Index>(st.P));
    for (std::size_t p = 0; p < st.P; ++p) r(static_cast<Eigen::Index>(p)) = st.realized[p];
    const Eigen::VectorXd beta = reg0.coefficients(r);
    const Eigen::VectorXd res = r - X * beta;
    const auto B = X.cols();
    const double dof = static_cast<double>(std::max<Eigen::Index>(X.rows() - B, 1));
    st.residual_var0 = res.squaredNorm() / dof;
    Eigen::MatrixXd gram = X.transpose() * X;
    gram.diagonal().array() += reg0.lambda();
    st.gram0_inv = gram.ldlt().solve(Eigen::MatrixXd::Identity(B, B));
    st.basis0 = reg0.basis();
}

} // namespace detail

/// Backward pass of the (reflected) BSDE with the explicit scheme
///   C_i  = E[Y_{i+1} | F_i]
///   Z_i  = E[(Y_{i+1} - C_i) dW_i / dt | F_i]
///   Y_i  = max(C_i + f(i, C_i, Z_i) dt, S_i),  dK_i = (S_i - C_i - f dt)^+
/// with conditional expectations replaced by per-step regressions on the
/// features. When the barrier is empty the reflection is switched off.
inline BackwardState solve_reflected(const PathBatch& batch, const FeatureTable& features, const std::string& featurizer,
                                     const Driver& driver, std::span<const double> terminal, const Barrier& barrier,
                                     const EngineConfig& cfg) {
    const std::size_t P = batch.n_paths(), M = batch.steps(), d = batch.dim();
    if (terminal.size() != P) throw InvalidArgument("terminal values: one per path expected");
    const double dt = batch.grid().dt();

    BackwardState st(P, M, d);
    st.surface = ValueSurface(batch.grid(), featurizer, d);
    st.diagnostics.resize(M);

    for (std::size_t p = 0; p < P; ++p) {
        if (!std::isfinite(terminal[p])) {
            std::ostringstream os;
            os << "terminal value not finite on path " << p;
            throw InvalidArgument(os.str());
        }
        st.y(p, M) = terminal[p];
        st.realized[p] = terminal[p];
    }
    if (barrier) {
        for (std::size_t p = 0; p < P; ++p) {
            const double sm = barrier(M, p);
            st.s(p, M) = sm;
            if (sm > terminal[p]) {
                std::ostringstream os;
                os << "barrier " << sm << " exceeds terminal value " << terminal[p] << " on path " << p;
                throw BarrierAboveTerminal(os.str());
            }
        }
    }

    Eigen::VectorXd target(static_cast<Eigen::Index>(P));
    std::vector<std::size_t> clamps(P);
    std::optional<StepRegression> reg0;

    for (std::size_t ii = M; ii-- > 0;) {
        const std::size_t i = ii;
        StepRegression reg(features, i, P, cfg.basis, cfg.ridge);

        for (std::size_t p = 0; p < P; ++p) target(static_cast<Eigen::Index>(p)) = st.y(p, i + 1);
        const Eigen::VectorXd beta_c = reg.coefficients(target);
        const Eigen::VectorXd C = reg.fitted(beta_c);

        SurfaceStep& step = st.surface.step(i);
        step.basis = reg.basis();
        step.c.assign(beta_c.data(), beta_c.data() + beta_c.size());
        step.z.assign(d, {});
        for (std::size_t k = 0; k < d; ++k) {
            for (std::size_t p = 0; p < P; ++p) {
                const auto idx = static_cast<Eigen::Index>(p);
                target(idx) = (st.y(p, i + 1) - C(idx)) * batch.increment(p, i, k) / dt;
            }
            const Eigen::VectorXd beta_z = reg.coefficients(target);
            const Eigen::VectorXd Zk = reg.fitted(beta_z);
            step.z[k].assign(beta_z.data(), beta_z.data() + beta_z.size());
            for (std::size_t p = 0; p < P; ++p) st.z(p, i, k) = Zk(static_cast<Eigen::Index>(p));
        }

        parallel_for(P, [&](std::size_t p) {
            const double c = C(static_cast<Eigen::Index>(p));
            const std::span<const double> z(st.Z.data() + (p * M + i) * d, d);
            std::size_t clamped = 0;
            auto eval = [&](double y) {
                double f = driver(i, p, y, z);
                if (!std::isfinite(f)) {
                    std::ostringstream os;
                    os << "driver returned " << f << " at step " << i << " on path " << p;
                    throw DriverNonFinite(os.str());
                }
                if (cfg.f_cap > 0.0 && std::abs(f) > cfg.f_cap) {
                    f = std::copysign(cfg.f_cap, f);
                    ++clamped;
                }
                return f;
            };
            double f = eval(c);
            for (std::size_t r = 0; r < cfg.refinements; ++r) f = eval(c + f * dt);
            clamps[p] = clamped;

            const double cont = c + f * dt;
            double y = cont, k = 0.0;
            if (barrier) {
                const double s = barrier(i, p);
                st.s(p, i) = s;
                if (s > cont) {
                    k = s - cont;
                    y = s;
                }
            }
            st.y(p, i) = y;
            st.dk(p, i) = k;
            st.realized[p] += f * dt + k;
        });

        StepDiagnostics& dg = st.diagnostics[i];
        dg.step = i;
        dg.condition = reg.condition();
        double sum_z = 0.0, max_z = 0.0, sum_k = 0.0;
        std::size_t bound = 0, clamp_total = 0;
        for (std::size_t p = 0; p < P; ++p) {
            double zn = 0.0;
            for (std::size_t k = 0; k < d; ++k) zn += st.z(p, i, k) * st.z(p, i, k);
            zn = std::sqrt(zn);
            sum_z += zn;
            max_z = std::max(max_z, zn);
            sum_k += st.dk(p, i);
            if (st.dk(p, i) > 0.0) ++bound;
            clamp_total += clamps[p];
        }
        dg.mean_abs_z = sum_z / static_cast<double>(P);
        dg.max_abs_z = max_z;
        dg.mean_dk = sum_k / static_cast<double>(P);
        dg.binding_fraction = static_cast<double>(bound) / static_cast<double>(P);
        dg.clamp_count = clamp_total;

        if (i == 0) reg0.emplace(std::move(reg));
    }
    detail::fit_realized_regression(st, *reg0);
    return st;
}

inline BackwardState solve_reflected(const PathBatch& batch, const Featurizer& fz, const Driver& driver,
                                     std::span<const double> terminal, const Barrier& barrier, const EngineConfig& cfg) {
    const FeatureTable features(batch, fz);
    return solve_reflected(batch, features, fz.name, driver, terminal, barrier, cfg);
}

/// Non-reflected BSDE: the same scheme with K = 0.
inline BackwardState solve_bsde(const PathBatch& batch, const Featurizer& fz, const Driver& driver,
                                std::span<const double> terminal, const EngineConfig& cfg) {
    return solve_reflected(batch, fz, driver, terminal, Barrier{}, cfg);
}

/// Discrete analogue of D_t = inf{r >= t : Y_r = S_r} ^ T: the first index
/// i >= from with Y(p,i) <= S(p,i) + tol (1 + |Y(p,i)|), or M if none.
inline std::size_t first_hit(const BackwardState& st, std::size_t from, std::size_t p, double tol = 1e-9) {
    if (from > st.M) throw InvalidArgument("first_hit: start index beyond the grid");
    for (std::size_t i = from; i <= st.M; ++i) {
        const double s = st.s(p, i);
        if (s == kNoBarrier) continue;
        if (st.y(p, i) <= s + tol * (1.0 + std::abs(st.y(p, i)))) return i;
    }
    return st.M;
}

/// step,condition,mean_abs_z,max_abs_z,clamp_count,mean_dk,binding_fraction
inline void write_diagnostics_csv(const BackwardState& st, std::ostream& os) {
    os << "step,condition,mean_abs_z,max_abs_z,clamp_count,mean_dk,binding_fraction\n";
    for (const auto& d : st.diagnostics) {
        os << d.step << ',' << d.condition << ',' << d.mean_abs_z << ',' << d.max_abs_z << ',' << d.clamp_count << ','
           << d.mean_dk << ',' << d.binding_fraction << '\n';
    }
}

} // namespace rimpulse
