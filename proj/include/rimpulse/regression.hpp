#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/parallel.hpp"
#include "rimpulse/paths_controls.hpp"

#include <Eigen/Dense>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace rimpulse {

/// Map from a path prefix to a fixed-length feature vector. The map may only
/// look at the prefix it is given.
struct Featurizer {
    std::string name;
    std::size_t dim = 1;
    std::function<void(const PathView&, std::span<double>)> map;

    void operator()(const PathView& v, std::span<double> out) const { map(v, out); }

    // Current state only.
    static Featurizer markov(std::size_t d) {
        return {"markov", d, [d](const PathView& v, std::span<double> out) {
                    for (std::size_t k = 0; k < d; ++k) out[k] = v.x(k);
                }};
    }

    // Current state followed by the drawdown from the running maximum of
    // every component.
    static Featurizer running_max(std::size_t d) {
        return {"running_max", 2 * d, [d](const PathView& v, std::span<double> out) {
                    for (std::size_t k = 0; k < d; ++k) {
                        out[k] = v.x(k);
                        out[d + k] = v.running_max(k) - v.x(k);
                    }
                }};
    }

    static Featurizer by_name(const std::string& name, std::size_t d) {
        if (name == "markov") return markov(d);
        if (name == "running_max") return running_max(d);
        throw InvalidArgument("unknown featurizer '" + name + "'");
    }
};

struct BasisDescriptor {
    std::string family = "spline";  // "spline" or "polynomial"
    int degree = 2;
    std::size_t knots = 10;         // per feature, spline family only

    friend bool operator==(const BasisDescriptor&, const BasisDescriptor&) = default;
};

inline void to_json(nlohmann::json& j, const BasisDescriptor& b) {
    j = nlohmann::json{{"family", b.family}, {"degree", b.degree}, {"knots", b.knots}};
}

inline void from_json(const nlohmann::json& j, BasisDescriptor& b) {
    b.family = j.at("family").get<std::string>();
    b.degree = j.at("degree").get<int>();
    b.knots = j.at("knots").get<std::size_t>();
}

/// Regression basis for one time step. Features are standardized with the
/// step's sample mean and standard deviation; constant features are dropped.
/// Columns: all monomials of total degree <= degree in the active standardized
/// features, then (for the spline family) (f_j - kappa)_+^degree for each
/// active feature j and each knot kappa (sample quantiles). When a sample
/// range is known, features are clamped to it before evaluation.
class Basis {
public:
    Basis() = default;

    Basis(BasisDescriptor desc, std::vector<double> mean, std::vector<double> scale,
          std::vector<std::vector<double>> knots, std::vector<double> lo = {}, std::vector<double> hi = {})
        : desc_(std::move(desc)), mean_(std::move(mean)), scale_(std::move(scale)), knots_(std::move(knots)),
          lo_(std::move(lo)), hi_(std::move(hi)) {
        if (desc_.degree < 0) throw InvalidArgument("basis degree must be nonnegative");
        if ((!lo_.empty() || !hi_.empty()) && (lo_.size() != mean_.size() || hi_.size() != mean_.size())) {
            throw InvalidArgument("basis range must have one entry per feature");
        }
        if (desc_.family != "spline" && desc_.family != "polynomial") {
            throw InvalidArgument("unknown basis family '" + desc_.family + "'");
        }
        knots_.resize(mean_.size());
        build_exponents();
    }

    // Fit standardization and knots to the rows of `features` (n x F, row-major).
    static Basis fit_to(const BasisDescriptor& desc, std::span<const double> features, std::size_t n, std::size_t F) {
        std::vector<double> mean(F, 0.0), scale(F, 0.0), lo(F, 0.0), hi(F, 0.0);
        std::vector<std::vector<double>> knots(F);
        std::vector<double> col(n);
        for (std::size_t j = 0; j < F; ++j) {
            for (std::size_t p = 0; p < n; ++p) col[p] = features[p * F + j];
            const auto [mn, mx] = std::minmax_element(col.begin(), col.end());
            lo[j] = *mn;
            hi[j] = *mx;
            double m = 0.0;
            for (double v : col) m += v;
            m /= static_cast<double>(n);
            double ss = 0.0;
            for (double v : col) ss += (v - m) * (v - m);
            const double sd = std::sqrt(ss / static_cast<double>(n));
            mean[j] = m;
            if (!(sd > 1e-12 * (1.0 + std::abs(m)))) continue;
            scale[j] = sd;
            if (desc.family != "spline" || desc.knots == 0 || desc.degree == 0) continue;
            std::sort(col.begin(), col.end());
            std::vector<double> kj;
            for (std::size_t q = 1; q <= desc.knots; ++q) {
                const double level = static_cast<double>(q) / static_cast<double>(desc.knots + 1);
                const auto pos = static_cast<std::size_t>(level * static_cast<double>(n - 1));
                const double kappa = (col[pos] - m) / sd;
                if (kj.empty() || kappa > kj.back() + 1e-9) kj.push_back(kappa);
            }
            // a knot at or beyond the sample maximum gives an all-zero column
            const double top = (col.back() - m) / sd;
            while (!kj.empty() && kj.back() >= top - 1e-9) kj.pop_back();
            knots[j] = std::move(kj);
        }
        return Basis(desc, std::move(mean), std::move(scale), std::move(knots), std::move(lo), std::move(hi));
    }

    const BasisDescriptor& descriptor() const noexcept { return desc_; }
    std::size_t n_features() const noexcept { return mean_.size(); }
    std::size_t size() const noexcept { return exponents_.size() / std::max<std::size_t>(active_.size(), 1) + hinges(); }
    const std::vector<double>& mean() const noexcept { return mean_; }
    const std::vector<double>& scale() const noexcept { return scale_; }
    const std::vector<std::vector<double>>& knots() const noexcept { return knots_; }
    const std::vector<double>& lo() const noexcept { return lo_; }
    const std::vector<double>& hi() const noexcept { return hi_; }

    void eval(std::span<const double> f, std::span<double> out) const {
        const std::size_t A = active_.size();
        const auto deg = static_cast<std::size_t>(desc_.degree);
        double z[kMaxActive];
        double pw[kMaxActive][kMaxDegree + 1];
        for (std::size_t a = 0; a < A; ++a) {
            const std::size_t j = active_[a];
            const double fj = lo_.empty() ? f[j] : std::clamp(f[j], lo_[j], hi_[j]);
            z[a] = (fj - mean_[j]) / scale_[j];
            pw[a][0] = 1.0;
            for (std::size_t e = 1; e <= deg; ++e) pw[a][e] = pw[a][e - 1] * z[a];
        }
        std::size_t c = 0;
        if (A == 0) {
            out[c++] = 1.0;
        } else {
            const std::size_t n_mono = exponents_.size() / A;
            for (std::size_t m = 0; m < n_mono; ++m) {
                double v = 1.0;
                for (std::size_t a = 0; a < A; ++a) v *= pw[a][exponents_[m * A + a]];
                out[c++] = v;
            }
        }
        for (std::size_t a = 0; a < A; ++a) {
            for (double kappa : knots_[active_[a]]) {
                const double h = std::max(z[a] - kappa, 0.0);
                double v = 1.0;
                for (std::size_t e = 0; e < deg; ++e) v *= h;
                out[c++] = v;
            }
        }
    }

    std::vector<double> eval(std::span<const double> f) const {
        std::vector<double> out(size());
        eval(f, out);
        return out;
    }

private:
    static constexpr std::size_t kMaxActive = 16;
    static constexpr std::size_t kMaxDegree = 8;

    std::size_t hinges() const {
        std::size_t h = 0;
        for (std::size_t j : active_) h += knots_[j].size();
        return h;
    }

    void build_exponents() {
        active_.clear();
        for (std::size_t j = 0; j < scale_.size(); ++j) {
            if (scale_[j] > 0.0) active_.push_back(j);
            else knots_[j].clear();
        }
        if (active_.size() > kMaxActive) throw InvalidArgument("basis supports at most 16 active features");
        if (static_cast<std::size_t>(desc_.degree) > kMaxDegree) throw InvalidArgument("basis degree at most 8");
        exponents_.clear();
        const std::size_t A = active_.size();
        if (A == 0) {
            exponents_.push_back(0);  // intercept only; size() sees one monomial
            return;
        }
        // graded order: total degree 0, 1, ..., degree
        std::vector<int> e(A, 0);
        for (int total = 0; total <= desc_.degree; ++total) enumerate(e, 0, total);
    }

    void enumerate(std::vector<int>& e, std::size_t pos, int left) {
        const std::size_t A = e.size();
        if (pos + 1 == A) {
            e[pos] = left;
            for (int v : e) exponents_.push_back(static_cast<std::size_t>(v));
            return;
        }
        for (int v = left; v >= 0; --v) {
            e[pos] = v;
            enumerate(e, pos + 1, left - v);
        }
    }

    BasisDescriptor desc_;
    std::vector<double> mean_, scale_;
    std::vector<std::vector<double>> knots_;
    std::vector<double> lo_, hi_;
    std::vector<std::size_t> active_;
    std::vector<std::size_t> exponents_;  // n_mono x active, row-major
};

inline void to_json(nlohmann::json& j, const Basis& b) {
    j = nlohmann::json{{"descriptor", b.descriptor()}, {"mean", b.mean()}, {"scale", b.scale()}, {"knots", b.knots()}};
    if (!b.lo().empty()) {
        j["lo"] = b.lo();
        j["hi"] = b.hi();
    }
}

inline void from_json(const nlohmann::json& j, Basis& b) {
    b = Basis(j.at("descriptor").get<BasisDescriptor>(), j.at("mean").get<std::vector<double>>(),
              j.at("scale").get<std::vector<double>>(), j.at("knots").get<std::vector<std::vector<double>>>(),
              j.value("lo", std::vector<double>{}), j.value("hi", std::vector<double>{}));
}

/// Least squares with optional ridge penalty: argmin |X b - y|^2 + lambda |b_pen|^2,
/// where b_pen skips the first `free_cols` coefficients (the intercept, for a
/// basis whose first column is constant). A column-pivoting QR is used
/// throughout; lambda > 0 is applied by augmenting X with sqrt(lambda) I.
class LeastSquares {
public:
    LeastSquares(const Eigen::MatrixXd& design, double lambda, Eigen::Index free_cols = 0)
        : rows_(design.rows()), cols_(design.cols()) {
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("ridge parameter must be finite and >= 0");
        if (lambda == 0.0) {
            if (rows_ < cols_) throw IllConditioned("fewer rows than basis functions and no ridge");
            qr_.compute(design);
            if (qr_.rank() < cols_) {
                throw IllConditioned("design rank " + std::to_string(qr_.rank()) + " < " + std::to_string(cols_));
            }
        } else {
            Eigen::MatrixXd aug(rows_ + cols_, cols_);
            aug.topRows(rows_) = design;
            aug.bottomRows(cols_) = std::sqrt(lambda) * Eigen::MatrixXd::Identity(cols_, cols_);
            for (Eigen::Index k = 0; k < std::min(free_cols, cols_); ++k) aug(rows_ + k, k) = 0.0;
            qr_.compute(aug);
        }
        const auto& r = qr_.matrixR();
        double big = 0.0, small = std::numeric_limits<double>::infinity();
        for (Eigen::Index k = 0; k < cols_; ++k) {
            big = std::max(big, std::abs(r(k, k)));
            small = std::min(small, std::abs(r(k, k)));
        }
        condition_ = small > 0.0 ? big / small : std::numeric_limits<double>::infinity();
    }

    Eigen::VectorXd solve(const Eigen::VectorXd& targets) const {
        if (targets.size() != rows_) throw InvalidArgument("targets length does not match design rows");
        if (qr_.rows() == rows_) return qr_.solve(targets);
        Eigen::VectorXd aug = Eigen::VectorXd::Zero(rows_ + cols_);
        aug.head(rows_) = targets;
        return qr_.solve(aug);
    }

    // Estimate of the condition number of the (augmented) design.
    double condition() const noexcept { return condition_; }

private:
    Eigen::Index rows_, cols_;
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr_;
    double condition_ = 1.0;
};

inline Eigen::VectorXd fit(const Eigen::MatrixXd& design, const Eigen::VectorXd& targets, double lambda) {
    return LeastSquares(design, lambda).solve(targets);
}

/// Ridge parameter scaled to the design: scale * trace(X^T X) / B.
inline double scaled_ridge(const Eigen::MatrixXd& design, double scale) {
    if (scale <= 0.0 || design.cols() == 0) return 0.0;
    return scale * design.squaredNorm() / static_cast<double>(design.cols());
}

/// Fitted coefficients for one grid step: the continuation value C and the
/// d components of Z, all on the same basis.
struct SurfaceStep {
    Basis basis;
    std::vector<double> c;               // B
    std::vector<std::vector<double>> z;  // d x B
};

/// Per-step regression coefficients representing (i, features) -> (C, Z).
/// Step M carries no coefficients (the terminal condition is used instead).
class ValueSurface {
public:
    ValueSurface() = default;
    ValueSurface(TimeGrid grid, std::string featurizer, std::size_t dim)
        : grid_(grid), featurizer_(std::move(featurizer)), dim_(dim), steps_(grid.steps()) {}

    const TimeGrid& grid() const noexcept { return grid_; }
    const std::string& featurizer() const noexcept { return featurizer_; }
    std::size_t dim() const noexcept { return dim_; }

    SurfaceStep& step(std::size_t i) { return steps_.at(i); }
    const SurfaceStep& step(std::size_t i) const { return steps_.at(i); }

    static double dot(std::span<const double> b, const std::vector<double>& beta) {
        double s = 0.0;
        for (std::size_t k = 0; k < beta.size(); ++k) s += b[k] * beta[k];
        return s;
    }

    // C_i(f); z (size d) receives Z_i(f). `work` must hold at least the basis size.
    double evaluate(std::size_t i, std::span<const double> features, std::span<double> z, std::vector<double>& work) const {
        const SurfaceStep& s = steps_[i];
        work.resize(s.basis.size());
        s.basis.eval(features, work);
        for (std::size_t k = 0; k < z.size() && k < s.z.size(); ++k) z[k] = dot(work, s.z[k]);
        return dot(work, s.c);
    }

    double continuation(std::size_t i, std::span<const double> features) const {
        const SurfaceStep& s = steps_[i];
        return dot(s.basis.eval(features), s.c);
    }

    // Every coefficient finite.
    bool finite() const {
        for (const auto& s : steps_) {
            for (double v : s.c)
                if (!std::isfinite(v)) return false;
            for (const auto& zk : s.z)
                for (double v : zk)
                    if (!std::isfinite(v)) return false;
        }
        return true;
    }

private:
    TimeGrid grid_;
    std::string featurizer_;
    std::size_t dim_ = 1;
    std::vector<SurfaceStep> steps_;
};

inline void to_json(nlohmann::json& j, const ValueSurface& s) {
    nlohmann::json steps = nlohmann::json::array();
    for (std::size_t i = 0; i < s.grid().steps(); ++i) {
        const auto& st = s.step(i);
        steps.push_back({{"basis", st.basis}, {"c", st.c}, {"z", st.z}});
    }
    j = nlohmann::json{{"grid", s.grid()}, {"featurizer", s.featurizer()}, {"dim", s.dim()}, {"steps", steps}};
}

inline void from_json(const nlohmann::json& j, ValueSurface& s) {
    s = ValueSurface(j.at("grid").get<TimeGrid>(), j.at("featurizer").get<std::string>(), j.at("dim").get<std::size_t>());
    const auto& steps = j.at("steps");
    if (steps.size() != s.grid().steps()) throw InvalidArgument("surface JSON: wrong number of steps");
    for (std::size_t i = 0; i < steps.size(); ++i) {
        auto& st = s.step(i);
        st.basis = steps[i].at("basis").get<Basis>();
        st.c = steps[i].at("c").get<std::vector<double>>();
        st.z = steps[i].at("z").get<std::vector<std::vector<double>>>();
    }
}

/// Features of every path at every grid index: (P, M+1, F) path-major.
class FeatureTable {
public:
    FeatureTable(const PathBatch& batch, const Featurizer& fz)
        : P_(batch.n_paths()), M_(batch.steps()), F_(fz.dim), data_(P_ * (M_ + 1) * F_) {
        parallel_for(P_, [&](std::size_t p) {
            for (std::size_t i = 0; i <= M_; ++i) fz(batch.view(p, i), at(p, i));
        });
    }

    std::size_t dim() const noexcept { return F_; }
    std::span<double> at(std::size_t p, std::size_t i) { return {data_.data() + (p * (M_ + 1) + i) * F_, F_}; }
    std::span<const double> at(std::size_t p, std::size_t i) const {
        return {data_.data() + (p * (M_ + 1) + i) * F_, F_};
    }

    // Rows of step i gathered into an n x F row-major block.
    std::vector<double> step(std::size_t i) const {
        std::vector<double> out(P_ * F_);
        for (std::size_t p = 0; p < P_; ++p) {
            auto f = at(p, i);
            std::copy(f.begin(), f.end(), out.begin() + static_cast<std::ptrdiff_t>(p * F_));
        }
        return out;
    }

private:
    std::size_t P_, M_, F_;
    std::vector<double> data_;
};

/// One regression step: basis fitted to the step's features, design matrix,
/// and a factorization reused for every target regressed at that step.
class StepRegression {
public:
    StepRegression(const FeatureTable& features, std::size_t i, std::size_t n_paths, const BasisDescriptor& desc,
                   double ridge_scale) {
        const auto rows = features.step(i);
        basis_ = Basis::fit_to(desc, rows, n_paths, features.dim());
        const std::size_t B = basis_.size();
        design_.resize(static_cast<Eigen::Index>(n_paths), static_cast<Eigen::Index>(B));
        parallel_for(n_paths, [&](std::size_t p) {
            std::vector<double> row(B);
            basis_.eval(features.at(p, i), row);
            for (std::size_t b = 0; b < B; ++b) design_(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(b)) = row[b];
        });
        lambda_ = scaled_ridge(design_, ridge_scale);
        ls_.emplace(design_, lambda_, 1);
    }

    const Basis& basis() const noexcept { return basis_; }
    const Eigen::MatrixXd& design() const noexcept { return design_; }
    double lambda() const noexcept { return lambda_; }
    double condition() const { return ls_->condition(); }

    Eigen::VectorXd coefficients(const Eigen::VectorXd& targets) const { return ls_->solve(targets); }

    // In-sample fitted values for a coefficient vector.
    Eigen::VectorXd fitted(const Eigen::VectorXd& beta) const { return design_ * beta; }

private:
    Basis basis_;
    Eigen::MatrixXd design_;
    double lambda_ = 0.0;
    std::optional<LeastSquares> ls_;
};

struct CondExp {
    std::vector<double> beta;
    std::vector<double> fitted;
    Basis basis;
};

/// Regression estimate of E[values | F_{t_i}] on the features at step i.
inline CondExp condexp(const PathBatch& batch, const Featurizer& fz, std::span<const double> values_at_next,
                       std::size_t i, double ridge_scale, const BasisDescriptor& desc = {}) {
    if (i >= batch.steps()) throw InvalidArgument("condexp: step index must be < M");
    if (values_at_next.size() != batch.n_paths()) throw InvalidArgument("condexp: one value per path expected");
    const FeatureTable table(batch, fz);
    const StepRegression reg(table, i, batch.n_paths(), desc, ridge_scale);
    Eigen::VectorXd y(static_cast<Eigen::Index>(values_at_next.size()));
    for (std::size_t p = 0; p < values_at_next.size(); ++p) y(static_cast<Eigen::Index>(p)) = values_at_next[p];
    const Eigen::VectorXd beta = reg.coefficients(y);
    const Eigen::VectorXd fit_values = reg.fitted(beta);
    return {std::vector<double>(beta.data(), beta.data() + beta.size()),
            std::vector<double>(fit_values.data(), fit_values.data() + fit_values.size()), reg.basis()};
}

} // namespace rimpulse
