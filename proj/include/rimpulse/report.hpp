#pragma once

#include "rimpulse/config.hpp"
#include "rimpulse/errors.hpp"
#include "rimpulse/hamiltonian.hpp"
#include "rimpulse/impulse_solver.hpp"
#include "rimpulse/problem.hpp"
#include "rimpulse/rbsde.hpp"
#include "rimpulse/simulator.hpp"
#include "rimpulse/tree_oracle.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace rimpulse {

inline constexpr const char* kVersion = "1.0.0";

enum ExitCode : int { kExitOk = 0, kExitValidation = 2, kExitNumerical = 3 };

namespace detail {

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw InvalidArgument("cannot write " + p.string());
    os << std::setprecision(17);
    return os;
}

inline std::string join_marks(const std::vector<Mark>& marks) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t j = 0; j < marks.size(); ++j) {
        if (j) os << ';';
        for (std::size_t k = 0; k < marks[j].size(); ++k) os << (k ? " " : "") << marks[j][k];
    }
    return os.str();
}

inline std::string join_values(const std::vector<double>& v) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t j = 0; j < v.size(); ++j) os << (j ? ";" : "") << v[j];
    return os.str();
}

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

} // namespace detail

/// Oracle values V(0, x0, r), r = 0..k_max, or an empty vector when the
/// problem is not a scalar Markovian one.
inline std::vector<double> oracle_values(const ProblemSpec& spec, std::size_t steps, std::size_t k_max) {
    if (spec.dim() != 1 || spec.d1 != 0 || !spec.markovian) return {};
    return solve_tree(make_tree_spec(spec, steps, k_max)).root_values();
}

struct RunArtifacts {
    nlohmann::json report;
    std::string levels_csv;
    std::string strategy_csv;
    std::string oracle_csv;  // empty when the oracle is off
    std::vector<std::pair<std::string, std::string>> extra;  // (file name, content)
};

/// Solver, strategy extraction, dual check and oracle for one configuration.
inline RunArtifacts solve_run(const RunConfig& c) {
    detail::Stopwatch clock;
    nlohmann::json timings = nlohmann::json::object();

    if (c.threads > 0) set_thread_count(c.threads);
    const ProblemSpec spec = c.make_problem();

    const ValidationReport vr = validate(spec, c.validation_probes, c.seed);
    if (!vr.passed()) {
        std::string failed;
        for (const auto& ch : vr.checks)
            if (!ch.passed) failed += (failed.empty() ? "" : ", ") + ch.name + " (" + ch.witness + ")";
        throw ConfigInvalid("problem", "model validation failed: " + failed);
    }
    timings["validate"] = clock.lap();

    const RobustSolution sol = solve_robust(spec, c.solver_config());
    timings["solve"] = clock.lap();

    const SimConfig eval_cfg = evaluation_config(sol, c.eval_paths, c.seed, "eval");
    const StrategyTrace trace = extract_strategy(sol, eval_cfg);
    const auto [j_mean, j_se] = trace.reward_estimate();
    timings["extract"] = clock.lap();

    const SimConfig dual_cfg = evaluation_config(sol, c.dual_paths, c.seed, "dual");
    const DualReport dual =
        dual_check(sol, default_candidates(sol, c.dual_candidates, c.dual_probability, c.dual_budget), dual_cfg);
    timings["dual"] = clock.lap();

    std::vector<double> oracle;
    if (c.oracle_enabled) oracle = oracle_values(spec, c.oracle_steps, c.solver.k_max);
    timings["oracle"] = clock.lap();

    RunArtifacts art;
    nlohmann::json& r = art.report;
    r["version"] = kVersion;
    r["problem"] = {{"name", c.problem},
                    {"overrides", c.overrides},
                    {"dim", spec.dim()},
                    {"markovian", spec.markovian},
                    {"x0", spec.x0},
                    {"horizon", spec.horizon},
                    {"cost_floor", spec.cost_floor}};
    r["grid"] = sol.grid();
    r["monte_carlo"] = {{"paths", c.paths},         {"seed", c.seed},
                        {"antithetic", c.antithetic}, {"eval_paths", c.eval_paths},
                        {"dual_paths", c.dual_paths}, {"dual_candidates", c.dual_candidates}};
    r["solver"] = {{"k_max", c.solver.k_max},
                   {"levels_computed", sol.levels().size()},
                   {"eps_picard", c.solver.eps_picard},
                   {"tol_mono", c.solver.tol_mono},
                   {"tol_hit", c.solver.tol_hit},
                   {"basis", c.solver.engine.basis},
                   {"ridge", c.solver.engine.ridge},
                   {"featurizer", sol.featurizer().name},
                   {"f_cap", c.solver.engine.f_cap},
                   {"dispersion", c.solver.dispersion},
                   {"start_box", {{"lo", sol.start_lo()}, {"hi", sol.start_hi()}, {"drawdown", sol.start_drawdown()}}}};
    r["y0"] = sol.y0();
    r["se"] = sol.se();

    nlohmann::json levels = nlohmann::json::array();
    std::ostringstream lcsv;
    lcsv << std::setprecision(17) << "k,y0,se,sup_increment\n";
    std::size_t sk_viol = 0;
    double sk_sum = 0.0;
    for (const auto& l : sol.levels()) {
        double bind = 0.0;
        for (double b : l.binding_fraction) bind += b;
        if (!l.binding_fraction.empty()) bind /= static_cast<double>(l.binding_fraction.size());
        levels.push_back({{"k", l.k},
                          {"y0", l.y0},
                          {"se", l.se},
                          {"sup_increment", detail::number_or_null(l.sup_increment)},
                          {"mean_increment", detail::number_or_null(l.mean_increment)},
                          {"binding_fraction", bind},
                          {"skorokhod_sum", l.skorokhod_sum},
                          {"skorokhod_violations", l.skorokhod_violations},
                          {"clamp_count", l.clamp_count}});
        lcsv << l.k << ',' << l.y0 << ',' << l.se << ',';
        if (std::isfinite(l.sup_increment)) lcsv << l.sup_increment;
        lcsv << '\n';
        sk_viol += l.skorokhod_violations;
        sk_sum += std::abs(l.skorokhod_sum);
    }
    r["levels"] = levels;
    r["monotone"] = !sol.monotonicity_violated();
    r["skorokhod"] = {{"violations", sk_viol}, {"abs_sum", sk_sum}};
    r["warnings"] = sol.warnings;
    art.levels_csv = lcsv.str();

    double max_term = 0.0;
    std::size_t max_n = 0;
    std::ostringstream scsv;
    scsv << std::setprecision(17) << "path_id,n_impulses,impulse_times,impulse_marks,running,terminal,costs,reward\n";
    for (std::size_t p = 0; p < trace.paths.size(); ++p) {
        const auto& t = trace.paths[p];
        max_term = std::max(max_term, std::abs(t.terminal));
        max_n = std::max(max_n, t.impulses.size());
        scsv << p << ',' << t.impulses.size() << ',' << detail::join_values(t.impulses.times) << ','
             << detail::join_marks(t.impulses.marks) << ',' << t.running << ',' << t.terminal << ',' << t.cost_total()
             << ',' << t.reward() << '\n';
    }
    art.strategy_csv = scsv.str();
    const double combined = std::sqrt(sol.se() * sol.se() + j_se * j_se);
    r["strategy"] = {{"J", j_mean},
                     {"J_se", j_se},
                     {"combined_se", combined},
                     {"gap", sol.y0() - j_mean},
                     {"within_3se", std::abs(sol.y0() - j_mean) <= 3.0 * combined},
                     {"mean_interventions", trace.mean_interventions()},
                     {"max_interventions", max_n},
                     {"intervention_bound", intervention_bound(sol, max_term)}};

    nlohmann::json cands = nlohmann::json::array();
    for (const auto& cr : dual.candidates) {
        cands.push_back({{"name", cr.name},
                         {"mean", cr.mean},
                         {"se", cr.se},
                         {"mean_interventions", cr.mean_interventions},
                         {"violation", cr.violation}});
    }
    r["dual"] = {{"candidates", dual.candidates.size()},
                 {"best", dual.best},
                 {"gap", dual.gap},
                 {"violations", dual.violations},
                 {"results", cands}};
    r["dual_gap"] = dual.gap;

    if (!oracle.empty()) {
        const std::size_t top = sol.top();
        const double target = oracle[std::min(top, oracle.size() - 1)];
        const double tol = std::max(0.05 * std::abs(target), 0.02);
        r["oracle"] = {{"steps", c.oracle_steps},
                       {"values", oracle},
                       {"target", target},
                       {"abs_error", std::abs(sol.y0() - target)},
                       {"tolerance", tol},
                       {"within_tolerance", std::abs(sol.y0() - target) <= tol}};
        std::ostringstream ocsv;
        ocsv << std::setprecision(17) << "r,value\n";
        for (std::size_t k = 0; k < oracle.size(); ++k) ocsv << k << ',' << oracle[k] << '\n';
        art.oracle_csv = ocsv.str();
    } else {
        r["oracle"] = nullptr;
    }

    {
        const PathView v0 = sol.start_view();
        std::vector<double> f(sol.featurizer().dim), z(spec.dim()), work;
        sol.featurizer()(v0, f);
        sol.surfaces().back().evaluate(0, f, z, work);
        r["hamiltonian_refinement_gap"] = hamiltonian_refinement_gap(spec, v0, z);
    }
    r["validation"] = vr;

    if (c.diagnostics) {
        for (const auto& l : sol.levels()) {
            if (!l.backward) continue;
            std::ostringstream os;
            os << std::setprecision(17);
            write_diagnostics_csv(*l.backward, os);
            art.extra.emplace_back("diagnostics_level" + std::to_string(l.k) + ".csv", os.str());
        }
    }
    if (c.surfaces) {
        nlohmann::json s = nlohmann::json::array();
        for (const auto& surf : sol.surfaces()) s.push_back(surf);
        art.extra.emplace_back("surfaces.json", s.dump());
    }
    if (c.paths_csv) {
        SimConfig pc = eval_cfg;
        pc.n_paths = std::min<std::size_t>(c.eval_paths, 100);
        const auto batch = simulate_controlled(spec, optimal_impulse_policy(sol), optimal_adversary(sol), pc).first;
        std::ostringstream os;
        os << std::setprecision(17);
        write_paths_csv(batch, os);
        art.extra.emplace_back("paths.csv", os.str());
    }

    if (!c.deterministic) {
        double total = 0.0;
        for (const auto& item : timings.items()) total += item.value().get<double>();
        timings["total"] = total;
        r["timings"] = timings;
        r["threads"] = thread_count();
    }
    return art;
}

inline void write_artifacts(const RunArtifacts& art, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        auto os = detail::open_out(dir / "report.json");
        os << art.report.dump(2) << '\n';
    }
    detail::open_out(dir / "levels.csv") << art.levels_csv;
    detail::open_out(dir / "strategy.csv") << art.strategy_csv;
    if (!art.oracle_csv.empty()) detail::open_out(dir / "oracle.csv") << art.oracle_csv;
    for (const auto& [name, content] : art.extra) detail::open_out(dir / name) << content;
}

/// Maps library errors to the CLI exit codes: 2 for configuration or model
/// validation problems, 3 for numerical failures.
inline int exit_code_for(const Error& e) { return e.is_numerical() ? kExitNumerical : kExitValidation; }

/// Full pipeline from a config file; `out_override` replaces output.dir when
/// non-empty and `seed_override` replaces monte_carlo.seed when set.
inline int run(const std::filesystem::path& config_path, const std::string& out_override,
               std::optional<std::uint64_t> seed_override, std::ostream& log) {
    try {
        RunConfig c = load_config(config_path);
        if (seed_override) c.seed = *seed_override;
        if (!out_override.empty()) c.out_dir = out_override;
        const RunArtifacts art = solve_run(c);
        write_artifacts(art, c.out_dir);
        log << "Y0 = " << art.report["y0"].get<double>() << " (se " << art.report["se"].get<double>() << "), J = "
            << art.report["strategy"]["J"].get<double>() << ", report written to " << c.out_dir << '\n';
        return kExitOk;
    } catch (const ConfigInvalid& e) {
        log << "error: " << e.what() << " [field " << e.field() << "]\n";
        return kExitValidation;
    } catch (const Error& e) {
        log << "error: " << e.what() << '\n';
        return exit_code_for(e);
    }
}

} // namespace rimpulse
