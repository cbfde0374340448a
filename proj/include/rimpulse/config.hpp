#pragma once

#include "rimpulse/builtins.hpp"
#include "rimpulse/errors.hpp"
#include "rimpulse/impulse_solver.hpp"
#include "rimpulse/regression.hpp"

#include <json.hpp>
#include <toml.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace rimpulse {

/// Everything a run needs, as read from a TOML or JSON file.
struct RunConfig {
    std::string problem;
    nlohmann::json overrides = nlohmann::json::object();

    std::size_t steps = 50;

    std::size_t paths = 20000;
    std::uint64_t seed = 1;
    bool antithetic = false;
    std::size_t eval_paths = 20000;
    std::size_t dual_paths = 10000;
    std::size_t dual_candidates = 100;
    double dual_probability = 0.05;
    std::size_t dual_budget = 3;

    SolverConfig solver;
    int threads = 0;  // 0 keeps the OpenMP default
    std::size_t validation_probes = 1000;

    bool oracle_enabled = true;
    std::size_t oracle_steps = 200;

    std::string out_dir = "out";
    bool deterministic = false;
    bool diagnostics = false;
    bool paths_csv = false;
    bool surfaces = false;

    SolverConfig solver_config() const {
        SolverConfig s = solver;
        s.steps = steps;
        s.n_paths = paths;
        s.seed = seed;
        s.antithetic = antithetic;
        return s;
    }

    ProblemSpec make_problem() const { return make_builtin(problem, overrides); }
};

namespace detail {

inline nlohmann::json toml_to_json(const toml::node& node) {
    if (const auto* t = node.as_table()) {
        nlohmann::json j = nlohmann::json::object();
        for (const auto& [k, v] : *t) j[std::string(k.str())] = toml_to_json(v);
        return j;
    }
    if (const auto* a = node.as_array()) {
        nlohmann::json j = nlohmann::json::array();
        for (const auto& v : *a) j.push_back(toml_to_json(v));
        return j;
    }
    if (const auto* s = node.as_string()) return s->get();
    if (const auto* i = node.as_integer()) return i->get();
    if (const auto* f = node.as_floating_point()) return f->get();
    if (const auto* b = node.as_boolean()) return b->get();
    throw ConfigInvalid("<root>", "dates and times are not supported");
}

class Reader {
public:
    Reader(const nlohmann::json& root) : root_(root) {}

    const nlohmann::json* section(const std::string& name) {
        if (!root_.contains(name)) return nullptr;
        const auto& s = root_.at(name);
        if (!s.is_object()) throw ConfigInvalid(name, "expected a table");
        return &s;
    }

    template <class T>
    void get(const nlohmann::json* sec, const std::string& sname, const std::string& key, T& out) {
        if (!sec || !sec->contains(key)) return;
        const auto& v = sec->at(key);
        const std::string path = sname + "." + key;
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) throw ConfigInvalid(path, "expected a boolean");
            out = v.get<bool>();
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) throw ConfigInvalid(path, "expected a string");
            out = v.get<std::string>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!v.is_number()) throw ConfigInvalid(path, "expected a number");
            out = v.get<T>();
        } else if constexpr (std::is_integral_v<T> && std::is_signed_v<T>) {
            if (!v.is_number_integer()) throw ConfigInvalid(path, "expected an integer");
            out = v.get<T>();
        } else {
            if (!v.is_number_integer() || v.get<std::int64_t>() < 0) throw ConfigInvalid(path, "expected a nonnegative integer");
            out = static_cast<T>(v.get<std::uint64_t>());
        }
    }

    static void only(const nlohmann::json* sec, const std::string& sname, std::initializer_list<const char*> keys) {
        if (!sec) return;
        for (auto it = sec->begin(); it != sec->end(); ++it) {
            bool known = false;
            for (const char* k : keys) known = known || it.key() == k;
            if (!known) throw ConfigInvalid(sname.empty() ? it.key() : sname + "." + it.key(), "unknown key");
        }
    }

private:
    const nlohmann::json& root_;
};

// Number of basis functions the regression will use at a generic step.
inline std::size_t expected_basis_size(const BasisDescriptor& b, std::size_t features) {
    std::size_t mono = 1;
    for (int k = 1; k <= b.degree; ++k) mono = mono * (features + static_cast<std::size_t>(k)) / static_cast<std::size_t>(k);
    const std::size_t hinges = (b.family == "spline" && b.degree > 0) ? features * b.knots : 0;
    return mono + hinges;
}

} // namespace detail

inline RunConfig parse_config(const nlohmann::json& root) {
    if (!root.is_object()) throw ConfigInvalid("<root>", "expected a table");
    detail::Reader::only(&root, "", {"problem", "grid", "monte_carlo", "solver", "oracle", "output", "validation"});
    detail::Reader r(root);
    RunConfig c;

    const auto* prob = r.section("problem");
    if (!prob || !prob->contains("name")) throw ConfigInvalid("problem.name", "missing");
    detail::Reader::only(prob, "problem", {"name", "overrides"});
    r.get(prob, "problem", "name", c.problem);
    if (prob->contains("overrides")) {
        c.overrides = prob->at("overrides");
        if (!c.overrides.is_object()) throw ConfigInvalid("problem.overrides", "expected a table");
    }
    builtin_defaults(c.problem);

    const auto* grid = r.section("grid");
    detail::Reader::only(grid, "grid", {"steps"});
    r.get(grid, "grid", "steps", c.steps);
    if (c.steps == 0) throw ConfigInvalid("grid.steps", "must be positive");

    const auto* mc = r.section("monte_carlo");
    detail::Reader::only(mc, "monte_carlo",
                         {"paths", "seed", "antithetic", "eval_paths", "dual_paths", "dual_candidates", "dual_probability",
                          "dual_budget"});
    r.get(mc, "monte_carlo", "paths", c.paths);
    c.eval_paths = c.paths;
    r.get(mc, "monte_carlo", "seed", c.seed);
    r.get(mc, "monte_carlo", "antithetic", c.antithetic);
    r.get(mc, "monte_carlo", "eval_paths", c.eval_paths);
    r.get(mc, "monte_carlo", "dual_paths", c.dual_paths);
    r.get(mc, "monte_carlo", "dual_candidates", c.dual_candidates);
    r.get(mc, "monte_carlo", "dual_probability", c.dual_probability);
    r.get(mc, "monte_carlo", "dual_budget", c.dual_budget);
    if (c.antithetic && c.paths % 2 != 0) throw ConfigInvalid("monte_carlo.paths", "must be even with antithetic sampling");
    if (c.eval_paths < 2) throw ConfigInvalid("monte_carlo.eval_paths", "must be at least 2");
    if (c.dual_paths < 2) throw ConfigInvalid("monte_carlo.dual_paths", "must be at least 2");
    if (!(c.dual_probability >= 0.0 && c.dual_probability <= 1.0)) {
        throw ConfigInvalid("monte_carlo.dual_probability", "must lie in [0, 1]");
    }

    const auto* sv = r.section("solver");
    detail::Reader::only(sv, "solver",
                         {"k_max", "eps_picard", "tol_mono", "tol_hit", "basis", "degree", "knots", "ridge", "featurizer",
                          "f_cap", "dispersion", "threads", "refinements", "early_stop"});
    SolverConfig& s = c.solver;
    r.get(sv, "solver", "k_max", s.k_max);
    r.get(sv, "solver", "eps_picard", s.eps_picard);
    r.get(sv, "solver", "tol_mono", s.tol_mono);
    r.get(sv, "solver", "tol_hit", s.tol_hit);
    r.get(sv, "solver", "basis", s.engine.basis.family);
    r.get(sv, "solver", "degree", s.engine.basis.degree);
    r.get(sv, "solver", "knots", s.engine.basis.knots);
    r.get(sv, "solver", "ridge", s.engine.ridge);
    r.get(sv, "solver", "featurizer", s.featurizer);
    r.get(sv, "solver", "f_cap", s.engine.f_cap);
    r.get(sv, "solver", "dispersion", s.dispersion);
    r.get(sv, "solver", "threads", c.threads);
    r.get(sv, "solver", "refinements", s.engine.refinements);
    r.get(sv, "solver", "early_stop", s.early_stop);
    if (!(s.eps_picard > 0.0)) throw ConfigInvalid("solver.eps_picard", "must be positive");
    if (!(s.tol_mono > 0.0)) throw ConfigInvalid("solver.tol_mono", "must be positive");
    if (!(s.tol_hit > 0.0)) throw ConfigInvalid("solver.tol_hit", "must be positive");
    if (!(s.engine.ridge >= 0.0)) throw ConfigInvalid("solver.ridge", "must be nonnegative");
    if (!(s.engine.f_cap >= 0.0)) throw ConfigInvalid("solver.f_cap", "must be nonnegative");
    if (s.engine.basis.family != "spline" && s.engine.basis.family != "polynomial") {
        throw ConfigInvalid("solver.basis", "expected \"spline\" or \"polynomial\"");
    }
    if (s.engine.basis.degree < 0 || s.engine.basis.degree > 8) throw ConfigInvalid("solver.degree", "must lie in [0, 8]");
    if (s.featurizer != "auto" && s.featurizer != "markov" && s.featurizer != "running_max") {
        throw ConfigInvalid("solver.featurizer", "expected \"auto\", \"markov\" or \"running_max\"");
    }
    if (s.dispersion != "auto" && s.dispersion != "none") throw ConfigInvalid("solver.dispersion", "expected \"auto\" or \"none\"");
    if (c.threads < 0) throw ConfigInvalid("solver.threads", "must be nonnegative");

    const auto* val = r.section("validation");
    detail::Reader::only(val, "validation", {"probes"});
    r.get(val, "validation", "probes", c.validation_probes);
    if (c.validation_probes == 0) throw ConfigInvalid("validation.probes", "must be positive");

    const auto* orc = r.section("oracle");
    detail::Reader::only(orc, "oracle", {"enabled", "steps"});
    r.get(orc, "oracle", "enabled", c.oracle_enabled);
    r.get(orc, "oracle", "steps", c.oracle_steps);
    if (c.oracle_steps == 0) throw ConfigInvalid("oracle.steps", "must be positive");

    const auto* out = r.section("output");
    detail::Reader::only(out, "output", {"dir", "deterministic", "diagnostics", "paths_csv", "surfaces"});
    r.get(out, "output", "dir", c.out_dir);
    r.get(out, "output", "deterministic", c.deterministic);
    r.get(out, "output", "diagnostics", c.diagnostics);
    r.get(out, "output", "paths_csv", c.paths_csv);
    r.get(out, "output", "surfaces", c.surfaces);

    // overrides are checked by building the problem once
    const ProblemSpec spec = c.make_problem();
    const std::size_t features = choose_featurizer(spec, s.featurizer).dim;
    const std::size_t need = detail::expected_basis_size(s.engine.basis, features);
    if (c.paths < need) {
        throw ConfigInvalid("monte_carlo.paths", "needs at least " + std::to_string(need) + " paths for the regression basis");
    }
    return c;
}

inline nlohmann::json read_config_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigInvalid("<file>", "cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    if (path.extension() == ".json") {
        try {
            return nlohmann::json::parse(text);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigInvalid("<file>", e.what());
        }
    }
    try {
        const toml::table tbl = toml::parse(text, path.string());
        return detail::toml_to_json(tbl);
    } catch (const toml::parse_error& e) {
        std::ostringstream os;
        os << e.description() << " at line " << e.source().begin.line;
        throw ConfigInvalid("<file>", os.str());
    }
}

inline RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_config_json(path)); }

} // namespace rimpulse
