#pragma once

#include "rimpulse/errors.hpp"
#include "rimpulse/problem.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace rimpulse {

// Shipped desk-scale problems.
//
//   mart1d     d=1, a2(alpha)=alpha, phi=0, psi(x)=x, no impulses. With the
//              default A={0} the driver vanishes and Y is a martingale.
//   cash1d     d=1, sigma=0.2, a2=alpha, A={-0.1,0,0.1}, Gamma=clamp(x+b,±5),
//              U={-0.5,0.5}, phi=psi=-x^2, ell=0.1+0.05*min(|x|,5).
//   pathdep1d  cash1d with a drawdown penalty -c*(max_{s<=t} x_s - x_t) in phi.
//
// Every numeric field below can be overridden from a config file.
struct BuiltinParams {
    double sigma = 0.2;
    double x0 = 1.0;
    double horizon = 1.0;
    std::vector<double> actions{-0.1, 0.0, 0.1};
    std::vector<double> marks{-0.5, 0.5};
    double gamma_bound = 5.0;
    double cost_base = 0.1;
    double cost_slope = 0.05;
    double cost_cap = 5.0;
    double cost_scale = 1.0;
    double drawdown_penalty = 0.25;
};

inline std::vector<std::string> builtin_names() { return {"mart1d", "cash1d", "pathdep1d"}; }

inline BuiltinParams builtin_defaults(const std::string& name) {
    BuiltinParams p;
    if (name == "mart1d") {
        p.actions = {0.0};
        p.marks = {};
        p.gamma_bound = 1.0;
        p.cost_base = 1.0;
        p.cost_slope = 0.0;
    } else if (name != "cash1d" && name != "pathdep1d") {
        throw ConfigInvalid("problem.name", "unknown built-in problem '" + name + "'");
    }
    return p;
}

inline void apply_overrides(BuiltinParams& p, const nlohmann::json& overrides) {
    if (overrides.is_null()) return;
    if (!overrides.is_object()) throw ConfigInvalid("problem.overrides", "expected a table");
    auto num = [&](const std::string& key, double& field) {
        const auto& v = overrides.at(key);
        if (!v.is_number()) throw ConfigInvalid("problem.overrides." + key, "expected a number");
        field = v.get<double>();
    };
    auto list = [&](const std::string& key, std::vector<double>& field) {
        const auto& v = overrides.at(key);
        if (!v.is_array()) throw ConfigInvalid("problem.overrides." + key, "expected an array of numbers");
        field.clear();
        for (const auto& e : v) {
            if (!e.is_number()) throw ConfigInvalid("problem.overrides." + key, "expected an array of numbers");
            field.push_back(e.get<double>());
        }
    };
    for (auto it = overrides.begin(); it != overrides.end(); ++it) {
        const std::string& k = it.key();
        if (k == "sigma") num(k, p.sigma);
        else if (k == "x0") num(k, p.x0);
        else if (k == "horizon") num(k, p.horizon);
        else if (k == "actions") list(k, p.actions);
        else if (k == "marks") list(k, p.marks);
        else if (k == "gamma_bound") num(k, p.gamma_bound);
        else if (k == "cost_base") num(k, p.cost_base);
        else if (k == "cost_slope") num(k, p.cost_slope);
        else if (k == "cost_cap") num(k, p.cost_cap);
        else if (k == "cost_scale") num(k, p.cost_scale);
        else if (k == "drawdown_penalty") num(k, p.drawdown_penalty);
        else throw ConfigInvalid("problem.overrides." + k, "unknown parameter");
    }
    if (!(p.sigma > 0.0)) throw ConfigInvalid("problem.overrides.sigma", "must be positive");
    if (!(p.horizon > 0.0)) throw ConfigInvalid("problem.overrides.horizon", "must be positive");
    if (p.actions.empty()) throw ConfigInvalid("problem.overrides.actions", "action set must be nonempty");
    if (!(p.cost_scale > 0.0)) throw ConfigInvalid("problem.overrides.cost_scale", "must be positive");
}

inline ProblemSpec make_builtin(const std::string& name, const BuiltinParams& p) {
    builtin_defaults(name);  // rejects unknown names

    ProblemSpec s;
    s.name = name;
    s.d1 = 0;
    s.d2 = 1;
    s.x0 = {p.x0};
    s.horizon = p.horizon;
    s.actions = PointGrid::scalars(p.actions);
    s.marks = PointGrid::scalars(p.marks);
    s.gamma_bound = p.gamma_bound;
    s.sigma22_inv_bound = 1.0 / p.sigma * (1.0 + 1e-12);

    const double sigma = p.sigma;
    s.drift_a2 = [](const PathView&, std::span<const double> alpha, std::span<double> out) { out[0] = alpha[0]; };
    s.sigma = [sigma](const PathView&, std::span<double> out) { out[0] = sigma; };

    const double kg = p.gamma_bound;
    s.impulse_map = [kg](const PathView& v, std::span<const double> b, std::span<double> out) {
        out[0] = std::clamp(v.x() + b[0], -kg, kg);
    };

    const double base = p.cost_base * p.cost_scale, slope = p.cost_slope * p.cost_scale, cap = p.cost_cap;
    s.intervention_cost = [base, slope, cap](const PathView& v, std::span<const double>) {
        return base + slope * std::min(std::abs(v.x()), cap);
    };
    s.cost_floor = base;

    if (name == "mart1d") {
        s.running_reward = [](const PathView&, std::span<const double>) { return 0.0; };
        s.terminal_reward = [](std::span<const double> x) { return x[0]; };
        s.growth_exponent = 1.0;
    } else if (name == "cash1d") {
        s.running_reward = [](const PathView& v, std::span<const double>) { return -v.x() * v.x(); };
        s.terminal_reward = [](std::span<const double> x) { return -x[0] * x[0]; };
        s.growth_exponent = 2.0;
    } else {
        const double c = p.drawdown_penalty;
        s.running_reward = [c](const PathView& v, std::span<const double>) {
            return -v.x() * v.x() - c * (v.running_max() - v.x());
        };
        s.terminal_reward = [](std::span<const double> x) { return -x[0] * x[0]; };
        s.growth_exponent = 2.0;
        s.markovian = false;
    }
    return s;
}

inline ProblemSpec make_builtin(const std::string& name, const nlohmann::json& overrides = nullptr) {
    BuiltinParams p = builtin_defaults(name);
    apply_overrides(p, overrides);
    return make_builtin(name, p);
}

} // namespace rimpulse
