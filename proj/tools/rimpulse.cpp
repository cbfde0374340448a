#include "rimpulse/rimpulse.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

using namespace rimpulse;

namespace {

template <class F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ConfigInvalid& e) {
        std::cerr << "error: " << e.what() << " [field " << e.field() << "]\n";
        return kExitValidation;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitValidation;
    }
}

int cmd_solve(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out) {
    return guarded([&] { return run(config, out, seed, std::cerr); });
}

int cmd_oracle(const std::string& config) {
    const RunConfig c = load_config(config);
    const ProblemSpec spec = c.make_problem();
    const TreeSolution tree = solve_tree(make_tree_spec(spec, c.oracle_steps, c.solver.k_max));
    std::cout << std::setprecision(17);
    write_oracle_csv(tree, std::cout);
    return kExitOk;
}

int cmd_validate(const std::string& config) {
    const RunConfig c = load_config(config);
    const ProblemSpec spec = c.make_problem();
    const ValidationReport vr = validate(spec, c.validation_probes, c.seed);
    nlohmann::json j = vr;
    std::cout << j.dump(2) << '\n';
    return vr.passed() ? kExitOk : kExitValidation;
}

// Strategy file: {"impulses": {"times": [...], "marks": [[...], ...]},
//                 "adversary": "robust" | {"constant": [...]}}
int cmd_evaluate(const std::string& config, const std::string& strategy_path, std::optional<std::uint64_t> seed) {
    RunConfig c = load_config(config);
    if (seed) c.seed = *seed;
    const ProblemSpec spec = c.make_problem();

    std::ifstream in(strategy_path);
    if (!in) throw ConfigInvalid("<strategy>", "cannot open " + strategy_path);
    nlohmann::json sj;
    try {
        in >> sj;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigInvalid("<strategy>", e.what());
    }
    ImpulseSequence u;
    if (sj.contains("impulses")) {
        try {
            u = sj.at("impulses").get<ImpulseSequence>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigInvalid("impulses", e.what());
        }
    }
    for (const auto& m : u.marks)
        if (!spec.marks.index_of(m)) throw ConfigInvalid("impulses.marks", "mark outside the impulse set");
    for (double t : u.times)
        if (t < 0.0 || t > spec.horizon) throw ConfigInvalid("impulses.times", "time outside [0, T]");

    const TimeGrid grid(spec.horizon, c.steps);
    SimConfig sim;
    sim.grid = grid;
    sim.n_paths = c.eval_paths;
    sim.seed = c.seed;
    sim.substream = "eval";

    const nlohmann::json adv = sj.value("adversary", nlohmann::json("robust"));
    std::optional<RobustSolution> sol;
    AdversaryPolicy adversary;
    if (adv.is_string() && adv.get<std::string>() == "robust") {
        if (c.threads > 0) set_thread_count(c.threads);
        sol.emplace(solve_robust(spec, c.solver_config()));
        adversary = optimal_adversary(*sol);
    } else if (adv.is_object() && adv.contains("constant")) {
        Mark a;
        try {
            a = adv.at("constant").get<Mark>();
        } catch (const nlohmann::json::exception& e) {
            throw ConfigInvalid("adversary.constant", e.what());
        }
        if (!spec.actions.index_of(a)) throw ConfigInvalid("adversary.constant", "action outside the action set");
        adversary = AdversaryPolicy::constant(a);
    } else {
        throw ConfigInvalid("adversary", "expected \"robust\" or {\"constant\": [...]}");
    }

    const auto trace = simulate_controlled(spec, open_loop_policy(u, grid), adversary, sim).second;
    const auto [mean, se] = trace.reward_estimate();
    nlohmann::json out{{"J", mean}, {"se", se}, {"paths", c.eval_paths}, {"mean_interventions", trace.mean_interventions()}};
    if (sol) out["y0"] = sol->y0();
    std::cout << out.dump(2) << '\n';
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust impulse control solver"};
    app.require_subcommand(1);

    std::string config, out, strategy;
    std::optional<std::uint64_t> seed;

    auto* solve = app.add_subcommand("solve", "Run the solver and write report.json, levels.csv, strategy.csv");
    solve->add_option("--config", config, "TOML or JSON run configuration")->required()->check(CLI::ExistingFile);
    solve->add_option("--seed", seed, "Override monte_carlo.seed");
    solve->add_option("--out", out, "Override output.dir");

    auto* oracle = app.add_subcommand("oracle", "Print tree values V(0, x0, r) as CSV");
    oracle->add_option("--config", config, "TOML or JSON run configuration")->required()->check(CLI::ExistingFile);

    auto* evaluate = app.add_subcommand("evaluate", "Monte Carlo value of a fixed impulse strategy");
    evaluate->add_option("--config", config, "TOML or JSON run configuration")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--strategy", strategy, "JSON strategy file")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--seed", seed, "Override monte_carlo.seed");

    auto* validate_cmd = app.add_subcommand("validate", "Probe the model assumptions and print the report");
    validate_cmd->add_option("--config", config, "TOML or JSON run configuration")->required()->check(CLI::ExistingFile);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitValidation;
    }

    if (*solve) return cmd_solve(config, seed, out);
    if (*oracle) return guarded([&] { return cmd_oracle(config); });
    if (*evaluate) return guarded([&] { return cmd_evaluate(config, strategy, seed); });
    if (*validate_cmd) return guarded([&] { return cmd_validate(config); });
    return kExitValidation;
}
