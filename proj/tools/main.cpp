#include <CLI11.hpp>

#include <iostream>
#include <optional>

#include "wolearn/error.hpp"
#include "wolearn/experiment.hpp"

using namespace wolearn;
using nlohmann::json;

namespace {

struct Overrides {
    std::string spec_path;
    std::optional<std::string> kind;
    std::optional<double> gamma;
    std::optional<int> tau;
    std::optional<int> dx;
    std::optional<int> n_train;
    std::optional<int> n_test;
    std::optional<std::string> axis;
    std::vector<double> grid;
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> learners;
    std::optional<std::string> output;
    std::optional<int> workers;
    std::optional<int> epochs;
    std::optional<int> truth_rollouts;
    bool no_floor = false;
    bool rho_collapse = false;
    bool clamp_rho = false;
    bool no_timing = false;
    std::vector<std::string> checks;
    std::optional<int> histories;
    std::optional<int> rollouts;
};

void add_options(CLI::App* app, Overrides& o) {
    app->add_option("--spec", o.spec_path, "Experiment spec (JSON)");
    app->add_option("--dgp", o.kind, "Generator: gamma, pi, mu, n");
    app->add_option("--gamma", o.gamma, "Overlap strength");
    app->add_option("--tau", o.tau, "Prediction horizon");
    app->add_option("--dx", o.dx, "Covariate dimension");
    app->add_option("--n-train", o.n_train, "Training trajectories");
    app->add_option("--n-test", o.n_test, "Test trajectories");
    app->add_option("--axis", o.axis, "Sweep axis: gamma, tau, d_x, n_train, none");
    app->add_option("--grid", o.grid, "Sweep grid values")->delimiter(',');
    app->add_option("--seeds", o.seeds, "Seeds")->delimiter(',');
    app->add_option("--learners", o.learners, "Learners (HA,RA,IPW,DR,WO)")->delimiter(',');
    app->add_option("-o,--output", o.output, "Output directory");
    app->add_option("--workers", o.workers, "Worker threads (0 = all cores)");
    app->add_option("--epochs", o.epochs, "Training epochs for every network");
    app->add_option("--truth-rollouts", o.truth_rollouts, "Rollouts for Monte Carlo ground truth");
    app->add_flag("--no-floor", o.no_floor, "Disable propensity flooring");
    app->add_flag("--rho-collapse", o.rho_collapse, "Use rho = pi at tau = 0");
    app->add_flag("--clamp-rho", o.clamp_rho, "Clamp negative rho to zero");
    app->add_flag("--no-timing", o.no_timing, "Write seconds = 0 for bitwise reproducible output");
    app->add_option("--checks", o.checks, "Diagnostics: gamma, rho, risk, orthogonality, reduction")->delimiter(',');
    app->add_option("--histories", o.histories, "Sampled histories for the diagnostics");
    app->add_option("--rollouts", o.rollouts, "Rollouts per history for the diagnostics");
}

// Applies command-line overrides on top of the spec file; returns them as JSON.
std::pair<ExperimentSpec, json> resolve(const Overrides& o) {
    json spec = json::object();
    if (!o.spec_path.empty()) spec = to_json(load_spec(o.spec_path));
    json ov = json::object();
    if (o.kind) {
        // A new generator starts from its own defaults.
        spec["dgp"] = to_json(DgpConfig::defaults(dgp_kind_from_string(*o.kind)));
        ov["dgp"] = *o.kind;
    }
    if (!spec.contains("dgp")) spec["dgp"] = to_json(DgpConfig::defaults(DgpKind::Gamma));
    auto set_dgp = [&](const char* key, const auto& value) {
        if (value) {
            spec["dgp"][key] = *value;
            ov[key] = *value;
        }
    };
    set_dgp("gamma", o.gamma);
    set_dgp("tau", o.tau);
    set_dgp("d_x", o.dx);
    set_dgp("n_train", o.n_train);
    set_dgp("n_test", o.n_test);
    if (o.axis) {
        spec["axis"] = *o.axis;
        ov["axis"] = *o.axis;
        if (o.grid.empty()) spec.erase("grid");
    }
    if (!o.grid.empty()) spec["grid"] = ov["grid"] = o.grid;
    if (!o.seeds.empty()) spec["seeds"] = ov["seeds"] = o.seeds;
    if (!o.learners.empty()) spec["learners"] = ov["learners"] = o.learners;
    if (o.output) spec["output"] = ov["output"] = *o.output;
    if (o.workers) spec["workers"] = ov["workers"] = *o.workers;
    if (o.truth_rollouts) spec["truth_rollouts"] = ov["truth_rollouts"] = *o.truth_rollouts;
    if (o.epochs) {
        spec["hyperparameters"]["epochs"] = *o.epochs;
        ov["epochs"] = *o.epochs;
    }
    if (o.no_floor) spec["flags"]["apply_floor"] = ov["apply_floor"] = false;
    if (o.rho_collapse) spec["flags"]["rho_tau0_collapse"] = ov["rho_tau0_collapse"] = true;
    if (o.clamp_rho) spec["flags"]["clamp_rho"] = ov["clamp_rho"] = true;
    if (o.no_timing) spec["record_timing"] = ov["record_timing"] = false;
    if (!o.checks.empty()) spec["verify"]["checks"] = ov["checks"] = o.checks;
    if (o.histories) spec["verify"]["histories"] = ov["histories"] = *o.histories;
    if (o.rollouts) spec["verify"]["rollouts"] = ov["rollouts"] = *o.rollouts;
    auto resolved = spec_from_json(spec);
    resolved.validate();
    return {resolved, ov};
}

void print_summary(const CommandResult& r) {
    if (r.summary.contains("failed_cells")) {
        std::cout << "cells failed: " << r.summary["failed_cells"] << "\n";
        for (const auto& c : r.summary["cells"]) {
            if (c["status"] != "ok") std::cerr << "  " << c.dump() << "\n";
        }
    }
    if (r.summary.contains("self_consistency")) {
        const auto& s = r.summary["self_consistency"];
        std::cout << "self-consistency: " << (s["ok"].get<bool>() ? "ok" : "FAILED") << "\n";
        for (const auto& p : s["problems"]) std::cerr << "  " << p.get<std::string>() << "\n";
    }
    std::cout << "spec hash: " << r.summary["spec_hash"].get<std::string>() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Overlap-weighted orthogonal meta-learner: simulation, training, sweeps and diagnostics"};
    app.require_subcommand(1);
    Overrides o;
    auto* simulate = app.add_subcommand("simulate", "Write simulated datasets");
    auto* run = app.add_subcommand("run", "Train and evaluate every cell");
    auto* sweep = app.add_subcommand("sweep", "Run all cells and write the aggregated CSV");
    auto* verify = app.add_subcommand("verify", "Run the numerical diagnostics");
    for (auto* sub : {simulate, run, sweep, verify}) add_options(sub, o);
    CLI11_PARSE(app, argc, argv);

    try {
        auto [spec, overrides] = resolve(o);
        CommandResult result;
        if (simulate->parsed()) {
            result = cmd_simulate(spec, overrides);
        } else if (run->parsed()) {
            result = cmd_run(spec, overrides);
        } else if (sweep->parsed()) {
            result = cmd_sweep(spec, overrides);
        } else {
            result = cmd_verify(spec, overrides, &std::cout);
        }
        print_summary(result);
        std::cout << "output: " << spec.output << "\n";
        return result.exit_code;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
