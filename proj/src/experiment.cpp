#include "wolearn/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "wolearn/error.hpp"
#include "wolearn/parallel.hpp"
#include "wolearn/rng.hpp"

namespace wolearn {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(SweepAxis axis) {
    switch (axis) {
        case SweepAxis::Gamma: return "gamma";
        case SweepAxis::Tau: return "tau";
        case SweepAxis::Dx: return "d_x";
        case SweepAxis::NTrain: return "n_train";
        case SweepAxis::None: return "none";
    }
    return "?";
}

SweepAxis sweep_axis_from_string(const std::string& name) {
    if (name == "gamma") return SweepAxis::Gamma;
    if (name == "tau") return SweepAxis::Tau;
    if (name == "d_x" || name == "dx") return SweepAxis::Dx;
    if (name == "n_train" || name == "n") return SweepAxis::NTrain;
    if (name == "none") return SweepAxis::None;
    throw ConfigError("unknown sweep axis '" + name + "'");
}

std::vector<double> default_grid(SweepAxis axis) {
    std::vector<double> g;
    switch (axis) {
        case SweepAxis::Gamma:
            for (int i = 1; i <= 13; ++i) g.push_back(0.5 * i);
            break;
        case SweepAxis::Tau: g = {1, 3, 5, 7}; break;
        case SweepAxis::Dx:
            for (int d = 5; d <= 35; d += 5) g.push_back(d);
            break;
        case SweepAxis::NTrain:
            for (int n = 2000; n <= 8000; n += 1000) g.push_back(n);
            break;
        case SweepAxis::None: g = {0.0}; break;
    }
    return g;
}

// --- spec ---------------------------------------------------------------------------

namespace {

bool is_integral(double v) { return std::floor(v) == v; }

}  // namespace

std::vector<double> ExperimentSpec::resolved_grid() const {
    if (axis == SweepAxis::None) return {0.0};
    return grid.empty() ? default_grid(axis) : grid;
}

DgpConfig ExperimentSpec::config_for(double v) const {
    DgpConfig c = dgp;
    switch (axis) {
        case SweepAxis::Gamma: c.gamma = v; break;
        case SweepAxis::Tau: c.horizon = static_cast<int>(v); break;
        case SweepAxis::Dx: c.covariate_dim = static_cast<int>(v); break;
        case SweepAxis::NTrain: c.n_train = static_cast<int>(v); break;
        case SweepAxis::None: break;
    }
    return c;
}

LearnerOptions ExperimentSpec::learner_options(std::uint64_t seed) const {
    LearnerOptions o;
    o.lambda = lambda;
    o.seed = seed;
    o.nuisance.hyper = hyper;
    o.nuisance.apply_floor = apply_floor;
    o.nuisance.propensity_floor = propensity_floor;
    o.second_stage = hyper;
    o.pseudo.rho_tau0_collapse = rho_tau0_collapse;
    o.pseudo.clamp_rho = clamp_rho;
    return o;
}

void ExperimentSpec::validate() const {
    if (schema_version != kSpecSchemaVersion) {
        throw ConfigError("unsupported spec schema version " + std::to_string(schema_version));
    }
    if (learners.empty()) throw ConfigError("learner list is empty");
    if (seeds.empty()) throw ConfigError("seed list is empty");
    if (backbone != "mlp") throw ConfigError("unknown backbone '" + backbone + "' (only mlp is available)");
    if (!(lambda > 0.0 && lambda < 1.0)) throw ConfigError("lambda must lie in (0, 1)");
    if (truth_rollouts < 1) throw ConfigError("truth_rollouts must be positive");
    if (workers < 0) throw ConfigError("workers must be non-negative");
    if (output.empty()) throw ConfigError("output directory is empty");
    hyper.validate();
    const auto g = resolved_grid();
    if (g.empty()) throw ConfigError("sweep grid is empty");
    for (double v : g) {
        if (axis != SweepAxis::Gamma && axis != SweepAxis::None && !is_integral(v)) {
            throw ConfigError(to_string(axis) + " grid values must be integers");
        }
        config_for(v).validate();
    }
    std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
    if (unique.size() != seeds.size()) throw ConfigError("duplicate seeds");
}

json to_json(const ExperimentSpec& s) {
    json learners = json::array();
    for (auto k : s.learners) learners.push_back(to_string(k));
    return {{"schema_version", s.schema_version},
            {"dgp", to_json(s.dgp)},
            {"learners", learners},
            {"axis", to_string(s.axis)},
            {"grid", s.resolved_grid()},
            {"seeds", s.seeds},
            {"output", s.output},
            {"flags",
             {{"apply_floor", s.apply_floor},
              {"propensity_floor", s.propensity_floor},
              {"rho_tau0_collapse", s.rho_tau0_collapse},
              {"clamp_rho", s.clamp_rho},
              {"backbone", s.backbone}}},
            {"lambda", s.lambda},
            {"hyperparameters", to_json(s.hyper)},
            {"truth_rollouts", s.truth_rollouts},
            {"workers", s.workers},
            {"record_timing", s.record_timing},
            {"write_pseudo", s.write_pseudo},
            {"verify",
             {{"checks", s.verify.checks},
              {"histories", s.verify.histories},
              {"rollouts", s.verify.rollouts},
              {"pool", s.verify.pool},
              {"orthogonality_histories", s.verify.orthogonality_histories},
              {"capo", s.verify.capo},
              {"seed", s.verify.seed}}}};
}

ExperimentSpec spec_from_json(const json& j) {
    static const std::set<std::string> known{"schema_version", "dgp",        "learners",       "axis",
                                             "grid",           "seeds",      "output",         "flags",
                                             "lambda",         "hyperparameters", "truth_rollouts", "workers",
                                             "record_timing",  "write_pseudo", "verify"};
    if (!j.is_object()) throw ConfigError("spec must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (!known.count(key)) throw ConfigError("unknown spec field '" + key + "'");
    }
    try {
        ExperimentSpec s;
        s.schema_version = j.value("schema_version", s.schema_version);
        if (j.contains("dgp")) s.dgp = dgp_config_from_json(j.at("dgp"));
        if (j.contains("learners")) {
            s.learners.clear();
            for (const auto& name : j.at("learners")) s.learners.push_back(learner_kind_from_string(name.get<std::string>()));
        }
        if (j.contains("axis")) s.axis = sweep_axis_from_string(j.at("axis").get<std::string>());
        s.grid = j.value("grid", s.grid);
        s.seeds = j.value("seeds", s.seeds);
        s.output = j.value("output", s.output);
        if (j.contains("flags")) {
            const auto& f = j.at("flags");
            s.apply_floor = f.value("apply_floor", s.apply_floor);
            s.propensity_floor = f.value("propensity_floor", s.propensity_floor);
            s.rho_tau0_collapse = f.value("rho_tau0_collapse", s.rho_tau0_collapse);
            s.clamp_rho = f.value("clamp_rho", s.clamp_rho);
            s.backbone = f.value("backbone", s.backbone);
        }
        s.lambda = j.value("lambda", s.lambda);
        if (j.contains("hyperparameters")) s.hyper = hyperparameters_from_json(j.at("hyperparameters"));
        s.truth_rollouts = j.value("truth_rollouts", s.truth_rollouts);
        s.workers = j.value("workers", s.workers);
        s.record_timing = j.value("record_timing", s.record_timing);
        s.write_pseudo = j.value("write_pseudo", s.write_pseudo);
        if (j.contains("verify")) {
            const auto& v = j.at("verify");
            s.verify.checks = v.value("checks", s.verify.checks);
            s.verify.histories = v.value("histories", s.verify.histories);
            s.verify.rollouts = v.value("rollouts", s.verify.rollouts);
            s.verify.pool = v.value("pool", s.verify.pool);
            s.verify.orthogonality_histories = v.value("orthogonality_histories", s.verify.orthogonality_histories);
            s.verify.capo = v.value("capo", s.verify.capo);
            s.verify.seed = v.value("seed", s.verify.seed);
        }
        return s;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed spec: ") + e.what());
    }
}

ExperimentSpec load_spec(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open spec file " + path);
    try {
        return spec_from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw ConfigError("spec file " + path + " is not valid JSON: " + e.what());
    }
}

std::string spec_hash(const ExperimentSpec& spec) {
    auto j = to_json(spec);
    // Execution-only settings do not change results.
    j.erase("output");
    j.erase("workers");
    const auto text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) h = (h ^ c) * 0x100000001b3ULL;
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

// --- cells -------------------------------------------------------------------------

json to_json(const CellResult& c) {
    json learners = json::array();
    for (const auto& l : c.learners) {
        learners.push_back(
            {{"learner", to_string(l.kind)}, {"rmse", l.rmse}, {"guard_rate", l.guard_rate}, {"warnings", l.warnings}});
    }
    json j{{"axis_value", c.axis_value}, {"seed", c.seed},      {"status", c.ok ? "ok" : "failed"},
           {"learners", learners},       {"seconds", c.seconds}, {"provenance", c.provenance}};
    if (!c.ok) j["error"] = c.error;
    return j;
}

namespace {

constexpr std::uint64_t kTruthTag = 0x7472757468ULL;

}  // namespace

CellResult run_cell(const ExperimentSpec& spec, double axis_value, std::uint64_t seed) {
    CellResult cell;
    cell.axis_value = axis_value;
    cell.seed = seed;
    const auto start = std::chrono::steady_clock::now();
    try {
        DgpConfig c = spec.config_for(axis_value);
        c.seed = seed;
        c.validate();
        const auto train = simulate(c, seed);
        const auto test = simulate_test(c, seed);
        const auto plans = treat_vs_control(c.evaluation_anchor(), c.horizon);
        const auto options = spec.learner_options(seed);
        const auto truth =
            ground_truth_column(c, test, plans.a, *plans.b, spec.truth_rollouts, derive_seed(seed, {kTruthTag}));

        std::optional<StageTwoInputs> inputs;
        for (auto kind : spec.learners) {
            CateModel model = [&] {
                if (kind == LearnerKind::HA) return train_history_adjustment(train, plans, options);
                if (!inputs) inputs = prepare_stage_two(train, plans, options);
                return fit_second_stage(kind, *inputs, plans, options,
                                        kind == LearnerKind::WO && spec.write_pseudo ? &cell.pseudo : nullptr);
            }();
            cell.learners.push_back({kind, evaluate_rmse(model, test, truth), model.guard_rate, model.warnings});
            if (kind == LearnerKind::WO) cell.provenance = model.provenance();
        }
        if (inputs) cell.provenance["nuisance"] = inputs->nuisance_summary;
        cell.provenance["dgp"] = to_json(c);
        cell.ok = true;
    } catch (const std::exception& e) {
        cell.ok = false;
        cell.error = e.what();
        cell.learners.clear();
        cell.pseudo.clear();
    }
    if (spec.record_timing) {
        cell.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    return cell;
}

std::vector<CellResult> run_cells(const ExperimentSpec& spec) {
    spec.validate();
    const auto grid = spec.resolved_grid();
    std::vector<CellResult> out(grid.size() * spec.seeds.size());
    parallel_for(out.size(), spec.workers, [&](std::size_t i) {
        out[i] = run_cell(spec, grid[i / spec.seeds.size()], spec.seeds[i % spec.seeds.size()]);
    });
    return out;
}

// --- aggregation ---------------------------------------------------------------

std::vector<SweepRow> aggregate(const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
    std::vector<SweepRow> rows;
    for (double v : spec.resolved_grid()) {
        std::vector<SweepRow> group;
        for (auto kind : spec.learners) {
            std::vector<double> rmses;
            double guard = 0.0, seconds = 0.0;
            for (const auto& c : cells) {
                if (!c.ok || c.axis_value != v) continue;
                for (const auto& l : c.learners) {
                    if (l.kind != kind) continue;
                    rmses.push_back(l.rmse);
                    guard += l.guard_rate;
                    seconds += c.seconds;
                }
            }
            if (rmses.empty()) continue;
            const auto s = summarize(rmses);
            const double n = static_cast<double>(rmses.size());
            group.push_back({kind, v, s.mean, s.sd, std::nullopt, guard / n, seconds / n, static_cast<int>(rmses.size())});
        }
        const auto wo = std::find_if(group.begin(), group.end(), [](const SweepRow& r) { return r.learner == LearnerKind::WO; });
        std::optional<double> best;
        for (const auto& r : group) {
            if (r.learner != LearnerKind::WO && (!best || r.rmse_mean < *best)) best = r.rmse_mean;
        }
        if (wo != group.end() && best && *best > 0.0) {
            const double pct = 100.0 * (*best - wo->rmse_mean) / *best;
            for (auto& r : group) r.rel_improv_pct = pct;
        }
        rows.insert(rows.end(), group.begin(), group.end());
    }
    return rows;
}

namespace {

std::string format_number(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

void write_sweep_csv(const std::vector<SweepRow>& rows, SweepAxis axis, const std::string& hash, std::ostream& out) {
    out << "learner," << to_string(axis) << ",rmse_mean,rmse_sd,rel_improv_pct,guard_rate,seconds,spec_hash\n";
    for (const auto& r : rows) {
        out << to_string(r.learner) << ',' << format_number(r.axis_value) << ',' << format_number(r.rmse_mean) << ','
            << format_number(r.rmse_sd) << ',' << (r.rel_improv_pct ? format_number(*r.rel_improv_pct) : "") << ','
            << format_number(r.guard_rate) << ',' << format_number(r.seconds) << ',' << hash << '\n';
    }
}

CsvCheck check_sweep_csv(std::istream& in, const std::string& expected_hash) {
    CsvCheck check;
    auto fail = [&check](std::string msg) {
        check.ok = false;
        check.problems.push_back(std::move(msg));
    };
    std::string line;
    if (!std::getline(in, line)) {
        fail("empty file");
        return check;
    }
    const auto header = split_csv_line(line);
    static const std::set<std::string> axes{"gamma", "tau", "d_x", "n_train", "none"};
    if (header.size() != 8 || header[0] != "learner" || !axes.count(header[1]) || header[2] != "rmse_mean" ||
        header[3] != "rmse_sd" || header[4] != "rel_improv_pct" || header[5] != "guard_rate" ||
        header[6] != "seconds" || header[7] != "spec_hash") {
        fail("unexpected header: " + line);
        return check;
    }
    struct Entry {
        std::string learner;
        double rmse;
        std::string rel;
    };
    std::map<std::string, std::vector<Entry>> groups;
    std::vector<std::string> order;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != 8) {
            fail("line " + std::to_string(lineno) + ": expected 8 fields");
            continue;
        }
        if (f[7] != expected_hash) fail("line " + std::to_string(lineno) + ": spec hash mismatch");
        if (!groups.count(f[1])) order.push_back(f[1]);
        try {
            groups[f[1]].push_back({f[0], std::stod(f[2]), f[4]});
        } catch (const std::exception&) {
            fail("line " + std::to_string(lineno) + ": rmse_mean is not a number");
        }
    }
    for (const auto& key : order) {
        const auto& g = groups[key];
        std::optional<double> wo, best;
        for (const auto& e : g) {
            if (e.learner == "WO") wo = e.rmse;
            else if (!best || e.rmse < *best) best = e.rmse;
        }
        const bool expect = wo && best && *best > 0.0;
        for (const auto& e : g) {
            if (!expect) {
                if (!e.rel.empty()) fail(key + ": rel_improv_pct present without WO and a baseline");
                continue;
            }
            const double want = 100.0 * (*best - *wo) / *best;
            if (e.rel.empty() || std::abs(std::stod(e.rel) - want) > 1e-9 * (1.0 + std::abs(want))) {
                fail(key + ": rel_improv_pct inconsistent with rmse_mean for " + e.learner);
            }
        }
    }
    return check;
}

// --- commands -------------------------------------------------------------------------

namespace {

std::string value_label(SweepAxis axis, double v) {
    if (axis == SweepAxis::None) return "all";
    return to_string(axis) + "=" + format_number(v);
}

void write_json(const fs::path& path, const json& j) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

json manifest(const ExperimentSpec& spec, const json& overrides, const std::string& command) {
    return {{"command", command}, {"spec", to_json(spec)}, {"overrides", overrides}, {"spec_hash", spec_hash(spec)}};
}

void write_cells(const ExperimentSpec& spec, const std::vector<CellResult>& cells) {
    const fs::path root(spec.output);
    for (const auto& c : cells) {
        const auto dir = root / "cells" / value_label(spec.axis, c.axis_value) / ("seed=" + std::to_string(c.seed));
        write_json(dir / "metrics.json", to_json(c));
        if (c.ok && spec.write_pseudo && !c.pseudo.empty()) {
            std::ofstream out(dir / "pseudo.csv");
            write_pseudo_csv(c.pseudo, out);
        }
    }
}

json cell_statuses(const std::vector<CellResult>& cells, int& failures) {
    json arr = json::array();
    failures = 0;
    for (const auto& c : cells) {
        json e{{"axis_value", c.axis_value}, {"seed", c.seed}, {"status", c.ok ? "ok" : "failed"}};
        if (!c.ok) {
            e["error"] = c.error;
            ++failures;
        }
        arr.push_back(e);
    }
    return arr;
}

}  // namespace

CommandResult cmd_simulate(const ExperimentSpec& spec, const json& overrides) {
    spec.validate();
    const fs::path root(spec.output);
    fs::create_directories(root / "data");
    const auto grid = spec.resolved_grid();
    json files = json::array();
    std::vector<json> entries(grid.size() * spec.seeds.size());
    parallel_for(entries.size(), spec.workers, [&](std::size_t i) {
        const double v = grid[i / spec.seeds.size()];
        const auto seed = spec.seeds[i % spec.seeds.size()];
        DgpConfig c = spec.config_for(v);
        c.seed = seed;
        const auto stem = value_label(spec.axis, v) + "_seed=" + std::to_string(seed);
        save_jsonl(simulate(c, seed), (root / "data" / (stem + "_train.jsonl")).string());
        save_jsonl(simulate_test(c, seed), (root / "data" / (stem + "_test.jsonl")).string());
        entries[i] = {{"axis_value", v}, {"seed", seed}, {"train", "data/" + stem + "_train.jsonl"},
                      {"test", "data/" + stem + "_test.jsonl"}};
    });
    for (auto& e : entries) files.push_back(std::move(e));
    auto m = manifest(spec, overrides, "simulate");
    m["files"] = files;
    write_json(root / "manifest.json", m);
    return {0, m};
}

CommandResult cmd_run(const ExperimentSpec& spec, const json& overrides) {
    const auto cells = run_cells(spec);
    write_cells(spec, cells);
    int failures = 0;
    auto m = manifest(spec, overrides, "run");
    m["cells"] = cell_statuses(cells, failures);
    m["failed_cells"] = failures;
    write_json(fs::path(spec.output) / "manifest.json", m);
    return {failures == 0 ? 0 : 1, m};
}

CommandResult cmd_sweep(const ExperimentSpec& spec, const json& overrides) {
    const auto cells = run_cells(spec);
    write_cells(spec, cells);
    const auto hash = spec_hash(spec);
    const auto rows = aggregate(spec, cells);
    const auto csv_path = fs::path(spec.output) / "sweep.csv";
    {
        std::ofstream out(csv_path);
        if (!out) throw DataError("cannot write " + csv_path.string());
        write_sweep_csv(rows, spec.axis, hash, out);
    }
    std::ifstream back(csv_path);
    const auto check = check_sweep_csv(back, hash);
    int failures = 0;
    auto m = manifest(spec, overrides, "sweep");
    m["cells"] = cell_statuses(cells, failures);
    m["failed_cells"] = failures;
    m["csv"] = "sweep.csv";
    m["self_consistency"] = {{"ok", check.ok}, {"problems", check.problems}};
    write_json(fs::path(spec.output) / "manifest.json", m);
    return {failures == 0 && check.ok ? 0 : 1, m};
}

std::vector<DiagnosticReport> run_verification(const ExperimentSpec& spec) {
    const auto& v = spec.verify;
    const DgpConfig c = spec.config_for(spec.resolved_grid().front());
    c.validate();
    const int t = c.evaluation_anchor();
    const PlanPair plans = v.capo ? PlanPair{InterventionPlan::constant(t, c.horizon, 1), std::nullopt}
                                  : treat_vs_control(t, c.horizon);
    std::vector<DiagnosticReport> out;
    for (const auto& name : v.checks) {
        if (name == "gamma" || name == "rho") {
            ConditionalMeanOptions o;
            o.histories = v.histories;
            o.rollouts = v.rollouts;
            o.seed = v.seed;
            o.pseudo.rho_tau0_collapse = spec.rho_tau0_collapse;
            o.pseudo.clamp_rho = spec.clamp_rho;
            out.push_back(name == "gamma" ? check_conditional_mean_gamma(c, plans, o)
                                          : check_conditional_mean_rho(c, plans, o));
        } else if (name == "risk") {
            RiskEquivalenceOptions o;
            o.pool = v.pool;
            o.seed = v.seed;
            out.push_back(check_risk_equivalence(c, plans, standard_candidates(c, plans, v.seed), o));
        } else if (name == "orthogonality") {
            OrthogonalityOptions o;
            o.histories = v.orthogonality_histories;
            o.seed = v.seed;
            const auto dirs = default_directions(plans, v.seed);
            for (auto obj : {Objective::WO, Objective::RAPlugin, Objective::IPWPlugin}) {
                out.push_back(check_orthogonality(obj, c, plans, dirs, o));
            }
        } else if (name == "reduction") {
            DgpConfig c0 = c;
            c0.horizon = 0;
            c0.anchor.reset();
            ReductionOptions o;
            o.histories = v.histories;
            o.rollouts = v.rollouts;
            o.seed = v.seed;
            out.push_back(check_r_learner_reduction(c0, treat_vs_control(c0.evaluation_anchor(), 0), o));
        } else {
            throw ConfigError("unknown check '" + name + "'");
        }
    }
    return out;
}

void write_verify_table(const std::vector<DiagnosticReport>& reports, std::ostream& out) {
    out << std::left << std::setw(26) << "check" << std::setw(14) << "variant" << std::setw(14) << "statistic"
        << std::setw(12) << "threshold" << "status\n";
    for (const auto& r : reports) {
        std::string variant = r.config.value("target", "");
        if (r.config.contains("objective")) variant = r.config.at("objective").get<std::string>();
        std::ostringstream stat;
        stat << std::setprecision(4) << r.statistic;
        out << std::setw(26) << r.check << std::setw(14) << variant << std::setw(14) << stat.str() << std::setw(12)
            << r.threshold << to_string(r.status) << '\n';
    }
}

CommandResult cmd_verify(const ExperimentSpec& spec, const json& overrides, std::ostream* table) {
    spec.validate();
    const auto reports = run_verification(spec);
    json arr = json::array();
    bool all = true;
    for (const auto& r : reports) {
        arr.push_back(to_json(r));
        all = all && r.passed();
    }
    const fs::path root(spec.output);
    write_json(root / "verify.json", arr);
    if (table) write_verify_table(reports, *table);
    auto m = manifest(spec, overrides, "verify");
    m["reports"] = "verify.json";
    m["all_passed"] = all;
    write_json(root / "manifest.json", m);
    return {all ? 0 : 1, m};
}

}  // namespace wolearn
