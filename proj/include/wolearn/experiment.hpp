#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wolearn/dgp.hpp"
#include "wolearn/learners.hpp"
#include "wolearn/verify.hpp"

namespace wolearn {

inline constexpr int kSpecSchemaVersion = 1;

enum class SweepAxis { Gamma, Tau, Dx, NTrain, None };

std::string to_string(SweepAxis axis);  // CSV column name: gamma, tau, d_x, n_train, none
SweepAxis sweep_axis_from_string(const std::string& name);
// Published grids: gamma 0.5..6.5 step 0.5, tau {1,3,5,7}, d_x 5..35 step 5,
// n 2000..8000 step 1000; {0} for none.
std::vector<double> default_grid(SweepAxis axis);

struct VerifySpec {
    std::vector<std::string> checks{"gamma", "rho", "risk", "orthogonality", "reduction"};
    int histories = 50;
    int rollouts = 20000;
    int pool = 20000;
    int orthogonality_histories = 200;
    bool capo = false;  // conditional-mean checks on plan a only
    std::uint64_t seed = 0;
};

struct ExperimentSpec {
    int schema_version = kSpecSchemaVersion;
    DgpConfig dgp = DgpConfig::defaults(DgpKind::Gamma);
    std::vector<LearnerKind> learners{LearnerKind::HA, LearnerKind::RA, LearnerKind::IPW, LearnerKind::DR,
                                      LearnerKind::WO};
    SweepAxis axis = SweepAxis::None;
    std::vector<double> grid;  // empty: default_grid(axis)
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    std::string output = "out";
    bool apply_floor = true;
    double propensity_floor = 1e-3;
    bool rho_tau0_collapse = false;
    bool clamp_rho = false;
    std::string backbone = "mlp";
    double lambda = 0.5;
    Hyperparameters hyper;  // shared by nuisance and second-stage fits
    int truth_rollouts = 10000;
    int workers = 0;        // 0: hardware concurrency
    bool record_timing = true;  // false writes seconds = 0 so outputs are bitwise reproducible
    bool write_pseudo = true;
    VerifySpec verify;

    void validate() const;
    std::vector<double> resolved_grid() const;
    DgpConfig config_for(double axis_value) const;
    LearnerOptions learner_options(std::uint64_t seed) const;
};

nlohmann::json to_json(const ExperimentSpec& spec);
ExperimentSpec spec_from_json(const nlohmann::json& j);
ExperimentSpec load_spec(const std::string& path);
// 16 hex digits of FNV-1a over the canonical JSON of the spec.
std::string spec_hash(const ExperimentSpec& spec);

// --- cells -------------------------------------------------------------------------

struct LearnerResult {
    LearnerKind kind = LearnerKind::WO;
    double rmse = 0.0;
    double guard_rate = 0.0;
    std::vector<std::string> warnings;
};

struct CellResult {
    double axis_value = 0.0;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<LearnerResult> learners;
    std::vector<PseudoOutcomeRow> pseudo;  // WO rows on the stage-2 split
    double seconds = 0.0;
    nlohmann::json provenance;
};

nlohmann::json to_json(const CellResult& cell);

// Simulates, trains every learner and scores it against ground truth. Errors
// are captured in the result, never thrown.
CellResult run_cell(const ExperimentSpec& spec, double axis_value, std::uint64_t seed);

// Every (grid value, seed) cell on a pool of spec.workers threads; results in
// grid-major, seed-minor order regardless of scheduling.
std::vector<CellResult> run_cells(const ExperimentSpec& spec);

// --- aggregation ---------------------------------------------------------------

struct SweepRow {
    LearnerKind learner = LearnerKind::WO;
    double axis_value = 0.0;
    double rmse_mean = 0.0;
    double rmse_sd = 0.0;
    std::optional<double> rel_improv_pct;  // 100 (best baseline - WO) / best baseline
    double guard_rate = 0.0;
    double seconds = 0.0;
    int seeds = 0;
};

// One row per (grid value, learner) over the successful cells.
std::vector<SweepRow> aggregate(const ExperimentSpec& spec, const std::vector<CellResult>& cells);

// Columns: learner, <axis>, rmse_mean, rmse_sd, rel_improv_pct, guard_rate, seconds, spec_hash.
void write_sweep_csv(const std::vector<SweepRow>& rows, SweepAxis axis, const std::string& hash, std::ostream& out);

struct CsvCheck {
    bool ok = true;
    std::vector<std::string> problems;
};

// Recomputes rel_improv_pct from the rmse_mean column and checks the header
// and the hash on every row.
CsvCheck check_sweep_csv(std::istream& in, const std::string& expected_hash);

// --- commands -------------------------------------------------------------------------

struct CommandResult {
    int exit_code = 0;
    nlohmann::json summary;
};

// Writes train/test JSONL per (grid value, seed) and a manifest.
CommandResult cmd_simulate(const ExperimentSpec& spec, const nlohmann::json& overrides = nlohmann::json::object());
// Runs every cell and writes per-cell metrics JSON (and WO pseudo-outcome CSV).
CommandResult cmd_run(const ExperimentSpec& spec, const nlohmann::json& overrides = nlohmann::json::object());
// cmd_run plus the aggregated sweep.csv and its self-consistency check.
CommandResult cmd_sweep(const ExperimentSpec& spec, const nlohmann::json& overrides = nlohmann::json::object());
// Runs the configured diagnostics; writes verify.json and a summary table.
CommandResult cmd_verify(const ExperimentSpec& spec, const nlohmann::json& overrides = nlohmann::json::object(),
                         std::ostream* table = nullptr);

std::vector<DiagnosticReport> run_verification(const ExperimentSpec& spec);
void write_verify_table(const std::vector<DiagnosticReport>& reports, std::ostream& out);

}  // namespace wolearn
