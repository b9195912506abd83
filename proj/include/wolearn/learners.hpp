#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wolearn/backbone.hpp"
#include "wolearn/core.hpp"
#include "wolearn/nuisance.hpp"
#include "wolearn/pseudo.hpp"

namespace wolearn {

enum class LearnerKind { HA, RA, IPW, DR, WO };
enum class Target { Cate, Capo };

std::string to_string(LearnerKind kind);
LearnerKind learner_kind_from_string(const std::string& name);
std::string to_string(Target target);

struct LearnerOptions {
    double lambda = 0.5;
    NuisanceOptions nuisance;
    Hyperparameters second_stage;
    PseudoOptions pseudo;
    std::uint64_t seed = 0;
    double guard_warning_rate = 0.2;
};

// Plans for one learning problem. CAPO uses only plan_a.
struct PlanPair {
    InterventionPlan a;
    std::optional<InterventionPlan> b;

    Target target() const { return b ? Target::Cate : Target::Capo; }
    int anchor() const { return a.start(); }
    int horizon() const { return a.horizon(); }
    void validate(int length) const;
};

// Always-treat vs never-treat at the given anchor and horizon.
PlanPair treat_vs_control(int anchor, int horizon);

struct CateModel {
    Model model;
    LearnerKind kind = LearnerKind::WO;
    PlanPair plans{InterventionPlan(0, {1}), std::nullopt};
    HistoryWindow window;
    double lambda = 0.5;
    std::uint64_t seed = 0;
    nlohmann::json nuisance;  // manifest summary: kind, split hash, sizes
    double guard_rate = 0.0;
    std::vector<std::string> warnings;

    Target target() const { return plans.target(); }
    int anchor() const { return plans.anchor(); }
    nlohmann::json provenance() const;
};

// Split, nuisance fits and evaluated nuisance values shared by every
// two-stage learner of one cell.
struct StageTwoInputs {
    Dataset nuisance_split;
    Dataset stage2_split;
    std::shared_ptr<const NuisanceProvider> nuisance_a;
    std::shared_ptr<const NuisanceProvider> nuisance_b;  // null for CAPO
    std::vector<EvaluatedNuisances> values_a;            // on the stage-2 split
    std::vector<EvaluatedNuisances> values_b;
    nlohmann::json nuisance_summary;
};

// Splits, fits nuisances on the nuisance split only and evaluates them on
// the stage-2 split. Asserts split discipline.
StageTwoInputs prepare_stage_two(const Dataset& data, const PlanPair& plans, const LearnerOptions& options);
// Same with externally supplied nuisances (e.g. oracle sets); still splits.
StageTwoInputs prepare_stage_two(const Dataset& data, const PlanPair& plans, const LearnerOptions& options,
                                 std::shared_ptr<const NuisanceProvider> nuisance_a,
                                 std::shared_ptr<const NuisanceProvider> nuisance_b);

// Second stage for a two-stage learner (RA, IPW, DR, WO). pseudo_rows, when
// given, receives one row per stage-2 trajectory.
CateModel fit_second_stage(LearnerKind kind, const StageTwoInputs& inputs, const PlanPair& plans,
                           const LearnerOptions& options, std::vector<PseudoOutcomeRow>* pseudo_rows = nullptr);

// History adjustment: one regression of Y_{t+tau} on features(H_t) and the
// treatment sequence over all data.
CateModel train_history_adjustment(const Dataset& data, const PlanPair& plans, const LearnerOptions& options);

CateModel train_wo(const Dataset& data, const PlanPair& plans, const LearnerOptions& options);
CateModel train_baseline(LearnerKind kind, const Dataset& data, const PlanPair& plans, const LearnerOptions& options);

// All requested learners on one dataset with a shared split and nuisance fit.
std::vector<CateModel> train_learners(const std::vector<LearnerKind>& kinds, const Dataset& data,
                                      const PlanPair& plans, const LearnerOptions& options);

// (1 / sum omega_t) sum rho (xi - g)^2 over pseudo-outcome rows.
double wo_empirical_risk(const std::vector<PseudoOutcomeRow>& rows, const Eigen::VectorXd& g);

double predict_cate(const CateModel& model, const HistoryView& history);
Eigen::VectorXd predict_cate(const CateModel& model, std::span<const Trajectory> rows);

// Root mean squared error against a ground-truth column aligned with test.
double evaluate_rmse(const CateModel& model, const Dataset& test, const std::vector<double>& truth);
double rmse(const Eigen::VectorXd& prediction, const std::vector<double>& truth);

struct SeedSummary {
    double mean = 0.0;
    double sd = 0.0;  // sample standard deviation (n - 1)
    std::vector<double> values;
};
SeedSummary summarize(const std::vector<double>& values);

}  // namespace wolearn
