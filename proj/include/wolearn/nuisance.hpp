#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wolearn/backbone.hpp"
#include "wolearn/core.hpp"
#include "wolearn/nuisance_values.hpp"

namespace wolearn {

struct NuisanceOptions {
    Hyperparameters hyper;
    HistoryWindow window;
    double propensity_floor = 1e-3;
    bool apply_floor = true;
};

nlohmann::json to_json(const NuisanceOptions& options);

// One classifier of A_j on features(H_j) per time index j in [start, end].
// Shared between plans; a plan reads P(A_j = a_j).
class PropensityModels {
public:
    PropensityModels() = default;
    PropensityModels(int start, int end, std::vector<Model> models, std::vector<std::string> warnings);

    int start() const { return start_; }
    int end() const { return end_; }
    const Model& at(int j) const { return models_.at(static_cast<std::size_t>(j - start_)); }
    const std::vector<Model>& models() const { return models_; }
    const std::vector<std::string>& warnings() const { return warnings_; }

private:
    int start_ = 0;
    int end_ = -1;
    std::vector<Model> models_;
    std::vector<std::string> warnings_;
};

PropensityModels fit_propensity_models(const Dataset& data, int start, int end, const NuisanceOptions& options);

// Fitted nuisance set for one plan: propensities pi_j, responses mu_j and
// tail weights W_j for j = t..t+tau. omega_j = W_j * pi_j and the rho
// ingredient omega_{j+1}(H_j) is W_j.
class FittedNuisanceSet final : public NuisanceProvider {
public:
    static FittedNuisanceSet fit(const Dataset& data, const InterventionPlan& plan, const NuisanceOptions& options);
    static FittedNuisanceSet fit(const Dataset& data, const InterventionPlan& plan, const NuisanceOptions& options,
                                 std::shared_ptr<const PropensityModels> propensities);

    const InterventionPlan& plan() const override { return plan_; }
    NuisanceKind kind() const override { return NuisanceKind::Fitted; }
    EvaluatedNuisances evaluate(const Trajectory& trajectory, int anchor) const override;
    std::vector<EvaluatedNuisances> evaluate_all(std::span<const Trajectory> rows, int anchor) const;

    const NuisanceOptions& options() const { return options_; }
    const PropensityModels& propensities() const { return *propensities_; }
    const std::vector<Model>& responses() const { return responses_; }
    // Tail-weight models for j = t..t+tau-1 (W_{t+tau} is the constant 1).
    const std::vector<Model>& tail_weights() const { return tail_weights_; }
    // Training target of each response stage, indexed by j - t: "outcome" or "response[j+1]".
    const std::vector<std::string>& provenance() const { return provenance_; }
    // Trajectory ids the set was fitted on (sorted).
    const std::vector<std::int64_t>& training_ids() const { return training_ids_; }
    std::uint64_t training_hash() const;

    // Directory of checkpoints plus manifest.json.
    void save(const std::string& directory) const;
    static FittedNuisanceSet load(const std::string& directory);

private:
    FittedNuisanceSet() = default;

    InterventionPlan plan_{0, {0}};
    NuisanceOptions options_;
    std::shared_ptr<const PropensityModels> propensities_;
    std::vector<Model> responses_;
    std::vector<Model> tail_weights_;
    std::vector<std::string> provenance_;
    std::vector<std::int64_t> training_ids_;
};

// Nuisance sets for a plan pair sharing one set of propensity classifiers.
struct NuisancePair {
    std::shared_ptr<const FittedNuisanceSet> a;
    std::shared_ptr<const FittedNuisanceSet> b;
};

NuisancePair fit_nuisance_pair(const Dataset& data, const InterventionPlan& plan_a, const InterventionPlan& plan_b,
                               const NuisanceOptions& options);

// Throws SplitDisciplineError if any evaluation id was used to fit the set.
void assert_disjoint(const std::vector<std::int64_t>& training_ids, const std::vector<std::int64_t>& ids);

std::uint64_t hash_ids(const std::vector<std::int64_t>& sorted_ids);

}  // namespace wolearn
