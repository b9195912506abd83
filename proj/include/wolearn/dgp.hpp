#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "wolearn/core.hpp"
#include "wolearn/nuisance_values.hpp"

namespace wolearn {

enum class DgpKind { Gamma, Pi, Mu, N };

std::string to_string(DgpKind kind);
DgpKind dgp_kind_from_string(const std::string& name);

// Synthetic generator configuration. `defaults(kind)` gives the published
// settings for each benchmark family.
struct DgpConfig {
    DgpKind kind = DgpKind::Gamma;
    int length = 5;            // T
    int covariate_dim = 1;     // d_x
    int n_train = 4000;
    int n_test = 1000;
    double gamma = 1.0;        // overlap strength (Gamma only)
    int horizon = 1;           // tau
    double sigma_y = 0.3;
    double sigma_x = std::sqrt(0.75);  // AR(1) with stationary variance 1
    std::uint64_t seed = 0;
    std::optional<int> anchor; // evaluation anchor; default T - 1 - tau

    static DgpConfig defaults(DgpKind kind);

    void validate() const;
    int evaluation_anchor() const { return anchor.value_or(length - 1 - horizon); }
};

nlohmann::json to_json(const DgpConfig& config);
DgpConfig dgp_config_from_json(const nlohmann::json& j);

// --- structural functions ---------------------------------------------------

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Shared linear index 0.5*mean(X_t) + 0.5*Y_{t-1} - 0.5*(A_{t-1} - 0.5).
double treatment_index(std::span<const double> x_t, double y_prev, int a_prev);
double logit_from_index(const DgpConfig& config, double index);
double treatment_logit(const DgpConfig& config, std::span<const double> x_t, double y_prev, int a_prev);
// E[Y_t | A_t = a, history]; x_prev is X_{t-1} (zeros at t = 0).
double outcome_mean(const DgpConfig& config, int a_t, std::span<const double> x_t, std::span<const double> x_prev);

// P(A_t = 1 | H_t) evaluated on a trajectory (sentinels Y_{-1} = A_{-1} = 0).
double treatment_probability(const DgpConfig& config, const Trajectory& trajectory, int t);

// --- simulation --------------------------------------------------------------

// n_train trajectories with ids 0..n-1; bitwise reproducible from (config, seed).
Dataset simulate(const DgpConfig& config, std::uint64_t seed);
// n_test trajectories drawn from a separate substream (ids offset by kTestIdOffset).
Dataset simulate_test(const DgpConfig& config, std::uint64_t seed);
inline constexpr std::int64_t kTestIdOffset = 1'000'000'000;

struct Future {
    RowMatrix x;                // X_t .. X_{t+tau}
    std::vector<int> a;         // A_t .. A_{t+tau}
    std::vector<double> y;      // Y_t .. Y_{t+tau}
};

// Simulated continuations of a history. With a plan, treatments are forced to
// the plan values; without one they are drawn from the propensity. Every
// rollout draws fresh noise from its own substream (index-derived), so two
// calls with the same seed share random numbers rollout by rollout.
std::vector<Future> conditional_rollout(const DgpConfig& config, const HistoryView& history,
                                        const std::optional<InterventionPlan>& plan, int rollouts,
                                        std::uint64_t seed);

// Same rollouts materialised as trajectories of length t + tau + 1 (observed
// prefix followed by the simulated future).
std::vector<Trajectory> rollout_trajectories(const DgpConfig& config, const HistoryView& history,
                                             const std::optional<InterventionPlan>& plan, int rollouts,
                                             std::uint64_t seed);

struct Estimate {
    double value = 0.0;
    double std_error = 0.0;
    bool exact = false;  // closed form or quadrature (std_error is 0)
};

// Mean over rollouts of Y_{t+tau}[a] - Y_{t+tau}[b] with common random numbers.
Estimate ground_truth_cate(const DgpConfig& config, const HistoryView& history, const InterventionPlan& plan_a,
                           const InterventionPlan& plan_b, int rollouts, std::uint64_t seed);
Estimate ground_truth_capo(const DgpConfig& config, const HistoryView& history, const InterventionPlan& plan,
                           int rollouts, std::uint64_t seed);

// Closed-form / quadrature CATE when the generator admits one (gamma and pi
// kinds at any horizon, mu kind at tau <= 1, n kind at tau = 0).
std::optional<double> exact_cate(const DgpConfig& config, const HistoryView& history, const InterventionPlan& plan_a,
                                 const InterventionPlan& plan_b);

// Ground-truth CATE at the plans' anchor for every test trajectory. With
// prefer_exact the closed form is used where available, rollouts otherwise.
std::vector<double> ground_truth_column(const DgpConfig& config, const Dataset& test, const InterventionPlan& plan_a,
                                        const InterventionPlan& plan_b, int rollouts, std::uint64_t seed,
                                        bool prefer_exact = true);

// One branch of the observational future on a quadrature grid.
struct WeightedPath {
    Trajectory path;  // length end + 1; observed prefix then the branch
    double weight = 0.0;
};

// Enumerates the observational future of H_t through `end`: both treatment
// values at every step, Gauss-Hermite nodes for each outcome and covariate
// noise before `end`. Y_end is set to its conditional mean, so the weighted
// sum of any functional that is linear in Y_end equals its conditional
// expectation given H_t up to quadrature error. Weights sum to 1.
std::vector<WeightedPath> future_quadrature(const DgpConfig& config, const HistoryView& history, int end,
                                            int points = 16);

// --- oracle nuisances ----------------------------------------------------------

enum class OracleMethod {
    MonteCarlo,  // nested rollouts for every response and weight query
    Quadrature,  // closed forms / Gauss-Hermite where available, rollouts otherwise
};

// Ground-truth nuisance functions for one plan under the known generator.
// Propensities are closed form; responses and weights are conditional
// expectations computed by rollouts or quadrature. Deterministic given
// (config, plan, method, rollouts, seed).
class OracleNuisanceSet final : public NuisanceProvider {
public:
    OracleNuisanceSet(DgpConfig config, InterventionPlan plan, OracleMethod method, int rollouts,
                      std::uint64_t seed);

    const InterventionPlan& plan() const override { return plan_; }
    NuisanceKind kind() const override { return NuisanceKind::Oracle; }
    EvaluatedNuisances evaluate(const Trajectory& trajectory, int anchor) const override;

    const DgpConfig& config() const { return config_; }
    OracleMethod method() const { return method_; }
    int rollouts() const { return rollouts_; }

    // pi_j(H_j): probability of the plan value at j.
    double propensity(const Trajectory& trajectory, int j) const;
    // mu_j(H_j) via the backward recursion, i.e. E[Y_end[a_{j:end}] | H_j].
    Estimate response(const Trajectory& trajectory, int j) const;
    // omega_j(H_l) = E[prod_{k=j}^{end} pi_k(H_k) | H_l] (observational rollouts
    // from l); j = end + 1 gives 1.
    Estimate weight(const Trajectory& trajectory, int j, int l) const;
    // p(A_{j:end} = a_{j:end} | H_l), reported for comparison with weight().
    Estimate path_probability(const Trajectory& trajectory, int j, int l) const;

private:
    std::uint64_t query_seed(const Trajectory& trajectory, int j, int l, std::uint64_t tag) const;

    DgpConfig config_;
    InterventionPlan plan_;
    OracleMethod method_;
    int rollouts_;
    std::uint64_t seed_;
};

// Gauss-Hermite rule for E[h(Z)], Z ~ N(0, 1): nodes z_i and weights summing to 1.
struct StandardNormalRule {
    std::vector<double> nodes;
    std::vector<double> weights;
};
const StandardNormalRule& standard_normal_rule(int points = 32);

}  // namespace wolearn
