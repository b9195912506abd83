#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wolearn/dgp.hpp"
#include "wolearn/learners.hpp"
#include "wolearn/pseudo.hpp"

namespace wolearn {

enum class CheckStatus { Pass, Fail, Inconclusive };
std::string to_string(CheckStatus status);

struct DiagnosticReport {
    std::string check;
    double statistic = 0.0;
    double std_error = 0.0;
    double threshold = 0.0;
    CheckStatus status = CheckStatus::Fail;
    nlohmann::json config;
    nlohmann::json details = nlohmann::json::object();

    bool passed() const { return status == CheckStatus::Pass; }
};

nlohmann::json to_json(const DiagnosticReport& report);

// --- conditional-mean identities ------------------------------------------------

struct ConditionalMeanOptions {
    int histories = 50;
    int rollouts = 20000;
    double z = 4.0;            // tolerance in standard errors
    double pass_share = 0.95;  // share of histories that must fall within z SE
    double response_shift = 0.0;  // added to every mu_j (corruption ablation)
    PseudoOptions pseudo;
    std::uint64_t seed = 0;
};

// E[gamma | H_t] = mu_t for sampled histories, Monte Carlo over observational
// rollouts with oracle nuisances. CAPO when plans.b is empty, CATE otherwise.
DiagnosticReport check_conditional_mean_gamma(const DgpConfig& config, const PlanPair& plans,
                                              const ConditionalMeanOptions& options = {});
// E[rho | H_t] = omega_t (CAPO) or omega^a_t omega^b_t (CATE).
DiagnosticReport check_conditional_mean_rho(const DgpConfig& config, const PlanPair& plans,
                                            const ConditionalMeanOptions& options = {});

// --- risk equivalence -----------------------------------------------------------------

struct Candidate {
    std::string name;
    std::function<double(const Trajectory&, int)> g;  // g(H_t) from a trajectory and anchor
};

// truth, truth + 0.2, truth - 0.2, two random linear maps of the history
// features, and the zero function.
std::vector<Candidate> standard_candidates(const DgpConfig& config, const PlanPair& plans, std::uint64_t seed);

struct RiskEquivalenceOptions {
    int pool = 20000;
    double z = 3.0;
    std::uint64_t seed = 0;
};

// WO risk L(g) against the oracle risk L*(g) = E[omega (mu - g)^2] / E[omega]:
// every pairwise difference must agree within z combined SE, and a candidate
// named "truth" (if present) must minimise both.
DiagnosticReport check_risk_equivalence(const DgpConfig& config, const PlanPair& plans,
                                        const std::vector<Candidate>& candidates,
                                        const RiskEquivalenceOptions& options = {});

// --- orthogonality ----------------------------------------------------------------------

enum class NuisanceFamily { Propensity, Response, Weight };
enum class Objective { WO, RAPlugin, IPWPlugin };

std::string to_string(NuisanceFamily family);
std::string to_string(Objective objective);

// Delta(H_j) = scale * tanh(w . features(H_j) + b) with (w, b) drawn from seed.
// Propensities move by r Delta pi (1 - pi), responses by r Delta and weights
// by the factor (1 + r Delta), so every perturbed value stays admissible.
struct PerturbationComponent {
    NuisanceFamily family = NuisanceFamily::Propensity;
    int time = 0;       // absolute index j of the perturbed function
    bool plan_b = false;
    double scale = 1.0;
    std::uint64_t seed = 0;
};

struct PerturbationDirection {
    std::string name;
    std::vector<PerturbationComponent> components;
};

// One direction per family and time index on plan a, one per pair of
// families (all indices, plan a), and one joint direction that moves every
// family at every index on both plans.
std::vector<PerturbationDirection> default_directions(const PlanPair& plans, std::uint64_t seed);

struct OrthogonalityOptions {
    int histories = 200;
    int quadrature_points = 32;
    std::vector<double> radii{0.2, 0.1, 0.05, 0.02, 0.01};
    double wo_min_slope = 1.8;
    double plugin_max_slope = 1.2;
    // |phi(r) - phi(0)| below this (relative to 1 + |phi(0)|) counts as zero.
    double noise_floor = 1e-11;
    std::uint64_t seed = 0;
};

// phi(r) = -2 E[rho (xi - g) dg] for WO, -2 E[(mu_a - mu_b - g) dg] for the
// RA plug-in and -2 E[(ipw - g) dg] for the IPW plug-in, with g = 0 and
// dg = 1, at oracle nuisances moved by r along each direction. Inner
// expectations over the future are exact (quadrature tree); the outer mean
// runs over sampled histories. Reports the log-log slope of |phi(r) - phi(0)|.
DiagnosticReport check_orthogonality(Objective objective, const DgpConfig& config, const PlanPair& plans,
                                     const std::vector<PerturbationDirection>& directions,
                                     const OrthogonalityOptions& options = {});

// --- horizon-zero reduction -----------------------------------------------------------

struct ReductionOptions {
    int histories = 50;
    int rollouts = 20000;
    double z = 4.0;
    double pass_share = 0.95;
    std::uint64_t seed = 0;
};

// At tau = 0 with complementary plans: omega^a omega^b = pi (1 - pi)
// pointwise; E[rho^{a,b} | H_t] = pi (1 - pi) under the default convention;
// rho^{a,b} = pi (1 - pi) and xi = gamma pointwise under rho_tau0_collapse.
DiagnosticReport check_r_learner_reduction(const DgpConfig& config, const PlanPair& plans,
                                           const ReductionOptions& options = {});

}  // namespace wolearn
