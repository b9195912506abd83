#pragma once

#include <string>
#include <vector>

#include "wolearn/core.hpp"

namespace wolearn {

// Nuisance values for one trajectory and one plan, evaluated along its own
// history. Index i stands for time j = anchor + i, i = 0..horizon.
struct EvaluatedNuisances {
    int anchor = 0;
    int horizon = 0;
    std::vector<double> propensity;   // pi_j(H_j)
    std::vector<double> response;     // mu_j(H_j)
    std::vector<double> weight;       // omega_j(H_j)
    std::vector<double> next_weight;  // omega_{j+1}(H_j); 1 at the last index

    std::size_t steps() const { return propensity.size(); }
    double omega_anchor() const { return weight.front(); }
    double mu_anchor() const { return response.front(); }
};

enum class NuisanceKind { Fitted, Oracle };

// Anything that can produce the nuisance values a pseudo-outcome needs.
// Fitted and oracle sets are interchangeable behind this interface.
class NuisanceProvider {
public:
    virtual ~NuisanceProvider() = default;

    virtual const InterventionPlan& plan() const = 0;
    virtual NuisanceKind kind() const = 0;
    virtual EvaluatedNuisances evaluate(const Trajectory& trajectory, int anchor) const = 0;
};

}  // namespace wolearn
