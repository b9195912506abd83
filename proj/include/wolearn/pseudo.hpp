#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "wolearn/core.hpp"
#include "wolearn/nuisance_values.hpp"

namespace wolearn {

struct PseudoOptions {
    double rho_guard = 1e-6;
    // At tau = 0 replace rho^a by its conditional mean pi_t.
    bool rho_tau0_collapse = false;
    // Clamp negative rho to zero (ablation only).
    bool clamp_rho = false;
    // Inverse-propensity products above this are flagged as extreme.
    double extreme_weight = 1e6;
};

// Does the trajectory follow the plan at time j?
inline bool follows(const Trajectory& tr, const InterventionPlan& plan, int j) { return tr.a(j) == plan.at(j); }

// DR pseudo-outcome gamma^a. `extreme` (optional) is set when the
// inverse-propensity product exceeds the threshold or overflows.
double dr_pseudo_capo(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                      bool* extreme = nullptr, double extreme_weight = 1e6);
double dr_pseudo_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                      const InterventionPlan& plan_a, const InterventionPlan& plan_b, bool* extreme = nullptr,
                      double extreme_weight = 1e6);

// rho^a = prod pi_j + sum_j (1{A_j = a_j} - pi_j) omega_{j+1}(H_j) prod_{t<=k<j} pi_k.
double rho_capo(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                const PseudoOptions& options = {});
// rho^{a,b} = rho^a omega^b + rho^b omega^a - omega^a omega^b.
double rho_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                const InterventionPlan& plan_a, const InterventionPlan& plan_b, const PseudoOptions& options = {});

struct XiValue {
    double xi = 0.0;
    double rho = 0.0;  // rho after clamping and guarding; the regression weight
    bool guarded = false;
};

// xi = mu + (omega / rho)(gamma - mu) with the sign-preserving guard on rho.
XiValue xi_from(double mu, double omega, double rho, double gamma, const PseudoOptions& options = {});
XiValue xi_capo(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                const PseudoOptions& options = {});
XiValue xi_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                const InterventionPlan& plan_a, const InterventionPlan& plan_b, const PseudoOptions& options = {});

// [prod 1{A_j = a_j}/pi^a_j - prod 1{A_j = b_j}/pi^b_j] * Y_{t+tau}.
double ipw_pseudo_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                       const InterventionPlan& plan_a, const InterventionPlan& plan_b, bool* extreme = nullptr,
                       double extreme_weight = 1e6);

struct PseudoOutcomeRow {
    std::int64_t id = 0;
    int anchor = 0;
    int horizon = 0;
    double gamma = 0.0;
    double rho = 0.0;      // raw rho before clamping or guarding
    double weight = 0.0;   // rho actually used as the regression weight
    double xi = 0.0;
    double omega_t = 0.0;
    double mu_t = 0.0;
    bool guard_flag = false;
    bool extreme_flag = false;
};

PseudoOutcomeRow capo_row(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                          const PseudoOptions& options = {});
PseudoOutcomeRow cate_row(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                          const InterventionPlan& plan_a, const InterventionPlan& plan_b,
                          const PseudoOptions& options = {});

// CSV with columns id,gamma,rho,xi,omega_t,guard_flag.
void write_pseudo_csv(const std::vector<PseudoOutcomeRow>& rows, std::ostream& out);

}  // namespace wolearn
