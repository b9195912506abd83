#include "wolearn/pseudo.hpp"

#include <cmath>
#include <ostream>

#include "wolearn/error.hpp"

namespace wolearn {

namespace {

void check_aligned(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan) {
    if (nuis.anchor != plan.start() || nuis.horizon != plan.horizon() ||
        nuis.steps() != static_cast<std::size_t>(plan.horizon() + 1) || nuis.response.size() != nuis.steps() ||
        nuis.weight.size() != nuis.steps() || nuis.next_weight.size() != nuis.steps()) {
        throw ShapeError("nuisance values do not match the plan");
    }
    if (plan.end() >= tr.length()) throw HorizonError("plan does not fit the trajectory");
}

}  // namespace

double dr_pseudo_capo(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                      bool* extreme, double extreme_weight) {
    check_aligned(nuis, tr, plan);
    const int t = plan.start();
    double ratio = 1.0;  // prod_{k<j} 1{A_k = a_k} / pi_k
    double correction = 0.0;
    bool flagged = false;
    for (int j = t; j <= plan.end(); ++j) {
        const auto i = static_cast<std::size_t>(j - t);
        const double step = follows(tr, plan, j) ? 1.0 / nuis.propensity[i] : 0.0;
        correction += nuis.response[i] * (1.0 - step) * ratio;
        ratio *= step;
        if (!std::isfinite(ratio) || std::abs(ratio) > extreme_weight) flagged = true;
    }
    if (extreme) *extreme = flagged;
    return ratio * tr.y(plan.end()) + correction;
}

double dr_pseudo_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                      const InterventionPlan& plan_a, const InterventionPlan& plan_b, bool* extreme,
                      double extreme_weight) {
    bool ea = false, eb = false;
    const double v = dr_pseudo_capo(nuis_a, tr, plan_a, &ea, extreme_weight) -
                     dr_pseudo_capo(nuis_b, tr, plan_b, &eb, extreme_weight);
    if (extreme) *extreme = ea || eb;
    return v;
}

double rho_capo(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                const PseudoOptions& options) {
    check_aligned(nuis, tr, plan);
    if (options.rho_tau0_collapse && plan.horizon() == 0) return nuis.propensity[0];
    const int t = plan.start();
    double prefix = 1.0;  // prod_{t<=k<j} pi_k
    double sum = 0.0;
    for (int j = t; j <= plan.end(); ++j) {
        const auto i = static_cast<std::size_t>(j - t);
        const double indicator = follows(tr, plan, j) ? 1.0 : 0.0;
        sum += (indicator - nuis.propensity[i]) * nuis.next_weight[i] * prefix;
        prefix *= nuis.propensity[i];
    }
    return prefix + sum;
}

double rho_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                const InterventionPlan& plan_a, const InterventionPlan& plan_b, const PseudoOptions& options) {
    const double ra = rho_capo(nuis_a, tr, plan_a, options);
    const double rb = rho_capo(nuis_b, tr, plan_b, options);
    const double wa = nuis_a.omega_anchor();
    const double wb = nuis_b.omega_anchor();
    return ra * wb + rb * wa - wa * wb;
}

XiValue xi_from(double mu, double omega, double rho, double gamma, const PseudoOptions& options) {
    XiValue out;
    double r = options.clamp_rho ? std::max(rho, 0.0) : rho;
    if (std::abs(r) < options.rho_guard) {
        r = std::signbit(r) ? -options.rho_guard : options.rho_guard;
        out.guarded = true;
    }
    out.rho = r;
    out.xi = mu + (omega / r) * (gamma - mu);
    if (options.clamp_rho && rho <= 0.0) out.rho = 0.0;
    return out;
}

XiValue xi_capo(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                const PseudoOptions& options) {
    const double gamma = dr_pseudo_capo(nuis, tr, plan, nullptr, options.extreme_weight);
    return xi_from(nuis.mu_anchor(), nuis.omega_anchor(), rho_capo(nuis, tr, plan, options), gamma, options);
}

XiValue xi_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                const InterventionPlan& plan_a, const InterventionPlan& plan_b, const PseudoOptions& options) {
    const double gamma = dr_pseudo_cate(nuis_a, nuis_b, tr, plan_a, plan_b, nullptr, options.extreme_weight);
    return xi_from(nuis_a.mu_anchor() - nuis_b.mu_anchor(), nuis_a.omega_anchor() * nuis_b.omega_anchor(),
                   rho_cate(nuis_a, nuis_b, tr, plan_a, plan_b, options), gamma, options);
}

double ipw_pseudo_cate(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                       const InterventionPlan& plan_a, const InterventionPlan& plan_b, bool* extreme,
                       double extreme_weight) {
    check_aligned(nuis_a, tr, plan_a);
    check_aligned(nuis_b, tr, plan_b);
    auto ratio = [&](const EvaluatedNuisances& nuis, const InterventionPlan& plan) {
        double r = 1.0;
        for (int j = plan.start(); j <= plan.end(); ++j) {
            r *= follows(tr, plan, j) ? 1.0 / nuis.propensity[static_cast<std::size_t>(j - plan.start())] : 0.0;
        }
        return r;
    };
    const double ra = ratio(nuis_a, plan_a);
    const double rb = ratio(nuis_b, plan_b);
    if (extreme) {
        *extreme = !std::isfinite(ra) || !std::isfinite(rb) || std::abs(ra) > extreme_weight ||
                   std::abs(rb) > extreme_weight;
    }
    return (ra - rb) * tr.y(plan_a.end());
}

PseudoOutcomeRow capo_row(const EvaluatedNuisances& nuis, const Trajectory& tr, const InterventionPlan& plan,
                          const PseudoOptions& options) {
    PseudoOutcomeRow row;
    row.id = tr.id();
    row.anchor = plan.start();
    row.horizon = plan.horizon();
    row.gamma = dr_pseudo_capo(nuis, tr, plan, &row.extreme_flag, options.extreme_weight);
    row.rho = rho_capo(nuis, tr, plan, options);
    row.omega_t = nuis.omega_anchor();
    row.mu_t = nuis.mu_anchor();
    const auto xi = xi_from(row.mu_t, row.omega_t, row.rho, row.gamma, options);
    row.xi = xi.xi;
    row.weight = xi.rho;
    row.guard_flag = xi.guarded;
    return row;
}

PseudoOutcomeRow cate_row(const EvaluatedNuisances& nuis_a, const EvaluatedNuisances& nuis_b, const Trajectory& tr,
                          const InterventionPlan& plan_a, const InterventionPlan& plan_b,
                          const PseudoOptions& options) {
    PseudoOutcomeRow row;
    row.id = tr.id();
    row.anchor = plan_a.start();
    row.horizon = plan_a.horizon();
    row.gamma = dr_pseudo_cate(nuis_a, nuis_b, tr, plan_a, plan_b, &row.extreme_flag, options.extreme_weight);
    row.rho = rho_cate(nuis_a, nuis_b, tr, plan_a, plan_b, options);
    row.omega_t = nuis_a.omega_anchor() * nuis_b.omega_anchor();
    row.mu_t = nuis_a.mu_anchor() - nuis_b.mu_anchor();
    const auto xi = xi_from(row.mu_t, row.omega_t, row.rho, row.gamma, options);
    row.xi = xi.xi;
    row.weight = xi.rho;
    row.guard_flag = xi.guarded;
    return row;
}

void write_pseudo_csv(const std::vector<PseudoOutcomeRow>& rows, std::ostream& out) {
    out << "id,gamma,rho,xi,omega_t,guard_flag\n";
    const auto old = out.precision(17);
    for (const auto& r : rows) {
        out << r.id << ',' << r.gamma << ',' << r.rho << ',' << r.xi << ',' << r.omega_t << ','
            << (r.guard_flag ? 1 : 0) << '\n';
    }
    out.precision(old);
}

}  // namespace wolearn
