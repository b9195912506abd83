#include "doctest.h"

#include <random>
#include <sstream>

#include "wolearn/error.hpp"
#include "wolearn/pseudo.hpp"

using namespace wolearn;

namespace {

// Trajectory of length T with the given treatments and outcomes; X = 0.
Trajectory traj(std::vector<int> a, std::vector<double> y, std::int64_t id = 0) {
    const auto T = static_cast<Eigen::Index>(a.size());
    return Trajectory(id, RowMatrix::Zero(T, 1), std::move(a), std::move(y));
}

EvaluatedNuisances values(int anchor, std::vector<double> pi, std::vector<double> mu, std::vector<double> w,
                          std::vector<double> next) {
    EvaluatedNuisances v;
    v.anchor = anchor;
    v.horizon = static_cast<int>(pi.size()) - 1;
    v.propensity = std::move(pi);
    v.response = std::move(mu);
    v.weight = std::move(w);
    v.next_weight = std::move(next);
    return v;
}

EvaluatedNuisances random_values(std::mt19937_64& rng, int anchor, int horizon) {
    std::uniform_real_distribution<double> p(0.05, 0.95), m(-1.0, 1.0);
    const auto k = static_cast<std::size_t>(horizon + 1);
    std::vector<double> pi(k), mu(k), w(k), next(k);
    for (std::size_t i = 0; i < k; ++i) {
        pi[i] = p(rng);
        mu[i] = m(rng);
        next[i] = i + 1 == k ? 1.0 : p(rng);
        w[i] = pi[i] * next[i];
    }
    return values(anchor, pi, mu, w, next);
}

}  // namespace

TEST_CASE("dr pseudo-outcome hand examples") {
    const InterventionPlan plan(1, {1});
    auto tr = traj({0, 1}, {0.0, 3.0});
    auto v = values(1, {0.5}, {1.0}, {0.5}, {1.0});
    CHECK(dr_pseudo_capo(v, tr, plan) == doctest::Approx(5.0));

    auto off = traj({0, 0}, {0.0, 3.0});
    CHECK(dr_pseudo_capo(v, off, plan) == doctest::Approx(1.0));

    const InterventionPlan two(1, {1, 1});
    auto tr2 = traj({0, 1, 1}, {0.0, 0.0, 2.5});
    auto ones = values(1, {1.0, 1.0}, {0.3, -0.7}, {1.0, 1.0}, {1.0, 1.0});
    CHECK(dr_pseudo_capo(ones, tr2, two) == doctest::Approx(2.5));
}

TEST_CASE("dr cate is antisymmetric") {
    std::mt19937_64 rng(3);
    const InterventionPlan a(2, {1, 0}), b(2, {0, 1});
    auto tr = traj({1, 0, 0, 1}, {0.1, 0.2, 0.3, 0.7});
    auto va = random_values(rng, 2, 1), vb = random_values(rng, 2, 1);
    CHECK(dr_pseudo_cate(va, va, tr, a, a) == 0.0);
    CHECK(dr_pseudo_cate(va, vb, tr, a, b) == doctest::Approx(-dr_pseudo_cate(vb, va, tr, b, a)));
}

TEST_CASE("dr cate at horizon zero is the static AIPW form") {
    // pi = P(A = 1 | H) = 0.3, mu1 = 0.8, mu0 = -0.2, unit treated with Y = 1.
    const InterventionPlan a(1, {1}), b(1, {0});
    auto tr = traj({0, 1}, {0.0, 1.0});
    auto va = values(1, {0.3}, {0.8}, {0.3}, {1.0});
    auto vb = values(1, {0.7}, {-0.2}, {0.7}, {1.0});
    const double aipw = 0.8 - (-0.2) + (1.0 / 0.3) * (1.0 - 0.8) - 0.0;
    CHECK(dr_pseudo_cate(va, vb, tr, a, b) == doctest::Approx(aipw));
}

TEST_CASE("dr extreme weights are flagged") {
    const InterventionPlan plan(1, {1, 1});
    auto tr = traj({0, 1, 1}, {0.0, 0.0, 1.0});
    auto v = values(1, {1e-4, 1e-4}, {0.0, 0.0}, {1e-8, 1e-4}, {1e-4, 1.0});
    bool extreme = false;
    const double g = dr_pseudo_capo(v, tr, plan, &extreme, 1e6);
    CHECK(extreme);
    CHECK(std::isfinite(g));
    CHECK(dr_pseudo_capo(v, tr, plan, &extreme, 1e9) == g);
    CHECK_FALSE(extreme);
}

TEST_CASE("rho conventions") {
    const InterventionPlan plan(1, {1});
    auto on = traj({0, 1}, {0.0, 0.0});
    auto off = traj({0, 0}, {0.0, 0.0});
    auto v = values(1, {0.3}, {0.0}, {0.3}, {1.0});
    CHECK(rho_capo(v, on, plan) == doctest::Approx(1.0));
    CHECK(rho_capo(v, off, plan) == doctest::Approx(0.0));
    PseudoOptions collapse;
    collapse.rho_tau0_collapse = true;
    CHECK(rho_capo(v, on, plan, collapse) == 0.3);
    CHECK(rho_capo(v, off, plan, collapse) == 0.3);

    const InterventionPlan two(1, {1, 0});
    auto follows_plan = traj({0, 1, 0}, {0.0, 0.0, 0.0});
    auto ones = values(1, {1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0});
    CHECK(rho_capo(ones, follows_plan, two) == doctest::Approx(1.0));
}

TEST_CASE("rho hand expansion at horizon one") {
    const InterventionPlan plan(1, {1, 1});
    auto tr = traj({0, 1, 0}, {0.0, 0.0, 0.0});
    // pi_1 = 0.4, pi_2 = 0.6, W_1 = 0.5.
    auto v = values(1, {0.4, 0.6}, {0.0, 0.0}, {0.2, 0.6}, {0.5, 1.0});
    const double expected = 0.4 * 0.6 + (1.0 - 0.4) * 0.5 + (0.0 - 0.6) * 1.0 * 0.4;
    CHECK(rho_capo(v, tr, plan) == doctest::Approx(expected));
}

TEST_CASE("rho cate is symmetric and degenerate case gives one") {
    std::mt19937_64 rng(11);
    const InterventionPlan a(1, {1, 1}), b(1, {0, 0});
    auto tr = traj({1, 1, 0}, {0.0, 0.0, 0.0});
    for (int rep = 0; rep < 20; ++rep) {
        auto va = random_values(rng, 1, 1), vb = random_values(rng, 1, 1);
        CHECK(rho_cate(va, vb, tr, a, b) == doctest::Approx(rho_cate(vb, va, tr, b, a)));
    }
    auto ones = values(1, {1.0, 1.0}, {0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0});
    auto on = traj({0, 1, 1}, {0.0, 0.0, 0.0});
    CHECK(rho_cate(ones, ones, on, a, a) == doctest::Approx(1.0));
}

TEST_CASE("xi substitution, zero residual and guard") {
    CHECK(xi_from(0.0, 0.2, 0.4, 1.0).xi == doctest::Approx(0.5));
    CHECK(xi_from(0.7, 0.3, -0.01, 0.7).xi == doctest::Approx(0.7));

    auto g = xi_from(0.0, 0.5, 1e-9, 1.0);
    CHECK(g.guarded);
    CHECK(g.rho == 1e-6);
    CHECK(g.xi == doctest::Approx(0.5e6));
    auto n = xi_from(0.0, 0.5, -1e-9, 1.0);
    CHECK(n.guarded);
    CHECK(n.rho == -1e-6);
    auto z = xi_from(0.0, 0.5, -0.0, 1.0);
    CHECK(z.rho == -1e-6);
    CHECK_FALSE(xi_from(0.0, 0.5, 1e-3, 1.0).guarded);

    PseudoOptions clamp;
    clamp.clamp_rho = true;
    auto c = xi_from(0.0, 0.5, -0.3, 1.0, clamp);
    CHECK(c.rho == 0.0);
    CHECK(c.guarded);
}

TEST_CASE("xi product form and expanded risk identity") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-2.0, 2.0), pos(0.01, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        const double mu = u(rng), omega = pos(rng), gamma = u(rng), g = u(rng);
        double rho = u(rng);
        if (std::abs(rho) < 1e-3) rho = 0.5;
        const auto x = xi_from(mu, omega, rho, gamma);
        REQUIRE_FALSE(x.guarded);
        CHECK(rho * x.xi == doctest::Approx(rho * mu + omega * (gamma - mu)).epsilon(1e-10));
        const double direct = rho * (x.xi - g) * (x.xi - g);
        const double expanded = rho * (mu - g) * (mu - g) + 2.0 * omega * (gamma - mu) * (mu - g) +
                                omega * omega / rho * (gamma - mu) * (gamma - mu);
        CHECK(std::abs(direct - expanded) <= 1e-10 * std::max(1.0, std::abs(direct)));
    }
}

TEST_CASE("collapse mode at horizon zero makes xi equal gamma") {
    std::mt19937_64 rng(8);
    PseudoOptions collapse;
    collapse.rho_tau0_collapse = true;
    const InterventionPlan a(2, {1}), b(2, {0});
    for (int rep = 0; rep < 20; ++rep) {
        const double p = std::uniform_real_distribution<double>(0.05, 0.95)(rng);
        auto va = values(2, {p}, {0.4}, {p}, {1.0});
        auto vb = values(2, {1.0 - p}, {-0.1}, {1.0 - p}, {1.0});
        auto tr = traj({0, 0, rep % 2}, {0.0, 0.0, 0.9});
        CHECK(rho_cate(va, vb, tr, a, b, collapse) == doctest::Approx(p * (1.0 - p)));
        auto x = xi_cate(va, vb, tr, a, b, collapse);
        CHECK(x.xi == doctest::Approx(dr_pseudo_cate(va, vb, tr, a, b)));
    }
}

TEST_CASE("ipw pseudo-outcome") {
    const InterventionPlan a(1, {1, 1}), b(1, {0, 0});
    auto v = values(1, {0.5, 0.5}, {0.0, 0.0}, {0.25, 0.5}, {0.5, 1.0});
    auto follows_a = traj({0, 1, 1}, {0.0, 0.0, 2.0});
    CHECK(ipw_pseudo_cate(v, v, follows_a, a, b) == doctest::Approx(8.0));
    auto neither = traj({0, 1, 0}, {0.0, 0.0, 2.0});
    CHECK(ipw_pseudo_cate(v, v, neither, a, b) == 0.0);
}

TEST_CASE("pseudo-outcome functions are pure") {
    std::mt19937_64 rng(21);
    const InterventionPlan a(1, {1, 0, 1}), b(1, {0, 0, 0});
    auto tr = traj({1, 1, 0, 1}, {0.2, -0.1, 0.4, 1.3});
    auto va = random_values(rng, 1, 2), vb = random_values(rng, 1, 2);
    auto r1 = cate_row(va, vb, tr, a, b);
    auto r2 = cate_row(va, vb, tr, a, b);
    CHECK(r1.xi == r2.xi);
    CHECK(r1.rho == r2.rho);
    CHECK(r1.gamma == r2.gamma);
    CHECK(r1.omega_t == doctest::Approx(va.omega_anchor() * vb.omega_anchor()));
    CHECK(r1.mu_t == doctest::Approx(va.mu_anchor() - vb.mu_anchor()));
}

TEST_CASE("shape checks") {
    const InterventionPlan plan(1, {1, 1});
    auto tr = traj({0, 1, 1}, {0.0, 0.0, 0.0});
    auto short_values = values(1, {0.5}, {0.0}, {0.5}, {1.0});
    CHECK_THROWS_AS(dr_pseudo_capo(short_values, tr, plan), ShapeError);
    auto v = values(1, {0.5, 0.5}, {0.0, 0.0}, {0.25, 0.5}, {0.5, 1.0});
    const InterventionPlan late(2, {1, 1});
    auto shifted = values(2, {0.5, 0.5}, {0.0, 0.0}, {0.25, 0.5}, {0.5, 1.0});
    CHECK_THROWS_AS(rho_capo(shifted, tr, late), HorizonError);
    CHECK_THROWS_AS(rho_capo(v, tr, late), ShapeError);
}

TEST_CASE("pseudo csv columns") {
    PseudoOutcomeRow r;
    r.id = 7;
    r.gamma = 1.5;
    r.rho = -0.25;
    r.xi = 2.0;
    r.omega_t = 0.125;
    r.guard_flag = true;
    std::ostringstream out;
    write_pseudo_csv({r}, out);
    CHECK(out.str() == "id,gamma,rho,xi,omega_t,guard_flag\n7,1.5,-0.25,2,0.125,1\n");
}
