#include "doctest.h"

#include <filesystem>

#include "wolearn/dgp.hpp"
#include "wolearn/error.hpp"
#include "wolearn/nuisance.hpp"

using namespace wolearn;

namespace {

DgpConfig gamma_config(double gamma, int horizon = 1, int n = 4000) {
    auto c = DgpConfig::defaults(DgpKind::Gamma);
    c.gamma = gamma;
    c.horizon = horizon;
    c.n_train = n;
    return c;
}

double mean_abs(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += std::abs(x);
    return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("propensities without confounding are one half") {
    auto c = gamma_config(0.0);
    auto data = simulate(c, 1);
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 1, 1), NuisanceOptions{});
    std::vector<double> dev;
    for (const auto& v : set.evaluate_all(data.trajectories(), t)) {
        for (double p : v.propensity) dev.push_back(p - 0.5);
    }
    CHECK(mean_abs(dev) <= 0.05);
}

TEST_CASE("complementary arms share one classifier") {
    auto c = gamma_config(2.0, 1, 600);
    auto data = simulate(c, 2);
    const int t = c.evaluation_anchor();
    auto pair = fit_nuisance_pair(data, InterventionPlan::constant(t, 1, 1), InterventionPlan::constant(t, 1, 0),
                                  NuisanceOptions{});
    for (std::size_t i = 0; i < 50; ++i) {
        auto va = pair.a->evaluate(data[i], t);
        auto vb = pair.b->evaluate(data[i], t);
        for (std::size_t k = 0; k < va.steps(); ++k) CHECK(va.propensity[k] + vb.propensity[k] == doctest::Approx(1.0));
    }
}

TEST_CASE("fitted propensities track the closed form") {
    auto c = gamma_config(3.5);
    auto data = simulate(c, 3);
    auto test = simulate_test(c, 3);
    const int t = c.evaluation_anchor();
    const auto plan = InterventionPlan::constant(t, 1, 1);
    auto set = FittedNuisanceSet::fit(data, plan, NuisanceOptions{});
    OracleNuisanceSet oracle(c, plan, OracleMethod::Quadrature, 100, 0);
    std::vector<double> dev;
    for (const auto& tr : test.trajectories()) {
        auto v = set.evaluate(tr, t);
        for (int j = t; j <= plan.end(); ++j) {
            dev.push_back(v.propensity[static_cast<std::size_t>(j - t)] - oracle.propensity(tr, j));
        }
    }
    CHECK(mean_abs(dev) <= 0.05);
}

TEST_CASE("constant outcome gives a constant response") {
    auto c = gamma_config(1.0, 0, 400);
    auto raw = simulate(c, 4);
    std::vector<Trajectory> rows;
    for (const auto& tr : raw.trajectories()) {
        std::vector<int> a(tr.treatments().begin(), tr.treatments().end());
        rows.emplace_back(tr.id(), tr.covariates(), a, std::vector<double>(a.size(), 1.7));
    }
    Dataset data(std::move(rows), raw.meta());
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 0, 1), NuisanceOptions{});
    for (std::size_t i = 0; i < 50; ++i) CHECK(set.evaluate(data[i], t).response[0] == doctest::Approx(1.7).epsilon(1e-3));
}

TEST_CASE("response at horizon zero tracks the oracle") {
    auto c = gamma_config(1.0, 0);
    auto data = simulate(c, 5);
    auto test = simulate_test(c, 5);
    const int t = c.evaluation_anchor();
    const auto plan = InterventionPlan::constant(t, 0, 1);
    auto set = FittedNuisanceSet::fit(data, plan, NuisanceOptions{});
    double se = 0.0;
    for (const auto& tr : test.trajectories()) {
        const double x = tr.x(t, 0);
        const double truth = 0.5 * std::exp(-x * x) * (1.0 - 0.5);
        const double d = set.evaluate(tr, t).response[0] - truth;
        se += d * d;
    }
    CHECK(std::sqrt(se / static_cast<double>(test.size())) <= 0.05);
}

TEST_CASE("response recursion provenance") {
    auto c = gamma_config(1.0, 2, 400);
    auto data = simulate(c, 6);
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 2, 1), NuisanceOptions{});
    REQUIRE(set.provenance().size() == 3);
    CHECK(set.provenance()[0] == "response[" + std::to_string(t + 1) + "]");
    CHECK(set.provenance()[1] == "response[" + std::to_string(t + 2) + "]");
    CHECK(set.provenance()[2] == "outcome");
    CHECK(set.tail_weights().size() == 2);
}

TEST_CASE("weight at horizon zero equals the propensity") {
    auto c = gamma_config(2.0, 0, 400);
    auto data = simulate(c, 7);
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 0, 0), NuisanceOptions{});
    CHECK(set.tail_weights().empty());
    for (const auto& v : set.evaluate_all(data.trajectories(), t)) {
        CHECK(v.weight[0] == v.propensity[0]);
        CHECK(v.next_weight[0] == 1.0);
    }
}

TEST_CASE("constant propensities give a constant weight") {
    auto c = gamma_config(0.0, 2);
    auto data = simulate(c, 8);
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 2, 1), NuisanceOptions{});
    std::vector<double> dev;
    for (const auto& v : set.evaluate_all(data.trajectories(), t)) dev.push_back(v.omega_anchor() - 0.125);
    CHECK(mean_abs(dev) <= 0.02);
}

TEST_CASE("fitted weight tracks the oracle weight") {
    auto c = gamma_config(2.0, 1);
    auto data = simulate(c, 9);
    auto test = simulate_test(c, 9);
    const int t = c.evaluation_anchor();
    const auto plan = InterventionPlan::constant(t, 1, 1);
    auto set = FittedNuisanceSet::fit(data, plan, NuisanceOptions{});
    OracleNuisanceSet oracle(c, plan, OracleMethod::Quadrature, 100, 0);
    double se = 0.0;
    for (const auto& tr : test.trajectories()) {
        const double d = set.evaluate(tr, t).omega_anchor() - oracle.weight(tr, t, t).value;
        se += d * d;
    }
    CHECK(std::sqrt(se / static_cast<double>(test.size())) <= 0.05);
}

TEST_CASE("evaluated values respect floors and bounds") {
    auto c = gamma_config(6.5, 1, 600);
    auto data = simulate(c, 10);
    const int t = c.evaluation_anchor();
    NuisanceOptions o;
    o.propensity_floor = 0.01;
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 1, 1), o);
    auto all = set.evaluate_all(data.trajectories(), t);
    for (std::size_t i = 0; i < all.size(); ++i) {
        const auto& v = all[i];
        for (std::size_t k = 0; k < v.steps(); ++k) {
            CHECK(v.propensity[k] >= 0.01);
            CHECK(v.propensity[k] <= 0.99);
            CHECK(v.next_weight[k] >= 0.0);
            CHECK(v.next_weight[k] <= 1.0);
            CHECK(v.weight[k] > 0.0);
            CHECK(v.weight[k] <= 1.0);
        }
        if (i < 20) {
            auto single = set.evaluate(data[i], t);
            CHECK(single.response == v.response);
            CHECK(single.weight == v.weight);
        }
    }
}

TEST_CASE("empty subsample is a stage error") {
    auto c = gamma_config(1.0, 1, 50);
    auto raw = simulate(c, 11);
    const int t = c.evaluation_anchor();
    std::vector<Trajectory> rows;
    for (const auto& tr : raw.trajectories()) {
        std::vector<int> a(tr.treatments().begin(), tr.treatments().end());
        a[static_cast<std::size_t>(t + 1)] = 0;
        std::vector<double> y(tr.outcomes().begin(), tr.outcomes().end());
        rows.emplace_back(tr.id(), tr.covariates(), a, y);
    }
    Dataset data(std::move(rows), raw.meta());
    try {
        FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 1, 1), NuisanceOptions{});
        FAIL("expected a stage error");
    } catch (const StageError& e) {
        CHECK(e.stage() == t + 1);
        CHECK(e.plan_value() == 1);
    }
}

TEST_CASE("constant treatment column warns") {
    auto c = gamma_config(1.0, 0, 100);
    auto raw = simulate(c, 12);
    const int t = c.evaluation_anchor();
    std::vector<Trajectory> rows;
    for (const auto& tr : raw.trajectories()) {
        std::vector<int> a(tr.treatments().begin(), tr.treatments().end());
        a[static_cast<std::size_t>(t)] = 1;
        rows.emplace_back(tr.id(), tr.covariates(), a, std::vector<double>(tr.outcomes().begin(), tr.outcomes().end()));
    }
    Dataset data(std::move(rows), raw.meta());
    auto props = fit_propensity_models(data, t, t, NuisanceOptions{});
    CHECK(props.warnings().size() == 1);
}

TEST_CASE("split discipline assertion") {
    CHECK_NOTHROW(assert_disjoint({1, 3, 5}, {0, 2, 4, 6}));
    CHECK_THROWS_AS(assert_disjoint({1, 3, 5}, {2, 5}), SplitDisciplineError);
    auto c = gamma_config(1.0, 1, 100);
    auto data = simulate(c, 13);
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 1, 1), NuisanceOptions{});
    CHECK(set.training_ids() == data.ids());
    CHECK(set.training_hash() == hash_ids(data.ids()));
}

TEST_CASE("nuisance set persistence") {
    auto c = gamma_config(1.0, 1, 200);
    auto data = simulate(c, 14);
    const int t = c.evaluation_anchor();
    auto set = FittedNuisanceSet::fit(data, InterventionPlan::constant(t, 1, 0), NuisanceOptions{});
    const auto dir = std::filesystem::temp_directory_path() / "wolearn_nuisance_roundtrip";
    std::filesystem::remove_all(dir);
    set.save(dir.string());
    CHECK(std::filesystem::exists(dir / "manifest.json"));
    auto back = FittedNuisanceSet::load(dir.string());
    CHECK(back.plan() == set.plan());
    CHECK(back.training_hash() == set.training_hash());
    CHECK(back.provenance() == set.provenance());
    for (std::size_t i = 0; i < 20; ++i) {
        auto x = set.evaluate(data[i], t), y = back.evaluate(data[i], t);
        CHECK(x.propensity == y.propensity);
        CHECK(x.response == y.response);
        CHECK(x.weight == y.weight);
    }
    std::filesystem::remove_all(dir);
}
