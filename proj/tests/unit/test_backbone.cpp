#include "doctest.h"

#include <cmath>
#include <cstdio>

#include "wolearn/backbone.hpp"
#include "wolearn/dgp.hpp"
#include "wolearn/error.hpp"
#include "wolearn/rng.hpp"

using namespace wolearn;

namespace {

RowMatrix random_features(int n, int d, std::uint64_t seed) {
    RandomStream rng(seed);
    RowMatrix x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = rng.normal();
    return x;
}

Hyperparameters quick(int epochs = 20) {
    Hyperparameters h;
    h.epochs = epochs;
    h.hidden_sizes = {16, 8};
    return h;
}

}  // namespace

TEST_CASE("hyperparameter validation and json") {
    Hyperparameters h;
    CHECK(h.learning_rate == 1e-3);
    CHECK(h.epochs == 100);
    CHECK(h.batch_size == 64);
    CHECK(h.hidden_sizes == std::vector<int>{64, 32});
    h.epochs = 0;
    CHECK_THROWS_AS(h.validate(), ParameterError);
    h.epochs = 3;
    h.optimizer = Optimizer::Sgd;
    auto back = hyperparameters_from_json(to_json(h));
    CHECK(back.epochs == 3);
    CHECK(back.optimizer == Optimizer::Sgd);
}

TEST_CASE("constant target gives a constant predictor") {
    auto x = random_features(300, 4, 1);
    Eigen::VectorXd y = Eigen::VectorXd::Constant(300, 1.7);
    auto m = fit_regressor(x, y, {}, quick());
    auto p = m.predict(random_features(50, 4, 2));
    CHECK((p.array() - 1.7).abs().maxCoeff() <= 1e-3);
}

TEST_CASE("single supported sample is interpolated") {
    auto x = random_features(200, 3, 3);
    RandomStream rng(4);
    Eigen::VectorXd y(200);
    for (int i = 0; i < 200; ++i) y(i) = rng.normal();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(200);
    w(17) = 1.0;
    auto m = fit_regressor(x, y, w, quick());
    RowMatrix row = x.row(17);
    CHECK(std::abs(m.predict(row)(0) - y(17)) < 1e-3);
}

TEST_CASE("rescaling weights leaves the normalized loss sequence unchanged") {
    auto x = random_features(256, 3, 5);
    RandomStream rng(6);
    Eigen::VectorXd y(256), w(256);
    for (int i = 0; i < 256; ++i) {
        y(i) = x(i, 0) * x(i, 1) + 0.1 * rng.normal();
        w(i) = rng.uniform() - 0.2;  // some negative weights
    }
    auto h = quick(15);
    h.validation_fraction = 0.0;
    auto a = fit_regressor(x, y, w, h);
    auto b = fit_regressor(x, y, Eigen::VectorXd(10.0 * w), h);
    REQUIRE(a.training_log().size() == b.training_log().size());
    for (std::size_t e = 0; e < a.training_log().size(); ++e) {
        CHECK(a.training_log()[e] == doctest::Approx(b.training_log()[e]).epsilon(1e-8));
    }
}

TEST_CASE("input errors") {
    auto x = random_features(20, 2, 7);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(20);
    RowMatrix bad = x;
    bad(3, 1) = std::nan("");
    CHECK_THROWS_AS(fit_regressor(bad, y, {}, quick(2)), DataError);
    CHECK_THROWS_AS(fit_regressor(x, y, Eigen::VectorXd::Zero(20), quick(2)), DegenerateWeightsError);
    CHECK_THROWS_AS(fit_regressor(x, Eigen::VectorXd::Zero(19), {}, quick(2)), ShapeError);
    auto m = fit_regressor(x, y, {}, quick(2));
    CHECK_THROWS_AS(m.predict(random_features(3, 5, 1)), ShapeError);
    CHECK_THROWS_AS(fit_classifier(x, Eigen::VectorXd::Constant(20, 0.5), quick(2)), DataError);
}

TEST_CASE("classifier without signal predicts the base rate") {
    auto x = random_features(2000, 3, 8);
    RandomStream rng(9);
    Eigen::VectorXd lab(2000);
    for (int i = 0; i < 2000; ++i) lab(i) = rng.bernoulli(0.5) ? 1.0 : 0.0;
    auto m = fit_classifier(x, lab, Hyperparameters{});
    auto p = m.predict(random_features(200, 3, 10));
    CHECK((p.array() - 0.5).abs().mean() <= 0.05);
    CHECK(p.minCoeff() > 0.0);
    CHECK(p.maxCoeff() < 1.0);
}

TEST_CASE("single-class labels saturate toward the rate") {
    auto x = random_features(100, 2, 11);
    auto m = fit_classifier(x, Eigen::VectorXd::Ones(100), quick(5));
    auto p = m.predict(x);
    CHECK(p.minCoeff() > 0.99);
    CHECK(p.maxCoeff() < 1.0);
}

TEST_CASE("separable blobs are classified confidently") {
    RandomStream rng(12);
    RowMatrix x(400, 2);
    Eigen::VectorXd lab(400);
    for (int i = 0; i < 400; ++i) {
        const int c = i % 2;
        x(i, 0) = (c ? 3.0 : -3.0) + 0.5 * rng.normal();
        x(i, 1) = 0.5 * rng.normal();
        lab(i) = c;
    }
    auto m = fit_classifier(x, lab, Hyperparameters{});
    auto p = m.predict(x);
    double worst = 1.0;
    for (int i = 0; i < 400; ++i)
        if (lab(i) == 1.0) worst = std::min(worst, p(i));
    CHECK(worst >= 0.95);
}

TEST_CASE("propensity fit tracks the generator") {
    auto c = DgpConfig::defaults(DgpKind::Gamma);
    c.gamma = 2.0;
    auto data = simulate(c, 21);
    const int t = 3;
    auto x = featurize_rows(data.trajectories(), t, HistoryWindow::full());
    Eigen::VectorXd lab(static_cast<Eigen::Index>(data.size())), truth(lab.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        lab(static_cast<Eigen::Index>(i)) = data[i].a(t);
        truth(static_cast<Eigen::Index>(i)) = treatment_probability(c, data[i], t);
    }
    auto m = fit_classifier(x, lab, Hyperparameters{});
    const double rmse = std::sqrt((m.predict(x) - truth).squaredNorm() / static_cast<double>(truth.size()));
    CHECK(rmse <= 0.05);
    CHECK(m.training_log().back() <= m.training_log().front());
}

TEST_CASE("prediction is pure and row independent") {
    auto x = random_features(300, 4, 13);
    Eigen::VectorXd y = x.col(0).array().sin();
    auto m = fit_regressor(x, y, {}, quick(5));
    auto a = m.predict(x);
    auto b = m.predict(x);
    CHECK(a == b);
    for (int i : {0, 99, 299}) {
        RowMatrix row = x.row(i);
        CHECK(m.predict(row)(0) == doctest::Approx(a(i)).epsilon(1e-14));
    }
    Model zero(Task::Regression, 4, quick());
    zero.set_flat_parameters(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(zero.parameter_count())));
    CHECK(zero.predict(x).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("seeded training is deterministic") {
    auto x = random_features(200, 3, 14);
    Eigen::VectorXd y = x.col(1);
    auto h = quick(5);
    h.seed = 42;
    auto a = fit_regressor(x, y, {}, h);
    auto b = fit_regressor(x, y, {}, h);
    CHECK(a.flat_parameters() == b.flat_parameters());
    h.seed = 43;
    auto c = fit_regressor(x, y, {}, h);
    CHECK_FALSE(a.flat_parameters() == c.flat_parameters());
}

TEST_CASE("gradient check") {
    auto x = random_features(32, 5, 15);
    RandomStream rng(16);
    Eigen::VectorXd y(32), w(32), lab(32);
    for (int i = 0; i < 32; ++i) {
        y(i) = rng.normal();
        w(i) = rng.uniform() * 2.0 - 0.5;
        lab(i) = rng.bernoulli(0.4) ? 1.0 : 0.0;
    }
    auto randomize = [&](Model& m) {
        Eigen::VectorXd p(static_cast<Eigen::Index>(m.parameter_count()));
        for (Eigen::Index k = 0; k < p.size(); ++k) p(k) = 0.3 * rng.normal();
        m.set_flat_parameters(p);
    };
    SUBCASE("linear model, squared loss") {
        Hyperparameters h;
        h.hidden_sizes = {};
        Model m(Task::Regression, 5, h);
        randomize(m);
        CHECK(gradient_check(m, {x, y, w}, 1e-5) <= 1e-7);
    }
    SUBCASE("reference mlp") {
        Model m(Task::Regression, 5, Hyperparameters{});
        randomize(m);
        CHECK(gradient_check(m, {x, y, w}, 1e-5) <= 1e-4);
        Model c(Task::Classification, 5, Hyperparameters{});
        randomize(c);
        CHECK(gradient_check(c, {x, lab, {}}, 1e-5) <= 1e-4);
    }
    SUBCASE("zero-weight batch") {
        Model m(Task::Regression, 5, Hyperparameters{});
        randomize(m);
        Eigen::VectorXd grad;
        m.loss_and_gradient(x, y, Eigen::VectorXd::Zero(32), 32.0, grad);
        CHECK(grad.cwiseAbs().maxCoeff() == 0.0);
        CHECK(gradient_check(m, {x, y, Eigen::VectorXd::Zero(32)}, 1e-5) == 0.0);
    }
    CHECK_THROWS_AS(gradient_check(Model(Task::Regression, 5, Hyperparameters{}), {x, y, {}}, 1e-2), ParameterError);
}

TEST_CASE("checkpoint round trip") {
    auto x = random_features(100, 3, 17);
    Eigen::VectorXd lab = (x.col(0).array() > 0).cast<double>();
    auto m = fit_classifier(x, lab, quick(5));
    const std::string path = "backbone_roundtrip.json";
    m.save(path);
    auto back = Model::load(path);
    std::remove(path.c_str());
    CHECK(back.task() == Task::Classification);
    CHECK(back.predict(x) == m.predict(x));
    CHECK(back.training_log() == m.training_log());
    CHECK(back.hyperparameters().seed == m.hyperparameters().seed);
}
