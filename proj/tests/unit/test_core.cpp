#include "doctest.h"

#include <set>
#include <sstream>

#include "wolearn/core.hpp"
#include "wolearn/error.hpp"

using namespace wolearn;

namespace {

Trajectory make_traj(std::int64_t id, int T, int dx) {
    RowMatrix x(T, dx);
    std::vector<int> a(static_cast<std::size_t>(T));
    std::vector<double> y(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        for (int p = 0; p < dx; ++p) x(t, p) = 10.0 * t + p + 0.5;
        a[static_cast<std::size_t>(t)] = t % 2;
        y[static_cast<std::size_t>(t)] = -1.0 * t - 0.25;
    }
    return Trajectory(id, x, a, y);
}

Dataset make_data(int n, int T) {
    std::vector<Trajectory> rows;
    for (int i = 0; i < n; ++i) rows.push_back(make_traj(i, T, 2));
    return Dataset(std::move(rows), DatasetMeta{"toy", 3, {}});
}

}  // namespace

TEST_CASE("trajectory validation") {
    RowMatrix x = RowMatrix::Zero(3, 1);
    CHECK_THROWS_AS(Trajectory(0, x, {0, 1}, {0.0, 0.0, 0.0}), DataError);
    CHECK_THROWS_AS(Trajectory(0, x, {0, 2, 1}, {0.0, 0.0, 0.0}), DataError);
    CHECK_THROWS_AS(Trajectory(0, x, {0, 1, 1}, {0.0, std::nan(""), 0.0}), DataError);
    CHECK_NOTHROW(Trajectory(0, x, {0, 1, 1}, {0.0, 1.0, 0.0}));
}

TEST_CASE("history view hides the anchor step") {
    auto tr = make_traj(1, 5, 2);
    HistoryView h(tr, 2);
    CHECK(h.x(2, 1) == doctest::Approx(21.5));
    CHECK(h.lagged_y(2) == doctest::Approx(-1.25));
    CHECK(h.lagged_a(0) == 0);
    CHECK_THROWS_AS(h.x(3, 0), IndexError);
    CHECK_THROWS_AS(h.lagged_y(3), IndexError);
    CHECK_THROWS_AS(HistoryView(tr, 5), IndexError);
}

TEST_CASE("plans") {
    auto a = InterventionPlan::constant(2, 3, 1);
    auto b = InterventionPlan::constant(2, 3, 0);
    CHECK(a.end() == 5);
    CHECK(a.horizon() == 3);
    CHECK(a.complementary_to(b));
    CHECK_FALSE(a.complementary_to(a));
    CHECK_THROWS_AS(a.check_fits(5), HorizonError);
    CHECK_NOTHROW(a.check_fits(6));
    CHECK_THROWS_AS(InterventionPlan(0, {0, 3}), ParameterError);
}

TEST_CASE("feature layout and padding") {
    auto tr = make_traj(7, 5, 2);
    // Full window at anchor 1: slots s = -3..1.
    auto fv = featurize_history(HistoryView(tr, 1), HistoryWindow::full());
    REQUIRE(fv.values.size() == feature_dimension(5, 2));
    CHECK(fv.values.size() == 5 * 2 + 10 + 1);
    // X slots: k = 3 -> s = 0, k = 4 -> s = 1.
    CHECK(fv.mask.head(6).sum() == 0.0);
    CHECK(fv.values(6) == doctest::Approx(0.5));
    CHECK(fv.values(9) == doctest::Approx(11.5));
    // Y lags: only slot s = 1 has a lag (Y_0).
    CHECK(fv.mask.segment(10, 5).sum() == 1.0);
    CHECK(fv.values(14) == doctest::Approx(-0.25));
    CHECK(fv.values(19) == doctest::Approx(0.0));  // A_0 = 0
    CHECK(fv.values(20) == 1.0);                   // anchor
    // Window of 2 at anchor 4.
    auto w2 = featurize_history(HistoryView(tr, 4), HistoryWindow{2});
    CHECK(w2.values.size() == 2 * 2 + 4 + 1);
    CHECK(w2.values(0) == doctest::Approx(30.5));
    CHECK(w2.values(5) == doctest::Approx(-3.25));
    CHECK(w2.values(7) == 1.0);  // A_3
    CHECK(w2.mask.sum() == w2.values.size());
    CHECK_THROWS_AS(featurize_history(HistoryView(tr, 4), HistoryWindow{6}), ParameterError);
}

TEST_CASE("featurize_rows matches single-row featurization") {
    auto data = make_data(4, 6);
    auto m = featurize_rows(data.trajectories(), 3, HistoryWindow{3});
    for (std::size_t i = 0; i < data.size(); ++i) {
        auto fv = featurize_history(HistoryView(data[i], 3), HistoryWindow{3});
        for (Eigen::Index c = 0; c < m.cols(); ++c) CHECK(m(static_cast<Eigen::Index>(i), c) == fv.values(c));
    }
}

TEST_CASE("split is a disjoint partition of the right sizes") {
    for (int n : {2, 3, 10, 101}) {
        auto data = make_data(n, 3);
        for (double lambda : {0.3, 0.5, 0.7}) {
            auto [nuis, st2] = split_dataset(data, lambda, 11);
            CHECK(st2.size() == static_cast<std::size_t>(std::floor(lambda * n)));
            CHECK(nuis.size() + st2.size() == static_cast<std::size_t>(n));
            std::set<std::int64_t> ids;
            for (auto id : nuis.ids()) ids.insert(id);
            for (auto id : st2.ids()) CHECK(ids.insert(id).second);
            CHECK(ids.size() == static_cast<std::size_t>(n));
        }
    }
    auto data = make_data(50, 3);
    auto s1 = split_dataset(data, 0.5, 9);
    auto s2 = split_dataset(data, 0.5, 9);
    CHECK(s1.second.ids() == s2.second.ids());
    CHECK_THROWS_AS(split_dataset(data, 1.0, 9), ParameterError);
    CHECK_THROWS_AS(split_dataset(data, 0.0, 9), ParameterError);
}

TEST_CASE("jsonl round trip") {
    auto data = make_data(3, 4);
    std::stringstream ss;
    ss.precision(17);
    write_jsonl(data, ss);
    auto back = read_jsonl(ss);
    REQUIRE(back.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) CHECK(back[i] == data[i]);
    CHECK(back.meta().generator == "toy");
    std::stringstream bad("{\"id\":0,\"x\":[[1.0],[null]],\"a\":[0,1],\"y\":[0,0]}\n");
    CHECK_THROWS_AS(read_jsonl(bad), DataError);
}
