#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "wolearn/error.hpp"
#include "wolearn/experiment.hpp"

using namespace wolearn;
namespace fs = std::filesystem;

namespace {

ExperimentSpec tiny_spec(const std::string& dir) {
    ExperimentSpec s;
    s.dgp.n_train = 400;
    s.dgp.n_test = 100;
    s.hyper.epochs = 10;
    s.axis = SweepAxis::Gamma;
    s.grid = {1.0, 3.0};
    s.seeds = {0, 1};
    s.record_timing = false;
    s.output = (fs::temp_directory_path() / dir).string();
    fs::remove_all(s.output);
    return s;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("spec validation") {
    ExperimentSpec s;
    CHECK_NOTHROW(s.validate());
    s.learners.clear();
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = ExperimentSpec{};
    s.seeds = {1, 1};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = ExperimentSpec{};
    s.backbone = "transformer";
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s = ExperimentSpec{};
    s.axis = SweepAxis::Tau;
    s.grid = {1.5};
    CHECK_THROWS_AS(s.validate(), ConfigError);
    s.grid = {9};
    CHECK_THROWS_AS(s.validate(), HorizonError);
    CHECK_THROWS_AS(spec_from_json({{"gama", 1}}), ConfigError);
    CHECK_THROWS_AS(spec_from_json({{"schema_version", 2}}).validate(), ConfigError);
    CHECK_THROWS_AS(spec_from_json({{"learners", {"HA", "XL"}}}), ConfigError);
}

TEST_CASE("published grids") {
    auto g = default_grid(SweepAxis::Gamma);
    REQUIRE(g.size() == 13);
    CHECK(g.front() == 0.5);
    CHECK(g.back() == 6.5);
    CHECK(default_grid(SweepAxis::Tau) == std::vector<double>{1, 3, 5, 7});
    CHECK(default_grid(SweepAxis::Dx) == std::vector<double>{5, 10, 15, 20, 25, 30, 35});
    CHECK(default_grid(SweepAxis::NTrain) == std::vector<double>{2000, 3000, 4000, 5000, 6000, 7000, 8000});
    CHECK(sweep_axis_from_string("d_x") == SweepAxis::Dx);
    CHECK_THROWS_AS(sweep_axis_from_string("lambda"), ConfigError);
}

TEST_CASE("axis values land in the generator config") {
    ExperimentSpec s;
    s.axis = SweepAxis::Gamma;
    CHECK(s.config_for(4.5).gamma == 4.5);
    s.axis = SweepAxis::Tau;
    s.dgp = DgpConfig::defaults(DgpKind::Pi);
    CHECK(s.config_for(7).horizon == 7);
    CHECK(s.config_for(7).evaluation_anchor() == 7);
    s.axis = SweepAxis::Dx;
    CHECK(s.config_for(20).covariate_dim == 20);
    s.axis = SweepAxis::NTrain;
    CHECK(s.config_for(2000).n_train == 2000);
    auto o = s.learner_options(3);
    CHECK(o.seed == 3);
    CHECK(o.nuisance.apply_floor);
}

TEST_CASE("spec json round trip and hash") {
    auto s = tiny_spec("wolearn_spec_rt");
    s.apply_floor = false;
    s.learners = {LearnerKind::WO, LearnerKind::IPW};
    auto back = spec_from_json(to_json(s));
    CHECK(to_json(back) == to_json(s));
    CHECK(spec_hash(back) == spec_hash(s));
    CHECK(spec_hash(s).size() == 16);
    auto moved = s;
    moved.output = "/elsewhere";
    moved.workers = 7;
    CHECK(spec_hash(moved) == spec_hash(s));
    auto other = s;
    other.dgp.gamma = 2.0;
    other.axis = SweepAxis::None;
    CHECK(spec_hash(other) != spec_hash(s));
}

TEST_CASE("aggregation and relative improvement") {
    ExperimentSpec s;
    s.learners = {LearnerKind::RA, LearnerKind::DR, LearnerKind::WO};
    s.seeds = {0, 1};
    std::vector<CellResult> cells(2);
    cells[0] = {0.0, 0, true, "", {{LearnerKind::RA, 0.4}, {LearnerKind::DR, 0.2}, {LearnerKind::WO, 0.1}}};
    cells[1] = {0.0, 1, true, "", {{LearnerKind::RA, 0.6}, {LearnerKind::DR, 0.4}, {LearnerKind::WO, 0.2}}};
    auto rows = aggregate(s, cells);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].rmse_mean == doctest::Approx(0.5));
    CHECK(rows[0].rmse_sd == doctest::Approx(std::sqrt(0.02)));
    CHECK(rows[2].rmse_mean == doctest::Approx(0.15));
    // best baseline 0.3, WO 0.15
    for (const auto& r : rows) CHECK(*r.rel_improv_pct == doctest::Approx(50.0));

    cells[1].ok = false;
    rows = aggregate(s, cells);
    CHECK(rows[0].seeds == 1);
    CHECK(rows[0].rmse_sd == 0.0);

    s.learners = {LearnerKind::RA, LearnerKind::DR};
    rows = aggregate(s, cells);
    CHECK_FALSE(rows[0].rel_improv_pct.has_value());
}

TEST_CASE("sweep csv schema and self-consistency") {
    std::vector<SweepRow> rows{{LearnerKind::HA, 4.0, 0.3, 0.01, std::nullopt, 0.0, 1.5, 2},
                               {LearnerKind::WO, 4.0, 0.2, 0.02, std::nullopt, 0.1, 1.5, 2}};
    rows[0].rel_improv_pct = rows[1].rel_improv_pct = 100.0 * (0.3 - 0.2) / 0.3;
    std::stringstream out;
    write_sweep_csv(rows, SweepAxis::Gamma, "abc", out);
    std::string header;
    std::getline(out, header);
    CHECK(header == "learner,gamma,rmse_mean,rmse_sd,rel_improv_pct,guard_rate,seconds,spec_hash");
    out.seekg(0);
    CHECK(check_sweep_csv(out, "abc").ok);
    out.clear();
    out.seekg(0);
    CHECK_FALSE(check_sweep_csv(out, "abd").ok);

    rows[0].rel_improv_pct = 10.0;
    std::stringstream bad;
    write_sweep_csv(rows, SweepAxis::Gamma, "abc", bad);
    auto check = check_sweep_csv(bad, "abc");
    CHECK_FALSE(check.ok);
    CHECK(check.problems.size() == 1);

    std::stringstream garbage("learner,gamma,rmse\n");
    CHECK_FALSE(check_sweep_csv(garbage, "abc").ok);
}

TEST_CASE("sweep output is identical for any worker count") {
    auto a = tiny_spec("wolearn_sweep_w1");
    a.workers = 1;
    auto b = tiny_spec("wolearn_sweep_w3");
    b.workers = 3;
    auto ra = cmd_sweep(a);
    auto rb = cmd_sweep(b);
    CHECK(ra.exit_code == 0);
    CHECK(rb.exit_code == 0);
    CHECK(ra.summary["self_consistency"]["ok"] == true);
    const auto csv_a = slurp(fs::path(a.output) / "sweep.csv");
    CHECK(csv_a == slurp(fs::path(b.output) / "sweep.csv"));
    CHECK(csv_a.find(spec_hash(a)) != std::string::npos);
    for (const auto* cell : {"gamma=1/seed=0", "gamma=3/seed=1"}) {
        CHECK(slurp(fs::path(a.output) / "cells" / cell / "metrics.json") ==
              slurp(fs::path(b.output) / "cells" / cell / "metrics.json"));
        CHECK(fs::exists(fs::path(a.output) / "cells" / cell / "pseudo.csv"));
    }
    // 2 grid values x 5 learners
    int lines = 0;
    std::istringstream is(csv_a);
    for (std::string line; std::getline(is, line);) ++lines;
    CHECK(lines == 1 + 2 * 5);
    fs::remove_all(a.output);
    fs::remove_all(b.output);
}

TEST_CASE("a failed cell is recorded and the sweep continues") {
    auto s = tiny_spec("wolearn_sweep_fail");
    s.axis = SweepAxis::NTrain;
    s.grid = {3, 400};
    s.seeds = {0};
    auto r = cmd_sweep(s);
    CHECK(r.exit_code == 1);
    CHECK(r.summary["failed_cells"] == 1);
    CHECK(r.summary["cells"][0]["status"] == "failed");
    CHECK(r.summary["cells"][1]["status"] == "ok");
    const auto csv = slurp(fs::path(s.output) / "sweep.csv");
    CHECK(csv.find("WO,400,") != std::string::npos);
    CHECK(csv.find("WO,3,") == std::string::npos);
    fs::remove_all(s.output);
}

TEST_CASE("simulate writes reproducible datasets") {
    auto s = tiny_spec("wolearn_sim");
    s.grid = {2.0};
    s.seeds = {5};
    auto r = cmd_simulate(s);
    CHECK(r.exit_code == 0);
    const auto path = fs::path(s.output) / "data" / "gamma=2_seed=5_train.jsonl";
    REQUIRE(fs::exists(path));
    auto c = s.config_for(2.0);
    auto back = load_jsonl(path.string());
    auto fresh = simulate(c, 5);
    REQUIRE(back.size() == fresh.size());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == fresh[i]);
    CHECK(r.summary["files"].size() == 1);
    fs::remove_all(s.output);
}

TEST_CASE("verify command writes reports") {
    auto s = tiny_spec("wolearn_verify");
    s.axis = SweepAxis::None;
    s.dgp.gamma = 2.0;
    s.verify.checks = {"reduction", "rho"};
    s.verify.histories = 4;
    s.verify.rollouts = 2000;
    std::stringstream table;
    auto r = cmd_verify(s, {}, &table);
    CHECK(r.exit_code == 0);
    auto reports = nlohmann::json::parse(slurp(fs::path(s.output) / "verify.json"));
    REQUIRE(reports.size() == 2);
    CHECK(reports[0]["check"] == "r_learner_reduction");
    CHECK(reports[1]["check"] == "conditional_mean_rho");
    CHECK(table.str().find("r_learner_reduction") != std::string::npos);
    s.verify.checks = {"nonsense"};
    CHECK_THROWS_AS(cmd_verify(s), ConfigError);
    fs::remove_all(s.output);
}
