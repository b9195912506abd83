#include "wolearn/learners.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "wolearn/error.hpp"
#include "wolearn/rng.hpp"

namespace wolearn {

using nlohmann::json;

std::string to_string(LearnerKind kind) {
    switch (kind) {
        case LearnerKind::HA: return "HA";
        case LearnerKind::RA: return "RA";
        case LearnerKind::IPW: return "IPW";
        case LearnerKind::DR: return "DR";
        case LearnerKind::WO: return "WO";
    }
    return "?";
}

LearnerKind learner_kind_from_string(const std::string& name) {
    std::string up = name;
    std::transform(up.begin(), up.end(), up.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (up == "HA") return LearnerKind::HA;
    if (up == "RA") return LearnerKind::RA;
    if (up == "IPW") return LearnerKind::IPW;
    if (up == "DR") return LearnerKind::DR;
    if (up == "WO") return LearnerKind::WO;
    throw ConfigError("unknown learner '" + name + "'");
}

std::string to_string(Target target) { return target == Target::Cate ? "CATE" : "CAPO"; }

void PlanPair::validate(int length) const {
    a.check_fits(length);
    if (b) {
        if (b->start() != a.start() || b->horizon() != a.horizon()) {
            throw ParameterError("plans must share anchor and horizon");
        }
    }
}

PlanPair treat_vs_control(int anchor, int horizon) {
    return {InterventionPlan::constant(anchor, horizon, 1), InterventionPlan::constant(anchor, horizon, 0)};
}

json CateModel::provenance() const {
    json j{{"learner", to_string(kind)},
           {"target", to_string(target())},
           {"anchor", anchor()},
           {"tau", plans.horizon()},
           {"plan_a", plans.a.values()},
           {"lambda", lambda},
           {"seed", seed},
           {"window", window.steps},
           {"hyperparameters", to_json(model.hyperparameters())},
           {"nuisance", nuisance},
           {"guard_rate", guard_rate},
           {"warnings", warnings}};
    if (plans.b) j["plan_b"] = plans.b->values();
    return j;
}

namespace {

constexpr std::uint64_t kSplitTag = 0x51;
constexpr std::uint64_t kNuisanceTag = 0x4e;
constexpr std::uint64_t kStageTwoTag = 0x32;

std::vector<EvaluatedNuisances> evaluate_provider(const NuisanceProvider& p, const Dataset& data, int anchor) {
    if (const auto* fitted = dynamic_cast<const FittedNuisanceSet*>(&p)) {
        return fitted->evaluate_all(data.trajectories(), anchor);
    }
    std::vector<EvaluatedNuisances> out;
    out.reserve(data.size());
    for (const auto& tr : data.trajectories()) out.push_back(p.evaluate(tr, anchor));
    return out;
}

void check_data(const Dataset& data, const PlanPair& plans) {
    if (data.size() < 4) throw ParameterError("need at least four trajectories");
    plans.validate(data.length());
}

Hyperparameters stage_two_hyper(const LearnerOptions& o, LearnerKind kind) {
    Hyperparameters h = o.second_stage;
    h.seed = derive_seed(o.seed, {kStageTwoTag, static_cast<std::uint64_t>(kind)});
    return h;
}

// Features of the HA regression: history features followed by the plan values.
RowMatrix ha_features(std::span<const Trajectory> rows, const PlanPair& plans, HistoryWindow window,
                      const InterventionPlan* forced) {
    const RowMatrix base = featurize_rows(rows, plans.anchor(), window);
    const int steps = plans.horizon() + 1;
    RowMatrix out(base.rows(), base.cols() + steps);
    out.leftCols(base.cols()) = base;
    for (Eigen::Index i = 0; i < base.rows(); ++i) {
        for (int k = 0; k < steps; ++k) {
            const int j = plans.anchor() + k;
            out(i, base.cols() + k) = forced ? forced->at(j) : rows[static_cast<std::size_t>(i)].a(j);
        }
    }
    return out;
}

}  // namespace

StageTwoInputs prepare_stage_two(const Dataset& data, const PlanPair& plans, const LearnerOptions& options) {
    check_data(data, plans);
    auto [nuis, stage2] = split_dataset(data, options.lambda, derive_seed(options.seed, {kSplitTag}));
    NuisanceOptions no = options.nuisance;
    no.hyper.seed = derive_seed(options.seed, {kNuisanceTag});
    std::shared_ptr<const NuisanceProvider> a, b;
    if (plans.b) {
        auto pair = fit_nuisance_pair(nuis, plans.a, *plans.b, no);
        a = pair.a;
        b = pair.b;
    } else {
        a = std::make_shared<const FittedNuisanceSet>(FittedNuisanceSet::fit(nuis, plans.a, no));
    }
    StageTwoInputs in;
    const auto* fa = static_cast<const FittedNuisanceSet*>(a.get());
    assert_disjoint(fa->training_ids(), stage2.ids());
    std::vector<std::string> warnings = fa->propensities().warnings();
    in.nuisance_summary = json{{"kind", "fitted"},
                               {"split_hash", fa->training_hash()},
                               {"n_nuisance", nuis.size()},
                               {"n_stage2", stage2.size()},
                               {"provenance", fa->provenance()},
                               {"warnings", warnings}};
    in.nuisance_split = std::move(nuis);
    in.stage2_split = std::move(stage2);
    in.nuisance_a = std::move(a);
    in.nuisance_b = std::move(b);
    in.values_a = evaluate_provider(*in.nuisance_a, in.stage2_split, plans.anchor());
    if (in.nuisance_b) in.values_b = evaluate_provider(*in.nuisance_b, in.stage2_split, plans.anchor());
    return in;
}

StageTwoInputs prepare_stage_two(const Dataset& data, const PlanPair& plans, const LearnerOptions& options,
                                 std::shared_ptr<const NuisanceProvider> nuisance_a,
                                 std::shared_ptr<const NuisanceProvider> nuisance_b) {
    check_data(data, plans);
    if (!nuisance_a || (plans.b && !nuisance_b)) throw UsageError("missing nuisance provider");
    if (!(nuisance_a->plan() == plans.a) || (plans.b && !(nuisance_b->plan() == *plans.b))) {
        throw ConfigError("nuisance provider plan does not match");
    }
    auto [nuis, stage2] = split_dataset(data, options.lambda, derive_seed(options.seed, {kSplitTag}));
    StageTwoInputs in;
    in.nuisance_summary = json{{"kind", nuisance_a->kind() == NuisanceKind::Oracle ? "oracle" : "fitted"},
                               {"n_nuisance", nuis.size()},
                               {"n_stage2", stage2.size()}};
    in.nuisance_split = std::move(nuis);
    in.stage2_split = std::move(stage2);
    in.nuisance_a = std::move(nuisance_a);
    in.nuisance_b = plans.b ? std::move(nuisance_b) : nullptr;
    in.values_a = evaluate_provider(*in.nuisance_a, in.stage2_split, plans.anchor());
    if (in.nuisance_b) in.values_b = evaluate_provider(*in.nuisance_b, in.stage2_split, plans.anchor());
    return in;
}

CateModel fit_second_stage(LearnerKind kind, const StageTwoInputs& in, const PlanPair& plans,
                           const LearnerOptions& options, std::vector<PseudoOutcomeRow>* pseudo_rows) {
    if (kind == LearnerKind::HA) throw UsageError("HA has no second stage; use train_history_adjustment");
    const auto& rows = in.stage2_split.trajectories();
    const auto n = static_cast<Eigen::Index>(rows.size());
    if (n < 1) throw DataError("empty stage-2 split");
    const bool cate = plans.b.has_value();
    Eigen::VectorXd target(n), weight;
    std::optional<double> normalizer;
    int guarded = 0;
    int extreme = 0;
    double omega_sum = 0.0;
    if (pseudo_rows) pseudo_rows->clear();
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& tr = rows[static_cast<std::size_t>(i)];
        const auto& va = in.values_a[static_cast<std::size_t>(i)];
        const EvaluatedNuisances* vb = cate ? &in.values_b[static_cast<std::size_t>(i)] : nullptr;
        bool ext = false;
        switch (kind) {
            case LearnerKind::RA:
                target(i) = cate ? va.mu_anchor() - vb->mu_anchor() : va.mu_anchor();
                break;
            case LearnerKind::DR:
                target(i) = cate ? dr_pseudo_cate(va, *vb, tr, plans.a, *plans.b, &ext, options.pseudo.extreme_weight)
                                 : dr_pseudo_capo(va, tr, plans.a, &ext, options.pseudo.extreme_weight);
                break;
            case LearnerKind::IPW:
                if (cate) {
                    target(i) = ipw_pseudo_cate(va, *vb, tr, plans.a, *plans.b, &ext, options.pseudo.extreme_weight);
                } else {
                    double r = 1.0;
                    for (int j = plans.a.start(); j <= plans.a.end(); ++j) {
                        r *= follows(tr, plans.a, j) ? 1.0 / va.propensity[static_cast<std::size_t>(j - plans.anchor())]
                                                     : 0.0;
                    }
                    ext = !std::isfinite(r) || r > options.pseudo.extreme_weight;
                    target(i) = r * tr.y(plans.a.end());
                }
                break;
            case LearnerKind::WO:
                break;
            case LearnerKind::HA:
                break;
        }
        if (kind == LearnerKind::WO) {
            if (weight.size() == 0) weight.resize(n);
            const auto row = cate ? cate_row(va, *vb, tr, plans.a, *plans.b, options.pseudo)
                                  : capo_row(va, tr, plans.a, options.pseudo);
            target(i) = row.xi;
            weight(i) = row.weight;
            omega_sum += row.omega_t;
            guarded += row.guard_flag ? 1 : 0;
            ext = row.extreme_flag;
            if (pseudo_rows) pseudo_rows->push_back(row);
        }
        extreme += ext ? 1 : 0;
    }
    CateModel out;
    out.kind = kind;
    out.plans = plans;
    out.window = options.nuisance.window;
    out.lambda = options.lambda;
    out.seed = options.seed;
    out.nuisance = in.nuisance_summary;
    if (kind == LearnerKind::WO) {
        normalizer = omega_sum;
        out.guard_rate = static_cast<double>(guarded) / static_cast<double>(n);
        if (out.guard_rate > options.guard_warning_rate) {
            out.warnings.push_back("rho guard engaged on " + std::to_string(guarded) + " of " + std::to_string(n) +
                                   " rows");
        }
    }
    if (extreme > 0) {
        out.warnings.push_back("extreme inverse-propensity weights on " + std::to_string(extreme) + " rows");
    }
    if (!target.allFinite()) throw DataError(to_string(kind) + " pseudo-outcomes are not finite");
    const RowMatrix x = featurize_rows(rows, plans.anchor(), options.nuisance.window);
    out.model = fit_regressor(x, target, weight, stage_two_hyper(options, kind), normalizer);
    return out;
}

CateModel train_history_adjustment(const Dataset& data, const PlanPair& plans, const LearnerOptions& options) {
    check_data(data, plans);
    const auto& rows = data.trajectories();
    const RowMatrix x = ha_features(rows, plans, options.nuisance.window, nullptr);
    Eigen::VectorXd y(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) y(i) = rows[static_cast<std::size_t>(i)].y(plans.a.end());
    CateModel out;
    out.kind = LearnerKind::HA;
    out.plans = plans;
    out.window = options.nuisance.window;
    out.lambda = options.lambda;
    out.seed = options.seed;
    out.nuisance = json{{"kind", "none"}, {"n_train", data.size()}};
    out.model = fit_regressor(x, y, {}, stage_two_hyper(options, LearnerKind::HA));
    return out;
}

CateModel train_wo(const Dataset& data, const PlanPair& plans, const LearnerOptions& options) {
    return fit_second_stage(LearnerKind::WO, prepare_stage_two(data, plans, options), plans, options);
}

CateModel train_baseline(LearnerKind kind, const Dataset& data, const PlanPair& plans, const LearnerOptions& options) {
    if (kind == LearnerKind::WO) throw UsageError("WO is not a baseline");
    if (kind == LearnerKind::HA) return train_history_adjustment(data, plans, options);
    return fit_second_stage(kind, prepare_stage_two(data, plans, options), plans, options);
}

std::vector<CateModel> train_learners(const std::vector<LearnerKind>& kinds, const Dataset& data,
                                      const PlanPair& plans, const LearnerOptions& options) {
    if (kinds.empty()) throw ConfigError("no learners requested");
    std::optional<StageTwoInputs> inputs;
    std::vector<CateModel> out;
    for (auto kind : kinds) {
        if (kind == LearnerKind::HA) {
            out.push_back(train_history_adjustment(data, plans, options));
            continue;
        }
        if (!inputs) inputs = prepare_stage_two(data, plans, options);
        out.push_back(fit_second_stage(kind, *inputs, plans, options));
    }
    return out;
}

Eigen::VectorXd predict_cate(const CateModel& m, std::span<const Trajectory> rows) {
    if (rows.empty()) return {};
    if (m.kind == LearnerKind::HA) {
        const auto pa = m.model.predict(ha_features(rows, m.plans, m.window, &m.plans.a));
        if (!m.plans.b) return pa;
        return pa - m.model.predict(ha_features(rows, m.plans, m.window, &*m.plans.b));
    }
    return m.model.predict(featurize_rows(rows, m.anchor(), m.window));
}

double predict_cate(const CateModel& m, const HistoryView& h) {
    if (h.anchor() != m.anchor()) throw UsageError("history anchor does not match the model anchor");
    return predict_cate(m, std::span<const Trajectory>(&h.trajectory(), 1))(0);
}

double wo_empirical_risk(const std::vector<PseudoOutcomeRow>& rows, const Eigen::VectorXd& g) {
    if (static_cast<std::size_t>(g.size()) != rows.size()) throw ShapeError("one prediction per pseudo-outcome row");
    double risk = 0.0, omega = 0.0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const double r = rows[i].xi - g(static_cast<Eigen::Index>(i));
        risk += rows[i].weight * r * r;
        omega += rows[i].omega_t;
    }
    if (!(omega > 0.0)) throw DegenerateWeightsError("sum of overlap weights is not positive");
    return risk / omega;
}

double rmse(const Eigen::VectorXd& prediction, const std::vector<double>& truth) {
    if (static_cast<std::size_t>(prediction.size()) != truth.size() || truth.empty()) {
        throw DataError("ground truth does not cover the test set");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = prediction(static_cast<Eigen::Index>(i)) - truth[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(truth.size()));
}

double evaluate_rmse(const CateModel& model, const Dataset& test, const std::vector<double>& truth) {
    if (truth.size() != test.size()) throw DataError("ground truth does not cover the test set");
    return rmse(predict_cate(model, test.trajectories()), truth);
}

SeedSummary summarize(const std::vector<double>& values) {
    SeedSummary s;
    s.values = values;
    if (values.empty()) return s;
    const double n = static_cast<double>(values.size());
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / (n - 1.0));
    }
    return s;
}

}  // namespace wolearn
