#include "wolearn/nuisance.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "wolearn/error.hpp"
#include "wolearn/rng.hpp"

namespace wolearn {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kPropensityTag = 0x70;
constexpr std::uint64_t kResponseTag = 0x6d;
constexpr std::uint64_t kWeightTag = 0x77;

Hyperparameters stage_hyper(const NuisanceOptions& o, std::uint64_t tag, int j, int value) {
    Hyperparameters h = o.hyper;
    h.seed = derive_seed(o.hyper.seed, {tag, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(value)});
    return h;
}

std::vector<std::int64_t> sorted_ids(const Dataset& data) {
    auto ids = data.ids();
    std::sort(ids.begin(), ids.end());
    return ids;
}

double plan_probability(double p_treated, int value) { return value == 1 ? p_treated : 1.0 - p_treated; }

}  // namespace

json to_json(const NuisanceOptions& o) {
    return json{{"hyperparameters", to_json(o.hyper)},
                {"window", o.window.steps},
                {"propensity_floor", o.propensity_floor},
                {"apply_floor", o.apply_floor}};
}

PropensityModels::PropensityModels(int start, int end, std::vector<Model> models, std::vector<std::string> warnings)
    : start_(start), end_(end), models_(std::move(models)), warnings_(std::move(warnings)) {
    if (static_cast<int>(models_.size()) != end_ - start_ + 1) throw ShapeError("one propensity model per time index");
}

PropensityModels fit_propensity_models(const Dataset& data, int start, int end, const NuisanceOptions& o) {
    if (data.empty()) throw DataError("no trajectories for propensity fit");
    if (start < 0 || end >= data.length() || end < start) throw HorizonError("propensity range outside trajectories");
    std::vector<Model> models;
    std::vector<std::string> warnings;
    const auto n = static_cast<Eigen::Index>(data.size());
    for (int j = start; j <= end; ++j) {
        RowMatrix x = featurize_rows(data.trajectories(), j, o.window);
        Eigen::VectorXd lab(n);
        for (Eigen::Index i = 0; i < n; ++i) lab(i) = data[static_cast<std::size_t>(i)].a(j);
        const double rate = lab.mean();
        if (rate == 0.0 || rate == 1.0) {
            warnings.push_back("treatment at time " + std::to_string(j) + " is constant; propensity saturates");
        }
        models.push_back(fit_classifier(x, lab, stage_hyper(o, kPropensityTag, j, 0)));
    }
    return PropensityModels(start, end, std::move(models), std::move(warnings));
}

FittedNuisanceSet FittedNuisanceSet::fit(const Dataset& data, const InterventionPlan& plan,
                                         const NuisanceOptions& options) {
    auto props = std::make_shared<const PropensityModels>(
        fit_propensity_models(data, plan.start(), plan.end(), options));
    return fit(data, plan, options, std::move(props));
}

FittedNuisanceSet FittedNuisanceSet::fit(const Dataset& data, const InterventionPlan& plan,
                                         const NuisanceOptions& options,
                                         std::shared_ptr<const PropensityModels> propensities) {
    if (data.empty()) throw DataError("no trajectories for nuisance fit");
    plan.check_fits(data.length());
    if (!propensities || propensities->start() != plan.start() || propensities->end() != plan.end()) {
        throw ConfigError("propensity models do not cover the plan's time range");
    }
    if (!(options.propensity_floor >= 0.0 && options.propensity_floor < 0.5)) {
        throw ParameterError("propensity floor must lie in [0, 0.5)");
    }
    FittedNuisanceSet set;
    set.plan_ = plan;
    set.options_ = options;
    set.propensities_ = std::move(propensities);
    set.training_ids_ = sorted_ids(data);

    const int t = plan.start();
    const int end = plan.end();
    const auto& rows = data.trajectories();

    // Backward response recursion; stage j reads only the stage j+1 model.
    std::vector<Model> responses(static_cast<std::size_t>(end - t + 1));
    std::vector<std::string> provenance(responses.size());
    for (int j = end; j >= t; --j) {
        std::vector<Trajectory> sub;
        for (const auto& tr : rows) {
            if (tr.a(j) == plan.at(j)) sub.push_back(tr);
        }
        if (sub.empty()) {
            throw StageError("no trajectories with A_" + std::to_string(j) + " = " + std::to_string(plan.at(j)) +
                                 " for the response stage",
                             j, plan.at(j));
        }
        Eigen::VectorXd target(static_cast<Eigen::Index>(sub.size()));
        if (j == end) {
            for (std::size_t i = 0; i < sub.size(); ++i) target(static_cast<Eigen::Index>(i)) = sub[i].y(end);
            provenance[static_cast<std::size_t>(j - t)] = "outcome";
        } else {
            target = responses[static_cast<std::size_t>(j + 1 - t)].predict(featurize_rows(sub, j + 1, options.window));
            provenance[static_cast<std::size_t>(j - t)] = "response[" + std::to_string(j + 1) + "]";
        }
        responses[static_cast<std::size_t>(j - t)] = fit_regressor(
            featurize_rows(sub, j, options.window), target, {}, stage_hyper(options, kResponseTag, j, plan.at(j)));
    }
    set.responses_ = std::move(responses);
    set.provenance_ = std::move(provenance);

    // Tail weights W_j = E[prod_{k>j} pi_k | H_j] with plug-in propensities.
    if (end > t) {
        const auto n = static_cast<Eigen::Index>(rows.size());
        std::vector<Eigen::VectorXd> pis;
        for (int k = t; k <= end; ++k) {
            Eigen::VectorXd p = set.propensities_->at(k).predict(featurize_rows(rows, k, options.window));
            for (Eigen::Index i = 0; i < n; ++i) {
                double v = plan_probability(p(i), plan.at(k));
                if (options.apply_floor) v = std::clamp(v, options.propensity_floor, 1.0 - options.propensity_floor);
                p(i) = v;
            }
            pis.push_back(std::move(p));
        }
        std::vector<Model> weights(static_cast<std::size_t>(end - t));
        Eigen::VectorXd tail = Eigen::VectorXd::Ones(n);
        for (int j = end - 1; j >= t; --j) {
            tail = tail.cwiseProduct(pis[static_cast<std::size_t>(j + 1 - t)]);
            weights[static_cast<std::size_t>(j - t)] = fit_regressor(featurize_rows(rows, j, options.window), tail, {},
                                                                     stage_hyper(options, kWeightTag, j, plan.at(j)));
        }
        set.tail_weights_ = std::move(weights);
    }
    return set;
}

std::vector<EvaluatedNuisances> FittedNuisanceSet::evaluate_all(std::span<const Trajectory> rows, int anchor) const {
    if (anchor != plan_.start()) throw UsageError("nuisances evaluated at an anchor different from the plan start");
    const int t = plan_.start();
    const int end = plan_.end();
    std::vector<EvaluatedNuisances> out(rows.size());
    for (auto& ev : out) {
        ev.anchor = t;
        ev.horizon = plan_.horizon();
    }
    if (rows.empty()) return out;
    for (const auto& tr : rows) {
        if (end >= tr.length()) throw HorizonError("anchor + horizon exceeds trajectory length");
    }
    const double floor = options_.apply_floor ? options_.propensity_floor : 0.0;
    for (int j = t; j <= end; ++j) {
        const RowMatrix x = featurize_rows(rows, j, options_.window);
        const Eigen::VectorXd p = propensities_->at(j).predict(x);
        const Eigen::VectorXd mu = responses_[static_cast<std::size_t>(j - t)].predict(x);
        Eigen::VectorXd w;
        if (j < end) w = tail_weights_[static_cast<std::size_t>(j - t)].predict(x);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto ii = static_cast<Eigen::Index>(i);
            const double pi = std::clamp(plan_probability(p(ii), plan_.at(j)), floor, 1.0 - floor);
            const double tail = j < end ? std::clamp(w(ii), 0.0, 1.0) : 1.0;
            auto& ev = out[i];
            ev.propensity.push_back(pi);
            ev.response.push_back(mu(ii));
            ev.weight.push_back(tail * pi);
            ev.next_weight.push_back(tail);
        }
    }
    return out;
}

EvaluatedNuisances FittedNuisanceSet::evaluate(const Trajectory& trajectory, int anchor) const {
    return evaluate_all(std::span<const Trajectory>(&trajectory, 1), anchor).front();
}

std::uint64_t hash_ids(const std::vector<std::int64_t>& ids) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto id : ids) {
        auto v = static_cast<std::uint64_t>(id);
        for (int b = 0; b < 8; ++b) {
            h = (h ^ (v & 0xffu)) * 0x100000001b3ULL;
            v >>= 8;
        }
    }
    return h;
}

std::uint64_t FittedNuisanceSet::training_hash() const { return hash_ids(training_ids_); }

void FittedNuisanceSet::save(const std::string& directory) const {
    fs::create_directories(directory);
    const int t = plan_.start();
    json props = json::array(), resp = json::array(), weights = json::array();
    for (int j = t; j <= plan_.end(); ++j) {
        const auto idx = static_cast<std::size_t>(j - t);
        const std::string p = "propensity_" + std::to_string(j) + ".json";
        const std::string r = "response_" + std::to_string(j) + ".json";
        propensities_->at(j).save((fs::path(directory) / p).string());
        responses_[idx].save((fs::path(directory) / r).string());
        props.push_back(p);
        resp.push_back(r);
        if (j < plan_.end()) {
            const std::string w = "weight_" + std::to_string(j) + ".json";
            tail_weights_[idx].save((fs::path(directory) / w).string());
            weights.push_back(w);
        }
    }
    json manifest{{"format", "wolearn-nuisance"},
                  {"version", 1},
                  {"plan", {{"start", plan_.start()}, {"values", plan_.values()}}},
                  {"anchor", t},
                  {"tau", plan_.horizon()},
                  {"options", to_json(options_)},
                  {"split_hash", training_hash()},
                  {"training_ids", training_ids_},
                  {"provenance", provenance_},
                  {"propensity_warnings", propensities_->warnings()},
                  {"propensity", props},
                  {"response", resp},
                  {"weight", weights}};
    std::ofstream out(fs::path(directory) / "manifest.json");
    if (!out) throw Error("cannot write nuisance manifest in " + directory);
    out << manifest.dump(2);
}

FittedNuisanceSet FittedNuisanceSet::load(const std::string& directory) {
    std::ifstream in(fs::path(directory) / "manifest.json");
    if (!in) throw ConfigError("no nuisance manifest in " + directory);
    try {
        json m;
        in >> m;
        if (m.at("format") != "wolearn-nuisance") throw ConfigError("not a nuisance manifest");
        FittedNuisanceSet set;
        set.plan_ = InterventionPlan(m.at("plan").at("start").get<int>(), m.at("plan").at("values").get<std::vector<int>>());
        const auto& oj = m.at("options");
        set.options_.hyper = hyperparameters_from_json(oj.at("hyperparameters"));
        set.options_.window = HistoryWindow{oj.at("window").get<int>()};
        set.options_.propensity_floor = oj.at("propensity_floor").get<double>();
        set.options_.apply_floor = oj.at("apply_floor").get<bool>();
        set.training_ids_ = m.at("training_ids").get<std::vector<std::int64_t>>();
        set.provenance_ = m.at("provenance").get<std::vector<std::string>>();
        auto load_all = [&](const char* key) {
            std::vector<Model> out;
            for (const auto& f : m.at(key)) out.push_back(Model::load((fs::path(directory) / f.get<std::string>()).string()));
            return out;
        };
        set.propensities_ = std::make_shared<const PropensityModels>(
            set.plan_.start(), set.plan_.end(), load_all("propensity"),
            m.value("propensity_warnings", std::vector<std::string>{}));
        set.responses_ = load_all("response");
        set.tail_weights_ = load_all("weight");
        return set;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed nuisance manifest: ") + e.what());
    }
}

NuisancePair fit_nuisance_pair(const Dataset& data, const InterventionPlan& plan_a, const InterventionPlan& plan_b,
                               const NuisanceOptions& options) {
    if (plan_a.start() != plan_b.start() || plan_a.horizon() != plan_b.horizon()) {
        throw ParameterError("plans must share anchor and horizon");
    }
    auto props = std::make_shared<const PropensityModels>(
        fit_propensity_models(data, plan_a.start(), plan_a.end(), options));
    NuisancePair pair;
    pair.a = std::make_shared<const FittedNuisanceSet>(FittedNuisanceSet::fit(data, plan_a, options, props));
    pair.b = plan_a == plan_b ? pair.a
                              : std::make_shared<const FittedNuisanceSet>(
                                    FittedNuisanceSet::fit(data, plan_b, options, props));
    return pair;
}

void assert_disjoint(const std::vector<std::int64_t>& training_ids, const std::vector<std::int64_t>& ids) {
    for (auto id : ids) {
        if (std::binary_search(training_ids.begin(), training_ids.end(), id)) {
            throw SplitDisciplineError("trajectory " + std::to_string(id) + " was used to fit the nuisances");
        }
    }
}

}  // namespace wolearn
