#include "wolearn/dgp.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>

#include "wolearn/error.hpp"
#include "wolearn/rng.hpp"

namespace wolearn {

using nlohmann::json;

std::string to_string(DgpKind kind) {
    switch (kind) {
        case DgpKind::Gamma: return "gamma";
        case DgpKind::Pi: return "pi";
        case DgpKind::Mu: return "mu";
        case DgpKind::N: return "n";
    }
    return "unknown";
}

DgpKind dgp_kind_from_string(const std::string& name) {
    if (name == "gamma") return DgpKind::Gamma;
    if (name == "pi") return DgpKind::Pi;
    if (name == "mu") return DgpKind::Mu;
    if (name == "n") return DgpKind::N;
    throw ConfigError("unknown generator kind '" + name + "'");
}

DgpConfig DgpConfig::defaults(DgpKind kind) {
    DgpConfig c;
    c.kind = kind;
    switch (kind) {
        case DgpKind::Gamma:
            c.length = 5, c.covariate_dim = 1, c.horizon = 1, c.n_train = 4000, c.gamma = 1.0;
            break;
        case DgpKind::Pi:
            c.length = 15, c.covariate_dim = 1, c.horizon = 1, c.n_train = 4000;
            break;
        case DgpKind::Mu:
            c.length = 15, c.covariate_dim = 5, c.horizon = 1, c.n_train = 4000;
            break;
        case DgpKind::N:
            c.length = 5, c.covariate_dim = 5, c.horizon = 1, c.n_train = 4000;
            break;
    }
    return c;
}

void DgpConfig::validate() const {
    if (length < 1) throw ConfigError("length must be >= 1");
    if (covariate_dim < 1) throw ConfigError("covariate_dim must be >= 1");
    if (n_train < 0 || n_test < 0) throw ConfigError("sample counts must be non-negative");
    if (horizon < 0) throw ConfigError("horizon must be >= 0");
    if (!(sigma_y >= 0.0) || !(sigma_x >= 0.0)) throw ConfigError("noise scales must be non-negative");
    if (!std::isfinite(gamma)) throw ConfigError("gamma must be finite");
    const int t = evaluation_anchor();
    if (t < 0 || t + horizon >= length) {
        throw HorizonError("anchor " + std::to_string(t) + " + horizon " + std::to_string(horizon) +
                           " does not fit length " + std::to_string(length));
    }
}

json to_json(const DgpConfig& c) {
    json j{{"kind", to_string(c.kind)}, {"T", c.length},         {"d_x", c.covariate_dim},
           {"n_train", c.n_train},      {"n_test", c.n_test},    {"gamma", c.gamma},
           {"tau", c.horizon},          {"sigma_y", c.sigma_y},  {"sigma_x", c.sigma_x},
           {"seed", c.seed}};
    if (c.anchor) j["anchor"] = *c.anchor;
    return j;
}

DgpConfig dgp_config_from_json(const json& j) {
    try {
        DgpConfig c = DgpConfig::defaults(dgp_kind_from_string(j.at("kind").get<std::string>()));
        c.length = j.value("T", c.length);
        c.covariate_dim = j.value("d_x", c.covariate_dim);
        c.n_train = j.value("n_train", c.n_train);
        c.n_test = j.value("n_test", c.n_test);
        c.gamma = j.value("gamma", c.gamma);
        c.horizon = j.value("tau", c.horizon);
        c.sigma_y = j.value("sigma_y", c.sigma_y);
        c.sigma_x = j.value("sigma_x", c.sigma_x);
        c.seed = j.value("seed", c.seed);
        if (j.contains("anchor") && !j["anchor"].is_null()) c.anchor = j["anchor"].get<int>();
        return c;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed generator config: ") + e.what());
    }
}

// --- structural functions ---------------------------------------------------

namespace {

double mean_of(std::span<const double> v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double treatment_index(std::span<const double> x_t, double y_prev, int a_prev) {
    return 0.5 * mean_of(x_t) + 0.5 * y_prev - 0.5 * (static_cast<double>(a_prev) - 0.5);
}

double logit_from_index(const DgpConfig& config, double index) {
    switch (config.kind) {
        case DgpKind::Gamma: return config.gamma * index;
        case DgpKind::Pi: return std::sin(index);
        case DgpKind::Mu: return index;
        case DgpKind::N: return 3.5 * index;
    }
    throw ConfigError("unknown generator kind");
}

double treatment_logit(const DgpConfig& config, std::span<const double> x_t, double y_prev, int a_prev) {
    return logit_from_index(config, treatment_index(x_t, y_prev, a_prev));
}

double outcome_mean(const DgpConfig& config, int a_t, std::span<const double> x_t, std::span<const double> x_prev) {
    const double shift = static_cast<double>(a_t) - 0.5;
    switch (config.kind) {
        case DgpKind::Gamma:
        case DgpKind::Pi: {
            const double m = mean_of(x_t);
            return 0.5 * std::exp(-m * m) * shift;
        }
        case DgpKind::N: {
            double c = 0.0;
            for (double v : x_t) c += std::cos(v);
            c /= static_cast<double>(x_t.size());
            return 0.5 * std::exp(-c * c) * shift;
        }
        case DgpKind::Mu: {
            // Depends on the lagged covariates X_{t-1}.
            double s = 0.0;
            for (double v : x_prev) s += std::cos(v) * std::cos(std::cos(v));
            s /= static_cast<double>(x_prev.size());
            return std::exp(0.5 * shift * s);
        }
    }
    throw ConfigError("unknown generator kind");
}

double treatment_probability(const DgpConfig& config, const Trajectory& tr, int t) {
    const double y_prev = t > 0 ? tr.y(t - 1) : 0.0;
    const int a_prev = t > 0 ? tr.a(t - 1) : 0;
    return sigmoid(treatment_logit(config, tr.x_row(t), y_prev, a_prev));
}

// --- mutable path used by simulation and rollouts ----------------------------

namespace {

struct PathBuffer {
    int dx = 1;
    std::vector<double> x;  // row-major (time, dim)
    std::vector<int> a;
    std::vector<double> y;

    PathBuffer(int length, int covariate_dim)
        : dx(covariate_dim),
          x(static_cast<std::size_t>(length) * static_cast<std::size_t>(covariate_dim), 0.0),
          a(static_cast<std::size_t>(length), 0),
          y(static_cast<std::size_t>(length), 0.0) {}

    std::span<double> row(int t) { return {x.data() + static_cast<std::size_t>(t) * dx, static_cast<std::size_t>(dx)}; }
    std::span<const double> row(int t) const {
        return {x.data() + static_cast<std::size_t>(t) * dx, static_cast<std::size_t>(dx)};
    }

    // Copies the history H_l (X_0..X_l, A/Y up to l-1) from a trajectory.
    void load_history(const Trajectory& tr, int l) {
        for (int t = 0; t <= l; ++t) {
            auto src = tr.x_row(t);
            std::copy(src.begin(), src.end(), row(t).begin());
        }
        for (int t = 0; t < l; ++t) {
            a[static_cast<std::size_t>(t)] = tr.a(t);
            y[static_cast<std::size_t>(t)] = tr.y(t);
        }
    }

    double propensity_treated(const DgpConfig& c, int t) const {
        const double y_prev = t > 0 ? y[static_cast<std::size_t>(t - 1)] : 0.0;
        const int a_prev = t > 0 ? a[static_cast<std::size_t>(t - 1)] : 0;
        return sigmoid(treatment_logit(c, row(t), y_prev, a_prev));
    }

    double mean_outcome(const DgpConfig& c, int t, int a_t) const {
        static thread_local std::vector<double> zeros;
        if (t > 0) return outcome_mean(c, a_t, row(t), row(t - 1));
        zeros.assign(static_cast<std::size_t>(dx), 0.0);
        return outcome_mean(c, a_t, row(t), zeros);
    }

    Trajectory to_trajectory(std::int64_t id, int length) const {
        RowMatrix m(length, dx);
        std::copy(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(length) * dx, m.data());
        return Trajectory(id, std::move(m), std::vector<int>(a.begin(), a.begin() + length),
                          std::vector<double>(y.begin(), y.begin() + length));
    }
};

// Advances the path from time `from` (X_from already present) through `to`.
// forced == nullptr draws treatments from the propensity; otherwise forced
// gives the value for each time j in [from, to] via forced->at(j). The uniform
// for A_j is always consumed so forced and observational paths stay aligned.
void advance(const DgpConfig& c, PathBuffer& path, int from, int to, const InterventionPlan* forced,
             RandomStream& rng) {
    for (int j = from; j <= to; ++j) {
        const double u = rng.uniform();
        const int a_j = forced ? forced->at(j) : (u < path.propensity_treated(c, j) ? 1 : 0);
        path.a[static_cast<std::size_t>(j)] = a_j;
        path.y[static_cast<std::size_t>(j)] = path.mean_outcome(c, j, a_j) + c.sigma_y * rng.normal();
        if (j < to) {
            auto prev = path.row(j);
            auto next = path.row(j + 1);
            for (int p = 0; p < path.dx; ++p) next[static_cast<std::size_t>(p)] = 0.5 * prev[static_cast<std::size_t>(p)] + c.sigma_x * rng.normal();
        }
    }
}

constexpr std::uint64_t kTrainStream = 0x7121;
constexpr std::uint64_t kTestStream = 0x7e57;
constexpr std::uint64_t kRolloutStream = 0x2011;

Dataset simulate_stream(const DgpConfig& config, std::uint64_t seed, int n, std::uint64_t stream,
                        std::int64_t id_offset, const char* part) {
    config.validate();
    std::vector<Trajectory> rows;
    rows.reserve(static_cast<std::size_t>(n));
    PathBuffer path(config.length, config.covariate_dim);
    for (int i = 0; i < n; ++i) {
        RandomStream rng(derive_seed(seed, {stream, static_cast<std::uint64_t>(i)}));
        for (int p = 0; p < config.covariate_dim; ++p) path.row(0)[static_cast<std::size_t>(p)] = rng.normal();
        advance(config, path, 0, config.length - 1, nullptr, rng);
        rows.push_back(path.to_trajectory(id_offset + i, config.length));
    }
    DatasetMeta meta{"synthetic-" + to_string(config.kind), seed, to_json(config)};
    meta.params["part"] = part;
    return Dataset(std::move(rows), std::move(meta));
}

void check_rollout_args(const DgpConfig& config, const HistoryView& h, const std::optional<InterventionPlan>& plan,
                        int rollouts) {
    if (rollouts < 1) throw ParameterError("need at least one rollout");
    const int t = h.anchor();
    if (plan && plan->start() != t) throw ParameterError("plan does not start at the history anchor");
    const int end = plan ? plan->end() : t + config.horizon;
    if (end >= config.length) throw HorizonError("anchor + horizon exceeds trajectory length");
    if (h.trajectory().covariate_dim() != config.covariate_dim) throw ShapeError("covariate dimension mismatch");
}

}  // namespace

Dataset simulate(const DgpConfig& config, std::uint64_t seed) {
    return simulate_stream(config, seed, config.n_train, kTrainStream, 0, "train");
}

Dataset simulate_test(const DgpConfig& config, std::uint64_t seed) {
    return simulate_stream(config, seed, config.n_test, kTestStream, kTestIdOffset, "test");
}

std::vector<Future> conditional_rollout(const DgpConfig& config, const HistoryView& h,
                                        const std::optional<InterventionPlan>& plan, int rollouts,
                                        std::uint64_t seed) {
    check_rollout_args(config, h, plan, rollouts);
    const int t = h.anchor();
    const int end = plan ? plan->end() : t + config.horizon;
    PathBuffer path(end + 1, config.covariate_dim);
    path.load_history(h.trajectory(), t);
    std::vector<Future> out;
    out.reserve(static_cast<std::size_t>(rollouts));
    for (int m = 0; m < rollouts; ++m) {
        RandomStream rng(derive_seed(seed, {kRolloutStream, static_cast<std::uint64_t>(m)}));
        advance(config, path, t, end, plan ? &*plan : nullptr, rng);
        Future f;
        f.x = RowMatrix(end - t + 1, config.covariate_dim);
        for (int j = t; j <= end; ++j) {
            auto r = path.row(j);
            std::copy(r.begin(), r.end(), f.x.row(j - t).data());
            f.a.push_back(path.a[static_cast<std::size_t>(j)]);
            f.y.push_back(path.y[static_cast<std::size_t>(j)]);
        }
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<Trajectory> rollout_trajectories(const DgpConfig& config, const HistoryView& h,
                                             const std::optional<InterventionPlan>& plan, int rollouts,
                                             std::uint64_t seed) {
    check_rollout_args(config, h, plan, rollouts);
    const int t = h.anchor();
    const int end = plan ? plan->end() : t + config.horizon;
    PathBuffer path(end + 1, config.covariate_dim);
    path.load_history(h.trajectory(), t);
    std::vector<Trajectory> out;
    out.reserve(static_cast<std::size_t>(rollouts));
    for (int m = 0; m < rollouts; ++m) {
        RandomStream rng(derive_seed(seed, {kRolloutStream, static_cast<std::uint64_t>(m)}));
        advance(config, path, t, end, plan ? &*plan : nullptr, rng);
        out.push_back(path.to_trajectory(h.trajectory().id(), end + 1));
    }
    return out;
}

namespace {

Estimate mean_estimate(double sum, double sum_sq, int n) {
    const double mean = sum / n;
    const double var = n > 1 ? std::max(0.0, (sum_sq - n * mean * mean) / (n - 1)) : 0.0;
    return {mean, std::sqrt(var / n), false};
}

}  // namespace

Estimate ground_truth_cate(const DgpConfig& config, const HistoryView& h, const InterventionPlan& plan_a,
                           const InterventionPlan& plan_b, int rollouts, std::uint64_t seed) {
    if (plan_a.start() != plan_b.start() || plan_a.horizon() != plan_b.horizon()) {
        throw ParameterError("plans must share anchor and horizon");
    }
    check_rollout_args(config, h, plan_a, rollouts);
    const int t = h.anchor();
    const int end = plan_a.end();
    PathBuffer pa(end + 1, config.covariate_dim);
    PathBuffer pb(end + 1, config.covariate_dim);
    pa.load_history(h.trajectory(), t);
    pb.load_history(h.trajectory(), t);
    double sum = 0.0, sum_sq = 0.0;
    for (int m = 0; m < rollouts; ++m) {
        const auto s = derive_seed(seed, {kRolloutStream, static_cast<std::uint64_t>(m)});
        RandomStream ra(s), rb(s);
        advance(config, pa, t, end, &plan_a, ra);
        advance(config, pb, t, end, &plan_b, rb);
        const double d = pa.y[static_cast<std::size_t>(end)] - pb.y[static_cast<std::size_t>(end)];
        sum += d;
        sum_sq += d * d;
    }
    return mean_estimate(sum, sum_sq, rollouts);
}

Estimate ground_truth_capo(const DgpConfig& config, const HistoryView& h, const InterventionPlan& plan,
                           int rollouts, std::uint64_t seed) {
    check_rollout_args(config, h, plan, rollouts);
    const int t = h.anchor();
    const int end = plan.end();
    PathBuffer p(end + 1, config.covariate_dim);
    p.load_history(h.trajectory(), t);
    double sum = 0.0, sum_sq = 0.0;
    for (int m = 0; m < rollouts; ++m) {
        RandomStream rng(derive_seed(seed, {kRolloutStream, static_cast<std::uint64_t>(m)}));
        advance(config, p, t, end, &plan, rng);
        const double v = p.y[static_cast<std::size_t>(end)];
        sum += v;
        sum_sq += v * v;
    }
    return mean_estimate(sum, sum_sq, rollouts);
}

std::optional<double> exact_cate(const DgpConfig& config, const HistoryView& h, const InterventionPlan& plan_a,
                                 const InterventionPlan& plan_b) {
    if (plan_a.start() != h.anchor() || plan_b.start() != h.anchor() || plan_a.horizon() != plan_b.horizon()) {
        throw ParameterError("plans must share the history anchor and horizon");
    }
    OracleNuisanceSet qa(config, plan_a, OracleMethod::Quadrature, 1, 0);
    OracleNuisanceSet qb(config, plan_b, OracleMethod::Quadrature, 1, 0);
    const auto ea = qa.response(h.trajectory(), h.anchor());
    const auto eb = qb.response(h.trajectory(), h.anchor());
    if (!ea.exact || !eb.exact) return std::nullopt;
    return ea.value - eb.value;
}

std::vector<double> ground_truth_column(const DgpConfig& config, const Dataset& test, const InterventionPlan& plan_a,
                                        const InterventionPlan& plan_b, int rollouts, std::uint64_t seed,
                                        bool prefer_exact) {
    std::vector<double> out;
    out.reserve(test.size());
    for (const auto& tr : test.trajectories()) {
        const HistoryView h(tr, plan_a.start());
        if (prefer_exact) {
            if (auto v = exact_cate(config, h, plan_a, plan_b)) {
                out.push_back(*v);
                continue;
            }
        }
        const auto s = derive_seed(seed, {0x67a7ULL, static_cast<std::uint64_t>(tr.id())});
        out.push_back(ground_truth_cate(config, h, plan_a, plan_b, rollouts, s).value);
    }
    return out;
}

// --- quadrature ----------------------------------------------------------------

const StandardNormalRule& standard_normal_rule(int points) {
    static std::mutex mu;
    static std::map<int, std::unique_ptr<StandardNormalRule>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[points];
    if (!slot) {
        // Physicists' Hermite rule (weight exp(-x^2)); rescale to N(0, 1).
        auto* w = gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, static_cast<std::size_t>(points), 0.0,
                                              1.0, 0.0, 0.0);
        auto rule = std::make_unique<StandardNormalRule>();
        const double* xs = gsl_integration_fixed_nodes(w);
        const double* ws = gsl_integration_fixed_weights(w);
        double total = 0.0;
        for (int i = 0; i < points; ++i) total += ws[i];
        for (int i = 0; i < points; ++i) {
            rule->nodes.push_back(std::sqrt(2.0) * xs[i]);
            rule->weights.push_back(ws[i] / total);
        }
        gsl_integration_fixed_free(w);
        slot = std::move(rule);
    }
    return *slot;
}

namespace {

void expand_future(const DgpConfig& c, PathBuffer& path, int j, int end, double weight,
                   const StandardNormalRule& rule, std::int64_t id, std::vector<WeightedPath>& out) {
    const double p1 = path.propensity_treated(c, j);
    for (int a = 0; a <= 1; ++a) {
        const double pa = a == 1 ? p1 : 1.0 - p1;
        if (pa == 0.0) continue;
        path.a[static_cast<std::size_t>(j)] = a;
        const double mean_y = path.mean_outcome(c, j, a);
        if (j == end) {
            path.y[static_cast<std::size_t>(j)] = mean_y;
            out.push_back({path.to_trajectory(id, end + 1), weight * pa});
            continue;
        }
        // Odometer over the outcome noise and every covariate noise at j + 1.
        const auto q = rule.nodes.size();
        std::vector<std::size_t> idx(static_cast<std::size_t>(1 + c.covariate_dim), 0);
        while (true) {
            double w = weight * pa * rule.weights[idx[0]];
            path.y[static_cast<std::size_t>(j)] = mean_y + c.sigma_y * rule.nodes[idx[0]];
            auto prev = path.row(j);
            auto next = path.row(j + 1);
            for (int p = 0; p < c.covariate_dim; ++p) {
                const auto k = idx[static_cast<std::size_t>(p + 1)];
                next[static_cast<std::size_t>(p)] = 0.5 * prev[static_cast<std::size_t>(p)] + c.sigma_x * rule.nodes[k];
                w *= rule.weights[k];
            }
            expand_future(c, path, j + 1, end, w, rule, id, out);
            std::size_t d = 0;
            while (d < idx.size() && ++idx[d] == q) idx[d++] = 0;
            if (d == idx.size()) break;
        }
    }
}

}  // namespace

std::vector<WeightedPath> future_quadrature(const DgpConfig& config, const HistoryView& h, int end, int points) {
    const int t = h.anchor();
    if (end < t) throw ParameterError("future must end at or after the anchor");
    if (end >= config.length) throw HorizonError("future extends past the trajectory length");
    if (points < 2) throw ParameterError("quadrature needs at least two points");
    if (h.trajectory().covariate_dim() != config.covariate_dim) throw ShapeError("covariate dimension mismatch");
    const double per_step = 2.0 * std::pow(static_cast<double>(points), 1 + config.covariate_dim);
    if (std::pow(per_step, end - t) * 2.0 > 5e6) throw ParameterError("quadrature tree too large; lower points");
    const auto& rule = standard_normal_rule(points);
    PathBuffer path(end + 1, config.covariate_dim);
    path.load_history(h.trajectory(), t);
    std::vector<WeightedPath> out;
    expand_future(config, path, t, end, 1.0, rule, h.trajectory().id(), out);
    return out;
}

// --- oracle nuisances ------------------------------------------------------------

namespace {

constexpr std::uint64_t kResponseTag = 0x1;
constexpr std::uint64_t kWeightTag = 0x2;
constexpr std::uint64_t kPathTag = 0x3;

double plan_probability(double p_treated, int plan_value) { return plan_value == 1 ? p_treated : 1.0 - p_treated; }

// E[exp(-M^2)] for M ~ N(m, v).
double expected_gaussian_bump(double m, double v) {
    const double s = 1.0 + 2.0 * v;
    return std::exp(-m * m / s) / std::sqrt(s);
}

}  // namespace

OracleNuisanceSet::OracleNuisanceSet(DgpConfig config, InterventionPlan plan, OracleMethod method, int rollouts,
                                     std::uint64_t seed)
    : config_(std::move(config)), plan_(std::move(plan)), method_(method), rollouts_(rollouts), seed_(seed) {
    if (rollouts_ < 1) throw ParameterError("oracle needs at least one rollout");
    plan_.check_fits(config_.length);
}

std::uint64_t OracleNuisanceSet::query_seed(const Trajectory& tr, int j, int l, std::uint64_t tag) const {
    // Hash of the conditioning history so distinct histories get distinct streams.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
    };
    for (int t = 0; t <= l; ++t) {
        auto r = tr.x_row(t);
        feed(r.data(), r.size() * sizeof(double));
        if (t < l) {
            const double y = tr.y(t);
            const int a = tr.a(t);
            feed(&y, sizeof y);
            feed(&a, sizeof a);
        }
    }
    return derive_seed(seed_, {tag, h, static_cast<std::uint64_t>(j), static_cast<std::uint64_t>(l)});
}

double OracleNuisanceSet::propensity(const Trajectory& tr, int j) const {
    return plan_probability(treatment_probability(config_, tr, j), plan_.at(j));
}

Estimate OracleNuisanceSet::response(const Trajectory& tr, int j) const {
    const int end = plan_.end();
    if (j < plan_.start() || j > end) throw IndexError("response index outside plan");
    const int a_end = plan_.at(end);
    if (method_ == OracleMethod::Quadrature) {
        switch (config_.kind) {
            case DgpKind::Gamma:
            case DgpKind::Pi: {
                const int k = end - j;
                const double m = std::pow(0.5, k) * mean_of(tr.x_row(j));
                double v = 0.0;
                for (int i = 0; i < k; ++i) v += std::pow(0.25, i);
                v *= config_.sigma_x * config_.sigma_x / config_.covariate_dim;
                return {0.5 * (a_end - 0.5) * expected_gaussian_bump(m, v), 0.0, true};
            }
            case DgpKind::Mu:
                // f_y reads X_{end-1}, which is already part of H_j for j >= end - 1.
                if (j >= end - 1 && end >= 1) {
                    return {outcome_mean(config_, a_end, tr.x_row(end), tr.x_row(end - 1)), 0.0, true};
                }
                break;
            case DgpKind::N:
                if (j == end) {
                    std::vector<double> zeros(static_cast<std::size_t>(config_.covariate_dim), 0.0);
                    return {outcome_mean(config_, a_end, tr.x_row(end), end > 0 ? tr.x_row(end - 1) : zeros), 0.0,
                            true};
                }
                break;
        }
    }
    // Forced rollouts from H_j; the terminal outcome is replaced by its
    // conditional mean, which leaves the expectation unchanged.
    PathBuffer path(end + 1, config_.covariate_dim);
    path.load_history(tr, j);
    const auto base = query_seed(tr, j, j, kResponseTag);
    double sum = 0.0, sum_sq = 0.0;
    for (int m = 0; m < rollouts_; ++m) {
        RandomStream rng(derive_seed(base, {static_cast<std::uint64_t>(m)}));
        advance(config_, path, j, end, &plan_, rng);
        const double v = path.mean_outcome(config_, end, a_end);
        sum += v;
        sum_sq += v * v;
    }
    return mean_estimate(sum, sum_sq, rollouts_);
}

Estimate OracleNuisanceSet::weight(const Trajectory& tr, int j, int l) const {
    const int end = plan_.end();
    if (j < plan_.start() || j > end + 1 || l < plan_.start() || l > end) {
        throw IndexError("weight indices outside plan");
    }
    if (j == end + 1) return {1.0, 0.0, true};
    if (l == end) {
        // Everything from j on is known given H_end.
        double prod = 1.0;
        for (int k = j; k <= end; ++k) prod *= propensity(tr, k);
        return {prod, 0.0, true};
    }
    if (method_ == OracleMethod::Quadrature && l == end - 1 && j >= l) {
        // E[pi_end(H_end) | H_l]: sum over A_l, Gaussian integral over the
        // treatment index at end, which is linear-Gaussian given (H_l, A_l).
        const auto& rule = standard_normal_rule();
        const double p_l = treatment_probability(config_, tr, l);
        std::vector<double> zeros(static_cast<std::size_t>(config_.covariate_dim), 0.0);
        const auto x_prev = l > 0 ? tr.x_row(l - 1) : std::span<const double>(zeros);
        const double mx = mean_of(tr.x_row(l));
        const double sd = std::sqrt(0.25 * config_.sigma_x * config_.sigma_x / config_.covariate_dim +
                                    0.25 * config_.sigma_y * config_.sigma_y);
        double tail = 0.0;
        for (int alpha = 0; alpha <= 1; ++alpha) {
            const double m = 0.25 * mx + 0.5 * outcome_mean(config_, alpha, tr.x_row(l), x_prev) - 0.5 * (alpha - 0.5);
            double e = 0.0;
            for (std::size_t q = 0; q < rule.nodes.size(); ++q) {
                const double p_end = sigmoid(logit_from_index(config_, m + sd * rule.nodes[q]));
                e += rule.weights[q] * plan_probability(p_end, plan_.at(end));
            }
            tail += (alpha == 1 ? p_l : 1.0 - p_l) * e;
        }
        const double head = j == l ? propensity(tr, l) : 1.0;
        return {head * tail, 0.0, true};
    }
    // Observational rollouts from H_l; propensities before l are read off the prefix.
    double known = 1.0;
    for (int k = j; k < l; ++k) known *= propensity(tr, k);
    PathBuffer path(end + 1, config_.covariate_dim);
    path.load_history(tr, l);
    const auto base = query_seed(tr, j, l, kWeightTag);
    double sum = 0.0, sum_sq = 0.0;
    for (int m = 0; m < rollouts_; ++m) {
        RandomStream rng(derive_seed(base, {static_cast<std::uint64_t>(m)}));
        advance(config_, path, l, end, nullptr, rng);
        double prod = known;
        for (int k = std::max(j, l); k <= end; ++k) prod *= plan_probability(path.propensity_treated(config_, k), plan_.at(k));
        sum += prod;
        sum_sq += prod * prod;
    }
    return mean_estimate(sum, sum_sq, rollouts_);
}

Estimate OracleNuisanceSet::path_probability(const Trajectory& tr, int j, int l) const {
    const int end = plan_.end();
    if (j < l || j > end + 1 || l < plan_.start() || l > end) throw IndexError("path indices outside plan");
    if (j == end + 1) return {1.0, 0.0, true};
    PathBuffer path(end + 1, config_.covariate_dim);
    path.load_history(tr, l);
    const auto base = query_seed(tr, j, l, kPathTag);
    double hits = 0.0;
    for (int m = 0; m < rollouts_; ++m) {
        RandomStream rng(derive_seed(base, {static_cast<std::uint64_t>(m)}));
        advance(config_, path, l, end, nullptr, rng);
        bool follows = true;
        for (int k = j; k <= end && follows; ++k) follows = path.a[static_cast<std::size_t>(k)] == plan_.at(k);
        hits += follows ? 1.0 : 0.0;
    }
    return mean_estimate(hits, hits, rollouts_);
}

EvaluatedNuisances OracleNuisanceSet::evaluate(const Trajectory& tr, int anchor) const {
    if (anchor != plan_.start()) throw UsageError("oracle evaluated at an anchor different from the plan start");
    const int tau = plan_.horizon();
    if (anchor + tau >= tr.length()) throw HorizonError("anchor + horizon exceeds trajectory length");
    EvaluatedNuisances ev;
    ev.anchor = anchor;
    ev.horizon = tau;
    for (int i = 0; i <= tau; ++i) {
        const int j = anchor + i;
        ev.propensity.push_back(propensity(tr, j));
        ev.response.push_back(response(tr, j).value);
        ev.weight.push_back(weight(tr, j, j).value);
        ev.next_weight.push_back(weight(tr, j + 1, j).value);
    }
    return ev;
}

}  // namespace wolearn
