#include "wolearn/core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "wolearn/error.hpp"
#include "wolearn/rng.hpp"

namespace wolearn {

using nlohmann::json;

Trajectory::Trajectory(std::int64_t id, RowMatrix covariates, std::vector<int> treatments,
                       std::vector<double> outcomes)
    : id_(id),
      covariates_(std::move(covariates)),
      treatments_(std::move(treatments)),
      outcomes_(std::move(outcomes)) {
    const auto T = treatments_.size();
    if (T == 0) throw DataError("trajectory " + std::to_string(id_) + ": empty");
    if (outcomes_.size() != T || static_cast<std::size_t>(covariates_.rows()) != T) {
        throw DataError("trajectory " + std::to_string(id_) + ": sequence lengths differ");
    }
    if (covariates_.cols() < 1) throw DataError("trajectory " + std::to_string(id_) + ": no covariates");
    for (int a : treatments_) {
        if (a != 0 && a != 1) throw DataError("trajectory " + std::to_string(id_) + ": non-binary treatment");
    }
    if (!covariates_.allFinite() ||
        !std::all_of(outcomes_.begin(), outcomes_.end(), [](double v) { return std::isfinite(v); })) {
        throw DataError("trajectory " + std::to_string(id_) + ": missing or non-finite entry");
    }
}

bool Trajectory::operator==(const Trajectory& other) const {
    return id_ == other.id_ && treatments_ == other.treatments_ && outcomes_ == other.outcomes_ &&
           covariates_.rows() == other.covariates_.rows() &&
           covariates_.cols() == other.covariates_.cols() && covariates_ == other.covariates_;
}

HistoryView::HistoryView(const Trajectory& trajectory, int anchor) : trajectory_(&trajectory), anchor_(anchor) {
    if (anchor < 0 || anchor >= trajectory.length()) {
        throw IndexError("anchor " + std::to_string(anchor) + " outside [0, " +
                         std::to_string(trajectory.length()) + ")");
    }
}

double HistoryView::x(int s, int p) const {
    if (s < 0 || s > anchor_) throw IndexError("covariate time outside history");
    return trajectory_->x(s, p);
}

double HistoryView::lagged_y(int s) const {
    if (s > anchor_) throw IndexError("lag outside history");
    return s <= 0 ? 0.0 : trajectory_->y(s - 1);
}

int HistoryView::lagged_a(int s) const {
    if (s > anchor_) throw IndexError("lag outside history");
    return s <= 0 ? 0 : trajectory_->a(s - 1);
}

InterventionPlan::InterventionPlan(int start, std::vector<int> values) : start_(start), values_(std::move(values)) {
    if (start_ < 0) throw ParameterError("plan start must be non-negative");
    if (values_.empty()) throw ParameterError("plan needs at least one treatment value");
    for (int v : values_) {
        if (v != 0 && v != 1) throw ParameterError("plan values must be 0 or 1");
    }
}

InterventionPlan InterventionPlan::constant(int start, int horizon, int value) {
    if (horizon < 0) throw ParameterError("negative horizon");
    return InterventionPlan(start, std::vector<int>(static_cast<std::size_t>(horizon) + 1, value));
}

bool InterventionPlan::complementary_to(const InterventionPlan& other) const {
    if (start_ != other.start_ || values_.size() != other.values_.size()) return false;
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (values_[i] + other.values_[i] != 1) return false;
    }
    return true;
}

void InterventionPlan::check_fits(int length) const {
    if (end() >= length) {
        throw HorizonError("plan ends at " + std::to_string(end()) + " but trajectories have length " +
                           std::to_string(length));
    }
}

Dataset::Dataset(std::vector<Trajectory> trajectories, DatasetMeta meta)
    : trajectories_(std::move(trajectories)), meta_(std::move(meta)) {
    if (!trajectories_.empty()) {
        length_ = trajectories_.front().length();
        covariate_dim_ = trajectories_.front().covariate_dim();
        for (const auto& tr : trajectories_) {
            if (tr.length() != length_ || tr.covariate_dim() != covariate_dim_) {
                throw DataError("dataset trajectories differ in length or covariate dimension");
            }
        }
    }
}

std::vector<std::int64_t> Dataset::ids() const {
    std::vector<std::int64_t> out;
    out.reserve(trajectories_.size());
    for (const auto& tr : trajectories_) out.push_back(tr.id());
    return out;
}

int feature_dimension(int window_steps, int covariate_dim) {
    return window_steps * covariate_dim + 2 * window_steps + 1;
}

namespace {

void fill_features(const Trajectory& tr, int anchor, int W, double* values, double* mask) {
    const int dx = tr.covariate_dim();
    const int y_off = W * dx;
    const int a_off = y_off + W;
    for (int k = 0; k < W; ++k) {
        const int s = anchor - W + 1 + k;
        const bool present = s >= 0;
        for (int p = 0; p < dx; ++p) {
            values[k * dx + p] = present ? tr.x(s, p) : 0.0;
            if (mask) mask[k * dx + p] = present ? 1.0 : 0.0;
        }
        const bool lag_present = s >= 1;
        values[y_off + k] = lag_present ? tr.y(s - 1) : 0.0;
        values[a_off + k] = lag_present ? static_cast<double>(tr.a(s - 1)) : 0.0;
        if (mask) {
            mask[y_off + k] = lag_present ? 1.0 : 0.0;
            mask[a_off + k] = lag_present ? 1.0 : 0.0;
        }
    }
    values[a_off + W] = static_cast<double>(anchor);
    if (mask) mask[a_off + W] = 1.0;
}

int checked_window(HistoryWindow window, int length) {
    const int W = window.resolve(length);
    if (W < 1 || W > length) {
        throw ParameterError("window must be in [1, " + std::to_string(length) + "]");
    }
    return W;
}

}  // namespace

FeatureVector featurize_history(const HistoryView& history, HistoryWindow window) {
    const auto& tr = history.trajectory();
    const int W = checked_window(window, tr.length());
    const int D = feature_dimension(W, tr.covariate_dim());
    FeatureVector fv{Eigen::VectorXd::Zero(D), Eigen::VectorXd::Zero(D)};
    fill_features(tr, history.anchor(), W, fv.values.data(), fv.mask.data());
    return fv;
}

RowMatrix featurize_rows(std::span<const Trajectory> rows, int anchor, HistoryWindow window) {
    if (rows.empty()) return RowMatrix(0, 0);
    const int T = rows.front().length();
    const int W = checked_window(window, T);
    const int D = feature_dimension(W, rows.front().covariate_dim());
    RowMatrix out(
        static_cast<Eigen::Index>(rows.size()), D);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& tr = rows[i];
        if (anchor < 0 || anchor >= tr.length()) throw IndexError("anchor outside trajectory");
        if (tr.length() != T) throw ShapeError("rows differ in length");
        fill_features(tr, anchor, W, out.row(static_cast<Eigen::Index>(i)).data(), nullptr);
    }
    return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double lambda, std::uint64_t seed) {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ParameterError("split fraction lambda must lie in (0,1)");
    const std::size_t n = data.size();
    if (n < 2) throw ParameterError("split needs at least two trajectories");
    const auto n_stage2 = static_cast<std::size_t>(std::floor(lambda * static_cast<double>(n)));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::mt19937_64 eng(derive_seed(seed, {0x5917ULL}));
    std::shuffle(perm.begin(), perm.end(), eng);

    std::vector<std::size_t> stage2_idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_stage2));
    std::vector<std::size_t> nuis_idx(perm.begin() + static_cast<std::ptrdiff_t>(n_stage2), perm.end());
    // Keep original order inside each split.
    std::sort(stage2_idx.begin(), stage2_idx.end());
    std::sort(nuis_idx.begin(), nuis_idx.end());

    auto gather = [&](const std::vector<std::size_t>& idx, const char* tag) {
        std::vector<Trajectory> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(data[i]);
        DatasetMeta meta = data.meta();
        meta.params["split"] = {{"part", tag}, {"lambda", lambda}, {"seed", seed}};
        return Dataset(std::move(out), std::move(meta));
    };
    return {gather(nuis_idx, "nuisance"), gather(stage2_idx, "stage2")};
}

json trajectory_to_json(const Trajectory& tr) {
    json x = json::array();
    for (int t = 0; t < tr.length(); ++t) {
        json row = json::array();
        for (int p = 0; p < tr.covariate_dim(); ++p) row.push_back(tr.x(t, p));
        x.push_back(std::move(row));
    }
    return json{{"id", tr.id()},
                {"x", std::move(x)},
                {"a", std::vector<int>(tr.treatments().begin(), tr.treatments().end())},
                {"y", std::vector<double>(tr.outcomes().begin(), tr.outcomes().end())}};
}

Trajectory trajectory_from_json(const json& j) {
    try {
        const auto& xs = j.at("x");
        const auto T = static_cast<Eigen::Index>(xs.size());
        if (T == 0) throw DataError("trajectory without time steps");
        const auto dx = static_cast<Eigen::Index>(xs.at(0).size());
        RowMatrix x(T, dx);
        for (Eigen::Index t = 0; t < T; ++t) {
            const auto& row = xs.at(static_cast<std::size_t>(t));
            if (static_cast<Eigen::Index>(row.size()) != dx) throw DataError("ragged covariate rows");
            for (Eigen::Index p = 0; p < dx; ++p) {
                const auto& v = row.at(static_cast<std::size_t>(p));
                if (v.is_null()) throw DataError("missing covariate entry");
                x(t, p) = v.get<double>();
            }
        }
        return Trajectory(j.at("id").get<std::int64_t>(), std::move(x), j.at("a").get<std::vector<int>>(),
                          j.at("y").get<std::vector<double>>());
    } catch (const json::exception& e) {
        throw DataError(std::string("malformed trajectory record: ") + e.what());
    }
}

void write_jsonl(const Dataset& data, std::ostream& out) {
    const auto& m = data.meta();
    out << json{{"meta", {{"generator", m.generator}, {"seed", m.seed}, {"params", m.params}}}}.dump() << '\n';
    for (const auto& tr : data.trajectories()) out << trajectory_to_json(tr).dump() << '\n';
}

Dataset read_jsonl(std::istream& in) {
    std::string line;
    DatasetMeta meta;
    std::vector<Trajectory> rows;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw DataError(std::string("invalid JSON line: ") + e.what());
        }
        if (first && j.contains("meta")) {
            const auto& mj = j["meta"];
            meta.generator = mj.value("generator", std::string{});
            meta.seed = mj.value("seed", std::uint64_t{0});
            meta.params = mj.value("params", json::object());
            first = false;
            continue;
        }
        first = false;
        rows.push_back(trajectory_from_json(j));
    }
    return Dataset(std::move(rows), std::move(meta));
}

void save_jsonl(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot open " + path + " for writing");
    // Round-trippable doubles.
    out.precision(17);
    write_jsonl(data, out);
}

Dataset load_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    return read_jsonl(in);
}

}  // namespace wolearn
