#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

namespace wolearn {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// One unit's complete panel: covariates X (T x d_x), binary treatments A and
// real outcomes Y, all of length T. Immutable after construction.
class Trajectory {
public:
    Trajectory(std::int64_t id, RowMatrix covariates, std::vector<int> treatments,
               std::vector<double> outcomes);

    std::int64_t id() const { return id_; }
    int length() const { return static_cast<int>(treatments_.size()); }
    int covariate_dim() const { return static_cast<int>(covariates_.cols()); }

    const RowMatrix& covariates() const { return covariates_; }
    double x(int t, int p) const { return covariates_(t, p); }
    std::span<const double> x_row(int t) const {
        return {covariates_.data() + static_cast<std::ptrdiff_t>(t) * covariates_.cols(),
                static_cast<std::size_t>(covariates_.cols())};
    }
    int a(int t) const { return treatments_[static_cast<std::size_t>(t)]; }
    double y(int t) const { return outcomes_[static_cast<std::size_t>(t)]; }
    std::span<const int> treatments() const { return treatments_; }
    std::span<const double> outcomes() const { return outcomes_; }

    bool operator==(const Trajectory& other) const;

private:
    std::int64_t id_;
    RowMatrix covariates_;
    std::vector<int> treatments_;
    std::vector<double> outcomes_;
};

// The observed history at an anchor t: (Y_0..Y_{t-1}, X_0..X_t, A_0..A_{t-1}).
// Outcome and treatment at the anchor itself are not part of the view.
class HistoryView {
public:
    HistoryView(const Trajectory& trajectory, int anchor);

    const Trajectory& trajectory() const { return *trajectory_; }
    int anchor() const { return anchor_; }

    double x(int s, int p) const;
    // Lagged outcome/treatment at time s-1 relative to slot s; s-1 must be < anchor.
    double lagged_y(int s) const;
    int lagged_a(int s) const;

private:
    const Trajectory* trajectory_;
    int anchor_;
};

// A fixed treatment sequence a_t, ..., a_{t+tau} starting at `start`.
class InterventionPlan {
public:
    InterventionPlan(int start, std::vector<int> values);

    static InterventionPlan constant(int start, int horizon, int value);

    int start() const { return start_; }
    int horizon() const { return static_cast<int>(values_.size()) - 1; }
    int end() const { return start_ + horizon(); }
    // Plan value at absolute time j (start <= j <= end).
    int at(int j) const { return values_[static_cast<std::size_t>(j - start_)]; }
    const std::vector<int>& values() const { return values_; }

    bool complementary_to(const InterventionPlan& other) const;
    bool operator==(const InterventionPlan&) const = default;

    // Throws HorizonError when the plan does not fit in a trajectory of length T.
    void check_fits(int length) const;

private:
    int start_;
    std::vector<int> values_;
};

struct DatasetMeta {
    std::string generator;
    std::uint64_t seed = 0;
    nlohmann::json params = nlohmann::json::object();
};

class Dataset {
public:
    Dataset() = default;
    Dataset(std::vector<Trajectory> trajectories, DatasetMeta meta);

    std::size_t size() const { return trajectories_.size(); }
    bool empty() const { return trajectories_.empty(); }
    int length() const { return length_; }
    int covariate_dim() const { return covariate_dim_; }
    const std::vector<Trajectory>& trajectories() const { return trajectories_; }
    const Trajectory& operator[](std::size_t i) const { return trajectories_[i]; }
    const DatasetMeta& meta() const { return meta_; }

    std::vector<std::int64_t> ids() const;

private:
    std::vector<Trajectory> trajectories_;
    DatasetMeta meta_;
    int length_ = 0;
    int covariate_dim_ = 0;
};

// Number of trailing time steps flattened into a feature vector; 0 means the
// full trajectory length.
struct HistoryWindow {
    int steps = 0;

    static HistoryWindow full() { return {}; }
    bool is_full() const { return steps == 0; }
    int resolve(int length) const { return is_full() ? length : steps; }
};

struct FeatureVector {
    Eigen::VectorXd values;
    Eigen::VectorXd mask;
};

// Layout: [X slots (W*d_x)] [lagged Y slots (W)] [lagged A slots (W)] [anchor].
// Slot k covers time s = t - W + 1 + k; slots with s < 0 are zero with mask 0,
// as are lag slots whose lag falls before time 0.
int feature_dimension(int window_steps, int covariate_dim);

FeatureVector featurize_history(const HistoryView& history, HistoryWindow window);

// Row i holds featurize_history(data[i] at anchor).values.
RowMatrix featurize_rows(std::span<const Trajectory> rows, int anchor, HistoryWindow window);

// Disjoint partition: first = nuisance split (ceil((1-lambda) n)),
// second = stage-2 split (floor(lambda n)). The permutation depends only on seed.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double lambda, std::uint64_t seed);

// JSON Lines: header line {"meta": {...}}, then one trajectory per line.
void write_jsonl(const Dataset& data, std::ostream& out);
Dataset read_jsonl(std::istream& in);
void save_jsonl(const Dataset& data, const std::string& path);
Dataset load_jsonl(const std::string& path);

nlohmann::json trajectory_to_json(const Trajectory& trajectory);
Trajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace wolearn
