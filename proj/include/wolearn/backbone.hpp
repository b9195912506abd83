#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "wolearn/core.hpp"

namespace wolearn {

enum class Task { Regression, Classification };
enum class Optimizer { Sgd, Adam };

std::string to_string(Task task);
std::string to_string(Optimizer optimizer);
Optimizer optimizer_from_string(const std::string& name);

struct Hyperparameters {
    double learning_rate = 1e-3;
    int epochs = 100;
    int batch_size = 64;
    std::vector<int> hidden_sizes{64, 32};  // empty gives a linear model
    Optimizer optimizer = Optimizer::Adam;
    // Held-out share of rows for early stopping; 0 trains for all epochs.
    double validation_fraction = 0.2;
    int patience = 20;
    double weight_decay = 0.0;  // L2 penalty on weights (not biases)
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json to_json(const Hyperparameters& hyper);
Hyperparameters hyperparameters_from_json(const nlohmann::json& j);

struct Layer {
    Eigen::MatrixXd weight;  // out x in
    Eigen::VectorXd bias;
};

// Fully connected network with tanh hidden units on z-scored inputs. The
// output is linear for regression and passed through a sigmoid for
// classification.
class Model {
public:
    Model() = default;
    Model(Task task, int input_dim, const Hyperparameters& hyper);

    Task task() const { return task_; }
    int input_dim() const { return input_dim_; }
    const Hyperparameters& hyperparameters() const { return hyper_; }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    const std::vector<double>& training_log() const { return log_; }
    // Per-epoch held-out loss (empty without early stopping) and the epoch kept
    // (-1 when the initial model was best).
    const std::vector<double>& validation_log() const { return val_log_; }
    int best_epoch() const { return best_epoch_; }

    const Eigen::VectorXd& feature_mean() const { return mean_; }
    const Eigen::VectorXd& feature_scale() const { return scale_; }
    void set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale);
    void fit_standardization(const RowMatrix& features);

    Eigen::VectorXd predict(const RowMatrix& features) const;
    // Raw output before the sigmoid (equal to predict for regression).
    Eigen::VectorXd predict_raw(const RowMatrix& features) const;

    std::size_t parameter_count() const;
    Eigen::VectorXd flat_parameters() const;
    void set_flat_parameters(const Eigen::VectorXd& params);

    // Weighted loss (1/normalizer) sum_i w_i l_i and its gradient in flat order.
    double loss(const RowMatrix& features, const Eigen::VectorXd& targets, const Eigen::VectorXd& weights,
                double normalizer) const;
    double loss_and_gradient(const RowMatrix& features, const Eigen::VectorXd& targets,
                             const Eigen::VectorXd& weights, double normalizer, Eigen::VectorXd& gradient) const;

    nlohmann::json to_json() const;
    static Model from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static Model load(const std::string& path);

    std::vector<double>& mutable_log() { return log_; }
    std::vector<double>& mutable_validation_log() { return val_log_; }
    void set_best_epoch(int epoch) { best_epoch_ = epoch; }

private:
    Eigen::MatrixXd standardize(const RowMatrix& features) const;

    Task task_ = Task::Regression;
    int input_dim_ = 0;
    Hyperparameters hyper_;
    std::vector<Layer> layers_;
    Eigen::VectorXd mean_;
    Eigen::VectorXd scale_;
    std::vector<double> log_;
    std::vector<double> val_log_;
    int best_epoch_ = -1;
};

// Minimizes (1/normalizer) sum_i w_i (f(x_i) - y_i)^2 by minibatch descent.
// weights may be empty (uniform) and may contain negative entries; the
// normalizer defaults to sum(w) and must be positive.
Model fit_regressor(const RowMatrix& features, const Eigen::VectorXd& targets, const Eigen::VectorXd& weights,
                    const Hyperparameters& hyper, std::optional<double> normalizer = std::nullopt);

// Weighted cross-entropy; predictions are P(label = 1 | x).
Model fit_classifier(const RowMatrix& features, const Eigen::VectorXd& labels, const Hyperparameters& hyper,
                     const Eigen::VectorXd& weights = {});

Eigen::VectorXd predict(const Model& model, const RowMatrix& features);

struct Batch {
    RowMatrix features;
    Eigen::VectorXd targets;
    Eigen::VectorXd weights;  // empty means uniform
};

// Max over parameters of |g_fd - g_an| / max(|g_fd|, |g_an|, 1e-8) using central differences.
double gradient_check(const Model& model, const Batch& batch, double epsilon);

}  // namespace wolearn
