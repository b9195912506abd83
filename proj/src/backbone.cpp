#include "wolearn/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "wolearn/error.hpp"
#include "wolearn/rng.hpp"

namespace wolearn {

using nlohmann::json;

std::string to_string(Task task) { return task == Task::Regression ? "regression" : "classification"; }

std::string to_string(Optimizer optimizer) { return optimizer == Optimizer::Sgd ? "sgd" : "adam"; }

Optimizer optimizer_from_string(const std::string& name) {
    if (name == "sgd") return Optimizer::Sgd;
    if (name == "adam") return Optimizer::Adam;
    throw ConfigError("unknown optimizer '" + name + "'");
}

void Hyperparameters::validate() const {
    if (!(learning_rate > 0.0)) throw ParameterError("learning_rate must be positive");
    if (epochs < 1) throw ParameterError("epochs must be positive");
    if (batch_size < 1) throw ParameterError("batch_size must be positive");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ParameterError("validation_fraction must lie in [0, 1)");
    }
    if (patience < 1) throw ParameterError("patience must be positive");
    if (!(weight_decay >= 0.0)) throw ParameterError("weight_decay must be non-negative");
    for (int h : hidden_sizes) {
        if (h < 1) throw ParameterError("hidden sizes must be positive");
    }
}

json to_json(const Hyperparameters& h) {
    return json{{"learning_rate", h.learning_rate}, {"epochs", h.epochs},
                {"batch_size", h.batch_size},       {"hidden_sizes", h.hidden_sizes},
                {"optimizer", to_string(h.optimizer)}, {"validation_fraction", h.validation_fraction},
                {"patience", h.patience},           {"weight_decay", h.weight_decay},           {"seed", h.seed}};
}

Hyperparameters hyperparameters_from_json(const json& j) {
    try {
        Hyperparameters h;
        h.learning_rate = j.value("learning_rate", h.learning_rate);
        h.epochs = j.value("epochs", h.epochs);
        h.batch_size = j.value("batch_size", h.batch_size);
        h.hidden_sizes = j.value("hidden_sizes", h.hidden_sizes);
        h.optimizer = optimizer_from_string(j.value("optimizer", to_string(h.optimizer)));
        h.validation_fraction = j.value("validation_fraction", h.validation_fraction);
        h.patience = j.value("patience", h.patience);
        h.weight_decay = j.value("weight_decay", h.weight_decay);
        h.seed = j.value("seed", h.seed);
        h.validate();
        return h;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed hyperparameters: ") + e.what());
    }
}

// --- model -------------------------------------------------------------------

Model::Model(Task task, int input_dim, const Hyperparameters& hyper)
    : task_(task), input_dim_(input_dim), hyper_(hyper) {
    hyper_.validate();
    if (input_dim < 1) throw ShapeError("input dimension must be positive");
    RandomStream rng(derive_seed(hyper.seed, {0xb0b0ULL}));
    int fan_in = input_dim;
    auto sizes = hyper.hidden_sizes;
    sizes.push_back(1);
    for (int fan_out : sizes) {
        Layer layer;
        const double limit = std::sqrt(6.0 / (fan_in + fan_out));
        layer.weight.resize(fan_out, fan_in);
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = limit * (2.0 * rng.uniform() - 1.0);
        }
        layer.bias = Eigen::VectorXd::Zero(fan_out);
        if (fan_out == 1 && layers_.size() == hyper.hidden_sizes.size()) layer.weight.setZero();
        layers_.push_back(std::move(layer));
        fan_in = fan_out;
    }
    mean_ = Eigen::VectorXd::Zero(input_dim);
    scale_ = Eigen::VectorXd::Ones(input_dim);
}

void Model::set_standardization(Eigen::VectorXd mean, Eigen::VectorXd scale) {
    if (mean.size() != input_dim_ || scale.size() != input_dim_) throw ShapeError("standardization size mismatch");
    mean_ = std::move(mean);
    scale_ = std::move(scale);
}

void Model::fit_standardization(const RowMatrix& x) {
    if (x.cols() != input_dim_) throw ShapeError("feature dimension mismatch");
    const double n = static_cast<double>(x.rows());
    Eigen::VectorXd mean = x.colwise().sum().transpose() / n;
    Eigen::VectorXd scale(input_dim_);
    for (int c = 0; c < input_dim_; ++c) {
        const double var = (x.col(c).array() - mean(c)).square().sum() / n;
        scale(c) = var > 1e-24 ? std::sqrt(var) : 1.0;
    }
    set_standardization(std::move(mean), std::move(scale));
}

Eigen::MatrixXd Model::standardize(const RowMatrix& x) const {
    if (x.cols() != input_dim_) {
        throw ShapeError("expected " + std::to_string(input_dim_) + " features, got " + std::to_string(x.cols()));
    }
    Eigen::MatrixXd z = x;
    z.rowwise() -= mean_.transpose();
    z.array().rowwise() /= scale_.transpose().array();
    return z;
}

Eigen::VectorXd Model::predict_raw(const RowMatrix& x) const {
    Eigen::MatrixXd h = standardize(x);
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd z = h * layers_[l].weight.transpose();
        z.rowwise() += layers_[l].bias.transpose();
        h = l + 1 < layers_.size() ? Eigen::MatrixXd(z.array().tanh()) : z;
    }
    return h.col(0);
}

Eigen::VectorXd Model::predict(const RowMatrix& x) const {
    Eigen::VectorXd raw = predict_raw(x);
    if (task_ == Task::Classification) raw = raw.unaryExpr([](double s) { return 1.0 / (1.0 + std::exp(-s)); });
    return raw;
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

Eigen::VectorXd Model::flat_parameters() const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(parameter_count()));
    Eigen::Index k = 0;
    for (const auto& l : layers_) {
        out.segment(k, l.weight.size()) = Eigen::Map<const Eigen::VectorXd>(l.weight.data(), l.weight.size());
        k += l.weight.size();
        out.segment(k, l.bias.size()) = l.bias;
        k += l.bias.size();
    }
    return out;
}

void Model::set_flat_parameters(const Eigen::VectorXd& p) {
    if (static_cast<std::size_t>(p.size()) != parameter_count()) throw ShapeError("parameter vector size mismatch");
    Eigen::Index k = 0;
    for (auto& l : layers_) {
        Eigen::Map<Eigen::VectorXd>(l.weight.data(), l.weight.size()) = p.segment(k, l.weight.size());
        k += l.weight.size();
        l.bias = p.segment(k, l.bias.size());
        k += l.bias.size();
    }
}

namespace {

double softplus(double s) { return s > 0 ? s + std::log1p(std::exp(-s)) : std::log1p(std::exp(s)); }

}  // namespace

double Model::loss(const RowMatrix& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double normalizer) const {
    const Eigen::VectorXd s = predict_raw(x);
    double total = 0.0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        const double wi = w.size() == 0 ? 1.0 : w(i);
        const double li = task_ == Task::Regression ? (s(i) - y(i)) * (s(i) - y(i)) : softplus(s(i)) - y(i) * s(i);
        total += wi * li;
    }
    return total / normalizer;
}

double Model::loss_and_gradient(const RowMatrix& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                                double normalizer, Eigen::VectorXd& grad) const {
    const Eigen::Index n = x.rows();
    if (y.size() != n || (w.size() != 0 && w.size() != n)) throw ShapeError("batch size mismatch");
    std::vector<Eigen::MatrixXd> acts;
    acts.reserve(layers_.size() + 1);
    acts.push_back(standardize(x));
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd z = acts.back() * layers_[l].weight.transpose();
        z.rowwise() += layers_[l].bias.transpose();
        if (l + 1 < layers_.size()) z = z.array().tanh();
        acts.push_back(std::move(z));
    }
    const Eigen::VectorXd s = acts.back().col(0);
    Eigen::MatrixXd delta(n, 1);
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double wi = w.size() == 0 ? 1.0 : w(i);
        if (task_ == Task::Regression) {
            const double r = s(i) - y(i);
            total += wi * r * r;
            delta(i, 0) = 2.0 * wi * r / normalizer;
        } else {
            const double p = 1.0 / (1.0 + std::exp(-s(i)));
            total += wi * (softplus(s(i)) - y(i) * s(i));
            delta(i, 0) = wi * (p - y(i)) / normalizer;
        }
    }
    grad.resize(static_cast<Eigen::Index>(parameter_count()));
    // Offsets of each layer in flat order.
    std::vector<Eigen::Index> offset(layers_.size());
    Eigen::Index k = 0;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        offset[l] = k;
        k += layers_[l].weight.size() + layers_[l].bias.size();
    }
    for (std::size_t l = layers_.size(); l-- > 0;) {
        const auto& layer = layers_[l];
        Eigen::MatrixXd gw = delta.transpose() * acts[l];  // out x in
        Eigen::VectorXd gb = delta.colwise().sum().transpose();
        grad.segment(offset[l], gw.size()) = Eigen::Map<const Eigen::VectorXd>(gw.data(), gw.size());
        grad.segment(offset[l] + gw.size(), gb.size()) = gb;
        if (l > 0) {
            Eigen::MatrixXd back = delta * layer.weight;
            delta = back.array() * (1.0 - acts[l].array().square());
        }
    }
    return total / normalizer;
}

json Model::to_json() const {
    json layers = json::array();
    for (const auto& l : layers_) {
        json rows = json::array();
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row.push_back(l.weight(r, c));
            rows.push_back(std::move(row));
        }
        layers.push_back({{"weight", std::move(rows)}, {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    return json{{"format", "wolearn-mlp"},
                {"version", 1},
                {"task", to_string(task_)},
                {"input_dim", input_dim_},
                {"hyperparameters", wolearn::to_json(hyper_)},
                {"feature_mean", std::vector<double>(mean_.data(), mean_.data() + mean_.size())},
                {"feature_scale", std::vector<double>(scale_.data(), scale_.data() + scale_.size())},
                {"layers", std::move(layers)},
                {"training_log", log_},
                {"validation_log", val_log_},
                {"best_epoch", best_epoch_}};
}

Model Model::from_json(const json& j) {
    try {
        if (j.at("format") != "wolearn-mlp" || j.at("version") != 1) throw ConfigError("unsupported checkpoint format");
        Model m;
        m.task_ = j.at("task") == "regression" ? Task::Regression : Task::Classification;
        m.input_dim_ = j.at("input_dim").get<int>();
        m.hyper_ = hyperparameters_from_json(j.at("hyperparameters"));
        auto mean = j.at("feature_mean").get<std::vector<double>>();
        auto scale = j.at("feature_scale").get<std::vector<double>>();
        m.mean_ = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
        m.scale_ = Eigen::Map<Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
        for (const auto& lj : j.at("layers")) {
            Layer l;
            const auto& rows = lj.at("weight");
            const auto r = static_cast<Eigen::Index>(rows.size());
            const auto c = r > 0 ? static_cast<Eigen::Index>(rows.at(0).size()) : 0;
            l.weight.resize(r, c);
            for (Eigen::Index a = 0; a < r; ++a) {
                for (Eigen::Index b = 0; b < c; ++b) {
                    l.weight(a, b) = rows.at(static_cast<std::size_t>(a)).at(static_cast<std::size_t>(b)).get<double>();
                }
            }
            auto bias = lj.at("bias").get<std::vector<double>>();
            l.bias = Eigen::Map<Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size()));
            m.layers_.push_back(std::move(l));
        }
        m.log_ = j.value("training_log", std::vector<double>{});
        m.val_log_ = j.value("validation_log", std::vector<double>{});
        m.best_epoch_ = j.value("best_epoch", -1);
        return m;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
}

void Model::save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error("cannot write checkpoint " + path);
    out << to_json().dump();
}

Model Model::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot read checkpoint " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed checkpoint: ") + e.what());
    }
    return from_json(j);
}

// --- training ------------------------------------------------------------------

namespace {

void check_inputs(const RowMatrix& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w) {
    if (x.rows() < 1) throw DataError("no training rows");
    if (y.size() != x.rows()) throw ShapeError("targets do not match feature rows");
    if (w.size() != 0 && w.size() != x.rows()) throw ShapeError("weights do not match feature rows");
    if (!x.allFinite()) throw DataError("non-finite feature value");
    if (!y.allFinite()) throw DataError("non-finite target value");
    if (w.size() != 0 && !w.allFinite()) throw DataError("non-finite weight");
}

RowMatrix gather_rows(const RowMatrix& x, const std::vector<Eigen::Index>& idx, std::size_t begin, std::size_t end) {
    RowMatrix out(static_cast<Eigen::Index>(end - begin), x.cols());
    for (std::size_t i = begin; i < end; ++i) out.row(static_cast<Eigen::Index>(i - begin)) = x.row(idx[i]);
    return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx, std::size_t begin,
                       std::size_t end) {
    if (v.size() == 0) return {};
    Eigen::VectorXd out(static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) out(static_cast<Eigen::Index>(i - begin)) = v(idx[i]);
    return out;
}

void train(Model& model, const RowMatrix& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w, double normalizer) {
    const auto& hyper = model.hyperparameters();
    const auto total = static_cast<std::size_t>(x.rows());
    std::vector<Eigen::Index> rows(total);
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    std::mt19937_64 shuffler(derive_seed(hyper.seed, {0x5bu}));

    // Held-out rows for early stopping.
    std::size_t n_val = static_cast<std::size_t>(std::floor(hyper.validation_fraction * static_cast<double>(total)));
    if (total < 10) n_val = 0;
    std::shuffle(rows.begin(), rows.end(), shuffler);
    std::vector<Eigen::Index> val_rows(rows.end() - static_cast<std::ptrdiff_t>(n_val), rows.end());
    std::vector<Eigen::Index> order(rows.begin(), rows.end() - static_cast<std::ptrdiff_t>(n_val));
    std::sort(order.begin(), order.end());
    const auto n = order.size();
    const double per_row = normalizer / static_cast<double>(total);
    RowMatrix xv;
    Eigen::VectorXd yv, wv;
    if (n_val > 0) {
        xv = gather_rows(x, val_rows, 0, n_val);
        yv = gather(y, val_rows, 0, n_val);
        wv = gather(w, val_rows, 0, n_val);
    }

    const auto batch = std::min(n, static_cast<std::size_t>(hyper.batch_size));
    Eigen::VectorXd theta = model.flat_parameters();
    Eigen::VectorXd decay_mask = Eigen::VectorXd::Zero(theta.size());
    {
        Eigen::Index k = 0;
        for (const auto& l : model.layers()) {
            decay_mask.segment(k, l.weight.size()).setOnes();
            k += l.weight.size() + l.bias.size();
        }
    }
    Eigen::VectorXd best = theta;
    double best_val = std::numeric_limits<double>::infinity();
    int since_best = 0;
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(theta.size());
    Eigen::VectorXd grad;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    long step = 0;
    auto& log = model.mutable_log();
    auto& val_log = model.mutable_validation_log();
    log.clear();
    val_log.clear();
    model.set_best_epoch(-1);
    // The initial model competes too; best_epoch stays -1 if it wins.
    if (n_val > 0) best_val = model.loss(xv, yv, wv, per_row * static_cast<double>(n_val));
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffler);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            RowMatrix xb = gather_rows(x, order, start, stop);
            Eigen::VectorXd yb = gather(y, order, start, stop);
            Eigen::VectorXd wb = gather(w, order, start, stop);
            // Minibatch estimate of the full-data loss.
            const double batch_norm = per_row * static_cast<double>(stop - start);
            epoch_loss += model.loss_and_gradient(xb, yb, wb, batch_norm, grad);
            if (hyper.weight_decay > 0.0) grad += 2.0 * hyper.weight_decay * decay_mask.cwiseProduct(theta);
            ++batches;
            ++step;
            if (hyper.optimizer == Optimizer::Sgd) {
                theta -= hyper.learning_rate * grad;
            } else {
                m1 = b1 * m1 + (1.0 - b1) * grad;
                m2 = b2 * m2 + (1.0 - b2) * grad.cwiseAbs2();
                const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
                const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
                theta.array() -= hyper.learning_rate * (m1.array() / c1) / ((m2.array() / c2).sqrt() + eps);
            }
            model.set_flat_parameters(theta);
        }
        log.push_back(epoch_loss / batches);
        if (n_val == 0) continue;
        const double v = model.loss(xv, yv, wv, per_row * static_cast<double>(n_val));
        val_log.push_back(v);
        if (v < best_val) {
            best_val = v;
            best = theta;
            since_best = 0;
            model.set_best_epoch(epoch);
        } else if (++since_best >= hyper.patience) {
            break;
        }
    }
    if (n_val > 0) model.set_flat_parameters(best);
}

}  // namespace

Model fit_regressor(const RowMatrix& x, const Eigen::VectorXd& y, const Eigen::VectorXd& w,
                    const Hyperparameters& hyper, std::optional<double> normalizer) {
    check_inputs(x, y, w);
    const double wsum = w.size() == 0 ? static_cast<double>(x.rows()) : w.sum();
    if (w.size() != 0 && w.cwiseAbs().maxCoeff() == 0.0) throw DegenerateWeightsError("all sample weights are zero");
    const double norm = normalizer.value_or(wsum);
    if (!(norm > 0.0) || !std::isfinite(norm)) throw DegenerateWeightsError("loss normalizer must be positive");
    Model model(Task::Regression, static_cast<int>(x.cols()), hyper);
    model.fit_standardization(x);
    // Start the output at the weighted target mean.
    if (std::abs(wsum) > 1e-12) {
        const double start = (w.size() == 0 ? y.sum() : w.dot(y)) / wsum;
        if (std::isfinite(start)) model.layers().back().bias(0) = start;
    }
    train(model, x, y, w, norm);
    return model;
}

Model fit_classifier(const RowMatrix& x, const Eigen::VectorXd& labels, const Hyperparameters& hyper,
                     const Eigen::VectorXd& w) {
    check_inputs(x, labels, w);
    for (Eigen::Index i = 0; i < labels.size(); ++i) {
        if (labels(i) != 0.0 && labels(i) != 1.0) throw DataError("classification labels must be 0 or 1");
    }
    const double wsum = w.size() == 0 ? static_cast<double>(x.rows()) : w.sum();
    if (!(wsum > 0.0)) throw DegenerateWeightsError("classification weights must have positive sum");
    Model model(Task::Classification, static_cast<int>(x.cols()), hyper);
    model.fit_standardization(x);
    const double rate = (w.size() == 0 ? labels.sum() : w.dot(labels)) / wsum;
    const double r = std::clamp(rate, 1e-4, 1.0 - 1e-4);
    model.layers().back().bias(0) = std::log(r / (1.0 - r));
    train(model, x, labels, w, wsum);
    return model;
}

Eigen::VectorXd predict(const Model& model, const RowMatrix& features) { return model.predict(features); }

double gradient_check(const Model& model, const Batch& batch, double epsilon) {
    if (batch.features.rows() < 1) throw ParameterError("gradient check needs a non-empty batch");
    if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) throw ParameterError("epsilon must lie in [1e-6, 1e-3]");
    const double norm = static_cast<double>(batch.features.rows());
    Eigen::VectorXd analytic;
    model.loss_and_gradient(batch.features, batch.targets, batch.weights, norm, analytic);
    Model probe = model;
    // Pointers into the probe's parameters in flat order.
    std::vector<double*> slots;
    for (auto& l : probe.layers()) {
        for (Eigen::Index i = 0; i < l.weight.size(); ++i) slots.push_back(l.weight.data() + i);
        for (Eigen::Index i = 0; i < l.bias.size(); ++i) slots.push_back(l.bias.data() + i);
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < slots.size(); ++k) {
        const double saved = *slots[k];
        *slots[k] = saved + epsilon;
        const double up = probe.loss(batch.features, batch.targets, batch.weights, norm);
        *slots[k] = saved - epsilon;
        const double down = probe.loss(batch.features, batch.targets, batch.weights, norm);
        *slots[k] = saved;
        const double fd = (up - down) / (2.0 * epsilon);
        const double an = analytic(static_cast<Eigen::Index>(k));
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
        worst = std::max(worst, std::abs(fd - an) / denom);
    }
    return worst;
}

}  // namespace wolearn
