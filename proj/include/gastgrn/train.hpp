#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "gastgrn/data.hpp"
#include "gastgrn/errors.hpp"
#include "gastgrn/model.hpp"

namespace gastgrn {

struct TrainConfig {
    double lr = 0.003;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::size_t max_epochs = 500;
    std::size_t patience = 30;
    std::size_t batch_size = 64;
    std::uint64_t seed = 42;

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be positive");
        if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) throw ConfigError("Adam betas must lie in [0, 1)");
        if (!(eps > 0)) throw ConfigError("eps must be positive");
        if (!(weight_decay >= 0)) throw ConfigError("weight_decay must be nonnegative");
        if (patience < 1) throw ConfigError("patience must be at least 1");
        if (max_epochs < 1) throw ConfigError("max_epochs must be at least 1");
        if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    }
};

// ---------------------------------------------------------------------------
// Adam with coupled L2 weight decay

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::size_t step = 0;
};

inline void adam_step(ParameterStore& store, AdamState& state, const TrainConfig& cfg) {
    auto& entries = store.entries();
    for (const auto& e : entries) {
        if (!e.tensor.has_grad()) throw std::logic_error("parameter '" + e.name + "' has no gradient");
    }
    if (state.m.empty()) {
        for (const auto& e : entries) {
            state.m.emplace_back(e.tensor.numel(), 0.0);
            state.v.emplace_back(e.tensor.numel(), 0.0);
        }
    }
    if (state.m.size() != entries.size()) throw std::logic_error("optimizer state does not match parameter store");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(cfg.beta1, t);
    const double c2 = 1.0 - std::pow(cfg.beta2, t);
    for (std::size_t p = 0; p < entries.size(); ++p) {
        auto theta = entries[p].tensor.mutable_values();
        const auto grad = entries[p].tensor.grad();
        auto& m = state.m[p];
        auto& v = state.v[p];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grad[i] + cfg.weight_decay * theta[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            theta[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

// ---------------------------------------------------------------------------
// Early stopping

/// Tracks the best (lowest) validation score and counts epochs without
/// improvement.
class EarlyStopper {
public:
    explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

    /// Returns true when training should stop after this epoch.
    bool update(std::size_t epoch, double score) {
        improved_ = score < best_;
        if (improved_) {
            best_ = score;
            best_epoch_ = epoch;
            stale_ = 0;
        } else {
            ++stale_;
        }
        return stale_ >= patience_;
    }

    bool improved() const { return improved_; }
    double best() const { return best_; }
    std::size_t best_epoch() const { return best_epoch_; }

private:
    std::size_t patience_;
    double best_ = std::numeric_limits<double>::infinity();
    std::size_t best_epoch_ = 0;
    std::size_t stale_ = 0;
    bool improved_ = false;
};

// ---------------------------------------------------------------------------
// Evaluation

struct Evaluation {
    Tensor predictions;  // normalized [S, T_out, N]
    Tensor truth;        // normalized [S, T_out, N]
    MetricsReport metrics;
};

inline Evaluation evaluate(const Model& model, const WindowSet& windows, const Normalizer& normalizer,
                           std::size_t batch_size = 64) {
    NoGradGuard no_grad;
    std::vector<double> pred, truth;
    const std::size_t total = windows.size();
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < total; start += batch_size) {
        idx.resize(std::min(batch_size, total - start));
        std::iota(idx.begin(), idx.end(), start);
        const SampleBatch b = windows.batch(idx);
        const Tensor out = model.forward(b.x);
        pred.insert(pred.end(), out.values().begin(), out.values().end());
        truth.insert(truth.end(), b.y.values().begin(), b.y.values().end());
    }
    const Shape shape{total, windows.output_steps(), windows.nodes()};
    Evaluation e{Tensor(shape, std::move(pred)), Tensor(shape, std::move(truth)), {}};
    e.metrics = metrics(e.predictions, e.truth, normalizer);
    return e;
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean normalized L1 over training batches
    double val_mae = 0.0;
    double val_rmse = 0.0;
    std::optional<double> val_mape;
    double seconds = 0.0;  // wall clock for the training pass only
};

struct TrainResult {
    std::vector<EpochRecord> history;
    std::size_t best_epoch = 0;
    double best_val_mae = 0.0;
    bool stopped_early = false;
    bool stopped_by_callback = false;
};

/// Return false to stop training after the given epoch.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// Fits `model` with Adam and early stopping on denormalized validation MAE.
/// On return the model holds the parameters of the best validation epoch.
inline TrainResult train(Model& model, const WindowSet& train_set, const WindowSet& val_set,
                         const Normalizer& normalizer, const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0) throw DataError("training and validation sets must be non-empty");
    auto& store = model.parameters();
    Rng rng(cfg.seed);
    AdamState adam;
    EarlyStopper stopper(cfg.patience);
    TrainResult result;
    std::vector<std::vector<double>> best = store.snapshot();
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        const auto started = std::chrono::steady_clock::now();
        shuffle(order, rng);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            const SampleBatch b = train_set.batch(std::span<const std::size_t>(order.data() + start, len));
            store.clear_grads();
            Tape::current().clear();
            const Tensor loss = l1_loss(model.forward(b.x, {true, &rng}), b.y);
            if (!std::isfinite(loss.item())) {
                Tape::current().clear();
                throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": loss is not finite");
            }
            backward(loss);
            adam_step(store, adam, cfg);
            loss_sum += loss.item() * static_cast<double>(len);
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(order.size());
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        const Evaluation val = evaluate(model, val_set, normalizer, cfg.batch_size);
        rec.val_mae = val.metrics.mae;
        rec.val_rmse = val.metrics.rmse;
        rec.val_mape = val.metrics.mape;
        if (!std::isfinite(rec.val_mae)) {
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch) + ": validation MAE is not finite");
        }
        result.history.push_back(rec);
        const bool stop = stopper.update(epoch, rec.val_mae);
        if (stopper.improved()) best = store.snapshot();
        if (stop) {
            result.stopped_early = true;
            break;
        }
        if (on_epoch && !on_epoch(rec)) {
            result.stopped_by_callback = true;
            break;
        }
    }
    store.restore(best);
    store.clear_grads();
    result.best_epoch = stopper.best_epoch();
    result.best_val_mae = stopper.best();
    return result;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient check

struct GradCheckOptions {
    double step = 1e-5;
    double tolerance = 1e-4;
    /// Relative error is |a - n| / max(|a|, |n|, denominator_floor).
    double denominator_floor = 1e-5;
    /// 0 checks every element; otherwise a seeded subsample per tensor.
    std::size_t max_per_tensor = 0;
    std::uint64_t seed = 1;
};

struct GradCheckEntry {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double relative_error = 0.0;
};

struct GradCheckReport {
    double max_relative_error = 0.0;
    GradCheckEntry worst;
    std::size_t checked = 0;
    std::vector<GradCheckEntry> failures;
    double tolerance = 0.0;

    bool passed() const { return failures.empty(); }
};

/// Compares reverse-mode gradients of `loss_fn` with central differences for
/// every parameter in `store`.
inline GradCheckReport grad_check(ParameterStore& store, const std::function<Tensor()>& loss_fn,
                                  const GradCheckOptions& opt = {}) {
    GradCheckReport report;
    report.tolerance = opt.tolerance;
    store.clear_grads();
    Tape::current().clear();
    backward(loss_fn());
    std::vector<std::vector<double>> analytic;
    for (const auto& e : store.entries()) {
        if (e.tensor.has_grad()) {
            analytic.emplace_back(e.tensor.grad().begin(), e.tensor.grad().end());
        } else {
            analytic.emplace_back(e.tensor.numel(), 0.0);
        }
    }
    store.clear_grads();
    Rng rng(opt.seed);
    NoGradGuard no_grad;
    auto evaluate_loss = [&] { return loss_fn().item(); };
    for (std::size_t p = 0; p < store.entries().size(); ++p) {
        auto& entry = store.entries()[p];
        auto values = entry.tensor.mutable_values();
        std::vector<std::size_t> idx(values.size());
        std::iota(idx.begin(), idx.end(), 0);
        if (opt.max_per_tensor && idx.size() > opt.max_per_tensor) {
            shuffle(idx, rng);
            idx.resize(opt.max_per_tensor);
            std::sort(idx.begin(), idx.end());
        }
        for (std::size_t i : idx) {
            const double original = values[i];
            values[i] = original + opt.step;
            const double plus = evaluate_loss();
            values[i] = original - opt.step;
            const double minus = evaluate_loss();
            values[i] = original;
            const double numeric = (plus - minus) / (2.0 * opt.step);
            const double a = analytic[p][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), opt.denominator_floor});
            const double rel = std::abs(a - numeric) / denom;
            GradCheckEntry rec{entry.name, i, a, numeric, rel};
            ++report.checked;
            if (report.checked == 1 || !(rel <= report.max_relative_error)) {
                report.max_relative_error = std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel;
                report.worst = rec;
            }
            if (!(rel < opt.tolerance)) report.failures.push_back(rec);
        }
    }
    return report;
}

/// Gradient check of l1_loss(model.forward(x), y) in inference mode.
inline GradCheckReport grad_check(Model& model, const SampleBatch& batch, const GradCheckOptions& opt = {}) {
    if (model.config().dropout_input != 0.0 || model.config().dropout_inner != 0.0) {
        throw std::invalid_argument("gradient check requires dropout rates of zero");
    }
    return grad_check(model.parameters(), [&] { return l1_loss(model.forward(batch.x), batch.y); }, opt);
}

}  // namespace gastgrn
