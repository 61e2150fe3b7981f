#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <mutex>
#include <numeric>
#include <span>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdsm/errors.hpp"
#include "gdsm/nn/model.hpp"
#include "gdsm/rng.hpp"

namespace gdsm::nn {

// Table 4 defaults: Adam starting at 1e-3, MAE loss, batch 32, 40 epochs,
// early stopping with patience 3. The schedule halves the rate (down to
// lr_min) after lr_plateau_epochs consecutive epochs whose improvement stays
// below lr_min_delta.
struct TrainingConfig {
    double learning_rate = 0.001;
    int epochs = 40;
    int batch_size = 32;
    int patience = 3;
    int lr_plateau_epochs = 2;
    double lr_min_delta = 0.0;
    double lr_min = 1e-5;
    std::uint64_t seed = 0;
    int threads = 0;  // 0 = hardware concurrency
};

template <typename S>
struct Sample {
    Tensor3<S> input;
    std::vector<S> aux;
    S target = S(0);
};

template <typename S>
Sample<S> make_sample(const PathwayModel<S>& model, const ExtractedPatch& patch,
                      std::span<const double> age_vector = {}) {
    Sample<S> s;
    s.input = make_input<S>(model.stream, patch.image, model.backbone_spec.input_h,
                            model.backbone_spec.input_w);
    s.aux = make_aux<S>(model.stream, patch, age_vector);
    s.target = static_cast<S>(patch.target_age);
    return s;
}

struct EpochStats {
    int epoch = 0;
    double train_mae = 0.0;
    double val_mae = 0.0;
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochStats> history;
    int best_epoch = -1;
    double best_val_mae = std::numeric_limits<double>::infinity();
    int epochs_run = 0;
};

inline nlohmann::json history_to_json(const TrainResult& r) {
    nlohmann::json epochs = nlohmann::json::array();
    for (const auto& e : r.history)
        epochs.push_back({{"epoch", e.epoch},
                          {"train_mae", e.train_mae},
                          {"val_mae", e.val_mae},
                          {"learning_rate", e.learning_rate}});
    return {{"epochs", epochs}, {"best_epoch", r.best_epoch}, {"best_val_mae", r.best_val_mae}};
}

// Chunked index-parallel helper. Work is partitioned deterministically; the
// callee must only write to per-index slots. The first worker exception is
// rethrown on the calling thread.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
    std::size_t hw = threads > 0 ? static_cast<std::size_t>(threads)
                                 : std::max<std::size_t>(1, std::thread::hardware_concurrency());
    hw = std::min(hw, n);
    if (hw <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(hw);
    std::mutex err_mutex;
    std::exception_ptr err;
    const std::size_t chunk = (n + hw - 1) / hw;
    for (std::size_t t = 0; t < hw; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &fn, &err_mutex, &err] {
            try {
                for (std::size_t i = lo; i < hi; ++i) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!err) err = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (err) std::rethrow_exception(err);
}

// Adam with double-precision moment state; frozen parameters are skipped.
template <typename S>
class Adam {
public:
    explicit Adam(std::size_t n) : m_(n, 0.0), v_(n, 0.0) {}

    void step(std::vector<S>& params, std::span<const S> grad, double lr,
              std::span<const std::uint8_t> frozen) {
        ++t_;
        const double b1c = 1.0 - std::pow(beta1_, t_);
        const double b2c = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!frozen.empty() && frozen[i]) continue;
            const double g = static_cast<double>(grad[i]);
            m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
            v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
            const double mhat = m_[i] / b1c;
            const double vhat = v_[i] / b2c;
            params[i] = static_cast<S>(static_cast<double>(params[i]) -
                                       lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }

private:
    std::vector<double> m_, v_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
};

template <typename S>
double evaluate_mae(const PathwayModel<S>& model, const std::vector<Sample<S>>& samples, int threads) {
    if (samples.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::vector<double> errs(samples.size());
    parallel_for(samples.size(), threads, [&](std::size_t i) {
        PathwayWorkspace<S> ws;
        const S pred = model.forward(ws, samples[i].input, samples[i].aux);
        errs[i] = std::abs(static_cast<double>(pred) - static_cast<double>(samples[i].target));
    });
    double acc = 0.0;
    for (double e : errs) acc += e;
    return acc / static_cast<double>(samples.size());
}

// Full-batch MAE loss and its parameter gradient; the finite-difference
// suite drives this entry point directly.
template <typename S>
double batch_loss_and_grad(const PathwayModel<S>& model, const std::vector<Sample<S>>& samples,
                           std::vector<S>& grad) {
    grad.assign(model.param_count(), S(0));
    PathwayWorkspace<S> ws;
    double loss = 0.0;
    const S inv_n = S(1) / static_cast<S>(samples.size());
    for (const auto& s : samples) {
        const S pred = model.forward(ws, s.input, s.aux);
        const S err = pred - s.target;
        loss += std::abs(static_cast<double>(err));
        const S dpred = err > S(0) ? inv_n : (err < S(0) ? -inv_n : S(0));
        model.backward(ws, dpred, grad);
    }
    return loss / static_cast<double>(samples.size());
}

// Minimizes MAE with Adam. Stops at config.epochs or after `patience`
// consecutive epochs without validation improvement, restoring the best
// validation weights. Deterministic given (model init, data order, seed):
// per-sample gradients are reduced in sample order, so the thread count
// never changes the result.
template <typename S>
TrainResult train(PathwayModel<S>& model, const std::vector<Sample<S>>& train_samples,
                  const std::vector<Sample<S>>& val_samples, const TrainingConfig& config) {
    if (train_samples.empty()) throw EmptyDataset("training set is empty");
    for (const auto& s : train_samples)
        if (!std::isfinite(static_cast<double>(s.target))) throw EmptyDataset("non-finite training target");

    const std::size_t n_params = model.param_count();
    const std::vector<std::uint8_t> frozen = model.frozen_mask();
    Adam<S> adam(n_params);
    std::vector<S> params;
    model.get_params(params);

    const int batch = std::max(1, config.batch_size);
    std::vector<std::vector<S>> sample_grads(static_cast<std::size_t>(batch));
    std::vector<double> sample_errs(static_cast<std::size_t>(batch));
    std::vector<S> grad(n_params);

    std::vector<std::size_t> order(train_samples.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(hash_combine(config.seed, 0x7e415ull));

    TrainResult result;
    std::vector<S> best_params;
    model.get_params(best_params);
    double lr = config.learning_rate;
    int stall = 0, plateau = 0;
    double plateau_best = std::numeric_limits<double>::infinity();

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double err_sum = 0.0;

        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch)) {
            const std::size_t count = std::min<std::size_t>(batch, order.size() - start);
            parallel_for(count, config.threads, [&](std::size_t k) {
                const Sample<S>& s = train_samples[order[start + k]];
                PathwayWorkspace<S> ws;
                const S pred = model.forward(ws, s.input, s.aux);
                const S err = pred - s.target;
                sample_errs[k] = std::abs(static_cast<double>(err));
                auto& g = sample_grads[k];
                g.assign(n_params, S(0));
                const S dpred = err > S(0) ? S(1) : (err < S(0) ? S(-1) : S(0));
                model.backward(ws, dpred, g);
            });

            std::fill(grad.begin(), grad.end(), S(0));
            const S inv = S(1) / static_cast<S>(count);
            for (std::size_t k = 0; k < count; ++k) {
                const auto& g = sample_grads[k];
                for (std::size_t i = 0; i < n_params; ++i) grad[i] += g[i] * inv;
                err_sum += sample_errs[k];
            }
            adam.step(params, grad, lr, frozen);
            model.set_params(params);
        }

        const double train_mae = err_sum / static_cast<double>(train_samples.size());
        if (!std::isfinite(train_mae)) throw DivergedLoss("training loss is non-finite");
        double val_mae = evaluate_mae(model, val_samples, config.threads);
        const bool have_val = !val_samples.empty();
        if (have_val && !std::isfinite(val_mae)) throw DivergedLoss("validation loss is non-finite");
        const double monitor = have_val ? val_mae : train_mae;
        if (!have_val) val_mae = train_mae;

        result.history.push_back({epoch, train_mae, val_mae, lr});
        result.epochs_run = epoch + 1;

        if (monitor < result.best_val_mae) {
            result.best_val_mae = monitor;
            result.best_epoch = epoch;
            model.get_params(best_params);
            stall = 0;
        } else {
            ++stall;
        }

        if (monitor < plateau_best - config.lr_min_delta) {
            plateau_best = monitor;
            plateau = 0;
        } else {
            ++plateau;
            if (config.lr_plateau_epochs > 0 && plateau >= config.lr_plateau_epochs) {
                lr = std::max(lr * 0.5, config.lr_min);
                plateau = 0;
            }
        }
        if (config.patience > 0 && stall >= config.patience) break;
    }

    model.set_params(best_params);
    model.trained = true;
    return result;
}

}  // namespace gdsm::nn
