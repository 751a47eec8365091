#pragma once

// Training loop, history and evaluation metrics for the PSTNet estimator.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>
#include <vector>

#include "pstnet/backward.hpp"
#include "pstnet/datagen.hpp"
#include "pstnet/model_io.hpp"
#include "pstnet/optim.hpp"

namespace pstnet {

struct TrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 64;
    double lr_max = 3e-3;
    double lr_min = 3e-4;
    double lambda_gate = 0.1;
    double lambda_balance = 0.01;
    std::uint64_t seed = 1;
    double divergence_factor = 10.0;
};

struct EpochRecord {
    std::size_t epoch = 0;
    LossBreakdown train;  // mean over the epoch's batches
    double val_mse = 0.0;
    double gate_accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::size_t best_epoch = 0;
    double best_val_mse = std::numeric_limits<double>::infinity();
    double wall_seconds = 0.0;
    std::vector<double> final_params;  // last-epoch weights, before checkpoint selection
};

struct EvalMetrics {
    double mse = 0.0;  // standardized
    double mae = 0.0;  // m^2/s^2
    double gate_accuracy = 0.0;
    double gate_purity = 0.0;
    std::array<double, kNumRegimes> regime_mse{};
    std::array<std::size_t, kNumRegimes> regime_count{};
    std::size_t below_floor = 0;  // predictions under k_MO (never for PSTNet)
};

/// Metrics of any state -> k estimator on a sample list.
template <typename Estimator>
EvalMetrics eval_estimator(const Estimator& est, const std::vector<SyntheticSample>& samples,
                           const Standardizer& norm) {
    if (samples.empty()) throw DomainError("eval: empty split");
    EvalMetrics out;
    for (const auto& s : samples) {
        const double k = est(s.state);
        const double e = (k - s.k_true) / norm.target_scale;
        out.mse += e * e;
        out.mae += std::abs(k - s.k_true);
        const auto r = static_cast<std::size_t>(s.regime.argmax());
        out.regime_mse[r] += e * e;
        ++out.regime_count[r];
        if (k < physics_terms(s.state).k_mo) ++out.below_floor;
    }
    const double n = static_cast<double>(samples.size());
    out.mse /= n;
    out.mae /= n;
    for (std::size_t r = 0; r < kNumRegimes; ++r)
        if (out.regime_count[r]) out.regime_mse[r] /= static_cast<double>(out.regime_count[r]);
    return out;
}

/// Fraction of samples whose gate argmax equals the label argmax.
inline double gate_accuracy(const PSTNetModel& m, const std::vector<SyntheticSample>& samples) {
    std::size_t hit = 0;
    for (const auto& s : samples) {
        const auto a = gate_forward(m, m.norm.standardize(s.state.as_array()));
        const auto j = static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
        if (j == static_cast<std::size_t>(s.regime.argmax())) ++hit;
    }
    return static_cast<double>(hit) / static_cast<double>(samples.size());
}

/// Label purity of the gate's argmax clusters: sum over clusters of the
/// majority-label count, divided by n. Invariant to expert relabeling.
inline double gate_purity(const PSTNetModel& m, const std::vector<SyntheticSample>& samples) {
    std::array<std::array<std::size_t, kNumRegimes>, kNumExperts> counts{};
    for (const auto& s : samples) {
        const auto a = gate_forward(m, m.norm.standardize(s.state.as_array()));
        const auto j = static_cast<std::size_t>(std::max_element(a.begin(), a.end()) - a.begin());
        ++counts[j][static_cast<std::size_t>(s.regime.argmax())];
    }
    std::size_t majority = 0;
    for (const auto& c : counts) majority += *std::max_element(c.begin(), c.end());
    return static_cast<double>(majority) / static_cast<double>(samples.size());
}

inline EvalMetrics eval_metrics(const PSTNetModel& m, const std::vector<SyntheticSample>& samples) {
    const ParamLayout L = m.layout();
    auto out = eval_estimator([&](const AtmosphericState& s) { return predict(m, L, s); }, samples, m.norm);
    out.gate_accuracy = gate_accuracy(m, samples);
    out.gate_purity = gate_purity(m, samples);
    return out;
}

/// Trains from `model` (its norm statistics must already be fitted) and
/// returns the best-validation checkpoint, rounded to storage precision.
inline std::pair<PSTNetModel, TrainHistory> train_loop(PSTNetModel model, const Dataset& ds,
                                                       const TrainConfig& cfg) {
    if (ds.split.train.empty() || ds.split.val.empty()) throw DomainError("train_loop: empty split");
    const auto t0 = std::chrono::steady_clock::now();
    const LossWeights w{cfg.lambda_gate, cfg.lambda_balance};

    const auto train = make_examples(model, ds.subset(ds.split.train));
    const auto val = make_examples(model, ds.subset(ds.split.val));
    const auto val_samples = ds.subset(ds.split.val);

    const double initial = loss(model, train, w).total;
    Adam opt(model.params.size());
    BackwardWorkspace ws;
    std::vector<TrainingExample> batch;
    batch.reserve(cfg.batch_size);

    const std::size_t steps_per_epoch = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    const std::size_t total_steps = steps_per_epoch * cfg.epochs;
    std::size_t step = 0;

    TrainHistory hist;
    PSTNetModel best = model;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(train.size(), cfg.seed, epoch);
        LossBreakdown acc;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            batch.clear();
            const std::size_t end = std::min(train.size(), (b + 1) * cfg.batch_size);
            for (std::size_t i = b * cfg.batch_size; i < end; ++i) batch.push_back(train[order[i]]);
            auto [grad, lb] = backward(model, std::span<const TrainingExample>(batch), w, ws);
            opt.step(model.params, grad, cosine_lr(cfg.lr_max, cfg.lr_min, step++, total_steps));
            acc.data_mse += lb.data_mse;
            acc.gate_ce += lb.gate_ce;
            acc.load_balance += lb.load_balance;
            acc.total += lb.total;
        }
        const double inv = 1.0 / static_cast<double>(steps_per_epoch);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train = {acc.data_mse * inv, acc.gate_ce * inv, acc.load_balance * inv, acc.total * inv};
        if (!std::isfinite(rec.train.total) || rec.train.total > cfg.divergence_factor * initial)
            throw DivergenceError("training diverged at epoch " + std::to_string(epoch));
        rec.val_mse = loss(model, val, w).data_mse;
        rec.gate_accuracy = gate_accuracy(model, val_samples);
        if (rec.val_mse < hist.best_val_mse) {
            hist.best_val_mse = rec.val_mse;
            hist.best_epoch = epoch;
            best = model;
        }
        hist.epochs.push_back(rec);
    }
    hist.final_params = model.params;
    quantize_to_storage(best);
    hist.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best), std::move(hist)};
}

/// Fits normalization on the training split, initializes and trains.
inline std::pair<PSTNetModel, TrainHistory> train_pstnet(const Dataset& ds, const TrainConfig& cfg,
                                                         const ModelDims& dims = {}) {
    return train_loop(init_model(dims, cfg.seed, fit_on_train(ds)), ds, cfg);
}

/// Non-overlapping windows of `window` epochs have non-increasing mean total loss.
inline bool windowed_monotone(const TrainHistory& h, std::size_t window = 25) {
    double prev = std::numeric_limits<double>::infinity();
    for (std::size_t start = 0; start + window <= h.epochs.size(); start += window) {
        double sum = 0.0;
        for (std::size_t e = start; e < start + window; ++e) sum += h.epochs[e].train.total;
        const double mean = sum / static_cast<double>(window);
        if (mean > prev) return false;
        prev = mean;
    }
    return true;
}

/// Columns: epoch data_mse gate_ce load_balance total val_mse gate_acc
inline std::string history_table(const TrainHistory& h) {
    std::ostringstream o;
    o.precision(10);
    o << "# epoch data_mse gate_ce load_balance total val_mse gate_acc\n";
    for (const auto& r : h.epochs)
        o << r.epoch << ' ' << r.train.data_mse << ' ' << r.train.gate_ce << ' ' << r.train.load_balance << ' '
          << r.train.total << ' ' << r.val_mse << ' ' << r.gate_accuracy << '\n';
    return o.str();
}

}  // namespace pstnet
