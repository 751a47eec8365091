#pragma once

// Unconstrained MLP regressors on the standardized feature vector. Hidden
// layers use tanh-GELU; the output is a single linear unit predicting the
// standardized target. Layers whose input and output widths match carry an
// identity skip: h' = h + gelu(W h + b).

#include <chrono>
#include <filesystem>
#include <limits>
#include <span>
#include <vector>

#include "pstnet/atmos.hpp"
#include "pstnet/datagen.hpp"
#include "pstnet/model.hpp"
#include "pstnet/optim.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

enum class MLPVariant : std::uint16_t { vanilla = 0, deep = 1 };

struct MLPModel {
    MLPVariant variant = MLPVariant::vanilla;
    std::vector<std::size_t> widths;  // input, hidden..., output
    std::vector<double> params;       // per layer: W (out x in, row-major) then b
    Standardizer norm;

    std::size_t layers() const { return widths.size() - 1; }
    bool has_skip(std::size_t l) const {
        return variant == MLPVariant::deep && l + 1 < layers() && widths[l] == widths[l + 1];
    }
    std::size_t offset(std::size_t l) const {
        std::size_t off = 0;
        for (std::size_t i = 0; i < l; ++i) off += widths[i + 1] * (widths[i] + 1);
        return off;
    }
};

inline std::vector<std::size_t> mlp_widths(MLPVariant v) {
    if (v == MLPVariant::vanilla) return {kNumFeatures, 32, 16, 1};
    return {kNumFeatures, 40, 40, 40, 40, 40, 1};
}

inline std::size_t mlp_param_count(const std::vector<std::size_t>& widths) {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) n += widths[l + 1] * (widths[l] + 1);
    return n;
}

inline MLPModel init_mlp(MLPVariant v, std::uint64_t seed, const Standardizer& norm = {}) {
    MLPModel m;
    m.variant = v;
    m.widths = mlp_widths(v);
    m.norm = norm;
    m.params.assign(mlp_param_count(m.widths), 0.0);
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < m.layers(); ++l) {
        const std::size_t in = m.widths[l], out = m.widths[l + 1];
        // Residual branches start small so the deep stack begins near identity.
        const double gain = m.has_skip(l) ? 0.5 : 1.0;
        std::uniform_real_distribution<double> u(-gain * std::sqrt(6.0 / in), gain * std::sqrt(6.0 / in));
        const std::size_t off = m.offset(l);
        for (std::size_t i = 0; i < in * out; ++i) m.params[off + i] = u(rng);
    }
    return m;
}

namespace detail {

/// acts[0] = x, acts[l+1] = layer l output; slope[l] = activation derivative at W h + b.
struct MLPTrace {
    std::vector<std::vector<double>> acts, slope;
};

inline double mlp_pass(const MLPModel& m, const double* params, std::span<const double> x, MLPTrace* tr) {
    thread_local std::vector<double> cur, next;
    cur.assign(x.begin(), x.end());
    if (tr) {
        tr->acts.resize(m.layers() + 1);
        tr->slope.resize(m.layers());
        tr->acts[0] = cur;
    }
    for (std::size_t l = 0; l < m.layers(); ++l) {
        const std::size_t in = m.widths[l], out = m.widths[l + 1];
        const double* W = params + m.offset(l);
        const double* b = W + in * out;
        next.assign(out, 0.0);
        const bool last = l + 1 == m.layers();
        if (tr) tr->slope[l].resize(out);
        for (std::size_t o = 0; o < out; ++o) {
            double a = b[o];
            for (std::size_t i = 0; i < in; ++i) a += W[o * in + i] * cur[i];
            if (last) {
                next[o] = a;
                if (tr) tr->slope[l][o] = 1.0;
            } else {
                const double t = std::tanh(nn::gelu_c * (a + nn::gelu_a * a * a * a));
                next[o] = 0.5 * a * (1.0 + t);
                if (tr)
                    tr->slope[l][o] =
                        0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * nn::gelu_c * (1.0 + 3.0 * nn::gelu_a * a * a);
            }
            if (m.has_skip(l)) next[o] += cur[o];
        }
        cur.swap(next);
        if (tr) tr->acts[l + 1] = cur;
    }
    return cur[0];
}

}  // namespace detail

/// Standardized-target prediction from a standardized feature vector.
inline double mlp_forward(const MLPModel& m, const FeatureVector& x) {
    return detail::mlp_pass(m, m.params.data(), x, nullptr);
}

/// Energy prediction (m^2/s^2) for a raw state; unconstrained, may fall below k_MO or zero.
inline double mlp_predict(const MLPModel& m, const AtmosphericState& s) {
    return m.norm.destandardize_target(mlp_forward(m, feature_vector(s, m.norm)));
}

struct RegressionExample {
    FeatureVector x{};
    double y = 0.0;  // standardized target
};

inline std::vector<RegressionExample> regression_examples(const std::vector<SyntheticSample>& samples,
                                                          const Standardizer& norm) {
    std::vector<RegressionExample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back({feature_vector(s.state, norm), norm.standardize_target(s.k_true)});
    return out;
}

/// Mean squared error on standardized targets plus its gradient.
inline double mlp_loss_grad(const MLPModel& m, std::span<const RegressionExample> batch, std::vector<double>* grad) {
    if (batch.empty()) throw DomainError("mlp: empty batch");
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    if (grad) grad->assign(m.params.size(), 0.0);
    detail::MLPTrace tr;
    std::vector<double> delta, prev;
    double sse = 0.0;
    for (const auto& e : batch) {
        const double y = detail::mlp_pass(m, m.params.data(), e.x, grad ? &tr : nullptr);
        sse += (y - e.y) * (y - e.y);
        if (!grad) continue;
        // delta = dL/d(layer output)
        delta.assign(1, 2.0 * (y - e.y) * inv_n);
        for (std::size_t l = m.layers(); l-- > 0;) {
            const std::size_t in = m.widths[l], out = m.widths[l + 1];
            const std::size_t off = m.offset(l);
            const double* W = m.params.data() + off;
            prev.assign(in, 0.0);
            double* __restrict gw = grad->data() + off;
            double* __restrict pv = prev.data();
            const double* __restrict a = tr.acts[l].data();
            for (std::size_t o = 0; o < out; ++o) {
                const double gp = delta[o] * tr.slope[l][o];
                gw[in * out + o] += gp;
                const double* __restrict wr = W + o * in;
                double* __restrict gr = gw + o * in;
                for (std::size_t i = 0; i < in; ++i) gr[i] += gp * a[i];
                for (std::size_t i = 0; i < in; ++i) pv[i] += wr[i] * gp;
                if (m.has_skip(l)) pv[o] += delta[o];
            }
            delta.swap(prev);
        }
    }
    return sse * inv_n;
}

struct MLPTrainConfig {
    std::size_t epochs = 300;
    std::size_t batch_size = 64;
    double lr_max = 3e-3;
    double lr_min = 3e-4;
    std::uint64_t seed = 1;
    double divergence_factor = 10.0;
};

struct MLPHistory {
    std::vector<double> train_mse;  // mean over the epoch's batches
    std::vector<double> val_mse;
    std::size_t best_epoch = 0;
    double wall_seconds = 0.0;
};

/// Same loop contract as train_loop with only the data term: Adam, cosine
/// schedule, per-epoch seeded shuffle, best-validation checkpoint.
inline std::pair<MLPModel, MLPHistory> mlp_train(MLPModel m, const Dataset& ds, const MLPTrainConfig& cfg) {
    if (ds.split.train.empty() || ds.split.val.empty()) throw DomainError("mlp_train: empty split");
    const auto t0 = std::chrono::steady_clock::now();
    const auto train = regression_examples(ds.subset(ds.split.train), m.norm);
    const auto val = regression_examples(ds.subset(ds.split.val), m.norm);
    const double initial = mlp_loss_grad(m, train, nullptr);

    Adam opt(m.params.size());
    std::vector<double> grad;
    std::vector<RegressionExample> batch;
    const std::size_t steps = (train.size() + cfg.batch_size - 1) / cfg.batch_size;
    std::size_t step = 0;
    MLPHistory h;
    MLPModel best = m;
    double best_val = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto order = epoch_order(train.size(), cfg.seed, epoch);
        double acc = 0.0;
        for (std::size_t b = 0; b < steps; ++b) {
            batch.clear();
            const std::size_t end = std::min(train.size(), (b + 1) * cfg.batch_size);
            for (std::size_t i = b * cfg.batch_size; i < end; ++i) batch.push_back(train[order[i]]);
            acc += mlp_loss_grad(m, batch, &grad);
            opt.step(m.params, grad, cosine_lr(cfg.lr_max, cfg.lr_min, step++, steps * cfg.epochs));
        }
        const double tr = acc / static_cast<double>(steps);
        if (!std::isfinite(tr) || tr > cfg.divergence_factor * initial)
            throw DivergenceError("mlp training diverged at epoch " + std::to_string(epoch));
        const double v = mlp_loss_grad(m, val, nullptr);
        h.train_mse.push_back(tr);
        h.val_mse.push_back(v);
        if (v < best_val) {
            best_val = v;
            h.best_epoch = epoch;
            best = m;
        }
    }
    for (double& p : best.params) p = static_cast<double>(static_cast<float>(p));
    h.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(best), std::move(h)};
}

namespace mlp_file {
inline constexpr char magic[4] = {'P', 'S', 'M', 'L'};
inline constexpr std::uint16_t version = 1;
}  // namespace mlp_file

/// "PSML" | version u16 | variant u16 | layer-width count u16 | widths u16[]
/// | norm f64[16] | params f32[] | CRC-32
inline std::vector<std::uint8_t> encode_mlp(const MLPModel& m) {
    ByteWriter w;
    w.put_bytes({mlp_file::magic, 4});
    w.put(mlp_file::version);
    w.put(static_cast<std::uint16_t>(m.variant));
    w.put(static_cast<std::uint16_t>(m.widths.size()));
    for (auto v : m.widths) w.put(static_cast<std::uint16_t>(v));
    for (double v : m.norm.mean) w.put(v);
    for (double v : m.norm.scale) w.put(v);
    w.put(m.norm.target_mean);
    w.put(m.norm.target_scale);
    for (double p : m.params) w.put(static_cast<float>(p));
    w.put_checksum();
    return w.bytes();
}

inline MLPModel decode_mlp(std::span<const std::uint8_t> bytes) {
    const auto body = checked_body(bytes);
    ByteReader r(body);
    if (r.get_bytes(4) != std::string(mlp_file::magic, 4))
        throw FormatError(FormatError::Kind::corrupt, "mlp file: bad magic");
    if (r.get<std::uint16_t>() != mlp_file::version)
        throw FormatError(FormatError::Kind::version, "mlp file: unsupported version");
    MLPModel m;
    const auto variant = r.get<std::uint16_t>();
    if (variant > 1) throw FormatError(FormatError::Kind::corrupt, "mlp file: unknown variant");
    m.variant = static_cast<MLPVariant>(variant);
    const std::size_t nw = r.get<std::uint16_t>();
    if (nw < 2 || nw > 16) throw FormatError(FormatError::Kind::corrupt, "mlp file: bad layer count");
    for (std::size_t i = 0; i < nw; ++i) m.widths.push_back(r.get<std::uint16_t>());
    if (m.widths.front() != kNumFeatures || m.widths.back() != 1)
        throw FormatError(FormatError::Kind::corrupt, "mlp file: bad widths");
    for (double& v : m.norm.mean) v = r.get<double>();
    for (double& v : m.norm.scale) v = r.get<double>();
    m.norm.target_mean = r.get<double>();
    m.norm.target_scale = r.get<double>();
    m.params.resize(mlp_param_count(m.widths));
    for (double& p : m.params) p = static_cast<double>(r.get<float>());
    if (r.remaining() != 0) throw FormatError(FormatError::Kind::corrupt, "mlp file: trailing bytes");
    return m;
}

}  // namespace pstnet
