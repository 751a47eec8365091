#pragma once

// Composite objective and its exact gradient:
//   L = mean((k - k_true)^2) / s_k^2                     (standardized MSE)
//     + lambda_g * mean(-sum_j y_j log alpha_j)           (gate cross-entropy)
//     + lambda_b * 4 * sum_j abar_j^2                     (load balance)
// k_MO and the Kolmogorov headroom are constants with respect to parameters.

#include <span>
#include <vector>

#include "pstnet/model.hpp"

namespace pstnet {

/// One supervised sample with its parameter-independent physics precomputed.
struct TrainingExample {
    FeatureVector x{};
    double density_ratio = 1.0;
    double k_mo = 0.0;
    double headroom = 0.0;
    double k_true = 0.0;
    std::array<double, kNumRegimes> regime{};
};

inline TrainingExample make_example(const PSTNetModel& m, const AtmosphericState& s, double k_true,
                                    const RegimeTarget& target) {
    validate(s);
    const auto phys = physics_terms(s, m.constants);
    TrainingExample e;
    e.x = feature_vector(s, m.norm);
    e.density_ratio = s.density_ratio;
    e.k_mo = phys.k_mo;
    e.headroom = phys.headroom;
    e.k_true = k_true;
    e.regime = target.probs;
    return e;
}

struct LossBreakdown {
    double data_mse = 0.0;
    double gate_ce = 0.0;
    double load_balance = 0.0;
    double total = 0.0;
};

/// Same shape and order as PSTNetModel::params.
using GradientSet = std::vector<double>;

struct LossWeights {
    double gate = 0.1;
    double balance = 0.01;
};

namespace detail {

inline double safe_log(double p) { return std::log(std::max(p, 1e-300)); }

inline LossBreakdown assemble(double sq_err, double ce, const std::array<double, kNumExperts>& alpha_sum,
                              std::size_t n, double target_scale, LossWeights w) {
    const double inv_n = 1.0 / static_cast<double>(n);
    LossBreakdown lb;
    lb.data_mse = sq_err * inv_n / (target_scale * target_scale);
    lb.gate_ce = ce * inv_n;
    for (double a : alpha_sum) lb.load_balance += 4.0 * (a * inv_n) * (a * inv_n);
    lb.total = lb.data_mse + w.gate * lb.gate_ce + w.balance * lb.load_balance;
    return lb;
}

}  // namespace detail

/// Objective value only.
inline LossBreakdown loss(const PSTNetModel& m, std::span<const TrainingExample> batch, LossWeights w = {}) {
    if (batch.empty()) throw DomainError("loss: empty batch");
    const ParamLayout L = m.layout();
    nn::Trace<double> tr;
    double sq = 0.0, ce = 0.0;
    std::array<double, kNumExperts> asum{};
    for (const auto& e : batch) {
        tr.x = e.x;
        nn::network_pass(m.dims, L, m.params.data(), e.density_ratio, tr);
        const double k = e.k_mo + tr.sig * e.headroom;
        sq += (k - e.k_true) * (k - e.k_true);
        for (std::size_t j = 0; j < kNumExperts; ++j) {
            ce -= e.regime[j] * detail::safe_log(tr.alpha[j]);
            asum[j] += tr.alpha[j];
        }
    }
    return detail::assemble(sq, ce, asum, batch.size(), m.norm.target_scale, w);
}

/// Reusable trace storage so training does not allocate per step.
struct BackwardWorkspace {
    std::vector<nn::Trace<double>> traces;
};

/// Exact gradient of the objective; accumulates in sample order.
inline std::pair<GradientSet, LossBreakdown> backward(const PSTNetModel& m, std::span<const TrainingExample> batch,
                                                      LossWeights w, BackwardWorkspace& ws) {
    if (batch.empty()) throw DomainError("backward: empty batch");
    const ModelDims& D = m.dims;
    const ParamLayout L = m.layout();
    const double* p = m.params.data();
    const std::size_t n = batch.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const double inv_s2 = 1.0 / (m.norm.target_scale * m.norm.target_scale);

    ws.traces.resize(n);
    double sq = 0.0, ce = 0.0;
    std::array<double, kNumExperts> asum{};
    for (std::size_t i = 0; i < n; ++i) {
        auto& tr = ws.traces[i];
        const auto& e = batch[i];
        tr.x = e.x;
        nn::network_pass(D, L, p, e.density_ratio, tr);
        const double k = e.k_mo + tr.sig * e.headroom;
        sq += (k - e.k_true) * (k - e.k_true);
        for (std::size_t j = 0; j < kNumExperts; ++j) {
            ce -= e.regime[j] * detail::safe_log(tr.alpha[j]);
            asum[j] += tr.alpha[j];
        }
    }
    const LossBreakdown lb = detail::assemble(sq, ce, asum, n, m.norm.target_scale, w);

    std::array<double, kNumExperts> bal_grad{};
    for (std::size_t j = 0; j < kNumExperts; ++j) bal_grad[j] = w.balance * 8.0 * (asum[j] * inv_n) * inv_n;

    GradientSet g(m.params.size(), 0.0);
    std::array<double, kMaxWidth> g_zbar{}, g_gamma{}, g_beta{}, g_z{}, g_q{}, g_h{};
    std::array<double, 2 * kMaxWidth> g_fout{};

    for (std::size_t i = 0; i < n; ++i) {
        const auto& tr = ws.traces[i];
        const auto& e = batch[i];
        const double k = e.k_mo + tr.sig * e.headroom;
        const double g_k = 2.0 * (k - e.k_true) * inv_n * inv_s2;
        const double g_s = g_k * tr.sig * (1.0 - tr.sig) * e.headroom;

        // head
        for (std::size_t c = 0; c < D.d; ++c) {
            g[L.head_w + c] += g_s * tr.zbar[c];
            g_zbar[c] = g_s * p[L.head_w + c];
        }
        g[L.head_b] += g_s;

        // aggregation, FiLM and experts
        std::array<double, kNumExperts> g_alpha{};
        for (std::size_t c = 0; c < D.d; ++c) g_gamma[c] = g_beta[c] = 0.0;
        for (std::size_t j = 0; j < kNumExperts; ++j) {
            double ga = 0.0;
            for (std::size_t c = 0; c < D.d; ++c) {
                ga += tr.zt[j][c] * g_zbar[c];
                const double g_zt = tr.alpha[j] * g_zbar[c];
                g_gamma[c] += g_zt * tr.z[j][c];
                g_beta[c] += g_zt;
                g_z[c] = g_zt * tr.gamma[c];
            }
            g_alpha[j] = ga + bal_grad[j];

            const auto& eo = L.expert_out[j];
            const auto& eh = L.expert_hidden[j];
            for (std::size_t h = 0; h < D.h_expert; ++h) g_q[h] = 0.0;
            for (std::size_t c = 0; c < D.d; ++c) {
                g[eo.b + c] += g_z[c];
                for (std::size_t h = 0; h < D.h_expert; ++h) {
                    g[eo.w + c * D.h_expert + h] += g_z[c] * tr.exp_q[j][h];
                    g_q[h] += p[eo.w + c * D.h_expert + h] * g_z[c];
                }
            }
            for (std::size_t h = 0; h < D.h_expert; ++h) {
                const double g_u = g_q[h] * nn::gelu_grad(tr.exp_pre[j][h]);
                g[eh.b + h] += g_u;
                for (std::size_t f = 0; f < kNumFeatures; ++f) g[eh.w + h * kNumFeatures + f] += g_u * tr.x[f];
            }
        }

        // FiLM hyper-network
        for (std::size_t c = 0; c < D.d; ++c) {
            g_fout[c] = g_gamma[c];
            g_fout[D.d + c] = g_beta[c];
        }
        for (std::size_t h = 0; h < D.h_film; ++h) g_h[h] = 0.0;
        for (std::size_t o = 0; o < 2 * D.d; ++o) {
            g[L.film_out.b + o] += g_fout[o];
            for (std::size_t h = 0; h < D.h_film; ++h) {
                g[L.film_out.w + o * D.h_film + h] += g_fout[o] * tr.film_h[h];
                g_h[h] += p[L.film_out.w + o * D.h_film + h] * g_fout[o];
            }
        }
        for (std::size_t h = 0; h < D.h_film; ++h) {
            const double g_a = g_h[h] * (1.0 - tr.film_h[h] * tr.film_h[h]);
            g[L.film_hidden.w + h] += g_a * e.density_ratio;
            g[L.film_hidden.b + h] += g_a;
        }

        // gate: softmax Jacobian for the data/balance paths, closed form for CE
        double dot = 0.0, ysum = 0.0;
        for (std::size_t j = 0; j < kNumExperts; ++j) {
            dot += tr.alpha[j] * g_alpha[j];
            ysum += e.regime[j];
        }
        std::array<double, kNumExperts> g_logit{};
        for (std::size_t j = 0; j < kNumExperts; ++j)
            g_logit[j] = tr.alpha[j] * (g_alpha[j] - dot) +
                         w.gate * inv_n * (tr.alpha[j] * ysum - e.regime[j]);

        for (std::size_t h = 0; h < D.h_gate; ++h) g_h[h] = 0.0;
        for (std::size_t j = 0; j < kNumExperts; ++j) {
            g[L.gate_out.b + j] += g_logit[j];
            for (std::size_t h = 0; h < D.h_gate; ++h) {
                g[L.gate_out.w + j * D.h_gate + h] += g_logit[j] * tr.gate_h[h];
                g_h[h] += p[L.gate_out.w + j * D.h_gate + h] * g_logit[j];
            }
        }
        for (std::size_t h = 0; h < D.h_gate; ++h) {
            const double g_a = g_h[h] * tr.gate_h[h] * (1.0 - tr.gate_h[h]);
            g[L.gate_hidden.b + h] += g_a;
            for (std::size_t f = 0; f < kNumFeatures; ++f) g[L.gate_hidden.w + h * kNumFeatures + f] += g_a * tr.x[f];
        }
    }
    return {std::move(g), lb};
}

inline std::pair<GradientSet, LossBreakdown> backward(const PSTNetModel& m, std::span<const TrainingExample> batch,
                                                      LossWeights w = {}) {
    BackwardWorkspace ws;
    return backward(m, batch, w, ws);
}

/// Convenience overload taking raw states.
struct LabeledState {
    AtmosphericState state;
    double k_true = 0.0;
    RegimeTarget regime;
};

inline std::pair<GradientSet, LossBreakdown> backward(const PSTNetModel& m, std::span<const LabeledState> batch,
                                                      LossWeights w = {}) {
    if (batch.empty()) throw DomainError("backward: empty batch");
    std::vector<TrainingExample> ex;
    ex.reserve(batch.size());
    for (const auto& b : batch) ex.push_back(make_example(m, b.state, b.k_true, b.regime));
    return backward(m, std::span<const TrainingExample>(ex), w);
}

}  // namespace pstnet
