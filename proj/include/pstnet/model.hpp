#pragma once

// The learnable part of the estimator: gate, four experts, FiLM
// hyper-network and the scalar head, stored as one flat parameter vector.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pstnet/atmos.hpp"
#include "pstnet/mophys.hpp"

namespace pstnet {

inline constexpr std::size_t kNumExperts = kNumRegimes;
inline constexpr std::size_t kMaxWidth = 32;

struct ModelDims {
    std::size_t d = 4;         // expert output width
    std::size_t h_gate = 16;   // gate hidden width
    std::size_t h_expert = 6;  // expert hidden width
    std::size_t h_film = 3;    // FiLM hyper-network hidden width

    void check() const {
        for (std::size_t v : {d, h_gate, h_expert, h_film})
            if (v == 0 || v > kMaxWidth) throw DomainError("model dims must be in [1, 32]");
    }

    bool operator==(const ModelDims&) const = default;
};

/// Offsets of every block inside the flat parameter vector. The order here is
/// the serialization order.
struct ParamLayout {
    struct Affine {
        std::size_t w = 0;  // row-major [out x in]
        std::size_t b = 0;
        std::size_t in = 0;
        std::size_t out = 0;
    };

    Affine gate_hidden, gate_out;
    std::array<Affine, kNumExperts> expert_hidden{}, expert_out{};
    Affine film_hidden, film_out;
    std::size_t head_w = 0;
    std::size_t head_b = 0;
    std::size_t total = 0;

    explicit ParamLayout(const ModelDims& dims) {
        std::size_t at = 0;
        auto affine = [&at](std::size_t in, std::size_t out) {
            Affine a{at, at + in * out, in, out};
            at += in * out + out;
            return a;
        };
        gate_hidden = affine(kNumFeatures, dims.h_gate);
        gate_out = affine(dims.h_gate, kNumExperts);
        for (std::size_t j = 0; j < kNumExperts; ++j) {
            expert_hidden[j] = affine(kNumFeatures, dims.h_expert);
            expert_out[j] = affine(dims.h_expert, dims.d);
        }
        film_hidden = affine(1, dims.h_film);
        film_out = affine(dims.h_film, 2 * dims.d);
        head_w = at;
        at += dims.d;
        head_b = at;
        at += 1;
        total = at;
    }
};

struct PSTNetModel {
    ModelDims dims;
    std::vector<double> params;
    Standardizer norm;
    PhysicsConstants constants;

    PSTNetModel() : PSTNetModel(ModelDims{}) {}
    explicit PSTNetModel(const ModelDims& dims_) : dims(dims_) {
        dims.check();
        params.assign(ParamLayout(dims).total, 0.0);
    }

    ParamLayout layout() const { return ParamLayout(dims); }

    bool operator==(const PSTNetModel&) const = default;
};

namespace nn {

inline constexpr double gelu_c = 0.7978845608;
inline constexpr double gelu_a = 0.044715;

template <typename T>
T gelu(T x) {
    const T t = std::tanh(T(gelu_c) * (x + T(gelu_a) * x * x * x));
    return T(0.5) * x * (T(1) + t);
}

inline double gelu_grad(double x) {
    const double inner = gelu_c * (x + gelu_a * x * x * x);
    const double t = std::tanh(inner);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * gelu_c * (1.0 + 3.0 * gelu_a * x * x);
}

template <typename T>
T logistic(T s) {
    if (s >= T(0)) return T(1) / (T(1) + std::exp(-s));
    const T e = std::exp(s);
    return e / (T(1) + e);
}

/// out = W in + b for one affine block of the flat vector.
template <typename T>
void affine(const T* p, const ParamLayout::Affine& a, const T* in, T* out) {
    const T* w = p + a.w;
    const T* b = p + a.b;
    for (std::size_t r = 0; r < a.out; ++r) {
        T acc = b[r];
        const T* row = w + r * a.in;
        for (std::size_t c = 0; c < a.in; ++c) acc += row[c] * in[c];
        out[r] = acc;
    }
}

template <typename T>
void softmax(const T* logits, T* out, std::size_t n) {
    T top = logits[0];
    for (std::size_t i = 1; i < n; ++i) top = std::max(top, logits[i]);
    T sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = std::exp(logits[i] - top);
        sum += out[i];
    }
    for (std::size_t i = 0; i < n; ++i) out[i] /= sum;
}

/// Every intermediate of one forward pass; reused by backprop.
template <typename T>
struct Trace {
    std::array<T, kNumFeatures> x{};
    std::array<T, kMaxWidth> gate_pre{}, gate_h{};
    std::array<T, kNumExperts> logits{}, alpha{};
    std::array<std::array<T, kMaxWidth>, kNumExperts> exp_pre{}, exp_q{}, z{}, zt{};
    std::array<T, kMaxWidth> film_pre{}, film_h{};
    std::array<T, 2 * kMaxWidth> film_out{};
    std::array<T, kMaxWidth> gamma{}, beta{}, zbar{};
    T s = 0;
    T sig = 0;
};

template <typename T>
void gate_pass(const ModelDims& dims, const ParamLayout& L, const T* p, Trace<T>& tr) {
    affine(p, L.gate_hidden, tr.x.data(), tr.gate_pre.data());
    for (std::size_t i = 0; i < dims.h_gate; ++i) tr.gate_h[i] = logistic(tr.gate_pre[i]);
    affine(p, L.gate_out, tr.gate_h.data(), tr.logits.data());
    softmax(tr.logits.data(), tr.alpha.data(), kNumExperts);
}

template <typename T>
void expert_pass(const ModelDims& dims, const ParamLayout& L, const T* p, std::size_t j, Trace<T>& tr) {
    affine(p, L.expert_hidden[j], tr.x.data(), tr.exp_pre[j].data());
    for (std::size_t i = 0; i < dims.h_expert; ++i) tr.exp_q[j][i] = gelu(tr.exp_pre[j][i]);
    affine(p, L.expert_out[j], tr.exp_q[j].data(), tr.z[j].data());
}

template <typename T>
void film_pass(const ModelDims& dims, const ParamLayout& L, const T* p, T density_ratio, Trace<T>& tr) {
    affine(p, L.film_hidden, &density_ratio, tr.film_pre.data());
    for (std::size_t i = 0; i < dims.h_film; ++i) tr.film_h[i] = std::tanh(tr.film_pre[i]);
    affine(p, L.film_out, tr.film_h.data(), tr.film_out.data());
    for (std::size_t c = 0; c < dims.d; ++c) {
        tr.gamma[c] = T(1) + tr.film_out[c];
        tr.beta[c] = tr.film_out[dims.d + c];
    }
}

/// Network pass up to the head logit s; fills the trace.
template <typename T>
void network_pass(const ModelDims& dims, const ParamLayout& L, const T* p, T density_ratio, Trace<T>& tr) {
    gate_pass(dims, L, p, tr);
    film_pass(dims, L, p, density_ratio, tr);
    for (std::size_t c = 0; c < dims.d; ++c) tr.zbar[c] = 0;
    for (std::size_t j = 0; j < kNumExperts; ++j) {
        expert_pass(dims, L, p, j, tr);
        for (std::size_t c = 0; c < dims.d; ++c) {
            tr.zt[j][c] = tr.gamma[c] * tr.z[j][c] + tr.beta[c];
            tr.zbar[c] += tr.alpha[j] * tr.zt[j][c];
        }
    }
    T s = p[L.head_b];
    for (std::size_t c = 0; c < dims.d; ++c) s += p[L.head_w + c] * tr.zbar[c];
    tr.s = s;
    tr.sig = logistic(s);
}

}  // namespace nn

struct ForwardDiagnostics {
    std::array<double, kNumExperts> alpha{};
    std::vector<std::vector<double>> per_expert_z;  // conditioned, 4 x d
    std::vector<double> z_bar;
    double s = 0.0;
    double k_mo = 0.0;
    DissipationEstimate epsilon{};
    double k_out = 0.0;
};

/// Gate simplex for a standardized input.
inline std::array<double, kNumExperts> gate_forward(const PSTNetModel& m, const FeatureVector& x) {
    nn::Trace<double> tr;
    tr.x = x;
    nn::gate_pass(m.dims, m.layout(), m.params.data(), tr);
    return tr.alpha;
}

/// Raw (unconditioned) output of expert j.
inline std::vector<double> expert_forward(const PSTNetModel& m, std::size_t j, const FeatureVector& x) {
    if (j >= kNumExperts) throw DomainError("expert index out of range");
    nn::Trace<double> tr;
    tr.x = x;
    nn::expert_pass(m.dims, m.layout(), m.params.data(), j, tr);
    return {tr.z[j].begin(), tr.z[j].begin() + static_cast<std::ptrdiff_t>(m.dims.d)};
}

/// gamma(rho) * z + beta(rho) with the shared hyper-network.
inline std::vector<double> film_condition(const PSTNetModel& m, std::span<const double> z, double density_ratio) {
    if (z.size() != m.dims.d) throw DomainError("film_condition: z must have length d");
    if (!(density_ratio > 0.0)) throw DomainError("film_condition: density ratio must be positive");
    nn::Trace<double> tr;
    nn::film_pass(m.dims, m.layout(), m.params.data(), density_ratio, tr);
    std::vector<double> out(m.dims.d);
    for (std::size_t c = 0; c < m.dims.d; ++c) out[c] = tr.gamma[c] * z[c] + tr.beta[c];
    return out;
}

/// Full estimate k with every intermediate exposed.
inline std::pair<double, ForwardDiagnostics> forward(const PSTNetModel& m, const AtmosphericState& state) {
    validate(state);
    const auto phys = physics_terms(state, m.constants);
    nn::Trace<double> tr;
    tr.x = feature_vector(state, m.norm);
    const ParamLayout L = m.layout();
    nn::network_pass(m.dims, L, m.params.data(), state.density_ratio, tr);

    ForwardDiagnostics diag;
    diag.alpha = tr.alpha;
    diag.per_expert_z.resize(kNumExperts);
    for (std::size_t j = 0; j < kNumExperts; ++j)
        diag.per_expert_z[j].assign(tr.zt[j].begin(), tr.zt[j].begin() + static_cast<std::ptrdiff_t>(m.dims.d));
    diag.z_bar.assign(tr.zbar.begin(), tr.zbar.begin() + static_cast<std::ptrdiff_t>(m.dims.d));
    diag.s = tr.s;
    diag.k_mo = phys.k_mo;
    diag.epsilon = phys.epsilon;
    diag.k_out = phys.k_mo + tr.sig * phys.headroom;
    return {diag.k_out, diag};
}

/// Allocation-free estimate; the hot path used by the simulator and service.
inline double predict(const PSTNetModel& m, const ParamLayout& L, const AtmosphericState& state) {
    const auto phys = physics_terms(state, m.constants);
    nn::Trace<double> tr;
    tr.x = m.norm.standardize(state.as_array());
    nn::network_pass(m.dims, L, m.params.data(), state.density_ratio, tr);
    return phys.k_mo + tr.sig * phys.headroom;
}

inline double predict(const PSTNetModel& m, const AtmosphericState& state) {
    return predict(m, m.layout(), state);
}

/// Single-precision copy of the network for inference.
class Float32Model {
public:
    explicit Float32Model(const PSTNetModel& m)
        : dims_(m.dims), layout_(m.dims), norm_(m.norm), constants_(m.constants),
          params_(m.params.begin(), m.params.end()) {}

    double predict(const AtmosphericState& state) const {
        const auto phys = physics_terms(state, constants_);
        nn::Trace<float> tr;
        const auto x = norm_.standardize(state.as_array());
        for (std::size_t i = 0; i < kNumFeatures; ++i) tr.x[i] = static_cast<float>(x[i]);
        nn::network_pass(dims_, layout_, params_.data(), static_cast<float>(state.density_ratio), tr);
        return phys.k_mo + static_cast<double>(tr.sig) * phys.headroom;
    }

private:
    ModelDims dims_;
    ParamLayout layout_;
    Standardizer norm_;
    PhysicsConstants constants_;
    std::vector<float> params_;
};

/// Kaiming-uniform weights, zero biases; the FiLM output layer starts at zero
/// so (gamma, beta) = (1, 0).
inline PSTNetModel init_model(const ModelDims& dims, std::uint64_t seed, const Standardizer& norm = {}) {
    PSTNetModel m(dims);
    m.norm = norm;
    const ParamLayout L = m.layout();
    std::mt19937_64 rng(seed);
    auto fill = [&](const ParamLayout::Affine& a) {
        const double bound = std::sqrt(6.0 / static_cast<double>(a.in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (std::size_t i = 0; i < a.in * a.out; ++i) m.params[a.w + i] = u(rng);
    };
    fill(L.gate_hidden);
    fill(L.gate_out);
    for (std::size_t j = 0; j < kNumExperts; ++j) {
        fill(L.expert_hidden[j]);
        fill(L.expert_out[j]);
    }
    fill(L.film_hidden);
    const double bound = std::sqrt(6.0 / static_cast<double>(dims.d));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (std::size_t c = 0; c < dims.d; ++c) m.params[L.head_w + c] = u(rng);
    return m;
}

struct ParamAudit {
    std::size_t gate = 0;
    std::size_t experts = 0;
    std::size_t film = 0;
    std::size_t head = 0;
    std::size_t total = 0;
    std::size_t norm_stat_scalars = 2 * kNumFeatures + 2;
    std::size_t serialized_bytes = 0;
};

namespace model_file {
inline constexpr char magic[4] = {'P', 'S', 'T', 'N'};
inline constexpr std::uint16_t version = 1;
inline constexpr std::size_t header_bytes = 4 + 2 + 4 + 3 * 2;
inline constexpr std::size_t norm_bytes = (2 * kNumFeatures + 2) * sizeof(double);
inline constexpr std::size_t constants_bytes = 4 * sizeof(double);
inline constexpr std::size_t checksum_bytes = 4;
}  // namespace model_file

/// File size for a given architecture; parameters are stored as binary32.
inline std::size_t serialized_size(const ModelDims& dims) {
    using namespace model_file;
    return header_bytes + norm_bytes + constants_bytes + ParamLayout(dims).total * sizeof(float) +
           checksum_bytes;
}

inline ParamAudit param_audit(const PSTNetModel& m) {
    const ParamLayout L = m.layout();
    auto count = [](const ParamLayout::Affine& a) { return a.in * a.out + a.out; };
    ParamAudit a;
    a.gate = count(L.gate_hidden) + count(L.gate_out);
    for (std::size_t j = 0; j < kNumExperts; ++j) a.experts += count(L.expert_hidden[j]) + count(L.expert_out[j]);
    a.film = count(L.film_hidden) + count(L.film_out);
    a.head = m.dims.d + 1;
    a.total = a.gate + a.experts + a.film + a.head;
    a.serialized_bytes = serialized_size(m.dims);
    return a;
}

}  // namespace pstnet
