#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "pstnet/util.hpp"

namespace pstnet {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
public:
    Adam(std::size_t n, AdamConfig cfg = {}) : cfg_(cfg), m_(n, 0.0), v_(n, 0.0) {}

    void step(std::span<double> params, std::span<const double> grad, double lr) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * grad[i];
            v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * grad[i] * grad[i];
            params[i] -= lr * (m_[i] / bc1) / (std::sqrt(v_[i] / bc2) + cfg_.eps);
        }
    }

private:
    AdamConfig cfg_;
    std::vector<double> m_, v_;
    std::uint64_t t_ = 0;
};

/// Cosine decay from lr_max at step 0 to lr_min at the last step.
inline double cosine_lr(double lr_max, double lr_min, std::size_t step, std::size_t total_steps) {
    if (total_steps <= 1) return lr_max;
    const double t = static_cast<double>(step) / static_cast<double>(total_steps - 1);
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(M_PI * t));
}

/// Epoch permutation, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(mix_seed(seed, epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

}  // namespace pstnet
