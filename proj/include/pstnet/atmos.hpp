#pragma once

// Standard atmosphere, feature assembly, bulk Richardson number and the
// physics-derived stability regime labels used to supervise the gate.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string_view>

#include "pstnet/error.hpp"

namespace pstnet {

inline constexpr std::size_t kNumFeatures = 7;
inline constexpr std::size_t kNumRegimes = 4;

enum class Regime : int { convective = 0, neutral = 1, stable = 2, stratospheric = 3 };

inline constexpr std::array<std::string_view, kNumRegimes> kRegimeNames{
    "convective", "neutral", "stable", "stratospheric"};

namespace atmos_const {
inline constexpr double g = 9.81;                  // m/s^2
inline constexpr double dry_adiabatic = 0.0098;    // K/m
inline constexpr double gas_constant = 287.05287;  // J/(kg K), dry air
inline constexpr double sea_level_temperature = 288.15;
inline constexpr double sea_level_pressure = 101325.0;
inline constexpr double sea_level_density =
    sea_level_pressure / (gas_constant * sea_level_temperature);  // 1.2250 kg/m^3
inline constexpr double max_altitude = 35000.0;

// Bulk Richardson closure.
inline constexpr double ri_layer_depth = 100.0;   // m
inline constexpr double ri_shear_fraction = 0.2;  // du = 0.2 * u10
inline constexpr double ri_shear_floor = 0.5;     // m/s

// Regime thresholds and softening.
inline constexpr double ri_threshold = 0.1;
inline constexpr double strato_altitude = 12000.0;  // m
inline constexpr double ri_temperature = 0.03;      // Ri units
inline constexpr double strato_temperature = 100.0; // m
}  // namespace atmos_const

struct AtmosphericState {
    double altitude_m = 0.0;
    double temperature_k = atmos_const::sea_level_temperature;
    double pressure_pa = atmos_const::sea_level_pressure;
    double wind10_mps = 0.0;
    double lapse_k_per_m = -0.0065;
    double density_ratio = 1.0;
    double latitude_deg = 0.0;

    std::array<double, kNumFeatures> as_array() const {
        return {altitude_m,    temperature_k, pressure_pa, wind10_mps,
                lapse_k_per_m, density_ratio, latitude_deg};
    }

    static AtmosphericState from_array(const std::array<double, kNumFeatures>& a) {
        return {a[0], a[1], a[2], a[3], a[4], a[5], a[6]};
    }

    bool operator==(const AtmosphericState&) const = default;
};

/// Throws DomainError if any state invariant is violated.
inline void validate(const AtmosphericState& s) {
    for (double v : s.as_array())
        if (!std::isfinite(v)) throw DomainError("atmospheric state has non-finite field");
    if (s.temperature_k <= 0.0) throw DomainError("temperature must be positive");
    if (s.pressure_pa <= 0.0) throw DomainError("pressure must be positive");
    if (s.density_ratio <= 0.0) throw DomainError("density ratio must be positive");
    if (s.wind10_mps < 0.0) throw DomainError("wind speed must be non-negative");
    if (s.altitude_m < 0.0 || s.altitude_m > atmos_const::max_altitude)
        throw DomainError("altitude outside [0, 35000] m");
    if (s.latitude_deg < -90.0 || s.latitude_deg > 90.0)
        throw DomainError("latitude outside [-90, 90] deg");
}

namespace detail {

struct IsaLayer {
    double base_m;
    double base_t;
    double lapse;  // K/m
};

// Base pressures are derived below by integrating layer by layer.
inline constexpr std::array<IsaLayer, 4> kIsaLayers{{
    {0.0, 288.15, -0.0065},
    {11000.0, 216.65, 0.0},
    {20000.0, 216.65, 0.0010},
    {32000.0, 228.65, 0.0028},
}};

inline double layer_pressure(const IsaLayer& layer, double base_p, double h) {
    const double dh = h - layer.base_m;
    const double g_over_r = atmos_const::g / atmos_const::gas_constant;
    if (layer.lapse == 0.0) return base_p * std::exp(-g_over_r * dh / layer.base_t);
    const double t = layer.base_t + layer.lapse * dh;
    return base_p * std::pow(t / layer.base_t, -g_over_r / layer.lapse);
}

}  // namespace detail

/// Density ratio from the ideal gas law.
inline double density_ratio(double pressure_pa, double temperature_k) {
    return pressure_pa / (atmos_const::gas_constant * temperature_k) /
           atmos_const::sea_level_density;
}

/// ISA temperature, pressure and lapse at a geopotential altitude.
/// Wind is calm; latitude zero.
inline AtmosphericState isa_state(double altitude_m) {
    if (!(altitude_m >= 0.0 && altitude_m <= atmos_const::max_altitude))
        throw DomainError("isa_state: altitude outside [0, 35000] m");

    double base_p = atmos_const::sea_level_pressure;
    std::size_t idx = 0;
    for (std::size_t i = 1; i < detail::kIsaLayers.size(); ++i) {
        if (altitude_m < detail::kIsaLayers[i].base_m) break;
        base_p = detail::layer_pressure(detail::kIsaLayers[i - 1], base_p,
                                        detail::kIsaLayers[i].base_m);
        idx = i;
    }
    const auto& layer = detail::kIsaLayers[idx];

    AtmosphericState s;
    s.altitude_m = altitude_m;
    s.temperature_k = layer.base_t + layer.lapse * (altitude_m - layer.base_m);
    s.pressure_pa = detail::layer_pressure(layer, base_p, altitude_m);
    s.lapse_k_per_m = layer.lapse;
    s.wind10_mps = 0.0;
    s.latitude_deg = 0.0;
    s.density_ratio = density_ratio(s.pressure_pa, s.temperature_k);
    return s;
}

/// Bulk Richardson number over a 100 m layer with shear 0.2 * u10 (floored).
inline double bulk_richardson(const AtmosphericState& s) {
    using namespace atmos_const;
    const double du = std::max(ri_shear_fraction * s.wind10_mps, ri_shear_floor);
    const double stability = s.lapse_k_per_m + dry_adiabatic;
    return (g / s.temperature_k) * stability * ri_layer_depth * ri_layer_depth / (du * du);
}

struct RegimeTarget {
    std::array<double, kNumRegimes> probs{};
    double ri = 0.0;

    Regime argmax() const {
        return static_cast<Regime>(std::max_element(probs.begin(), probs.end()) - probs.begin());
    }
};

/// Soft stability label: tau-softmax over signed margins to the Ri thresholds,
/// with the stratospheric class taking sigmoid((h - 12 km) / 100 m) of the mass.
inline RegimeTarget regime_target(double ri, double altitude_m) {
    using namespace atmos_const;
    if (!std::isfinite(ri) || !std::isfinite(altitude_m))
        throw DomainError("regime_target: non-finite input");

    const std::array<double, 3> margin{
        -ri_threshold - ri,
        ri_threshold - std::abs(ri),
        ri - ri_threshold,
    };
    const double top = *std::max_element(margin.begin(), margin.end());
    std::array<double, 3> w{};
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
        w[i] = std::exp((margin[i] - top) / ri_temperature);
        sum += w[i];
    }
    const double p_strato = 1.0 / (1.0 + std::exp(-(altitude_m - strato_altitude) / strato_temperature));

    RegimeTarget t;
    t.ri = ri;
    for (std::size_t i = 0; i < 3; ++i) t.probs[i] = (1.0 - p_strato) * w[i] / sum;
    t.probs[3] = p_strato;
    return t;
}

inline RegimeTarget regime_target(const AtmosphericState& s) {
    return regime_target(bulk_richardson(s), s.altitude_m);
}

using FeatureVector = std::array<double, kNumFeatures>;

/// Per-feature z-scoring plus the target (TKE) standardization.
struct Standardizer {
    std::array<double, kNumFeatures> mean{};
    std::array<double, kNumFeatures> scale{1, 1, 1, 1, 1, 1, 1};
    double target_mean = 0.0;
    double target_scale = 1.0;

    void check() const {
        for (std::size_t i = 0; i < kNumFeatures; ++i)
            if (!std::isfinite(mean[i]) || !std::isfinite(scale[i]) || scale[i] <= 0.0)
                throw DomainError("standardizer: non-finite mean or non-positive scale");
        if (!std::isfinite(target_mean) || !(target_scale > 0.0))
            throw DomainError("standardizer: bad target statistics");
    }

    FeatureVector standardize(const std::array<double, kNumFeatures>& raw) const {
        FeatureVector x{};
        for (std::size_t i = 0; i < kNumFeatures; ++i) x[i] = (raw[i] - mean[i]) / scale[i];
        return x;
    }

    std::array<double, kNumFeatures> destandardize(const FeatureVector& x) const {
        std::array<double, kNumFeatures> raw{};
        for (std::size_t i = 0; i < kNumFeatures; ++i) raw[i] = x[i] * scale[i] + mean[i];
        return raw;
    }

    double standardize_target(double k) const { return (k - target_mean) / target_scale; }
    double destandardize_target(double z) const { return z * target_scale + target_mean; }

    bool operator==(const Standardizer&) const = default;
};

/// Fits feature and target statistics (population variance).
inline Standardizer fit_standardizer(std::span<const AtmosphericState> states,
                                     std::span<const double> targets) {
    if (states.empty() || states.size() != targets.size())
        throw DomainError("fit_standardizer: need equal, non-empty inputs");
    Standardizer st;
    const double n = static_cast<double>(states.size());
    std::array<double, kNumFeatures> sum{}, sq{};
    for (const auto& s : states) {
        const auto a = s.as_array();
        for (std::size_t i = 0; i < kNumFeatures; ++i) sum[i] += a[i];
    }
    for (std::size_t i = 0; i < kNumFeatures; ++i) st.mean[i] = sum[i] / n;
    for (const auto& s : states) {
        const auto a = s.as_array();
        for (std::size_t i = 0; i < kNumFeatures; ++i) sq[i] += (a[i] - st.mean[i]) * (a[i] - st.mean[i]);
    }
    for (std::size_t i = 0; i < kNumFeatures; ++i) {
        const double sd = std::sqrt(sq[i] / n);
        st.scale[i] = sd > 0.0 ? sd : 1.0;
    }
    double tsum = 0.0, tsq = 0.0;
    for (double t : targets) tsum += t;
    st.target_mean = tsum / n;
    for (double t : targets) tsq += (t - st.target_mean) * (t - st.target_mean);
    const double tsd = std::sqrt(tsq / n);
    st.target_scale = tsd > 0.0 ? tsd : 1.0;
    return st;
}

/// Standardized input in fixed order: h, T, P, u10, lapse, density ratio, latitude.
inline FeatureVector feature_vector(const AtmosphericState& s, const Standardizer& stats) {
    for (double v : s.as_array())
        if (!std::isfinite(v)) throw DomainError("feature_vector: non-finite state field");
    stats.check();
    return stats.standardize(s.as_array());
}

}  // namespace pstnet
