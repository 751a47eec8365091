#pragma once

// Vertical columns of AtmosphericState anchored on surface observations.
//
// T(h) = T_isa(h) + dT0 * exp(-h / H_e) + b(h), with dT0 = T_surface - T_isa(0)
// and b an optional boundary-layer term that replaces the ISA lapse below
// bl_top by bl_lapse (continuous at bl_top, zero above).
// P(h) = P_isa(h) * (P_surface / P0) * exp(-(g/R) * int_0^h (1/T - 1/T_isa) dz),
// so d ln P / dh = -g / (R T) at every height and P is strictly decreasing.
// The lapse is the exact derivative of T(h).

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "pstnet/atmos.hpp"

namespace pstnet {

struct SurfaceObservation {
    double temperature_k = atmos_const::sea_level_temperature;
    double pressure_pa = atmos_const::sea_level_pressure;
    double wind10_mps = 0.0;
    double latitude_deg = 0.0;
};

struct ColumnOptions {
    double efold_m = 3000.0;
    std::optional<double> bl_lapse_k_per_m;  // boundary-layer lapse override
    double bl_top_m = 1000.0;
    double integration_step_m = 25.0;
};

namespace detail {

inline double isa_lapse_at(double h) {
    double lapse = kIsaLayers[0].lapse;
    for (const auto& layer : kIsaLayers)
        if (h >= layer.base_m) lapse = layer.lapse;
    return lapse;
}

inline double column_temperature(const SurfaceObservation& s, const ColumnOptions& o, double h) {
    const double dT0 = s.temperature_k - atmos_const::sea_level_temperature;
    double t = isa_state(h).temperature_k + dT0 * std::exp(-h / o.efold_m);
    if (o.bl_lapse_k_per_m && h < o.bl_top_m) t += (*o.bl_lapse_k_per_m - kIsaLayers[0].lapse) * (h - o.bl_top_m);
    return t;
}

inline double column_lapse(const SurfaceObservation& s, const ColumnOptions& o, double h) {
    const double dT0 = s.temperature_k - atmos_const::sea_level_temperature;
    double lapse = isa_lapse_at(h) - dT0 / o.efold_m * std::exp(-h / o.efold_m);
    if (o.bl_lapse_k_per_m && h < o.bl_top_m) lapse += *o.bl_lapse_k_per_m - kIsaLayers[0].lapse;
    return lapse;
}

inline bool column_is_isa(const SurfaceObservation& s, const ColumnOptions& o) {
    return s.temperature_k == atmos_const::sea_level_temperature && !o.bl_lapse_k_per_m;
}

}  // namespace detail

/// States at the requested altitudes (any order, each in [0, 35000] m).
inline std::vector<AtmosphericState> surface_column(const SurfaceObservation& s, std::span<const double> levels,
                                                    const ColumnOptions& o = {}) {
    if (!(s.temperature_k > 0.0) || !(s.pressure_pa > 0.0) || !(s.wind10_mps >= 0.0) ||
        !(s.latitude_deg >= -90.0 && s.latitude_deg <= 90.0))
        throw DomainError("surface_column: invalid surface observation");
    const double g_over_r = atmos_const::g / atmos_const::gas_constant;
    const bool isa = detail::column_is_isa(s, o);
    auto excess = [&](double h) {
        return 1.0 / detail::column_temperature(s, o, h) - 1.0 / isa_state(h).temperature_k;
    };

    std::vector<std::size_t> order(levels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return levels[a] < levels[b]; });

    std::vector<AtmosphericState> out(levels.size());
    double h_prev = 0.0, integral = 0.0;
    for (std::size_t idx : order) {
        const double h = levels[idx];
        AtmosphericState st = isa_state(h);
        if (!isa && h > h_prev) {
            // Composite Simpson from the previous level; the integrand is
            // continuous, with kinks only at bl_top and ISA layer bases.
            auto steps = static_cast<std::size_t>(std::ceil((h - h_prev) / o.integration_step_m));
            steps += steps % 2;
            const double dz = (h - h_prev) / static_cast<double>(steps);
            double acc = excess(h_prev) + excess(h);
            for (std::size_t i = 1; i < steps; ++i)
                acc += (i % 2 ? 4.0 : 2.0) * excess(h_prev + dz * static_cast<double>(i));
            integral += acc * dz / 3.0;
        }
        h_prev = h;
        st.temperature_k = detail::column_temperature(s, o, h);
        st.pressure_pa = st.pressure_pa * (s.pressure_pa / atmos_const::sea_level_pressure) * std::exp(-g_over_r * integral);
        st.lapse_k_per_m = detail::column_lapse(s, o, h);
        st.density_ratio = density_ratio(st.pressure_pa, st.temperature_k);
        st.wind10_mps = s.wind10_mps;
        st.latitude_deg = s.latitude_deg;
        validate(st);
        out[idx] = st;
    }
    return out;
}

/// Linear interpolation in altitude between the two bracketing column
/// states; clamps outside the column. `column` must be strictly increasing.
inline AtmosphericState interpolate_column(std::span<const AtmosphericState> column, double h) {
    if (column.empty()) throw DomainError("interpolate_column: empty column");
    if (h <= column.front().altitude_m) return column.front();
    if (h >= column.back().altitude_m) return column.back();
    std::size_t lo = 0, hi = column.size() - 1;
    while (hi - lo > 1) {
        const std::size_t mid = (lo + hi) / 2;
        (column[mid].altitude_m <= h ? lo : hi) = mid;
    }
    const auto& a = column[lo];
    const auto& b = column[hi];
    const double f = (h - a.altitude_m) / (b.altitude_m - a.altitude_m);
    auto lerp = [f](double x, double y) { return x + f * (y - x); };
    AtmosphericState s;
    s.altitude_m = h;
    s.temperature_k = lerp(a.temperature_k, b.temperature_k);
    s.pressure_pa = a.pressure_pa * std::pow(b.pressure_pa / a.pressure_pa, f);
    s.wind10_mps = lerp(a.wind10_mps, b.wind10_mps);
    s.lapse_k_per_m = lerp(a.lapse_k_per_m, b.lapse_k_per_m);
    s.density_ratio = density_ratio(s.pressure_pa, s.temperature_k);
    s.latitude_deg = lerp(a.latitude_deg, b.latitude_deg);
    return s;
}

}  // namespace pstnet
