#pragma once

// Zero-parameter surface-layer physics: log-law friction velocity, Obukhov
// length, Businger-Dyer shear function, the MO turbulence kinetic energy
// backbone, dissipation rate and the Kolmogorov-bounded output transform.

#include <algorithm>
#include <cmath>
#include <limits>

#include "pstnet/atmos.hpp"

namespace pstnet {

struct PhysicsConstants {
    double c_mu = 0.09;
    double kappa = 0.4;
    double c_k = 1.5;
    double g = 9.81;

    bool operator==(const PhysicsConstants&) const = default;
};

namespace mo_const {
inline constexpr double z_ref = 10.0;        // m, anemometer height
inline constexpr double z_rough = 0.03;      // m, open grassland
inline constexpr double heat_transfer = 1.3e-3;
inline constexpr double flux_layer = 100.0;  // m
inline constexpr double height_cap = 500.0;  // m
inline constexpr double height_floor = 10.0; // m
inline constexpr double zeta_clamp = 5.0;
inline constexpr double reference_pressure = 100000.0;  // Pa
inline constexpr double kappa_exponent = 0.2857;        // R/cp
}  // namespace mo_const

struct SurfaceFluxState {
    double u_star_mps = 0.0;
    double theta_v_k = 300.0;
    double heat_flux_kms = 0.0;
    double obukhov_len_m = std::numeric_limits<double>::infinity();
};

struct DissipationEstimate {
    double epsilon_m2s3 = 0.0;
};

inline double friction_velocity(double wind10_mps, const PhysicsConstants& c = {}) {
    if (wind10_mps <= 0.0) return 0.0;
    return c.kappa * wind10_mps / std::log(mo_const::z_ref / mo_const::z_rough);
}

/// L = -u*^3 theta_v / (kappa g w'theta_v'). Zero flux gives +/-inf, the sign
/// following the sign of the (signed) zero.
inline double obukhov_length(double u_star, double theta_v, double heat_flux,
                             const PhysicsConstants& c = {}) {
    if (heat_flux == 0.0)
        return std::signbit(heat_flux) ? std::numeric_limits<double>::infinity()
                                       : -std::numeric_limits<double>::infinity();
    return -(u_star * u_star * u_star) * theta_v / (c.kappa * c.g * heat_flux);
}

/// Bulk-transfer kinematic heat flux proxy from the layer stability.
inline double heat_flux_proxy(const AtmosphericState& s) {
    return -mo_const::heat_transfer * s.wind10_mps *
           (s.lapse_k_per_m + atmos_const::dry_adiabatic) * mo_const::flux_layer;
}

inline double potential_temperature(double temperature_k, double pressure_pa) {
    return temperature_k *
           std::pow(mo_const::reference_pressure / pressure_pa, mo_const::kappa_exponent);
}

inline SurfaceFluxState surface_flux(const AtmosphericState& s, const PhysicsConstants& c = {}) {
    SurfaceFluxState f;
    f.u_star_mps = friction_velocity(s.wind10_mps, c);
    f.theta_v_k = potential_temperature(s.temperature_k, s.pressure_pa);
    f.heat_flux_kms = heat_flux_proxy(s);
    f.obukhov_len_m = obukhov_length(f.u_star_mps, f.theta_v_k, f.heat_flux_kms, c);
    return f;
}

inline double effective_height(double altitude_m) {
    return std::clamp(altitude_m, mo_const::height_floor, mo_const::height_cap);
}

/// Businger-Dyer dimensionless shear, zeta clamped to [-5, 5].
inline double phi_m(double zeta) {
    zeta = std::clamp(zeta, -mo_const::zeta_clamp, mo_const::zeta_clamp);
    if (zeta < 0.0) return std::pow(1.0 - 16.0 * zeta, -0.25);
    return 1.0 + 5.0 * zeta;
}

/// zeta = h_eff / L; 0 for the neutral sentinel.
inline double stability_parameter(double h_eff, double obukhov_len) {
    if (std::isinf(obukhov_len)) return 0.0;
    return std::clamp(h_eff / obukhov_len, -mo_const::zeta_clamp, mo_const::zeta_clamp);
}

/// Backbone TKE from u*, L and height (m^2/s^2).
inline double mo_tke(double u_star, double obukhov_len, double altitude_m,
                     const PhysicsConstants& c = {}) {
    const double zeta = stability_parameter(effective_height(altitude_m), obukhov_len);
    return u_star * u_star / std::sqrt(c.c_mu) * phi_m(zeta);
}

inline double mo_tke(const AtmosphericState& s, const PhysicsConstants& c = {}) {
    const auto f = surface_flux(s, c);
    return mo_tke(f.u_star_mps, f.obukhov_len_m, s.altitude_m, c);
}

inline DissipationEstimate dissipation(double u_star, double altitude_m, double obukhov_len,
                                       const PhysicsConstants& c = {}) {
    const double h_eff = effective_height(altitude_m);
    const double zeta = stability_parameter(h_eff, obukhov_len);
    const double phi_eps = zeta >= 0.0 ? phi_m(zeta) - zeta : phi_m(zeta);
    const double eps = u_star * u_star * u_star / (c.kappa * h_eff) * phi_eps;
    return {std::max(eps, 0.0)};
}

inline DissipationEstimate dissipation(const AtmosphericState& s, const PhysicsConstants& c = {}) {
    const auto f = surface_flux(s, c);
    return dissipation(f.u_star_mps, s.altitude_m, f.obukhov_len_m, c);
}

/// Largest residual the output layer can add on top of k_MO.
inline double kolmogorov_headroom(DissipationEstimate eps, double density_ratio,
                                  const PhysicsConstants& c = {}) {
    return c.c_k * std::cbrt(eps.epsilon_m2s3) * std::sqrt(density_ratio);
}

inline double sigmoid(double s) {
    if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
    const double e = std::exp(s);
    return e / (1.0 + e);
}

/// k = k_MO + sigmoid(s) C_K eps^(1/3) sqrt(rho/rho0); bounded by construction.
inline double kolmogorov_output(double k_mo, double s, DissipationEstimate eps,
                                double density_ratio, const PhysicsConstants& c = {}) {
    return k_mo + sigmoid(s) * kolmogorov_headroom(eps, density_ratio, c);
}

/// Everything the network needs from the physics branch for one state.
struct PhysicsTerms {
    double k_mo = 0.0;
    DissipationEstimate epsilon{};
    double headroom = 0.0;
};

inline PhysicsTerms physics_terms(const AtmosphericState& s, const PhysicsConstants& c = {}) {
    const auto f = surface_flux(s, c);
    PhysicsTerms t;
    t.k_mo = mo_tke(f.u_star_mps, f.obukhov_len_m, s.altitude_m, c);
    t.epsilon = dissipation(f.u_star_mps, s.altitude_m, f.obukhov_len_m, c);
    t.headroom = kolmogorov_headroom(t.epsilon, s.density_ratio, c);
    return t;
}

}  // namespace pstnet
