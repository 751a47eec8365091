#pragma once

// Paired point-mass guidance simulation.
//
// Truth: the vehicle's ground velocity is its air velocity plus the gust
// g = sigma_true(h) u(t), where u is a unit-variance first-order Gauss-Markov
// stream seeded from the run seed alone. An automatic-gain gust sensor reports
// the normalized signature m = u + n (n: optional sensor noise of the same
// spectral form, off by default); the estimator under test supplies the scale:
//   g_hat = sigma_est * m / (1 + s_n^2),   sigma_est = sqrt(2 k_est / 3).
// The 1 / (1 + s_n^2) factor is the least-squares estimate of u from m, so
// the expected squared navigation drift is minimal exactly when
// sigma_est = sigma_true. Navigation integrates the air velocity plus g_hat;
// proportional navigation steers the navigated position onto the target and
// the residual navigation error becomes the miss. With no gust present the
// sensor has nothing to normalize and reports zero.
//
// Estimators never touch u, n, or sigma_true.

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "pstnet/column.hpp"
#include "pstnet/config.hpp"
#include "pstnet/datagen.hpp"
#include "pstnet/stats.hpp"

namespace pstnet {

struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    Vec3 cross(const Vec3& o) const { return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x}; }
    double norm() const { return std::sqrt(dot(*this)); }
    bool finite() const { return std::isfinite(x) && std::isfinite(y) && std::isfinite(z); }
    bool operator==(const Vec3&) const = default;
};

struct VehicleClass {
    std::string name;
    double mach = 0.0;
    double mass_kg = 0.0;
    double ref_area_m2 = 0.0;
    double drag_coeff = 0.0;
    double max_lateral_accel = 0.0;  // m/s^2
    double nav_gain = 4.0;           // N'
};

inline const std::vector<VehicleClass>& vehicle_presets() {
    static const std::vector<VehicleClass> v{
        {"supersonic", 2.8, 500.0, 0.04, 0.25, 250.0, 4.0},
        {"high-supersonic", 4.5, 700.0, 0.06, 0.22, 300.0, 4.0},
        {"hypersonic-glide", 8.0, 1200.0, 0.30, 0.10, 150.0, 4.0},
    };
    return v;
}

/// Accepts the preset name or its Mach number ("2.8", "M4.5").
inline const VehicleClass& vehicle_preset(std::string_view key) {
    std::string_view k = key;
    if (!k.empty() && (k[0] == 'M' || k[0] == 'm')) k.remove_prefix(1);
    double mach = 0.0;
    const auto [end, ec] = std::from_chars(k.data(), k.data() + k.size(), mach);
    const bool numeric = ec == std::errc() && end == k.data() + k.size();
    for (const auto& v : vehicle_presets())
        if (v.name == key || (numeric && mach == v.mach)) return v;
    throw DomainError("unknown vehicle preset '" + std::string(key) + "'");
}

/// Uniform draw on [lo, hi]; a degenerate range is a constant and consumes no randomness.
struct ParamRange {
    double lo = 0.0, hi = 0.0;
    double draw(std::mt19937_64& rng) const {
        if (lo == hi) return lo;
        return std::uniform_real_distribution<double>(lo, hi)(rng);
    }
};

struct ScenarioPreset {
    char category = 'A';
    std::string name;
    ParamRange launch_altitude_m{12000.0, 12000.0};
    ParamRange range_m{80000.0, 80000.0};
    ParamRange lateral_offset_m{0.0, 0.0};
    ParamRange target_altitude_m{0.0, 0.0};
    ParamRange temperature_anomaly_k{0.0, 0.0};
    ParamRange wind10_mps{8.0, 8.0};
    ParamRange latitude_deg{35.0, 35.0};
    std::optional<ParamRange> bl_lapse_k_per_km;
    double bl_top_m = 1000.0;
    double surface_pressure_pa = atmos_const::sea_level_pressure;
};

inline constexpr std::string_view kCategories = "ABCDEF";

/// Keys: category, name, and for each ranged quantity either `<key>` or the
/// pair `<key>_min` / `<key>_max`.
inline ScenarioPreset parse_scenario(const KeyValueConfig& c) {
    ScenarioPreset p;
    const std::string cat = c.get_string("category");
    if (cat.size() != 1 || kCategories.find(cat[0]) == std::string_view::npos)
        throw ConfigError(c.origin() + ": category must be one of A-F");
    p.category = cat[0];
    p.name = c.get_string("name");
    auto range = [&](const std::string& key, ParamRange def) {
        if (c.has(key)) {
            const double v = c.get_double(key);
            return ParamRange{v, v};
        }
        if (c.has(key + "_min") || c.has(key + "_max")) {
            ParamRange r{c.get_double(key + "_min"), c.get_double(key + "_max")};
            if (!(r.lo <= r.hi)) throw ConfigError(c.origin() + ": " + key + "_min exceeds " + key + "_max");
            return r;
        }
        return def;
    };
    p.launch_altitude_m = range("launch_altitude_m", p.launch_altitude_m);
    p.range_m = range("range_m", p.range_m);
    p.lateral_offset_m = range("lateral_offset_m", p.lateral_offset_m);
    p.target_altitude_m = range("target_altitude_m", p.target_altitude_m);
    p.temperature_anomaly_k = range("temperature_anomaly_k", p.temperature_anomaly_k);
    p.wind10_mps = range("wind10_mps", p.wind10_mps);
    p.latitude_deg = range("latitude_deg", p.latitude_deg);
    if (c.has("bl_lapse_k_per_km") || c.has("bl_lapse_k_per_km_min"))
        p.bl_lapse_k_per_km = range("bl_lapse_k_per_km", {});
    p.bl_top_m = c.get_double("bl_top_m", p.bl_top_m);
    p.surface_pressure_pa = c.get_double("surface_pressure_pa", p.surface_pressure_pa);
    if (p.launch_altitude_m.lo < 0.0 || p.launch_altitude_m.hi > atmos_const::max_altitude ||
        p.target_altitude_m.lo < 0.0 || p.target_altitude_m.hi > atmos_const::max_altitude || p.range_m.lo <= 0.0 ||
        p.wind10_mps.lo < 0.0)
        throw ConfigError(c.origin() + ": scenario geometry out of range");
    return p;
}

inline ScenarioPreset load_scenario_preset(char category) {
    if (kCategories.find(category) == std::string_view::npos) throw DomainError("unknown scenario category");
    const auto path = data_dir() / "scenarios" / (std::string(1, category) + ".cfg");
    return parse_scenario(KeyValueConfig::load(path));
}

struct Scenario {
    char category = 'A';
    std::uint64_t seed = 0;
    Vec3 launch;
    Vec3 target;
    std::vector<AtmosphericState> column;  // strictly increasing altitude
};

inline constexpr double kColumnStep = 100.0;

/// Geometry and atmosphere for one run; a pure function of (preset, seed).
inline Scenario make_scenario(const ScenarioPreset& p, std::uint64_t seed) {
    std::mt19937_64 rng(mix_seed(seed, 0x5CE7A210ULL));
    Scenario s;
    s.category = p.category;
    s.seed = seed;
    const double h0 = p.launch_altitude_m.draw(rng);
    const double range = p.range_m.draw(rng);
    const double lateral = p.lateral_offset_m.draw(rng);
    const double ht = p.target_altitude_m.draw(rng);
    SurfaceObservation obs;
    obs.temperature_k = atmos_const::sea_level_temperature + p.temperature_anomaly_k.draw(rng);
    obs.pressure_pa = p.surface_pressure_pa;
    obs.wind10_mps = p.wind10_mps.draw(rng);
    obs.latitude_deg = p.latitude_deg.draw(rng);
    ColumnOptions opt;
    if (p.bl_lapse_k_per_km) opt.bl_lapse_k_per_m = p.bl_lapse_k_per_km->draw(rng) * 1e-3;
    opt.bl_top_m = p.bl_top_m;
    s.launch = {0.0, 0.0, h0};
    s.target = {range, lateral, ht};
    std::vector<double> levels;
    for (double h = 0.0; h <= atmos_const::max_altitude; h += kColumnStep) levels.push_back(h);
    s.column = surface_column(obs, levels, opt);
    return s;
}

struct SimConfig {
    double dt = 0.01;                // s
    double lag_tau = 0.2;            // s, lateral acceleration lag
    double estimator_period = 0.1;   // s, turbulence model update interval
    double gust_length_m = 533.4;    // Dryden length scale above the boundary layer
    double sensor_noise = 0.0;       // sd of the normalized sensor noise, per axis
    double turbulence_scale = 1.0;   // multiplies the true gust field
    double max_time_s = 600.0;
    double cep_m = 1000.0;
    double trace_period = 0.5;       // s, decimation of recorded samples
    double gust_knot_s = 0.01;       // s, sampling interval of the gust process
};

struct VehicleState {
    Vec3 p;      // ground-frame position
    Vec3 v;      // air velocity
    Vec3 a_lat;  // achieved lateral acceleration
};

inline constexpr Vec3 kGravity{0.0, 0.0, -atmos_const::g};

/// One step: first-order lag toward the commanded acceleration, explicit
/// velocity update, trapezoidal position update (exact for constant
/// acceleration), plus the gust as an additive wind velocity.
inline VehicleState step_dynamics(const VehicleState& s, const Vec3& a_cmd, const Vec3& gust, double dt,
                                  const VehicleClass& veh, double density_kg_m3, double lag_tau = 0.2) {
    if (!(dt > 0.0 && dt <= 0.05)) throw DomainError("step_dynamics: dt must be in (0, 0.05] s");
    VehicleState n;
    n.a_lat = s.a_lat + (a_cmd - s.a_lat) * (1.0 - std::exp(-dt / lag_tau));
    const double speed = s.v.norm();
    const double drag_per_v =
        veh.mass_kg > 0.0 ? 0.5 * density_kg_m3 * speed * veh.drag_coeff * veh.ref_area_m2 / veh.mass_kg : 0.0;
    const Vec3 accel = n.a_lat + kGravity - s.v * drag_per_v;
    n.v = s.v + accel * dt;
    n.p = s.p + (s.v + n.v) * (0.5 * dt) + gust * dt;
    if (!n.p.finite() || !n.v.finite()) throw DomainError("step_dynamics: non-finite vehicle state");
    return n;
}

/// Proportional navigation on the navigated position with gravity
/// compensation; lateral (perpendicular to velocity) and magnitude-limited.
inline Vec3 pn_command(const Vec3& p_nav, const Vec3& v, const Vec3& target, const VehicleClass& veh) {
    const Vec3 r = target - p_nav;
    const double r2 = r.dot(r);
    const double speed = v.norm();
    if (r2 <= 0.0 || speed <= 0.0) return {};
    const Vec3 rel = v * -1.0;
    const double rn = std::sqrt(r2);
    const Vec3 omega = r.cross(rel) * (1.0 / r2);
    const double closing = -r.dot(rel) / rn;
    Vec3 a = omega.cross(r * (1.0 / rn)) * (veh.nav_gain * closing);
    a = a - kGravity;
    const Vec3 vhat = v * (1.0 / speed);
    a = a - vhat * a.dot(vhat);
    const double mag = a.norm();
    if (mag > veh.max_lateral_accel) a = a * (veh.max_lateral_accel / mag);
    return a;
}

/// Unit-variance first-order Gauss-Markov stream per axis (discrete Dryden form).
class GaussMarkov3 {
public:
    GaussMarkov3(double phi, std::uint64_t seed) : phi_(phi), drive_(std::sqrt(1.0 - phi * phi)), rng_(seed) {
        state_ = {unit_(rng_), unit_(rng_), unit_(rng_)};
    }
    const Vec3& value() const { return state_; }
    const Vec3& advance() {
        state_ = state_ * phi_ + Vec3{unit_(rng_), unit_(rng_), unit_(rng_)} * drive_;
        return state_;
    }

private:
    double phi_, drive_;
    std::mt19937_64 rng_;
    std::normal_distribution<double> unit_{0.0, 1.0};
    Vec3 state_;
};

/// GaussMarkov3 sampled on a fixed time grid and interpolated linearly, so a
/// run sees the same field whatever its integration step.
class GustTrack {
public:
    GustTrack(double phi, std::uint64_t seed, double knot_s)
        : knot_s_(knot_s), gm_(phi, seed), a_(gm_.value()), b_(gm_.advance()) {}
    Vec3 at(double t) {
        while (t > static_cast<double>(index_ + 1) * knot_s_) {
            a_ = b_;
            b_ = gm_.advance();
            ++index_;
        }
        const double f = std::clamp(t / knot_s_ - static_cast<double>(index_), 0.0, 1.0);
        return a_ * (1.0 - f) + b_ * f;
    }

private:
    double knot_s_;
    GaussMarkov3 gm_;
    Vec3 a_, b_;
    std::size_t index_ = 0;
};

/// Gust stream with stationary per-axis variance 2k/3 and correlation time
/// length_scale / airspeed.
class GustGenerator {
public:
    GustGenerator(double k, double length_scale_m, double airspeed_mps, std::uint64_t seed, double dt)
        : sigma_(std::sqrt(2.0 * std::max(k, 0.0) / 3.0)),
          unit_(std::exp(-airspeed_mps * dt / length_scale_m), seed) {
        if (k < 0.0) throw DomainError("gust_generator: k must be non-negative");
    }
    Vec3 next() { return unit_.advance() * sigma_; }
    double sigma() const { return sigma_; }

private:
    double sigma_;
    GaussMarkov3 unit_;
};

using TkeEstimator = std::function<double(const AtmosphericState&)>;

struct NamedEstimator {
    std::string name;
    TkeEstimator fn;
};

inline TkeEstimator truth_estimator(GeneratorConfig cfg = {}) {
    return [cfg](const AtmosphericState& s) { return truth_tke(s, cfg); };
}

struct TraceSample {
    double t = 0.0;
    Vec3 position;
    Vec3 gust;
    double k_est = 0.0;
    double k_true = 0.0;
};

struct RunOutcome {
    double miss_m = 0.0;
    double flight_time_s = 0.0;
    bool cep_pass = false;
    bool aborted = false;
    std::string diagnostic;
    std::vector<TraceSample> trace;
};

inline double speed_of_sound(double temperature_k) { return std::sqrt(1.4 * atmos_const::gas_constant * temperature_k); }

inline double distance_to_segment(const Vec3& a, const Vec3& b, const Vec3& q) {
    const Vec3 d = b - a;
    const double len2 = d.dot(d);
    double s = len2 > 0.0 ? (q - a).dot(d) / len2 : 0.0;
    s = std::clamp(s, 0.0, 1.0);
    return (a + d * s - q).norm();
}

inline RunOutcome simulate(const Scenario& scn, const VehicleClass& veh, const TkeEstimator& estimator,
                           const SimConfig& cfg = {}, bool record_trace = false,
                           const TkeEstimator& truth = truth_estimator()) {
    RunOutcome out;
    const auto column = std::span<const AtmosphericState>(scn.column);
    auto at = [&](double h) { return interpolate_column(column, std::clamp(h, 0.0, atmos_const::max_altitude)); };

    const AtmosphericState s0 = at(scn.launch.z);
    const double speed0 = veh.mach * speed_of_sound(s0.temperature_k);
    VehicleState vs;
    vs.p = scn.launch;
    const Vec3 los = scn.target - scn.launch;
    vs.v = los * (speed0 / los.norm());
    Vec3 p_nav = vs.p;

    if (!(cfg.gust_knot_s > 0.0)) throw DomainError("simulate: gust_knot_s must be positive");
    const double phi = std::exp(-speed0 * cfg.gust_knot_s / cfg.gust_length_m);
    GustTrack gust_unit(phi, mix_seed(scn.seed, 0x6057ULL), cfg.gust_knot_s);
    GustTrack noise_unit(phi, mix_seed(scn.seed, 0x5E45ULL), cfg.gust_knot_s);

    const auto update_every = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.estimator_period / cfg.dt)));
    const auto trace_every = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.trace_period / cfg.dt)));
    const auto max_steps = static_cast<std::size_t>(std::ceil(cfg.max_time_s / cfg.dt));
    const double shrink = 1.0 / (1.0 + cfg.sensor_noise * cfg.sensor_noise);
    double sigma_true = 0.0, sigma_est = 0.0, k_est = 0.0, k_true = 0.0;
    double best = (scn.target - vs.p).norm();

    try {
        for (std::size_t step = 0; step < max_steps; ++step) {
            const double t = static_cast<double>(step) * cfg.dt;
            if (step % update_every == 0) {
                const AtmosphericState s = at(vs.p.z);
                k_true = std::max(truth(s), 0.0) * cfg.turbulence_scale * cfg.turbulence_scale;
                k_est = std::max(estimator(s), 0.0);
                if (!std::isfinite(k_est)) throw DomainError("estimator returned a non-finite energy");
                sigma_true = std::sqrt(2.0 * k_true / 3.0);
                sigma_est = std::sqrt(2.0 * k_est / 3.0);
            }
            const Vec3 u = gust_unit.at(t);
            const Vec3 g = u * sigma_true;
            const Vec3 g_hat = sigma_true > 0.0 ? (u + noise_unit.at(t) * cfg.sensor_noise) * (sigma_est * shrink) : Vec3{};

            if (record_trace && step % trace_every == 0) out.trace.push_back({t, vs.p, g, k_est, k_true});

            const Vec3 a_cmd = pn_command(p_nav, vs.v, scn.target, veh);
            const double rho = at(vs.p.z).density_ratio * atmos_const::sea_level_density;
            const VehicleState next = step_dynamics(vs, a_cmd, g, cfg.dt, veh, rho, cfg.lag_tau);
            p_nav = p_nav + (vs.v + next.v) * (0.5 * cfg.dt) + g_hat * cfg.dt;
            best = std::min(best, distance_to_segment(vs.p, next.p, scn.target));
            vs = next;
            out.flight_time_s = t + cfg.dt;

            const Vec3 r = scn.target - vs.p;
            if (r.dot(vs.v + g) < 0.0 && t > 1.0) break;  // passed the target
            if (vs.p.z < scn.target.z - 5000.0) break;
        }
    } catch (const DomainError& e) {
        out.aborted = true;
        out.diagnostic = e.what();
    }
    out.miss_m = best;
    out.cep_pass = !out.aborted && best <= cfg.cep_m;
    if (record_trace && !out.aborted) out.trace.push_back({out.flight_time_s, vs.p, {}, k_est, k_true});
    return out;
}

struct PairedRunRecord {
    std::string scenario_id;
    char category = 'A';
    std::string vehicle;
    std::uint64_t seed = 0;
    double miss_a_m = 0.0, miss_b_m = 0.0;
    std::string estimator_a, estimator_b;
    double delta_pct = 0.0;  // 100 (miss_a - miss_b) / miss_a; positive favours b
    bool excluded = false;
};

inline double delta_percent(double miss_a, double miss_b) { return 100.0 * (miss_a - miss_b) / miss_a; }

inline PairedRunRecord run_paired(const Scenario& scn, const VehicleClass& veh, const NamedEstimator& a,
                                  const NamedEstimator& b, const SimConfig& cfg = {}) {
    const auto ra = simulate(scn, veh, a.fn, cfg);
    const auto rb = simulate(scn, veh, b.fn, cfg);
    PairedRunRecord r;
    r.category = scn.category;
    r.scenario_id = std::string(1, scn.category) + "-" + std::to_string(scn.seed);
    r.vehicle = veh.name;
    r.seed = scn.seed;
    r.miss_a_m = ra.miss_m;
    r.miss_b_m = rb.miss_m;
    r.estimator_a = a.name;
    r.estimator_b = b.name;
    r.excluded = ra.aborted || rb.aborted || ra.miss_m <= 0.0;
    r.delta_pct = r.excluded ? 0.0 : delta_percent(ra.miss_m, rb.miss_m);
    return r;
}

struct CampaignConfig {
    std::string categories{kCategories};
    std::vector<std::string> vehicles{"supersonic", "high-supersonic", "hypersonic-glide"};
    std::size_t runs = 340;
    std::uint64_t seed = 2024;
    SimConfig sim;
    std::size_t threads = 0;  // 0: hardware concurrency
};

struct CampaignRun {
    std::size_t index = 0;
    char category = 'A';
    std::string vehicle;
    std::uint64_t seed = 0;
    std::vector<double> miss;  // per estimator
    bool aborted = false;
};

struct CampaignResult {
    std::vector<std::string> estimators;
    std::vector<CampaignRun> runs;
};

/// Runs are assigned round-robin over the (category, vehicle) cells; run i
/// uses seed mix(seed, i) and evaluates every estimator on the same field.
inline CampaignResult run_campaign(const CampaignConfig& cfg, const std::vector<NamedEstimator>& estimators) {
    if (cfg.categories.empty() || cfg.vehicles.empty() || estimators.empty())
        throw DomainError("campaign: categories, vehicles and estimators must be non-empty");
    std::map<char, ScenarioPreset> presets;
    for (char c : cfg.categories) presets.emplace(c, load_scenario_preset(c));
    std::vector<const VehicleClass*> vehicles;
    for (const auto& v : cfg.vehicles) vehicles.push_back(&vehicle_preset(v));

    CampaignResult result;
    for (const auto& e : estimators) result.estimators.push_back(e.name);
    result.runs.resize(cfg.runs);
    const std::size_t cells = cfg.categories.size() * vehicles.size();

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.runs; i = next++) {
            const std::size_t cell = i % cells;
            const char cat = cfg.categories[cell / vehicles.size()];
            const VehicleClass& veh = *vehicles[cell % vehicles.size()];
            CampaignRun run;
            run.index = i;
            run.category = cat;
            run.vehicle = veh.name;
            run.seed = mix_seed(cfg.seed, i);
            const Scenario scn = make_scenario(presets.at(cat), run.seed);
            for (const auto& e : estimators) {
                const auto o = simulate(scn, veh, e.fn, cfg.sim);
                run.miss.push_back(o.miss_m);
                run.aborted = run.aborted || o.aborted || !(o.miss_m > 0.0);
            }
            result.runs[i] = std::move(run);
        }
    };
    std::size_t threads = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
    threads = std::min(threads, std::max<std::size_t>(cfg.runs, 1));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    return result;
}

inline std::vector<PairedRunRecord> paired_records(const CampaignResult& r, std::size_t a, std::size_t b) {
    std::vector<PairedRunRecord> out;
    for (const auto& run : r.runs) {
        PairedRunRecord rec;
        rec.category = run.category;
        rec.scenario_id = std::string(1, run.category) + "-" + std::to_string(run.index);
        rec.vehicle = run.vehicle;
        rec.seed = run.seed;
        rec.miss_a_m = run.miss[a];
        rec.miss_b_m = run.miss[b];
        rec.estimator_a = r.estimators[a];
        rec.estimator_b = r.estimators[b];
        rec.excluded = run.aborted;
        rec.delta_pct = rec.excluded ? 0.0 : delta_percent(rec.miss_a_m, rec.miss_b_m);
        out.push_back(rec);
    }
    return out;
}

struct GroupSummary {
    std::string key;
    std::size_t n = 0;
    double mean_delta_pct = 0.0;
    double cohens_d = 0.0;
};

struct PairSummary {
    std::string estimator_a, estimator_b;
    std::size_t n = 0;
    std::size_t excluded = 0;
    std::size_t ties = 0;
    double mean_delta_pct = 0.0;
    double win_rate = 0.0;  // fraction where b beats a; ties count one half
    stats::StatReport report;
    std::vector<GroupSummary> by_category;
    std::vector<GroupSummary> by_vehicle;
};

inline PairSummary summarize_pair(const std::vector<PairedRunRecord>& recs, std::uint64_t seed = 1) {
    PairSummary s;
    if (!recs.empty()) {
        s.estimator_a = recs.front().estimator_a;
        s.estimator_b = recs.front().estimator_b;
    }
    std::vector<double> deltas;
    std::map<std::string, std::vector<double>> by_cat, by_veh;
    double wins = 0.0;
    for (const auto& r : recs) {
        if (r.excluded) {
            ++s.excluded;
            continue;
        }
        deltas.push_back(r.delta_pct);
        by_cat[std::string(1, r.category)].push_back(r.delta_pct);
        by_veh[r.vehicle].push_back(r.delta_pct);
        if (r.miss_b_m < r.miss_a_m) wins += 1.0;
        else if (r.miss_b_m == r.miss_a_m) {
            wins += 0.5;
            ++s.ties;
        }
    }
    s.n = deltas.size();
    if (s.n == 0) return s;
    s.mean_delta_pct = stats::mean(deltas);
    s.win_rate = wins / static_cast<double>(s.n);
    if (s.n >= 2) s.report = stats::paired_report(deltas, seed);
    auto group = [](const std::map<std::string, std::vector<double>>& m) {
        std::vector<GroupSummary> g;
        for (const auto& [k, v] : m) {
            GroupSummary gs{k, v.size(), stats::mean(v), 0.0};
            if (v.size() >= 2) gs.cohens_d = stats::cohens_d(v).d;
            g.push_back(gs);
        }
        return g;
    };
    s.by_category = group(by_cat);
    s.by_vehicle = group(by_veh);
    return s;
}

/// Miss-distance matrix (non-aborted runs x estimators) for rank tests.
inline stats::Matrix miss_matrix(const CampaignResult& r) {
    stats::Matrix m;
    m.cols = r.estimators.size();
    for (const auto& run : r.runs) {
        if (run.aborted) continue;
        m.v.insert(m.v.end(), run.miss.begin(), run.miss.end());
        ++m.rows;
    }
    return m;
}

/// Columns: index category vehicle seed aborted miss_<estimator>...
inline std::string campaign_table(const CampaignResult& r) {
    std::ostringstream o;
    o.precision(17);
    o << "# index category vehicle seed aborted";
    for (const auto& e : r.estimators) o << " miss_" << e;
    o << "\n";
    for (const auto& run : r.runs) {
        o << run.index << ' ' << run.category << ' ' << run.vehicle << ' ' << run.seed << ' ' << run.aborted;
        for (double m : run.miss) o << ' ' << m;
        o << "\n";
    }
    return o.str();
}

inline CampaignResult parse_campaign_table(std::string_view text) {
    CampaignResult r;
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line.rfind("# index category vehicle seed aborted", 0) != 0)
        throw FormatError(FormatError::Kind::corrupt, "campaign table: bad header");
    {
        std::istringstream hs(line.substr(std::string("# index category vehicle seed aborted").size()));
        std::string col;
        while (hs >> col) {
            if (col.rfind("miss_", 0) != 0) throw FormatError(FormatError::Kind::corrupt, "campaign table: bad column");
            r.estimators.push_back(col.substr(5));
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        CampaignRun run;
        int aborted = 0;
        if (!(ls >> run.index >> run.category >> run.vehicle >> run.seed >> aborted))
            throw FormatError(FormatError::Kind::corrupt, "campaign table: bad row");
        run.aborted = aborted != 0;
        run.miss.resize(r.estimators.size());
        for (double& m : run.miss)
            if (!(ls >> m)) throw FormatError(FormatError::Kind::corrupt, "campaign table: short row");
        r.runs.push_back(std::move(run));
    }
    return r;
}

}  // namespace pstnet
