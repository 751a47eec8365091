#pragma once

// Synthetic ground truth with regime-structured turbulence targets and
// reproducible stratified splits.
//
// Target: k_true = k_MO + f_r * H * (1 + eta) + floor_r, where H is the
// Kolmogorov headroom C_K eps^(1/3) sqrt(rho/rho0), r the argmax regime of the
// physics label and eta ~ N(0, 0.1^2) clipped to +/-0.3. The stratospheric
// class adds a 0.02 m^2/s^2 gravity-wave floor. The noise multiplies the
// regime residual only: the output layer cannot go below k_MO, so noise on the
// backbone share would sit in the loss as an irreducible floor of at least
// 0.01 standardized MSE.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "pstnet/atmos.hpp"
#include "pstnet/backward.hpp"
#include "pstnet/mophys.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

struct GeneratorConfig {
    double altitude_min_m = 10.0;
    double altitude_max_m = 30000.0;
    double tropo_ceiling_m = 11500.0;  // non-stratospheric draws stay below
    double strato_base_m = 12500.0;    // stratospheric draws stay above
    double wind_mean_mps = 8.0;
    double temperature_anomaly_sd_k = 6.0;
    double pressure_log_sd = 0.01;

    // Richardson number draw per stability regime (mean, sd).
    std::array<double, 3> ri_mean{-0.6, 0.0, 0.6};
    std::array<double, 3> ri_sd{0.25, 0.04, 0.25};
    double strato_lapse_mean = 0.0015;
    double strato_lapse_sd = 0.001;
    double lapse_clip = 0.04;

    // Fraction of the Kolmogorov headroom realised in each regime.
    std::array<double, kNumRegimes> headroom_fraction{0.85, 0.0, 0.35, 0.6};
    double strato_floor = 0.02;
    double noise_sd = 0.1;
    double noise_clip = 0.3;

    std::string describe() const {
        std::ostringstream o;
        o.precision(17);
        o << altitude_min_m << ' ' << altitude_max_m << ' ' << tropo_ceiling_m << ' ' << strato_base_m << ' '
          << wind_mean_mps << ' ' << temperature_anomaly_sd_k << ' ' << pressure_log_sd;
        for (double v : ri_mean) o << ' ' << v;
        for (double v : ri_sd) o << ' ' << v;
        o << ' ' << strato_lapse_mean << ' ' << strato_lapse_sd << ' ' << lapse_clip;
        for (double v : headroom_fraction) o << ' ' << v;
        o << ' ' << strato_floor << ' ' << noise_sd << ' ' << noise_clip;
        return o.str();
    }

    std::uint32_t hash() const { return crc32_of(describe()); }
};

/// Noise-free target for a state; the quantity every estimator tries to recover.
inline double truth_tke(const AtmosphericState& s, const GeneratorConfig& cfg = {},
                        double eta = 0.0) {
    const auto phys = physics_terms(s);
    const auto r = static_cast<std::size_t>(regime_target(s).argmax());
    const double floor = r == static_cast<std::size_t>(Regime::stratospheric) ? cfg.strato_floor : 0.0;
    return phys.k_mo + cfg.headroom_fraction[r] * phys.headroom * (1.0 + eta) + floor;
}

struct SyntheticSample {
    AtmosphericState state;
    double k_true = 0.0;
    RegimeTarget regime;
    std::uint64_t seed_id = 0;
    double eta = 0.0;
};

namespace detail {

inline double log_uniform(std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    return std::exp(u(rng));
}

}  // namespace detail

inline SyntheticSample synth_sample(std::uint64_t seed, std::optional<Regime> hint = std::nullopt,
                                    const GeneratorConfig& cfg = {}) {
    std::mt19937_64 rng(mix_seed(seed));
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    const Regime regime = hint ? *hint : static_cast<Regime>(std::uniform_int_distribution<int>(0, 3)(rng));

    SyntheticSample out;
    out.seed_id = seed;
    AtmosphericState& s = out.state;
    s.altitude_m = regime == Regime::stratospheric
                       ? detail::log_uniform(rng, cfg.strato_base_m, cfg.altitude_max_m)
                       : detail::log_uniform(rng, cfg.altitude_min_m, cfg.tropo_ceiling_m);
    const auto isa = isa_state(s.altitude_m);

    // Rayleigh with the requested mean.
    const double rayleigh_sigma = cfg.wind_mean_mps / std::sqrt(M_PI / 2.0);
    s.wind10_mps = rayleigh_sigma * std::sqrt(-2.0 * std::log(1.0 - unit(rng)));
    s.temperature_k = isa.temperature_k + cfg.temperature_anomaly_sd_k * normal(rng);
    s.pressure_pa = isa.pressure_pa * std::exp(cfg.pressure_log_sd * normal(rng));
    s.density_ratio = density_ratio(s.pressure_pa, s.temperature_k);
    s.latitude_deg = -90.0 + 180.0 * unit(rng);

    if (regime == Regime::stratospheric) {
        s.lapse_k_per_m = cfg.strato_lapse_mean + cfg.strato_lapse_sd * normal(rng);
    } else {
        using namespace atmos_const;
        const auto r = static_cast<std::size_t>(regime);
        const double ri = cfg.ri_mean[r] + cfg.ri_sd[r] * normal(rng);
        const double du = std::max(ri_shear_fraction * s.wind10_mps, ri_shear_floor);
        s.lapse_k_per_m = ri * s.temperature_k * du * du / (g * ri_layer_depth * ri_layer_depth) - dry_adiabatic;
    }
    s.lapse_k_per_m = std::clamp(s.lapse_k_per_m, -cfg.lapse_clip, cfg.lapse_clip);

    out.eta = std::clamp(cfg.noise_sd * normal(rng), -cfg.noise_clip, cfg.noise_clip);
    out.regime = regime_target(s);
    out.k_true = truth_tke(s, cfg, out.eta);
    return out;
}

struct DatasetSplit {
    std::vector<std::size_t> train, val, test;
    std::uint64_t seed = 0;
    std::array<std::size_t, kNumRegimes> histogram{};
};

struct Dataset {
    std::vector<SyntheticSample> samples;
    DatasetSplit split;
    GeneratorConfig config;

    template <typename Indices>
    std::vector<SyntheticSample> subset(const Indices& idx) const {
        std::vector<SyntheticSample> out;
        out.reserve(idx.size());
        for (auto i : idx) out.push_back(samples[i]);
        return out;
    }
};

inline constexpr double kMinRegimeShare = 0.10;

inline std::array<std::size_t, kNumRegimes> regime_histogram(const std::vector<SyntheticSample>& samples,
                                                             const std::vector<std::size_t>& idx) {
    std::array<std::size_t, kNumRegimes> h{};
    for (auto i : idx) ++h[static_cast<std::size_t>(samples[i].regime.argmax())];
    return h;
}

/// n samples, stratified 70/15/15 split by label regime.
inline Dataset make_dataset(std::size_t n, std::uint64_t seed, const GeneratorConfig& cfg = {}) {
    if (n < 400) throw DomainError("make_dataset: need n >= 400");
    Dataset ds;
    ds.config = cfg;
    ds.samples.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ds.samples.push_back(synth_sample(mix_seed(seed, i), std::nullopt, cfg));

    std::array<std::vector<std::size_t>, kNumRegimes> by_regime;
    for (std::size_t i = 0; i < n; ++i) by_regime[static_cast<std::size_t>(ds.samples[i].regime.argmax())].push_back(i);

    std::mt19937_64 rng(mix_seed(seed, 0xD15EA5E));
    for (std::size_t r = 0; r < kNumRegimes; ++r) {
        auto& v = by_regime[r];
        ds.split.histogram[r] = v.size();
        std::shuffle(v.begin(), v.end(), rng);
        const std::size_t n_train = (v.size() * 70 + 50) / 100;
        const std::size_t n_val = (v.size() * 15 + 50) / 100;
        ds.split.train.insert(ds.split.train.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(n_train));
        ds.split.val.insert(ds.split.val.end(), v.begin() + static_cast<std::ptrdiff_t>(n_train),
                            v.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
        ds.split.test.insert(ds.split.test.end(), v.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), v.end());
    }
    for (auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
        std::sort(part->begin(), part->end());
        const auto h = regime_histogram(ds.samples, *part);
        for (std::size_t r = 0; r < kNumRegimes; ++r)
            if (part->empty() || static_cast<double>(h[r]) < kMinRegimeShare * static_cast<double>(part->size()))
                throw DomainError("make_dataset: regime coverage >= 10% unattainable for n=" + std::to_string(n));
    }
    ds.split.seed = seed;
    return ds;
}

/// Standardization statistics from the training split only.
inline Standardizer fit_on_train(const Dataset& ds) {
    std::vector<AtmosphericState> states;
    std::vector<double> targets;
    for (auto i : ds.split.train) {
        states.push_back(ds.samples[i].state);
        targets.push_back(ds.samples[i].k_true);
    }
    return fit_standardizer(states, targets);
}

inline std::vector<TrainingExample> make_examples(const PSTNetModel& m, const std::vector<SyntheticSample>& samples) {
    std::vector<TrainingExample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(make_example(m, s.state, s.k_true, s.regime));
    return out;
}

/// Manifest hash tying baselines and PSTNet to identical data.
inline std::uint32_t dataset_hash(const Dataset& ds) {
    ByteWriter w;
    w.put(static_cast<std::uint64_t>(ds.samples.size()));
    w.put(ds.split.seed);
    w.put(ds.config.hash());
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test}) {
        w.put(static_cast<std::uint64_t>(part->size()));
        for (auto i : *part) w.put(static_cast<std::uint32_t>(i));
    }
    return crc32_of(w.bytes());
}

/// Columns: split altitude_m temperature_k pressure_pa wind10_mps lapse_k_per_m
/// density_ratio latitude_deg k_true ri p_conv p_neut p_stab p_strat seed_id
inline void export_dataset(const Dataset& ds, const std::filesystem::path& table,
                           const std::filesystem::path& manifest) {
    std::vector<char> tag(ds.samples.size(), '?');
    for (auto i : ds.split.train) tag[i] = 'T';
    for (auto i : ds.split.val) tag[i] = 'V';
    for (auto i : ds.split.test) tag[i] = 'E';
    std::ostringstream o;
    o.precision(17);
    o << "# split altitude_m temperature_k pressure_pa wind10_mps lapse_k_per_m density_ratio latitude_deg "
         "k_true ri p_conv p_neut p_stab p_strat seed_id\n";
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const auto& s = ds.samples[i];
        o << tag[i];
        for (double v : s.state.as_array()) o << ' ' << v;
        o << ' ' << s.k_true << ' ' << s.regime.ri;
        for (double p : s.regime.probs) o << ' ' << p;
        o << ' ' << s.seed_id << '\n';
    }
    write_file_atomic(table, o.str());

    std::ostringstream m;
    m << "samples " << ds.samples.size() << '\n'
      << "seed " << ds.split.seed << '\n'
      << "config_hash " << std::hex << ds.config.hash() << std::dec << '\n'
      << "dataset_hash " << std::hex << dataset_hash(ds) << std::dec << '\n'
      << "train " << ds.split.train.size() << "\nval " << ds.split.val.size() << "\ntest " << ds.split.test.size()
      << '\n';
    for (std::size_t r = 0; r < kNumRegimes; ++r) m << "regime_" << kRegimeNames[r] << ' ' << ds.split.histogram[r] << '\n';
    write_file_atomic(manifest, m.str());
}

}  // namespace pstnet
