#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "guard_env.hpp"
#include "pstnet/dryden.hpp"
#include "pstnet/sim.hpp"

using namespace pstnet;

namespace {

VehicleClass dragless() {
    VehicleClass v = vehicle_preset("supersonic");
    v.mass_kg = 0.0;  // disables drag
    return v;
}

Scenario scenario(char cat, std::uint64_t seed) { return make_scenario(load_scenario_preset(cat), seed); }

TkeEstimator constant(double k) {
    return [k](const AtmosphericState&) { return k; };
}

}  // namespace

TEST(Dynamics, BallisticMatchesClosedForm) {
    VehicleState s;
    s.p = {0, 0, 10000};
    s.v = {600, 50, 120};
    const auto veh = dragless();
    for (int i = 0; i < 100; ++i) s = step_dynamics(s, {}, {}, 0.01, veh, 0.4);
    const double t = 1.0;
    EXPECT_NEAR(s.p.x, 600 * t, 1e-6);
    EXPECT_NEAR(s.p.y, 50 * t, 1e-6);
    EXPECT_NEAR(s.p.z, 10000 + 120 * t - 0.5 * 9.81 * t * t, 1e-6);
    EXPECT_NEAR(s.v.z, 120 - 9.81 * t, 1e-9);
}

TEST(Dynamics, ConstantGustIsAGalileanShift) {
    VehicleState a, b;
    a.v = b.v = {900, 0, 0};
    a.p = b.p = {0, 0, 8000};
    const Vec3 w{3, -7, 1.5};
    const auto veh = dragless();
    for (int i = 0; i < 1000; ++i) {
        a = step_dynamics(a, {}, {}, 0.01, veh, 0.5);
        b = step_dynamics(b, {}, w, 0.01, veh, 0.5);
    }
    const Vec3 shift = b.p - a.p;
    EXPECT_NEAR(shift.x, w.x * 10.0, 1e-8);
    EXPECT_NEAR(shift.y, w.y * 10.0, 1e-8);
    EXPECT_NEAR(shift.z, w.z * 10.0, 1e-8);
    EXPECT_EQ(a.v, b.v);
}

TEST(Dynamics, EnergyNeverIncreasesWithoutThrustOrGust) {
    VehicleState s;
    s.p = {0, 0, 12000};
    s.v = {1200, 0, 40};
    const auto& veh = vehicle_preset("high-supersonic");
    auto energy = [](const VehicleState& v) { return 0.5 * v.v.dot(v.v) + 9.81 * v.p.z; };
    double prev = energy(s);
    for (int i = 0; i < 3000; ++i) {
        const double rho = interpolate_column(scenario('A', 1).column, s.p.z).density_ratio * 1.225;
        s = step_dynamics(s, {}, {}, 0.01, veh, rho);
        const double e = energy(s);
        ASSERT_LE(e, prev * (1 + 1e-13)) << "step " << i;
        prev = e;
    }
}

TEST(Dynamics, RejectsBadStep) {
    EXPECT_THROW(step_dynamics({}, {}, {}, 0.0, dragless(), 1.0), DomainError);
    EXPECT_THROW(step_dynamics({}, {}, {}, 0.06, dragless(), 1.0), DomainError);
}

TEST(Gust, StationaryVarianceIsTwoThirdsK) {
    const double k = 1.8;
    GustGenerator gen(k, 533.4, 900.0, 42, 0.01);
    const std::size_t n = 1000000;
    double sum[3]{}, sq[3]{}, lag = 0, prev_x = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3 g = gen.next();
        const double v[3]{g.x, g.y, g.z};
        for (int a = 0; a < 3; ++a) {
            sum[a] += v[a];
            sq[a] += v[a] * v[a];
        }
        lag += g.x * prev_x;
        prev_x = g.x;
    }
    double pooled = 0;
    for (int a = 0; a < 3; ++a) pooled += sq[a] / n - (sum[a] / n) * (sum[a] / n);
    pooled /= 3;
    EXPECT_NEAR(pooled / (2 * k / 3), 1.0, 0.05);
    EXPECT_NEAR(lag / n / (sq[0] / n), std::exp(-900.0 * 0.01 / 533.4), 0.01);
}

TEST(Gust, ZeroEnergyAndSeedDeterminism) {
    GustGenerator zero(0.0, 533.4, 900.0, 1, 0.01);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(zero.next(), Vec3{});
    GustGenerator a(2.0, 533.4, 900.0, 7, 0.01), b(2.0, 533.4, 900.0, 7, 0.01);
    for (int i = 0; i < 1000; ++i) ASSERT_EQ(a.next(), b.next());
    EXPECT_THROW(GustGenerator(-1.0, 533.4, 900.0, 1, 0.01), DomainError);
}

TEST(Paired, IdenticalEstimatorsGiveZeroDelta) {
    const auto scn = scenario('A', 11);
    const NamedEstimator d{"dryden", DrydenEstimator{}};
    const auto r = run_paired(scn, vehicle_preset("supersonic"), d, d);
    EXPECT_EQ(r.miss_a_m, r.miss_b_m);
    EXPECT_EQ(r.delta_pct, 0.0);
    EXPECT_FALSE(r.excluded);
}

TEST(Paired, ZeroTurbulenceMakesEstimatorsIrrelevant) {
    SimConfig cfg;
    cfg.turbulence_scale = 0.0;
    const auto scn = scenario('B', 5);
    const auto& veh = vehicle_preset("high-supersonic");
    const auto a = simulate(scn, veh, constant(0.0), cfg);
    const auto b = simulate(scn, veh, constant(50.0), cfg);
    const auto c = simulate(scn, veh, DrydenEstimator{}, cfg);
    EXPECT_EQ(a.miss_m, b.miss_m);
    EXPECT_EQ(a.miss_m, c.miss_m);
}

TEST(Paired, HalvingTheStepBarelyMovesTheMiss) {
    // Turbulent runs: the gust field lives on its own time grid, so the only
    // difference between the two runs is integration error.
    SimConfig coarse, fine;
    fine.dt = coarse.dt / 2;
    for (char cat : {'A', 'C', 'F'})
        for (const auto& veh : vehicle_presets()) {
            const auto scn = scenario(cat, 3);
            const auto a = simulate(scn, veh, DrydenEstimator{}, coarse);
            const auto b = simulate(scn, veh, DrydenEstimator{}, fine);
            ASSERT_FALSE(a.aborted);
            ASSERT_GT(a.miss_m, 0.1);
            EXPECT_LT(std::abs(a.miss_m - b.miss_m) / a.miss_m, 0.005)
                << cat << " " << veh.name << " " << a.miss_m << " vs " << b.miss_m;
        }
}

TEST(Paired, GustFieldDoesNotDependOnEstimator) {
    const auto scn = scenario('C', 8);
    const auto& veh = vehicle_preset("supersonic");
    SimConfig cfg;
    auto a = simulate(scn, veh, constant(0.5), cfg, true);
    auto b = simulate(scn, veh, constant(4.0), cfg, true);
    ASSERT_GT(a.trace.size(), 10u);
    // The unit draws behind the true gust are shared; only the scale follows
    // the (estimator-dependent) flight path.
    EXPECT_EQ(a.trace[0].gust, b.trace[0].gust);
    const std::size_t n = std::min(a.trace.size(), b.trace.size()) - 1;
    for (std::size_t i = 0; i < n; ++i) {
        ASSERT_GT(a.trace[i].k_true, 0.0);
        const double sa = std::sqrt(2 * a.trace[i].k_true / 3), sb = std::sqrt(2 * b.trace[i].k_true / 3);
        EXPECT_NEAR(a.trace[i].gust.x / sa, b.trace[i].gust.x / sb, 1e-9);
        EXPECT_NEAR(a.trace[i].gust.z / sa, b.trace[i].gust.z / sb, 1e-9);
    }
}

TEST(Paired, EstimatorIsolationAndDeterminism) {
    const auto scn = scenario('D', 21);
    const auto& veh = vehicle_preset("supersonic");
    const NamedEstimator a{"dryden", DrydenEstimator{}};
    const auto r1 = run_paired(scn, veh, a, {"c1", constant(1.0)});
    const auto r2 = run_paired(scn, veh, a, {"c2", constant(3.0)});
    EXPECT_EQ(r1.miss_a_m, r2.miss_a_m);
    const auto r3 = run_paired(scenario('D', 21), veh, a, {"c1", constant(1.0)});
    EXPECT_EQ(r1.miss_b_m, r3.miss_b_m);
    EXPECT_EQ(r1.delta_pct, 100.0 * (r1.miss_a_m - r1.miss_b_m) / r1.miss_a_m);
}

TEST(Paired, TruthCompensationBeatsNoCompensation) {
    // Sanity of the loop design: a perfect estimate should help on average.
    const auto& veh = vehicle_preset("high-supersonic");
    double gain = 0;
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto scn = scenario('F', seed);
        gain += simulate(scn, veh, constant(0.0)).miss_m - simulate(scn, veh, truth_estimator()).miss_m;
    }
    EXPECT_GT(gain, 0.0);
}

TEST(Campaign, SummaryMeanEqualsRecordMeanAndTiesAreHalves) {
    CampaignConfig cfg;
    cfg.runs = 24;
    cfg.threads = 2;
    const auto res = run_campaign(cfg, {{"dryden", DrydenEstimator{}}, {"same", DrydenEstimator{}}, {"const", constant(1.0)}});
    ASSERT_EQ(res.runs.size(), 24u);
    const auto tie = summarize_pair(paired_records(res, 0, 1));
    EXPECT_EQ(tie.ties, tie.n);
    EXPECT_DOUBLE_EQ(tie.win_rate, 0.5);
    const auto recs = paired_records(res, 0, 2);
    const auto s = summarize_pair(recs);
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : recs)
        if (!r.excluded) sum += r.delta_pct, ++n;
    EXPECT_EQ(s.n, n);
    EXPECT_NEAR(s.mean_delta_pct, sum / static_cast<double>(n), 1e-12);
    EXPECT_EQ(s.by_vehicle.size(), 3u);
    EXPECT_EQ(s.by_category.size(), 6u);
}

TEST(Campaign, ReproducibleAcrossThreadCountsAndTableRoundTrip) {
    CampaignConfig cfg;
    cfg.runs = 18;
    cfg.threads = 1;
    const std::vector<NamedEstimator> est{{"dryden", DrydenEstimator{}}, {"const", constant(0.8)}};
    const auto a = run_campaign(cfg, est);
    cfg.threads = 3;
    const auto b = run_campaign(cfg, est);
    EXPECT_EQ(campaign_table(a), campaign_table(b));
    const auto back = parse_campaign_table(campaign_table(a));
    EXPECT_EQ(campaign_table(back), campaign_table(a));
    // Round-robin cells: run i uses cell i mod 18.
    EXPECT_EQ(a.runs[0].category, 'A');
    EXPECT_EQ(a.runs[0].vehicle, "supersonic");
    EXPECT_EQ(a.runs[4].category, 'B');
    EXPECT_EQ(a.runs[4].vehicle, "high-supersonic");
}

TEST(Scenario, PresetsLoadAndColumnsIncrease) {
    for (char c : kCategories) {
        const auto scn = scenario(c, 4);
        EXPECT_EQ(scn.category, c);
        for (std::size_t i = 1; i < scn.column.size(); ++i)
            ASSERT_GT(scn.column[i].altitude_m, scn.column[i - 1].altitude_m);
    }
    EXPECT_THROW(load_scenario_preset('G'), DomainError);
    EXPECT_EQ(vehicle_preset("M8.0").name, "hypersonic-glide");
}
