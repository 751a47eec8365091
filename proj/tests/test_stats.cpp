#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "guard_env.hpp"
#include "pstnet/stats.hpp"

using namespace pstnet;
using namespace pstnet::stats;

namespace {

template <typename F>
double simpson(F f, double a, double b, int n = 20000) {
    const double h = (b - a) / n;
    double s = f(a) + f(b);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(a + i * h);
    return s * h / 3;
}

template <typename F>
double integrate(F f, double a, double b) {
    if (a == b) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-15);
}

double phi(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * M_PI); }

double t_density(double x, double nu) {
    return std::tgamma((nu + 1) / 2) / (std::sqrt(nu * M_PI) * std::tgamma(nu / 2)) *
           std::pow(1 + x * x / nu, -(nu + 1) / 2);
}

double chi2_density(double x, double k) {
    return std::pow(x, k / 2 - 1) * std::exp(-x / 2) / (std::pow(2.0, k / 2) * std::tgamma(k / 2));
}

// Two-sided exact signed-rank p by enumerating every sign vector.
double brute_wilcoxon_p(const std::vector<double>& d) {
    std::vector<double> mag;
    for (double v : d) mag.push_back(std::abs(v));
    const std::size_t n = d.size();
    std::vector<double> rank(n);
    for (std::size_t i = 0; i < n; ++i) {
        double below = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) {
            below += mag[j] < mag[i];
            equal += mag[j] == mag[i];
        }
        rank[i] = below + (equal + 1) / 2;
    }
    double w_obs = 0;
    for (std::size_t i = 0; i < n; ++i)
        if (d[i] > 0) w_obs += rank[i];
    double le = 0, ge = 0;
    for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
        double w = 0;
        for (std::size_t i = 0; i < n; ++i)
            if (mask >> i & 1u) w += rank[i];
        le += w <= w_obs + 1e-9;
        ge += w >= w_obs - 1e-9;
    }
    const double all = std::ldexp(1.0, static_cast<int>(n));
    return std::min(1.0, 2 * std::min(le, ge) / all);
}

// Classic rank-sum form of the Friedman statistic (no ties).
double friedman_rank_sums(const Matrix& ranks) {
    const double n = static_cast<double>(ranks.rows), k = static_cast<double>(ranks.cols);
    double s = 0;
    for (std::size_t j = 0; j < ranks.cols; ++j) {
        double r = 0;
        for (std::size_t i = 0; i < ranks.rows; ++i) r += ranks(i, j);
        s += r * r;
    }
    return 12.0 / (n * k * (k + 1)) * s - 3 * n * (k + 1);
}

// P(range of k standard normals <= q) = k * int phi(x) [Phi(x) - Phi(x - q)]^(k-1) dx.
double range_cdf(double q, int k) {
    auto Phi = [](double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); };
    return k * simpson([&](double x) { return phi(x) * std::pow(Phi(x) - Phi(x - q), k - 1); }, -9, 9, 4000);
}

double studentized_range_quantile(double p, int k) {
    double lo = 0.1, hi = 10;
    for (int it = 0; it < 80; ++it) {
        const double mid = 0.5 * (lo + hi);
        (range_cdf(mid, k) < p ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace

TEST(Distributions, NormalMatchesQuadrature) {
    for (double z : {-3.0, -1.2, 0.0, 0.4, 2.5}) EXPECT_NEAR(normal_cdf(z), 0.5 + integrate(phi, 0, z), 1e-10);
}

TEST(Distributions, StudentTMatchesQuadrature) {
    for (double nu : {1.0, 3.0, 9.0, 339.0})
        for (double t : {-4.0, -0.5, 0.0, 1.3, 6.0}) {
            auto dens = [&](double x) { return t_density(x, nu); };
            const double half = integrate(dens, 0, std::abs(t));
            EXPECT_NEAR(t_cdf(t, nu), t >= 0 ? 0.5 + half : 0.5 - half, 1e-10) << "nu=" << nu << " t=" << t;
            EXPECT_NEAR(t_two_sided(t, nu), 1 - 2 * half, 1e-10);
        }
}

TEST(Distributions, ChiSquareMatchesQuadrature) {
    for (double k : {2.0, 3.0, 4.0, 7.0})
        for (double x : {0.5, 2.0, 6.0, 15.0}) {
            // Substitute u = v^2 to remove the endpoint singularity at k = 3.
            const double oracle = integrate([&](double v) { return 2 * v * chi2_density(v * v, k); }, 0, std::sqrt(x));
            EXPECT_NEAR(chi2_cdf(x, k), oracle, 1e-10);
            EXPECT_NEAR(chi2_sf(x, k), 1 - oracle, 1e-10);
        }
}

TEST(PairedT, KnownExample) {
    const std::vector<double> d{1.2, -0.4, 2.2, 0.9, 1.7, 0.3};
    const auto r = paired_t(d);
    const double m = std::accumulate(d.begin(), d.end(), 0.0) / 6;
    double ss = 0;
    for (double v : d) ss += (v - m) * (v - m);
    const double t = m / std::sqrt(ss / 5 / 6);
    EXPECT_NEAR(r.t, t, 1e-12);
    EXPECT_NEAR(r.p, 1 - 2 * integrate([](double x) { return t_density(x, 5); }, 0, t), 1e-10);
    EXPECT_TRUE(paired_t(std::vector<double>{2, 2, 2}).degenerate);
}

TEST(Wilcoxon, ExactMatchesBruteForceEnumeration) {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.3, 1.0);
    for (std::size_t size = 1; size <= 10; ++size)
        for (int rep = 0; rep < 6; ++rep) {
            std::vector<double> d(size);
            for (auto& v : d) v = std::round(n(rng) * 4) / 4;  // quarter steps create ties
            std::vector<double> nz;
            for (double v : d)
                if (v != 0) nz.push_back(v);
            const auto r = wilcoxon_signed_rank(d);
            if (nz.empty()) {
                EXPECT_TRUE(r.degenerate);
                continue;
            }
            EXPECT_TRUE(r.exact);
            EXPECT_NEAR(r.p, brute_wilcoxon_p(nz), 1e-12) << "size " << size << " rep " << rep;
        }
}

TEST(Wilcoxon, LargeSampleUsesNormalApproximation) {
    std::vector<double> d;
    for (int i = 1; i <= 40; ++i) d.push_back(i % 3 == 0 ? -i : i);
    const auto r = wilcoxon_signed_rank(d);
    EXPECT_FALSE(r.exact);
    const double mu = 40 * 41 / 4.0, sd = std::sqrt(40 * 41 * 81 / 24.0);
    EXPECT_NEAR(r.p, 2 * normal_cdf(-(std::abs(r.w_plus - mu) - 0.5) / sd), 1e-12);
}

TEST(Friedman, StatisticMatchesRankSumsOverFullPermutationSpace) {
    // Every within-block ordering of k = 3 treatments over n = 4 blocks.
    std::vector<std::array<double, 3>> perms;
    std::array<double, 3> p{1, 2, 3};
    do perms.push_back(p);
    while (std::next_permutation(p.begin(), p.end()));
    double mean_q = 0;
    std::size_t count = 0, extreme = 0;
    double observed = -1;
    for (std::size_t code = 0; code < 1296; ++code) {
        Matrix m{4, 3, {}};
        std::size_t c = code;
        for (int i = 0; i < 4; ++i, c /= 6) m.v.insert(m.v.end(), perms[c % 6].begin(), perms[c % 6].end());
        const auto f = friedman(m);
        ASSERT_NEAR(f.chi2, friedman_rank_sums(m), 1e-9);
        if (code == 0) observed = f.chi2;  // identical ordering in every block: the maximum
        mean_q += f.chi2;
        ++count;
        extreme += f.chi2 >= observed - 1e-9;
    }
    EXPECT_NEAR(mean_q / static_cast<double>(count), 2.0, 1e-9);  // E[Q] = k - 1 under H0
    EXPECT_EQ(extreme, 6u);
}

TEST(Friedman, TieCorrectionMatchesReference) {
    // Reference value from an independent statistics package.
    Matrix m{6, 3, {1, 2, 2, 3, 1, 2, 5, 5, 4, 2, 3, 1, 4, 4, 4.5, 1, 1, 1}};
    const auto f = friedman(m);
    EXPECT_NEAR(f.chi2, 0.11764705882352273, 1e-12);
    EXPECT_NEAR(f.p, 0.9428731438548781, 1e-10);
}

TEST(Friedman, AsymptoticPAgreesWithPermutationForModerateN) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n(0, 1);
    Matrix m{30, 3, {}};
    for (int i = 0; i < 30; ++i)
        for (int j = 0; j < 3; ++j) m.v.push_back(n(rng) + 0.35 * j);
    const double observed = friedman(m).chi2;
    std::size_t hit = 0;
    const int draws = 20000;
    Matrix shuffled = m;
    for (int d = 0; d < draws; ++d) {
        for (int i = 0; i < 30; ++i) std::shuffle(shuffled.v.begin() + i * 3, shuffled.v.begin() + i * 3 + 3, rng);
        hit += friedman(shuffled).chi2 >= observed - 1e-12;
    }
    EXPECT_NEAR(friedman(m).p, static_cast<double>(hit) / draws, 0.02);
}

TEST(Friedman, MeanRanksPutSmallestOutcomeFirst) {
    Matrix m{3, 3, {1, 5, 9, 2, 4, 8, 0.5, 6, 7}};
    const auto f = friedman(m);
    EXPECT_DOUBLE_EQ(f.mean_ranks[0], 1.0);
    EXPECT_NEAR(f.mean_ranks[1], 2.0, 1e-12);
    EXPECT_NEAR(f.mean_ranks[2], 3.0, 1e-12);
}

TEST(Nemenyi, TableMatchesStudentizedRangeIntegral) {
    const auto& t = NemenyiTable::shipped();
    for (int k = 2; k <= 10; ++k) {
        EXPECT_NEAR(t.q(static_cast<std::size_t>(k), 0.05), studentized_range_quantile(0.95, k) / std::sqrt(2.0), 2e-3) << k;
        EXPECT_NEAR(t.q(static_cast<std::size_t>(k), 0.01), studentized_range_quantile(0.99, k) / std::sqrt(2.0), 2e-3) << k;
    }
}

TEST(Nemenyi, CriticalDifferenceFormula) {
    const double cd = nemenyi_cd(5, 340);
    EXPECT_NEAR(cd, NemenyiTable::shipped().q(5, 0.05) * std::sqrt(5.0 * 6.0 / (6.0 * 340.0)), 1e-12);
    FriedmanResult f;
    f.k = 3;
    f.n = 340;
    f.mean_ranks = {1.2, 2.0, 2.8};
    f.p = 1e-9;
    const auto r = nemenyi(f);
    EXPECT_TRUE(r.significant[0][2]);
    EXPECT_EQ(r.significant[0][1], 0.8 > r.critical_difference);
    EXPECT_FALSE(r.significant[1][1]);
}

TEST(Bootstrap, PercentileIntervalCoverage) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> n(2.0, 1.0);
    int covered = 0;
    const int trials = 300;
    for (int t = 0; t < trials; ++t) {
        std::vector<double> x(40);
        for (auto& v : x) v = n(rng);
        const auto ci = bootstrap_mean_ci(x, 0.95, 1000, static_cast<std::uint64_t>(t));
        covered += ci.lo <= 2.0 && 2.0 <= ci.hi;
    }
    const double rate = static_cast<double>(covered) / trials;
    EXPECT_GT(rate, 0.90);
    EXPECT_LT(rate, 0.985);
}

TEST(Bootstrap, DeterministicForSeed) {
    const std::vector<double> x{1, 4, 2, 8, 5, 7};
    const auto a = bootstrap_mean_ci(x, 0.9, 500, 3);
    const auto b = bootstrap_mean_ci(x, 0.9, 500, 3);
    EXPECT_EQ(a.lo, b.lo);
    EXPECT_EQ(a.hi, b.hi);
    EXPECT_LE(a.lo, a.hi);
}

TEST(EffectSize, CohensDIsMeanOverSd) {
    const std::vector<double> d{1, 2, 3, 4};
    EXPECT_NEAR(cohens_d(d).d, 2.5 / std::sqrt(5.0 / 3.0), 1e-12);
}
