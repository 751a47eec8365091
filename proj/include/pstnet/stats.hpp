#pragma once

// Paired-comparison statistics: t-test, Wilcoxon signed-rank, Cohen's d_z,
// percentile bootstrap, Friedman with tie correction, Nemenyi critical
// difference.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <span>
#include <vector>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "pstnet/util.hpp"

namespace pstnet::stats {

/// P(T <= t) for Student's t with `df` degrees of freedom.
inline double t_cdf(double t, double df) {
    if (!(df > 0.0)) throw DomainError("t_cdf: df must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double tail = 0.5 * boost::math::ibeta(0.5 * df, 0.5, df / (df + t * t));
    return t > 0 ? 1.0 - tail : tail;
}

/// Two-sided P(|T| >= |t|), computed without cancellation.
inline double t_two_sided(double t, double df) {
    if (std::isinf(t)) return 0.0;
    return boost::math::ibeta(0.5 * df, 0.5, df / (df + t * t));
}

inline double chi2_cdf(double x, double df) {
    if (x <= 0.0) return 0.0;
    return boost::math::gamma_p(0.5 * df, 0.5 * x);
}

inline double chi2_sf(double x, double df) {
    if (x <= 0.0) return 1.0;
    return boost::math::gamma_q(0.5 * df, 0.5 * x);
}

inline double normal_cdf(double z) { return 0.5 * boost::math::erfc(-z / std::sqrt(2.0)); }

inline double mean(std::span<const double> x) {
    return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

/// Sample standard deviation (n - 1 denominator).
inline double stddev(std::span<const double> x) {
    const double m = mean(x);
    double s = 0.0;
    for (double v : x) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(x.size() - 1));
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    double df = 0.0;
    bool degenerate = false;  // zero variance
};

inline TTestResult paired_t(std::span<const double> d) {
    if (d.size() < 2) throw DomainError("paired_t: need n >= 2");
    TTestResult r;
    r.df = static_cast<double>(d.size() - 1);
    const double m = mean(d), s = stddev(d);
    if (s == 0.0) {
        r.degenerate = true;
        r.t = m == 0.0 ? 0.0 : std::copysign(INFINITY, m);
        r.p = m == 0.0 ? 1.0 : 0.0;
        return r;
    }
    r.t = m / (s / std::sqrt(static_cast<double>(d.size())));
    r.p = t_two_sided(r.t, r.df);
    return r;
}

/// Mid-ranks (1-based) of `x`; ties share the average of their positions.
inline std::vector<double> midranks(std::span<const double> x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> r(x.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

/// Sum over tie groups of (t^3 - t).
inline double tie_term(std::span<const double> x) {
    std::vector<double> s(x.begin(), x.end());
    std::sort(s.begin(), s.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < s.size();) {
        std::size_t j = i;
        while (j + 1 < s.size() && s[j + 1] == s[i]) ++j;
        const double t = static_cast<double>(j - i + 1);
        acc += t * t * t - t;
        i = j + 1;
    }
    return acc;
}

struct WilcoxonResult {
    double w_plus = 0.0;  // sum of ranks of positive differences
    double p = 1.0;       // two-sided
    double p_greater = 1.0;  // one-sided, alternative: differences tend positive
    std::size_t n = 0;    // after zero removal
    bool exact = false;
    bool degenerate = false;
};

inline constexpr std::size_t kWilcoxonExactMax = 12;

inline WilcoxonResult wilcoxon_signed_rank(std::span<const double> d) {
    WilcoxonResult r;
    std::vector<double> nz, mag;
    for (double v : d)
        if (v != 0.0) {
            nz.push_back(v);
            mag.push_back(std::abs(v));
        }
    r.n = nz.size();
    if (r.n == 0) {
        r.degenerate = true;
        return r;
    }
    const auto rk = midranks(mag);
    for (std::size_t i = 0; i < r.n; ++i)
        if (nz[i] > 0) r.w_plus += rk[i];

    if (r.n <= kWilcoxonExactMax) {
        // Doubled mid-ranks are integers; count sign assignments by subset sum.
        r.exact = true;
        std::vector<int> dr(r.n);
        int total = 0;
        for (std::size_t i = 0; i < r.n; ++i) total += dr[i] = static_cast<int>(std::lround(2.0 * rk[i]));
        std::vector<double> ways(static_cast<std::size_t>(total) + 1, 0.0);
        ways[0] = 1.0;
        for (int v : dr)
            for (int s = total; s >= v; --s) ways[static_cast<std::size_t>(s)] += ways[static_cast<std::size_t>(s - v)];
        const int obs = static_cast<int>(std::lround(2.0 * r.w_plus));
        const double all = std::ldexp(1.0, static_cast<int>(r.n));
        double le = 0.0, ge = 0.0;
        for (int s = 0; s <= total; ++s) {
            if (s <= obs) le += ways[static_cast<std::size_t>(s)];
            if (s >= obs) ge += ways[static_cast<std::size_t>(s)];
        }
        r.p_greater = ge / all;
        r.p = std::min(1.0, 2.0 * std::min(le, ge) / all);
        return r;
    }
    const double n = static_cast<double>(r.n);
    const double mu = n * (n + 1.0) / 4.0;
    const double var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term(mag) / 48.0;
    if (var <= 0.0) {
        r.degenerate = true;
        return r;
    }
    const double dev = r.w_plus - mu;
    const double z = (std::abs(dev) - 0.5) / std::sqrt(var);
    r.p = std::min(1.0, 2.0 * normal_cdf(-std::max(z, 0.0)));
    r.p_greater = normal_cdf(-(dev - 0.5) / std::sqrt(var));
    return r;
}

struct CohensD {
    double d = 0.0;
    bool degenerate = false;
};

/// Paired-design effect size d_z = mean / sd of the differences.
inline CohensD cohens_d(std::span<const double> d) {
    if (d.size() < 2) throw DomainError("cohens_d: need n >= 2");
    const double s = stddev(d);
    if (s == 0.0) return {0.0, true};
    return {mean(d) / s, false};
}

struct Interval {
    double lo = 0.0, hi = 0.0, level = 0.95;
    std::size_t resamples = 0;
};

/// Type-7 (linear interpolation) quantile of sorted data.
inline double quantile_sorted(std::span<const double> s, double q) {
    const double pos = q * static_cast<double>(s.size() - 1);
    const auto i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= s.size()) return s.back();
    const double f = pos - static_cast<double>(i);
    return s[i] + f * (s[i + 1] - s[i]);
}

/// Percentile bootstrap. Resample b draws from its own generator seeded by
/// (seed, b), so any partition of the resamples yields the same interval.
inline Interval bootstrap_ci(std::span<const double> x, const std::function<double(std::span<const double>)>& stat,
                             double level = 0.95, std::size_t resamples = 5000, std::uint64_t seed = 1) {
    if (x.size() < 2) throw DomainError("bootstrap_ci: need n >= 2");
    if (!(level > 0.0 && level < 1.0) || resamples < 2) throw DomainError("bootstrap_ci: bad level or resamples");
    std::vector<double> stats(resamples), buf(x.size());
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (std::size_t b = 0; b < resamples; ++b) {
        std::mt19937_64 rng(mix_seed(seed, b));
        for (double& v : buf) v = x[pick(rng)];
        stats[b] = stat(buf);
    }
    std::sort(stats.begin(), stats.end());
    const double a = 0.5 * (1.0 - level);
    return {quantile_sorted(stats, a), quantile_sorted(stats, 1.0 - a), level, resamples};
}

inline Interval bootstrap_mean_ci(std::span<const double> x, double level = 0.95, std::size_t resamples = 5000,
                                  std::uint64_t seed = 1) {
    return bootstrap_ci(x, [](std::span<const double> s) { return mean(s); }, level, resamples, seed);
}

/// n blocks x k treatments, row-major.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> v;
    double operator()(std::size_t i, std::size_t j) const { return v[i * cols + j]; }
    double& operator()(std::size_t i, std::size_t j) { return v[i * cols + j]; }
};

/// Within-block mid-ranks; lower outcome gets the lower rank.
inline Matrix rank_matrix(const Matrix& outcomes) {
    Matrix r{outcomes.rows, outcomes.cols, std::vector<double>(outcomes.v.size())};
    for (std::size_t i = 0; i < outcomes.rows; ++i) {
        const auto rk = midranks(std::span<const double>(outcomes.v.data() + i * outcomes.cols, outcomes.cols));
        std::copy(rk.begin(), rk.end(), r.v.begin() + static_cast<std::ptrdiff_t>(i * outcomes.cols));
    }
    return r;
}

struct FriedmanResult {
    double chi2 = 0.0;
    double p = 1.0;
    std::vector<double> mean_ranks;
    std::size_t n = 0, k = 0;
};

inline FriedmanResult friedman(const Matrix& outcomes) {
    const std::size_t n = outcomes.rows, k = outcomes.cols;
    if (n < 2 || k < 2) throw DomainError("friedman: need n >= 2 blocks and k >= 2 treatments");
    const Matrix r = rank_matrix(outcomes);
    FriedmanResult out;
    out.n = n;
    out.k = k;
    out.mean_ranks.assign(k, 0.0);
    double ties = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < k; ++j) out.mean_ranks[j] += r(i, j);
        ties += tie_term(std::span<const double>(outcomes.v.data() + i * k, k));
    }
    const double dn = static_cast<double>(n), dk = static_cast<double>(k);
    double ss = 0.0;
    for (double& m : out.mean_ranks) {
        m /= dn;
        ss += (m - 0.5 * (dk + 1.0)) * (m - 0.5 * (dk + 1.0));
    }
    const double denom = 1.0 - ties / (dn * (dk * dk * dk - dk));
    if (denom <= 0.0) return out;  // every block fully tied
    out.chi2 = 12.0 * dn / (dk * (dk + 1.0)) * ss / denom;
    out.p = chi2_sf(out.chi2, dk - 1.0);
    return out;
}

/// Nemenyi two-tailed constants q_alpha / sqrt(2) for k = 2..10.
class NemenyiTable {
public:
    static NemenyiTable parse(std::string_view text) {
        NemenyiTable t;
        std::istringstream in{std::string(text)};
        std::string line;
        bool header = false;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            if (!header) {
                if (line != "pstnet-nemenyi 1") throw FormatError(FormatError::Kind::corrupt, "nemenyi table: bad header");
                header = true;
                continue;
            }
            std::istringstream ls(line);
            std::size_t k;
            double q05, q01;
            if (!(ls >> k >> q05 >> q01) || k < 2 || k > 10)
                throw FormatError(FormatError::Kind::corrupt, "nemenyi table: bad row");
            t.q05_[k] = q05;
            t.q01_[k] = q01;
        }
        for (std::size_t k = 2; k <= 10; ++k)
            if (t.q05_[k] <= 0.0 || t.q01_[k] <= 0.0)
                throw FormatError(FormatError::Kind::corrupt, "nemenyi table: missing k=" + std::to_string(k));
        return t;
    }

    static const NemenyiTable& shipped() {
        static const NemenyiTable t = parse(read_file_text(data_dir() / "nemenyi_q.txt"));
        return t;
    }

    double q(std::size_t k, double alpha) const {
        if (k < 2 || k > 10) throw DomainError("nemenyi: k must be in [2, 10]");
        if (alpha == 0.05) return q05_[k];
        if (alpha == 0.01) return q01_[k];
        throw DomainError("nemenyi: alpha must be 0.05 or 0.01");
    }

private:
    std::array<double, 11> q05_{}, q01_{};
};

struct NemenyiResult {
    double alpha = 0.05;
    double critical_difference = 0.0;
    std::vector<std::vector<bool>> significant;  // k x k
    bool friedman_significant = true;            // advisory only
};

inline double nemenyi_cd(std::size_t k, std::size_t n, double alpha = 0.05,
                         const NemenyiTable& table = NemenyiTable::shipped()) {
    const double dk = static_cast<double>(k);
    return table.q(k, alpha) * std::sqrt(dk * (dk + 1.0) / (6.0 * static_cast<double>(n)));
}

inline NemenyiResult nemenyi(const FriedmanResult& f, double alpha = 0.05,
                             const NemenyiTable& table = NemenyiTable::shipped()) {
    NemenyiResult out;
    out.alpha = alpha;
    out.critical_difference = nemenyi_cd(f.k, f.n, alpha, table);
    out.friedman_significant = f.p < alpha;
    out.significant.assign(f.k, std::vector<bool>(f.k, false));
    for (std::size_t i = 0; i < f.k; ++i)
        for (std::size_t j = 0; j < f.k; ++j)
            out.significant[i][j] = std::abs(f.mean_ranks[i] - f.mean_ranks[j]) > out.critical_difference;
    return out;
}

struct StatReport {
    std::size_t n = 0;
    TTestResult t;
    WilcoxonResult wilcoxon;
    CohensD d;
    Interval ci;
};

inline StatReport paired_report(std::span<const double> d, std::uint64_t seed = 1) {
    StatReport r;
    r.n = d.size();
    r.t = paired_t(d);
    r.wilcoxon = wilcoxon_signed_rank(d);
    r.d = cohens_d(d);
    r.ci = bootstrap_mean_ci(d, 0.95, 5000, seed);
    return r;
}

/// One test per line: name statistic p [ci_lo ci_hi] n
inline std::string format_report(const StatReport& r) {
    std::ostringstream o;
    o.precision(8);
    o << "paired_t " << r.t.t << " " << r.t.p << " - - " << r.n << "\n";
    o << "wilcoxon " << r.wilcoxon.w_plus << " " << r.wilcoxon.p << " - - " << r.wilcoxon.n
      << (r.wilcoxon.exact ? " exact" : " normal") << "\n";
    o << "cohens_d " << r.d.d << " - - - " << r.n << "\n";
    o << "bootstrap_mean - - " << r.ci.lo << " " << r.ci.hi << " " << r.n << "\n";
    return o.str();
}

}  // namespace pstnet::stats
