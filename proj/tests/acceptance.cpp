// Acceptance run: one PASS/FAIL line per criterion, measured values alongside.
// Exit status is non-zero if any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "net_guard.hpp"
#include "pstnet/ingest.hpp"
#include "pstnet/registry.hpp"
#include "pstnet/report.hpp"
#include "pstnet/train.hpp"

using namespace pstnet;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int g_failures = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %2d  %-34s %s\n", pass ? "PASS" : "FAIL", id, name.c_str(), detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// ---------------------------------------------------------------- gradients

double worst_gradient_error(const PSTNetModel& model, std::span<const TrainingExample> batch, std::size_t* checked) {
    const auto [grad, lb] = backward(model, batch);
    PSTNetModel m = model;
    const double h = 1e-6;
    double worst = 0.0;  // max over params of |g - fd| / max(1e-4 |fd|, 1e-7)
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const double keep = m.params[i];
        m.params[i] = keep + h;
        const double up = loss(m, batch).total;
        m.params[i] = keep - h;
        const double dn = loss(m, batch).total;
        m.params[i] = keep;
        const double fd = (up - dn) / (2 * h);
        worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1e-4 * std::abs(fd), 1e-7));
    }
    *checked += m.params.size();
    return worst;
}

// -------------------------------------------------------------- statistics

double integrate(const std::function<double(double)>& f, double a, double b) {
    if (a == b) return 0.0;
    return boost::math::quadrature::gauss_kronrod<double, 61>::integrate(f, a, b, 20, 1e-15);
}

double brute_wilcoxon_p(const std::vector<double>& d) {
    const std::size_t n = d.size();
    std::vector<double> mag(n), rank(n);
    for (std::size_t i = 0; i < n; ++i) mag[i] = std::abs(d[i]);
    for (std::size_t i = 0; i < n; ++i) {
        double below = 0, equal = 0;
        for (std::size_t j = 0; j < n; ++j) below += mag[j] < mag[i], equal += mag[j] == mag[i];
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
    return std::min(1.0, 2 * std::min(le, ge) / std::ldexp(1.0, static_cast<int>(n)));
}

struct StatChecks {
    double wilcoxon_err = 0, friedman_err = 0, friedman_dist_err = 0, coverage = 0, cdf_err = 0;
};

StatChecks statistics_checks() {
    StatChecks c;
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n01(0.0, 1.0);

    for (std::size_t size = 1; size <= 10; ++size)
        for (int rep = 0; rep < 20; ++rep) {
            std::vector<double> d;
            for (std::size_t i = 0; i < size; ++i) {
                const double v = std::round((n01(rng) + 0.3) * 4) / 4;
                if (v != 0.0) d.push_back(v);
            }
            if (d.empty()) continue;
            c.wilcoxon_err = std::max(c.wilcoxon_err, std::abs(stats::wilcoxon_signed_rank(d).p - brute_wilcoxon_p(d)));
        }

    // k = 3, n = 4: all 6^4 within-block orderings. The statistic of each
    // configuration must equal the rank-sum form, and the permutation
    // distribution built from the library must equal the one built from it.
    std::vector<std::array<double, 3>> perms;
    std::array<double, 3> p{1, 2, 3};
    do perms.push_back(p);
    while (std::next_permutation(p.begin(), p.end()));
    std::map<long, int> lib_dist, ref_dist;
    for (std::size_t code = 0; code < 1296; ++code) {
        stats::Matrix m{4, 3, {}};
        std::size_t cc = code;
        for (int i = 0; i < 4; ++i, cc /= 6) m.v.insert(m.v.end(), perms[cc % 6].begin(), perms[cc % 6].end());
        double s = 0;
        for (std::size_t j = 0; j < 3; ++j) {
            double r = 0;
            for (std::size_t i = 0; i < 4; ++i) r += m(i, j);
            s += r * r;
        }
        const double ref = 12.0 / (4 * 3 * 4) * s - 3 * 4 * 4;
        const double lib = stats::friedman(m).chi2;
        c.friedman_err = std::max(c.friedman_err, std::abs(lib - ref));
        ++lib_dist[std::lround(lib * 1e6)];
        ++ref_dist[std::lround(ref * 1e6)];
    }
    c.friedman_dist_err = lib_dist == ref_dist ? 0.0 : 1.0;

    // Percentile bootstrap coverage of the mean, normal data, n = 100.
    std::size_t covered = 0;
    const std::size_t trials = 1000;
    for (std::size_t t = 0; t < trials; ++t) {
        std::mt19937_64 g(mix_seed(99, t));
        std::vector<double> x(100);
        for (auto& v : x) v = 2.0 + 3.0 * n01(g);
        const auto ci = stats::bootstrap_mean_ci(x, 0.95, 2000, t + 1);
        covered += ci.lo <= 2.0 && 2.0 <= ci.hi;
    }
    c.coverage = static_cast<double>(covered) / trials;

    auto t_density = [](double x, double nu) {
        return std::exp(std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2)) / std::sqrt(nu * M_PI) *
               std::pow(1 + x * x / nu, -(nu + 1) / 2);
    };
    auto chi2_density = [](double x, double k) {
        return std::exp((k / 2 - 1) * std::log(x) - x / 2 - (k / 2) * std::log(2.0) - std::lgamma(k / 2));
    };
    for (double nu : {1.0, 4.0, 19.0, 339.0})
        for (double t : {-5.0, -1.1, 0.0, 0.7, 2.9}) {
            const double half = integrate([&](double x) { return t_density(x, nu); }, 0, std::abs(t));
            c.cdf_err = std::max(c.cdf_err, std::abs(stats::t_cdf(t, nu) - (t >= 0 ? 0.5 + half : 0.5 - half)));
        }
    for (double k : {1.0, 2.0, 3.0, 4.0, 9.0})
        for (double x : {0.3, 1.0, 4.0, 12.0}) {
            // u = v^2 removes the endpoint singularity for k < 2.
            const double ref = integrate([&](double v) { return 2 * v * chi2_density(v * v, k); }, 0, std::sqrt(x));
            c.cdf_err = std::max(c.cdf_err, std::abs(stats::chi2_cdf(x, k) - ref));
        }
    return c;
}

// ------------------------------------------------------------------ inputs

AtmosphericState random_state(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    AtmosphericState s;
    s.altitude_m = 35000.0 * u(rng);
    s.temperature_k = 180.0 + 140.0 * u(rng);
    s.pressure_pa = isa_state(s.altitude_m).pressure_pa * std::exp(0.05 * (u(rng) - 0.5));
    s.wind10_mps = 40.0 * u(rng);
    s.lapse_k_per_m = -0.03 + 0.06 * u(rng);
    s.density_ratio = density_ratio(s.pressure_pa, s.temperature_k);
    s.latitude_deg = -90.0 + 180.0 * u(rng);
    return s;
}

struct Trained {
    Dataset ds;
    PSTNetModel pstnet;
    TrainHistory hist;
    double train_seconds = 0;
    TrainedBaselines base;
};

}  // namespace

int main() {
    const auto t_all = Clock::now();
    std::printf("# acceptance run; offline=%d net_guard=%d\n", offline_from_env() ? 1 : 0, net_guard::active() ? 1 : 0);

    Trained T;
    T.ds = make_dataset(20000, 7);
    TrainConfig tc;  // 300 epochs, batch 64, cosine 3e-3 -> 3e-4, seed 1
    {
        const auto t0 = Clock::now();
        std::tie(T.pstnet, T.hist) = train_pstnet(T.ds, tc);
        T.train_seconds = seconds_since(t0);
    }
    const auto train_samples = T.ds.subset(T.ds.split.train);
    const auto test_samples = T.ds.subset(T.ds.split.test);

    // 1. analytic gradients against central differences at three stages.
    {
        const auto t0 = Clock::now();
        const auto examples = make_examples(T.pstnet, train_samples);
        const std::vector<TrainingExample> batch(examples.begin(), examples.begin() + 64);
        PSTNetModel init = init_model(ModelDims{}, tc.seed, T.pstnet.norm);
        TrainConfig mid_cfg = tc;
        mid_cfg.epochs = 10;
        const Dataset small = make_dataset(2000, 7);
        auto [mid_best, mid_hist] = train_loop(init_model(ModelDims{}, tc.seed, T.pstnet.norm), small, mid_cfg);
        PSTNetModel mid = mid_best;
        mid.params = mid_hist.final_params;
        PSTNetModel conv = T.pstnet;
        conv.params = T.hist.final_params;
        std::size_t checked = 0;
        const double e0 = worst_gradient_error(init, batch, &checked);
        const double e1 = worst_gradient_error(mid, batch, &checked);
        const double e2 = worst_gradient_error(conv, batch, &checked);
        const double secs = seconds_since(t0);
        const double worst = std::max({e0, e1, e2});
        report(1, "gradients vs finite differences", worst <= 1.0 && secs < 30.0,
               fmt("worst |g-fd|/max(1e-4|fd|,1e-7) init=%.3g mid=%.3g conv=%.3g over %zu params, %.1f s", e0, e1, e2,
                   checked, secs));
    }

    // 2. parameter budget and file size.
    {
        const auto a = param_audit(T.pstnet);
        const auto bytes = encode_model(T.pstnet);
        report(2, "parameter audit", a.total >= 500 && a.total <= 600 && bytes.size() < 2560,
               fmt("params=%zu (gate %zu, experts %zu, film %zu, head %zu), file=%zu bytes", a.total, a.gate, a.experts,
                   a.film, a.head, bytes.size()));
    }

    // 3. hard constraint and cube-root scaling.
    {
        std::mt19937_64 rng(2024);
        std::normal_distribution<double> n01(0.0, 1.0);
        std::vector<AtmosphericState> inputs(100000);
        for (auto& s : inputs) s = random_state(rng);
        std::size_t violations = 0, evaluated = 0;
        const std::array<double, 10> sigmas{0.1, 0.3, 1, 2, 3, 5, 8, 12, 20, 40};
        for (double sd : sigmas) {
            PSTNetModel m = T.pstnet;
            for (auto& p : m.params) p = sd * n01(rng);
            const auto L = m.layout();
            for (const auto& s : inputs) {
                const double k = predict(m, L, s);
                violations += !(k >= physics_terms(s, m.constants).k_mo);
                ++evaluated;
            }
        }
        PSTNetModel m = T.pstnet;
        auto s = isa_state(300.0);
        s.wind10_mps = 4.0;
        s.lapse_k_per_m = -atmos_const::dry_adiabatic;
        auto s8 = s;
        s8.wind10_mps = 8.0;  // u* doubles, so eps grows by 8
        const auto [k1, d1] = forward(m, s);
        m.norm.mean[3] += 4.0;  // network input held fixed
        const auto [k8, d8] = forward(m, s8);
        const double eps_ratio = d8.epsilon.epsilon_m2s3 / d1.epsilon.epsilon_m2s3;
        const double ratio = (k8 - d8.k_mo) / (k1 - d1.k_mo);
        const bool scaling = std::abs(eps_ratio - 8.0) <= 8e-9 && std::abs(ratio - 2.0) <= 2e-9;
        report(3, "hard constraint and eps^(1/3) scaling", violations == 0 && scaling,
               fmt("%zu violations in %zu evaluations; eps ratio %.12f, residual ratio %.12f", violations, evaluated,
                   eps_ratio, ratio));
    }

    // 4. convergence on the 20k set.
    {
        std::size_t hit = 0;
        double best = INFINITY;
        for (const auto& e : T.hist.epochs) {
            if (!hit && e.train.data_mse <= 1.3e-2) hit = e.epoch + 1;
            best = std::min(best, e.train.data_mse);
        }
        const bool mono = windowed_monotone(T.hist, 25);
        report(4, "training convergence", hit > 0 && hit <= 300 && mono && T.train_seconds < 120.0,
               fmt("train mse %.4g (min %.4g), <=1.3e-2 at epoch %zu, windowed-25 monotone=%s, %.1f s",
                   T.hist.epochs.back().train.data_mse, best, hit, mono ? "yes" : "no", T.train_seconds));
    }

    // 5. gate routing, supervised and unsupervised.
    {
        const auto t0 = Clock::now();
        const double acc = gate_accuracy(T.pstnet, test_samples);
        TrainConfig ab = tc;
        ab.lambda_gate = 0.0;
        const auto [unsup, uh] = train_pstnet(T.ds, ab);
        const double purity = gate_purity(unsup, test_samples);
        const double secs = seconds_since(t0) + T.train_seconds;
        report(5, "gate accuracy and ablation purity", acc >= 0.85 && purity >= 0.60 && secs < 300.0,
               fmt("gate accuracy %.4f (>=0.85); lambda_g=0 purity %.4f (>=0.60); %.1f s incl. main training", acc,
                   purity, secs));
    }

    // Baselines, shared by criteria 6 and 8.
    const auto t_base = Clock::now();
    T.base = train_baselines(T.ds, 1);
    const double base_seconds = seconds_since(t_base);
    const fs::path model_dir = fs::temp_directory_path() / "pstnet_acceptance_models";
    fs::remove_all(model_dir);
    fs::create_directories(model_dir);
    save(T.pstnet, model_dir / "model.pstn");
    save_baselines(T.base, model_dir);

    // 6. guidance campaign.
    {
        const auto t0 = Clock::now();
        const auto set = ModelSet::load(model_dir, {"dryden", "pstnet", "mlp", "deep-mlp", "gbt"});
        std::vector<NamedEstimator> est;
        std::map<std::string, std::size_t> params;
        for (const auto& e : set.estimators()) {
            est.push_back(e.estimator);
            params[e.estimator.name] = e.params;
        }
        CampaignConfig cc;  // 340 runs, seed 2024, all categories and vehicles
        const auto res = run_campaign(cc, est);
        const auto rep = build_report(res, "dryden", params);
        const auto& row = *std::find_if(rep.rows.begin(), rep.rows.end(), [](const ModelRow& r) { return r.name == "pstnet"; });
        const auto& s = row.summary;
        const std::size_t first = best_mean_rank(rep.friedman);
        const bool pass = s.mean_delta_pct > 0 && s.report.t.p < 0.05 && s.win_rate >= 0.60 && rep.friedman.p < 0.05 &&
                          rep.estimators[first] == "pstnet";
        std::ostringstream ranks;
        for (std::size_t j = 0; j < rep.estimators.size(); ++j)
            ranks << (j ? " " : "") << rep.estimators[j] << "=" << fmt("%.3f", rep.friedman.mean_ranks[j]);
        report(6, "campaign vs Dryden and Friedman", pass,
               fmt("n=%zu mean delta %.3f%% (95%% CI %.3f..%.3f), t p=%.3g, win %.3f; Friedman chi2 %.2f p=%.3g; ranks ",
                   s.n, s.mean_delta_pct, s.report.ci.lo, s.report.ci.hi, s.report.t.p, s.win_rate, rep.friedman.chi2,
                   rep.friedman.p) +
                   ranks.str() + fmt("; %.1f s", seconds_since(t0)));
    }

    // 7. statistics library.
    {
        const auto t0 = Clock::now();
        const auto c = statistics_checks();
        const bool pass = c.wilcoxon_err <= 1e-12 && c.friedman_err <= 1e-9 && c.friedman_dist_err == 0.0 &&
                          std::abs(c.coverage - 0.95) <= 0.02 && c.cdf_err <= 1e-10;
        report(7, "statistics vs independent oracles", pass,
               fmt("wilcoxon max|dp| %.2g; friedman max|dchi2| %.2g, permutation dist %s; bootstrap coverage %.3f; "
                   "cdf max err %.2g; %.1f s",
                   c.wilcoxon_err, c.friedman_err, c.friedman_dist_err == 0 ? "equal" : "differs", c.coverage,
                   c.cdf_err, seconds_since(t0)));
    }

    // 8. accuracy against the learned baselines and the physics floor.
    {
        const auto& norm = T.pstnet.norm;
        const double p_mse = eval_metrics(T.pstnet, test_samples).mse;
        const double mlp = eval_estimator([&](const AtmosphericState& s) { return mlp_predict(T.base.mlp, s); }, test_samples, norm).mse;
        const double deep = eval_estimator([&](const AtmosphericState& s) { return mlp_predict(T.base.deep, s); }, test_samples, norm).mse;
        const double gbt = eval_estimator([&](const AtmosphericState& s) { return gbt_predict(T.base.gbt, s); }, test_samples, norm).mse;
        // Search for an input where a raw baseline output falls under k_MO.
        std::mt19937_64 rng(8);
        std::string found = "none";
        bool pst_ok = true;
        for (int i = 0; i < 200000 && found == "none"; ++i) {
            const auto s = random_state(rng);
            const double kmo = physics_terms(s, T.pstnet.constants).k_mo;
            const std::array<std::pair<const char*, double>, 3> outs{
                {{"mlp", mlp_predict(T.base.mlp, s)}, {"deep-mlp", mlp_predict(T.base.deep, s)}, {"gbt", gbt_predict(T.base.gbt, s)}}};
            for (const auto& [name, k] : outs)
                if (k < kmo) {
                    const double kp = predict(T.pstnet, s);
                    pst_ok = kp >= kmo;
                    found = fmt("%s gives %.4g < k_MO %.4g at h=%.0f m u10=%.1f m/s lapse=%.4f; pstnet %.4g", name, k,
                                kmo, s.altitude_m, s.wind10_mps, s.lapse_k_per_m, kp);
                    break;
                }
        }
        report(8, "accuracy vs baselines, floor", p_mse < mlp && p_mse < deep && p_mse < gbt && found != "none" && pst_ok,
               fmt("test mse pstnet %.4g, mlp %.4g, deep-mlp %.4g, gbt %.4g; ", p_mse, mlp, deep, gbt) + found +
                   fmt("; baselines fit in %.1f s", base_seconds));
    }

    // 9. inference latency.
    {
        std::mt19937_64 rng(9);
        std::vector<AtmosphericState> inputs(1024);
        for (auto& s : inputs) s = random_state(rng);
        const auto L = T.pstnet.layout();
        const std::size_t calls = 1000000;
        std::vector<double> ns(calls);
        double sink = 0;
        for (std::size_t i = 0; i < calls; ++i) {
            const auto a = Clock::now();
            sink += predict(T.pstnet, L, inputs[i & 1023]);
            ns[i] = std::chrono::duration<double, std::nano>(Clock::now() - a).count();
        }
        std::nth_element(ns.begin(), ns.begin() + calls / 2, ns.end());
        const double median = ns[calls / 2];
        std::nth_element(ns.begin(), ns.begin() + calls * 99 / 100, ns.end());
        report(9, "forward latency", median < 10000.0 && std::isfinite(sink),
               fmt("median %.0f ns, p99 %.0f ns over %zu calls", median, ns[calls * 99 / 100], calls));
    }

    // 10. determinism.
    {
        const Dataset d1 = make_dataset(2000, 7), d2 = make_dataset(2000, 7);
        TrainConfig c = tc;
        c.epochs = 20;
        const auto a = train_pstnet(d1, c).first, b = train_pstnet(d2, c).first;
        const bool train_same = encode_model(a) == encode_model(b);

        CampaignConfig cc;
        cc.runs = 54;
        const std::vector<NamedEstimator> est{{"dryden", DrydenEstimator{}}, {"pstnet", [&](const AtmosphericState& s) { return predict(a, s); }}};
        cc.threads = 1;
        const auto r1 = campaign_table(run_campaign(cc, est));
        cc.threads = 4;
        const auto r2 = campaign_table(run_campaign(cc, est));

        GustGenerator g1(1.7, 533.4, 1000.0, 77, 0.01), g2(1.7, 533.4, 1000.0, 77, 0.01);
        bool gust_same = true;
        for (int i = 0; i < 100000; ++i) gust_same &= g1.next() == g2.next();

        const fs::path p = fs::temp_directory_path() / "pstnet_acceptance_roundtrip.pstn";
        save(T.pstnet, p);
        const auto loaded = load(p);
        const bool io_same = read_file_bytes(p) == encode_model(T.pstnet) && encode_model(loaded) == encode_model(T.pstnet) &&
                             loaded.params == T.pstnet.params;
        fs::remove(p);
        report(10, "determinism", train_same && r1 == r2 && gust_same && io_same,
               fmt("train %s, campaign (1 vs 4 threads) %s, gust stream %s, save/load %s", train_same ? "identical" : "differs",
                   r1 == r2 ? "identical" : "differs", gust_same ? "identical" : "differs", io_same ? "identical" : "differs"));
    }

    // 11. offline operation.
    {
        PowerClient client(default_ingest_config());
        WeatherQuery q;
        q.latitude_deg = 45.0;
        q.longitude_deg = 10.0;
        const auto r = client.fetch_point(q);
        const bool pass = offline_from_env() && client.offline() && client.network_requests() == 0 &&
                          r.source == DataSource::fixture && net_guard::active() && net_guard::denied_attempts() == 0;
        report(11, "offline operation", pass,
               fmt("PSTNET_OFFLINE=%s, guard active=%s, blocked connects=%zu, POWER requests=%zu, fixture source=%s",
                   offline_from_env() ? "1" : "0", net_guard::active() ? "yes" : "no",
                   static_cast<std::size_t>(net_guard::denied_attempts()), static_cast<std::size_t>(client.network_requests()),
                   r.source == DataSource::fixture ? "yes" : "no"));
    }

    fs::remove_all(model_dir);
    std::printf("# %d criteria failed; total %.1f s\n", g_failures, seconds_since(t_all));
    return g_failures == 0 ? 0 : 1;
}
