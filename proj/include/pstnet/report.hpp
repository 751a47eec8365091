#pragma once

// Campaign reporting: paired records against a baseline estimator, the
// model comparison table, per-category and per-vehicle breakdowns, and the
// Friedman / Nemenyi block. All tables are whitespace-separated columns with
// a '#' header line.

#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pstnet/sim.hpp"
#include "pstnet/stats.hpp"

namespace pstnet {

struct ModelRow {
    std::string name;
    std::size_t params = 0;
    PairSummary summary;  // baseline as a, this model as b
};

struct CampaignReport {
    std::string baseline;
    std::vector<ModelRow> rows;                // every non-baseline estimator, campaign order
    std::vector<PairedRunRecord> records;      // all rows' records, concatenated
    std::vector<std::string> estimators;       // Friedman column order
    stats::FriedmanResult friedman;
    std::optional<stats::NemenyiResult> nemenyi;
};

inline CampaignReport build_report(const CampaignResult& r, const std::string& baseline,
                                   const std::map<std::string, std::size_t>& params, std::uint64_t seed = 1) {
    const auto it = std::find(r.estimators.begin(), r.estimators.end(), baseline);
    if (it == r.estimators.end()) throw DomainError("report: baseline '" + baseline + "' not in campaign");
    const auto a = static_cast<std::size_t>(it - r.estimators.begin());
    CampaignReport rep;
    rep.baseline = baseline;
    rep.estimators = r.estimators;
    for (std::size_t b = 0; b < r.estimators.size(); ++b) {
        if (b == a) continue;
        auto recs = paired_records(r, a, b);
        ModelRow row;
        row.name = r.estimators[b];
        row.params = params.count(row.name) ? params.at(row.name) : 0;
        row.summary = summarize_pair(recs, seed);
        rep.records.insert(rep.records.end(), recs.begin(), recs.end());
        rep.rows.push_back(std::move(row));
    }
    const auto mat = miss_matrix(r);
    if (mat.cols >= 2 && mat.rows >= 2) {
        rep.friedman = stats::friedman(mat);
        if (mat.cols <= 10) rep.nemenyi = stats::nemenyi(rep.friedman);
    }
    return rep;
}

/// Columns: scenario_id category vehicle seed estimator_a estimator_b miss_a_m miss_b_m delta_pct excluded
inline std::string records_table(const std::vector<PairedRunRecord>& recs) {
    std::ostringstream o;
    o.precision(17);
    o << "# scenario_id category vehicle seed estimator_a estimator_b miss_a_m miss_b_m delta_pct excluded\n";
    for (const auto& r : recs)
        o << r.scenario_id << ' ' << r.category << ' ' << r.vehicle << ' ' << r.seed << ' ' << r.estimator_a << ' '
          << r.estimator_b << ' ' << r.miss_a_m << ' ' << r.miss_b_m << ' ' << r.delta_pct << ' ' << r.excluded
          << '\n';
    return o.str();
}

inline std::vector<PairedRunRecord> parse_records_table(std::string_view text) {
    std::vector<PairedRunRecord> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        PairedRunRecord r;
        int excluded = 0;
        if (!(ls >> r.scenario_id >> r.category >> r.vehicle >> r.seed >> r.estimator_a >> r.estimator_b >>
              r.miss_a_m >> r.miss_b_m >> r.delta_pct >> excluded))
            throw FormatError(FormatError::Kind::corrupt, "records table: bad row: " + line);
        r.excluded = excluded != 0;
        out.push_back(r);
    }
    return out;
}

/// Model comparison: one row per non-baseline estimator.
inline std::string summary_table(const CampaignReport& rep) {
    std::ostringstream o;
    o << "# model params mean_delta_pct win_pct cohens_d p_paired_t p_wilcoxon ci95_lo ci95_hi n excluded ties"
      << "  (baseline: " << rep.baseline << ")\n";
    o << std::setprecision(6);
    for (const auto& row : rep.rows) {
        const auto& s = row.summary;
        o << row.name << ' ' << row.params << ' ' << s.mean_delta_pct << ' ' << 100.0 * s.win_rate << ' '
          << s.report.d.d << ' ' << s.report.t.p << ' ' << s.report.wilcoxon.p << ' ' << s.report.ci.lo << ' '
          << s.report.ci.hi << ' ' << s.n << ' ' << s.excluded << ' ' << s.ties << '\n';
    }
    return o.str();
}

/// Mean delta-percent per scenario category (rows) and model (columns).
inline std::string category_heatmap(const CampaignReport& rep) {
    std::ostringstream o;
    o << "# category";
    for (const auto& row : rep.rows) o << ' ' << row.name;
    o << '\n' << std::setprecision(6);
    std::map<std::string, std::vector<double>> grid;
    for (std::size_t j = 0; j < rep.rows.size(); ++j)
        for (const auto& g : rep.rows[j].summary.by_category) {
            auto& v = grid[g.key];
            v.resize(rep.rows.size(), std::nan(""));
            v[j] = g.mean_delta_pct;
        }
    for (const auto& [cat, v] : grid) {
        o << cat;
        for (double x : v) o << ' ' << x;
        o << '\n';
    }
    return o.str();
}

/// Cohen's d of the paired delta-percent per vehicle class and model.
inline std::string vehicle_effect_sizes(const CampaignReport& rep) {
    std::ostringstream o;
    o << "# model vehicle n mean_delta_pct cohens_d\n" << std::setprecision(6);
    for (const auto& row : rep.rows)
        for (const auto& g : row.summary.by_vehicle)
            o << row.name << ' ' << g.key << ' ' << g.n << ' ' << g.mean_delta_pct << ' ' << g.cohens_d << '\n';
    return o.str();
}

/// Mean ranks (1 = smallest miss), the Friedman statistic, and the Nemenyi critical difference.
inline std::string friedman_block(const CampaignReport& rep) {
    std::ostringstream o;
    o << std::setprecision(8);
    o << "friedman chi2 " << rep.friedman.chi2 << " df " << (rep.friedman.k ? rep.friedman.k - 1 : 0) << " p "
      << rep.friedman.p << " n " << rep.friedman.n << " k " << rep.friedman.k << '\n';
    for (std::size_t i = 0; i < rep.friedman.mean_ranks.size(); ++i)
        o << "mean_rank " << rep.estimators[i] << ' ' << rep.friedman.mean_ranks[i] << '\n';
    if (rep.nemenyi) {
        o << "nemenyi alpha " << rep.nemenyi->alpha << " cd " << rep.nemenyi->critical_difference << '\n';
        for (std::size_t i = 0; i < rep.estimators.size(); ++i)
            for (std::size_t j = i + 1; j < rep.estimators.size(); ++j)
                o << "nemenyi_pair " << rep.estimators[i] << ' ' << rep.estimators[j] << ' '
                  << (rep.nemenyi->significant[i][j] ? "significant" : "ns") << '\n';
    }
    return o.str();
}

/// Index of the lowest mean rank (ties: first).
inline std::size_t best_mean_rank(const stats::FriedmanResult& f) {
    return static_cast<std::size_t>(std::min_element(f.mean_ranks.begin(), f.mean_ranks.end()) - f.mean_ranks.begin());
}

}  // namespace pstnet
