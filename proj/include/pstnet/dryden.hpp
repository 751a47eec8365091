#pragma once

// Dryden gust intensities: low-altitude closed forms below 600 m and a
// versioned altitude-band table above, blended linearly over 600-800 m.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "pstnet/atmos.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

enum class Severity { light, moderate, severe };

inline Severity parse_severity(const std::string& s) {
    if (s == "light") return Severity::light;
    if (s == "moderate") return Severity::moderate;
    if (s == "severe") return Severity::severe;
    throw DomainError("unknown turbulence severity '" + s + "'");
}

struct GustSigma {
    double u = 0.0;
    double v = 0.0;
    double w = 0.0;

    /// Turbulence kinetic energy implied by the three intensities.
    double tke() const { return 0.5 * (u * u + v * v + w * w); }
};

namespace dryden_const {
inline constexpr double low_altitude_ceiling = 600.0;  // m
inline constexpr double blend_width = 200.0;           // m
inline constexpr double m_to_ft = 1.0 / 0.3048;
inline constexpr int table_version = 1;
}  // namespace dryden_const

class DrydenTable {
public:
    struct Row {
        double altitude_m;
        GustSigma sigma;
    };

    static DrydenTable load(const std::filesystem::path& path) {
        return parse(read_file_text(path));
    }

    static const DrydenTable& shipped() {
        static const DrydenTable table = load(data_dir() / "dryden_table.txt");
        return table;
    }

    /// Parses "pstnet-dryden-table <version>" + rows + "crc32 <hex>" trailer.
    static DrydenTable parse(const std::string& text) {
        const auto trailer = text.rfind("crc32 ");
        if (trailer == std::string::npos)
            throw FormatError(FormatError::Kind::checksum, "dryden table: missing crc32 trailer");
        const std::string body = text.substr(0, trailer);
        const auto stored = std::stoul(text.substr(trailer + 6), nullptr, 16);
        if (stored != crc32_of(body))
            throw FormatError(FormatError::Kind::checksum, "dryden table: checksum mismatch");

        std::istringstream in(body);
        std::string magic;
        int version = 0;
        in >> magic >> version;
        if (magic != "pstnet-dryden-table")
            throw FormatError(FormatError::Kind::corrupt, "dryden table: bad magic");
        if (version != dryden_const::table_version)
            throw FormatError(FormatError::Kind::version, "dryden table: unsupported version");

        DrydenTable t;
        t.checksum_ = static_cast<std::uint32_t>(stored);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            std::istringstream ls(line);
            Row r{};
            std::string sev;
            if (!(ls >> r.altitude_m >> sev >> r.sigma.u >> r.sigma.v >> r.sigma.w))
                throw FormatError(FormatError::Kind::corrupt, "dryden table: bad row '" + line + "'");
            t.rows_[static_cast<int>(parse_severity(sev))].push_back(r);
        }
        for (auto& rows : t.rows_) {
            if (rows.empty()) throw FormatError(FormatError::Kind::corrupt, "dryden table: missing severity");
            std::sort(rows.begin(), rows.end(),
                      [](const Row& a, const Row& b) { return a.altitude_m < b.altitude_m; });
        }
        return t;
    }

    /// Linear in altitude between bands, held constant outside the table.
    GustSigma lookup(double altitude_m, Severity sev) const {
        const auto& rows = rows_[static_cast<int>(sev)];
        if (altitude_m <= rows.front().altitude_m) return rows.front().sigma;
        if (altitude_m >= rows.back().altitude_m) return rows.back().sigma;
        const auto hi = std::upper_bound(rows.begin(), rows.end(), altitude_m,
                                         [](double h, const Row& r) { return h < r.altitude_m; });
        const auto lo = hi - 1;
        const double w = (altitude_m - lo->altitude_m) / (hi->altitude_m - lo->altitude_m);
        return {lo->sigma.u + w * (hi->sigma.u - lo->sigma.u),
                lo->sigma.v + w * (hi->sigma.v - lo->sigma.v),
                lo->sigma.w + w * (hi->sigma.w - lo->sigma.w)};
    }

    std::uint32_t checksum() const { return checksum_; }

private:
    std::array<std::vector<Row>, 3> rows_;
    std::uint32_t checksum_ = 0;
};

/// Low-altitude closed forms; h in metres, W20 the 20 ft wind.
inline GustSigma dryden_low_altitude(double altitude_m, double wind20_mps) {
    const double h_ft = altitude_m * dryden_const::m_to_ft;
    const double sw = 0.1 * wind20_mps;
    const double su = sw / std::pow(0.177 + 0.000823 * h_ft, 0.4);
    return {su, su, sw};
}

inline GustSigma dryden_sigma(double altitude_m, double wind20_mps, Severity severity,
                              const DrydenTable& table = DrydenTable::shipped()) {
    if (!(altitude_m >= 0.0)) throw DomainError("dryden_sigma: negative altitude");
    using namespace dryden_const;
    if (altitude_m < low_altitude_ceiling) return dryden_low_altitude(altitude_m, wind20_mps);
    const GustSigma high = table.lookup(altitude_m, severity);
    if (altitude_m >= low_altitude_ceiling + blend_width) return high;
    const GustSigma low = dryden_low_altitude(altitude_m, wind20_mps);
    const double w = (altitude_m - low_altitude_ceiling) / blend_width;
    return {low.u + w * (high.u - low.u), low.v + w * (high.v - low.v), low.w + w * (high.w - low.w)};
}

/// 1/7 power-law conversion from the 10 m wind to the 20 ft wind.
inline double wind20_from_wind10(double wind10_mps) {
    return wind10_mps * std::pow(6.096 / 10.0, 1.0 / 7.0);
}

/// Dryden as a TKE estimator (the classical baseline).
struct DrydenEstimator {
    Severity severity = Severity::moderate;
    const DrydenTable* table = &DrydenTable::shipped();

    double operator()(const AtmosphericState& s) const {
        return dryden_sigma(s.altitude_m, wind20_from_wind10(s.wind10_mps), severity, *table).tke();
    }
};

}  // namespace pstnet
