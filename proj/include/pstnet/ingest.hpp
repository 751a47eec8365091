#pragma once

// NASA POWER hourly point client: parsing, SI normalization, on-disk cache,
// offline fixtures, and conversion to atmospheric columns.
//
// Network access goes through the Transport interface; the library itself
// never opens sockets. A client with no transport, or constructed with
// offline = true, serves fixtures only.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "pstnet/column.hpp"
#include "pstnet/util.hpp"

namespace pstnet {

class IngestError : public std::runtime_error {
public:
    enum class Kind { invalid_query, transport, parse, partial, offline };

    IngestError(Kind kind, const std::string& what, std::string detail = {}, double retry_after_s = 0.0)
        : std::runtime_error(what), kind_(kind), detail_(std::move(detail)), retry_after_s_(retry_after_s) {}

    Kind kind() const noexcept { return kind_; }
    /// Offending payload fragment (parse) or comma-separated missing parameters (partial).
    const std::string& detail() const noexcept { return detail_; }
    double retry_after_s() const noexcept { return retry_after_s_; }

private:
    Kind kind_;
    std::string detail_;
    double retry_after_s_;
};

inline const char* kind_name(IngestError::Kind k) {
    switch (k) {
        case IngestError::Kind::invalid_query: return "invalid_query";
        case IngestError::Kind::transport: return "transport";
        case IngestError::Kind::parse: return "parse";
        case IngestError::Kind::partial: return "partial";
        case IngestError::Kind::offline: return "offline";
    }
    return "unknown";
}

inline const std::vector<std::string>& default_power_parameters() {
    static const std::vector<std::string> p{"T2M", "PS", "WS10M"};
    return p;
}

struct WeatherQuery {
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    std::vector<std::string> parameters = default_power_parameters();
    std::string start = "20240115";  // YYYYMMDD, UTC
    std::string end = "20240115";
};

inline void validate(const WeatherQuery& q) {
    auto fail = [](const std::string& m) { throw IngestError(IngestError::Kind::invalid_query, m); };
    if (!(q.latitude_deg >= -90.0 && q.latitude_deg <= 90.0)) fail("latitude outside [-90, 90]");
    if (!(q.longitude_deg >= -180.0 && q.longitude_deg <= 180.0)) fail("longitude outside [-180, 180]");
    if (q.parameters.empty()) fail("empty parameter set");
    auto is_date = [](const std::string& d) {
        return d.size() == 8 && std::all_of(d.begin(), d.end(), [](char c) { return c >= '0' && c <= '9'; });
    };
    if (!is_date(q.start) || !is_date(q.end) || q.end < q.start) fail("time window must be YYYYMMDD with start <= end");
}

/// Grid rounding used for cache keys (POWER's native 0.5 degree grid).
inline double round_half_degree(double deg) { return std::round(deg * 2.0) / 2.0 + 0.0; }  // -0.0 -> +0.0

inline std::string cache_key(const WeatherQuery& q) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%+06.1f_%+07.1f", round_half_degree(q.latitude_deg),
                  round_half_degree(q.longitude_deg));
    std::string key = "power-hourly_" + std::string(buf) + "_" + q.start + "-" + q.end + "_";
    auto params = q.parameters;
    std::sort(params.begin(), params.end());
    for (std::size_t i = 0; i < params.size(); ++i) key += (i ? "-" : "") + params[i];
    return key;
}

enum class DataSource { live, cache, fixture };

inline const char* source_name(DataSource s) {
    switch (s) {
        case DataSource::live: return "live";
        case DataSource::cache: return "cache";
        case DataSource::fixture: return "fixture";
    }
    return "unknown";
}

inline DataSource parse_source(const std::string& s) {
    if (s == "live") return DataSource::live;
    if (s == "cache") return DataSource::cache;
    if (s == "fixture") return DataSource::fixture;
    throw IngestError(IngestError::Kind::parse, "unknown source tag", s);
}

/// SI-normalized series: T2M in K, PS in Pa, WS10M in m/s. Missing samples are NaN.
struct WeatherResponse {
    double latitude_deg = 0.0;
    double longitude_deg = 0.0;
    std::vector<std::string> times;  // YYYYMMDDHH
    std::map<std::string, std::vector<double>> series;
    std::vector<std::string> missing;  // requested parameters absent or entirely fill values
    DataSource source = DataSource::live;
    double fetched_at = 0.0;  // unix seconds

    bool complete() const { return missing.empty(); }
};

inline double to_si(const std::string& param, double v) {
    if (param == "T2M") return v + 273.15;  // degC
    if (param == "PS") return v * 1000.0;   // kPa
    return v;
}

/// Parses a POWER point response body. Values equal to the header's fill
/// value become NaN; a requested parameter with no valid sample is listed
/// in `missing` rather than rejected, so callers choose the policy.
inline WeatherResponse parse_power_json(std::string_view body, const WeatherQuery& q) {
    auto fragment = [&](std::size_t at) {
        const std::size_t from = at > 40 ? at - 40 : 0;
        return std::string(body.substr(from, 80));
    };
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& e) {
        throw IngestError(IngestError::Kind::parse, "malformed POWER payload", fragment(e.byte));
    }
    const auto* params = j.contains("properties") && j["properties"].is_object() &&
                                 j["properties"].contains("parameter") && j["properties"]["parameter"].is_object()
                             ? &j["properties"]["parameter"]
                             : nullptr;
    if (!params) throw IngestError(IngestError::Kind::parse, "POWER payload lacks properties.parameter", fragment(0));
    double fill = -999.0;
    if (j.contains("header") && j["header"].contains("fill_value") && j["header"]["fill_value"].is_number())
        fill = j["header"]["fill_value"].get<double>();

    WeatherResponse r;
    r.latitude_deg = q.latitude_deg;
    r.longitude_deg = q.longitude_deg;
    std::set<std::string> times;
    for (const auto& name : q.parameters)
        if (params->contains(name) && (*params)[name].is_object())
            for (const auto& [t, v] : (*params)[name].items()) times.insert(t);
    r.times.assign(times.begin(), times.end());
    for (const auto& name : q.parameters) {
        if (!params->contains(name) || !(*params)[name].is_object()) {
            r.missing.push_back(name);
            continue;
        }
        const auto& obj = (*params)[name];
        std::vector<double> values(r.times.size(), std::nan(""));
        bool any = false;
        for (std::size_t i = 0; i < r.times.size(); ++i) {
            if (!obj.contains(r.times[i])) continue;
            const auto& v = obj[r.times[i]];
            if (!v.is_number())
                throw IngestError(IngestError::Kind::parse, "non-numeric value for " + name, v.dump());
            const double x = v.get<double>();
            if (x == fill || !std::isfinite(x)) continue;
            values[i] = to_si(name, x);
            any = true;
        }
        if (!any) r.missing.push_back(name);
        r.series.emplace(name, std::move(values));
    }
    return r;
}

// ---- cache file format ------------------------------------------------------

inline nlohmann::json to_json(const WeatherResponse& r) {
    nlohmann::json series = nlohmann::json::object();
    for (const auto& [name, values] : r.series) {
        nlohmann::json arr = nlohmann::json::array();
        for (double v : values) arr.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr));
        series[name] = std::move(arr);
    }
    return {{"latitude_deg", r.latitude_deg}, {"longitude_deg", r.longitude_deg},
            {"times", r.times},               {"series", series},
            {"missing", r.missing},           {"source", source_name(r.source)},
            {"fetched_at", r.fetched_at}};
}

inline WeatherResponse response_from_json(const nlohmann::json& j) {
    try {
        WeatherResponse r;
        r.latitude_deg = j.at("latitude_deg").get<double>();
        r.longitude_deg = j.at("longitude_deg").get<double>();
        r.times = j.at("times").get<std::vector<std::string>>();
        for (const auto& [name, arr] : j.at("series").items()) {
            std::vector<double> v;
            for (const auto& x : arr) v.push_back(x.is_null() ? std::nan("") : x.get<double>());
            if (v.size() != r.times.size()) throw IngestError(IngestError::Kind::parse, "series length mismatch", name);
            r.series.emplace(name, std::move(v));
        }
        r.missing = j.at("missing").get<std::vector<std::string>>();
        r.source = parse_source(j.at("source").get<std::string>());
        r.fetched_at = j.at("fetched_at").get<double>();
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw IngestError(IngestError::Kind::parse, "malformed cached response", e.what());
    }
}

/// {key, fetched_at, ttl, response}
inline std::string encode_cache_entry(const std::string& key, const WeatherResponse& r, double ttl_s) {
    return nlohmann::json{{"key", key}, {"fetched_at", r.fetched_at}, {"ttl", ttl_s}, {"response", to_json(r)}}.dump(1);
}

struct CacheEntry {
    std::string key;
    double fetched_at = 0.0;
    double ttl_s = 0.0;
    WeatherResponse response;
};

inline CacheEntry decode_cache_entry(std::string_view text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw IngestError(IngestError::Kind::parse, "malformed cache entry", std::string(text.substr(0, 80)));
    }
    if (!j.contains("key") || !j.contains("fetched_at") || !j.contains("ttl") || !j.contains("response"))
        throw IngestError(IngestError::Kind::parse, "cache entry lacks its envelope");
    return {j["key"].get<std::string>(), j["fetched_at"].get<double>(), j["ttl"].get<double>(),
            response_from_json(j["response"])};
}

// ---- climatology grid fixture -------------------------------------------------

/// Regular lat/lon grid of surface values in POWER units (degC, kPa, m/s),
/// interpolated bilinearly; used offline when no point fixture exists.
class ClimatologyGrid {
public:
    static ClimatologyGrid parse(std::string_view text) {
        ClimatologyGrid g;
        try {
            const auto j = nlohmann::json::parse(text);
            if (j.at("format").get<std::string>() != "pstnet-climatology 1")
                throw IngestError(IngestError::Kind::parse, "unsupported climatology format");
            g.lat_ = j.at("lat").get<std::vector<double>>();
            g.lon_ = j.at("lon").get<std::vector<double>>();
            g.time_ = j.at("time").get<std::string>();
            for (const auto& name : default_power_parameters()) {
                auto rows = j.at(name).get<std::vector<std::vector<double>>>();
                if (rows.size() != g.lat_.size()) throw IngestError(IngestError::Kind::parse, "grid rows", name);
                std::vector<double> flat;
                for (const auto& r : rows) {
                    if (r.size() != g.lon_.size()) throw IngestError(IngestError::Kind::parse, "grid cols", name);
                    flat.insert(flat.end(), r.begin(), r.end());
                }
                g.fields_.emplace(name, std::move(flat));
            }
        } catch (const nlohmann::json::exception& e) {
            throw IngestError(IngestError::Kind::parse, "malformed climatology grid", e.what());
        }
        auto increasing = [](const std::vector<double>& v) {
            return v.size() >= 2 && std::adjacent_find(v.begin(), v.end(), std::greater_equal<>()) == v.end();
        };
        if (!increasing(g.lat_) || !increasing(g.lon_))
            throw IngestError(IngestError::Kind::parse, "climatology axes must be strictly increasing");
        return g;
    }

    /// Value in POWER units; latitudes clamp, longitudes wrap when the axis covers the globe.
    double sample(const std::string& param, double lat, double lon) const {
        const auto& f = fields_.at(param);
        const auto [i0, i1, ti] = bracket(lat_, std::clamp(lat, lat_.front(), lat_.back()));
        const double step = lon_[1] - lon_[0];
        const bool periodic = std::abs(lon_.back() - lon_.front() + step - 360.0) < 1e-6;
        std::size_t j0, j1;
        double tj;
        if (periodic) {
            const double x = std::fmod(std::fmod(lon - lon_.front(), 360.0) + 360.0, 360.0) + lon_.front();
            if (x > lon_.back()) {
                j0 = lon_.size() - 1;
                j1 = 0;
                tj = (x - lon_.back()) / step;
            } else {
                std::tie(j0, j1, tj) = bracket(lon_, x);
            }
        } else {
            std::tie(j0, j1, tj) = bracket(lon_, std::clamp(lon, lon_.front(), lon_.back()));
        }
        auto at = [&](std::size_t i, std::size_t j) { return f[i * lon_.size() + j]; };
        const double a = at(i0, j0) + tj * (at(i0, j1) - at(i0, j0));
        const double b = at(i1, j0) + tj * (at(i1, j1) - at(i1, j0));
        return a + ti * (b - a);
    }

    WeatherResponse response(const WeatherQuery& q) const {
        WeatherResponse r;
        r.latitude_deg = q.latitude_deg;
        r.longitude_deg = q.longitude_deg;
        r.times = {time_};
        r.source = DataSource::fixture;
        for (const auto& name : q.parameters) {
            if (!fields_.count(name)) {
                r.missing.push_back(name);
                continue;
            }
            r.series[name] = {to_si(name, sample(name, q.latitude_deg, q.longitude_deg))};
        }
        return r;
    }

private:
    static std::tuple<std::size_t, std::size_t, double> bracket(const std::vector<double>& axis, double x) {
        auto it = std::upper_bound(axis.begin(), axis.end(), x);
        std::size_t hi = std::min<std::size_t>(static_cast<std::size_t>(it - axis.begin()), axis.size() - 1);
        std::size_t lo = hi - 1;
        return {lo, hi, (x - axis[lo]) / (axis[hi] - axis[lo])};
    }

    std::vector<double> lat_, lon_;
    std::string time_;
    std::map<std::string, std::vector<double>> fields_;
};

// ---- transport ----------------------------------------------------------------

struct HttpResult {
    int status = 0;  // 0: connection failure
    std::string body;
    double retry_after_s = 0.0;
    std::string error;
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResult get(const std::string& host, const std::string& path_and_query) = 0;
};

inline constexpr const char* kPowerHost = "power.larc.nasa.gov";

inline std::string power_request_path(const WeatherQuery& q) {
    std::string params;
    for (std::size_t i = 0; i < q.parameters.size(); ++i) params += (i ? "," : "") + q.parameters[i];
    char coords[96];
    std::snprintf(coords, sizeof coords, "&longitude=%.4f&latitude=%.4f", q.longitude_deg, q.latitude_deg);
    return "/api/temporal/hourly/point?parameters=" + params + "&community=RE" + coords + "&start=" + q.start +
           "&end=" + q.end + "&format=JSON&time-standard=UTC";
}

inline bool offline_from_env() {
    const char* v = std::getenv("PSTNET_OFFLINE");
    return v && std::string(v) != "0" && std::string(v) != "";
}

struct IngestConfig {
    std::filesystem::path cache_dir;    // empty: no disk cache
    std::filesystem::path fixture_dir;  // point fixtures (cache-entry format) + climatology.json
    bool offline = offline_from_env();
    double ttl_s = 6.0 * 3600.0;
    double min_interval_s = 1.0;
    int max_retries = 4;
    double backoff_base_s = 1.0;
    bool allow_isa_fallback = false;
};

inline IngestConfig default_ingest_config() {
    IngestConfig c;
    c.fixture_dir = data_dir() / "fixtures" / "power";
    return c;
}

/// Thread-safe POWER client. Clock and sleep are injectable for tests.
class PowerClient {
public:
    using Clock = std::function<double()>;
    using Sleeper = std::function<void(double)>;

    explicit PowerClient(IngestConfig cfg, std::shared_ptr<Transport> transport = nullptr, Clock clock = {},
                         Sleeper sleeper = {})
        : cfg_(std::move(cfg)), transport_(std::move(transport)), clock_(std::move(clock)), sleep_(std::move(sleeper)) {
        if (!clock_)
            clock_ = [] {
                return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch()).count();
            };
        if (!sleep_) sleep_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
        if (!cfg_.fixture_dir.empty() && std::filesystem::exists(cfg_.fixture_dir / "climatology.json"))
            grid_ = ClimatologyGrid::parse(read_file_text(cfg_.fixture_dir / "climatology.json"));
    }

    bool offline() const { return cfg_.offline || !transport_; }
    const IngestConfig& config() const { return cfg_; }
    std::size_t network_requests() const { return requests_.load(); }

    /// Complete response or a typed IngestError.
    WeatherResponse fetch_point(const WeatherQuery& q) {
        validate(q);
        const std::string key = cache_key(q);
        WeatherResponse r = offline() ? from_fixture(q, key) : fetch_shared(q, key);
        if (!r.complete()) {
            std::string gaps;
            for (const auto& m : r.missing) gaps += (gaps.empty() ? "" : ",") + m;
            throw IngestError(IngestError::Kind::partial, "response missing parameters: " + gaps, gaps);
        }
        return r;
    }

private:
    WeatherResponse from_fixture(const WeatherQuery& q, const std::string& key) const {
        if (!cfg_.fixture_dir.empty()) {
            const auto path = cfg_.fixture_dir / (key + ".json");
            if (std::filesystem::exists(path)) {
                auto r = decode_cache_entry(read_file_text(path)).response;
                r.source = DataSource::fixture;
                return r;
            }
        }
        if (grid_) return grid_->response(q);
        throw IngestError(IngestError::Kind::offline, "offline mode and no fixture for " + key);
    }

    std::optional<WeatherResponse> from_cache(const std::string& key) const {
        if (cfg_.cache_dir.empty()) return std::nullopt;
        const auto path = cfg_.cache_dir / (key + ".json");
        if (!std::filesystem::exists(path)) return std::nullopt;
        CacheEntry e;
        try {
            e = decode_cache_entry(read_file_text(path));
        } catch (const std::exception&) {
            return std::nullopt;  // unreadable entries are refetched and overwritten
        }
        if (e.key != key || clock_() >= e.fetched_at + e.ttl_s) return std::nullopt;
        e.response.source = DataSource::cache;
        return e.response;
    }

    // One network fetch per key at a time; concurrent callers share its result.
    WeatherResponse fetch_shared(const WeatherQuery& q, const std::string& key) {
        if (auto c = from_cache(key)) return *c;
        std::shared_future<WeatherResponse> fut;
        bool owner = false;
        std::promise<WeatherResponse> promise;
        {
            std::lock_guard lk(inflight_mu_);
            auto it = inflight_.find(key);
            if (it != inflight_.end()) {
                fut = it->second;
            } else {
                fut = promise.get_future().share();
                inflight_.emplace(key, fut);
                owner = true;
            }
        }
        if (!owner) return fut.get();
        try {
            auto r = fetch_live(q, key);
            promise.set_value(r);
        } catch (...) {
            promise.set_exception(std::current_exception());
        }
        {
            std::lock_guard lk(inflight_mu_);
            inflight_.erase(key);
        }
        return fut.get();
    }

    WeatherResponse fetch_live(const WeatherQuery& q, const std::string& key) {
        if (auto c = from_cache(key)) return *c;  // filled while we waited
        const std::string path = power_request_path(q);
        HttpResult res;
        for (int attempt = 0;; ++attempt) {
            throttle();
            ++requests_;
            res = transport_->get(kPowerHost, path);
            const bool throttled = res.status == 429 || res.status == 503;
            if (!throttled || attempt >= cfg_.max_retries) break;
            sleep_(std::max(res.retry_after_s, cfg_.backoff_base_s * std::ldexp(1.0, attempt)));
        }
        if (res.status != 200) {
            const double hint = res.retry_after_s > 0.0 ? res.retry_after_s : cfg_.backoff_base_s;
            const std::string what = res.status == 0 ? "POWER request failed: " + res.error
                                                     : "POWER request returned HTTP " + std::to_string(res.status);
            throw IngestError(IngestError::Kind::transport, what, res.body.substr(0, 200), hint);
        }
        WeatherResponse r = parse_power_json(res.body, q);
        r.source = DataSource::live;
        r.fetched_at = clock_();
        if (!cfg_.cache_dir.empty() && r.complete()) {
            std::filesystem::create_directories(cfg_.cache_dir);
            write_file_atomic(cfg_.cache_dir / (key + ".json"), encode_cache_entry(key, r, cfg_.ttl_s));
        }
        return r;
    }

    // Requests are spaced at least min_interval_s apart across all threads.
    void throttle() {
        std::unique_lock lk(rate_mu_);
        const double now = clock_();
        if (last_request_ && now < *last_request_ + cfg_.min_interval_s) {
            const double wait = *last_request_ + cfg_.min_interval_s - now;
            sleep_(wait);
            last_request_ = now + wait;
        } else {
            last_request_ = now;
        }
    }

    IngestConfig cfg_;
    std::shared_ptr<Transport> transport_;
    Clock clock_;
    Sleeper sleep_;
    std::optional<ClimatologyGrid> grid_;
    std::atomic<std::size_t> requests_{0};
    std::mutex rate_mu_;
    std::optional<double> last_request_;
    std::mutex inflight_mu_;
    std::map<std::string, std::shared_future<WeatherResponse>> inflight_;
};

/// Surface observation from the latest time step where every required
/// parameter is valid. Missing parameters are refused unless allow_isa_fallback,
/// in which case the ISA sea-level value (or calm wind) stands in.
inline SurfaceObservation surface_observation(const WeatherResponse& r, bool allow_isa_fallback = false) {
    auto latest = [&](const std::string& name) -> std::optional<double> {
        const auto it = r.series.find(name);
        if (it == r.series.end()) return std::nullopt;
        for (std::size_t i = it->second.size(); i-- > 0;)
            if (std::isfinite(it->second[i])) return it->second[i];
        return std::nullopt;
    };
    SurfaceObservation obs;
    obs.latitude_deg = r.latitude_deg;
    std::string gaps;
    auto take = [&](const std::string& name, double& out) {
        if (auto v = latest(name)) out = *v;
        else gaps += (gaps.empty() ? "" : ",") + name;
    };
    take("T2M", obs.temperature_k);
    take("PS", obs.pressure_pa);
    take("WS10M", obs.wind10_mps);
    if (!gaps.empty() && !allow_isa_fallback)
        throw IngestError(IngestError::Kind::partial, "cannot build column, missing: " + gaps, gaps);
    return obs;
}

inline std::vector<AtmosphericState> to_state_column(const WeatherResponse& r, std::span<const double> levels,
                                                     bool allow_isa_fallback = false, const ColumnOptions& opts = {}) {
    return surface_column(surface_observation(r, allow_isa_fallback), levels, opts);
}

}  // namespace pstnet
