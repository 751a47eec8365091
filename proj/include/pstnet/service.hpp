#pragma once

// HTTP API logic, independent of the HTTP library: each handler maps parsed
// request parameters to a status code and a JSON body. Every body carries the
// {version, model_checksum} envelope. See http_server.hpp for the binding.

#include <charconv>
#include <chrono>
#include <cstdio>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pstnet/dryden.hpp"
#include "pstnet/ingest.hpp"
#include "pstnet/model.hpp"
#include "pstnet/model_io.hpp"
#include "pstnet/sim.hpp"

namespace pstnet {

inline constexpr const char* kApiVersion = "1.0.0";
inline constexpr int kFrameSchema = 1;

struct ServiceConfig {
    std::vector<double> level_altitudes_m{500.0, 1000.0, 2000.0, 4000.0, 6000.0, 9000.0, 12000.0, 16000.0};
    WeatherQuery query_template;  // time window and parameters for point fetches
    double default_resolution_deg = 2.0;
    double min_live_resolution_deg = 0.5;
    std::size_t max_live_cells = 64;  // live grids cost one POWER request per cell
    double grid_cache_ttl_s = 6.0 * 3600.0;
    std::size_t trajectory_workers = 4;
    SimConfig sim;
};

/// Immutable model set served at one time; replaced whole on hot swap.
struct ModelBundle {
    std::shared_ptr<const PSTNetModel> pstnet;
    std::string checksum;  // crc32 of the serialized PSTNet file, hex
    std::map<std::string, TkeEstimator> extra;  // additional estimators by name

    static std::shared_ptr<const ModelBundle> make(PSTNetModel m, std::map<std::string, TkeEstimator> extra = {}) {
        auto b = std::make_shared<ModelBundle>();
        char hex[9];
        // The file ends with the CRC of everything before it; hashing the whole
        // file would give the same residue for every model.
        const auto bytes = encode_model(m);
        std::snprintf(hex, sizeof hex, "%08x", crc32_of(std::span(bytes).first(bytes.size() - 4)));
        b->checksum = hex;
        b->pstnet = std::make_shared<const PSTNetModel>(std::move(m));
        b->extra = std::move(extra);
        return b;
    }

    std::optional<TkeEstimator> estimator(const std::string& name) const {
        if (name == "pstnet") {
            auto m = pstnet;
            auto L = m->layout();
            return [m, L](const AtmosphericState& s) { return predict(*m, L, s); };
        }
        if (name == "dryden") return TkeEstimator(DrydenEstimator{});
        if (auto it = extra.find(name); it != extra.end()) return it->second;
        return std::nullopt;
    }

    std::vector<std::string> estimator_names() const {
        std::vector<std::string> n{"pstnet", "dryden"};
        for (const auto& [k, v] : extra) n.push_back(k);
        return n;
    }
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

/// Trajectory result: either an error response, or the NDJSON frames to stream.
struct TrajectoryResponse {
    std::optional<ApiResponse> error;
    std::vector<std::string> frames;
};

class Service {
public:
    Service(ServiceConfig cfg, std::shared_ptr<const ModelBundle> models, std::shared_ptr<PowerClient> ingest)
        : cfg_(std::move(cfg)), models_(std::move(models)), ingest_(std::move(ingest)),
          slots_(static_cast<std::ptrdiff_t>(std::clamp<std::size_t>(cfg_.trajectory_workers, 1, 64))) {
        if (cfg_.level_altitudes_m.empty()) throw DomainError("service: no flight levels configured");
    }

    std::shared_ptr<const ModelBundle> models() const {
        std::lock_guard lk(models_mu_);
        return models_;
    }

    /// Atomic replacement; in-flight requests keep the bundle they started with.
    void swap_models(std::shared_ptr<const ModelBundle> next) {
        std::lock_guard lk(models_mu_);
        models_ = std::move(next);
    }

    const ServiceConfig& config() const { return cfg_; }

    ApiResponse health() const {
        const auto m = models();
        auto body = envelope(*m);
        body["status"] = "ok";
        body["offline"] = ingest_->offline();
        body["levels_m"] = cfg_.level_altitudes_m;
        body["estimators"] = m->estimator_names();
        body["params"] = param_audit(*m->pstnet).total;
        return {200, body};
    }

    ApiResponse estimate(const std::optional<std::string>& lat_s, const std::optional<std::string>& lon_s,
                         const std::optional<std::string>& level_s) const {
        const auto m = models();
        double lat = 0.0, lon = 0.0;
        std::size_t level = 0;
        if (auto e = parse_coord(lat_s, "lat", -90.0, 90.0, lat)) return bad_request(*m, *e);
        if (auto e = parse_coord(lon_s, "lon", -180.0, 180.0, lon)) return bad_request(*m, *e);
        if (auto e = parse_level(level_s, level)) return bad_request(*m, *e);
        WeatherQuery q = cfg_.query_template;
        q.latitude_deg = lat;
        q.longitude_deg = lon;
        WeatherResponse wr;
        try {
            wr = ingest_->fetch_point(q);
        } catch (const IngestError& e) {
            return ingest_failure(*m, e);
        }
        const double h = cfg_.level_altitudes_m[level];
        AtmosphericState state;
        try {
            state = to_state_column(wr, std::span<const double>(&h, 1)).front();
        } catch (const IngestError& e) {
            return ingest_failure(*m, e);
        } catch (const DomainError& e) {
            return {502, error_body(*m, "column", e.what())};
        }
        const auto [k, diag] = forward(*m->pstnet, state);
        auto body = envelope(*m);
        body["lat"] = lat;
        body["lon"] = lon;
        body["level"] = level;
        body["altitude_m"] = h;
        body["k"] = k;
        body["k_mo"] = diag.k_mo;
        body["alpha"] = diag.alpha;
        const auto regime = static_cast<std::size_t>(
            std::max_element(diag.alpha.begin(), diag.alpha.end()) - diag.alpha.begin());
        body["regime"] = std::string(kRegimeNames[regime]);
        body["regime_index"] = regime;
        body["source"] = source_name(wr.source);
        body["time"] = wr.times.empty() ? "" : wr.times.back();
        body["state"] = state_json(state);
        return {200, body};
    }

    ApiResponse grid(const std::optional<std::string>& level_s, const std::optional<std::string>& bbox_s,
                     const std::optional<std::string>& res_s) {
        const auto m = models();
        std::size_t level = 0;
        if (auto e = parse_level(level_s, level)) return bad_request(*m, *e);
        double res = cfg_.default_resolution_deg;
        if (res_s && !parse_double(*res_s, res)) return bad_request(*m, "res must be a number");
        if (!(res > 0.0) || res > 90.0) return bad_request(*m, "res must be in (0, 90] degrees");
        std::array<double, 4> bbox{-90.0, -180.0, 90.0, 180.0};  // south, west, north, east
        if (bbox_s && !bbox_s->empty() && *bbox_s != "global") {
            std::istringstream in(*bbox_s);
            std::string tok;
            std::size_t i = 0;
            for (; i < 4 && std::getline(in, tok, ','); ++i)
                if (!parse_double(tok, bbox[i])) return bad_request(*m, "bbox must be south,west,north,east");
            if (i != 4 || std::getline(in, tok, ',')) return bad_request(*m, "bbox must have four values");
            if (!(bbox[0] >= -90.0 && bbox[2] <= 90.0 && bbox[0] < bbox[2] && bbox[1] >= -180.0 &&
                  bbox[3] <= 180.0 && bbox[1] < bbox[3]))
                return bad_request(*m, "bbox out of range or empty");
        }
        const auto rows = static_cast<std::size_t>(std::max(1.0, std::floor((bbox[2] - bbox[0]) / res + 1e-9)));
        const auto cols = static_cast<std::size_t>(std::max(1.0, std::floor((bbox[3] - bbox[1]) / res + 1e-9)));
        if (!ingest_->offline()) {
            if (res < cfg_.min_live_resolution_deg)
                return bad_request(*m, "resolution finer than the 0.5 degree native grid with live data");
            if (rows * cols > cfg_.max_live_cells)
                return bad_request(*m, "live grid exceeds " + std::to_string(cfg_.max_live_cells) + " cells");
        }

        std::ostringstream key;
        key.precision(17);
        key << m->checksum << '|' << level << '|' << bbox[0] << ',' << bbox[1] << ',' << bbox[2] << ',' << bbox[3]
            << '|' << res << '|' << cfg_.query_template.start << '-' << cfg_.query_template.end << '|'
            << ingest_->offline();
        const double now = wall_clock();
        {
            std::lock_guard lk(grid_mu_);
            if (auto it = grid_cache_.find(key.str()); it != grid_cache_.end() && now < it->second.expires) {
                auto body = it->second.body;
                body["cached"] = true;
                return {200, body};
            }
        }

        const double h = cfg_.level_altitudes_m[level];
        const auto L = m->pstnet->layout();
        std::vector<double> values(rows * cols);
        std::string time, source;
        for (std::size_t i = 0; i < rows; ++i) {
            for (std::size_t j = 0; j < cols; ++j) {
                WeatherQuery q = cfg_.query_template;
                q.latitude_deg = bbox[0] + (static_cast<double>(i) + 0.5) * res;
                q.longitude_deg = bbox[1] + (static_cast<double>(j) + 0.5) * res;
                try {
                    const auto wr = ingest_->fetch_point(q);
                    const auto st = to_state_column(wr, std::span<const double>(&h, 1)).front();
                    values[i * cols + j] = predict(*m->pstnet, L, st);
                    if (time.empty() && !wr.times.empty()) time = wr.times.back();
                    if (source.empty()) source = source_name(wr.source);
                } catch (const IngestError& e) {
                    return ingest_failure(*m, e);
                } catch (const DomainError& e) {
                    return {502, error_body(*m, "column", e.what())};
                }
            }
        }
        auto body = envelope(*m);
        body["level"] = level;
        body["altitude_m"] = h;
        body["resolution_deg"] = res;
        body["bbox"] = bbox;
        body["rows"] = rows;
        body["cols"] = cols;
        body["order"] = "row-major, row 0 southernmost, column 0 westernmost, cell centres";
        body["values"] = values;
        body["k_min"] = *std::min_element(values.begin(), values.end());
        body["k_max"] = *std::max_element(values.begin(), values.end());
        body["time"] = time;
        body["source"] = source;
        body["cached"] = false;
        {
            std::lock_guard lk(grid_mu_);
            grid_cache_[key.str()] = {body, now + cfg_.grid_cache_ttl_s};
        }
        return {200, body};
    }

    /// Runs one simulation and returns its frames: samples, then a summary or an error frame.
    TrajectoryResponse trajectory(std::string_view request_body) {
        const auto m = models();
        nlohmann::json req;
        try {
            req = nlohmann::json::parse(request_body);
        } catch (const nlohmann::json::parse_error&) {
            return {bad_request(*m, "body must be JSON"), {}};
        }
        if (!req.is_object()) return {bad_request(*m, "body must be a JSON object"), {}};
        const VehicleClass* veh = nullptr;
        char category = 'A';
        std::uint64_t seed = 1;
        std::string est_name = "pstnet";
        try {
            veh = &vehicle_preset(json_string(req, "vehicle", "supersonic"));
            const std::string cat = json_string(req, "category", "A");
            if (cat.size() != 1 || kCategories.find(cat[0]) == std::string_view::npos)
                return {bad_request(*m, "category must be one of A-F"), {}};
            category = cat[0];
            if (req.contains("seed")) {
                if (!req["seed"].is_number_unsigned()) return {bad_request(*m, "seed must be a non-negative integer"), {}};
                seed = req["seed"].get<std::uint64_t>();
            }
            est_name = json_string(req, "estimator", "pstnet");
        } catch (const DomainError& e) {
            return {bad_request(*m, e.what()), {}};
        }
        const auto est = m->estimator(est_name);
        if (!est) return {bad_request(*m, "unknown estimator '" + est_name + "'"), {}};

        if (!slots_.try_acquire()) return {ApiResponse{429, error_body(*m, "busy", "all trajectory workers are busy")}, {}};
        RunOutcome out;
        try {
            const Scenario scn = make_scenario(load_scenario_preset(category), seed);
            out = simulate(scn, *veh, *est, cfg_.sim, true);
        } catch (...) {
            slots_.release();
            throw;
        }
        slots_.release();

        TrajectoryResponse r;
        for (const auto& s : out.trace) {
            nlohmann::json f{{"type", "sample"},  {"schema", kFrameSchema},
                             {"t", s.t},          {"position", {s.position.x, s.position.y, s.position.z}},
                             {"gust", {s.gust.x, s.gust.y, s.gust.z}},
                             {"k_est", s.k_est},  {"k_true", s.k_true}};
            r.frames.push_back(f.dump());
        }
        nlohmann::json last = envelope(*m);
        last["schema"] = kFrameSchema;
        last["vehicle"] = veh->name;
        last["mach"] = veh->mach;
        last["category"] = std::string(1, category);
        last["seed"] = seed;
        last["estimator"] = est_name;
        if (out.aborted) {
            last["type"] = "error";
            last["diagnostic"] = out.diagnostic;
        } else {
            last["type"] = "summary";
            last["miss_m"] = out.miss_m;
            last["cep_m"] = cfg_.sim.cep_m;
            last["cep_pass"] = out.cep_pass;
            last["flight_time_s"] = out.flight_time_s;
        }
        r.frames.push_back(last.dump());
        return r;
    }

    nlohmann::json not_found() const { return error_body(*models(), "not_found", "no such endpoint"); }

private:
    struct GridEntry {
        nlohmann::json body;
        double expires = 0.0;
    };

    static double wall_clock() {
        return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
    }

    static nlohmann::json envelope(const ModelBundle& m) {
        return {{"version", kApiVersion}, {"model_checksum", m.checksum}};
    }

    static nlohmann::json error_body(const ModelBundle& m, const std::string& kind, const std::string& message) {
        auto b = envelope(m);
        b["error"] = {{"kind", kind}, {"message", message}};
        return b;
    }

    static ApiResponse bad_request(const ModelBundle& m, const std::string& message) {
        return {400, error_body(m, "bad_request", message)};
    }

    static ApiResponse ingest_failure(const ModelBundle& m, const IngestError& e) {
        if (e.kind() == IngestError::Kind::invalid_query) return bad_request(m, e.what());
        auto b = error_body(m, std::string("ingest_") + kind_name(e.kind()), e.what());
        b["error"]["detail"] = e.detail();
        if (e.retry_after_s() > 0.0) b["error"]["retry_after_s"] = e.retry_after_s();
        return {502, b};
    }

    static bool parse_double(const std::string& s, double& out) {
        const char* b = s.data();
        const char* e = s.data() + s.size();
        const auto [p, ec] = std::from_chars(b, e, out);
        return ec == std::errc() && p == e && std::isfinite(out);
    }

    static std::optional<std::string> parse_coord(const std::optional<std::string>& s, const char* name, double lo,
                                                  double hi, double& out) {
        if (!s) return std::string(name) + " is required";
        if (!parse_double(*s, out)) return std::string(name) + " must be a number";
        if (out < lo || out > hi) return std::string(name) + " out of range";
        return std::nullopt;
    }

    std::optional<std::string> parse_level(const std::optional<std::string>& s, std::size_t& out) const {
        const std::string max = std::to_string(cfg_.level_altitudes_m.size() - 1);
        if (!s) return "level is required";
        unsigned v = 0;
        const auto [p, ec] = std::from_chars(s->data(), s->data() + s->size(), v);
        if (ec != std::errc() || p != s->data() + s->size() || v >= cfg_.level_altitudes_m.size())
            return "level must be an integer in [0, " + max + "]";
        out = v;
        return std::nullopt;
    }

    static std::string json_string(const nlohmann::json& j, const char* key, const char* fallback) {
        if (!j.contains(key)) return fallback;
        if (j[key].is_string()) return j[key].get<std::string>();
        if (j[key].is_number()) {
            std::ostringstream o;
            o << j[key].get<double>();
            return o.str();
        }
        throw DomainError(std::string(key) + " must be a string");
    }

    static nlohmann::json state_json(const AtmosphericState& s) {
        return {{"altitude_m", s.altitude_m},       {"temperature_k", s.temperature_k},
                {"pressure_pa", s.pressure_pa},     {"wind10_mps", s.wind10_mps},
                {"lapse_k_per_m", s.lapse_k_per_m}, {"density_ratio", s.density_ratio},
                {"latitude_deg", s.latitude_deg}};
    }

    ServiceConfig cfg_;
    mutable std::mutex models_mu_;
    std::shared_ptr<const ModelBundle> models_;
    std::shared_ptr<PowerClient> ingest_;
    std::counting_semaphore<64> slots_;
    std::mutex grid_mu_;
    std::map<std::string, GridEntry> grid_cache_;
};

}  // namespace pstnet
