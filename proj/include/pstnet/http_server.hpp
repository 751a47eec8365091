#pragma once

// Binds Service handlers to a cpp-httplib server.
//   GET  /api/health
//   GET  /api/estimate?lat=&lon=&level=
//   GET  /api/grid?level=&bbox=south,west,north,east&res=
//   POST /api/trajectory      (JSON body; NDJSON response, one frame per line)

#include <httplib.h>

#include "pstnet/service.hpp"

namespace pstnet {

inline void mount_api(httplib::Server& server, Service& service) {
    auto param = [](const httplib::Request& req, const char* name) -> std::optional<std::string> {
        if (!req.has_param(name)) return std::nullopt;
        return req.get_param_value(name);
    };
    auto reply = [](httplib::Response& res, const ApiResponse& r) {
        res.status = r.status;
        res.set_content(r.body.dump(), "application/json");
    };
    auto guarded = [&service, reply](auto&& fn) {
        return [&service, reply, fn](const httplib::Request& req, httplib::Response& res) {
            try {
                fn(req, res);
            } catch (const std::exception& e) {
                reply(res, {500, nlohmann::json{{"version", kApiVersion},
                                                {"model_checksum", service.models()->checksum},
                                                {"error", {{"kind", "internal"}, {"message", e.what()}}}}});
            }
        };
    };

    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
    server.Get("/api/health", guarded([&service, reply](const httplib::Request&, httplib::Response& res) {
                   reply(res, service.health());
               }));
    server.Get("/api/estimate", guarded([&service, reply, param](const httplib::Request& req, httplib::Response& res) {
                   reply(res, service.estimate(param(req, "lat"), param(req, "lon"), param(req, "level")));
               }));
    server.Get("/api/grid", guarded([&service, reply, param](const httplib::Request& req, httplib::Response& res) {
                   reply(res, service.grid(param(req, "level"), param(req, "bbox"), param(req, "res")));
               }));
    server.Post("/api/trajectory", guarded([&service, reply](const httplib::Request& req, httplib::Response& res) {
                    auto r = service.trajectory(req.body);
                    if (r.error) return reply(res, *r.error);
                    auto frames = std::make_shared<std::vector<std::string>>(std::move(r.frames));
                    res.set_chunked_content_provider(
                        "application/x-ndjson", [frames, i = std::size_t{0}](std::size_t, httplib::DataSink& sink) mutable {
                            if (i < frames->size()) {
                                const std::string line = (*frames)[i++] + "\n";
                                return sink.write(line.data(), line.size());
                            }
                            sink.done();
                            return true;
                        });
                }));
    server.set_error_handler([&service](const httplib::Request&, httplib::Response& res) {
        if (res.status == 404) res.set_content(service.not_found().dump(), "application/json");
    });
}

}  // namespace pstnet
