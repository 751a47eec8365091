#pragma once

// HTTPS transport for the POWER client (cpp-httplib over OpenSSL).

#include <httplib.h>

#include "pstnet/ingest.hpp"

namespace pstnet {

class HttpsTransport : public Transport {
public:
    HttpResult get(const std::string& host, const std::string& path_and_query) override {
        httplib::SSLClient cli(host, 443);
        cli.set_connection_timeout(10, 0);
        cli.set_read_timeout(60, 0);
        cli.set_follow_location(true);
        auto res = cli.Get(path_and_query);
        HttpResult out;
        if (!res) {
            out.error = httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        if (res->has_header("Retry-After")) {
            try {
                out.retry_after_s = std::stod(res->get_header_value("Retry-After"));
            } catch (const std::exception&) {
                out.retry_after_s = 0.0;  // HTTP-date form: fall back to the client's backoff
            }
        }
        return out;
    }
};

}  // namespace pstnet
