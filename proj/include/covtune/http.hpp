#pragma once

#include "service.hpp"

#include <httplib.h>

#include <string>

/**
 * @file http.hpp
 *
 * @brief cpp-httplib binding for `Service`.
 */

namespace covtune {

inline HttpRequest to_request(const httplib::Request& req) {
    HttpRequest out;
    out.method = req.method;
    out.path = req.path;
    for (const auto& [k, v] : req.params) out.query[k] = v;
    out.body = req.body;
    return out;
}

/// Routes every /api request of `server` to `service`.
inline void mount(httplib::Server& server, Service& service) {
    const auto handler = [&service](const httplib::Request& req, httplib::Response& res) {
        const auto out = service.handle(to_request(req));
        res.status = out.status;
        res.set_content(out.body, out.content_type);
    };
    const std::string pattern = R"(/api(/.*)?)";
    server.Get(pattern, handler);
    server.Post(pattern, handler);
    server.Put(pattern, handler);
    server.Patch(pattern, handler);
    server.Delete(pattern, handler);
}

} // namespace covtune
