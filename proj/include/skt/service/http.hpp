#pragma once

#include <memory>
#include <string>

#include "httplib.h"
#include "json.hpp"
#include "skt/service/chat.hpp"

namespace skt::service {

namespace detail {

inline void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

inline void send_error(httplib::Response& res, int status, const std::string& error, const std::string& detail) {
  send_json(res, status, {{"error", error}, {"detail", detail}});
}

inline nlohmann::json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty()) {
    if (allow_empty) return nlohmann::json::object();
    throw invalid_input("request body is empty");
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(req.body);
  } catch (const nlohmann::json::exception& e) {
    throw invalid_input(std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw invalid_input("request body must be a JSON object");
  return j;
}

// Runs a handler, mapping exceptions to JSON errors.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status, e.code, e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, 400, "invalid_input", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace detail

// Routes:
//   POST   /sessions                {topic?, pool?: [str]} -> 201 {id, topic, pool}
//   POST   /sessions/{id}/messages  {text}                 -> 200 MessageResult
//   GET    /sessions/{id}                                  -> 200 transcript
//   DELETE /sessions/{id}                                  -> 204
inline std::unique_ptr<httplib::Server> make_server(ChatEngine& engine) {
  using detail::guarded;
  auto srv = std::make_unique<httplib::Server>();
  srv->set_default_headers({{"Access-Control-Allow-Origin", "*"},
                            {"Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS"},
                            {"Access-Control-Allow-Headers", "Content-Type"}});
  srv->Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  srv->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    detail::send_json(res, 200, {{"status", "ok"}});
  });

  srv->Post("/sessions", guarded([&engine](const httplib::Request& req, httplib::Response& res) {
              const auto body = detail::parse_body(req, true);
              std::optional<std::string> topic;
              std::optional<std::vector<std::string>> pool;
              if (body.contains("topic") && !body["topic"].is_null()) topic = body["topic"].get<std::string>();
              if (body.contains("pool") && !body["pool"].is_null()) {
                pool = body["pool"].get<std::vector<std::string>>();
              }
              detail::send_json(res, 201, engine.create_session(topic, pool).to_json());
            }));

  srv->Post(R"(/sessions/([0-9a-f]+)/messages)",
            guarded([&engine](const httplib::Request& req, httplib::Response& res) {
              const auto body = detail::parse_body(req, false);
              if (!body.contains("text") || !body["text"].is_string()) {
                throw invalid_input("field 'text' must be a string");
              }
              const auto r = engine.post_message(req.matches[1], body["text"].get<std::string>());
              detail::send_json(res, 200, r.to_json());
            }));

  srv->Get(R"(/sessions/([0-9a-f]+))", guarded([&engine](const httplib::Request& req, httplib::Response& res) {
             detail::send_json(res, 200, engine.get_transcript(req.matches[1]).to_json());
           }));

  srv->Delete(R"(/sessions/([0-9a-f]+))", guarded([&engine](const httplib::Request& req, httplib::Response& res) {
                engine.delete_session(req.matches[1]);
                res.status = 204;
              }));

  srv->set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) {
      detail::send_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
    }
  });
  return srv;
}

}  // namespace skt::service
