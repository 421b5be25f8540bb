#include "climanic/net/gateway.hpp"

#include <httplib.h>

#include <string>

namespace climanic::net {

using nlohmann::json;

namespace {

std::string sse(const json& ev) {
  return "id: " + std::to_string(ev.at("id").get<std::uint64_t>()) + "\nevent: " + ev.at("kind").get<std::string>() +
         "\ndata: " + ev.at("data").dump() + "\n\n";
}

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

}  // namespace

int http_status(Errc code) {
  switch (code) {
    case Errc::invalid_argument:
    case Errc::protocol_error:
    case Errc::out_of_bounds:
    case Errc::message_too_large: return 400;
    case Errc::unknown_target:
    case Errc::unknown_requester: return 404;
    case Errc::io_error: return 503;
    default: return 409;
  }
}

Gateway::Gateway(LiveHost& host) : host_(host), server_(std::make_unique<httplib::Server>()) {}

Gateway::~Gateway() { stop(); }

Result<std::uint16_t> Gateway::start(const Endpoint& ep) {
  auto& svr = *server_;
  svr.Get("/state", [this](const httplib::Request&, httplib::Response& res) { reply(res, 200, host_.state()); });

  svr.Post("/command", [this](const httplib::Request& req, httplib::Response& res) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::exception& e) {
      reply(res, 400, json{{"ok", false}, {"error", {{"code", "invalid_argument"}, {"message", e.what()}}}});
      return;
    }
    auto cmd = parse_command(body);
    auto r = cmd ? host_.command(*cmd) : Result<json>(cmd.error());
    if (!r) {
      reply(res, http_status(r.code()),
            json{{"ok", false}, {"error", {{"code", to_string(r.code())}, {"message", r.error().message}}}});
      return;
    }
    reply(res, 200, json{{"ok", true}, {"result", *r}});
  });

  svr.Get("/events", [this](const httplib::Request& req, httplib::Response& res) {
    std::uint64_t after = 0;
    bool resumed = false;
    if (req.has_header("Last-Event-ID")) {
      try {
        after = std::stoull(req.get_header_value("Last-Event-ID"));
        resumed = true;
      } catch (const std::exception&) {
      }
    }
    res.set_header("Cache-Control", "no-cache");
    res.set_chunked_content_provider("text/event-stream", [this, after, resumed](std::size_t, httplib::DataSink& sink) mutable {
      if (!resumed) {
        // A fresh attach starts from the full view, tagged with the latest id.
        resumed = true;
        after = host_.last_event_id();
        std::string first = sse(json{{"id", after}, {"kind", "state"}, {"data", host_.state()}});
        return sink.write(first.data(), first.size());
      }
      if (stopping_) {
        sink.done();
        return true;
      }
      auto events = host_.events_since(after, 1000);
      if (events.empty()) {
        static const std::string keepalive = ": keepalive\n\n";
        return sink.write(keepalive.data(), keepalive.size());
      }
      std::string out;
      for (const auto& ev : events) {
        out += sse(ev);
        after = ev.at("id").get<std::uint64_t>();
      }
      return sink.write(out.data(), out.size());
    });
  });

  int port = ep.port;
  if (ep.port == 0) {
    port = svr.bind_to_any_port(ep.host);
    if (port <= 0) return make_error(Errc::bind_failure, "cannot bind UI gateway on " + ep.str());
  } else if (!svr.bind_to_port(ep.host, ep.port)) {
    return make_error(Errc::bind_failure, "cannot bind UI gateway on " + ep.str());
  }
  stopping_ = false;
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  return static_cast<std::uint16_t>(port);
}

void Gateway::stop() {
  if (!thread_.joinable()) return;
  stopping_ = true;
  server_->stop();
  thread_.join();
}

}  // namespace climanic::net
