#pragma once

// Local HTTP endpoint for the browser UI.
//
//   GET  /state    current session view (JSON)
//   GET  /events   text/event-stream; first a "state" event with the full
//                  view, then every state change, note, log record and
//                  script result. Resumes after Last-Event-ID when given.
//   POST /command  {"op":"play"} etc.; answers {"ok":true,"result":{...}}
//                  or {"ok":false,"error":{"code","message"}}
//
// Every body is canonical JSON.

#include <atomic>
#include <cstdint>
#include <memory>
#include <thread>

#include "climanic/net/live.hpp"
#include "climanic/net/tcp.hpp"

namespace httplib {
class Server;
}

namespace climanic::net {

class Gateway {
 public:
  explicit Gateway(LiveHost& host);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// BindFailure when the endpoint is unusable. Port 0 picks one.
  Result<std::uint16_t> start(const Endpoint& ep);
  void stop();

 private:
  LiveHost& host_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
};

/// HTTP status for a command error code.
int http_status(Errc code);

}  // namespace climanic::net
