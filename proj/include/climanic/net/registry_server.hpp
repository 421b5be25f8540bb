#pragma once

// The registry over TCP. One thread accepts, one thread serves each
// connection; the Registry itself serializes mutations.

#include <atomic>
#include <cstdint>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include <nlohmann/json.hpp>

#include "climanic/net/tcp.hpp"
#include "climanic/registry/registry.hpp"

namespace climanic::net {

class RegistryServer {
 public:
  explicit RegistryServer(Registry& registry) : registry_(registry) {}
  ~RegistryServer() { stop(); }
  RegistryServer(const RegistryServer&) = delete;
  RegistryServer& operator=(const RegistryServer&) = delete;

  /// Binds and starts serving. Returns the bound port. BindFailure when the
  /// address is unusable.
  Result<std::uint16_t> start(const Endpoint& listen);
  void stop();
  std::uint16_t port() const noexcept { return port_; }

 private:
  struct Conn {
    Fd fd;
    std::thread worker;
    std::atomic<bool> done{false};
  };

  void accept_loop();
  void serve(Conn& c);
  void reap(bool all);

  Registry& registry_;
  Fd listener_;
  Waker waker_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::mutex mu_;
  std::list<std::unique_ptr<Conn>> conns_;
};

/// Blocking request/response client, one outstanding request at a time.
class RegistryClient {
 public:
  static Result<RegistryClient> connect(const Endpoint& ep, Millis timeout_ms = 2000);

  /// Sends a request (req_id filled in when absent) and waits for the answer.
  Result<nlohmann::json> call(nlohmann::json request, Millis timeout_ms = 5000);

 private:
  explicit RegistryClient(Fd fd) : fd_(std::move(fd)) {}
  Fd fd_;
  FrameDecoder dec_;
  std::uint64_t next_id_ = 0;
};

}  // namespace climanic::net
