#pragma once

// Thin POSIX socket helpers for the live transport. Every stream carries
// length-prefixed frames (see wire.hpp).

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "climanic/result.hpp"
#include "climanic/types.hpp"
#include "climanic/wire.hpp"

namespace climanic::net {

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
  std::string str() const { return host + ":" + std::to_string(port); }
};

/// "host:port". InvalidArgument otherwise.
Result<Endpoint> parse_endpoint(std::string_view text);

/// Owning file descriptor.
class Fd {
 public:
  Fd() = default;
  explicit Fd(int fd) : fd_(fd) {}
  ~Fd() { reset(); }
  Fd(Fd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Fd& operator=(Fd&& o) noexcept {
    if (this != &o) {
      reset();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Fd(const Fd&) = delete;
  Fd& operator=(const Fd&) = delete;

  int get() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  void reset();

 private:
  int fd_ = -1;
};

/// Listening socket. BindFailure when the address is taken or unusable.
/// Port 0 picks a free port; bound_port() reports it.
Result<Fd> listen_on(const Endpoint& ep);
std::uint16_t bound_port(int fd);

/// Blocking connect bounded by `timeout_ms`. IoError on failure.
Result<Fd> connect_to(const Endpoint& ep, Millis timeout_ms);

/// Starts a non-blocking connect; poll for POLLOUT, then connect_finished().
Result<Fd> start_connect(const Endpoint& ep);
bool connect_finished(int fd);

void set_nonblocking(int fd);
void set_nodelay(int fd);

/// Writes a whole frame, blocking until done. IoError when the peer is gone.
Result<void> write_frame(int fd, std::string_view body);

/// Reads until one full frame is available or `timeout_ms` passes (nullopt
/// waits forever). IoError on EOF or timeout, ProtocolError on an oversized
/// frame.
Result<std::string> read_frame(int fd, FrameDecoder& dec, std::optional<Millis> timeout_ms);

/// Drains whatever is readable right now into `dec`. False once the stream
/// is closed or broken.
bool pump(int fd, FrameDecoder& dec);

/// A pipe whose read end becomes readable when notify() is called; wakes a
/// poll() loop from another thread.
class Waker {
 public:
  Waker();
  int fd() const noexcept { return read_.get(); }
  void notify();
  void drain();

 private:
  Fd read_;
  Fd write_;
};

}  // namespace climanic::net
