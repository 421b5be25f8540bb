#include "climanic/net/tcp.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace climanic::net {

namespace {

std::string sys_error(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

Result<addrinfo*> resolve(const Endpoint& ep, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto port = std::to_string(ep.port);
  const char* host = ep.host.empty() ? nullptr : ep.host.c_str();
  if (int rc = ::getaddrinfo(host, port.c_str(), &hints, &res); rc != 0) {
    return make_error(Errc::invalid_argument, "cannot resolve " + ep.str() + ": " + ::gai_strerror(rc));
  }
  return res;
}

std::int64_t steady_ms() {
  using namespace std::chrono;
  return duration_cast<milliseconds>(steady_clock::now().time_since_epoch()).count();
}

}  // namespace

void Fd::reset() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

Result<Endpoint> parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon + 1 == text.size()) {
    return make_error(Errc::invalid_argument, "expected host:port, got '" + std::string(text) + "'");
  }
  unsigned port = 0;
  const auto digits = text.substr(colon + 1);
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
  if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535) {
    return make_error(Errc::invalid_argument, "bad port in '" + std::string(text) + "'");
  }
  Endpoint ep{std::string(text.substr(0, colon)), static_cast<std::uint16_t>(port)};
  if (ep.host.empty()) ep.host = "127.0.0.1";
  return ep;
}

Result<Fd> listen_on(const Endpoint& ep) {
  auto res = resolve(ep, true);
  if (!res) return make_error(Errc::bind_failure, res.error().message);
  addrinfo* ai = *res;
  Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
  if (!fd.valid()) {
    ::freeaddrinfo(ai);
    return make_error(Errc::bind_failure, sys_error("socket"));
  }
  int one = 1;
  ::setsockopt(fd.get(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  const int rc = ::bind(fd.get(), ai->ai_addr, ai->ai_addrlen);
  ::freeaddrinfo(ai);
  if (rc != 0) return make_error(Errc::bind_failure, sys_error(("bind " + ep.str()).c_str()));
  if (::listen(fd.get(), 64) != 0) return make_error(Errc::bind_failure, sys_error("listen"));
  return fd;
}

std::uint16_t bound_port(int fd) {
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  if (::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) return 0;
  return ntohs(addr.sin_port);
}

Result<Fd> connect_to(const Endpoint& ep, Millis timeout_ms) {
  auto res = resolve(ep, false);
  if (!res) return make_error(Errc::io_error, res.error().message);
  addrinfo* ai = *res;
  Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol));
  if (!fd.valid()) {
    ::freeaddrinfo(ai);
    return make_error(Errc::io_error, sys_error("socket"));
  }
  set_nonblocking(fd.get());
  int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
  ::freeaddrinfo(ai);
  if (rc != 0 && errno != EINPROGRESS) return make_error(Errc::io_error, sys_error(("connect " + ep.str()).c_str()));
  if (rc != 0) {
    pollfd p{fd.get(), POLLOUT, 0};
    rc = ::poll(&p, 1, static_cast<int>(timeout_ms));
    if (rc <= 0) return make_error(Errc::io_error, "connect " + ep.str() + ": timed out");
    int err = 0;
    socklen_t len = sizeof err;
    ::getsockopt(fd.get(), SOL_SOCKET, SO_ERROR, &err, &len);
    if (err != 0) return make_error(Errc::io_error, "connect " + ep.str() + ": " + std::strerror(err));
  }
  const int flags = ::fcntl(fd.get(), F_GETFL);
  ::fcntl(fd.get(), F_SETFL, flags & ~O_NONBLOCK);
  set_nodelay(fd.get());
  return fd;
}

Result<Fd> start_connect(const Endpoint& ep) {
  auto res = resolve(ep, false);
  if (!res) return make_error(Errc::io_error, res.error().message);
  addrinfo* ai = *res;
  Fd fd(::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, ai->ai_protocol));
  if (!fd.valid()) {
    ::freeaddrinfo(ai);
    return make_error(Errc::io_error, sys_error("socket"));
  }
  const int rc = ::connect(fd.get(), ai->ai_addr, ai->ai_addrlen);
  ::freeaddrinfo(ai);
  if (rc != 0 && errno != EINPROGRESS) return make_error(Errc::io_error, sys_error(("connect " + ep.str()).c_str()));
  set_nodelay(fd.get());
  return fd;
}

bool connect_finished(int fd) {
  int err = 0;
  socklen_t len = sizeof err;
  if (::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) != 0) return false;
  return err == 0;
}

void set_nonblocking(int fd) {
  const int flags = ::fcntl(fd, F_GETFL);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Result<void> write_frame(int fd, std::string_view body) {
  if (body.size() > kMaxFrameBytes) return make_error(Errc::message_too_large, "frame exceeds 1 MiB");
  const std::string bytes = frame(body);
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n > 0) {
      off += static_cast<std::size_t>(n);
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) {
      pollfd p{fd, POLLOUT, 0};
      ::poll(&p, 1, 1000);
      continue;
    }
    return make_error(Errc::io_error, sys_error("send"));
  }
  return {};
}

Result<std::string> read_frame(int fd, FrameDecoder& dec, std::optional<Millis> timeout_ms) {
  const auto deadline = steady_ms() + static_cast<std::int64_t>(timeout_ms.value_or(0));
  char buf[16384];
  for (;;) {
    if (auto f = dec.next()) return std::move(*f);
    int wait = -1;
    if (timeout_ms) {
      const auto left = deadline - steady_ms();
      if (left <= 0) return make_error(Errc::io_error, "read timed out");
      wait = static_cast<int>(left);
    }
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, wait);
    if (rc < 0 && errno == EINTR) continue;
    if (rc < 0) return make_error(Errc::io_error, sys_error("poll"));
    if (rc == 0) continue;
    const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
    if (n == 0) return make_error(Errc::io_error, "connection closed");
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      return make_error(Errc::io_error, sys_error("recv"));
    }
    if (auto r = dec.feed(std::string_view(buf, static_cast<std::size_t>(n))); !r) return r.error();
  }
}

bool pump(int fd, FrameDecoder& dec) {
  char buf[16384];
  for (;;) {
    const ssize_t n = ::recv(fd, buf, sizeof buf, MSG_DONTWAIT);
    if (n == 0) return false;
    if (n < 0) {
      if (errno == EINTR) continue;
      return errno == EAGAIN || errno == EWOULDBLOCK;
    }
    if (!dec.feed(std::string_view(buf, static_cast<std::size_t>(n)))) return false;
  }
}

Waker::Waker() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC | O_NONBLOCK) != 0) throw std::runtime_error(sys_error("pipe"));
  read_ = Fd(fds[0]);
  write_ = Fd(fds[1]);
}

void Waker::notify() {
  const char c = 1;
  [[maybe_unused]] auto n = ::write(write_.get(), &c, 1);
}

void Waker::drain() {
  char buf[64];
  while (::read(read_.get(), buf, sizeof buf) > 0) {
  }
}

}  // namespace climanic::net
