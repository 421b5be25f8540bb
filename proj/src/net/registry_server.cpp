#include "climanic/net/registry_server.hpp"

#include <poll.h>
#include <sys/socket.h>

#include "climanic/registry/protocol.hpp"

namespace climanic::net {

using nlohmann::json;

Result<std::uint16_t> RegistryServer::start(const Endpoint& listen) {
  auto fd = listen_on(listen);
  if (!fd) return fd.error();
  listener_ = std::move(*fd);
  port_ = bound_port(listener_.get());
  stopping_ = false;
  acceptor_ = std::thread([this] { accept_loop(); });
  return port_;
}

void RegistryServer::stop() {
  if (!acceptor_.joinable()) return;
  stopping_ = true;
  waker_.notify();
  acceptor_.join();
  {
    std::lock_guard lock(mu_);
    for (auto& c : conns_) ::shutdown(c->fd.get(), SHUT_RDWR);
  }
  reap(true);
  listener_.reset();
}

void RegistryServer::accept_loop() {
  while (!stopping_) {
    pollfd fds[2] = {{listener_.get(), POLLIN, 0}, {waker_.fd(), POLLIN, 0}};
    if (::poll(fds, 2, 1000) <= 0) {
      reap(false);
      continue;
    }
    if (fds[1].revents) waker_.drain();
    if (stopping_) break;
    if (!(fds[0].revents & POLLIN)) continue;
    Fd client(::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC));
    if (!client.valid()) continue;
    set_nodelay(client.get());
    std::lock_guard lock(mu_);
    auto& c = conns_.emplace_back(std::make_unique<Conn>());
    c->fd = std::move(client);
    Conn* raw = c.get();
    c->worker = std::thread([this, raw] { serve(*raw); });
  }
}

void RegistryServer::serve(Conn& c) {
  FrameDecoder dec;
  for (;;) {
    auto body = read_frame(c.fd.get(), dec, std::nullopt);
    if (!body) break;
    json response;
    try {
      response = registry_proto::handle(registry_, json::parse(*body));
    } catch (const json::exception& e) {
      response = json{{"ok", false}, {"req_id", 0}, {"type", ""},
                      {"error", {{"code", "protocol_error"}, {"message", e.what()}}}};
    }
    if (!write_frame(c.fd.get(), response.dump())) break;
  }
  c.done = true;
}

void RegistryServer::reap(bool all) {
  std::list<std::unique_ptr<Conn>> finished;
  {
    std::lock_guard lock(mu_);
    for (auto it = conns_.begin(); it != conns_.end();) {
      if (all || (*it)->done) {
        finished.push_back(std::move(*it));
        it = conns_.erase(it);
      } else {
        ++it;
      }
    }
  }
  for (auto& c : finished) {
    if (c->worker.joinable()) c->worker.join();
  }
}

Result<RegistryClient> RegistryClient::connect(const Endpoint& ep, Millis timeout_ms) {
  auto fd = connect_to(ep, timeout_ms);
  if (!fd) return fd.error();
  return RegistryClient(std::move(*fd));
}

Result<json> RegistryClient::call(json request, Millis timeout_ms) {
  if (!request.contains("req_id")) request["req_id"] = ++next_id_;
  if (auto w = write_frame(fd_.get(), request.dump()); !w) return w.error();
  auto body = read_frame(fd_.get(), dec_, timeout_ms);
  if (!body) return body.error();
  try {
    return json::parse(*body);
  } catch (const json::exception& e) {
    return make_error(Errc::protocol_error, e.what());
  }
}

}  // namespace climanic::net
