#include "climanic/net/live.hpp"

#include <poll.h>
#include <sys/socket.h>

#include <algorithm>
#include <chrono>
#include <fstream>

#include "climanic/codec.hpp"
#include "climanic/registry/protocol.hpp"
#include "climanic/wire.hpp"

namespace climanic::net {

using nlohmann::json;

namespace {

constexpr std::size_t kMaxEvents = 512;
/// An outbound queue this large means the receiver stopped reading.
constexpr std::size_t kMaxQueuedBytes = 8u << 20;

const char* note_name(PeerNote::Kind k) {
  switch (k) {
    case PeerNote::Kind::phase: return "phase";
    case PeerNote::Kind::applied: return "applied";
    case PeerNote::Kind::became_leader: return "became_leader";
    case PeerNote::Kind::adopted: return "adopted";
    case PeerNote::Kind::request_pending: return "request_pending";
    case PeerNote::Kind::request_closed: return "request_closed";
    case PeerNote::Kind::outcome: return "outcome";
    case PeerNote::Kind::roster: return "roster";
    case PeerNote::Kind::chat: return "chat";
    case PeerNote::Kind::failed: return "failed";
    case PeerNote::Kind::evicted: return "evicted";
  }
  return "unknown";
}

json note_json(const PeerNote& n) {
  json j{{"note", note_name(n.kind)}};
  switch (n.kind) {
    case PeerNote::Kind::phase: j["phase"] = to_string(n.phase); break;
    case PeerNote::Kind::became_leader:
    case PeerNote::Kind::adopted:
      j["epoch"] = n.epoch.value;
      j["leader"] = n.participant;
      break;
    case PeerNote::Kind::request_pending:
    case PeerNote::Kind::request_closed: j["participant"] = n.participant; break;
    case PeerNote::Kind::outcome:
      j["request_id"] = n.request_id;
      j["outcome"] = to_string(n.outcome);
      break;
    case PeerNote::Kind::failed:
      j["code"] = to_string(n.code);
      j["message"] = n.message;
      break;
    default: break;
  }
  return j;
}

json error_json(const Error& e) { return json{{"code", to_string(e.code)}, {"message", e.message}}; }

}  // namespace

Millis wall_ms() {
  using namespace std::chrono;
  return static_cast<Millis>(duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count());
}

json session_view(const PeerEngine& e) {
  json roster = json::array();
  for (const auto& r : e.roster()) {
    roster.push_back(json{{"participant", r.participant}, {"join_seq", r.join_seq.value}, {"address", r.address}});
  }
  json chat = json::array();
  for (const auto& c : e.transcript()) {
    chat.push_back(json{{"chat_seq", c.chat_seq}, {"origin", c.origin}, {"text", c.text}});
  }
  json pending = json::array();
  for (const auto& p : e.pending_requests()) pending.push_back(p);
  json v{{"self", e.self()},
         {"phase", to_string(e.phase())},
         {"epoch", e.epoch().value},
         {"leader", e.leader()},
         {"join_seq", e.join_seq().value},
         {"state", e.state()},
         {"anchor", e.anchor()},
         {"slide_count", e.manifest().slide_count},
         {"roster", std::move(roster)},
         {"pending_requests", std::move(pending)},
         {"chat", std::move(chat)}};
  if (e.group() != GroupId{}) v["group_id"] = e.group();
  if (auto r = e.outstanding_request()) v["own_request"] = *r;
  if (auto d = e.departure_reason()) v["departure"] = to_string(*d);
  return v;
}

Result<HeadlessScript> parse_headless_script(const json& j) {
  HeadlessScript s;
  const json* steps = &j;
  if (j.is_object()) {
    if (!j.contains("script") || !j.at("script").is_array()) {
      return make_error(Errc::invalid_argument, "script file needs a 'script' array");
    }
    steps = &j.at("script");
    if (j.contains("duration_ms")) {
      if (!j.at("duration_ms").is_number_integer() || j.at("duration_ms").get<std::int64_t>() < 0) {
        return make_error(Errc::invalid_argument, "duration_ms must be a non-negative number");
      }
      s.duration_ms = j.at("duration_ms").get<Millis>();
    }
  } else if (!j.is_array()) {
    return make_error(Errc::invalid_argument, "script must be an object or an array of steps");
  }
  for (const auto& st : *steps) {
    auto step = parse_script_step(st);
    if (!step) return step.error();
    if (!is_command_op(step->op)) return make_error(Errc::invalid_argument, "unknown script op '" + step->op + "'");
    if (needs_peer_target(step->op) && step->target_peer.empty()) {
      return make_error(Errc::invalid_argument, step->op + " needs a target peer");
    }
    s.duration_ms = std::max(s.duration_ms, step->at_ms);
    s.steps.push_back(std::move(*step));
  }
  std::stable_sort(s.steps.begin(), s.steps.end(),
                   [](const ScriptStep& a, const ScriptStep& b) { return a.at_ms < b.at_ms; });
  return s;
}

Result<HeadlessScript> load_headless_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::io_error, "cannot read " + path);
  try {
    return parse_headless_script(json::parse(in));
  } catch (const json::exception& e) {
    return make_error(Errc::invalid_argument, path + ": " + e.what());
  }
}

LiveHost::LiveHost(LiveOptions opts) : opts_(std::move(opts)) {}

Result<std::unique_ptr<LiveHost>> LiveHost::create(LiveOptions opts) {
  std::unique_ptr<LiveHost> h(new LiveHost(std::move(opts)));
  auto fd = listen_on(h->opts_.listen);
  if (!fd) return fd.error();
  h->listener_ = std::move(*fd);
  h->port_ = bound_port(h->listener_.get());
  if (h->opts_.peer.address.empty() || h->opts_.listen.port == 0) {
    h->opts_.peer.address = h->opts_.listen.host + ":" + std::to_string(h->port_);
  }
  if (!h->opts_.log_path.empty()) {
    auto w = LogWriter::open(h->opts_.log_path, LogWriter::Options{});
    if (!w) return w.error();
    h->log_ = std::move(*w);
  }
  h->engine_ = std::make_unique<PeerEngine>(h->opts_.peer, *h);
  h->view_ = session_view(*h->engine_);
  return h;
}

LiveHost::~LiveHost() { stop(); }

void LiveHost::start() {
  if (thread_.joinable()) return;
  stopping_ = false;
  thread_ = std::thread([this] { loop(); });
}

void LiveHost::stop() {
  if (!thread_.joinable()) return;
  stopping_ = true;
  waker_.notify();
  thread_.join();
  if (log_) (void)log_->flush();
  std::lock_guard lock(tasks_mu_);
  for (auto& t : incoming_) {
    if (t.done) t.done->set_value(make_error(Errc::io_error, "peer stopped"));
  }
  incoming_.clear();
}

std::future<Result<json>> LiveHost::post(Task task) {
  auto done = std::make_shared<std::promise<Result<json>>>();
  auto fut = done->get_future();
  {
    std::lock_guard lock(tasks_mu_);
    incoming_.push_back(Timed{0, std::move(task), std::move(done)});
  }
  waker_.notify();
  return fut;
}

Result<json> LiveHost::call(Task task, Millis timeout_ms) {
  if (!thread_.joinable() || stopping_) return make_error(Errc::io_error, "peer is not running");
  auto fut = post(std::move(task));
  if (fut.wait_for(std::chrono::milliseconds(timeout_ms)) != std::future_status::ready) {
    return make_error(Errc::io_error, "peer loop did not answer");
  }
  return fut.get();
}

Result<json> LiveHost::command(const UserCommand& c) {
  return call([c](PeerEngine& e, Millis now) { return run_command(e, c, now); });
}

void LiveHost::create_group(const std::string& course_id) {
  (void)post([course_id](PeerEngine& e, Millis now) -> Result<json> {
    e.create(course_id, now);
    return json::object();
  });
}

void LiveHost::join_group(const GroupId& g) {
  (void)post([g](PeerEngine& e, Millis now) -> Result<json> {
    e.join(g, now);
    return json::object();
  });
}

void LiveHost::run_script(const HeadlessScript& script) {
  const Millis start = wall_ms();
  const std::string self = opts_.peer.self.str();
  std::lock_guard lock(tasks_mu_);
  for (const auto& step : script.steps) {
    if (step.peer != self && step.peer != "@leader") continue;
    incoming_.push_back(Timed{start + step.at_ms, [this, step, self](PeerEngine& e, Millis now) -> Result<json> {
      if (step.peer == "@leader" && e.phase() != PeerPhase::leading) return json::object();
      UserCommand c{step.op, step.target, step.target_peer, step.text, step.flag};
      auto r = run_command(e, c, now);
      json rec{{"op", step.op}, {"ok", r.ok()}};
      if (r) rec.update(*r);
      if (!r) rec["error"] = error_json(r.error());
      publish("script", rec);
      return rec;
    }, nullptr});
  }
  waker_.notify();
}

json LiveHost::state() const {
  std::lock_guard lock(view_mu_);
  json v = view_;
  PlaybackState s = v.at("state").get<PlaybackState>();
  const Millis now = wall_ms();
  v["now"] = now;
  v["offset"] = effective_offset(s, v.at("anchor").get<Millis>(), now, opts_.peer.manifest);
  return v;
}

std::vector<json> LiveHost::events_since(std::uint64_t after, Millis wait_ms) const {
  std::unique_lock lock(view_mu_);
  view_cv_.wait_for(lock, std::chrono::milliseconds(wait_ms),
                    [&] { return next_event_id_ > after || stopping_; });
  std::vector<json> out;
  for (const auto& e : events_) {
    if (e.at("id").get<std::uint64_t>() > after) out.push_back(e);
  }
  return out;
}

std::uint64_t LiveHost::last_event_id() const {
  std::lock_guard lock(view_mu_);
  return next_event_id_;
}

void LiveHost::publish(const std::string& kind, json data) {
  {
    std::lock_guard lock(view_mu_);
    events_.push_back(json{{"id", ++next_event_id_}, {"kind", kind}, {"data", std::move(data)}});
    while (events_.size() > kMaxEvents) events_.pop_front();
  }
  view_cv_.notify_all();
}

void LiveHost::publish_state_if_changed() {
  if (!dirty_) return;
  dirty_ = false;
  json v = session_view(*engine_);
  {
    std::lock_guard lock(view_mu_);
    if (v == view_) return;
    view_ = v;
  }
  publish("state", std::move(v));
}

// PeerEnv

void LiveHost::send(const std::string& address, const SessionMessage& m) {
  auto it = outbound_.find(address);
  if (it == outbound_.end()) {
    const Millis now = wall_ms();
    if (auto f = failed_at_.find(address); f != failed_at_.end() && now < f->second + opts_.connect_timeout_ms) {
      return;
    }
    Conn c;
    if (!open_conn(c, address)) {
      failed_at_[address] = now;
      return;
    }
    it = outbound_.emplace(address, std::move(c)).first;
  }
  queue_frame(it->second, encode_message(m));
  if (!it->second.connecting && !flush(it->second)) {
    failed_at_[address] = wall_ms();
    outbound_.erase(it);
  }
}

void LiveHost::disconnect(const std::string& address) {
  outbound_.erase(address);
  failed_at_.erase(address);
}

void LiveHost::registry_request(const json& request) {
  const Millis now = wall_ms();
  reg_unanswered_[request.at("req_id").get<std::uint64_t>()] = request;
  ensure_registry(now);
  if (!registry_up_) return;
  queue_frame(registry_, request.dump());
  if (!registry_.connecting && !flush(registry_)) {
    registry_ = Conn{};
    registry_up_ = false;
    registry_failed_at_ = now;
  }
}

void LiveHost::log(LogEvent ev) {
  json j = ev;
  if (log_) {
    if (auto r = log_->append(std::move(ev)); !r) {
      publish("note", json{{"note", "failed"}, {"code", to_string(r.code())}, {"message", r.error().message}});
    }
  }
  publish("log", std::move(j));
  dirty_ = true;
}

void LiveHost::note(const PeerNote& n) {
  dirty_ = true;
  if (n.kind == PeerNote::Kind::applied || n.kind == PeerNote::Kind::roster) return;
  publish("note", note_json(n));
}

// Connections

bool LiveHost::open_conn(Conn& c, const std::string& address) {
  auto ep = parse_endpoint(address);
  if (!ep) return false;
  auto fd = start_connect(*ep);
  if (!fd) return false;
  c.fd = std::move(*fd);
  c.connecting = true;
  return true;
}

void LiveHost::queue_frame(Conn& c, const std::string& body) { c.out += frame(body); }

bool LiveHost::flush(Conn& c) {
  while (!c.out.empty()) {
    const ssize_t n = ::send(c.fd.get(), c.out.data(), c.out.size(), MSG_NOSIGNAL | MSG_DONTWAIT);
    if (n > 0) {
      c.out.erase(0, static_cast<std::size_t>(n));
      continue;
    }
    if (n < 0 && errno == EINTR) continue;
    if (n < 0 && (errno == EAGAIN || errno == EWOULDBLOCK)) return c.out.size() <= kMaxQueuedBytes;
    return false;
  }
  return true;
}

void LiveHost::ensure_registry(Millis now) {
  if (registry_up_) return;
  if (registry_failed_at_ != 0 && now < registry_failed_at_ + opts_.registry_retry_ms) return;
  Conn c;
  if (!open_conn(c, opts_.registry.str())) {
    registry_failed_at_ = now;
    return;
  }
  registry_ = std::move(c);
  registry_up_ = true;
  // Anything unanswered from a previous connection goes again.
  for (const auto& [id, req] : reg_unanswered_) queue_frame(registry_, req.dump());
}

void LiveHost::on_registry_readable(Millis now) {
  if (!pump(registry_.fd.get(), registry_.in)) {
    registry_ = Conn{};
    registry_up_ = false;
    registry_failed_at_ = now;
    return;
  }
  while (auto body = registry_.in.next()) {
    json resp;
    try {
      resp = json::parse(*body);
    } catch (const json::exception&) {
      continue;
    }
    reg_unanswered_.erase(resp.value("req_id", std::uint64_t{0}));
    engine_->on_registry_response(resp, now);
  }
}

void LiveHost::run_due(Millis now) {
  {
    std::lock_guard lock(tasks_mu_);
    for (auto& t : incoming_) timed_.push_back(std::move(t));
    incoming_.clear();
  }
  std::stable_sort(timed_.begin(), timed_.end(), [](const Timed& a, const Timed& b) { return a.at < b.at; });
  std::size_t i = 0;
  for (; i < timed_.size() && timed_[i].at <= now; ++i) {
    auto r = timed_[i].task(*engine_, now);
    if (timed_[i].done) timed_[i].done->set_value(std::move(r));
    dirty_ = true;
  }
  timed_.erase(timed_.begin(), timed_.begin() + static_cast<std::ptrdiff_t>(i));
}

void LiveHost::loop() {
  while (!stopping_) {
    Millis now = wall_ms();
    run_due(now);
    if (engine_->next_wakeup() <= now) engine_->tick(now);
    if (log_) (void)log_->tick(now);
    if (!reg_unanswered_.empty()) ensure_registry(now);
    publish_state_if_changed();

    // Poll set: listener, waker, registry, inbound, outbound.
    std::vector<pollfd> fds;
    fds.push_back({listener_.get(), POLLIN, 0});
    fds.push_back({waker_.fd(), POLLIN, 0});
    const std::size_t reg_at = fds.size();
    if (registry_up_) {
      short ev = POLLIN;
      if (registry_.connecting || !registry_.out.empty()) ev |= POLLOUT;
      fds.push_back({registry_.fd.get(), ev, 0});
    }
    const std::size_t in_at = fds.size();
    for (auto& c : inbound_) fds.push_back({c.fd.get(), POLLIN, 0});
    const std::size_t out_at = fds.size();
    std::vector<std::string> out_keys;
    for (auto& [addr, c] : outbound_) {
      short ev = POLLIN;
      if (c.connecting || !c.out.empty()) ev |= POLLOUT;
      fds.push_back({c.fd.get(), ev, 0});
      out_keys.push_back(addr);
    }

    Millis wake = engine_->next_wakeup();
    if (!timed_.empty()) wake = std::min(wake, timed_.front().at);
    now = wall_ms();
    const int timeout = wake <= now ? 0 : static_cast<int>(std::min<Millis>(wake - now, 200));
    if (::poll(fds.data(), fds.size(), timeout) < 0 && errno != EINTR) break;
    now = wall_ms();

    if (fds[1].revents) waker_.drain();
    if (fds[0].revents & POLLIN) {
      Fd client(::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK));
      if (client.valid()) {
        set_nodelay(client.get());
        Conn c;
        c.fd = std::move(client);
        inbound_.push_back(std::move(c));
      }
    }

    if (registry_up_ && reg_at < in_at) {
      const auto rev = fds[reg_at].revents;
      if (registry_.connecting && (rev & (POLLOUT | POLLERR | POLLHUP))) {
        if (connect_finished(registry_.fd.get())) {
          registry_.connecting = false;
        } else {
          registry_ = Conn{};
          registry_up_ = false;
          registry_failed_at_ = now;
        }
      }
      if (registry_up_ && !registry_.connecting && !flush(registry_)) {
        registry_ = Conn{};
        registry_up_ = false;
        registry_failed_at_ = now;
      }
      if (registry_up_ && !registry_.connecting && (rev & (POLLIN | POLLHUP | POLLERR))) on_registry_readable(now);
    }

    std::vector<std::size_t> closed;
    for (std::size_t i = 0; i < out_at - in_at; ++i) {
      auto& c = inbound_[i];
      if (!fds[in_at + i].revents) continue;
      const bool open = pump(c.fd.get(), c.in);
      while (auto body = c.in.next()) {
        auto m = decode_message(*body);
        if (!m) continue;
        engine_->on_contact(m->sender, now);
        engine_->on_message(*m, now);
        dirty_ = true;
      }
      if (!open) closed.push_back(i);
    }
    for (auto it = closed.rbegin(); it != closed.rend(); ++it) {
      inbound_.erase(inbound_.begin() + static_cast<std::ptrdiff_t>(*it));
    }

    for (std::size_t i = 0; i < out_keys.size(); ++i) {
      auto it = outbound_.find(out_keys[i]);
      if (it == outbound_.end()) continue;  // dropped by a handler above
      auto& c = it->second;
      const auto rev = fds[out_at + i].revents;
      bool ok = true;
      if (c.connecting && (rev & (POLLOUT | POLLERR | POLLHUP))) {
        ok = connect_finished(c.fd.get());
        c.connecting = false;
      }
      if (ok && !c.connecting) ok = flush(c);
      // Nobody writes back on these; readable means closed or reset.
      if (ok && !c.connecting && (rev & POLLIN)) {
        FrameDecoder sink;
        ok = pump(c.fd.get(), sink);
      }
      if (rev & (POLLERR | POLLHUP)) ok = false;
      if (!ok) {
        failed_at_[out_keys[i]] = now;
        outbound_.erase(it);
      }
    }
  }
  publish_state_if_changed();
  view_cv_.notify_all();
}

}  // namespace climanic::net
