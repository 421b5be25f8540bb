#pragma once

// Runs one PeerEngine on real sockets and the wall clock. A single loop
// thread owns the engine; other threads reach it through post()/call().
// Peers talk over one outbound TCP connection per destination and read
// from the connections others open to them.

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/log/log.hpp"
#include "climanic/net/tcp.hpp"
#include "climanic/peer/command.hpp"
#include "climanic/peer/engine.hpp"

namespace climanic::net {

/// Unix time in milliseconds.
Millis wall_ms();

/// What the gateway shows: phase, roster, playback state, pending requests,
/// chat. Only changes when the session changes (no running clock).
nlohmann::json session_view(const PeerEngine& e);

struct LiveOptions {
  /// peer.address must be reachable by the other peers.
  PeerConfig peer;
  Endpoint listen;
  Endpoint registry;
  /// Event log file; empty for none.
  std::string log_path;
  Millis connect_timeout_ms = 1000;
  Millis registry_retry_ms = 1000;
};

/// A timed command list in the scenario script shape. Steps run relative to
/// the start of the run; only steps naming this peer (or "@leader" while
/// this peer leads) execute.
struct HeadlessScript {
  Millis duration_ms = 0;
  std::vector<ScriptStep> steps;
};

/// Accepts either a scenario-shaped object ({duration_ms, script}) or a
/// bare step array. InvalidArgument on a bad shape.
Result<HeadlessScript> parse_headless_script(const nlohmann::json& j);
Result<HeadlessScript> load_headless_script(const std::string& path);

class LiveHost final : public PeerEnv {
 public:
  using Task = std::function<Result<nlohmann::json>(PeerEngine&, Millis)>;

  /// Binds the listen socket and opens the log. BindFailure, IoError.
  static Result<std::unique_ptr<LiveHost>> create(LiveOptions opts);
  ~LiveHost() override;
  LiveHost(const LiveHost&) = delete;
  LiveHost& operator=(const LiveHost&) = delete;

  void start();
  /// Stops the loop and flushes the log. Idempotent.
  void stop();
  std::uint16_t port() const noexcept { return port_; }

  // Any thread.
  std::future<Result<nlohmann::json>> post(Task task);
  /// post() and wait. IoError if the loop is not running.
  Result<nlohmann::json> call(Task task, Millis timeout_ms = 5000);
  Result<nlohmann::json> command(const UserCommand& c);
  void create_group(const std::string& course_id);
  void join_group(const GroupId& g);
  /// Queues the script's steps for this peer, timed from now.
  void run_script(const HeadlessScript& script);

  /// Latest session view plus the clock-dependent offset.
  nlohmann::json state() const;
  /// Gateway events with id > after, oldest first; waits up to wait_ms for
  /// one to show up. Each is {"id","kind","data"}; kind is state, note,
  /// script or log.
  std::vector<nlohmann::json> events_since(std::uint64_t after, Millis wait_ms) const;
  std::uint64_t last_event_id() const;

  // PeerEnv; loop thread only.
  void send(const std::string& address, const SessionMessage& m) override;
  void disconnect(const std::string& address) override;
  void registry_request(const nlohmann::json& request) override;
  void log(LogEvent ev) override;
  void note(const PeerNote& n) override;

 private:
  struct Conn {
    Fd fd;
    bool connecting = false;
    std::string out;
    FrameDecoder in;
  };
  struct Timed {
    Millis at = 0;
    Task task;
    std::shared_ptr<std::promise<Result<nlohmann::json>>> done;
  };

  explicit LiveHost(LiveOptions opts);
  void loop();
  void run_due(Millis now);
  bool open_conn(Conn& c, const std::string& address);
  void queue_frame(Conn& c, const std::string& body);
  bool flush(Conn& c);
  void on_registry_readable(Millis now);
  void ensure_registry(Millis now);
  void publish(const std::string& kind, nlohmann::json data);
  void publish_state_if_changed();

  LiveOptions opts_;
  std::uint16_t port_ = 0;
  Fd listener_;
  Waker waker_;
  std::unique_ptr<PeerEngine> engine_;
  std::unique_ptr<LogWriter> log_;

  // Loop-thread state.
  std::map<std::string, Conn> outbound_;
  std::map<std::string, Millis> failed_at_;
  std::vector<Conn> inbound_;
  Conn registry_;
  Millis registry_failed_at_ = 0;
  bool registry_up_ = false;
  /// Requests sent but unanswered; resent after a reconnect.
  std::map<std::uint64_t, nlohmann::json> reg_unanswered_;
  std::vector<Timed> timed_;
  bool dirty_ = true;

  std::thread thread_;
  std::atomic<bool> stopping_{false};
  std::mutex tasks_mu_;
  std::vector<Timed> incoming_;

  mutable std::mutex view_mu_;
  mutable std::condition_variable view_cv_;
  nlohmann::json view_;
  Millis view_anchor_ = 0;
  std::deque<nlohmann::json> events_;
  std::uint64_t next_event_id_ = 0;
};

}  // namespace climanic::net
