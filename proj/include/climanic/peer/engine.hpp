#pragma once

// The per-participant session engine. A single-threaded state machine: the
// host feeds it messages, registry responses, timer ticks and user commands,
// and it answers through PeerEnv. The same engine runs under the simulator
// (virtual clock, simulated links) and live (sockets, wall clock).
//
// Leadership only ever changes through a successful claim_leadership at the
// registry by the incoming leader, so each epoch has one leader.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/log/event.hpp"
#include "climanic/manifest.hpp"
#include "climanic/playback.hpp"
#include "climanic/wire.hpp"

namespace climanic {

enum class PeerPhase { idle, joining, following, leading, failing_over, departed };
std::string_view to_string(PeerPhase p) noexcept;

struct PeerConfig {
  ParticipantId self;
  /// Where other peers reach this one ("host:port").
  std::string address;
  CoursewareManifest manifest;
  Millis heartbeat_ms = 500;
  Millis dead_after_ms = 1500;
  Millis backoff_ms = 750;
  /// How long a granting leader waits for the grantee's takeover.
  Millis handoff_timeout_ms = 2000;
  /// How long a joiner waits for the leader's snapshot before retrying.
  Millis join_timeout_ms = 2000;
  int join_attempts = 4;
  /// Rejoin with a fresh JoinSeq after being removed from the group.
  bool rejoin_on_evict = true;
  std::size_t max_chat_bytes = 2048;
};

struct ChatEntry {
  std::uint64_t chat_seq = 0;
  ParticipantId origin;
  std::uint64_t client_id = 0;
  std::string text;
  friend bool operator==(const ChatEntry&, const ChatEntry&) = default;
};

/// Things the engine reports to its host (trace, UI gateway, policies).
struct PeerNote {
  enum class Kind {
    phase,            // phase changed
    applied,          // playback state changed (event applied or snapshot installed)
    became_leader,    // entered Leading at `epoch`
    adopted,          // now following `leader` at `epoch`
    request_pending,  // leader: `participant` asked for control
    request_closed,   // leader: `participant`'s request left the pending set
    outcome,          // requester: own request `request_id` ended with `outcome`
    roster,           // roster changed
    chat,             // chat entry delivered
    failed,           // an operation failed with `code`
    evicted,          // removed from the group by the leader
  };
  Kind kind;
  PeerPhase phase = PeerPhase::idle;
  ControlEpoch epoch;
  ParticipantId participant;
  std::uint64_t request_id = 0;
  OutcomeKind outcome = OutcomeKind::denied;
  Errc code = Errc::invalid_argument;
  std::string message;
};

class PeerEnv {
 public:
  virtual ~PeerEnv() = default;
  virtual void send(const std::string& address, const SessionMessage& m) = 0;
  /// The engine no longer talks to `address`; pending traffic may be dropped.
  virtual void disconnect(const std::string& address) { (void)address; }
  /// Fire-and-forget; the answer comes back through on_registry_response.
  virtual void registry_request(const nlohmann::json& request) = 0;
  virtual void log(LogEvent ev) = 0;
  virtual void note(const PeerNote& n) { (void)n; }
};

class PeerEngine {
 public:
  PeerEngine(PeerConfig cfg, PeerEnv& env);

  // Session setup.
  void create(const std::string& course_id, Millis now);
  void join(const GroupId& g, Millis now);

  // Inputs.
  void on_message(const SessionMessage& m, Millis now);
  void on_registry_response(const nlohmann::json& response, Millis now);
  /// Transport-level sign of life from `from` (any frame, acks included).
  /// Counts toward liveness but carries no session content.
  void on_contact(const ParticipantId& from, Millis now);
  void tick(Millis now);
  /// Earliest time tick() has work to do.
  Millis next_wakeup() const;

  // User commands.
  Result<void> issue(EventKind kind, std::uint64_t target, Millis now);
  Result<std::uint64_t> request_control(Millis now);
  Result<void> decide(bool grant, const ParticipantId& requester, Millis now);
  Result<void> transfer(const ParticipantId& target, Millis now);
  Result<void> send_chat(const std::string& text, Millis now);
  Result<void> leave(Millis now);
  Result<void> set_active(bool active, Millis now);

  // Observers.
  PeerPhase phase() const noexcept { return phase_; }
  const ParticipantId& self() const noexcept { return cfg_.self; }
  const GroupId& group() const noexcept { return group_; }
  ControlEpoch epoch() const noexcept { return epoch_; }
  const ParticipantId& leader() const noexcept { return leader_; }
  JoinSeq join_seq() const noexcept { return join_seq_; }
  const PlaybackState& state() const noexcept { return state_; }
  Millis anchor() const noexcept { return anchor_; }
  Millis effective_offset(Millis now) const;
  const std::vector<RosterEntry>& roster() const noexcept { return roster_; }
  const std::vector<ChatEntry>& transcript() const noexcept { return transcript_; }
  std::uint64_t chat_next() const noexcept { return chat_base_ + transcript_.size(); }
  std::vector<ParticipantId> pending_requests() const { return lead_.pending_requests; }
  std::optional<std::uint64_t> outstanding_request() const;
  bool in_handoff() const noexcept { return handoff_.has_value(); }
  const CoursewareManifest& manifest() const noexcept { return cfg_.manifest; }
  std::optional<Errc> departure_reason() const noexcept { return departure_reason_; }
  /// Follower: last time the leader was heard from.
  Millis leader_heard_at() const noexcept { return leader_last_recv_; }
  /// Leader: last time each follower was heard from.
  std::map<ParticipantId, Millis> follower_contacts() const;

 private:
  enum class RegOp { create, join, members_for_join, claim_grant, claim_failover, members_failover,
                     members_handoff, members_follow, leave_self, evict, set_active };
  struct PendingReg {
    RegOp op;
    ControlEpoch epoch;
    ParticipantId subject;
    bool flag = false;
  };
  struct OwnRequest {
    std::uint64_t id = 0;
    ControlEpoch epoch;
  };
  struct Handoff {
    ParticipantId target;
    Millis deadline = 0;
    bool checking = false;
  };
  struct Failover {
    ParticipantId dead;
    std::set<ParticipantId> excluded;
    ParticipantId designee;
    Millis deadline = 0;
    /// Epoch the claim expects; above epoch_ when the registry already moved
    /// on to a controller that then vanished.
    ControlEpoch expected;
    bool claiming = false;
    bool checking = false;
  };
  struct PendingClaim {
    SyncSnapshot snapshot;
    TransferReason reason;
  };
  struct FollowerInfo {
    Millis last_recv = 0;
    std::uint64_t roster_sent = 0;
    Millis chat_resent_at = 0;
    std::uint64_t chat_have = 0;
  };

  // Messaging.
  SessionMessage make(MessageType type, Payload payload) const;
  void send_to(const std::string& address, MessageType type, Payload payload);
  void broadcast(MessageType type, const Payload& payload);
  void send_notice(const SessionMessage& stale, Millis now);
  void request_snapshot(const ParticipantId& from, const std::string& address, Millis now);
  std::uint64_t next_req() { return ++next_req_id_; }
  void reg(const nlohmann::json& request, PendingReg pending);
  std::string address_of(const ParticipantId& p) const;
  void learn(const std::vector<RosterEntry>& roster);

  // Handlers.
  void on_hello(const SessionMessage& m, const HelloPayload& p, Millis now);
  void on_snapshot_request(const SessionMessage& m, Millis now);
  void on_snapshot(const SessionMessage& m, const SyncSnapshot& s, Millis now);
  void on_event(const SessionMessage& m, const EventPayload& p, Millis now);
  void on_control_request(const SessionMessage& m, const ControlRequestPayload& p, Millis now);
  void on_outcome(const SessionMessage& m, const ControlOutcomePayload& p, Millis now);
  void on_transfer(const SessionMessage& m, const ControlTransferPayload& p, Millis now);
  void on_heartbeat(const SessionMessage& m, const HeartbeatPayload& p, Millis now);
  void on_chat(const SessionMessage& m, const ChatPayload& p, Millis now);
  void on_goodbye(const SessionMessage& m, const GoodbyePayload& p, Millis now);

  void on_reg_create(const nlohmann::json& resp, Millis now);
  void on_reg_join(const nlohmann::json& resp, Millis now);
  void on_reg_members_for_join(const nlohmann::json& resp, Millis now);
  void on_reg_claim(const PendingReg& op, const nlohmann::json& resp, Millis now);
  void on_reg_members_failover(const PendingReg& op, const nlohmann::json& resp, Millis now);
  void on_reg_members_handoff(const nlohmann::json& resp, Millis now);
  void on_reg_follow(const nlohmann::json& resp, Millis now);

  // Transitions.
  void set_phase(PeerPhase p);
  SyncSnapshot snapshot(TransferReason reason) const;
  void install(const SyncSnapshot& s, Millis now, LogKind kind, nlohmann::json detail);
  void adopt(const SyncSnapshot& s, Millis now);
  void become_leader(ControlEpoch e, TransferReason reason, const ParticipantId& previous, Millis now);
  void start_failover(Millis now);
  void decide_failover(const std::vector<RosterEntry>& roster, Millis now);
  void depart(std::optional<Errc> reason, Millis now);
  void evicted(Millis now);
  void admit(const ParticipantId& p, const HelloPayload& hello, Millis now);
  void drop_follower(const ParticipantId& p, const char* reason, Millis now);
  void send_heartbeats(Millis now);
  void send_join_hello(Millis now);
  void resolve_own(OutcomeKind outcome, Millis now);
  void start_join_request(Millis now);
  void join_retry_or_give_up(Errc code, Millis now);
  void assign_chat(const ParticipantId& origin, std::uint64_t client_id, const std::string& text, Millis now);
  void flush_outbox(Millis now);
  void record(LogKind kind, const ParticipantId& actor, nlohmann::json detail, Millis now);
  void note(PeerNote n) const;
  void note_simple(PeerNote::Kind k) const;
  const RosterEntry* roster_find(const ParticipantId& p) const;
  void roster_changed(Millis now);

  PeerConfig cfg_;
  PeerEnv& env_;
  std::string manifest_hash_;

  PeerPhase phase_ = PeerPhase::idle;
  std::optional<Errc> departure_reason_;
  GroupId group_;
  JoinSeq join_seq_;
  ControlEpoch epoch_;
  ParticipantId leader_;
  std::string leader_address_;
  TransferReason lead_reason_ = TransferReason::create;
  std::unordered_map<ParticipantId, std::string> known_addresses_;
  Millis leader_last_recv_ = 0;
  Millis last_heartbeat_sent_ = 0;

  PlaybackState state_;
  Millis anchor_ = 0;
  std::uint64_t next_event_seq_ = 0;
  mutable std::uint64_t next_msg_seq_ = 0;

  std::vector<RosterEntry> roster_;
  std::uint64_t roster_version_ = 0;
  std::unordered_map<ParticipantId, FollowerInfo> followers_;

  // Control requests.
  LeadershipState lead_;
  std::map<ParticipantId, std::uint64_t> pending_ids_;
  std::map<ParticipantId, std::pair<ResolvedRequest, ControlEpoch>> resolved_;
  std::optional<OwnRequest> own_request_;
  std::uint64_t next_request_id_ = 0;
  std::optional<Handoff> handoff_;
  std::optional<PendingClaim> pending_claim_;
  std::optional<Failover> failover_;

  // Joining.
  Millis join_deadline_ = 0;
  int join_attempts_left_ = 0;
  bool joined_registry_ = false;
  bool rejoining_ = false;

  // Chat.
  std::vector<ChatEntry> transcript_;
  /// chat_seq of transcript_[0]; late joiners start mid-conversation.
  std::uint64_t chat_base_ = 0;
  std::map<std::uint64_t, std::string> outbox_;
  std::uint64_t next_client_id_ = 0;
  std::map<ParticipantId, std::uint64_t> max_client_;

  // Registry requests in flight.
  std::uint64_t next_req_id_ = 0;
  std::map<std::uint64_t, PendingReg> reg_pending_;

  // Rate limits.
  std::map<std::string, Millis> notice_sent_at_;
  std::map<std::string, Millis> snapshot_requested_at_;
};

}  // namespace climanic
