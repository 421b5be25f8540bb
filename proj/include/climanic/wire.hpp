#pragma once

// Session wire format: every frame is a 4-byte big-endian length followed by
// that many bytes of canonical UTF-8 JSON (sorted keys, no whitespace).
// docs/wire.md has byte-level examples; tests/wire/ holds golden frames.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/leadership.hpp"
#include "climanic/playback.hpp"
#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic {

enum class MessageType {
  hello,
  snapshot_request,
  sync_snapshot,
  event,
  control_request,
  control_granted,
  control_denied,
  control_superseded,
  control_transfer,
  heartbeat,
  chat,
  goodbye,
};

std::string_view to_string(MessageType t) noexcept;
std::optional<MessageType> message_type_from_string(std::string_view name) noexcept;

struct RosterEntry {
  ParticipantId participant;
  JoinSeq join_seq;
  std::string address;
  friend bool operator==(const RosterEntry&, const RosterEntry&) = default;
};

/// A control request the leader has already answered. Carried forward in
/// snapshots so a requester that re-homes mid-race learns its outcome from
/// the new leader instead of asking twice.
struct ResolvedRequest {
  ParticipantId requester;
  std::uint64_t request_id = 0;
  OutcomeKind outcome = OutcomeKind::denied;
  friend bool operator==(const ResolvedRequest&, const ResolvedRequest&) = default;
};

/// Why leadership last changed hands.
enum class TransferReason { create, grant, handoff, failover, notice };

std::string_view to_string(TransferReason r) noexcept;
std::optional<TransferReason> transfer_reason_from_string(std::string_view name) noexcept;

struct HelloPayload {
  std::string manifest_hash;
  JoinSeq join_seq;
  std::string address;
  friend bool operator==(const HelloPayload&, const HelloPayload&) = default;
};

struct SnapshotRequestPayload {
  friend bool operator==(const SnapshotRequestPayload&, const SnapshotRequestPayload&) = default;
};

struct SyncSnapshot {
  PlaybackState state;
  /// Logical ms at which state.media_offset_ms was exact.
  Millis anchor_time = 0;
  ParticipantId leader;
  ControlEpoch leader_epoch;
  TransferReason reason = TransferReason::create;
  std::vector<RosterEntry> roster;
  std::uint64_t chat_next = 0;
  std::vector<ResolvedRequest> resolved;
  friend bool operator==(const SyncSnapshot&, const SyncSnapshot&) = default;
};

struct EventPayload {
  PlaybackEvent event;
  friend bool operator==(const EventPayload&, const EventPayload&) = default;
};

struct ControlRequestPayload {
  std::uint64_t request_id = 0;
  friend bool operator==(const ControlRequestPayload&, const ControlRequestPayload&) = default;
};

/// Shared by control_granted, control_denied and control_superseded. A grant
/// carries the granter's snapshot so the grantee takes over from it.
struct ControlOutcomePayload {
  ParticipantId requester;
  std::uint64_t request_id = 0;
  std::optional<SyncSnapshot> snapshot;
  friend bool operator==(const ControlOutcomePayload&, const ControlOutcomePayload&) = default;
};

/// reason=handoff: the current leader asks `leader` to take epoch `epoch`.
/// reason=grant/failover: `leader` has won `epoch` at the registry; carries
/// the new leader's snapshot. reason=notice: a fencing hint from a node that
/// saw a stale epoch; no snapshot.
struct ControlTransferPayload {
  ParticipantId leader;
  ControlEpoch epoch;
  TransferReason reason = TransferReason::notice;
  std::string leader_address;
  std::optional<SyncSnapshot> snapshot;
  friend bool operator==(const ControlTransferPayload&, const ControlTransferPayload&) = default;
};

enum class HeartbeatRole { leader, follower };

struct HeartbeatPayload {
  HeartbeatRole role = HeartbeatRole::leader;
  std::uint64_t roster_version = 0;
  /// Present only when the roster changed since the previous heartbeat.
  std::optional<std::vector<RosterEntry>> roster;
  /// Follower only: how many chat entries it holds, so the leader can resend
  /// what a re-homed follower missed.
  std::optional<std::uint64_t> chat_have;
  friend bool operator==(const HeartbeatPayload&, const HeartbeatPayload&) = default;
};

/// Follower to leader: no chat_seq. Leader to everyone: chat_seq assigned.
struct ChatPayload {
  ParticipantId origin;
  std::uint64_t client_id = 0;
  std::optional<std::uint64_t> chat_seq;
  std::string text;
  friend bool operator==(const ChatPayload&, const ChatPayload&) = default;
};

struct GoodbyePayload {
  std::string reason;
  friend bool operator==(const GoodbyePayload&, const GoodbyePayload&) = default;
};

using Payload = std::variant<HelloPayload, SnapshotRequestPayload, SyncSnapshot, EventPayload,
                             ControlRequestPayload, ControlOutcomePayload, ControlTransferPayload,
                             HeartbeatPayload, ChatPayload, GoodbyePayload>;

struct SessionMessage {
  MessageType type = MessageType::heartbeat;
  GroupId group_id;
  ControlEpoch epoch;
  /// Strictly increasing per (sender, destination) connection.
  std::uint64_t seq = 0;
  ParticipantId sender;
  Payload payload;

  friend bool operator==(const SessionMessage&, const SessionMessage&) = default;
};

/// True when `payload` holds the alternative `type` requires.
bool payload_matches(MessageType type, const Payload& payload) noexcept;

void to_json(nlohmann::json& j, const RosterEntry& r);
void from_json(const nlohmann::json& j, RosterEntry& r);
void to_json(nlohmann::json& j, const ResolvedRequest& r);
void from_json(const nlohmann::json& j, ResolvedRequest& r);
void to_json(nlohmann::json& j, const SyncSnapshot& s);
void from_json(const nlohmann::json& j, SyncSnapshot& s);

nlohmann::json message_to_json(const SessionMessage& m);
Result<SessionMessage> message_from_json(const nlohmann::json& j);

/// Canonical JSON text of one message (no length prefix).
std::string encode_message(const SessionMessage& m);
Result<SessionMessage> decode_message(std::string_view text);

// Framing

inline constexpr std::size_t kFrameHeaderBytes = 4;
inline constexpr std::size_t kMaxFrameBytes = 1u << 20;

/// Length prefix + body.
std::string frame(std::string_view body);

/// Incremental frame splitter for stream transports.
class FrameDecoder {
 public:
  /// Appends bytes; returns ProtocolError once a header announces a frame
  /// larger than kMaxFrameBytes (the stream is unusable after that).
  Result<void> feed(std::string_view bytes);
  std::optional<std::string> next();
  std::size_t buffered() const noexcept { return buf_.size(); }

 private:
  std::string buf_;
  std::deque<std::string> ready_;
};

}  // namespace climanic
