#include "climanic/wire.hpp"

#include <array>
#include <stdexcept>

#include "climanic/codec.hpp"

namespace climanic {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<MessageType, std::string_view>, 12> kTypeNames = {{
    {MessageType::hello, "hello"},
    {MessageType::snapshot_request, "snapshot_request"},
    {MessageType::sync_snapshot, "sync_snapshot"},
    {MessageType::event, "event"},
    {MessageType::control_request, "control_request"},
    {MessageType::control_granted, "control_granted"},
    {MessageType::control_denied, "control_denied"},
    {MessageType::control_superseded, "control_superseded"},
    {MessageType::control_transfer, "control_transfer"},
    {MessageType::heartbeat, "heartbeat"},
    {MessageType::chat, "chat"},
    {MessageType::goodbye, "goodbye"},
}};

constexpr std::array<std::pair<TransferReason, std::string_view>, 5> kReasonNames = {{
    {TransferReason::create, "create"},
    {TransferReason::grant, "grant"},
    {TransferReason::handoff, "handoff"},
    {TransferReason::failover, "failover"},
    {TransferReason::notice, "notice"},
}};

std::optional<OutcomeKind> outcome_from_string(std::string_view s) {
  if (s == "granted") return OutcomeKind::granted;
  if (s == "denied") return OutcomeKind::denied;
  if (s == "superseded") return OutcomeKind::superseded;
  return std::nullopt;
}

template <typename T>
T required_enum(std::optional<T> v, const char* what) {
  if (!v) throw std::invalid_argument(std::string("unknown ") + what);
  return *v;
}

json payload_to_json(const Payload& payload) {
  return std::visit(
      [](const auto& p) -> json {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, HelloPayload>) {
          return json{{"manifest_hash", p.manifest_hash}, {"join_seq", p.join_seq}, {"address", p.address}};
        } else if constexpr (std::is_same_v<P, SnapshotRequestPayload>) {
          return json::object();
        } else if constexpr (std::is_same_v<P, SyncSnapshot>) {
          return json(p);
        } else if constexpr (std::is_same_v<P, EventPayload>) {
          return json{{"event", p.event}};
        } else if constexpr (std::is_same_v<P, ControlRequestPayload>) {
          return json{{"request_id", p.request_id}};
        } else if constexpr (std::is_same_v<P, ControlOutcomePayload>) {
          json j{{"requester", p.requester}, {"request_id", p.request_id}};
          if (p.snapshot) j["snapshot"] = *p.snapshot;
          return j;
        } else if constexpr (std::is_same_v<P, ControlTransferPayload>) {
          json j{{"leader", p.leader},
                 {"epoch", p.epoch},
                 {"reason", to_string(p.reason)},
                 {"leader_address", p.leader_address}};
          if (p.snapshot) j["snapshot"] = *p.snapshot;
          return j;
        } else if constexpr (std::is_same_v<P, HeartbeatPayload>) {
          json j{{"role", p.role == HeartbeatRole::leader ? "leader" : "follower"},
                 {"roster_version", p.roster_version}};
          if (p.roster) j["roster"] = *p.roster;
          if (p.chat_have) j["chat_have"] = *p.chat_have;
          return j;
        } else if constexpr (std::is_same_v<P, ChatPayload>) {
          json j{{"origin", p.origin}, {"client_id", p.client_id}, {"text", p.text}};
          if (p.chat_seq) j["chat_seq"] = *p.chat_seq;
          return j;
        } else {
          static_assert(std::is_same_v<P, GoodbyePayload>);
          return json{{"reason", p.reason}};
        }
      },
      payload);
}

Payload payload_from_json(MessageType type, const json& j) {
  switch (type) {
    case MessageType::hello:
      return HelloPayload{j.at("manifest_hash").get<std::string>(), j.at("join_seq").get<JoinSeq>(),
                          j.at("address").get<std::string>()};
    case MessageType::snapshot_request:
      return SnapshotRequestPayload{};
    case MessageType::sync_snapshot:
      return j.get<SyncSnapshot>();
    case MessageType::event:
      return EventPayload{j.at("event").get<PlaybackEvent>()};
    case MessageType::control_request:
      return ControlRequestPayload{j.at("request_id").get<std::uint64_t>()};
    case MessageType::control_granted:
    case MessageType::control_denied:
    case MessageType::control_superseded: {
      ControlOutcomePayload p{j.at("requester").get<ParticipantId>(), j.at("request_id").get<std::uint64_t>(),
                              std::nullopt};
      if (j.contains("snapshot")) p.snapshot = j.at("snapshot").get<SyncSnapshot>();
      return p;
    }
    case MessageType::control_transfer: {
      ControlTransferPayload p;
      p.leader = j.at("leader").get<ParticipantId>();
      p.epoch = j.at("epoch").get<ControlEpoch>();
      p.reason = required_enum(transfer_reason_from_string(j.at("reason").get<std::string>()), "reason");
      p.leader_address = j.at("leader_address").get<std::string>();
      if (j.contains("snapshot")) p.snapshot = j.at("snapshot").get<SyncSnapshot>();
      return p;
    }
    case MessageType::heartbeat: {
      HeartbeatPayload p;
      const auto role = j.at("role").get<std::string>();
      if (role == "leader") {
        p.role = HeartbeatRole::leader;
      } else if (role == "follower") {
        p.role = HeartbeatRole::follower;
      } else {
        throw std::invalid_argument("unknown heartbeat role");
      }
      p.roster_version = j.at("roster_version").get<std::uint64_t>();
      if (j.contains("roster")) p.roster = j.at("roster").get<std::vector<RosterEntry>>();
      if (j.contains("chat_have")) p.chat_have = j.at("chat_have").get<std::uint64_t>();
      return p;
    }
    case MessageType::chat: {
      ChatPayload p;
      p.origin = j.at("origin").get<ParticipantId>();
      p.client_id = j.at("client_id").get<std::uint64_t>();
      p.text = j.at("text").get<std::string>();
      if (j.contains("chat_seq")) p.chat_seq = j.at("chat_seq").get<std::uint64_t>();
      return p;
    }
    case MessageType::goodbye:
      return GoodbyePayload{j.at("reason").get<std::string>()};
  }
  throw std::invalid_argument("unknown message type");
}

}  // namespace

std::string_view to_string(MessageType t) noexcept {
  for (const auto& [k, v] : kTypeNames) {
    if (k == t) return v;
  }
  return "heartbeat";
}

std::optional<MessageType> message_type_from_string(std::string_view name) noexcept {
  for (const auto& [k, v] : kTypeNames) {
    if (v == name) return k;
  }
  return std::nullopt;
}

std::string_view to_string(TransferReason r) noexcept {
  for (const auto& [k, v] : kReasonNames) {
    if (k == r) return v;
  }
  return "notice";
}

std::optional<TransferReason> transfer_reason_from_string(std::string_view name) noexcept {
  for (const auto& [k, v] : kReasonNames) {
    if (v == name) return k;
  }
  return std::nullopt;
}

bool payload_matches(MessageType type, const Payload& payload) noexcept {
  switch (type) {
    case MessageType::hello: return std::holds_alternative<HelloPayload>(payload);
    case MessageType::snapshot_request: return std::holds_alternative<SnapshotRequestPayload>(payload);
    case MessageType::sync_snapshot: return std::holds_alternative<SyncSnapshot>(payload);
    case MessageType::event: return std::holds_alternative<EventPayload>(payload);
    case MessageType::control_request: return std::holds_alternative<ControlRequestPayload>(payload);
    case MessageType::control_granted:
    case MessageType::control_denied:
    case MessageType::control_superseded: return std::holds_alternative<ControlOutcomePayload>(payload);
    case MessageType::control_transfer: return std::holds_alternative<ControlTransferPayload>(payload);
    case MessageType::heartbeat: return std::holds_alternative<HeartbeatPayload>(payload);
    case MessageType::chat: return std::holds_alternative<ChatPayload>(payload);
    case MessageType::goodbye: return std::holds_alternative<GoodbyePayload>(payload);
  }
  return false;
}

// Roster and resolved entries travel as fixed-position triples; they repeat
// once per member in snapshots and heartbeats.
void to_json(json& j, const RosterEntry& r) { j = json::array({r.participant, r.join_seq, r.address}); }

void from_json(const json& j, RosterEntry& r) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("roster entry must be [participant, join_seq, address]");
  r.participant = j.at(0).get<ParticipantId>();
  r.join_seq = j.at(1).get<JoinSeq>();
  r.address = j.at(2).get<std::string>();
}

void to_json(json& j, const ResolvedRequest& r) {
  j = json::array({r.requester, r.request_id, to_string(r.outcome)});
}

void from_json(const json& j, ResolvedRequest& r) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("resolved entry must be [requester, request_id, outcome]");
  r.requester = j.at(0).get<ParticipantId>();
  r.request_id = j.at(1).get<std::uint64_t>();
  r.outcome = required_enum(outcome_from_string(j.at(2).get<std::string>()), "outcome");
}

void to_json(json& j, const SyncSnapshot& s) {
  j = json{{"state", s.state},
           {"anchor_time", s.anchor_time},
           {"leader", s.leader},
           {"leader_epoch", s.leader_epoch},
           {"reason", to_string(s.reason)},
           {"roster", s.roster},
           {"chat_next", s.chat_next},
           {"resolved", s.resolved}};
}

void from_json(const json& j, SyncSnapshot& s) {
  s.state = j.at("state").get<PlaybackState>();
  s.anchor_time = j.at("anchor_time").get<Millis>();
  s.leader = j.at("leader").get<ParticipantId>();
  s.leader_epoch = j.at("leader_epoch").get<ControlEpoch>();
  s.reason = required_enum(transfer_reason_from_string(j.at("reason").get<std::string>()), "reason");
  s.roster = j.at("roster").get<std::vector<RosterEntry>>();
  s.chat_next = j.at("chat_next").get<std::uint64_t>();
  s.resolved = j.at("resolved").get<std::vector<ResolvedRequest>>();
}

json message_to_json(const SessionMessage& m) {
  return json{{"type", to_string(m.type)},
              {"group_id", m.group_id},
              {"epoch", m.epoch},
              {"seq", m.seq},
              {"sender", m.sender},
              {"payload", payload_to_json(m.payload)}};
}

Result<SessionMessage> message_from_json(const json& j) {
  try {
    SessionMessage m;
    auto type = message_type_from_string(j.at("type").get<std::string>());
    if (!type) return make_error(Errc::protocol_error, "unknown message type");
    m.type = *type;
    m.group_id = j.at("group_id").get<GroupId>();
    m.epoch = j.at("epoch").get<ControlEpoch>();
    m.seq = j.at("seq").get<std::uint64_t>();
    m.sender = j.at("sender").get<ParticipantId>();
    m.payload = payload_from_json(m.type, j.at("payload"));
    return m;
  } catch (const std::exception& e) {
    return make_error(Errc::protocol_error, e.what());
  }
}

std::string encode_message(const SessionMessage& m) { return canonical(message_to_json(m)); }

Result<SessionMessage> decode_message(std::string_view text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) return make_error(Errc::protocol_error, "frame is not a JSON object");
  return message_from_json(j);
}

std::string frame(std::string_view body) {
  if (body.size() > kMaxFrameBytes) throw std::length_error("frame body exceeds kMaxFrameBytes");
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(kFrameHeaderBytes + body.size());
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out.append(body);
  return out;
}

Result<void> FrameDecoder::feed(std::string_view bytes) {
  buf_.append(bytes);
  std::size_t pos = 0;
  while (buf_.size() - pos >= kFrameHeaderBytes) {
    const auto* p = reinterpret_cast<const unsigned char*>(buf_.data() + pos);
    const std::uint32_t n = (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) |
                            (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
    if (n > kMaxFrameBytes) return make_error(Errc::protocol_error, "frame length exceeds limit");
    if (buf_.size() - pos - kFrameHeaderBytes < n) break;
    ready_.emplace_back(buf_.substr(pos + kFrameHeaderBytes, n));
    pos += kFrameHeaderBytes + n;
  }
  buf_.erase(0, pos);
  return {};
}

std::optional<std::string> FrameDecoder::next() {
  if (ready_.empty()) return std::nullopt;
  std::string f = std::move(ready_.front());
  ready_.pop_front();
  return f;
}

}  // namespace climanic
