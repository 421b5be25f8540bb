#include "climanic/peer/engine.hpp"

#include <algorithm>

#include "climanic/codec.hpp"
#include "climanic/log/replay.hpp"
#include "climanic/registry/protocol.hpp"

namespace climanic {

using nlohmann::json;
namespace proto = registry_proto;
namespace d = log_detail;

namespace {

constexpr Millis kResendGapMs = 300;

LogKind log_kind_for(EventKind k) {
  switch (k) {
    case EventKind::play: return LogKind::play;
    case EventKind::pause: return LogKind::pause;
    case EventKind::seek: return LogKind::seek;
    case EventKind::slide_change: return LogKind::slide_change;
  }
  return LogKind::play;
}

MessageType message_for(OutcomeKind k) {
  switch (k) {
    case OutcomeKind::granted: return MessageType::control_granted;
    case OutcomeKind::denied: return MessageType::control_denied;
    case OutcomeKind::superseded: return MessageType::control_superseded;
  }
  return MessageType::control_denied;
}

bool member_of(const std::vector<MemberEntry>& ms, const ParticipantId& p) {
  return std::any_of(ms.begin(), ms.end(), [&](const MemberEntry& m) { return m.participant == p; });
}

std::vector<RosterEntry> roster_from(const std::vector<MemberEntry>& ms) {
  std::vector<RosterEntry> out;
  for (const auto& m : ms) out.push_back(RosterEntry{m.participant, m.join_seq, m.address});
  return out;
}

}  // namespace

std::string_view to_string(PeerPhase p) noexcept {
  switch (p) {
    case PeerPhase::idle: return "idle";
    case PeerPhase::joining: return "joining";
    case PeerPhase::following: return "following";
    case PeerPhase::leading: return "leading";
    case PeerPhase::failing_over: return "failing_over";
    case PeerPhase::departed: return "departed";
  }
  return "idle";
}

PeerEngine::PeerEngine(PeerConfig cfg, PeerEnv& env)
    : cfg_(std::move(cfg)), env_(env), manifest_hash_(cfg_.manifest.content_hash()) {}

// ---------------------------------------------------------------- plumbing

SessionMessage PeerEngine::make(MessageType type, Payload payload) const {
  SessionMessage m;
  m.type = type;
  m.group_id = group_;
  m.epoch = epoch_;
  m.seq = next_msg_seq_++;
  m.sender = cfg_.self;
  m.payload = std::move(payload);
  return m;
}

void PeerEngine::send_to(const std::string& address, MessageType type, Payload payload) {
  if (address.empty()) return;
  env_.send(address, make(type, std::move(payload)));
}

void PeerEngine::broadcast(MessageType type, const Payload& payload) {
  for (const auto& r : roster_) {
    if (r.participant != cfg_.self) send_to(r.address, type, payload);
  }
}

void PeerEngine::reg(const json& request, PendingReg pending) {
  reg_pending_[request.at("req_id").get<std::uint64_t>()] = std::move(pending);
  env_.registry_request(request);
}

std::string PeerEngine::address_of(const ParticipantId& p) const {
  if (auto* r = roster_find(p)) return r->address;
  auto it = known_addresses_.find(p);
  return it == known_addresses_.end() ? std::string{} : it->second;
}

void PeerEngine::learn(const std::vector<RosterEntry>& roster) {
  for (const auto& r : roster) known_addresses_[r.participant] = r.address;
}

const RosterEntry* PeerEngine::roster_find(const ParticipantId& p) const {
  auto it = std::find_if(roster_.begin(), roster_.end(), [&](const RosterEntry& r) { return r.participant == p; });
  return it == roster_.end() ? nullptr : &*it;
}

void PeerEngine::record(LogKind kind, const ParticipantId& actor, json detail, Millis now) {
  LogEvent ev;
  ev.at = now;
  ev.group_id = group_;
  ev.actor = actor;
  ev.kind = kind;
  ev.epoch = epoch_;
  ev.detail = std::move(detail);
  env_.log(std::move(ev));
}

void PeerEngine::note(PeerNote n) const {
  n.phase = phase_;
  n.epoch = epoch_;
  env_.note(n);
}

void PeerEngine::note_simple(PeerNote::Kind k) const {
  PeerNote n{};
  n.kind = k;
  note(n);
}

void PeerEngine::set_phase(PeerPhase p) {
  if (phase_ == p) return;
  phase_ = p;
  note_simple(PeerNote::Kind::phase);
}

Millis PeerEngine::effective_offset(Millis now) const {
  return climanic::effective_offset(state_, anchor_, now, cfg_.manifest);
}

std::map<ParticipantId, Millis> PeerEngine::follower_contacts() const {
  std::map<ParticipantId, Millis> out;
  for (const auto& [p, f] : followers_) out[p] = f.last_recv;
  return out;
}

std::optional<std::uint64_t> PeerEngine::outstanding_request() const {
  if (!own_request_) return std::nullopt;
  return own_request_->id;
}

SyncSnapshot PeerEngine::snapshot(TransferReason reason) const {
  SyncSnapshot s;
  s.state = state_;
  s.anchor_time = anchor_;
  s.leader = leader_;
  s.leader_epoch = epoch_;
  s.reason = reason;
  s.roster = roster_;
  s.chat_next = chat_next();
  for (const auto& [p, entry] : resolved_) {
    if (entry.second.value + 1 >= epoch_.value) s.resolved.push_back(entry.first);
  }
  return s;
}

void PeerEngine::send_notice(const SessionMessage& stale, Millis now) {
  if (phase_ != PeerPhase::leading && phase_ != PeerPhase::following) return;
  const auto addr = address_of(stale.sender);
  if (addr.empty()) return;
  auto& last = notice_sent_at_[addr];
  if (last != 0 && now < last + kResendGapMs) return;
  last = now;
  send_to(addr, MessageType::control_transfer,
          ControlTransferPayload{leader_, epoch_, TransferReason::notice, leader_address_, std::nullopt});
}

void PeerEngine::request_snapshot(const ParticipantId& from, const std::string& address, Millis now) {
  (void)from;
  if (address.empty()) return;
  auto& last = snapshot_requested_at_[address];
  if (last != 0 && now < last + kResendGapMs) return;
  last = now;
  send_to(address, MessageType::snapshot_request, SnapshotRequestPayload{});
}

// ---------------------------------------------------------------- setup

void PeerEngine::create(const std::string& course_id, Millis now) {
  (void)now;
  if (phase_ != PeerPhase::idle) return;
  set_phase(PeerPhase::joining);
  reg(proto::create_group(next_req(), course_id, cfg_.self, cfg_.address), {RegOp::create, {}, {}, false});
}

void PeerEngine::join(const GroupId& g, Millis now) {
  if (phase_ != PeerPhase::idle) return;
  group_ = g;
  rejoining_ = false;
  join_attempts_left_ = cfg_.join_attempts;
  set_phase(PeerPhase::joining);
  start_join_request(now);
}

void PeerEngine::start_join_request(Millis now) {
  joined_registry_ = false;
  join_deadline_ = now + cfg_.join_timeout_ms;
  reg(proto::join_group(next_req(), group_, cfg_.self, cfg_.address), {RegOp::join, {}, {}, false});
}

void PeerEngine::send_join_hello(Millis now) {
  join_deadline_ = now + cfg_.join_timeout_ms;
  send_to(leader_address_, MessageType::hello, HelloPayload{manifest_hash_, join_seq_, cfg_.address});
}

void PeerEngine::join_retry_or_give_up(Errc code, Millis now) {
  if (join_attempts_left_-- > 0) {
    join_deadline_ = now + cfg_.join_timeout_ms;
    return;
  }
  if (joined_registry_) {
    reg(proto::leave_group(next_req(), group_, cfg_.self), {RegOp::leave_self, {}, {}, false});
  }
  PeerNote n{};
  n.kind = PeerNote::Kind::failed;
  n.code = code;
  n.message = "could not join " + group_.hex();
  note(n);
  depart(code, now);
}

void PeerEngine::on_reg_create(const json& resp, Millis now) {
  auto g = proto::as_group(resp);
  if (!g) {
    PeerNote n{};
    n.kind = PeerNote::Kind::failed;
    n.code = g.code();
    n.message = g.error().message;
    note(n);
    depart(g.code(), now);
    return;
  }
  group_ = g->group_id;
  join_seq_ = g->members.front().join_seq;
  roster_ = {RosterEntry{cfg_.self, join_seq_, cfg_.address}};
  learn(roster_);
  roster_version_ = 1;
  state_ = PlaybackState{};
  anchor_ = now;
  epoch_ = g->controller_epoch;
  leader_ = cfg_.self;
  leader_address_ = cfg_.address;
  lead_reason_ = TransferReason::create;
  lead_ = LeadershipState{cfg_.self, epoch_, {}};
  next_event_seq_ = 0;
  last_heartbeat_sent_ = now;
  set_phase(PeerPhase::leading);
  record(LogKind::join, cfg_.self, json{{"op", "create"}, {"join_seq", join_seq_.value}, {d::kState, state_}}, now);
  note_simple(PeerNote::Kind::became_leader);
  note_simple(PeerNote::Kind::applied);
}

void PeerEngine::on_reg_join(const json& resp, Millis now) {
  if (phase_ != PeerPhase::joining) return;
  auto r = proto::as_join(resp);
  if (!r) {
    if (r.code() == Errc::duplicate_participant) {
      // Already listed: an earlier attempt got through, or we were dropped
      // by a leader but not yet by the registry. Ask who leads.
      if (!joined_registry_) reg(proto::get_members(next_req(), group_), {RegOp::members_for_join, {}, {}, false});
      return;
    }
    if (r.code() == Errc::leader_unreachable) {
      join_retry_or_give_up(r.code(), now);
      return;
    }
    PeerNote n{};
    n.kind = PeerNote::Kind::failed;
    n.code = r.code();
    n.message = r.error().message;
    note(n);
    depart(r.code(), now);
    return;
  }
  joined_registry_ = true;
  join_seq_ = r->join_seq;
  epoch_ = r->epoch;
  leader_ = r->leader.participant;
  leader_address_ = r->leader.address;
  known_addresses_[leader_] = leader_address_;
  send_join_hello(now);
}

void PeerEngine::on_reg_members_for_join(const json& resp, Millis now) {
  if (phase_ != PeerPhase::joining) return;
  auto v = proto::as_members(resp);
  if (!v) {
    join_retry_or_give_up(v.code(), now);
    return;
  }
  const auto self = std::find_if(v->members.begin(), v->members.end(),
                                 [&](const MemberEntry& m) { return m.participant == cfg_.self; });
  if (self == v->members.end()) {
    start_join_request(now);
    return;
  }
  if (self->address != cfg_.address) {
    PeerNote n{};
    n.kind = PeerNote::Kind::failed;
    n.code = Errc::duplicate_participant;
    n.message = cfg_.self.str() + " is already in the group at " + self->address;
    note(n);
    depart(Errc::duplicate_participant, now);
    return;
  }
  if (!joined_registry_) {
    joined_registry_ = true;
    join_seq_ = self->join_seq;
  }
  if (v->controller_epoch > epoch_) epoch_ = v->controller_epoch;
  for (const auto& m : v->members) {
    if (m.participant == v->controller) {
      leader_ = m.participant;
      leader_address_ = m.address;
      known_addresses_[leader_] = leader_address_;
      send_join_hello(now);
      return;
    }
  }
  // Controller gone and not yet replaced; try again later.
  join_deadline_ = now + cfg_.join_timeout_ms;
}

// ---------------------------------------------------------------- inputs

void PeerEngine::on_message(const SessionMessage& m, Millis now) {
  if (phase_ == PeerPhase::idle || phase_ == PeerPhase::departed) return;
  if (m.group_id != group_ || m.sender == cfg_.self) return;

  if (phase_ == PeerPhase::joining) {
    if (const auto* s = std::get_if<SyncSnapshot>(&m.payload); s && m.sender == s->leader) {
      on_snapshot(m, *s, now);
    } else if (const auto* t = std::get_if<ControlTransferPayload>(&m.payload)) {
      if (t->snapshot && t->reason != TransferReason::notice && m.sender == t->leader) {
        on_snapshot(m, *t->snapshot, now);
      } else if (t->reason == TransferReason::notice && t->leader != leader_ && !t->leader_address.empty()) {
        leader_ = t->leader;
        leader_address_ = t->leader_address;
        send_join_hello(now);
      }
    } else if (const auto* g = std::get_if<GoodbyePayload>(&m.payload); g && m.sender == leader_) {
      on_goodbye(m, *g, now);
    }
    return;
  }

  // Hello and snapshot requests come from peers that do not know the
  // current epoch yet, so they bypass fencing.
  if (const auto* h = std::get_if<HelloPayload>(&m.payload)) {
    known_addresses_[m.sender] = h->address;
    on_hello(m, *h, now);
    return;
  }
  if (m.type == MessageType::snapshot_request) {
    on_snapshot_request(m, now);
    return;
  }

  if (m.epoch < epoch_) {
    send_notice(m, now);
    return;
  }

  if (m.epoch > epoch_) {
    if (const auto* t = std::get_if<ControlTransferPayload>(&m.payload)) {
      if (t->reason == TransferReason::notice) {
        if (t->epoch > epoch_) request_snapshot(t->leader, t->leader_address, now);
      } else {
        on_transfer(m, *t, now);
      }
    } else if (const auto* s = std::get_if<SyncSnapshot>(&m.payload)) {
      on_snapshot(m, *s, now);
    } else if (const auto* g = std::get_if<GoodbyePayload>(&m.payload)) {
      on_goodbye(m, *g, now);
    } else if (m.type == MessageType::event || m.type == MessageType::heartbeat ||
               m.type == MessageType::chat) {
      request_snapshot(m.sender, address_of(m.sender), now);
    }
    return;
  }

  // Same epoch from here on.
  if (phase_ == PeerPhase::following && m.sender == leader_) leader_last_recv_ = now;
  if (phase_ == PeerPhase::leading) {
    if (auto it = followers_.find(m.sender); it != followers_.end()) it->second.last_recv = now;
  }

  std::visit(
      [&](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, SyncSnapshot>) {
          on_snapshot(m, p, now);
        } else if constexpr (std::is_same_v<P, EventPayload>) {
          on_event(m, p, now);
        } else if constexpr (std::is_same_v<P, ControlRequestPayload>) {
          on_control_request(m, p, now);
        } else if constexpr (std::is_same_v<P, ControlOutcomePayload>) {
          on_outcome(m, p, now);
        } else if constexpr (std::is_same_v<P, ControlTransferPayload>) {
          on_transfer(m, p, now);
        } else if constexpr (std::is_same_v<P, HeartbeatPayload>) {
          on_heartbeat(m, p, now);
        } else if constexpr (std::is_same_v<P, ChatPayload>) {
          on_chat(m, p, now);
        } else if constexpr (std::is_same_v<P, GoodbyePayload>) {
          on_goodbye(m, p, now);
        }
      },
      m.payload);
}

void PeerEngine::on_registry_response(const json& response, Millis now) {
  const auto req_id = response.value("req_id", std::uint64_t{0});
  auto it = reg_pending_.find(req_id);
  if (it == reg_pending_.end()) return;
  const PendingReg op = it->second;
  reg_pending_.erase(it);
  if (phase_ == PeerPhase::departed || phase_ == PeerPhase::idle) return;

  switch (op.op) {
    case RegOp::create: on_reg_create(response, now); break;
    case RegOp::join: on_reg_join(response, now); break;
    case RegOp::members_for_join: on_reg_members_for_join(response, now); break;
    case RegOp::claim_grant:
    case RegOp::claim_failover: on_reg_claim(op, response, now); break;
    case RegOp::members_failover: on_reg_members_failover(op, response, now); break;
    case RegOp::members_handoff: on_reg_members_handoff(response, now); break;
    case RegOp::members_follow: on_reg_follow(response, now); break;
    case RegOp::set_active: {
      auto r = proto::unwrap(response);
      if (!r) {
        PeerNote n{};
        n.kind = PeerNote::Kind::failed;
        n.code = r.code();
        n.message = r.error().message;
        note(n);
      } else {
        record(LogKind::active_toggle, cfg_.self, json{{"active", op.flag}}, now);
      }
      break;
    }
    case RegOp::leave_self:
      break;
    case RegOp::evict: {
      // Refused: someone else holds a newer epoch. Go find them.
      auto r = proto::unwrap(response);
      const bool deposed = !r && (r.code() == Errc::not_controller || r.code() == Errc::epoch_conflict);
      const bool asking = std::any_of(reg_pending_.begin(), reg_pending_.end(),
                                      [](const auto& p) { return p.second.op == RegOp::members_follow; });
      if (deposed && !asking) {
        reg(proto::get_members(next_req(), group_), {RegOp::members_follow, epoch_, {}, false});
      }
      break;
    }
  }
}

void PeerEngine::on_contact(const ParticipantId& from, Millis now) {
  if (phase_ == PeerPhase::following && from == leader_) leader_last_recv_ = std::max(leader_last_recv_, now);
  if (phase_ == PeerPhase::leading) {
    if (auto it = followers_.find(from); it != followers_.end()) it->second.last_recv = std::max(it->second.last_recv, now);
  }
}

void PeerEngine::tick(Millis now) {
  switch (phase_) {
    case PeerPhase::idle:
    case PeerPhase::departed:
      return;

    case PeerPhase::joining:
      if (join_deadline_ != 0 && now >= join_deadline_) {
        join_deadline_ = 0;
        if (join_attempts_left_-- <= 0) {
          join_attempts_left_ = 0;
          join_retry_or_give_up(Errc::leader_unreachable, now);
        } else if (joined_registry_) {
          join_deadline_ = now + cfg_.join_timeout_ms;
          reg(proto::get_members(next_req(), group_), {RegOp::members_for_join, {}, {}, false});
        } else {
          start_join_request(now);
        }
      }
      return;

    case PeerPhase::following:
      if (now >= leader_last_recv_ + cfg_.dead_after_ms && !pending_claim_) {
        start_failover(now);
        return;
      }
      if (now >= last_heartbeat_sent_ + cfg_.heartbeat_ms) send_heartbeats(now);
      return;

    case PeerPhase::leading: {
      std::vector<ParticipantId> dead;
      for (const auto& [p, f] : followers_) {
        if (now >= f.last_recv + cfg_.dead_after_ms) dead.push_back(p);
      }
      std::sort(dead.begin(), dead.end());
      for (const auto& p : dead) drop_follower(p, "timeout", now);
      if (handoff_ && !handoff_->checking && now >= handoff_->deadline) {
        handoff_->checking = true;
        reg(proto::get_members(next_req(), group_), {RegOp::members_handoff, epoch_, {}, false});
      }
      if (now >= last_heartbeat_sent_ + cfg_.heartbeat_ms) send_heartbeats(now);
      return;
    }

    case PeerPhase::failing_over:
      if (failover_ && !failover_->claiming && !failover_->checking && now >= failover_->deadline) {
        failover_->checking = true;
        reg(proto::get_members(next_req(), group_), {RegOp::members_failover, epoch_, {}, false});
      }
      return;
  }
}

Millis PeerEngine::next_wakeup() const {
  constexpr Millis kNever = ~Millis{0};
  Millis t = kNever;
  switch (phase_) {
    case PeerPhase::idle:
    case PeerPhase::departed:
      break;
    case PeerPhase::joining:
      if (join_deadline_ != 0) t = join_deadline_;
      break;
    case PeerPhase::following:
      t = last_heartbeat_sent_ + cfg_.heartbeat_ms;
      if (!pending_claim_) t = std::min(t, leader_last_recv_ + cfg_.dead_after_ms);
      break;
    case PeerPhase::leading:
      t = last_heartbeat_sent_ + cfg_.heartbeat_ms;
      for (const auto& [p, f] : followers_) t = std::min(t, f.last_recv + cfg_.dead_after_ms);
      if (handoff_ && !handoff_->checking) t = std::min(t, handoff_->deadline);
      break;
    case PeerPhase::failing_over:
      if (failover_ && !failover_->claiming && !failover_->checking) t = failover_->deadline;
      break;
  }
  return t;
}

// ---------------------------------------------------------------- joining

void PeerEngine::on_hello(const SessionMessage& m, const HelloPayload& p, Millis now) {
  if (phase_ != PeerPhase::leading) {
    if (phase_ == PeerPhase::following) {
      send_to(p.address, MessageType::control_transfer,
              ControlTransferPayload{leader_, epoch_, TransferReason::notice, leader_address_, std::nullopt});
    }
    return;
  }
  // A grantee is about to take over with the roster it was given; the
  // joiner retries against whoever leads next.
  if (handoff_) return;
  if (p.manifest_hash != manifest_hash_) {
    send_to(p.address, MessageType::goodbye, GoodbyePayload{"manifest_mismatch"});
    return;
  }
  admit(m.sender, p, now);
}

void PeerEngine::admit(const ParticipantId& who, const HelloPayload& hello, Millis now) {
  auto it = std::find_if(roster_.begin(), roster_.end(), [&](const RosterEntry& r) { return r.participant == who; });
  const bool fresh = it == roster_.end() || it->join_seq != hello.join_seq || it->address != hello.address;
  if (fresh) {
    if (it != roster_.end()) roster_.erase(it);
    roster_.push_back(RosterEntry{who, hello.join_seq, hello.address});
    std::sort(roster_.begin(), roster_.end(),
              [](const RosterEntry& a, const RosterEntry& b) { return a.join_seq < b.join_seq; });
    ++roster_version_;
    record(LogKind::join, who, json{{"op", "admit"}, {"join_seq", hello.join_seq.value}}, now);
    note_simple(PeerNote::Kind::roster);
  }
  auto& f = followers_[who];
  f.last_recv = now;
  f.chat_have = chat_next();
  send_to(hello.address, MessageType::sync_snapshot, snapshot(lead_reason_));
  f.roster_sent = roster_version_;
  if (fresh) send_heartbeats(now);
}

void PeerEngine::on_snapshot_request(const SessionMessage& m, Millis now) {
  if (phase_ != PeerPhase::leading) {
    if (m.epoch < epoch_) send_notice(m, now);
    return;
  }
  const auto* r = roster_find(m.sender);
  if (!r) {
    const auto addr = address_of(m.sender);
    if (!addr.empty()) send_to(addr, MessageType::goodbye, GoodbyePayload{"not_a_member"});
    return;
  }
  auto& f = followers_[m.sender];
  f.last_recv = now;
  send_to(r->address, MessageType::sync_snapshot, snapshot(lead_reason_));
  f.roster_sent = roster_version_;
}

void PeerEngine::on_snapshot(const SessionMessage& m, const SyncSnapshot& s, Millis now) {
  if (m.sender != s.leader || m.epoch != s.leader_epoch) return;
  if (phase_ == PeerPhase::joining) {
    if (!std::any_of(s.roster.begin(), s.roster.end(),
                     [&](const RosterEntry& r) { return r.participant == cfg_.self; })) {
      return;
    }
    epoch_ = s.leader_epoch;
    leader_ = s.leader;
    roster_ = s.roster;
    learn(roster_);
    leader_address_ = address_of(leader_);
    state_ = s.state;
    anchor_ = s.anchor_time;
    transcript_.clear();
    chat_base_ = s.chat_next;
    resolved_.clear();
    join_deadline_ = 0;
    leader_last_recv_ = now;
    last_heartbeat_sent_ = now;
    set_phase(PeerPhase::following);
    record(LogKind::join, cfg_.self,
           json{{"op", rejoining_ ? "rejoin" : "join"}, {"join_seq", join_seq_.value}, {d::kState, state_}}, now);
    note_simple(PeerNote::Kind::adopted);
    note_simple(PeerNote::Kind::applied);
    flush_outbox(now);
    return;
  }
  if (s.leader_epoch > epoch_) adopt(s, now);
}

// ---------------------------------------------------------------- playback

Result<void> PeerEngine::issue(EventKind kind, std::uint64_t target, Millis now) {
  if (phase_ != PeerPhase::leading || handoff_) {
    return make_error(Errc::not_leader, cfg_.self.str() + " does not hold control");
  }
  PlaybackEvent ev;
  ev.kind = kind;
  ev.target = (kind == EventKind::seek || kind == EventKind::slide_change) ? target : 0;
  ev.position_ms = effective_offset(now);
  ev.issued_version = Version{epoch_, next_event_seq_};
  ev.issuer = cfg_.self;
  ev.issued_at = now;
  auto next = apply_event(state_, ev, cfg_.manifest);
  if (!next) return next.error();
  ++next_event_seq_;
  state_ = *next;
  anchor_ = now;
  broadcast(MessageType::event, EventPayload{ev});
  record(log_kind_for(kind), cfg_.self, json{{d::kEvent, ev}}, now);
  note_simple(PeerNote::Kind::applied);
  return {};
}

void PeerEngine::on_event(const SessionMessage& m, const EventPayload& p, Millis now) {
  if (phase_ != PeerPhase::following || m.sender != leader_) return;
  auto next = apply_event(state_, p.event, cfg_.manifest);
  if (!next) return;  // stale duplicate or outside the deck: dropped
  state_ = *next;
  anchor_ = p.event.issued_at;
  record(log_kind_for(p.event.kind), p.event.issuer, json{{d::kEvent, p.event}}, now);
  note_simple(PeerNote::Kind::applied);
}

// ---------------------------------------------------------------- control

Result<std::uint64_t> PeerEngine::request_control(Millis now) {
  if (phase_ == PeerPhase::leading) return make_error(Errc::invalid_argument, "already holding control");
  if (phase_ != PeerPhase::following) return make_error(Errc::invalid_argument, "not following a leader");
  if (own_request_) return make_error(Errc::invalid_argument, "a control request is already pending");
  const auto id = ++next_request_id_;
  own_request_ = OwnRequest{id, epoch_};
  send_to(leader_address_, MessageType::control_request, ControlRequestPayload{id});
  record(LogKind::control_request, cfg_.self, json{{"request_id", id}}, now);
  return id;
}

void PeerEngine::on_control_request(const SessionMessage& m, const ControlRequestPayload& p, Millis now) {
  if (phase_ != PeerPhase::leading) return;
  const auto* r = roster_find(m.sender);
  if (!r) {
    send_to(address_of(m.sender), MessageType::goodbye, GoodbyePayload{"not_a_member"});
    return;
  }
  if (auto it = resolved_.find(m.sender); it != resolved_.end() && it->second.first.request_id == p.request_id) {
    // Re-sent after a leader change; answer from the record.
    send_to(r->address, message_for(it->second.first.outcome),
            ControlOutcomePayload{m.sender, p.request_id, std::nullopt});
    return;
  }
  if (handoff_) {
    resolved_[m.sender] = {ResolvedRequest{m.sender, p.request_id, OutcomeKind::superseded}, epoch_};
    send_to(r->address, MessageType::control_superseded, ControlOutcomePayload{m.sender, p.request_id, std::nullopt});
    record(LogKind::control_supersede, m.sender, json{{"request_id", p.request_id}}, now);
    return;
  }
  if (lead_.is_pending(m.sender)) {
    pending_ids_[m.sender] = p.request_id;
    return;
  }
  lead_.add_request(m.sender);
  pending_ids_[m.sender] = p.request_id;
  record(LogKind::control_request, m.sender, json{{"request_id", p.request_id}}, now);
  PeerNote n{};
  n.kind = PeerNote::Kind::request_pending;
  n.participant = m.sender;
  n.request_id = p.request_id;
  note(n);
}

Result<void> PeerEngine::decide(bool grant, const ParticipantId& requester, Millis now) {
  if (phase_ != PeerPhase::leading || handoff_) {
    return make_error(Errc::not_leader, cfg_.self.str() + " does not hold control");
  }
  auto a = arbitrate(lead_, grant ? Decision::grant(requester) : Decision::deny(requester));
  if (!a) return a.error();

  json superseded = json::array();
  for (const auto& o : a->outcomes) {
    const auto id = pending_ids_[o.participant];
    pending_ids_.erase(o.participant);
    resolved_[o.participant] = {ResolvedRequest{o.participant, id, o.kind}, epoch_};
    if (o.kind == OutcomeKind::superseded) {
      superseded.push_back(json{{"participant", o.participant}, {"request_id", id}});
      send_to(address_of(o.participant), MessageType::control_superseded,
              ControlOutcomePayload{o.participant, id, std::nullopt});
    }
    PeerNote n{};
    n.kind = PeerNote::Kind::request_closed;
    n.participant = o.participant;
    n.request_id = id;
    n.outcome = o.kind;
    note(n);
  }

  const auto id = resolved_[requester].first.request_id;
  if (!grant) {
    lead_ = a->state;
    send_to(address_of(requester), MessageType::control_denied, ControlOutcomePayload{requester, id, std::nullopt});
    record(LogKind::control_deny, requester, json{{"request_id", id}}, now);
    return {};
  }
  lead_.pending_requests.clear();
  handoff_ = Handoff{requester, now + cfg_.handoff_timeout_ms, false};
  send_to(address_of(requester), MessageType::control_granted,
          ControlOutcomePayload{requester, id, snapshot(TransferReason::grant)});
  record(LogKind::control_grant, requester,
         json{{d::kStatus, "sent"}, {"request_id", id}, {"superseded", superseded}}, now);
  return {};
}

Result<void> PeerEngine::transfer(const ParticipantId& target, Millis now) {
  if (phase_ != PeerPhase::leading || handoff_) {
    return make_error(Errc::not_leader, cfg_.self.str() + " does not hold control");
  }
  const auto* r = roster_find(target);
  if (!r || target == cfg_.self) {
    return make_error(Errc::unknown_target, target.str() + " is not another member of this session");
  }
  if (lead_.is_pending(target)) return decide(true, target, now);

  json superseded = json::array();
  for (const auto& q : lead_.pending_requests) {
    const auto id = pending_ids_[q];
    resolved_[q] = {ResolvedRequest{q, id, OutcomeKind::superseded}, epoch_};
    superseded.push_back(json{{"participant", q}, {"request_id", id}});
    send_to(address_of(q), MessageType::control_superseded, ControlOutcomePayload{q, id, std::nullopt});
    PeerNote n{};
    n.kind = PeerNote::Kind::request_closed;
    n.participant = q;
    n.request_id = id;
    n.outcome = OutcomeKind::superseded;
    note(n);
  }
  lead_.pending_requests.clear();
  pending_ids_.clear();
  handoff_ = Handoff{target, now + cfg_.handoff_timeout_ms, false};
  send_to(r->address, MessageType::control_transfer,
          ControlTransferPayload{target, epoch_.next(), TransferReason::handoff, r->address,
                                 snapshot(TransferReason::handoff)});
  record(LogKind::control_transfer, cfg_.self,
         json{{d::kStatus, "sent"}, {"target", target}, {"superseded", superseded}}, now);
  return {};
}

void PeerEngine::on_outcome(const SessionMessage& m, const ControlOutcomePayload& p, Millis now) {
  if (phase_ != PeerPhase::following || m.sender != leader_ || p.requester != cfg_.self) return;
  const bool mine = own_request_ && own_request_->id == p.request_id;
  if (m.type == MessageType::control_granted) {
    if (!mine) return;
    resolve_own(OutcomeKind::granted, now);
    if (!p.snapshot || pending_claim_) return;
    pending_claim_ = PendingClaim{*p.snapshot, TransferReason::grant};
    reg(proto::claim_leadership(next_req(), group_, cfg_.self, epoch_), {RegOp::claim_grant, epoch_, {}, false});
    return;
  }
  if (!mine) return;
  resolve_own(m.type == MessageType::control_denied ? OutcomeKind::denied : OutcomeKind::superseded, now);
}

void PeerEngine::resolve_own(OutcomeKind outcome, Millis now) {
  if (!own_request_) return;
  const auto id = own_request_->id;
  own_request_.reset();
  switch (outcome) {
    case OutcomeKind::granted:
      record(LogKind::control_grant, cfg_.self, json{{d::kStatus, "received"}, {"request_id", id}}, now);
      break;
    case OutcomeKind::denied:
      record(LogKind::control_deny, cfg_.self, json{{d::kStatus, "received"}, {"request_id", id}}, now);
      break;
    case OutcomeKind::superseded:
      record(LogKind::control_supersede, cfg_.self, json{{d::kStatus, "received"}, {"request_id", id}}, now);
      break;
  }
  PeerNote n{};
  n.kind = PeerNote::Kind::outcome;
  n.participant = cfg_.self;
  n.request_id = id;
  n.outcome = outcome;
  note(n);
}

void PeerEngine::on_transfer(const SessionMessage& m, const ControlTransferPayload& p, Millis now) {
  if (p.reason == TransferReason::notice) return;
  if (!p.snapshot) return;

  // Same-epoch handoff: the current leader asks us to take over.
  if (p.reason == TransferReason::handoff && m.epoch == epoch_ && p.leader == cfg_.self &&
      m.sender == leader_ && phase_ == PeerPhase::following) {
    if (pending_claim_) return;
    pending_claim_ = PendingClaim{*p.snapshot, TransferReason::handoff};
    reg(proto::claim_leadership(next_req(), group_, cfg_.self, epoch_), {RegOp::claim_grant, epoch_, {}, false});
    return;
  }

  // A new leader announcing the epoch it won.
  if (m.epoch <= epoch_ || m.sender != p.leader || p.epoch != m.epoch) return;
  const auto& s = *p.snapshot;
  if (s.leader != p.leader || s.leader_epoch != p.epoch) return;
  if (!p.leader_address.empty()) known_addresses_[p.leader] = p.leader_address;
  adopt(s, now);
}

void PeerEngine::on_reg_claim(const PendingReg& op, const json& resp, Millis now) {
  auto e = proto::as_epoch(resp);
  if (op.op == RegOp::claim_grant) {
    if (!pending_claim_ || epoch_ != op.epoch) return;
    if (!e) {
      pending_claim_.reset();
      PeerNote n{};
      n.kind = PeerNote::Kind::failed;
      n.code = e.code();
      n.message = "takeover refused: " + e.error().message;
      note(n);
      if (e.code() == Errc::not_a_member) {
        evicted(now);
      } else {
        reg(proto::get_members(next_req(), group_), {RegOp::members_follow, epoch_, {}, false});
      }
      return;
    }
    if (*e <= epoch_) return;
    auto claim = std::move(*pending_claim_);
    pending_claim_.reset();
    const auto previous = leader_;
    state_ = claim.snapshot.state;
    anchor_ = claim.snapshot.anchor_time;
    roster_ = claim.snapshot.roster;
    learn(roster_);
    for (const auto& r : claim.snapshot.resolved) resolved_[r.requester] = {r, epoch_};
    if (chat_next() > claim.snapshot.chat_next) {
      while (!transcript_.empty() && transcript_.back().chat_seq >= claim.snapshot.chat_next) {
        if (transcript_.back().origin == cfg_.self) outbox_[transcript_.back().client_id] = transcript_.back().text;
        transcript_.pop_back();
      }
    }
    become_leader(*e, claim.reason, previous, now);
    return;
  }

  // Failover claim.
  if (!failover_ || epoch_ != op.epoch) return;
  failover_->claiming = false;
  if (!e) {
    record(LogKind::failover_claim, cfg_.self,
           json{{d::kResult, "conflict"}, {"code", to_string(e.code())}, {"dead", failover_->dead}}, now);
    if (e.code() == Errc::not_a_member || e.code() == Errc::unknown_group) {
      evicted(now);
      return;
    }
    failover_->checking = true;
    reg(proto::get_members(next_req(), group_), {RegOp::members_failover, epoch_, {}, false});
    return;
  }
  const auto dead = failover_->dead;
  roster_.erase(std::remove_if(roster_.begin(), roster_.end(),
                               [&](const RosterEntry& r) { return r.participant == dead; }),
                roster_.end());
  become_leader(*e, TransferReason::failover, dead, now);
  reg(proto::leave_group(next_req(), group_, dead, LeaveFence{cfg_.self, *e}), {RegOp::evict, epoch_, dead, false});
}

void PeerEngine::become_leader(ControlEpoch e, TransferReason reason, const ParticipantId& previous, Millis now) {
  epoch_ = e;
  leader_ = cfg_.self;
  leader_address_ = cfg_.address;
  lead_reason_ = reason;
  lead_ = LeadershipState{cfg_.self, e, {}};
  pending_ids_.clear();
  handoff_.reset();
  failover_.reset();
  next_event_seq_ = 0;
  if (!roster_find(cfg_.self)) {
    roster_.push_back(RosterEntry{cfg_.self, join_seq_, cfg_.address});
    std::sort(roster_.begin(), roster_.end(),
              [](const RosterEntry& a, const RosterEntry& b) { return a.join_seq < b.join_seq; });
  }
  ++roster_version_;
  followers_.clear();
  for (const auto& r : roster_) {
    if (r.participant != cfg_.self) followers_[r.participant] = FollowerInfo{now, 0, 0, 0};
  }
  max_client_.clear();
  for (const auto& c : transcript_) max_client_[c.origin] = std::max(max_client_[c.origin], c.client_id);

  // Our own request, if any, is moot now.
  if (own_request_) resolve_own(OutcomeKind::superseded, now);

  set_phase(PeerPhase::leading);
  if (reason == TransferReason::failover) {
    record(LogKind::failover_claim, cfg_.self,
           json{{d::kResult, d::kWon}, {"previous", previous}, {d::kState, state_}}, now);
  } else {
    record(LogKind::control_grant, cfg_.self,
           json{{d::kStatus, d::kCommitted}, {"reason", to_string(reason)}, {"previous", previous},
                {d::kState, state_}},
           now);
  }
  // Followers keep their cached roster; the first heartbeat brings the new
  // one. Keeps the broadcast small in large groups.
  auto snap = snapshot(reason);
  snap.roster.clear();
  for (const auto& r : roster_) {
    if (r.participant == cfg_.self) continue;
    send_to(r.address, MessageType::control_transfer,
            ControlTransferPayload{cfg_.self, e, reason, cfg_.address, snap});
  }
  last_heartbeat_sent_ = now;
  note_simple(PeerNote::Kind::became_leader);
  note_simple(PeerNote::Kind::applied);
  flush_outbox(now);
}

void PeerEngine::adopt(const SyncSnapshot& s, Millis now) {
  const auto previous = leader_;
  epoch_ = s.leader_epoch;
  leader_ = s.leader;
  if (!s.roster.empty()) {
    roster_ = s.roster;
    learn(roster_);
  }
  leader_address_ = address_of(leader_);
  state_ = s.state;
  anchor_ = s.anchor_time;
  lead_ = LeadershipState{};
  pending_ids_.clear();
  handoff_.reset();
  failover_.reset();
  pending_claim_.reset();
  followers_.clear();
  resolved_.clear();
  for (const auto& r : s.resolved) resolved_[r.requester] = {r, epoch_};

  // Entries the new leader never saw are gone; our own go back in the outbox.
  if (chat_next() > s.chat_next) {
    while (!transcript_.empty() && transcript_.back().chat_seq >= s.chat_next) {
      if (transcript_.back().origin == cfg_.self) outbox_[transcript_.back().client_id] = transcript_.back().text;
      transcript_.pop_back();
    }
    if (transcript_.empty()) chat_base_ = std::min(chat_base_, s.chat_next);
  }

  leader_last_recv_ = now;
  last_heartbeat_sent_ = now;
  set_phase(PeerPhase::following);
  if (s.reason == TransferReason::failover) {
    record(LogKind::failover_claim, leader_,
           json{{d::kResult, d::kWon}, {"previous", previous}, {d::kState, state_}}, now);
  } else {
    record(LogKind::control_grant, leader_,
           json{{d::kStatus, d::kCommitted}, {"reason", to_string(s.reason)}, {"previous", previous},
                {d::kState, state_}},
           now);
  }
  note_simple(PeerNote::Kind::adopted);
  note_simple(PeerNote::Kind::applied);

  if (own_request_) {
    auto it = std::find_if(s.resolved.begin(), s.resolved.end(), [&](const ResolvedRequest& r) {
      return r.requester == cfg_.self && r.request_id == own_request_->id;
    });
    if (it != s.resolved.end()) {
      resolve_own(it->outcome, now);
    } else {
      own_request_->epoch = epoch_;
      send_to(leader_address_, MessageType::control_request, ControlRequestPayload{own_request_->id});
    }
  }
  flush_outbox(now);
  send_heartbeats(now);
}

void PeerEngine::on_reg_members_handoff(const json& resp, Millis now) {
  if (!handoff_ || phase_ != PeerPhase::leading) return;
  handoff_->checking = false;
  auto v = proto::as_members(resp);
  if (!v) {
    handoff_->deadline = now + cfg_.backoff_ms;
    return;
  }
  if (v->controller == cfg_.self && v->controller_epoch == epoch_) {
    const auto target = handoff_->target;
    handoff_.reset();
    record(LogKind::control_transfer, cfg_.self, json{{d::kStatus, "aborted"}, {"target", target}}, now);
    PeerNote n{};
    n.kind = PeerNote::Kind::failed;
    n.code = Errc::target_unreachable;
    n.participant = target;
    n.message = target.str() + " did not take over";
    note(n);
    return;
  }
  // Someone else holds the group now; ask them for the state.
  handoff_->deadline = now + cfg_.backoff_ms;
  for (const auto& m : v->members) {
    if (m.participant == v->controller) request_snapshot(m.participant, m.address, now);
  }
}

void PeerEngine::on_reg_follow(const json& resp, Millis now) {
  auto v = proto::as_members(resp);
  if (!v) return;
  if (!member_of(v->members, cfg_.self)) {
    evicted(now);
    return;
  }
  if (v->controller_epoch <= epoch_) return;
  for (const auto& m : v->members) {
    if (m.participant == v->controller) request_snapshot(m.participant, m.address, now);
  }
}

// ---------------------------------------------------------------- failover

void PeerEngine::start_failover(Millis now) {
  const auto dead = leader_;
  env_.disconnect(leader_address_);
  failover_ = Failover{dead, {dead}, {}, 0, epoch_, false, false};
  set_phase(PeerPhase::failing_over);
  if (!roster_find(cfg_.self)) roster_.push_back(RosterEntry{cfg_.self, join_seq_, cfg_.address});
  decide_failover(roster_, now);
}

void PeerEngine::decide_failover(const std::vector<RosterEntry>& roster, Millis now) {
  auto& f = *failover_;
  std::vector<MemberSeq> ms;
  bool self_listed = false;
  for (const auto& r : roster) {
    if (r.participant == f.dead || !f.excluded.count(r.participant)) ms.push_back(MemberSeq{r.participant, r.join_seq});
    if (r.participant == cfg_.self) self_listed = true;
  }
  if (!self_listed) ms.push_back(MemberSeq{cfg_.self, join_seq_});
  auto designee = decide_failover_leader(ms, f.dead);
  f.designee = designee ? *designee : cfg_.self;
  if (f.designee == cfg_.self) {
    f.claiming = true;
    reg(proto::claim_leadership(next_req(), group_, cfg_.self, f.expected), {RegOp::claim_failover, epoch_, {}, false});
  } else {
    f.deadline = now + cfg_.backoff_ms;
  }
}

void PeerEngine::on_reg_members_failover(const PendingReg& op, const json& resp, Millis now) {
  if (!failover_ || phase_ != PeerPhase::failing_over || op.epoch != epoch_) return;
  failover_->checking = false;
  auto v = proto::as_members(resp);
  if (!v) {
    if (v.code() == Errc::unknown_group) {
      evicted(now);
      return;
    }
    failover_->deadline = now + cfg_.backoff_ms;
    return;
  }
  if (!member_of(v->members, cfg_.self)) {
    evicted(now);
    return;
  }
  const bool controller_alive = member_of(v->members, v->controller);
  if (v->controller_epoch > failover_->expected) {
    if (controller_alive) {
      for (const auto& m : v->members) {
        if (m.participant == v->controller) request_snapshot(m.participant, m.address, now);
      }
      failover_->deadline = now + cfg_.backoff_ms;
      return;
    }
    // The winner vanished too: fail over from it instead.
    failover_->expected = v->controller_epoch;
    failover_->dead = v->controller;
    failover_->excluded = {v->controller};
  } else if (!failover_->designee.empty()) {
    failover_->excluded.insert(failover_->designee);
  }
  decide_failover(roster_from(v->members), now);
}

// ---------------------------------------------------------------- liveness

void PeerEngine::send_heartbeats(Millis now) {
  last_heartbeat_sent_ = now;
  if (phase_ == PeerPhase::leading) {
    for (const auto& r : roster_) {
      if (r.participant == cfg_.self) continue;
      HeartbeatPayload hb{HeartbeatRole::leader, roster_version_, std::nullopt, std::nullopt};
      auto& f = followers_[r.participant];
      if (f.roster_sent != roster_version_) {
        hb.roster = roster_;
        f.roster_sent = roster_version_;
      }
      send_to(r.address, MessageType::heartbeat, hb);
    }
  } else if (phase_ == PeerPhase::following) {
    send_to(leader_address_, MessageType::heartbeat,
            HeartbeatPayload{HeartbeatRole::follower, roster_version_, std::nullopt, chat_next()});
  }
}

void PeerEngine::on_heartbeat(const SessionMessage& m, const HeartbeatPayload& p, Millis now) {
  if (p.role == HeartbeatRole::leader) {
    if (phase_ == PeerPhase::failing_over && failover_ && !failover_->claiming && m.sender == failover_->dead) {
      // The leader was only slow.
      failover_.reset();
      leader_last_recv_ = now;
      leader_address_ = address_of(leader_);
      set_phase(PeerPhase::following);
    }
    if (phase_ != PeerPhase::following || m.sender != leader_) return;
    if (p.roster && *p.roster != roster_) {
      roster_ = *p.roster;
      learn(roster_);
      note_simple(PeerNote::Kind::roster);
    }
    roster_version_ = p.roster_version;
    return;
  }
  if (phase_ != PeerPhase::leading) return;
  if (!roster_find(m.sender)) {
    send_to(address_of(m.sender), MessageType::goodbye, GoodbyePayload{"not_a_member"});
    return;
  }
  auto& f = followers_[m.sender];
  const auto have = p.chat_have.value_or(chat_next());
  f.chat_have = have;
  if (have < chat_next() && (f.chat_resent_at == 0 || now >= f.chat_resent_at + cfg_.dead_after_ms)) {
    f.chat_resent_at = now;
    const auto addr = address_of(m.sender);
    for (const auto& c : transcript_) {
      if (c.chat_seq >= have) send_to(addr, MessageType::chat, ChatPayload{c.origin, c.client_id, c.chat_seq, c.text});
    }
  }
}

void PeerEngine::drop_follower(const ParticipantId& p, const char* reason, Millis now) {
  const auto addr = address_of(p);
  followers_.erase(p);
  roster_.erase(std::remove_if(roster_.begin(), roster_.end(), [&](const RosterEntry& r) { return r.participant == p; }),
                roster_.end());
  if (lead_.is_pending(p)) {
    lead_.pending_requests.erase(std::find(lead_.pending_requests.begin(), lead_.pending_requests.end(), p));
    PeerNote n{};
    n.kind = PeerNote::Kind::request_closed;
    n.participant = p;
    n.request_id = pending_ids_[p];
    n.outcome = OutcomeKind::superseded;
    note(n);
    pending_ids_.erase(p);
  }
  ++roster_version_;
  record(LogKind::leave, p, json{{"participant", p}, {"reason", reason}}, now);
  if (std::string_view(reason) == "timeout") {
    reg(proto::leave_group(next_req(), group_, p, LeaveFence{cfg_.self, epoch_}), {RegOp::evict, epoch_, p, false});
    env_.disconnect(addr);
  }
  note_simple(PeerNote::Kind::roster);
  send_heartbeats(now);
}

void PeerEngine::on_goodbye(const SessionMessage& m, const GoodbyePayload& p, Millis now) {
  if (p.reason == "not_a_member" && m.epoch > epoch_ && phase_ != PeerPhase::joining) {
    // A leader from a newer epoch no longer counts us in.
    evicted(now);
    return;
  }
  if (phase_ == PeerPhase::leading) {
    if (roster_find(m.sender)) drop_follower(m.sender, "goodbye", now);
    return;
  }
  if (m.sender != leader_) return;
  if (p.reason == "manifest_mismatch") {
    if (joined_registry_) {
      reg(proto::leave_group(next_req(), group_, cfg_.self), {RegOp::leave_self, {}, {}, false});
    }
    PeerNote n{};
    n.kind = PeerNote::Kind::failed;
    n.code = Errc::manifest_mismatch;
    n.message = "courseware differs from the session's";
    note(n);
    depart(Errc::manifest_mismatch, now);
  } else if (p.reason == "not_a_member") {
    evicted(now);
  }
}

void PeerEngine::evicted(Millis now) {
  if (phase_ == PeerPhase::departed) return;
  record(LogKind::leave, cfg_.self, json{{"participant", cfg_.self}, {"reason", "evicted"}}, now);
  note_simple(PeerNote::Kind::evicted);
  own_request_.reset();
  handoff_.reset();
  failover_.reset();
  pending_claim_.reset();
  followers_.clear();
  lead_ = LeadershipState{};
  pending_ids_.clear();
  if (!cfg_.rejoin_on_evict) {
    depart(Errc::not_a_member, now);
    return;
  }
  env_.disconnect(leader_address_);
  rejoining_ = true;
  join_attempts_left_ = cfg_.join_attempts;
  set_phase(PeerPhase::joining);
  start_join_request(now);
}

void PeerEngine::depart(std::optional<Errc> reason, Millis now) {
  (void)now;
  departure_reason_ = reason;
  handoff_.reset();
  failover_.reset();
  pending_claim_.reset();
  followers_.clear();
  set_phase(PeerPhase::departed);
}

Result<void> PeerEngine::leave(Millis now) {
  switch (phase_) {
    case PeerPhase::idle:
    case PeerPhase::departed:
      return make_error(Errc::invalid_argument, "not in a session");
    case PeerPhase::leading:
      if (roster_.size() > 1) {
        return make_error(Errc::leader_must_transfer, "transfer control before leaving a session with other members");
      }
      break;
    case PeerPhase::following:
      send_to(leader_address_, MessageType::goodbye, GoodbyePayload{"leave"});
      break;
    case PeerPhase::joining:
    case PeerPhase::failing_over:
      break;
  }
  if (phase_ != PeerPhase::joining || joined_registry_) {
    reg(proto::leave_group(next_req(), group_, cfg_.self), {RegOp::leave_self, {}, {}, false});
  }
  record(LogKind::leave, cfg_.self, json{{"participant", cfg_.self}, {"reason", "goodbye"}}, now);
  depart(std::nullopt, now);
  return {};
}

Result<void> PeerEngine::set_active(bool active, Millis now) {
  (void)now;
  if (phase_ != PeerPhase::leading) return make_error(Errc::not_leader, "only the session leader toggles activity");
  reg(proto::set_active(next_req(), group_, active, cfg_.self), {RegOp::set_active, epoch_, {}, active});
  return {};
}

// ---------------------------------------------------------------- chat

Result<void> PeerEngine::send_chat(const std::string& text, Millis now) {
  if (text.size() > cfg_.max_chat_bytes) {
    return make_error(Errc::message_too_large,
                      "chat text is " + std::to_string(text.size()) + " bytes; limit is " +
                          std::to_string(cfg_.max_chat_bytes));
  }
  if (phase_ != PeerPhase::leading && phase_ != PeerPhase::following && phase_ != PeerPhase::failing_over) {
    return make_error(Errc::invalid_argument, "not in a session");
  }
  const auto id = ++next_client_id_;
  outbox_[id] = text;
  if (phase_ == PeerPhase::leading) {
    assign_chat(cfg_.self, id, text, now);
  } else if (phase_ == PeerPhase::following) {
    send_to(leader_address_, MessageType::chat, ChatPayload{cfg_.self, id, std::nullopt, text});
  }
  return {};
}

void PeerEngine::assign_chat(const ParticipantId& origin, std::uint64_t client_id, const std::string& text,
                             Millis now) {
  auto& seen = max_client_[origin];
  if (client_id <= seen) return;
  seen = client_id;
  const auto seq = chat_next();
  transcript_.push_back(ChatEntry{seq, origin, client_id, text});
  if (origin == cfg_.self) outbox_.erase(client_id);
  broadcast(MessageType::chat, ChatPayload{origin, client_id, seq, text});
  record(LogKind::chat, origin,
         json{{d::kOrigin, origin}, {"client_id", client_id}, {"chat_seq", seq}, {"text", text}}, now);
  PeerNote n{};
  n.kind = PeerNote::Kind::chat;
  n.participant = origin;
  n.request_id = seq;
  note(n);
}

void PeerEngine::on_chat(const SessionMessage& m, const ChatPayload& p, Millis now) {
  if (phase_ == PeerPhase::leading) {
    if (p.chat_seq || p.origin != m.sender) return;
    if (!roster_find(m.sender)) {
      send_to(address_of(m.sender), MessageType::goodbye, GoodbyePayload{"not_a_member"});
      return;
    }
    if (p.text.size() > cfg_.max_chat_bytes) return;
    assign_chat(p.origin, p.client_id, p.text, now);
    return;
  }
  if (phase_ != PeerPhase::following || m.sender != leader_ || !p.chat_seq) return;
  if (*p.chat_seq != chat_next()) return;  // duplicate, or a gap the leader will refill
  transcript_.push_back(ChatEntry{*p.chat_seq, p.origin, p.client_id, p.text});
  if (p.origin == cfg_.self) outbox_.erase(p.client_id);
  record(LogKind::chat, p.origin,
         json{{d::kOrigin, p.origin}, {"client_id", p.client_id}, {"chat_seq", *p.chat_seq}, {"text", p.text}}, now);
  PeerNote n{};
  n.kind = PeerNote::Kind::chat;
  n.participant = p.origin;
  n.request_id = *p.chat_seq;
  note(n);
}

void PeerEngine::flush_outbox(Millis now) {
  if (phase_ == PeerPhase::leading) {
    auto pending = outbox_;
    for (const auto& [id, text] : pending) {
      if (id <= max_client_[cfg_.self]) {
        outbox_.erase(id);
      } else {
        assign_chat(cfg_.self, id, text, now);
      }
    }
  } else if (phase_ == PeerPhase::following) {
    for (const auto& [id, text] : outbox_) {
      send_to(leader_address_, MessageType::chat, ChatPayload{cfg_.self, id, std::nullopt, text});
    }
  }
}

}  // namespace climanic
