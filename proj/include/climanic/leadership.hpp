#pragma once

#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic {

struct LeadershipState {
  ParticipantId leader;
  ControlEpoch epoch;
  /// Requesters in arrival order; never contains the leader.
  std::vector<ParticipantId> pending_requests;

  /// Appends `p` unless it is the leader or already pending.
  bool add_request(const ParticipantId& p);
  bool is_pending(const ParticipantId& p) const;

  friend bool operator==(const LeadershipState&, const LeadershipState&) = default;
};

enum class OutcomeKind { granted, denied, superseded };

std::string_view to_string(OutcomeKind kind) noexcept;

struct Outcome {
  OutcomeKind kind;
  ParticipantId participant;
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

struct Decision {
  enum class Kind { grant, deny } kind;
  ParticipantId participant;

  static Decision grant(ParticipantId p) { return {Kind::grant, std::move(p)}; }
  static Decision deny(ParticipantId p) { return {Kind::deny, std::move(p)}; }
};

struct Arbitration {
  LeadershipState state;
  std::vector<Outcome> outcomes;
};

/// Grant hands control to the requester, bumps the epoch and supersedes every
/// other pending request. Deny drops one requester. UnknownRequester when the
/// participant is not pending.
Result<Arbitration> arbitrate(const LeadershipState& lead, const Decision& decision);

struct MemberSeq {
  ParticipantId participant;
  JoinSeq join_seq;
};

/// The survivor that joined earliest, or EmptyGroup when `departed` was the
/// last member.
Result<ParticipantId> decide_failover_leader(std::span<const MemberSeq> members,
                                             const ParticipantId& departed);

}  // namespace climanic
