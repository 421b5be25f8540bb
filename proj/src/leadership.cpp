#include "climanic/leadership.hpp"

#include <algorithm>

namespace climanic {

bool LeadershipState::add_request(const ParticipantId& p) {
  if (p == leader || is_pending(p)) return false;
  pending_requests.push_back(p);
  return true;
}

bool LeadershipState::is_pending(const ParticipantId& p) const {
  return std::find(pending_requests.begin(), pending_requests.end(), p) != pending_requests.end();
}

std::string_view to_string(OutcomeKind kind) noexcept {
  switch (kind) {
    case OutcomeKind::granted: return "granted";
    case OutcomeKind::denied: return "denied";
    case OutcomeKind::superseded: return "superseded";
  }
  return "denied";
}

Result<Arbitration> arbitrate(const LeadershipState& lead, const Decision& decision) {
  if (!lead.is_pending(decision.participant)) {
    return make_error(Errc::unknown_requester, decision.participant.str() + " has no pending request");
  }
  Arbitration out;
  if (decision.kind == Decision::Kind::grant) {
    out.state.leader = decision.participant;
    out.state.epoch = lead.epoch.next();
    out.outcomes.push_back({OutcomeKind::granted, decision.participant});
    for (const auto& q : lead.pending_requests) {
      if (q != decision.participant) out.outcomes.push_back({OutcomeKind::superseded, q});
    }
  } else {
    out.state = lead;
    std::erase(out.state.pending_requests, decision.participant);
    out.outcomes.push_back({OutcomeKind::denied, decision.participant});
  }
  return out;
}

Result<ParticipantId> decide_failover_leader(std::span<const MemberSeq> members,
                                             const ParticipantId& departed) {
  const MemberSeq* best = nullptr;
  for (const auto& m : members) {
    if (m.participant == departed) continue;
    if (best == nullptr || m.join_seq < best->join_seq) best = &m;
  }
  if (best == nullptr) return make_error(Errc::empty_group, "no surviving members");
  return best->participant;
}

}  // namespace climanic
