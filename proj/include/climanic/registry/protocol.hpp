#pragma once

// Registry request/response records. Each request is a JSON object with a
// `type` naming the operation and a `req_id` the response echoes:
//
//   {"req_id":7,"type":"claim_leadership","group_id":"…","claimant":"bob","expected_epoch":4}
//   {"ok":true,"req_id":7,"result":{"epoch":5},"type":"claim_leadership"}
//   {"error":{"code":"epoch_conflict","message":"…"},"ok":false,"req_id":7,"type":"claim_leadership"}
//
// The same records travel over TCP (length-prefixed frames) and through the
// simulator.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/registry/registry.hpp"
#include "climanic/result.hpp"

namespace climanic::registry_proto {

using nlohmann::json;

// Request builders.
json create_group(std::uint64_t req_id, const std::string& course_id, const ParticipantId& creator,
                  const std::string& address);
json list_active_groups(std::uint64_t req_id, const std::string& course_id);
json join_group(std::uint64_t req_id, const GroupId& g, const ParticipantId& p, const std::string& address);
json leave_group(std::uint64_t req_id, const GroupId& g, const ParticipantId& p,
                 const std::optional<LeaveFence>& fence = std::nullopt);
json set_active(std::uint64_t req_id, const GroupId& g, bool active, const ParticipantId& by);
json claim_leadership(std::uint64_t req_id, const GroupId& g, const ParticipantId& claimant, ControlEpoch expected);
json get_members(std::uint64_t req_id, const GroupId& g);

/// Server side: executes one request. Malformed requests get a
/// protocol_error response (req_id 0 when it cannot be read).
json handle(Registry& registry, const json& request);

/// True when a request mutates registry state if it succeeds.
bool is_mutation(const std::string& type);

/// Client side: the `result` object, or the error the registry reported.
Result<json> unwrap(const json& response);

// Typed result decoders.
Result<GroupRecord> as_group(const json& response);
Result<std::vector<GroupSummary>> as_groups(const json& response);
Result<JoinResult> as_join(const json& response);
Result<std::size_t> as_member_count(const json& response);
Result<ControlEpoch> as_epoch(const json& response);
Result<MembersView> as_members(const json& response);

}  // namespace climanic::registry_proto
