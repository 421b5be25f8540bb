#pragma once

// nlohmann::json bindings for the domain types. Field names are lowercase
// snake_case; decoders ignore fields they do not know.

#include <nlohmann/json.hpp>

#include "climanic/leadership.hpp"
#include "climanic/playback.hpp"
#include "climanic/types.hpp"

namespace climanic {

void to_json(nlohmann::json& j, const ParticipantId& p);
void from_json(const nlohmann::json& j, ParticipantId& p);

void to_json(nlohmann::json& j, const GroupId& g);
void from_json(const nlohmann::json& j, GroupId& g);

void to_json(nlohmann::json& j, const JoinSeq& s);
void from_json(const nlohmann::json& j, JoinSeq& s);

void to_json(nlohmann::json& j, const ControlEpoch& e);
void from_json(const nlohmann::json& j, ControlEpoch& e);

void to_json(nlohmann::json& j, const Version& v);
void from_json(const nlohmann::json& j, Version& v);

void to_json(nlohmann::json& j, const PlaybackState& s);
void from_json(const nlohmann::json& j, PlaybackState& s);

void to_json(nlohmann::json& j, const PlaybackEvent& e);
void from_json(const nlohmann::json& j, PlaybackEvent& e);

void to_json(nlohmann::json& j, const MemberSeq& m);
void from_json(const nlohmann::json& j, MemberSeq& m);

/// Compact dump with sorted keys and raw UTF-8: the canonical byte form used
/// on the wire, in logs and in registry persistence.
inline std::string canonical(const nlohmann::json& j) { return j.dump(); }

}  // namespace climanic
