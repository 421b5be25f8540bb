#include "climanic/codec.hpp"

#include <stdexcept>

namespace climanic {

using nlohmann::json;

namespace {

// Decoders surface every malformed field as an exception; wire-level callers
// catch std::exception and turn it into Errc::protocol_error.
[[noreturn]] void bad(const std::string& what) { throw std::invalid_argument(what); }

}  // namespace

void to_json(json& j, const ParticipantId& p) { j = p.str(); }

void from_json(const json& j, ParticipantId& p) {
  auto r = ParticipantId::parse(j.get<std::string>());
  if (!r) bad(r.error().message);
  p = std::move(r).value();
}

void to_json(json& j, const GroupId& g) { j = g.hex(); }

void from_json(const json& j, GroupId& g) {
  auto r = GroupId::parse(j.get<std::string>());
  if (!r) bad(r.error().message);
  g = r.value();
}

void to_json(json& j, const JoinSeq& s) { j = s.value; }
void from_json(const json& j, JoinSeq& s) { s.value = j.get<std::uint64_t>(); }

void to_json(json& j, const ControlEpoch& e) { j = e.value; }
void from_json(const json& j, ControlEpoch& e) { e.value = j.get<std::uint64_t>(); }

void to_json(json& j, const Version& v) { j = json{{"epoch", v.epoch.value}, {"seq", v.seq}}; }

void from_json(const json& j, Version& v) {
  v.epoch.value = j.at("epoch").get<std::uint64_t>();
  v.seq = j.at("seq").get<std::uint64_t>();
}

void to_json(json& j, const PlaybackState& s) {
  j = json{{"slide_index", s.slide_index},
           {"media_offset_ms", s.media_offset_ms},
           {"playing", s.playing},
           {"version", s.version ? json(*s.version) : json(nullptr)}};
}

void from_json(const json& j, PlaybackState& s) {
  s.slide_index = j.at("slide_index").get<std::uint64_t>();
  s.media_offset_ms = j.at("media_offset_ms").get<Millis>();
  s.playing = j.at("playing").get<bool>();
  const auto& v = j.at("version");
  if (v.is_null()) {
    s.version.reset();
  } else {
    s.version = v.get<Version>();
  }
}

void to_json(json& j, const PlaybackEvent& e) {
  j = json{{"kind", to_string(e.kind)},
           {"target", e.target},
           {"position_ms", e.position_ms},
           {"version", e.issued_version},
           {"issuer", e.issuer},
           {"issued_at", e.issued_at}};
}

void from_json(const json& j, PlaybackEvent& e) {
  auto kind = event_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) bad("unknown playback event kind");
  e.kind = *kind;
  e.target = j.at("target").get<std::uint64_t>();
  e.position_ms = j.at("position_ms").get<Millis>();
  e.issued_version = j.at("version").get<Version>();
  e.issuer = j.at("issuer").get<ParticipantId>();
  e.issued_at = j.at("issued_at").get<Millis>();
}

void to_json(json& j, const MemberSeq& m) {
  j = json{{"participant", m.participant}, {"join_seq", m.join_seq}};
}

void from_json(const json& j, MemberSeq& m) {
  m.participant = j.at("participant").get<ParticipantId>();
  m.join_seq = j.at("join_seq").get<JoinSeq>();
}

}  // namespace climanic
