#include "climanic/log/event.hpp"

#include <array>

#include "climanic/codec.hpp"

namespace climanic {

namespace {

constexpr std::array<std::pair<LogKind, std::string_view>, 14> kNames = {{
    {LogKind::join, "join"},
    {LogKind::leave, "leave"},
    {LogKind::play, "play"},
    {LogKind::pause, "pause"},
    {LogKind::seek, "seek"},
    {LogKind::slide_change, "slide_change"},
    {LogKind::control_request, "control_request"},
    {LogKind::control_grant, "control_grant"},
    {LogKind::control_deny, "control_deny"},
    {LogKind::control_supersede, "control_supersede"},
    {LogKind::control_transfer, "control_transfer"},
    {LogKind::failover_claim, "failover_claim"},
    {LogKind::chat, "chat"},
    {LogKind::active_toggle, "active_toggle"},
}};

}  // namespace

std::string_view to_string(LogKind k) noexcept {
  for (const auto& [kind, name] : kNames) {
    if (kind == k) return name;
  }
  return "join";
}

std::optional<LogKind> log_kind_from_string(std::string_view name) noexcept {
  for (const auto& [kind, n] : kNames) {
    if (n == name) return kind;
  }
  return std::nullopt;
}

void to_json(nlohmann::json& j, const LogEvent& e) {
  j = nlohmann::json{{"seq", e.seq},     {"at", e.at},       {"group_id", e.group_id}, {"actor", e.actor},
                     {"kind", to_string(e.kind)}, {"epoch", e.epoch}, {"detail", e.detail}};
}

Result<LogEvent> log_event_from_json(const nlohmann::json& j) {
  try {
    LogEvent e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.at = j.at("at").get<Millis>();
    e.group_id = j.at("group_id").get<GroupId>();
    e.actor = j.at("actor").get<ParticipantId>();
    auto kind = log_kind_from_string(j.at("kind").get<std::string>());
    if (!kind) return make_error(Errc::corrupt_log, "unknown log kind");
    e.kind = *kind;
    e.epoch = j.at("epoch").get<ControlEpoch>();
    e.detail = j.at("detail");
    return e;
  } catch (const std::exception& ex) {
    return make_error(Errc::corrupt_log, ex.what());
  }
}

}  // namespace climanic
