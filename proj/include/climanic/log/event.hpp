#pragma once

// One telemetry record. Peers and the registry hand these to a sink; the
// writer in log/writer.hpp stamps the per-file record seq.

#include <cstdint>
#include <functional>
#include <optional>
#include <string_view>

#include <nlohmann/json.hpp>

#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic {

enum class LogKind {
  join,
  leave,
  play,
  pause,
  seek,
  slide_change,
  control_request,
  control_grant,
  control_deny,
  control_supersede,
  control_transfer,
  failover_claim,
  chat,
  active_toggle,
};

std::string_view to_string(LogKind k) noexcept;
std::optional<LogKind> log_kind_from_string(std::string_view name) noexcept;

struct LogEvent {
  /// Position in its log file, 0-based and gap-free. Assigned on append.
  std::uint64_t seq = 0;
  Millis at = 0;
  GroupId group_id;
  ParticipantId actor;
  LogKind kind = LogKind::join;
  ControlEpoch epoch;
  nlohmann::json detail = nlohmann::json::object();

  friend bool operator==(const LogEvent&, const LogEvent&) = default;
};

void to_json(nlohmann::json& j, const LogEvent& e);
Result<LogEvent> log_event_from_json(const nlohmann::json& j);

using LogSink = std::function<void(LogEvent)>;

}  // namespace climanic
