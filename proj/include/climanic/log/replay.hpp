#pragma once

// Replay and navigation summary over one peer's log.
//
// Playback records (play/pause/seek/slide_change) carry the applied event
// under detail.event and are re-applied through apply_event. Records that
// install a snapshot (the peer's own join, adopting a new leader) carry the
// installed state under detail.state and reset the replay to it.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/log/event.hpp"
#include "climanic/manifest.hpp"
#include "climanic/playback.hpp"
#include "climanic/result.hpp"

namespace climanic {

struct LogSummary {
  std::uint64_t records = 0;
  std::map<std::string, std::uint64_t> counts_by_kind;
  /// Times the epoch column rises from one record to the next, not counting
  /// the peer's own join records.
  std::uint64_t control_transfers = 0;
  /// Independent tally: committed grants plus won failover claims.
  std::uint64_t grants_committed = 0;
  std::uint64_t failover_wins = 0;
  std::uint64_t slide_changes = 0;
  std::uint64_t non_sequential_slide_changes = 0;
  std::uint64_t seeks = 0;
  std::map<std::string, std::uint64_t> chat_by_participant;
  std::map<std::string, std::uint64_t> playback_by_participant;

  double non_sequential_fraction() const {
    return slide_changes == 0 ? 0.0
                              : static_cast<double>(non_sequential_slide_changes) / static_cast<double>(slide_changes);
  }
};

nlohmann::json to_json(const LogSummary& s);

struct ReplayResult {
  PlaybackState state;
  LogSummary summary;
};

/// GapDetected when record seqs are not 0,1,2,... Re-applying an event
/// that apply_event rejects is CorruptLog: a peer only logs what it applied.
Result<ReplayResult> replay(const std::vector<LogEvent>& log, const CoursewareManifest& manifest);

/// Field names shared by the writer side (peer engine) and replay.
namespace log_detail {
inline constexpr const char* kEvent = "event";
inline constexpr const char* kState = "state";
inline constexpr const char* kStatus = "status";
inline constexpr const char* kCommitted = "committed";
inline constexpr const char* kResult = "result";
inline constexpr const char* kWon = "won";
inline constexpr const char* kOrigin = "origin";
}  // namespace log_detail

}  // namespace climanic
