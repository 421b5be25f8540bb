#pragma once

// The shared courseware view and its transition function. Every node applies
// the same events through apply_event, so this file is the whole of what
// "synchronized" means.

#include <cstdint>
#include <optional>
#include <string_view>

#include "climanic/manifest.hpp"
#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic {

struct PlaybackState {
  std::uint64_t slide_index = 0;
  Millis media_offset_ms = 0;
  bool playing = false;
  /// Empty before the first event; an empty version is older than any event.
  std::optional<Version> version;

  friend bool operator==(const PlaybackState&, const PlaybackState&) = default;
};

enum class EventKind { play, pause, seek, slide_change };

std::string_view to_string(EventKind kind) noexcept;
std::optional<EventKind> event_kind_from_string(std::string_view name) noexcept;

struct PlaybackEvent {
  EventKind kind = EventKind::play;
  /// Seek: target offset in ms. SlideChange: target slide index.
  std::uint64_t target = 0;
  /// Play/Pause: the issuer's effective offset at issue time. Pause freezes
  /// the timeline here; Play resumes from here.
  Millis position_ms = 0;
  Version issued_version;
  ParticipantId issuer;
  /// Issuer's logical clock when the event was issued; receivers anchor the
  /// running timeline at this instant.
  Millis issued_at = 0;

  friend bool operator==(const PlaybackEvent&, const PlaybackEvent&) = default;
};

/// Successor state, or StaleEvent (version not newer) / OutOfBounds (target
/// outside the manifest). On error the caller's state is untouched.
Result<PlaybackState> apply_event(const PlaybackState& state, const PlaybackEvent& ev,
                                  const CoursewareManifest& manifest);

/// Offset on the running timeline at `now`; frozen while paused and
/// saturating at the lecture duration. `now` earlier than `anchor_time` is
/// treated as `anchor_time`.
Millis effective_offset(const PlaybackState& state, Millis anchor_time, Millis now,
                        const CoursewareManifest& manifest);

}  // namespace climanic
