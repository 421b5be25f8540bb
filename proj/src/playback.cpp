#include "climanic/playback.hpp"

#include <algorithm>

namespace climanic {

std::string_view to_string(EventKind kind) noexcept {
  switch (kind) {
    case EventKind::play: return "play";
    case EventKind::pause: return "pause";
    case EventKind::seek: return "seek";
    case EventKind::slide_change: return "slide_change";
  }
  return "play";
}

std::optional<EventKind> event_kind_from_string(std::string_view name) noexcept {
  if (name == "play") return EventKind::play;
  if (name == "pause") return EventKind::pause;
  if (name == "seek") return EventKind::seek;
  if (name == "slide_change") return EventKind::slide_change;
  return std::nullopt;
}

namespace {

// Moving the offset re-derives the slide; leaving it in place keeps the slide
// chosen by an earlier SlideChange (matters for slides sharing a start time).
void move_offset(PlaybackState& s, Millis offset, const CoursewareManifest& m) {
  if (offset != s.media_offset_ms) s.slide_index = m.slide_at(offset);
  s.media_offset_ms = offset;
}

}  // namespace

Result<PlaybackState> apply_event(const PlaybackState& state, const PlaybackEvent& ev,
                                  const CoursewareManifest& manifest) {
  if (state.version && !(ev.issued_version > *state.version)) {
    return make_error(Errc::stale_event);
  }
  PlaybackState next = state;
  switch (ev.kind) {
    case EventKind::play:
    case EventKind::pause:
      if (ev.position_ms > manifest.duration_ms) {
        return make_error(Errc::out_of_bounds, "position beyond lecture duration");
      }
      move_offset(next, ev.position_ms, manifest);
      next.playing = ev.kind == EventKind::play;
      break;
    case EventKind::seek:
      if (ev.target > manifest.duration_ms) {
        return make_error(Errc::out_of_bounds, "seek beyond lecture duration");
      }
      next.media_offset_ms = ev.target;
      next.slide_index = manifest.slide_at(ev.target);
      break;
    case EventKind::slide_change:
      if (ev.target >= manifest.slide_count) {
        return make_error(Errc::out_of_bounds, "slide index beyond slide_count");
      }
      next.slide_index = ev.target;
      next.media_offset_ms = manifest.slide_start_ms[ev.target];
      break;
  }
  next.version = ev.issued_version;
  return next;
}

Millis effective_offset(const PlaybackState& state, Millis anchor_time, Millis now,
                        const CoursewareManifest& manifest) {
  if (!state.playing) return state.media_offset_ms;
  const Millis elapsed = now > anchor_time ? now - anchor_time : 0;
  const Millis room = manifest.duration_ms > state.media_offset_ms
                          ? manifest.duration_ms - state.media_offset_ms
                          : 0;
  return state.media_offset_ms + std::min(elapsed, room);
}

}  // namespace climanic
