#pragma once

// Test-only reference computations. Each one re-derives a quantity the long
// way (linear scans, 1 ms clock stepping, pairwise comparison) and must not
// call into the implementation it checks.

#include <cstdint>
#include <optional>
#include <random>
#include <utility>
#include <vector>

#include "climanic/leadership.hpp"
#include "climanic/playback.hpp"

namespace climanic::testing_oracles {

/// Greatest i with slide_start_ms[i] <= offset, by linear scan.
inline std::uint64_t brute_force_slide(const CoursewareManifest& m, Millis offset) {
  std::uint64_t best = 0;
  for (std::uint64_t i = 0; i < m.slide_start_ms.size(); ++i) {
    if (m.slide_start_ms[i] <= offset) best = i;
  }
  return best;
}

/// Slide/offset coherence. Slides sharing a start time are interchangeable,
/// so the check compares start times rather than indices.
inline bool coherent(const CoursewareManifest& m, const PlaybackState& s) {
  if (s.slide_index >= m.slide_count) return false;
  if (m.slide_start_ms[s.slide_index] > s.media_offset_ms) return false;
  return m.slide_start_ms[s.slide_index] == m.slide_start_ms[brute_force_slide(m, s.media_offset_ms)];
}

/// Advances a playing timeline one millisecond at a time.
inline Millis step_clock_offset(const PlaybackState& s, const CoursewareManifest& m, Millis elapsed) {
  Millis offset = s.media_offset_ms;
  if (!s.playing) return offset;
  for (Millis t = 0; t < elapsed; ++t) {
    if (offset < m.duration_ms) ++offset;
  }
  return offset;
}

/// Survivor whose join_seq is smaller than every other survivor's.
inline std::optional<ParticipantId> pairwise_min_survivor(const std::vector<MemberSeq>& ms, std::size_t departed) {
  for (std::size_t i = 0; i < ms.size(); ++i) {
    if (i == departed) continue;
    bool smallest = true;
    for (std::size_t j = 0; j < ms.size(); ++j) {
      if (j == departed || j == i) continue;
      if (!(ms[i].join_seq.value < ms[j].join_seq.value)) smallest = false;
    }
    if (smallest) return ms[i].participant;
  }
  return std::nullopt;
}

/// Manifest with 1..40 slides; starts are non-decreasing and may repeat.
inline CoursewareManifest random_manifest(std::mt19937_64& rng) {
  CoursewareManifest m;
  m.course_id = "casa101";
  m.lecture_id = "rand";
  m.slide_count = 1 + rng() % 40;
  m.duration_ms = 1000 + rng() % 3'600'000;
  m.slide_start_ms.assign(m.slide_count, 0);
  for (std::uint64_t i = 1; i < m.slide_count; ++i) {
    m.slide_start_ms[i] = (rng() % 8 == 0) ? m.slide_start_ms[i - 1] : rng() % (m.duration_ms + 1);
  }
  std::sort(m.slide_start_ms.begin(), m.slide_start_ms.end());
  m.slide_start_ms[0] = 0;
  return m;
}

/// A coherent starting state and an event with a newer version. Targets
/// occasionally fall outside the manifest to exercise OutOfBounds.
inline std::pair<PlaybackState, PlaybackEvent> random_state_event(std::mt19937_64& rng,
                                                                  const CoursewareManifest& m) {
  PlaybackState s;
  s.media_offset_ms = rng() % (m.duration_ms + 1);
  s.slide_index = brute_force_slide(m, s.media_offset_ms);
  s.playing = (rng() & 1) != 0;
  s.version = Version{ControlEpoch{rng() % 4}, rng() % 100};

  PlaybackEvent e;
  e.issuer = ParticipantId::of("L");
  e.issued_version = Version{ControlEpoch{s.version->epoch.value + 1}, rng() % 100};
  switch (rng() % 4) {
    case 0:
      e.kind = EventKind::play;
      e.position_ms = rng() % (m.duration_ms + 2);
      break;
    case 1:
      e.kind = EventKind::pause;
      e.position_ms = rng() % (m.duration_ms + 2);
      break;
    case 2:
      e.kind = EventKind::seek;
      e.target = rng() % (m.duration_ms + 2);
      break;
    default:
      e.kind = EventKind::slide_change;
      e.target = rng() % (m.slide_count + 1);
      break;
  }
  return {s, e};
}

}  // namespace climanic::testing_oracles
