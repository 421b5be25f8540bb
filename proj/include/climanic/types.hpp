#pragma once

// Identifiers and counters shared by the session model, the registry and the
// peer engine.

#include <array>
#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <string_view>

#include "climanic/result.hpp"

namespace climanic {

/// Logical milliseconds. Virtual time in the simulator, Unix-epoch ms live.
using Millis = std::uint64_t;

/// A participant's name. Non-empty, at most 64 bytes, no control characters;
/// compared by exact byte equality.
class ParticipantId {
 public:
  static constexpr std::size_t kMaxBytes = 64;

  ParticipantId() = default;

  static Result<ParticipantId> parse(std::string_view name);
  /// For literals in code and tests; throws std::invalid_argument on a bad name.
  static ParticipantId of(std::string_view name);

  const std::string& str() const noexcept { return name_; }
  bool empty() const noexcept { return name_.empty(); }

  friend auto operator<=>(const ParticipantId&, const ParticipantId&) = default;
  friend bool operator==(const ParticipantId&, const ParticipantId&) = default;
  friend std::ostream& operator<<(std::ostream& os, const ParticipantId& p) { return os << p.name_; }

 private:
  explicit ParticipantId(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

/// Opaque 128-bit group identifier rendered as 32 lowercase hex characters.
class GroupId {
 public:
  GroupId() = default;

  static Result<GroupId> parse(std::string_view hex);
  static GroupId random(std::mt19937_64& rng);

  std::string hex() const;
  const std::array<std::uint8_t, 16>& bytes() const noexcept { return bytes_; }

  friend auto operator<=>(const GroupId&, const GroupId&) = default;
  friend bool operator==(const GroupId&, const GroupId&) = default;
  friend std::ostream& operator<<(std::ostream& os, const GroupId& g) { return os << g.hex(); }

 private:
  std::array<std::uint8_t, 16> bytes_{};
};

/// Per-group join order. Assigned 0,1,2,... by the registry and never reused.
struct JoinSeq {
  std::uint64_t value = 0;
  friend auto operator<=>(const JoinSeq&, const JoinSeq&) = default;
};

/// Leadership generation. Starts at 0 for the founding leader and moves by
/// exactly one on each grant, transfer or failover claim.
struct ControlEpoch {
  std::uint64_t value = 0;
  ControlEpoch next() const noexcept { return ControlEpoch{value + 1}; }
  friend auto operator<=>(const ControlEpoch&, const ControlEpoch&) = default;
  friend std::ostream& operator<<(std::ostream& os, ControlEpoch e) { return os << e.value; }
};

/// (epoch, seq) stamp on playback events; ordered lexicographically.
struct Version {
  ControlEpoch epoch;
  std::uint64_t seq = 0;
  friend auto operator<=>(const Version&, const Version&) = default;
  friend std::ostream& operator<<(std::ostream& os, const Version& v) {
    return os << '(' << v.epoch.value << ',' << v.seq << ')';
  }
};

/// "host:port" with a non-empty host and a port in 1..65535.
bool is_valid_endpoint(std::string_view endpoint);

}  // namespace climanic

template <>
struct std::hash<climanic::ParticipantId> {
  std::size_t operator()(const climanic::ParticipantId& p) const noexcept {
    return std::hash<std::string>{}(p.str());
  }
};

template <>
struct std::hash<climanic::GroupId> {
  std::size_t operator()(const climanic::GroupId& g) const noexcept {
    std::size_t h = 0;
    for (auto b : g.bytes()) h = h * 131 + b;
    return h;
  }
};
