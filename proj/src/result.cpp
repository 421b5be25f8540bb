#include "climanic/result.hpp"

#include <array>

namespace climanic {

namespace {

struct Name {
  Errc code;
  std::string_view name;
};

constexpr std::array kNames = {
    Name{Errc::stale_event, "stale_event"},
    Name{Errc::out_of_bounds, "out_of_bounds"},
    Name{Errc::empty_group, "empty_group"},
    Name{Errc::unknown_requester, "unknown_requester"},
    Name{Errc::unknown_course, "unknown_course"},
    Name{Errc::duplicate_address, "duplicate_address"},
    Name{Errc::group_inactive, "group_inactive"},
    Name{Errc::duplicate_participant, "duplicate_participant"},
    Name{Errc::unknown_group, "unknown_group"},
    Name{Errc::not_a_member, "not_a_member"},
    Name{Errc::not_controller, "not_controller"},
    Name{Errc::epoch_conflict, "epoch_conflict"},
    Name{Errc::manifest_mismatch, "manifest_mismatch"},
    Name{Errc::leader_unreachable, "leader_unreachable"},
    Name{Errc::not_leader, "not_leader"},
    Name{Errc::unknown_target, "unknown_target"},
    Name{Errc::target_unreachable, "target_unreachable"},
    Name{Errc::message_too_large, "message_too_large"},
    Name{Errc::leader_must_transfer, "leader_must_transfer"},
    Name{Errc::storage_full, "storage_full"},
    Name{Errc::corrupt_log, "corrupt_log"},
    Name{Errc::gap_detected, "gap_detected"},
    Name{Errc::scenario_invalid, "scenario_invalid"},
    Name{Errc::invalid_argument, "invalid_argument"},
    Name{Errc::protocol_error, "protocol_error"},
    Name{Errc::io_error, "io_error"},
    Name{Errc::corrupt_state, "corrupt_state"},
    Name{Errc::bind_failure, "bind_failure"},
};

}  // namespace

std::string_view to_string(Errc code) noexcept {
  for (const auto& n : kNames) {
    if (n.code == code) return n.name;
  }
  return "unknown_error";
}

std::optional<Errc> errc_from_string(std::string_view name) noexcept {
  for (const auto& n : kNames) {
    if (n.name == name) return n.code;
  }
  return std::nullopt;
}

}  // namespace climanic
