#pragma once

// User commands in the one shape shared by scenario scripts, headless peer
// scripts and the UI gateway's POST /command.

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "climanic/peer/engine.hpp"

namespace climanic {

struct UserCommand {
  std::string op;
  /// Numeric target for seek (ms) and slide (index).
  std::uint64_t target = 0;
  /// Participant target for grant, deny, transfer.
  std::string target_peer;
  std::string text;
  /// set_active's argument.
  bool active = false;
};

bool is_command_op(const std::string& op);
bool needs_peer_target(const std::string& op);

/// Reads {op, target?, text?, active?}. InvalidArgument on a bad shape or
/// unknown op.
Result<UserCommand> parse_command(const nlohmann::json& j);

/// One timed command from a script. `peer` may be "@leader": whoever leads
/// at that moment. Scenario scripts also allow op "crash".
struct ScriptStep {
  Millis at_ms = 0;
  std::string peer;
  std::string op;
  std::uint64_t target = 0;
  std::string target_peer;
  std::string text;
  /// Groups the requests of one arbitration race in a scenario.
  std::string race;
  bool flag = false;
};

/// Reads {at, peer, op, target?, text?, race?, active?} without judging the
/// op. InvalidArgument on a bad shape.
Result<ScriptStep> parse_script_step(const nlohmann::json& j);

/// Applies one command. On success returns fields worth recording (the
/// resolved slide for next/prev, the request id for request).
Result<nlohmann::json> run_command(PeerEngine& e, const UserCommand& c, Millis now);

}  // namespace climanic
