#pragma once

// Scenario files: who joins when, what they do, and how the network behaves.
// docs/scenarios.md describes the format field by field.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/manifest.hpp"
#include "climanic/peer/command.hpp"
#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic::sim {

/// Name the registry node goes by in partitions and link overrides.
inline constexpr const char* kRegistryNode = "registry";

struct Partition {
  Millis start_ms = 0;
  Millis end_ms = 0;
  /// Cut off from every node outside the set while active.
  std::set<std::string> nodes;
};

/// Loss between two nodes, replacing the global rate while in force.
struct LinkOverride {
  std::string a, b;
  double loss = 0.0;
  Millis start_ms = 0;
  std::optional<Millis> end_ms;
};

struct NetModel {
  Millis latency_min_ms = 50;
  Millis latency_max_ms = 150;
  double loss = 0.0;
  double reorder = 0.0;
  /// A reordered frame is held back by up to this much on top of its latency.
  Millis reorder_extra_ms = 150;
  std::vector<Partition> partitions;
  std::vector<LinkOverride> links;
};

struct Timing {
  Millis heartbeat_ms = 500;
  Millis dead_after_ms = 1500;
  Millis backoff_ms = 750;
  Millis handoff_timeout_ms = 2000;
  Millis join_timeout_ms = 2000;
  Millis retransmit_ms = 400;
};

struct PeerSpec {
  std::string name;
  Millis join_at_ms = 0;
  /// The first peer creates the group unless another is marked.
  bool creates = false;
  /// Joins with a different manifest (for refusal tests).
  bool foreign_manifest = false;
};

/// Generated lecture traffic, drawn from the run's seed.
struct Traffic {
  Millis from_ms = 0;
  Millis to_ms = 0;
  int events = 0;
  int chats = 0;
  double jump_prob = 0.15;
};

struct LeaderPolicy {
  enum class Mode { manual, grant_first, deny };
  Mode mode = Mode::manual;
  Millis decide_after_ms = 300;
};

struct Expectations {
  std::optional<std::size_t> min_connected;
  std::optional<std::uint64_t> max_control_bytes;
};

struct Scenario {
  std::string name;
  std::string description;
  Millis duration_ms = 0;
  std::string course_id = "course";
  CoursewareManifest manifest;
  NetModel net;
  Timing timing;
  std::vector<PeerSpec> peers;
  std::vector<ScriptStep> script;
  std::optional<Traffic> traffic;
  LeaderPolicy policy;
  std::vector<std::string> checks;
  Expectations expect;

  /// Max one-way latency including reorder hold-back.
  Millis max_latency() const noexcept;
  /// Time of the last scheduled activity (script step, join, partition end,
  /// traffic window end).
  Millis last_activity() const noexcept;
  /// Quiet period after the last activity before convergence is judged.
  Millis quiescence() const noexcept { return 2 * max_latency() + timing.dead_after_ms; }
};

/// Every check the harness knows, in report order.
const std::vector<std::string>& all_check_names();

/// ScenarioInvalid on any schema or consistency problem. Relative manifest
/// paths resolve against `base_dir`.
Result<Scenario> parse_scenario(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
/// A path without an extension also tries "<path>.json".
Result<Scenario> load_scenario(const std::filesystem::path& path);

}  // namespace climanic::sim
