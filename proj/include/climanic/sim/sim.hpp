#pragma once

// Deterministic discrete-event runs of a scenario: N peer engines and one
// registry on a virtual network. run() is a pure function of (scenario,
// seed); every verdict is computed from the returned trace alone.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/result.hpp"
#include "climanic/sim/scenario.hpp"

namespace climanic::sim {

/// One line of a trace. `kind` is one of: send, retransmit, drop, registry,
/// log, note, script, crash, final, registry_final.
struct TraceRecord {
  Millis at = 0;
  std::string node;
  std::string kind;
  nlohmann::json data;
};

struct Trace {
  std::string scenario;
  std::uint64_t seed = 0;
  Millis end_ms = 0;
  std::vector<TraceRecord> records;
};

nlohmann::json to_json(const TraceRecord& r);

struct CheckVerdict {
  std::string name;
  bool applicable = true;
  bool pass = true;
  std::string detail;
};

struct RunResult {
  Trace trace;
  std::vector<CheckVerdict> verdicts;
  bool passed() const;
};

RunResult run(const Scenario& scenario, std::uint64_t seed);

/// Recomputes every check the scenario asks for from the trace.
std::vector<CheckVerdict> evaluate(const Scenario& scenario, const Trace& trace);

/// Writes trace.jsonl plus one event-log file per peer into `dir`, and
/// manifest.json when given, so the logs can be replayed with the CLI.
Result<void> write_trace(const Trace& trace, const std::filesystem::path& dir,
                         const CoursewareManifest* manifest = nullptr);

struct CheckTally {
  std::uint64_t pass = 0;
  std::uint64_t fail = 0;
  std::uint64_t not_applicable = 0;
  std::optional<std::uint64_t> first_failing_seed;
  std::string first_failure;
};

struct SweepResult {
  std::string scenario;
  std::uint64_t runs = 0;
  std::uint64_t failed_runs = 0;
  std::vector<std::pair<std::string, CheckTally>> checks;
  std::optional<std::uint64_t> first_failing_seed;
  std::optional<std::filesystem::path> first_failure_trace;
  /// Largest serialized message seen in any run.
  std::uint64_t max_message_bytes = 0;
  double elapsed_s = 0.0;
  bool passed() const { return failed_runs == 0; }
};

/// Runs seeds [first, last]. When `trace_out` is set the first failing
/// seed's trace goes to trace_out/<scenario>-seed<N>/.
SweepResult sweep(const Scenario& scenario, std::uint64_t first, std::uint64_t last,
                  const std::optional<std::filesystem::path>& trace_out = std::nullopt);

/// Plain-text table of a sweep's per-check counts.
std::string format_sweep(const SweepResult& r);

}  // namespace climanic::sim
