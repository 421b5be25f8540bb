#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "climanic/result.hpp"
#include "climanic/types.hpp"

namespace climanic {

/// Describes one lecture of the courseware every participant holds locally.
/// Peers exchange only its content hash; a mismatch refuses the join.
struct CoursewareManifest {
  std::string course_id;
  std::string lecture_id;
  std::uint64_t slide_count = 1;
  Millis duration_ms = 0;
  std::vector<Millis> slide_start_ms{0};
  std::vector<std::string> slide_titles;  // optional, for display only

  /// slide_count >= 1, slide_start_ms has slide_count sorted entries starting
  /// at 0 and ending at or before duration_ms, titles empty or one per slide.
  Result<void> validate() const;

  /// Greatest i with slide_start_ms[i] <= offset.
  std::uint64_t slide_at(Millis offset) const;

  /// Lowercase hex SHA-256 over the canonical serialization of every field.
  std::string content_hash() const;

  friend bool operator==(const CoursewareManifest&, const CoursewareManifest&) = default;
};

void to_json(nlohmann::json& j, const CoursewareManifest& m);

/// Parses and validates. A `content_hash` field, when present, must match.
Result<CoursewareManifest> parse_manifest(const nlohmann::json& j);
Result<CoursewareManifest> load_manifest(const std::filesystem::path& path);

/// Evenly spaced slides over `duration_ms`; handy for tests and samples.
CoursewareManifest uniform_manifest(std::string course_id, std::string lecture_id,
                                    std::uint64_t slide_count, Millis duration_ms);

}  // namespace climanic
