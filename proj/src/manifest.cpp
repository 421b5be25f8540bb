#include "climanic/manifest.hpp"

#include <algorithm>
#include <fstream>

#include <openssl/sha.h>

namespace climanic {

Result<void> CoursewareManifest::validate() const {
  if (slide_count < 1) return make_error(Errc::invalid_argument, "slide_count must be >= 1");
  if (slide_start_ms.size() != slide_count) {
    return make_error(Errc::invalid_argument, "slide_start_ms must have slide_count entries");
  }
  if (slide_start_ms.front() != 0) return make_error(Errc::invalid_argument, "slide_start_ms[0] must be 0");
  if (!std::is_sorted(slide_start_ms.begin(), slide_start_ms.end())) {
    return make_error(Errc::invalid_argument, "slide_start_ms must be non-decreasing");
  }
  if (slide_start_ms.back() > duration_ms) {
    return make_error(Errc::invalid_argument, "last slide starts after the lecture ends");
  }
  if (!slide_titles.empty() && slide_titles.size() != slide_count) {
    return make_error(Errc::invalid_argument, "slide_titles must be empty or one per slide");
  }
  return {};
}

std::uint64_t CoursewareManifest::slide_at(Millis offset) const {
  auto it = std::upper_bound(slide_start_ms.begin(), slide_start_ms.end(), offset);
  return static_cast<std::uint64_t>(std::distance(slide_start_ms.begin(), it)) - 1;
}

void to_json(nlohmann::json& j, const CoursewareManifest& m) {
  j = nlohmann::json{{"course_id", m.course_id},
                     {"lecture_id", m.lecture_id},
                     {"slide_count", m.slide_count},
                     {"duration_ms", m.duration_ms},
                     {"slide_start_ms", m.slide_start_ms}};
  if (!m.slide_titles.empty()) j["slide_titles"] = m.slide_titles;
}

std::string CoursewareManifest::content_hash() const {
  const std::string canonical = nlohmann::json(*this).dump();
  unsigned char digest[SHA256_DIGEST_LENGTH];
  SHA256(reinterpret_cast<const unsigned char*>(canonical.data()), canonical.size(), digest);
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * SHA256_DIGEST_LENGTH);
  for (unsigned char b : digest) {
    out.push_back(kDigits[b >> 4]);
    out.push_back(kDigits[b & 0x0f]);
  }
  return out;
}

Result<CoursewareManifest> parse_manifest(const nlohmann::json& j) {
  CoursewareManifest m;
  try {
    m.course_id = j.at("course_id").get<std::string>();
    m.lecture_id = j.at("lecture_id").get<std::string>();
    m.slide_count = j.at("slide_count").get<std::uint64_t>();
    m.duration_ms = j.at("duration_ms").get<Millis>();
    m.slide_start_ms = j.at("slide_start_ms").get<std::vector<Millis>>();
    if (j.contains("slide_titles")) m.slide_titles = j.at("slide_titles").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    return make_error(Errc::invalid_argument, std::string("manifest: ") + e.what());
  }
  if (auto v = m.validate(); !v) return v.error();
  if (j.contains("content_hash") && j.at("content_hash") != m.content_hash()) {
    return make_error(Errc::invalid_argument, "manifest content_hash does not match its fields");
  }
  return m;
}

Result<CoursewareManifest> load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::io_error, "cannot open manifest " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) return make_error(Errc::invalid_argument, "manifest is not valid JSON: " + path.string());
  return parse_manifest(j);
}

CoursewareManifest uniform_manifest(std::string course_id, std::string lecture_id,
                                    std::uint64_t slide_count, Millis duration_ms) {
  CoursewareManifest m;
  m.course_id = std::move(course_id);
  m.lecture_id = std::move(lecture_id);
  m.slide_count = slide_count;
  m.duration_ms = duration_ms;
  m.slide_start_ms.resize(slide_count);
  for (std::uint64_t i = 0; i < slide_count; ++i) m.slide_start_ms[i] = duration_ms / slide_count * i;
  return m;
}

}  // namespace climanic
