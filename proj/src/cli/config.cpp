#include "climanic/cli/config.hpp"

#include <cstdlib>
#include <fstream>

namespace climanic::cli {

using nlohmann::json;

std::optional<std::string> process_env(const std::string& name) {
  const char* v = std::getenv(name.c_str());
  if (v == nullptr || *v == '\0') return std::nullopt;
  return std::string(v);
}

Result<json> load_config_section(const std::string& path, const std::string& command) {
  std::ifstream in(path);
  if (!in) return make_error(Errc::invalid_argument, "cannot read config file " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    return make_error(Errc::invalid_argument, path + ": " + e.what());
  }
  if (!j.is_object()) return make_error(Errc::invalid_argument, path + ": expected a JSON object");
  if (!j.contains(command)) return json::object();
  if (!j.at(command).is_object()) return make_error(Errc::invalid_argument, path + ": '" + command + "' must be an object");
  return j.at(command);
}

const Resolved& Config::resolve(const Setting& s, const std::optional<std::string>& flag) {
  Resolved r;
  if (flag) {
    r = {flag, "flag"};
  } else if (auto e = s.env.empty() ? std::nullopt : env_(s.env)) {
    r = {e, "env"};
  } else if (file_.contains(s.key) && !file_.at(s.key).is_null()) {
    const auto& v = file_.at(s.key);
    r = {v.is_string() ? v.get<std::string>() : v.dump(), "config"};
  } else if (s.fallback) {
    r = {s.fallback, "default"};
  } else {
    r = {std::nullopt, "unset"};
  }
  return values_[s.key] = std::move(r);
}

std::string Config::print() const {
  json out = json::object();
  for (const auto& [k, r] : values_) {
    out[k] = json{{"source", r.source}, {"value", r.value ? json(*r.value) : json(nullptr)}};
  }
  return out.dump();
}

}  // namespace climanic::cli
